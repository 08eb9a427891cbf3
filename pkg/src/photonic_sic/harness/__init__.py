"""Config-driven experiment runner, scenario library and command-line interface."""
