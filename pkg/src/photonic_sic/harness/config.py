"""Experiment configuration: nested frozen dataclasses mirrored by a YAML file.

Key names carry their units (``_ghz``, ``_gbaud``, ``_ns``, ``_db``,
``_rad``). Unknown keys are rejected, and omitted keys take the defaults
below. ``parse_config(serialize_config(cfg)) == cfg`` holds for every valid
config.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..channel import MultipathChannel, Scenario, SignalSpec, SoiSpec, Tap
from ..estimator import LsConfig
from ..frontend import FrontendParams, RefPathParams
from ..signals import CarrierPlan, PulseShape

CANCELLATION_MODES = ("optical", "digital", "genie", "off")
MAIN_LOBE_HALF_WIDTH = 0.6  # measurement band half-width in units of baud


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class AntennaConfig:
    delays_ns: tuple[float, ...]
    gains_db: tuple[float, ...]
    phases_rad: tuple[float, ...] | None = None

    def taps(self) -> tuple[Tap, ...]:
        if len(self.delays_ns) != len(self.gains_db):
            raise ConfigError("delays_ns and gains_db must have equal length")
        phases = self.phases_rad or (0.0,) * len(self.delays_ns)
        if len(phases) != len(self.delays_ns):
            raise ConfigError("phases_rad must match delays_ns in length")
        return tuple(Tap(d * 1e-9, g, p) for d, g, p in zip(self.delays_ns, self.gains_db, phases))


@dataclass(frozen=True)
class SiConfig:
    carrier_ghz: float = 10.0
    baud_gbaud: float = 1.0
    pulse: str = "rect"


@dataclass(frozen=True)
class SoiConfig:
    enabled: bool = False
    baud_gbaud: float = 0.5
    power_db: float | None = None  # dB relative to one direct-path SI signal; required when enabled
    phase_rad: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    antennas: tuple[AntennaConfig, ...] = ()
    noise_snr_db: float | None = None  # AWGN relative to total SI power; null = noiseless
    si: SiConfig = field(default_factory=SiConfig)
    soi: SoiConfig = field(default_factory=SoiConfig)

    def channel(self) -> MultipathChannel | None:
        if not self.antennas:
            return None
        return MultipathChannel(tuple(a.taps() for a in self.antennas), self.noise_snr_db)

    def to_scenario(self) -> Scenario:
        hz = 1e9
        ch = self.channel()
        si = tuple(SignalSpec(self.si.carrier_ghz * hz, self.si.baud_gbaud * hz)
                   for _ in self.antennas)
        soi = None
        if self.soi.enabled:
            if self.soi.power_db is None:
                raise ConfigError("scenario.soi.power_db is required when the SOI is enabled")
            soi = SoiSpec(self.si.carrier_ghz * hz, self.soi.baud_gbaud * hz, self.soi.power_db,
                          self.soi.phase_rad)
        return Scenario(self.name, ch, si, soi)


@dataclass(frozen=True)
class SamplingConfig:
    if_rate_gsps: float = 10.0
    rf_oversample: int = 4
    guard_samples: int = 64


@dataclass(frozen=True)
class FrontendConfig:
    lo_ghz: float = 8.0
    lo_phase_rad: float = 0.0
    conversion_gain: float = 1.0
    if_cutoff_ghz: float | None = None  # null: IF + 0.75 * largest baud
    nonlinearity: str = "linear"
    modulation_index: float | None = None
    drive_full_scale: float | None = None  # null: peak |received| without cancellation
    ref_attenuation_db: float = 0.0
    ref_delay_ns: float = 0.0


@dataclass(frozen=True)
class EstimatorConfig:
    alpha: int = 10
    delta: int = 1
    big_delta: int = 40
    gamma_min: float = 400.0
    gamma_max: float = 15000.0
    max_iterations: int = 2500
    l_init: int = 150
    l_min: int = 50
    l_max: int = 500
    block_size: int = 40000
    patience: int = 20
    normalize: bool = True
    index_reading: str = "fresh"
    fixed_order: int | None = None  # skip the order loop and solve at this order
    live: bool = False  # re-capture a fresh block every iteration

    def to_ls(self, num_antennas: int) -> LsConfig:
        kw = {f.name: getattr(self, f.name) for f in dataclasses.fields(LsConfig)
              if f.name != "num_antennas"}
        return LsConfig(num_antennas=max(num_antennas, 1), **kw)


@dataclass(frozen=True)
class MeasureConfig:
    band: str = "main_lobe"  # or "full" (0 .. fs/2)
    psd_segment: int = 4096
    psd_overlap: float = 0.5
    psd_window: str = "hann"
    evm_edge_symbols: int = 5


@dataclass(frozen=True)
class SweepConfig:
    param: str | None = None
    values: tuple = ()
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    cancellation: str = "optical"
    seed: int = 0
    output_dir: str = "runs"

    # derived quantities in SI units ------------------------------------------------
    @property
    def if_rate(self) -> float:
        return self.sampling.if_rate_gsps * 1e9

    @property
    def rf_rate(self) -> float:
        return self.if_rate * self.sampling.rf_oversample

    @property
    def carrier_plan(self) -> CarrierPlan:
        return CarrierPlan(self.scenario.si.carrier_ghz * 1e9, self.frontend.lo_ghz * 1e9)

    @property
    def max_baud(self) -> float:
        b = [self.scenario.si.baud_gbaud] if self.scenario.antennas else []
        if self.scenario.soi.enabled:
            b.append(self.scenario.soi.baud_gbaud)
        return max(b or [self.scenario.si.baud_gbaud]) * 1e9

    def frontend_params(self, full_scale: float = 1.0) -> FrontendParams:
        f = self.frontend
        cutoff = (f.if_cutoff_ghz * 1e9 if f.if_cutoff_ghz is not None
                  else self.carrier_plan.if_freq + 0.75 * self.max_baud)
        return FrontendParams(
            lo_freq=f.lo_ghz * 1e9, if_lowpass_cutoff=cutoff, lo_phase=f.lo_phase_rad,
            conversion_gain=f.conversion_gain, nonlinearity=f.nonlinearity,
            modulation_index=f.modulation_index,
            full_scale=f.drive_full_scale if f.drive_full_scale is not None else full_scale,
        )

    def ref_path(self) -> RefPathParams:
        return RefPathParams(self.frontend.ref_attenuation_db, self.frontend.ref_delay_ns * 1e-9)

    def ls_config(self) -> LsConfig:
        return self.estimator.to_ls(len(self.scenario.antennas))

    @property
    def pulse(self) -> PulseShape:
        return PulseShape(self.scenario.si.pulse)

    def validate(self) -> "ExperimentConfig":
        """Construct every module-level object so that their invariants run."""
        try:
            if self.cancellation not in CANCELLATION_MODES:
                raise ConfigError(f"cancellation must be one of {CANCELLATION_MODES}")
            if self.measure.band not in ("main_lobe", "full"):
                raise ConfigError("measure.band must be 'main_lobe' or 'full'")
            if self.sampling.rf_oversample < 1 or self.sampling.guard_samples < 0:
                raise ConfigError("rf_oversample must be >= 1 and guard_samples >= 0")
            sc = self.scenario.to_scenario()
            plan = self.carrier_plan
            plan.validate(self.if_rate, self.max_baud)
            if plan.inverted:
                raise ConfigError("RF carrier below the LO is not supported")
            fp = self.frontend_params()
            fp.validate_band(plan.if_freq, 2 * MAIN_LOBE_HALF_WIDTH * self.max_baud)
            if fp.if_lowpass_cutoff + fp.lowpass_transition >= self.rf_rate / 2:
                raise ConfigError("IF lowpass cutoff too close to the RF simulation Nyquist")
            if fp.lo_freq >= self.rf_rate / 2:
                raise ConfigError("LO above the RF simulation Nyquist; raise rf_oversample")
            self.ref_path()
            ls = self.ls_config()
            est = self.estimator
            if est.fixed_order is not None and not 1 <= est.fixed_order <= ls.l_max:
                raise ConfigError("fixed_order must lie in [1, l_max]")
            if sc.channel is not None:
                dur = self.capture_length() / self.if_rate
                if sc.channel.max_delay >= dur:
                    raise ConfigError("channel delay spread exceeds the capture")
            sw = self.sweep
            if sw.param is not None:
                get_param(self, sw.param)
                if not sw.values:
                    raise ConfigError("sweep.values must not be empty")
            if sw.workers < 1:
                raise ConfigError("sweep.workers must be >= 1")
            if self.scenario.si.pulse not in ("rect", "rrc"):
                raise ConfigError("pulse must be 'rect' or 'rrc'")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def block_start(self) -> int:
        return self.estimator.l_max + self.sampling.guard_samples

    def capture_length(self) -> int:
        """IF samples captured: history, the estimation block and a tail guard."""
        return self.block_start() + self.estimator.block_size + self.sampling.guard_samples


# ---------------------------------------------------------------------------------------
# dict / YAML conversion


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    if origin is tuple or tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        item = args[0] if args else typing.Any
        return tuple(_convert(item, v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data, path: str = ""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kw = {k: _convert(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [to_dict(v) for v in obj]
    return obj


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return from_dict(ExperimentConfig, data)


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def load_config(path: str | Path) -> tuple[ExperimentConfig, str]:
    """Read a config file; returns the parsed config and the exact file text."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text), text


# ---------------------------------------------------------------------------------------
# dotted parameter access for sweeps


def get_param(cfg, dotted: str):
    obj = cfg
    for part in dotted.split("."):
        if not dataclasses.is_dataclass(obj) or part not in {f.name for f in dataclasses.fields(obj)}:
            raise ConfigError(f"unknown sweep parameter {dotted!r}")
        obj = getattr(obj, part)
    if dataclasses.is_dataclass(obj):
        raise ConfigError(f"sweep parameter {dotted!r} names a section, not a value")
    return obj


def set_param(cfg, dotted: str, value):
    head, _, rest = dotted.partition(".")
    if not dataclasses.is_dataclass(cfg) or head not in {f.name for f in dataclasses.fields(cfg)}:
        raise ConfigError(f"unknown sweep parameter {dotted!r}")
    if rest:
        return dataclasses.replace(cfg, **{head: set_param(getattr(cfg, head), rest, value)})
    tp = typing.get_type_hints(type(cfg))[head]
    return dataclasses.replace(cfg, **{head: _convert(tp, value, dotted)})
