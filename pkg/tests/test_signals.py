"""QPSK mapping, waveform synthesis and coherent demodulation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photonic_sic.channel import add_awgn
from photonic_sic.metrics import evm, symbol_errors
from photonic_sic.signals import (
    CarrierPlan,
    PulseShape,
    SampledSignal,
    SymbolStream,
    complex_baseband,
    demodulate_qpsk,
    qpsk_modulate,
    random_qpsk,
    rrc_taps,
    shape_and_upconvert,
)

FS = 10e9
RRC = PulseShape("rrc", rolloff=0.35, span=16)


class TestSampledSignal:
    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValueError):
            SampledSignal([], 1.0)
        with pytest.raises(ValueError):
            SampledSignal([1.0, np.nan], 1.0)
        with pytest.raises(ValueError):
            SampledSignal([1.0], 0.0)

    def test_samples_are_read_only_copies(self):
        src = np.ones(4)
        sig = SampledSignal(src, 2.0)
        src[0] = 5.0
        assert sig.samples[0] == 1.0
        with pytest.raises(ValueError):
            sig.samples[0] = 3.0
        assert sig.duration == 2.0

    def test_equality_compares_content(self):
        assert SampledSignal([1, 2], 1.0) == SampledSignal([1.0, 2.0], 1.0)
        assert SampledSignal([1, 2], 1.0) != SampledSignal([1, 2], 2.0)


class TestQpskModulate:
    def test_gray_map_constants(self):
        s = qpsk_modulate([0, 0, 1, 1, 1, 0, 0, 1]).symbols
        r2 = np.sqrt(2)
        np.testing.assert_allclose(s, [(1 + 1j) / r2, (-1 - 1j) / r2, (-1 + 1j) / r2, (1 - 1j) / r2])

    def test_eight_random_bits_give_four_unit_energy_symbols(self):
        bits = np.random.default_rng(0).integers(0, 2, 8)
        s = qpsk_modulate(bits)
        assert len(s) == 4
        assert abs(np.mean(np.abs(s.symbols) ** 2) - 1) < 1e-12

    def test_odd_bit_count_rejected(self):
        with pytest.raises(ValueError, match="even"):
            qpsk_modulate([0, 1, 1])

    def test_stream_rejects_off_constellation_points(self):
        with pytest.raises(ValueError):
            SymbolStream([1 + 0j], 1e9)


class TestCarrierPlan:
    def test_10ghz_carrier_8ghz_lo_gives_2ghz_if(self):
        plan = CarrierPlan(10e9, 8e9)
        assert plan.if_freq == 2e9
        plan.validate(FS, 1e9)

    def test_if_outside_first_zone_rejected(self):
        with pytest.raises(ValueError):
            CarrierPlan(14.5e9, 10e9).validate(FS, 1e9)


class TestShapeAndUpconvert:
    def test_single_symbol_is_one_cosine_period_block(self):
        stream = SymbolStream([1 + 0j], 1e9, constellation=None)
        sig = shape_and_upconvert(stream, 1e9, 10e9)
        n = np.arange(10)
        np.testing.assert_allclose(sig.samples, np.cos(2 * np.pi * n / 10), atol=1e-12)

    def test_four_microseconds_at_10gsps_is_40000_samples(self):
        stream = random_qpsk(4000, 1e9, np.random.default_rng(1))
        assert len(shape_and_upconvert(stream, 2e9, FS)) == 40_000

    def test_empty_stream_with_length_is_all_zero(self):
        empty = SymbolStream([], 1e9)
        sig = shape_and_upconvert(empty, 2e9, FS, num_samples=100)
        assert not np.any(sig.samples)

    def test_nyquist_violation_rejected(self):
        stream = random_qpsk(10, 1e9, np.random.default_rng(0))
        with pytest.raises(ValueError):
            shape_and_upconvert(stream, 4.5e9, FS)

    def test_baud_must_divide_sample_rate(self):
        stream = random_qpsk(10, 3e9, np.random.default_rng(0))
        with pytest.raises(ValueError, match="integer multiple"):
            shape_and_upconvert(stream, 1e9, FS)

    @pytest.mark.parametrize("pulse", [PulseShape("rect"), RRC])
    def test_passband_power_is_half_baseband_power(self, pulse):
        stream = random_qpsk(400, 1e9, np.random.default_rng(2))
        bb = complex_baseband(stream, FS, pulse)
        pb = shape_and_upconvert(stream, 2e9, FS, pulse)
        assert pb.power() == pytest.approx(np.mean(np.abs(bb) ** 2) / 2, rel=0.01)

    def test_rrc_taps_normalised(self):
        h = rrc_taps(8, 0.35, 16)
        assert np.sum(h**2) == pytest.approx(8)
        np.testing.assert_allclose(h, h[::-1], atol=1e-12)


class TestDemodulate:
    @pytest.mark.parametrize("pulse", [PulseShape("rect"), RRC])
    @pytest.mark.parametrize("baud,carrier", [(1e9, 2e9), (0.5e9, 2e9), (2e9, 1.3e9), (0.25e9, 3e9)])
    def test_loopback_identity(self, pulse, baud, carrier):
        stream = random_qpsk(300, baud, np.random.default_rng(3))
        sig = shape_and_upconvert(stream, carrier, FS, pulse)
        rx = demodulate_qpsk(sig, carrier, baud, pulse=pulse)
        k = slice(20, 280) if pulse.kind == "rrc" else slice(None)
        assert evm(rx.symbols[k], stream.symbols[k]) < 1.0

    def test_loopback_with_genie_phase_and_delay(self):
        stream = random_qpsk(200, 1e9, np.random.default_rng(4))
        sig = shape_and_upconvert(stream, 2e9, FS, phase=0.7)
        delayed = np.concatenate([np.zeros(7), sig.samples])
        rx = demodulate_qpsk(SampledSignal(delayed, FS), 2e9, 1e9, genie_phase=0.7, genie_delay=7)
        assert evm(rx.symbols[:200], stream.symbols) < 1e-6

    def test_scaled_loopback_gives_same_symbols(self):
        stream = random_qpsk(100, 1e9, np.random.default_rng(5))
        sig = shape_and_upconvert(stream, 2e9, FS)
        a = demodulate_qpsk(sig, 2e9, 1e9).symbols
        b = demodulate_qpsk(sig.with_samples(0.5 * sig.samples), 2e9, 1e9).symbols
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_awgn_at_20db_gives_no_symbol_errors(self):
        # Monte-Carlo oracle: QPSK symbol error rate at 20 dB SNR is ~1e-23
        stream = random_qpsk(2000, 1e9, np.random.default_rng(6))
        sig = shape_and_upconvert(stream, 2e9, FS)
        noisy = add_awgn(sig, 20.0, seed=11)
        rx = demodulate_qpsk(noisy, 2e9, 1e9)
        assert symbol_errors(rx, stream) == 0

    def test_output_normalised_to_unit_rms(self):
        stream = random_qpsk(50, 1e9, np.random.default_rng(7))
        sig = shape_and_upconvert(stream, 2e9, FS)
        rx = demodulate_qpsk(add_awgn(sig, 5.0, seed=1), 2e9, 1e9)
        assert np.mean(np.abs(rx.symbols) ** 2) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 60),
       sps=st.sampled_from([4, 5, 8, 10, 20]), fc_frac=st.floats(0.05, 0.3))
def test_loopback_identity_property(seed, n, sps, fc_frac):
    baud = FS / sps
    carrier = fc_frac * FS
    if FS < 2 * (carrier + baud):
        carrier = FS / 2 - baud - 1e6
    stream = random_qpsk(n, baud, np.random.default_rng(seed))
    rx = demodulate_qpsk(shape_and_upconvert(stream, carrier, FS), carrier, baud)
    assert evm(rx.symbols, stream.symbols) < 1.0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_synthesis_is_deterministic_per_seed(seed):
    a = shape_and_upconvert(random_qpsk(64, 1e9, np.random.default_rng(seed)), 2e9, FS)
    b = shape_and_upconvert(random_qpsk(64, 1e9, np.random.default_rng(seed)), 2e9, FS)
    assert a == b
