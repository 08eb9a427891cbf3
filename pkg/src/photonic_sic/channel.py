"""MIMO multipath self-interference channel, SOI composition and AWGN."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps_signal

from .signals import SampledSignal

FRACTIONAL_DELAY_TAPS = 64
KAISER_BETA = 8.0


@dataclass(frozen=True)
class Tap:
    """One propagation path: delay in seconds, gain in dB, optional carrier phase."""

    delay: float
    gain_db: float
    phase: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.delay) and self.delay >= 0):
            raise ValueError(f"tap delay must be finite and >= 0, got {self.delay}")
        if not math.isfinite(self.gain_db):
            raise ValueError(f"tap gain must be finite, got {self.gain_db}")

    @property
    def amplitude(self) -> float:
        return 10 ** (self.gain_db / 20)


@dataclass(frozen=True)
class MultipathChannel:
    """Tap lists for ``m`` transmit antennas into one receive antenna.

    ``noise_snr_db`` is the AWGN level relative to the total SI power at the
    receive antenna; ``None`` means noiseless.
    """

    per_antenna_taps: tuple
    noise_snr_db: float | None = None

    def __post_init__(self):
        taps = tuple(tuple(t) for t in self.per_antenna_taps)
        if not taps:
            raise ValueError("channel needs at least one transmit antenna")
        for j, lst in enumerate(taps):
            if not lst:
                raise ValueError(f"antenna {j} has no taps")
            d = [t.delay for t in lst]
            if d != sorted(d):
                raise ValueError(f"antenna {j} taps are not sorted by delay")
        object.__setattr__(self, "per_antenna_taps", taps)

    @property
    def num_antennas(self) -> int:
        return len(self.per_antenna_taps)

    @property
    def max_delay(self) -> float:
        return max(t.delay for lst in self.per_antenna_taps for t in lst)

    @classmethod
    def from_ns_db(cls, delays_ns, gains_db, noise_snr_db=None) -> "MultipathChannel":
        """Build from per-antenna lists of delays (ns) and gains (dB)."""
        taps = tuple(
            tuple(Tap(d * 1e-9, g) for d, g in zip(ds, gs, strict=True))
            for ds, gs in zip(delays_ns, gains_db, strict=True)
        )
        return cls(taps, noise_snr_db)


@dataclass(frozen=True)
class SignalSpec:
    """Transmit waveform parameters: carrier (Hz) and baud rate (symbols/s)."""

    carrier: float
    baud: float


@dataclass(frozen=True)
class SoiSpec:
    carrier: float
    baud: float
    power_db: float  # relative to one direct-path SI signal; -inf disables the SOI
    phase: float = 0.0

    @property
    def enabled(self) -> bool:
        return self.power_db != -math.inf


@dataclass(frozen=True)
class Scenario:
    """A named SI channel plus the SI and SOI transmit settings.

    ``channel=None`` is the null channel (no SI at all).
    """

    name: str
    channel: MultipathChannel | None
    si_signals: tuple = field(default_factory=tuple)
    soi: SoiSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "si_signals", tuple(self.si_signals))
        if self.channel is not None and len(self.si_signals) != self.channel.num_antennas:
            raise ValueError("one SI transmit spec is needed per antenna")
        carriers = {s.carrier for s in self.si_signals}
        if self.soi is not None:
            carriers.add(self.soi.carrier)
        if len(carriers) > 1:
            raise ValueError("SOI and SI must share one carrier frequency (in-band)")


def fractional_delay(x: np.ndarray, delay: float, num_taps: int = FRACTIONAL_DELAY_TAPS,
                     beta: float = KAISER_BETA) -> np.ndarray:
    """Delay ``x`` by ``delay`` samples, keeping its length.

    Integer delays are exact shifts. The fractional part uses a
    Kaiser-windowed sinc. Samples that would need history before ``x[0]``
    see zeros.
    """
    x = np.asarray(x, dtype=float)
    if delay < 0:
        raise ValueError("delay must be >= 0")
    n = x.size
    whole = int(math.floor(delay))
    mu = delay - whole
    if mu < 1e-12:
        out = np.zeros(n)
        if whole < n:
            out[whole:] = x[: n - whole]
        return out
    m = np.arange(-num_taps // 2 + 1, num_taps // 2 + 1)
    t = m - mu
    w = np.i0(beta * np.sqrt(np.clip(1 - (t / (num_taps / 2)) ** 2, 0, None))) / np.i0(beta)
    h = np.sinc(t) * w
    # y[i] = sum_k h[k] x[i - whole - m[k]]
    full = np.convolve(x, h)
    lead = m[0]  # full[j] corresponds to output index j + lead + whole
    out = np.zeros(n)
    src = np.arange(n) - whole - lead
    ok = (src >= 0) & (src < full.size)
    out[ok] = full[src[ok]]
    return out


def _rotate(x: np.ndarray, phase: float) -> np.ndarray:
    if phase == 0:
        return x
    xa = sps_signal.hilbert(x)
    return np.real(xa * np.exp(1j * phase))


def apply_multipath(tx, ch: MultipathChannel) -> SampledSignal:
    """Sum of delayed, scaled copies of each antenna's RF waveform."""
    tx = list(tx)
    if len(tx) != ch.num_antennas:
        raise ValueError(f"expected {ch.num_antennas} transmit waveforms, got {len(tx)}")
    fs = tx[0].sample_rate
    n = len(tx[0])
    for s in tx:
        if s.sample_rate != fs:
            raise ValueError("all transmit waveforms must share one sample rate")
        if len(s) != n:
            raise ValueError("all transmit waveforms must have equal length")
    if ch.max_delay >= n / fs:
        raise ValueError("channel delay spread exceeds the signal duration")
    out = np.zeros(n)
    for s, taps in zip(tx, ch.per_antenna_taps):
        for tap in taps:
            out += tap.amplitude * fractional_delay(_rotate(s.samples, tap.phase), tap.delay * fs)
    return SampledSignal(out, fs)


def add_awgn(sig: SampledSignal, snr_db: float, seed: int,
             reference_power: float | None = None) -> SampledSignal:
    """Add white Gaussian noise at ``snr_db`` below ``reference_power``.

    ``reference_power`` defaults to the power of ``sig``; ``snr_db = inf``
    returns ``sig`` unchanged.
    """
    if snr_db == math.inf:
        return sig
    p = sig.power() if reference_power is None else reference_power
    sigma = math.sqrt(p / 10 ** (snr_db / 10))
    rng = np.random.default_rng(seed)
    return sig.with_samples(sig.samples + sigma * rng.standard_normal(len(sig)))


def compose_received(si: SampledSignal, soi: SampledSignal, soi_power_db: float,
                     reference_power: float | None = None) -> SampledSignal:
    """``si`` plus ``soi`` rescaled to ``soi_power_db`` relative to ``reference_power``.

    ``reference_power`` should be the direct-path SI power; it defaults to the
    power of ``si``. ``soi_power_db = -inf`` disables the SOI.
    """
    if len(si) != len(soi) or si.sample_rate != soi.sample_rate:
        raise ValueError("SI and SOI must have equal lengths and sample rates")
    if soi_power_db == -math.inf:
        return si
    p_ref = si.power() if reference_power is None else reference_power
    p_soi = soi.power()
    if p_soi == 0:
        raise ValueError("SOI waveform has zero power")
    scale = math.sqrt(p_ref * 10 ** (soi_power_db / 10) / p_soi)
    return si.with_samples(si.samples + scale * soi.samples)


def scale_to_power(sig: SampledSignal, power: float) -> SampledSignal:
    return sig.with_samples(sig.samples * math.sqrt(power / sig.power()))
