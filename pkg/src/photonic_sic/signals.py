"""Digital-domain waveforms: QPSK symbol streams, pulse shaping, up/downconversion.

Conventions
-----------
* Gray map: bit pair ``(b0, b1)`` -> ``((1 - 2*b0) + 1j*(1 - 2*b1)) / sqrt(2)``,
  so ``00 -> (1+j)/sqrt(2)`` and ``11 -> (-1-j)/sqrt(2)``.
* Passband: ``s(n) = Re{ b(n) * exp(j*(2*pi*f*n/fs + phase)) }``.
* Rectangular (NRZ) symbol ``k`` occupies samples ``[k*sps, (k+1)*sps)``.
  Root-raised-cosine symbol ``k`` peaks at sample ``k*sps + sps//2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps_signal

QPSK_POINTS = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j]) / np.sqrt(2)


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Real-valued waveform with its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        x = np.array(self.samples, dtype=float, copy=True)
        if x.ndim != 1 or x.size < 1:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    def power(self) -> float:
        return float(np.mean(self.samples**2))

    def with_samples(self, samples: np.ndarray) -> "SampledSignal":
        return SampledSignal(samples, self.sample_rate)

    def __eq__(self, other):
        if not isinstance(other, SampledSignal):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)


@dataclass(frozen=True, eq=False)
class SymbolStream:
    """Complex symbols at ``baud_rate``.

    ``constellation="qpsk"`` enforces that every symbol is a QPSK point.
    ``constellation=None`` is used for received (soft) symbols and arbitrary
    test symbols; only the unit-energy invariant is checked then.
    """

    symbols: np.ndarray
    baud_rate: float
    constellation: str | None = "qpsk"

    def __post_init__(self):
        s = np.array(self.symbols, dtype=complex, copy=True).reshape(-1)
        if not self.baud_rate > 0:
            raise ValueError(f"baud_rate must be positive, got {self.baud_rate}")
        if self.constellation not in ("qpsk", None):
            raise ValueError(f"unsupported constellation {self.constellation!r}")
        if s.size:
            if self.constellation == "qpsk":
                d = np.min(np.abs(s[:, None] - QPSK_POINTS[None, :]), axis=1)
                if np.any(d > 1e-12):
                    raise ValueError("symbol outside the QPSK constellation")
            energy = np.mean(np.abs(s) ** 2)
            if abs(energy - 1.0) > 1e-12:
                raise ValueError(f"mean symbol energy must be 1, got {energy!r}")
        s.flags.writeable = False
        object.__setattr__(self, "symbols", s)
        object.__setattr__(self, "baud_rate", float(self.baud_rate))

    def __len__(self) -> int:
        return self.symbols.size


@dataclass(frozen=True)
class CarrierPlan:
    rf_carrier: float
    lo_freq: float

    @property
    def if_freq(self) -> float:
        return abs(self.rf_carrier - self.lo_freq)

    @property
    def inverted(self) -> bool:
        """True for low-side RF (spectrum flips at IF)."""
        return self.rf_carrier < self.lo_freq

    def validate(self, sample_rate: float, baud_rate: float) -> None:
        """Check that the IF signal fits in the first Nyquist zone at ``sample_rate``."""
        if not 0 < self.if_freq < sample_rate / 2 - baud_rate:
            raise ValueError(
                f"IF {self.if_freq:.4g} Hz does not fit below fs/2 - baud "
                f"({sample_rate / 2 - baud_rate:.4g} Hz)"
            )


@dataclass(frozen=True)
class PulseShape:
    """``kind`` is ``"rect"`` (NRZ) or ``"rrc"``; ``span`` is in symbols (rrc only)."""

    kind: str = "rect"
    rolloff: float = 0.35
    span: int = 32

    def __post_init__(self):
        if self.kind not in ("rect", "rrc"):
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if self.kind == "rrc" and not 0 < self.rolloff <= 1:
            raise ValueError("rrc rolloff must be in (0, 1]")


RECT = PulseShape("rect")


def rrc_taps(sps: int, rolloff: float, span: int) -> np.ndarray:
    """Root-raised-cosine impulse response normalised so ``sum(h**2) == sps``."""
    n = np.arange(-span * sps // 2, span * sps // 2 + 1)
    t = n / sps
    b = rolloff
    h = np.empty(t.size)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1.0 + b * (4 / np.pi - 1)
        elif abs(abs(ti) - 1 / (4 * b)) < 1e-12:
            h[i] = (b / np.sqrt(2)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
            )
        else:
            num = np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))
            h[i] = num / (np.pi * ti * (1 - (4 * b * ti) ** 2))
    return h * np.sqrt(sps / np.sum(h**2))


def _samples_per_symbol(fs: float, baud: float) -> int:
    ratio = fs / baud
    sps = int(round(ratio))
    if sps < 1 or abs(ratio - sps) > 1e-9 * ratio:
        raise ValueError(f"sample rate {fs:.6g} is not an integer multiple of baud {baud:.6g}")
    return sps


def qpsk_modulate(bits, baud_rate: float = 1e9) -> SymbolStream:
    """Gray-map an even-length bit sequence onto QPSK."""
    b = np.asarray(bits, dtype=np.int64).reshape(-1)
    if b.size % 2:
        raise ValueError(f"QPSK needs an even number of bits, got {b.size}")
    if np.any((b != 0) & (b != 1)):
        raise ValueError("bits must be 0 or 1")
    pairs = b.reshape(-1, 2)
    sym = ((1 - 2 * pairs[:, 0]) + 1j * (1 - 2 * pairs[:, 1])) / np.sqrt(2)
    return SymbolStream(sym, baud_rate)


def random_qpsk(num_symbols: int, baud_rate: float, rng: np.random.Generator) -> SymbolStream:
    return qpsk_modulate(rng.integers(0, 2, 2 * num_symbols), baud_rate)


def qpsk_decide(symbols: np.ndarray) -> np.ndarray:
    """Nearest QPSK point for each symbol."""
    s = np.asarray(symbols, dtype=complex)
    return (np.where(s.real >= 0, 1.0, -1.0) + 1j * np.where(s.imag >= 0, 1.0, -1.0)) / np.sqrt(2)


def complex_baseband(stream: SymbolStream, fs: float, pulse: PulseShape = RECT,
                     num_samples: int | None = None) -> np.ndarray:
    sps = _samples_per_symbol(fs, stream.baud_rate)
    n_out = len(stream) * sps if num_samples is None else int(num_samples)
    out = np.zeros(n_out, dtype=complex)
    if len(stream) == 0 or n_out == 0:
        return out
    if pulse.kind == "rect":
        bb = np.repeat(stream.symbols, sps)
        k = min(n_out, bb.size)
        out[:k] = bb[:k]
        return out
    h = rrc_taps(sps, pulse.rolloff, pulse.span)
    up = np.zeros(len(stream) * sps, dtype=complex)
    up[sps // 2 :: sps] = stream.symbols
    full = np.convolve(up, h)
    half = h.size // 2
    body = full[half : half + up.size]
    k = min(n_out, body.size)
    out[:k] = body[:k]
    return out


def shape_and_upconvert(stream: SymbolStream, carrier: float, fs: float,
                        pulse: PulseShape = RECT, num_samples: int | None = None,
                        phase: float = 0.0) -> SampledSignal:
    """Pulse-shape ``stream`` and place it on a real carrier at ``carrier`` Hz.

    The output has ``len(stream) * fs / baud`` samples unless ``num_samples``
    is given, in which case it is zero-padded or truncated.
    """
    baud = stream.baud_rate
    if fs < 2 * (carrier + baud):
        raise ValueError(
            f"fs={fs:.4g} too low for carrier {carrier:.4g} + baud {baud:.4g} (needs >= 2*(fc+baud))"
        )
    bb = complex_baseband(stream, fs, pulse, num_samples)
    if bb.size == 0:
        raise ValueError("empty waveform: give num_samples for an empty stream")
    n = np.arange(bb.size)
    s = np.real(bb * np.exp(1j * (2 * np.pi * carrier / fs * n + phase)))
    return SampledSignal(s, fs)


def demodulate_qpsk(sig: SampledSignal, carrier: float, baud: float, genie_phase: float = 0.0,
                    genie_delay: float = 0.0, pulse: PulseShape = RECT,
                    num_symbols: int | None = None) -> SymbolStream:
    """Coherent demodulation with genie carrier phase and timing.

    The received signal is modelled as the transmitted passband waveform delayed
    by ``genie_delay`` samples (envelope and carrier together) with an extra
    carrier phase ``genie_phase``; both come from the simulator's ground truth.

    For NRZ pulses the matched filter is evaluated per symbol against the
    in-phase and quadrature passband basis functions, and the 2x2 cross term
    between them is removed. This makes the estimate exact for any carrier,
    including ones that do not complete whole cycles per symbol. For RRC pulses
    the signal is mixed to complex baseband and filtered with the matched RRC.
    Output is RMS-normalised to unit energy.
    """
    fs = sig.sample_rate
    sps = _samples_per_symbol(fs, baud)
    x = sig.samples
    d = int(round(genie_delay))
    if pulse.kind == "rect":
        avail = (x.size - max(d, 0)) // sps
        ns = avail if num_symbols is None else min(num_symbols, avail)
        if ns <= 0:
            raise ValueError("signal too short for a single symbol")
        idx = d + np.arange(ns * sps)
        valid = (idx >= 0) & (idx < x.size)
        seg = np.where(valid, x[np.clip(idx, 0, x.size - 1)], 0.0).reshape(ns, sps)
        th = (2 * np.pi * carrier / fs * (idx - d) + genie_phase).reshape(ns, sps)
        # basis so that symbol c contributes c.real*ci + c.imag*cq
        ci, cq = np.cos(th), -np.sin(th)
        a, b, c = (ci * ci).sum(1), (ci * cq).sum(1), (cq * cq).sum(1)
        p, q = (ci * seg).sum(1), (cq * seg).sum(1)
        det = a * c - b * b
        z = ((c * p - b * q) + 1j * (a * q - b * p)) / det
    else:
        h = rrc_taps(sps, pulse.rolloff, pulse.span)
        n = np.arange(x.size)
        mixed = 2 * x * np.exp(-1j * (2 * np.pi * carrier / fs * (n - genie_delay) + genie_phase))
        mf = np.convolve(mixed, h[::-1])[h.size // 2 : h.size // 2 + x.size] / np.sum(h**2)
        first = sps // 2 + d
        avail = 0 if first >= x.size else (x.size - 1 - first) // sps + 1
        ns = avail if num_symbols is None else min(num_symbols, avail)
        if ns <= 0:
            raise ValueError("signal too short for a single symbol")
        z = mf[first + sps * np.arange(ns)]
    rms = np.sqrt(np.mean(np.abs(z) ** 2))
    if rms == 0:
        raise ValueError("demodulated symbols have zero energy")
    return SymbolStream(z / rms, baud, constellation=None)


def resample_to(sig: SampledSignal, fs_out: float) -> SampledSignal:
    """Band-limited integer-ratio resampling (polyphase)."""
    ratio = fs_out / sig.sample_rate
    if ratio >= 1:
        up = int(round(ratio))
        if abs(up - ratio) > 1e-9:
            raise ValueError("resample ratio must be an integer")
        return SampledSignal(sps_signal.resample_poly(sig.samples, up, 1) if up > 1 else sig.samples,
                             fs_out)
    down = int(round(1 / ratio))
    if abs(down - 1 / ratio) > 1e-9:
        raise ValueError("resample ratio must be an integer")
    return SampledSignal(sps_signal.resample_poly(sig.samples, 1, down), fs_out)
