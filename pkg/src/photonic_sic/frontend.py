"""Behavioural model of the photonic canceller / downconverter.

The two carrier-suppressed modulators and the photodiode collapse to::

    y_IF = conversion_gain * LPF{ T(received - reference) * cos(2*pi*f_LO*t - lo_phase) }

where ``T`` is the identity (linear mode) or ``T(d) = A/m * sin(m*d/A)``
(sinusoidal mode, modulation index ``m`` rad at drive amplitude ``A``).
The LO is written with ``-lo_phase`` so that a high-side RF tone comes out at
IF with phase ``+lo_phase``.

The IF lowpass is a linear-phase Kaiser FIR whose passband extends to
``if_lowpass_cutoff``. Its group delay is removed here, so outputs are
time-aligned with the inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal as sps_signal

from .channel import fractional_delay
from .signals import SampledSignal


@dataclass(frozen=True)
class FrontendParams:
    lo_freq: float
    if_lowpass_cutoff: float
    lo_phase: float = 0.0
    conversion_gain: float = 1.0
    nonlinearity: str = "linear"
    modulation_index: float | None = None
    full_scale: float = 1.0
    lowpass_transition: float = 1e9  # Hz, from the passband edge to the stopband edge
    lowpass_atten_db: float = 80.0

    def __post_init__(self):
        if self.nonlinearity not in ("linear", "sinusoidal"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.nonlinearity == "sinusoidal":
            mi = self.modulation_index
            if mi is None or not 0 < mi < math.pi / 2:
                raise ValueError("sinusoidal mode needs modulation_index in (0, pi/2)")
        if not self.full_scale > 0:
            raise ValueError("full_scale must be positive")
        if not self.if_lowpass_cutoff > 0 or not self.lo_freq > 0:
            raise ValueError("LO frequency and lowpass cutoff must be positive")
        if self.conversion_gain == 0:
            raise ValueError("conversion_gain must be non-zero")
        if not self.lowpass_transition > 0:
            raise ValueError("lowpass_transition must be positive")

    def validate_band(self, if_freq: float, bandwidth: float) -> None:
        if not self.if_lowpass_cutoff > if_freq + bandwidth / 2:
            raise ValueError(
                f"IF lowpass cutoff {self.if_lowpass_cutoff:.4g} Hz must exceed "
                f"IF + bandwidth/2 = {if_freq + bandwidth / 2:.4g} Hz"
            )


@dataclass(frozen=True)
class RefPathParams:
    """Tunable attenuator and delay line on the canceller's reference drive."""

    attenuation_db: float = 0.0
    delay: float = 0.0  # seconds

    def __post_init__(self):
        if self.attenuation_db < 0 or self.delay < 0:
            raise ValueError("attenuation and delay must be >= 0")


@lru_cache(maxsize=32)
def if_lowpass_taps(fs: float, passband_edge: float, transition: float,
                    atten_db: float) -> np.ndarray:
    """Odd-length Kaiser lowpass, flat up to ``passband_edge`` and ``atten_db``
    down from ``passband_edge + transition``."""
    numtaps, beta = sps_signal.kaiserord(atten_db, transition / (fs / 2))
    numtaps |= 1
    taps = sps_signal.firwin(numtaps, passband_edge + transition / 2, window=("kaiser", beta), fs=fs)
    taps.flags.writeable = False
    return taps


def lowpass(x: np.ndarray, fs: float, fp: FrontendParams) -> np.ndarray:
    tw = fp.lowpass_transition
    if fp.if_lowpass_cutoff + tw >= fs / 2:
        raise ValueError("IF lowpass does not fit below the Nyquist frequency")
    h = if_lowpass_taps(fs, fp.if_lowpass_cutoff, tw, fp.lowpass_atten_db)
    gd = (h.size - 1) // 2
    return sps_signal.oaconvolve(x, h)[gd : gd + x.size]


def apply_ref_path(ref: SampledSignal, p: RefPathParams) -> SampledSignal:
    d = p.delay * ref.sample_rate
    if p.delay >= ref.duration:
        raise ValueError("reference delay exceeds the signal duration")
    y = fractional_delay(ref.samples, d) * 10 ** (-p.attenuation_db / 20)
    return ref.with_samples(y)


def _drive(d: np.ndarray, fp: FrontendParams) -> np.ndarray:
    if fp.nonlinearity == "linear":
        return d
    a, m = fp.full_scale, fp.modulation_index
    return (a / m) * np.sin(m * d / a)


def dpmzm_downconvert(received: SampledSignal, reference: SampledSignal | None,
                      fp: FrontendParams) -> SampledSignal:
    """Subtract ``reference`` from ``received`` optically and mix to IF.

    ``reference=None`` means the canceller drive is off. The output keeps the
    input sample rate; see :func:`sample_if` for the digitiser.
    """
    fs = received.sample_rate
    if fp.lo_freq >= fs / 2:
        raise ValueError("LO frequency must be below fs/2")
    d = received.samples
    if reference is not None:
        if len(reference) != len(received) or reference.sample_rate != fs:
            raise ValueError("received and reference must have equal lengths and sample rates")
        d = d - reference.samples
    n = np.arange(d.size)
    lo = np.cos(2 * np.pi * fp.lo_freq / fs * n - fp.lo_phase)
    y = fp.conversion_gain * lowpass(_drive(d, fp) * lo, fs, fp)
    return SampledSignal(y, fs)


def sample_if(sig: SampledSignal, sample_rate: float) -> SampledSignal:
    """Digitise an already band-limited IF waveform at an integer sub-rate."""
    ratio = sig.sample_rate / sample_rate
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9 * ratio:
        raise ValueError("capture rate must divide the simulation rate")
    return SampledSignal(sig.samples[::k], sample_rate)


def upconvert_reference(ref_if: SampledSignal, fp: FrontendParams, fs_rf: float,
                        low_side: bool = False) -> SampledSignal:
    """Map a digital IF reference to the RF drive that reproduces it at IF.

    Inverse of the linear front end: the IF waveform is interpolated to
    ``fs_rf``, turned into its analytic signal and shifted by the LO, then
    divided by the conversion gain. ``low_side`` flips the spectrum for an
    RF carrier below the LO.
    """
    up = int(round(fs_rf / ref_if.sample_rate))
    if up < 1 or abs(up * ref_if.sample_rate - fs_rf) > 1e-6 * fs_rf:
        raise ValueError("RF rate must be an integer multiple of the IF rate")
    x = sps_signal.resample_poly(ref_if.samples, up, 1) if up > 1 else ref_if.samples
    a = sps_signal.hilbert(x)
    if low_side:
        a = np.conj(a)
    n = np.arange(x.size)
    rf = 2 * np.real(a * np.exp(1j * (2 * np.pi * fp.lo_freq / fs_rf * n - fp.lo_phase)))
    return SampledSignal(rf / fp.conversion_gain, fs_rf)
