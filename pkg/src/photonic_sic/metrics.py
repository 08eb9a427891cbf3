"""Cancellation depth, Welch PSD and EVM, plus plain-text report writers."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import signal as sps_signal

from .signals import SampledSignal, SymbolStream, qpsk_decide

DEPTH_CAP_DB = 80.0
DEFAULT_SEGMENT = 4096
DEFAULT_OVERLAP = 0.5
DEFAULT_WINDOW = "hann"


@dataclass(frozen=True)
class PsdEstimate:
    """One-sided power spectral density.

    ``density`` is linear (power per Hz) and ``power_db`` is
    ``10*log10(density)``. Summing ``density * resolution_bw`` over all bins
    gives the signal power.
    """

    freqs: np.ndarray
    density: np.ndarray
    resolution_bw: float

    @property
    def power_db(self) -> np.ndarray:
        return 10 * np.log10(np.maximum(self.density, 1e-300))

    def total_power(self) -> float:
        return float(np.sum(self.density) * self.resolution_bw)

    def band_power(self, band: tuple[float, float] | None = None) -> float:
        if band is None:
            return self.total_power()
        lo, hi = band
        if not lo < hi:
            raise ValueError("band must satisfy f_lo < f_hi")
        sel = (self.freqs >= lo) & (self.freqs <= hi)
        return float(np.sum(self.density[sel]) * self.resolution_bw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("freq_hz", "power_db"))
        for f, p in zip(self.freqs, self.power_db):
            w.writerow((repr(float(f)), repr(float(p))))
        return buf.getvalue()


@dataclass(frozen=True)
class SicReport:
    depth_db: float
    band: tuple | None  # None means the full 0..fs/2 band
    power_before_db: float
    power_after_db: float
    capped: bool = False

    def as_dict(self, prefix: str = "sic_") -> dict:
        lo, hi = self.band if self.band is not None else (None, None)
        return {
            f"{prefix}depth_db": self.depth_db,
            f"{prefix}band_lo_hz": lo,
            f"{prefix}band_hi_hz": hi,
            f"{prefix}power_before_db": self.power_before_db,
            f"{prefix}power_after_db": self.power_after_db,
            f"{prefix}capped": self.capped,
        }


def welch_psd(sig: SampledSignal, segment_len: int = DEFAULT_SEGMENT,
              overlap_frac: float = DEFAULT_OVERLAP, window: str = DEFAULT_WINDOW) -> PsdEstimate:
    """Averaged modified periodogram (density scaling, no detrending)."""
    if not 0 < segment_len <= len(sig):
        raise ValueError(f"segment_len must be in [1, {len(sig)}], got {segment_len}")
    if not 0 <= overlap_frac < 1:
        raise ValueError("overlap_frac must be in [0, 1)")
    fs = sig.sample_rate
    f, p = sps_signal.welch(sig.samples, fs=fs, window=window, nperseg=segment_len,
                            noverlap=int(overlap_frac * segment_len), detrend=False,
                            scaling="density", return_onesided=True)
    return PsdEstimate(f, p, fs / segment_len)


def default_band(if_freq: float, baud: float) -> tuple[float, float]:
    """NRZ main lobe around the IF: ``if_freq +/- 0.6 * baud``."""
    return (max(if_freq - 0.6 * baud, 0.0), if_freq + 0.6 * baud)


def sic_depth(y_off: SampledSignal, y_on: SampledSignal, band: tuple[float, float] | None = None,
              segment_len: int = DEFAULT_SEGMENT, overlap_frac: float = DEFAULT_OVERLAP,
              window: str = DEFAULT_WINDOW, cap_db: float = DEPTH_CAP_DB) -> SicReport:
    """In-band power ratio of the IF output without and with cancellation.

    ``band=None`` integrates over the whole 0..fs/2 range. Depths beyond
    ``+/-cap_db`` (including a perfectly cancelled output) are clamped and
    flagged rather than returned as infinities.
    """
    if y_off.sample_rate != y_on.sample_rate:
        raise ValueError("both signals must share one sample rate")
    p_off = welch_psd(y_off, segment_len, overlap_frac, window).band_power(band)
    p_on = welch_psd(y_on, segment_len, overlap_frac, window).band_power(band)
    if p_off == 0 and p_on == 0:
        raise ValueError("no in-band power before or after cancellation")
    before = 10 * math.log10(p_off) if p_off > 0 else -math.inf
    after = 10 * math.log10(p_on) if p_on > 0 else -math.inf
    raw = before - after
    capped = not -cap_db <= raw <= cap_db
    depth = min(max(raw, -cap_db), cap_db)
    if capped:
        if math.isinf(after):
            after = before - depth
        else:
            before = after + depth
    return SicReport(depth, None if band is None else tuple(band), before, after, capped)


def evm(rx: SymbolStream, reference=None) -> float:
    """RMS error vector magnitude in percent.

    Without ``reference`` each symbol is compared with its nearest QPSK point
    (decision-directed). With ``reference`` (a SymbolStream or array of the
    transmitted symbols) the comparison is data-aided. ``rx`` is used as
    given; normalise it to unit RMS beforehand.
    """
    s = np.asarray(rx.symbols if isinstance(rx, SymbolStream) else rx, dtype=complex)
    if s.size == 0:
        raise ValueError("cannot compute EVM of an empty stream")
    if reference is None:
        ideal = qpsk_decide(s)
    else:
        ideal = np.asarray(reference.symbols if isinstance(reference, SymbolStream) else reference,
                           dtype=complex)
        if ideal.shape != s.shape:
            raise ValueError("reference must have as many symbols as rx")
    return 100.0 * math.sqrt(np.mean(np.abs(s - ideal) ** 2) / np.mean(np.abs(ideal) ** 2))


def symbol_errors(rx: SymbolStream, reference) -> int:
    """Number of hard QPSK decisions that differ from the transmitted symbols."""
    s = np.asarray(rx.symbols if isinstance(rx, SymbolStream) else rx, dtype=complex)
    ref = np.asarray(reference.symbols if isinstance(reference, SymbolStream) else reference,
                     dtype=complex)
    if s.shape != ref.shape:
        raise ValueError("reference must have as many symbols as rx")
    return int(np.count_nonzero(~np.isclose(qpsk_decide(s), ref)))


def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v).lower() if isinstance(v, bool) else ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_key_values(items: Mapping) -> str:
    """``key=value`` lines in insertion order; floats use round-trip repr."""
    lines = []
    for k, v in items.items():
        if "=" in k or "\n" in k:
            raise ValueError(f"invalid key {k!r}")
        lines.append(f"{k}={_fmt(v)}")
    return "\n".join(lines) + "\n"


def write_text(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="")


__all__ = [
    "PsdEstimate", "SicReport", "welch_psd", "default_band", "sic_depth", "evm",
    "symbol_errors", "format_key_values", "write_text", "DEPTH_CAP_DB",
]
