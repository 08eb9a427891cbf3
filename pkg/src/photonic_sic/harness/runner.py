"""Closed-loop experiment runner.

One run:

1. draw the SI symbol streams (one per antenna) and the SOI stream;
2. synthesise the RF waveforms, apply the multipath channel, add SOI and noise;
3. downconvert with the canceller drive off and digitise ``y_IF``;
4. run the adaptive-order LS loop on the digital IF images ``x_j`` against ``y_IF``;
5. rebuild the reference, map it back to an RF drive and downconvert again with
   the canceller on (or subtract digitally, depending on ``cancellation``);
6. measure depth, spectra and EVM over the estimation block.

Every random draw comes from ``numpy.random.SeedSequence(cfg.seed)``, so a
config plus seed fixes every output byte. Wall-clock time is written to its
own file, which keeps the remaining outputs reproducible.
"""

from __future__ import annotations

import contextlib
import dataclasses
import csv
import io
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..channel import add_awgn, apply_multipath, fractional_delay, scale_to_power
from ..estimator import (
    ChannelEstimate,
    OrderTrace,
    adaptive_order_loop,
    adaptive_order_loop_live,
    ls_estimate,
    reconstruct_reference,
)
from ..frontend import FrontendParams, apply_ref_path, dpmzm_downconvert, sample_if, upconvert_reference
from ..metrics import (
    PsdEstimate,
    SicReport,
    default_band,
    evm,
    format_key_values,
    sic_depth,
    symbol_errors,
    welch_psd,
    write_text,
)
from ..signals import SampledSignal, SymbolStream, demodulate_qpsk, random_qpsk, shape_and_upconvert
from .config import ConfigError, ExperimentConfig, SweepConfig, serialize_config, set_param

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("value", "status", "converged_order", "converged", "sic_depth_db",
                   "evm_on_pct", "evm_off_pct", "symbol_errors_on", "error")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name attached
        raise StageError(name, exc) from exc


@dataclass
class Capture:
    """Everything the simulator knows about one captured block."""

    cfg: ExperimentConfig
    fp: FrontendParams
    x_if: list  # digital IF images of the SI transmit signals
    si_rf: SampledSignal  # SI at the receive antenna, noiseless
    noise_rf: SampledSignal | None
    soi_rf: SampledSignal | None  # scaled SOI at the receive antenna
    soi_symbols: SymbolStream | None
    rx_rf: SampledSignal  # SI + noise + SOI
    y_off: SampledSignal  # digitised IF with the canceller drive off

    @property
    def block_start(self) -> int:
        return self.cfg.block_start()

    @property
    def block_size(self) -> int:
        return self.cfg.estimator.block_size

    def window(self, sig: SampledSignal) -> SampledSignal:
        s = self.block_start
        return sig.with_samples(sig.samples[s : s + self.block_size])

    def rx_si_rf(self) -> SampledSignal:
        if self.noise_rf is None:
            return self.si_rf
        return self.si_rf.with_samples(self.si_rf.samples + self.noise_rf.samples)


def _num_symbols(num_samples: int, fs: float, baud: float) -> int:
    return int(math.ceil(num_samples * baud / fs))


def simulate_capture(cfg: ExperimentConfig, entropy=None) -> Capture:
    """Steps 1 to 3 of the pipeline. ``entropy`` overrides the seed (live mode)."""
    sc = cfg.scenario
    scenario = sc.to_scenario()
    ch = scenario.channel
    plan = cfg.carrier_plan
    fs_if, fs_rf = cfg.if_rate, cfg.rf_rate
    n_if = cfg.capture_length()
    n_rf = n_if * cfg.sampling.rf_oversample
    m = len(sc.antennas)
    seq = np.random.SeedSequence(cfg.seed if entropy is None else entropy)
    children = seq.spawn(m + 2)
    pulse = cfg.pulse

    with _stage("signals"):
        baud = sc.si.baud_gbaud * 1e9
        x_rf, x_if = [], []
        for j in range(m):
            stream = random_qpsk(_num_symbols(n_if, fs_if, baud), baud,
                                 np.random.default_rng(children[j]))
            x_rf.append(shape_and_upconvert(stream, plan.rf_carrier, fs_rf, pulse, n_rf))
            x_if.append(shape_and_upconvert(stream, plan.if_freq, fs_if, pulse, n_if))
        soi_rf = soi_stream = None
        if scenario.soi is not None:
            sb = scenario.soi.baud
            soi_stream = random_qpsk(_num_symbols(n_if, fs_if, sb), sb,
                                     np.random.default_rng(children[m]))
            soi_rf = shape_and_upconvert(soi_stream, plan.rf_carrier, fs_rf, pulse, n_rf,
                                         phase=scenario.soi.phase)

    with _stage("channel"):
        if ch is not None:
            si_rf = apply_multipath(x_rf, ch)
            direct = x_rf[0].power() * ch.per_antenna_taps[0][0].amplitude ** 2
        else:
            si_rf = SampledSignal(np.zeros(n_rf), fs_rf)
            direct = 0.5  # power of a unit-amplitude QPSK carrier
        if soi_rf is not None:
            soi_rf = scale_to_power(soi_rf, direct * 10 ** (scenario.soi.power_db / 10))
        noise_rf = None
        if sc.noise_snr_db is not None:
            ref_p = si_rf.power() if ch is not None else (soi_rf.power() if soi_rf else direct)
            seed = int(children[m + 1].generate_state(1)[0])
            noise_rf = add_awgn(SampledSignal(np.zeros(n_rf), fs_rf), sc.noise_snr_db, seed,
                                reference_power=ref_p)
        rx = si_rf.samples.copy()
        if noise_rf is not None:
            rx += noise_rf.samples
        if soi_rf is not None:
            rx += soi_rf.samples
        rx_rf = SampledSignal(rx, fs_rf)

    with _stage("frontend"):
        peak = float(np.max(np.abs(rx))) or 1.0
        fp = cfg.frontend_params(full_scale=peak)
        y_off = sample_if(dpmzm_downconvert(rx_rf, None, fp), fs_if)

    return Capture(cfg, fp, x_if, si_rf, noise_rf, soi_rf, soi_stream, rx_rf, y_off)


def estimate_channel(cap: Capture) -> tuple[ChannelEstimate, OrderTrace | None]:
    """Step 4: fixed-order LS, the single-block order loop, or live re-capture."""
    cfg = cap.cfg
    est_cfg = cfg.estimator
    block = (cap.block_start, cap.block_size)
    with _stage("estimator"):
        if est_cfg.fixed_order is not None:
            return ls_estimate(cap.x_if, cap.y_off, est_cfg.fixed_order, block), None
        ls = cfg.ls_config()
        if est_cfg.live:
            def capture(i):
                c = simulate_capture(cfg, entropy=[cfg.seed, i + 1])
                return c.x_if, c.y_off
            return adaptive_order_loop_live(capture, ls, cap.block_start)
        return adaptive_order_loop(cap.x_if, cap.y_off, ls, cap.block_start)


def _advance(x: np.ndarray, samples: float) -> np.ndarray:
    """Shift ``x`` earlier by ``samples`` (zero fill at the end)."""
    if samples <= 0:
        return x
    k = int(math.ceil(samples))
    y = np.zeros_like(x)
    y[: x.size - k] = x[k:]
    return fractional_delay(y, k - samples)


def canceller_drive(cap: Capture, r_if: SampledSignal) -> SampledSignal:
    """RF drive that reproduces ``r_if`` at IF after the reference path.

    The path attenuation is pre-compensated in amplitude and its delay by
    advancing the digital reference, since the whole record is available.
    """
    cfg = cap.cfg
    rp = cfg.ref_path()
    pre = _advance(r_if.samples, rp.delay * r_if.sample_rate) * 10 ** (rp.attenuation_db / 20)
    drive = upconvert_reference(r_if.with_samples(pre), cap.fp, cfg.rf_rate,
                                low_side=cfg.carrier_plan.inverted)
    return apply_ref_path(drive, rp)


def cancel(cap: Capture, est: ChannelEstimate | None) -> tuple[SampledSignal, SampledSignal]:
    """Step 5. Returns ``(y_on, y_on_si)``: with SOI, and SI plus noise only."""
    cfg = cap.cfg
    mode = cfg.cancellation
    fs_if = cfg.if_rate
    with _stage("cancellation"):
        rx_si = cap.rx_si_rf()
        if mode == "off":
            y_si = sample_if(dpmzm_downconvert(rx_si, None, cap.fp), fs_if)
            return cap.y_off, y_si
        if mode == "digital":
            r_if = reconstruct_reference(cap.x_if, est)
            y_si = sample_if(dpmzm_downconvert(rx_si, None, cap.fp), fs_if)
            return (cap.y_off.with_samples(cap.y_off.samples - r_if.samples),
                    y_si.with_samples(y_si.samples - r_if.samples))
        if mode == "genie":
            ref_rf = cap.si_rf
        else:
            ref_rf = canceller_drive(cap, reconstruct_reference(cap.x_if, est))
        y_on = sample_if(dpmzm_downconvert(cap.rx_rf, ref_rf, cap.fp), fs_if)
        y_on_si = sample_if(dpmzm_downconvert(rx_si, ref_rf, cap.fp), fs_if)
        return y_on, y_on_si


@dataclass
class ExperimentReport:
    config_text: str
    summary: dict
    trace: OrderTrace | None = None
    psd_off: PsdEstimate | None = None
    psd_on: PsdEstimate | None = None
    sic: SicReport | None = None
    wall_clock_s: float = 0.0
    extras: dict = field(default_factory=dict)

    def files(self) -> dict[str, str]:
        """Output file name to contents, excluding the timing file."""
        out = {"config.yaml": self.config_text, "summary.txt": format_key_values(self.summary)}
        if self.trace is not None:
            out["trace.csv"] = self.trace.to_csv()
        if self.psd_off is not None:
            out["psd_off.csv"] = self.psd_off.to_csv()
        if self.psd_on is not None:
            out["psd_on.csv"] = self.psd_on.to_csv()
        return out

    def write(self, out_dir: str | Path) -> Path:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for name, text in self.files().items():
            write_text(d / name, text)
        write_text(d / "timing.txt", format_key_values({"wall_clock_s": round(self.wall_clock_s, 3)}))
        return d


def _soi_metrics(cap: Capture, y_on: SampledSignal) -> tuple[dict, dict]:
    cfg = cap.cfg
    soi = cfg.scenario.soi
    plan = cfg.carrier_plan
    baud = soi.baud_gbaud * 1e9
    phase = cfg.frontend.lo_phase_rad + soi.phase_rad
    pulse = cfg.pulse

    def demod(y):
        return demodulate_qpsk(y, plan.if_freq, baud, genie_phase=phase, pulse=pulse)

    clean_if = sample_if(dpmzm_downconvert(cap.soi_rf, None, cap.fp), cfg.if_rate)
    z_clean, z_on, z_off = demod(clean_if), demod(y_on), demod(cap.y_off)
    e = cfg.measure.evm_edge_symbols
    n = min(len(z_on), len(cap.soi_symbols))
    k = slice(e, n - e)
    tx = cap.soi_symbols.symbols[k]
    on, off, clean = z_on.symbols[k], z_off.symbols[k], z_clean.symbols[k]
    summary = {
        "num_symbols": int(on.size),
        "evm_on_pct": evm(on, clean),
        "evm_off_pct": evm(off, clean),
        "evm_on_tx_pct": evm(on, tx),
        "evm_off_tx_pct": evm(off, tx),
        "evm_on_dd_pct": evm(on),
        "symbol_errors_on": symbol_errors(on, tx),
        "symbol_errors_off": symbol_errors(off, tx),
    }
    return summary, {"symbols_on": on, "symbols_off": off, "symbols_tx": tx}


def run_single(cfg: ExperimentConfig, config_text: str | None = None,
               keep_signals: bool = False) -> ExperimentReport:
    """Run one experiment; ``config_text`` is echoed verbatim into the report."""
    t0 = time.perf_counter()
    with _stage("config"):
        cfg.validate()
    text = config_text if config_text is not None else serialize_config(cfg)
    cap = simulate_capture(cfg)
    has_si = bool(cfg.scenario.antennas)
    est = trace = None
    if has_si and cfg.cancellation in ("optical", "digital"):
        est, trace = estimate_channel(cap)
    y_on, y_on_si = cancel(cap, est) if has_si else (cap.y_off, cap.y_off)

    summary = {
        "scenario": cfg.scenario.name,
        "seed": cfg.seed,
        "cancellation": cfg.cancellation,
        "block_size": cap.block_size,
    }
    if est is not None:
        summary["order"] = est.order
        summary["converged"] = trace.converged if trace is not None else None
        summary["iterations"] = len(trace) if trace is not None else 0
        y_blk = cap.window(cap.y_off).samples
        summary["fit_residual_db"] = 10 * math.log10(
            max(est.residual_power / float(np.mean(y_blk**2)), 1e-300))

    m = cfg.measure
    sic = psd_off = psd_on = None
    extras: dict = {}
    with _stage("metrics"):
        psd_args = (m.psd_segment, m.psd_overlap, m.psd_window)
        psd_off = welch_psd(cap.window(cap.y_off), *psd_args)
        psd_on = welch_psd(cap.window(y_on), *psd_args)
        if has_si:
            band = None
            if m.band == "main_lobe":
                baud = cfg.scenario.si.baud_gbaud * 1e9
                band = default_band(cfg.carrier_plan.if_freq, baud)
            y_off_si = cap.y_off if cap.soi_rf is None else sample_if(
                dpmzm_downconvert(cap.rx_si_rf(), None, cap.fp), cfg.if_rate)
            sic = sic_depth(cap.window(y_off_si), cap.window(y_on_si), band, *psd_args)
            summary.update(sic.as_dict())
        if cap.soi_rf is not None:
            soi_summary, soi_extra = _soi_metrics(cap, y_on)
            summary.update(soi_summary)
            if keep_signals:
                extras.update(soi_extra)
    if keep_signals:
        extras.update(capture=cap, y_on=y_on, y_on_si=y_on_si, estimate=est)
    wall = time.perf_counter() - t0
    logger.info("run %s finished in %.1f s", cfg.scenario.name, wall)
    return ExperimentReport(text, summary, trace, psd_off, psd_on, sic, wall, extras)


def _sweep_point(args):
    cfg, param, value = args
    try:
        point = set_param(cfg, param, value)
        point = dataclasses.replace(point, sweep=SweepConfig())
        rep = run_single(point)
        return value, rep, None
    except Exception as exc:  # noqa: BLE001 - sweep records failures and continues
        logger.debug("sweep point %r failed\n%s", value, traceback.format_exc())
        return value, None, f"{type(exc).__name__}: {exc}"


def run_sweep(cfg: ExperimentConfig, param: str | None = None, values=None,
              workers: int | None = None, out_dir: str | Path | None = None,
              config_text: str | None = None):
    """One run per sweep value. Returns ``(reports, summary_csv)``.

    ``reports`` holds ``None`` for failed points; the failure message is in
    the summary CSV and the sweep carries on.
    """
    param = param if param is not None else cfg.sweep.param
    values = tuple(values) if values is not None else tuple(cfg.sweep.values)
    workers = workers if workers is not None else cfg.sweep.workers
    if param is None:
        raise ConfigError("no sweep parameter given")
    if not values:
        raise ConfigError("sweep values must not be empty")
    cfg = set_param(cfg, "sweep.param", param)
    cfg = set_param(cfg, "sweep.values", list(values))
    cfg.validate()
    jobs = [(cfg, param, v) for v in values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    reports = []
    for value, rep, err in results:
        reports.append(rep)
        s = rep.summary if rep is not None else {}
        row = [value, "ok" if rep is not None else "failed", s.get("order"), s.get("converged"),
               s.get("sic_depth_db"), s.get("evm_on_pct"), s.get("evm_off_pct"),
               s.get("symbol_errors_on"), err or ""]
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    summary_csv = buf.getvalue()

    if out_dir is not None:
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        write_text(root / "config.yaml", config_text if config_text is not None
                   else serialize_config(cfg))
        write_text(root / "sweep_summary.csv", summary_csv)
        for i, rep in enumerate(reports):
            if rep is not None:
                rep.write(root / f"point_{i:03d}")
    return reports, summary_csv


__all__ = ["Capture", "ExperimentReport", "StageError", "simulate_capture", "estimate_channel",
           "canceller_drive", "cancel", "run_single", "run_sweep"]
