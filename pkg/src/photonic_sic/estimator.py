"""Multi-antenna least-squares SI channel estimation with adaptive order.

The received IF block ``y`` (length ``N``) is modelled as ``X h`` with
``X = [X_1 ... X_m]`` and ``X_j`` the ``N x L`` Toeplitz matrix of transmit
signal ``x_j`` (row ``k``, column ``l`` holds ``x_j(n + k - l)``).

The order update is::

    l_f(i+1) = clip(l_f(i) - alpha - gamma(i) * e_delta(i), l_min, l_max)
    L(i+1)   = floor(l_f(i+1)) if |L(i) - l_f(i+1)| > delta else L(i)

with ``e_delta(i) = (||e_L||^2 - ||e_{L-Delta}||^2) / ||y||^2 <= 0``.
``index_reading="lagged"`` uses the lagged form of the hold test, which
compares against and floors ``l_f(i)`` rather than the freshly updated value.
``normalize=False`` drops the ``/ ||y||^2`` factor.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .signals import SampledSignal

logger = logging.getLogger(__name__)

RANK_RCOND = 1e-10


class RankDeficientError(ValueError):
    """The stacked convolution matrix does not have full column rank."""


class EstimationError(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"estimation failed at iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class LsConfig:
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
    num_antennas: int = 2
    patience: int = 20
    normalize: bool = True
    index_reading: str = "fresh"

    def __post_init__(self):
        for name in ("alpha", "delta", "big_delta", "l_init", "l_min", "l_max",
                     "block_size", "num_antennas", "max_iterations", "patience"):
            v = getattr(self, name)
            if int(v) != v or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not self.l_min <= self.l_init <= self.l_max:
            raise ValueError("need l_min <= l_init <= l_max")
        if self.block_size < self.num_antennas * self.l_max:
            raise ValueError("block_size must be >= num_antennas * l_max (overdetermined LS)")
        if self.big_delta >= self.l_min:
            raise ValueError("big_delta must be < l_min so the probe order stays positive")
        if not 0 < self.gamma_min <= self.gamma_max:
            raise ValueError("need 0 < gamma_min <= gamma_max")
        if self.index_reading not in ("fresh", "lagged"):
            raise ValueError("index_reading must be 'fresh' or 'lagged'")


@dataclass(frozen=True)
class OrderState:
    iteration: int
    order: int
    order_float: float
    last_e_delta: float = 0.0

    @classmethod
    def initial(cls, cfg: LsConfig) -> "OrderState":
        return cls(0, cfg.l_init, float(cfg.l_init))


@dataclass(frozen=True)
class ChannelEstimate:
    """Per-antenna FIR estimates, each of length ``order``."""

    taps: tuple
    order: int
    residual_power: float

    def __post_init__(self):
        taps = tuple(np.asarray(t, dtype=float) for t in self.taps)
        for t in taps:
            if t.shape != (self.order,):
                raise ValueError(f"each tap block must have {self.order} coefficients")
        if not self.residual_power >= 0:
            raise ValueError("residual_power must be >= 0")
        object.__setattr__(self, "taps", taps)

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate(self.taps)


@dataclass(frozen=True)
class OrderRecord:
    i: int
    L: int
    l_f: float
    e_delta: float
    gamma: float
    residual_db: float


@dataclass
class OrderTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    final_order: int | None = None

    CSV_COLUMNS = ("i", "L", "l_f", "e_delta", "gamma", "residual_db")

    def append(self, rec: OrderRecord) -> None:
        if self.records and rec.i <= self.records[-1].i:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def orders(self) -> np.ndarray:
        return np.array([r.L for r in self.records], dtype=int)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for r in self.records:
            w.writerow([r.i, r.L, repr(float(r.l_f)), repr(float(r.e_delta)),
                        repr(float(r.gamma)), repr(float(r.residual_db))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "OrderTrace":
        rows = list(csv.DictReader(io.StringIO(text)))
        recs = [OrderRecord(int(r["i"]), int(r["L"]), float(r["l_f"]), float(r["e_delta"]),
                            float(r["gamma"]), float(r["residual_db"])) for r in rows]
        return cls(recs)


def _as_array(x) -> np.ndarray:
    return x.samples if isinstance(x, SampledSignal) else np.asarray(x, dtype=float)


def _resolve_block(block, length: int, order: int) -> tuple[int, int]:
    if block is None:
        start = order - 1
        return start, length - start
    start, size = (int(b) for b in block)
    if start < 0 or start + size > length:
        raise ValueError(f"block [{start}, {start + size}) is outside the signal (length {length})")
    return start, size


def build_convolution_matrix(x, order: int, block=None) -> np.ndarray:
    """``N x L`` Toeplitz matrix with entry ``[k, l] = x(n + k - l)``.

    ``block`` is ``(n, N)``; by default the block starts at ``n = order - 1``
    and runs to the end of ``x``. History before ``x[0]`` is taken as zero.
    """
    x = _as_array(x)
    start, size = _resolve_block(block, x.size, order)
    if size < order:
        raise ValueError(f"block of {size} samples cannot support order {order} (underdetermined)")
    col = x[start : start + size]
    lags = start - np.arange(order)
    row = np.where(lags >= 0, x[np.clip(lags, 0, None)], 0.0)
    return sla.toeplitz(col, row)


def _stack(x_list, order: int, block) -> tuple[np.ndarray, int, int]:
    arrays = [_as_array(x) for x in x_list]
    n = min(a.size for a in arrays)
    start, size = _resolve_block(block, n, order)
    X = np.hstack([build_convolution_matrix(a, order, (start, size)) for a in arrays])
    return X, start, size


def _augmented_qr(A: np.ndarray) -> np.ndarray:
    """Upper-triangular factor of ``A`` (rows x cols, rows >= cols), overwriting ``A``."""
    (qr, _tau), _ = sla.qr(A, mode="raw", overwrite_a=True, check_finite=False)
    k = A.shape[1]
    return np.triu(qr[:k, :k])


def _check_rank(diag: np.ndarray, ncols: int) -> None:
    d = np.abs(diag[:ncols])
    if d.size == 0:
        return
    ratio = d.min() / d.max() if d.max() > 0 else 0.0
    if ratio < RANK_RCOND:
        raise RankDeficientError(
            f"convolution matrix is rank deficient: min/max |diag(R)| = {ratio:.3e} over "
            f"{ncols} columns (column {int(np.argmin(d))} is dependent); signals are not "
            "persistently exciting for this order"
        )


def ls_estimate(x_list: Sequence, y, order: int, block=None) -> ChannelEstimate:
    """Least-squares FIR estimate of ``y`` from ``m`` transmit signals via QR.

    Raises :class:`RankDeficientError` instead of regularising when the stacked
    convolution matrix loses column rank.
    """
    ya = _as_array(y)
    X, start, size = _stack(x_list, order, block)
    yb = ya[start : start + size]
    m = len(x_list)
    if size < m * order:
        raise ValueError(f"block of {size} samples underdetermines {m * order} coefficients")
    ncols = X.shape[1]
    A = np.column_stack([X, yb])
    del X
    R = _augmented_qr(A)
    _check_rank(np.diag(R), ncols)
    h = sla.solve_triangular(R[:ncols, :ncols], R[:ncols, ncols], check_finite=False)
    # the last diagonal entry of R for [X | y] is the LS residual norm
    res = float(R[ncols, ncols] ** 2) / size
    return ChannelEstimate(tuple(h.reshape(m, order)), order, res)


def reconstruct_reference(x_list: Sequence, est: ChannelEstimate, block=None) -> SampledSignal:
    """Estimated SI ``X h`` over ``block``; the whole signal by default.

    Without a block the estimate is applied as an FIR filter from sample 0
    with zero history, so the output has the length of the inputs.
    """
    if len(x_list) != len(est.taps):
        raise ValueError("number of transmit signals does not match the estimate")
    fs = x_list[0].sample_rate if isinstance(x_list[0], SampledSignal) else 1.0
    arrays = [_as_array(x) for x in x_list]
    if block is None:
        n = min(a.size for a in arrays)
        out = np.zeros(n)
        for a, h in zip(arrays, est.taps):
            out += np.convolve(a[:n], h)[:n]
        return SampledSignal(out, fs)
    start, size = _resolve_block(block, min(a.size for a in arrays), est.order)
    out = np.zeros(size)
    for a, h in zip(arrays, est.taps):
        out += build_convolution_matrix(a, est.order, (start, size)) @ h
    return SampledSignal(out, fs)


def order_error_delta(x_list: Sequence, y, order: int, big_delta: int, block=None,
                      normalize: bool = True) -> float:
    """``||e_L||^2 - ||e_{L-Delta}||^2``, divided by ``||y||^2`` when normalising.

    Both residuals are evaluated on the same block (the one implied by ``order``
    when none is given).
    """
    if order - big_delta < 1:
        raise ValueError("order - big_delta must be >= 1")
    ya = _as_array(y)
    start, size = _resolve_block(block, ya.size, order)
    yb = ya[start : start + size]
    energy = float(yb @ yb)
    if energy == 0:
        raise ValueError("y is identically zero on the block; e_delta is undefined")
    hi = ls_estimate(x_list, y, order, (start, size)).residual_power * size
    lo = ls_estimate(x_list, y, order - big_delta, (start, size)).residual_power * size
    e = hi - lo
    return e / energy if normalize else e


class NestedLsSolver:
    """All LS orders ``1..l_max`` on one block from a single QR factorisation.

    Columns are ordered lag-major (lag 0 of every antenna, then lag 1, ...),
    so the first ``m*L`` columns span exactly the order-``L`` model. With
    ``[X | y] = Q R`` and ``z = R[:, -1]``, the order-``L`` residual is
    ``sum(z[m*L:]**2)`` and
    ``e_delta(L) = -sum(z[m*(L-Delta) : m*L]**2)``.
    """

    def __init__(self, x_list: Sequence, y, l_max: int, block_start: int, block_size: int):
        arrays = [_as_array(x) for x in x_list]
        ya = _as_array(y)
        self.m = m = len(arrays)
        self.l_max = l_max
        n = block_size
        if block_start + n > min(min(a.size for a in arrays), ya.size):
            raise ValueError("signals do not cover the requested block")
        if n < m * l_max:
            raise ValueError("block too short for l_max")
        A = np.empty((n, m * l_max + 1))
        for lag in range(l_max):
            lo = block_start - lag
            for j, a in enumerate(arrays):
                col = A[:, lag * m + j]
                if lo >= 0:
                    col[:] = a[lo : lo + n]
                else:
                    col[:-lo] = 0.0
                    col[-lo:] = a[: n + lo]
        yb = ya[block_start : block_start + n]
        A[:, -1] = yb
        self.energy = float(yb @ yb)
        self.block_size = n
        self.R = _augmented_qr(A)
        del A
        z = self.R[:-1, -1]
        self._zsq = z**2
        self._tail = np.concatenate([np.cumsum(self._zsq[::-1])[::-1], [0.0]])
        self._floor = self.R[-1, -1] ** 2

    def residual_energy(self, order: int) -> float:
        return float(self._tail[self.m * order] + self._floor)

    def error_delta(self, order: int, big_delta: int, normalize: bool = True) -> float:
        if order > self.l_max or order - big_delta < 1:
            raise ValueError(f"order {order} outside [big_delta+1, l_max]")
        e = -float(np.sum(self._zsq[self.m * (order - big_delta) : self.m * order]))
        if not normalize:
            return e
        if self.energy == 0:
            raise ValueError("y is identically zero on the block; e_delta is undefined")
        return e / self.energy

    def estimate(self, order: int) -> ChannelEstimate:
        k = self.m * order
        _check_rank(np.diag(self.R), k)
        h = sla.solve_triangular(self.R[:k, :k], self.R[:k, -1], check_finite=False)
        taps = tuple(h.reshape(order, self.m).T)
        return ChannelEstimate(taps, order, self.residual_energy(order) / self.block_size)


def gamma_schedule(i: int, cfg: LsConfig) -> float:
    """Step size rising linearly from ``gamma_min`` to ``gamma_max``."""
    if not 0 <= i < cfg.max_iterations:
        raise ValueError(f"iteration {i} outside [0, {cfg.max_iterations})")
    if cfg.max_iterations == 1:
        return cfg.gamma_min
    return cfg.gamma_min + (cfg.gamma_max - cfg.gamma_min) * i / (cfg.max_iterations - 1)


def update_order(state: OrderState, e_delta: float, gamma: float, cfg: LsConfig) -> OrderState:
    lf_new = (state.order_float - cfg.alpha) - gamma * e_delta
    lf_new = min(max(lf_new, cfg.l_min), cfg.l_max)
    test = lf_new if cfg.index_reading == "fresh" else state.order_float
    order = math.floor(test) if abs(state.order - test) > cfg.delta else state.order
    order = min(max(order, cfg.l_min), cfg.l_max)
    return OrderState(state.iteration + 1, order, lf_new, e_delta)


def _run_loop(cfg: LsConfig, step: Callable[[int, int], tuple[float, float]]) -> OrderTrace:
    """Drive the order update; ``step(i, L)`` returns ``(e_delta, residual_energy_ratio)``."""
    state = OrderState.initial(cfg)
    trace = OrderTrace()
    unchanged = 0
    for i in range(cfg.max_iterations):
        try:
            e, res_ratio = step(i, state.order)
        except (RankDeficientError, ValueError) as exc:
            raise EstimationError(i, exc) from exc
        gamma = gamma_schedule(i, cfg)
        res_db = 10 * math.log10(res_ratio) if res_ratio > 0 else -math.inf
        trace.append(OrderRecord(i, state.order, state.order_float, e, gamma, res_db))
        new = update_order(state, e, gamma, cfg)
        unchanged = unchanged + 1 if new.order == state.order else 0
        state = new
        if unchanged >= cfg.patience:
            trace.converged = True
            break
    trace.final_order = state.order
    logger.info("order loop finished at L=%d after %d iterations (converged=%s)",
                state.order, len(trace), trace.converged)
    return trace


def adaptive_order_loop(x_list: Sequence, y, cfg: LsConfig, block_start: int | None = None,
                        solver: NestedLsSolver | None = None):
    """Iterate the order update on one captured block.

    Returns ``(estimate, trace)``; the estimate is the LS solution at the final
    order. ``block_start`` defaults to ``cfg.l_max`` so that every lag sees real
    history. A prebuilt ``solver`` for the same block may be passed in to share
    the factorisation between runs from different initial orders.
    """
    if len(x_list) != cfg.num_antennas:
        raise ValueError(f"expected {cfg.num_antennas} transmit signals, got {len(x_list)}")
    start = cfg.l_max if block_start is None else block_start
    if solver is None:
        solver = NestedLsSolver(x_list, y, cfg.l_max, start, cfg.block_size)
    if solver.energy == 0:
        raise ValueError("y is identically zero on the block; e_delta is undefined")

    def step(i, L):
        e = solver.error_delta(L, cfg.big_delta, cfg.normalize)
        return e, solver.residual_energy(L) / solver.energy

    trace = _run_loop(cfg, step)
    return solver.estimate(trace.final_order), trace


def adaptive_order_loop_live(capture: Callable[[int], tuple], cfg: LsConfig,
                             block_start: int | None = None):
    """Order loop that re-captures a fresh block every iteration.

    ``capture(i)`` returns ``(x_list, y)`` for iteration ``i``. Each iteration
    factorises a new block, so this costs one QR per iteration.
    """
    start = cfg.l_max if block_start is None else block_start
    last = {}

    def step(i, L):
        x_list, y = capture(i)
        s = NestedLsSolver(x_list, y, L, start, cfg.block_size)
        last["solver"] = s
        e = s.error_delta(L, cfg.big_delta, cfg.normalize)
        return e, s.residual_energy(L) / s.energy

    trace = _run_loop(cfg, step)
    solver = last["solver"]
    order = min(trace.final_order, solver.l_max)
    if order != trace.final_order:
        x_list, y = capture(len(trace))
        solver = NestedLsSolver(x_list, y, trace.final_order, start, cfg.block_size)
        order = trace.final_order
    return solver.estimate(order), trace
