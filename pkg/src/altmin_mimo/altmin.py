"""Alternating-minimization (AltMin) detector.

The ML problem is relaxed to

    minimize    sum_i || y_i - h_i x_i ||^2
    subject to  sum_i y_i = y,   -l <= x_i <= l

over the decomposition vectors ``y_i`` (the share of the received vector
attributed to real symbol ``i``) and the relaxed symbols ``x_i``.  AltMin
alternates two closed-form block updates:

* given ``x``:  ``lam = C / N_t * (y - H x)`` and ``y_i = h_i x_i + lam / 2``
* given ``Y``:  ``x_i = clip(<y_i, h_i> / ||h_i||^2, -l, l)``

With ``C = 1`` the ``Y``-update is the exact minimizer of its subproblem and
the iteration is a monotone descent on a jointly convex objective.  ``C = N_t``
is a faster heuristic without those guarantees.

No Gram matrix is formed and nothing is inverted; the only per-system
precomputation is the squared column norms of ``H``.

Multiplication count (instrumented through :class:`~altmin_mimo.metrics.OpCounter`)
with ``n = 2 N_t`` real columns and ``m = 2 N_r`` real rows:

* initialization: ``3 m n + 2 m``  (column norms, lambda, Y, objective)
* each iteration: ``3 m n + n + 2 m``  (x-update ``m n + n``, lambda ``m n + m``,
  Y ``m``, objective ``m n``)

i.e. ``12 N_t N_r + 2 N_t + 4 N_r`` per iteration.  The products ``h_i^(k) x_i``
are formed once per iteration and shared by the lambda, Y and objective steps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import OpCounter, count_scope
from .model import Constellation, MimoSystem, slice_symbols

__all__ = [
    "AltMinConfig",
    "AltMinState",
    "DetectorResult",
    "DegenerateChannelError",
    "KktDiagnostics",
    "TraceRow",
    "init_state",
    "update_lambda",
    "update_y",
    "update_x",
    "objective",
    "consistency_residual",
    "run",
    "kkt_residuals",
    "write_trace_csv",
    "mults_per_iteration",
    "mults_init",
]


class DegenerateChannelError(ValueError):
    """A channel column has zero norm, so its symbol is unobservable."""


@dataclass(frozen=True)
class AltMinConfig:
    tol: float = 1e-3
    max_iter: int = 24
    c_scale: float | None = None  # None -> N_t of the system being detected
    record_trace: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be an integer >= 1, got {self.max_iter}")
        if self.c_scale is not None and not self.c_scale > 0:
            raise ValueError(f"c_scale must be > 0, got {self.c_scale}")

    def resolved_c(self, n_t: int) -> float:
        return float(n_t) if self.c_scale is None else float(self.c_scale)


@dataclass
class AltMinState:
    x: np.ndarray
    y_dec: np.ndarray
    lam: np.ndarray
    v_obj: float
    iter: int
    col_norms_sq: np.ndarray
    # h_i^(k) * x_i for the current x; None once x moves
    hx: np.ndarray | None = None
    # the Y that produced the current x (subproblem data for the KKT check)
    y_used: np.ndarray | None = None


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    v_obj: float
    lambda_norm: float
    consistency: float
    x: np.ndarray
    real_mults: int


@dataclass
class DetectorResult:
    x_hat_real: np.ndarray
    x_hat_sliced: np.ndarray
    iterations: int
    converged: bool
    multiply_count: int
    detector: str = "altmin"
    trace: list[TraceRow] | None = None
    sqrt_count: int = 0
    state: AltMinState | None = field(default=None, repr=False)

    @property
    def v_trace(self) -> list[float] | None:
        if self.trace is None:
            return None
        return [row.v_obj for row in self.trace]


@dataclass(frozen=True)
class KktDiagnostics:
    mu1: np.ndarray
    mu2: np.ndarray
    stationarity_residual: float
    comp_slack_residual: float
    # stationarity of the full relaxation at the current (x, Y), same units
    joint_stationarity: float = float("nan")


def mults_init(n_t: int, n_r: int) -> int:
    m, n = 2 * n_r, 2 * n_t
    return 3 * m * n + 2 * m


def mults_per_iteration(n_t: int, n_r: int) -> int:
    m, n = 2 * n_r, 2 * n_t
    return 3 * m * n + n + 2 * m


def _products(state: AltMinState, sys: MimoSystem, ops: OpCounter) -> np.ndarray:
    if state.hx is None:
        state.hx = ops.mul(sys.h_real, state.x)
    return state.hx


def update_lambda(
    state: AltMinState, sys: MimoSystem, cfg: AltMinConfig, ops: OpCounter | None = None
) -> np.ndarray:
    ops = ops if ops is not None else OpCounter()
    hx = _products(state, sys, ops)
    resid = sys.y_real - hx.sum(axis=1)
    state.lam = ops.mul(cfg.resolved_c(sys.n_t) / sys.n_t, resid)
    return state.lam


def update_y(
    state: AltMinState, sys: MimoSystem, ops: OpCounter | None = None
) -> np.ndarray:
    ops = ops if ops is not None else OpCounter()
    hx = _products(state, sys, ops)
    half = ops.mul(0.5, state.lam)
    state.y_dec = hx + half[:, None]
    return state.y_dec


def update_x(
    state: AltMinState, sys: MimoSystem, c: Constellation, ops: OpCounter | None = None
) -> np.ndarray:
    ops = ops if ops is not None else OpCounter()
    state.y_used = state.y_dec
    num = ops.colsum_mul(state.y_dec, sys.h_real)
    ratio = ops.div(num, state.col_norms_sq)
    state.x = np.minimum(np.maximum(ratio, -c.l), c.l)
    state.hx = None
    return state.x


def objective(state: AltMinState, sys: MimoSystem, ops: OpCounter | None = None) -> float:
    """``sum_i ||y_i - h_i x_i||^2`` for the current ``x`` and ``Y``."""
    ops = ops if ops is not None else OpCounter()
    hx = _products(state, sys, ops)
    return ops.sumsq(state.y_dec - hx)


def consistency_residual(state: AltMinState, sys: MimoSystem) -> float:
    """``max_k |sum_i y_i^(k) - y^(k)| / (1 + |y^(k)|)``."""
    y = sys.y_real
    if y.size == 0:
        return 0.0
    return float(np.max(np.abs(state.y_dec.sum(axis=1) - y) / (1.0 + np.abs(y))))


def init_state(
    sys: MimoSystem, cfg: AltMinConfig, ops: OpCounter | None = None
) -> AltMinState:
    """``x = 0`` followed by one lambda and one Y update."""
    ops = ops if ops is not None else OpCounter()
    H = sys.h_real
    col_norms_sq = ops.colsum_mul(H, H)
    bad = np.flatnonzero(col_norms_sq <= 0.0)
    if bad.size:
        raise DegenerateChannelError(
            f"channel column(s) {bad.tolist()} have zero norm"
        )
    m, n = H.shape
    state = AltMinState(
        x=np.zeros(n),
        y_dec=np.zeros((m, n)),
        lam=np.zeros(m),
        v_obj=0.0,
        iter=0,
        col_norms_sq=col_norms_sq,
    )
    update_lambda(state, sys, cfg, ops)
    update_y(state, sys, ops)
    state.v_obj = objective(state, sys, ops)
    return state


def _trace_row(state: AltMinState, sys: MimoSystem, ops: OpCounter) -> TraceRow:
    return TraceRow(
        iteration=state.iter,
        v_obj=state.v_obj,
        lambda_norm=float(np.linalg.norm(state.lam)),
        consistency=consistency_residual(state, sys),
        x=state.x.copy(),
        real_mults=ops.real_mults,
    )


def run(
    sys: MimoSystem,
    cfg: AltMinConfig,
    c: Constellation,
    ops: OpCounter | None = None,
) -> DetectorResult:
    """Detect ``sys`` with AltMin.

    Each iteration performs x -> lambda -> Y -> objective and stops once the
    absolute objective change drops below ``cfg.tol`` or ``cfg.max_iter``
    iterations have run.
    """
    ops = ops if ops is not None else count_scope("altmin")
    state = init_state(sys, cfg, ops)
    trace = [_trace_row(state, sys, ops)] if cfg.record_trace else None
    converged = False
    while state.iter < cfg.max_iter:
        state.iter += 1
        update_x(state, sys, c, ops)
        update_lambda(state, sys, cfg, ops)
        update_y(state, sys, ops)
        v_prev, state.v_obj = state.v_obj, objective(state, sys, ops)
        if trace is not None:
            trace.append(_trace_row(state, sys, ops))
        if abs(state.v_obj - v_prev) < cfg.tol:
            converged = True
            break
    result = DetectorResult(
        x_hat_real=state.x.copy(),
        x_hat_sliced=slice_symbols(state.x, c),
        iterations=state.iter,
        converged=converged,
        multiply_count=ops.real_mults,
        detector="altmin",
        trace=trace,
        state=state,
    )
    return result


def _box_stationarity(x, g, l):
    upper = x >= l
    lower = x <= -l
    mu1 = np.where(upper, np.maximum(-g, 0.0), 0.0)
    mu2 = np.where(lower, np.maximum(g, 0.0), 0.0)
    return mu1, mu2, np.abs(g + mu1 - mu2)


def _gradient(x, y_dec, col_norms_sq, H):
    return 2.0 * x * col_norms_sq - 2.0 * np.einsum("ki,ki->i", y_dec, H)


def kkt_residuals(
    state: AltMinState, sys: MimoSystem, c: Constellation
) -> KktDiagnostics:
    """KKT residuals of the x-subproblem solved by the last x-update.

    For ``min_x sum_k (y_i^(k) - h_i^(k) x_i)^2`` on ``[-l, l]`` with gradient
    ``g_i = 2 x_i ||h_i||^2 - 2 <y_i, h_i>`` the conditions are
    ``g_i + mu1_i - mu2_i = 0``, ``mu1_i (l - x_i) = 0``, ``mu2_i (l + x_i) = 0``,
    ``mu1, mu2 >= 0``, with ``mu1`` pricing ``x_i <= l``.  Multipliers are read
    off the active set; a wrong-signed multiplier is clipped to 0 and the
    violation lands in ``stationarity_residual``.

    The subproblem data is the Y that produced ``state.x`` (``state.y_used``).
    ``joint_stationarity`` evaluates the same expression at the current Y,
    i.e. stationarity of the whole relaxation.
    """
    H = sys.h_real
    x = state.x
    y_sub = state.y_used if state.y_used is not None else state.y_dec
    mu1, mu2, stat = _box_stationarity(x, _gradient(x, y_sub, state.col_norms_sq, H), c.l)
    slack = np.maximum(np.abs(mu1 * (c.l - x)), np.abs(mu2 * (c.l + x)))
    _, _, joint = _box_stationarity(
        x, _gradient(x, state.y_dec, state.col_norms_sq, H), c.l
    )
    return KktDiagnostics(
        mu1=mu1,
        mu2=mu2,
        stationarity_residual=float(np.max(stat, initial=0.0)),
        comp_slack_residual=float(np.max(slack, initial=0.0)),
        joint_stationarity=float(np.max(joint, initial=0.0)),
    )


def write_trace_csv(result: DetectorResult, path) -> Path:
    """Dump the per-iteration trace.

    Columns: ``iteration, v_obj, lambda_norm, consistency, real_mults,
    x_0 .. x_{2N_t-1}``.
    """
    if result.trace is None:
        raise ValueError("result has no trace; run with record_trace=True")
    path = Path(path)
    n = result.x_hat_real.size
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["iteration", "v_obj", "lambda_norm", "consistency", "real_mults"]
            + [f"x_{i}" for i in range(n)]
        )
        for row in result.trace:
            w.writerow(
                [row.iteration, repr(row.v_obj), repr(row.lambda_norm),
                 repr(row.consistency), row.real_mults]
                + [repr(float(v)) for v in row.x]
            )
    return path
