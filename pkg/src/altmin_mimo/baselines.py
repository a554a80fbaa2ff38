"""Reference detectors: exact MMSE / ZF, brute-force ML, and a projected-
gradient solver for the box-relaxed least-squares problem.

MMSE and ZF work in the complex domain on the N_t x N_t regularized Gram
matrix ``G = H^H H + sigma_v^2 I`` (``sigma_v^2 = 0`` for ZF), factor it with
a column-oriented Cholesky and finish with two triangular solves.  Only the
lower triangle of ``G`` is formed.  All products go through the shared
:class:`~altmin_mimo.metrics.OpCounter`, so multiply counts are measured
under the same convention as AltMin.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .altmin import DetectorResult
from .metrics import OpCounter, count_scope
from .model import (
    Constellation,
    MimoSystem,
    complex_to_real_vector,
    slice_symbols,
)

__all__ = [
    "LinearDetectorKind",
    "SingularSystemError",
    "ProblemTooLargeError",
    "ML_MAX_CANDIDATES",
    "slice_symbols",
    "gram_lower",
    "cholesky_counted",
    "cholesky_solve_counted",
    "linear_detect",
    "ml_bruteforce",
    "box_lsq_projected_gradient",
]

ML_MAX_CANDIDATES = 2**20
_ML_CHUNK = 1 << 15


class LinearDetectorKind(str, Enum):
    MMSE = "mmse"
    ZF = "zf"


class SingularSystemError(np.linalg.LinAlgError):
    pass


class ProblemTooLargeError(ValueError):
    pass


def gram_lower(h: np.ndarray, ops: OpCounter) -> np.ndarray:
    """Lower triangle (diagonal included) of ``h^H h``."""
    n = h.shape[1]
    g = np.zeros((n, n), dtype=complex)
    hc = h.conj()
    for j in range(n):
        g[j, j] = ops.sumsq(h[:, j])
        if j + 1 < n:
            g[j + 1 :, j] = ops.rmatvec(hc[:, j + 1 :], h[:, j])
    return g


def cholesky_counted(a: np.ndarray, ops: OpCounter):
    """Left-looking Cholesky ``a = L L^H`` reading only the lower triangle.

    Returns ``(L, inv_diag)`` where ``inv_diag`` holds ``1 / L[j, j]``.
    """
    n = a.shape[0]
    L = np.zeros((n, n), dtype=complex)
    inv_diag = np.zeros(n)
    scale = max(float(np.max(np.abs(np.diag(a)).real, initial=0.0)), 1.0)
    for j in range(n):
        row = L[j, :j]
        d = a[j, j].real - ops.sumsq(row)
        if not d > 1e-13 * scale:
            raise SingularSystemError(
                f"Gram matrix not positive definite at pivot {j} (d={d:.3e})"
            )
        ljj = float(ops.sqrt(d))
        inv = float(ops.div(1.0, ljj))
        L[j, j] = ljj
        inv_diag[j] = inv
        if j + 1 < n:
            col = a[j + 1 :, j] - ops.matvec(L[j + 1 :, :j], row.conj())
            L[j + 1 :, j] = ops.mul(col, inv)
    return L, inv_diag


def cholesky_solve_counted(
    L: np.ndarray, inv_diag: np.ndarray, b: np.ndarray, ops: OpCounter
) -> np.ndarray:
    """Solve ``L L^H x = b`` by forward then backward substitution."""
    n = L.shape[0]
    z = np.zeros(n, dtype=complex)
    for i in range(n):
        z[i] = ops.mul(b[i] - ops.dot(L[i, :i], z[:i]), inv_diag[i])
    x = np.zeros(n, dtype=complex)
    for i in range(n - 1, -1, -1):
        x[i] = ops.mul(z[i] - ops.dot(L[i + 1 :, i].conj(), x[i + 1 :]), inv_diag[i])
    return x


def linear_detect(
    sys: MimoSystem,
    kind: LinearDetectorKind | str,
    c: Constellation,
    ops: OpCounter | None = None,
) -> DetectorResult:
    """Exact MMSE (``(H^H H + sigma_v^2 I)^-1 H^H y``) or ZF, then slicing."""
    kind = LinearDetectorKind(kind)
    ops = ops if ops is not None else count_scope(kind.value)
    h = sys.h_complex
    if kind is LinearDetectorKind.ZF and sys.n_r < sys.n_t:
        raise SingularSystemError(
            f"ZF needs n_r >= n_t (n_r={sys.n_r}, n_t={sys.n_t})"
        )
    g = gram_lower(h, ops)
    if kind is LinearDetectorKind.MMSE:
        g[np.diag_indices_from(g)] += sys.noise_var_complex
    mf = ops.rmatvec(h.conj(), sys.y_complex)
    L, inv_diag = cholesky_counted(g, ops)
    x_hat = cholesky_solve_counted(L, inv_diag, mf, ops)
    x_real = complex_to_real_vector(x_hat)
    return DetectorResult(
        x_hat_real=x_real,
        x_hat_sliced=slice_symbols(x_real, c),
        iterations=0,
        converged=True,
        multiply_count=ops.real_mults,
        detector=kind.value,
        sqrt_count=ops.sqrts,
    )


def _candidates(levels: int, dim: int, start: int, stop: int) -> np.ndarray:
    """Mixed-radix digits of ``start..stop-1``; first coordinate most significant."""
    idx = np.arange(start, stop, dtype=np.int64)
    powers = levels ** np.arange(dim - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // powers) % levels


def ml_bruteforce(
    sys: MimoSystem, c: Constellation, ops: OpCounter | None = None
) -> DetectorResult:
    """Exhaustive ``argmin ||y - H x||^2`` over ``x`` in alphabet^(2 N_t).

    Candidates are visited in lexicographic order of the real vector, and the
    first minimizer wins ties.
    """
    ops = ops if ops is not None else count_scope("ml")
    dim = 2 * sys.n_t
    total = c.levels**dim
    if total > ML_MAX_CANDIDATES:
        raise ProblemTooLargeError(
            f"ML search over M^N_t = {c.M}^{sys.n_t} = {total} candidates exceeds "
            f"the bound {ML_MAX_CANDIDATES} (2^20)"
        )
    H, y = sys.h_real, sys.y_real
    best_val = np.inf
    best = None
    for start in range(0, total, _ML_CHUNK):
        cand = c.alphabet[_candidates(c.levels, dim, start, min(total, start + _ML_CHUNK))]
        ops.add(cand.shape[0] * H.size)
        resid = y[None, :] - cand @ H.T
        ops.add(resid.size)
        vals = np.einsum("ij,ij->i", resid, resid)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val = float(vals[k])
            best = cand[k].copy()
    return DetectorResult(
        x_hat_real=best,
        x_hat_sliced=best.copy(),
        iterations=total,
        converged=True,
        multiply_count=ops.real_mults,
        detector="ml",
    )


def box_lsq_projected_gradient(
    H: np.ndarray,
    y: np.ndarray,
    l: float,
    tol: float = 1e-12,
    max_iter: int = 500_000,
) -> tuple[np.ndarray, float]:
    """Minimize ``||y - H x||^2`` over ``[-l, l]^n`` by accelerated projected
    gradient with function-value restarts.

    Stops when the projected-gradient step moves ``x`` by less than ``tol``
    (infinity norm).  Returns ``(x, objective)``.
    """
    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float)
    n = H.shape[1]
    lip = 2.0 * np.linalg.norm(H, 2) ** 2
    if lip == 0.0:
        return np.zeros(n), float(y @ y)
    step = 1.0 / lip

    def f(v):
        r = y - H @ v
        return float(r @ r)

    x = np.zeros(n)
    z = x
    theta = 1.0
    fx = f(x)
    for _ in range(max_iter):
        grad = -2.0 * (H.T @ (y - H @ z))
        x_new = np.clip(z - step * grad, -l, l)
        f_new = f(x_new)
        if f_new > fx:
            if z is x:
                # a plain projected step no longer descends: rounding floor
                break
            theta = 1.0
            z = x
            continue
        theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
        moved = np.max(np.abs(x_new - x))
        z = x_new + ((theta - 1.0) / theta_new) * (x_new - x)
        x, fx, theta = x_new, f_new, theta_new
        if moved < tol:
            g = -2.0 * (H.T @ (y - H @ x))
            if np.max(np.abs(np.clip(x - step * g, -l, l) - x)) < tol:
                break
    return x, fx
