"""BER accounting and real-multiplication counting.

Every detector receives an :class:`OpCounter` and routes its arithmetic
through the counter's kernels.  A kernel performs the numpy operation and
adds the number of scalar real multiplications it executed, derived from the
operand shapes and dtypes:

* real x real product: 1
* complex x real product: 2
* complex x complex product: 4
* ``|z|**2`` of a complex scalar: 2
* a division counts as one multiplication (reciprocal-multiply)

Additions, subtractions and comparisons are free.  Square roots are tallied
separately in ``sqrts``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

__all__ = ["OpCounter", "BerStat", "count_scope", "ber", "Z95"]

Z95 = 1.96


def _is_complex(a) -> bool:
    dt = getattr(a, "dtype", None)
    if dt is not None:
        return dt.kind == "c"
    return isinstance(a, complex)


def _unit_cost(a, b) -> int:
    ca = _is_complex(a)
    cb = _is_complex(b)
    if ca and cb:
        return 4
    if ca or cb:
        return 2
    return 1


@dataclass
class OpCounter:
    """Tally of real multiplications for one scope (usually one detection)."""

    scope_label: str = ""
    real_mults: int = 0
    sqrts: int = 0

    def add(self, n: int) -> None:
        if n < 0:
            raise ValueError("multiplication count must be nonnegative")
        self.real_mults += n

    def merge(self, other: "OpCounter") -> "OpCounter":
        return OpCounter(
            self.scope_label or other.scope_label,
            self.real_mults + other.real_mults,
            self.sqrts + other.sqrts,
        )

    __add__ = merge

    # -- counted kernels -------------------------------------------------

    def mul(self, a, b):
        """Elementwise (broadcast) product."""
        out = np.multiply(a, b)
        self.add(np.size(out) * _unit_cost(a, b))
        return out

    def div(self, a, b):
        """Elementwise quotient, one multiplication per real output component."""
        out = np.divide(a, b)
        per = 2 if _is_complex(out) else 1
        self.add(np.size(out) * per)
        return out

    def dot(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        self.add(a.size * _unit_cost(a, b))
        return a @ b

    def matvec(self, A, x):
        A = np.asarray(A)
        self.add(A.size * _unit_cost(A, x))
        return A @ x

    def rmatvec(self, A, x):
        """``A.T @ x`` (no conjugation)."""
        A = np.asarray(A)
        self.add(A.size * _unit_cost(A, x))
        return A.T @ x

    def colsum_mul(self, A, B):
        """Column-wise inner products ``sum_k A[k, i] * B[k, i]``."""
        self.add(np.size(A) * _unit_cost(A, B))
        return np.einsum("ki,ki->i", A, B)

    def abs2(self, z):
        z = np.asarray(z)
        if _is_complex(z):
            self.add(2 * z.size)
            return z.real * z.real + z.imag * z.imag
        self.add(z.size)
        return z * z

    def sumsq(self, a) -> float:
        a = np.asarray(a)
        if _is_complex(a):
            self.add(2 * a.size)
            return float(np.vdot(a, a).real)
        self.add(a.size)
        flat = a.ravel()
        return float(flat @ flat)

    def sqrt(self, a):
        self.sqrts += int(np.size(a))
        return np.sqrt(a)


def count_scope(label: str) -> OpCounter:
    """Fresh counter for one detection (or any other accounting scope)."""
    return OpCounter(scope_label=label)


@dataclass(frozen=True)
class BerStat:
    bit_errors: int = 0
    bits_total: int = 0

    def __post_init__(self):
        if self.bit_errors < 0 or self.bits_total < 0:
            raise ValueError("counts must be nonnegative")
        if self.bit_errors > self.bits_total:
            raise ValueError("bit_errors exceeds bits_total")

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total if self.bits_total else 0.0

    @property
    def ci95_half_width(self) -> float:
        """Normal-approximation 95% half-width of the binomial proportion."""
        if not self.bits_total:
            return math.inf
        p = self.ber
        return Z95 * math.sqrt(p * (1.0 - p) / self.bits_total)

    @property
    def ci95(self) -> tuple[float, float]:
        h = self.ci95_half_width
        return max(0.0, self.ber - h), min(1.0, self.ber + h)

    def __add__(self, other: "BerStat") -> "BerStat":
        return BerStat(
            self.bit_errors + other.bit_errors, self.bits_total + other.bits_total
        )

    def overlaps(self, other: "BerStat") -> bool:
        lo, hi = self.ci95
        olo, ohi = other.ci95
        return lo <= ohi and olo <= hi


def ber(tx_bits, rx_bits) -> BerStat:
    tx = np.asarray(tx_bits).ravel()
    rx = np.asarray(rx_bits).ravel()
    if tx.shape != rx.shape:
        raise ValueError(
            f"bit streams differ in length: {tx.size} vs {rx.size}"
        )
    return BerStat(int(np.count_nonzero(tx != rx)), int(tx.size))
