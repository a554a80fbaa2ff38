"""System model: square-QAM constellations, Gray bit mapping, i.i.d. Rayleigh
channels, SNR bookkeeping and the complex-to-real transform.

Real-valued vectors are stacked ``[Re; Im]`` and the channel is expanded to
the matching block form ``[[Re H, -Im H], [Im H, Re H]]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np

__all__ = [
    "SUPPORTED_ORDERS",
    "SNR_CONVENTIONS",
    "Constellation",
    "MimoSystem",
    "RngStream",
    "build_constellation",
    "modulate",
    "demodulate",
    "slice_symbols",
    "complex_to_real_matrix",
    "complex_to_real_vector",
    "real_to_complex_vector",
    "generate_channel",
    "snr_to_noise_variance",
    "realize_system",
    "system_from_arrays",
]

SUPPORTED_ORDERS = (4, 16)

# "rx_antenna": SNR is the average received SNR per BS antenna, N_t / sigma_v^2.
# "per_user":   SNR is the per-user SNR after N_r-fold receive combining,
#               N_r / sigma_v^2.
SNR_CONVENTIONS = ("rx_antenna", "per_user")

# substream ids inside one RngStream
_BITS, _CHANNEL, _NOISE = 0, 1, 2


@dataclass(frozen=True)
class Constellation:
    M: int
    gamma: float
    alphabet: np.ndarray
    l: float
    bits_per_real_dim: int

    @property
    def levels(self) -> int:
        return len(self.alphabet)

    @cached_property
    def gray_labels(self) -> np.ndarray:
        """Bit label (as integer) of each alphabet entry, ascending amplitude."""
        idx = np.arange(self.levels)
        return idx ^ (idx >> 1)

    @cached_property
    def label_to_index(self) -> np.ndarray:
        inv = np.empty(self.levels, dtype=np.int64)
        inv[self.gray_labels] = np.arange(self.levels)
        return inv

    @cached_property
    def decision_thresholds(self) -> np.ndarray:
        return 0.5 * (self.alphabet[1:] + self.alphabet[:-1])

    def complex_points(self) -> np.ndarray:
        re, im = np.meshgrid(self.alphabet, self.alphabet, indexing="ij")
        return (re + 1j * im).ravel()


def build_constellation(M: int) -> Constellation:
    """Square M-QAM constellation with unit average complex-symbol energy."""
    if M not in SUPPORTED_ORDERS:
        raise ValueError(
            f"unsupported modulation order M={M}; supported: {SUPPORTED_ORDERS}"
        )
    side = math.isqrt(M)
    raw = np.arange(-side + 1, side, 2, dtype=float)
    # E|x|^2 = 2 * mean(raw^2) / gamma^2 == 1
    gamma = math.sqrt(2.0 * float(np.mean(raw**2)))
    alphabet = raw / gamma
    return Constellation(
        M=M,
        gamma=gamma,
        alphabet=alphabet,
        l=float(alphabet[-1]),
        bits_per_real_dim=int(math.log2(side)),
    )


def modulate(bits, c: Constellation, n_t: int) -> np.ndarray:
    """Map a bit vector onto the real-valued transmit vector (length 2*n_t).

    Consecutive groups of ``c.bits_per_real_dim`` bits (MSB first) select one
    Gray-labelled amplitude; groups ``0..n_t-1`` are in-phase components and
    ``n_t..2n_t-1`` quadrature components.
    """
    bits = np.asarray(bits).astype(np.int64).ravel()
    k = c.bits_per_real_dim
    if bits.size != 2 * n_t * k:
        raise ValueError(
            f"expected {2 * n_t * k} bits for n_t={n_t}, M={c.M}; got {bits.size}"
        )
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    groups = bits.reshape(2 * n_t, k)
    labels = groups @ (1 << np.arange(k - 1, -1, -1))
    return c.alphabet[c.label_to_index[labels]]


def demodulate(x_sliced, c: Constellation) -> np.ndarray:
    """Inverse of :func:`modulate` for alphabet-valued (sliced) vectors."""
    x = np.asarray(x_sliced, dtype=float).ravel()
    idx = np.searchsorted(c.decision_thresholds, x, side="left")
    labels = c.gray_labels[idx]
    k = c.bits_per_real_dim
    shifts = np.arange(k - 1, -1, -1)
    return ((labels[:, None] >> shifts) & 1).astype(np.int8).ravel()


def slice_symbols(x_real, c: Constellation) -> np.ndarray:
    """Nearest alphabet amplitude per real coordinate.

    A value exactly on a decision threshold goes to the more negative
    neighbour.
    """
    x = np.asarray(x_real, dtype=float)
    return c.alphabet[np.searchsorted(c.decision_thresholds, x, side="left")]


def complex_to_real_matrix(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h)
    return np.block([[h.real, -h.imag], [h.imag, h.real]])


def complex_to_real_vector(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag])


def real_to_complex_vector(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    n = v.size // 2
    return v[:n] + 1j * v[n:]


@dataclass(frozen=True)
class RngStream:
    """Deterministic random source keyed by (seed, stream_id).

    Independent substreams are derived through ``numpy.random.SeedSequence``
    so bits, channel and noise of one trial never depend on draw order or on
    which worker executes the trial.
    """

    seed: int
    stream_id: int = 0

    def generator(self, substream: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(
            self.seed, spawn_key=(self.stream_id, substream)
        )
        return np.random.Generator(np.random.PCG64(ss))


def generate_channel(n_t: int, n_r: int, rng: RngStream):
    """i.i.d. CN(0, 1) channel; returns ``(h_complex, h_real)``."""
    if n_t < 1 or n_r < 1:
        raise ValueError(f"antenna counts must be >= 1 (n_t={n_t}, n_r={n_r})")
    g = rng.generator(_CHANNEL)
    z = g.standard_normal((2, n_r, n_t)) * math.sqrt(0.5)
    h = z[0] + 1j * z[1]
    return h, complex_to_real_matrix(h)


def snr_to_noise_variance(
    snr_db: float, n_t: int, n_r: int | None = None, convention: str = "rx_antenna"
) -> tuple[float, float]:
    """Return ``(sigma_v2, sigma_r2)``: complex noise variance and its per-real-
    component half.

    ``rx_antenna``: sigma_v2 = n_t * 10**(-snr_db/10) (unit-energy symbols over a
    unit-variance channel give received power n_t per antenna).
    ``per_user``: sigma_v2 = n_r * 10**(-snr_db/10).
    """
    if convention == "rx_antenna":
        scale = n_t
    elif convention == "per_user":
        if n_r is None:
            raise ValueError("per_user SNR convention needs n_r")
        scale = n_r
    else:
        raise ValueError(
            f"unknown SNR convention {convention!r}; expected one of {SNR_CONVENTIONS}"
        )
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0, 0.0
    sigma_v2 = scale * 10.0 ** (-snr_db / 10.0)
    return sigma_v2, sigma_v2 / 2.0


@dataclass(frozen=True)
class MimoSystem:
    n_t: int
    n_r: int
    h_complex: np.ndarray
    h_real: np.ndarray
    x_true_real: np.ndarray
    y_real: np.ndarray
    noise_var_complex: float
    snr_db: float
    bits: np.ndarray | None = None
    noise_real: np.ndarray | None = None

    @property
    def y_complex(self) -> np.ndarray:
        return real_to_complex_vector(self.y_real)

    @property
    def x_true_complex(self) -> np.ndarray:
        return real_to_complex_vector(self.x_true_real)

    def residual_sq(self, x_real) -> float:
        r = self.y_real - self.h_real @ np.asarray(x_real, dtype=float)
        return float(r @ r)


def realize_system(
    n_t: int,
    n_r: int,
    c: Constellation,
    snr_db: float,
    rng: RngStream,
    *,
    convention: str = "rx_antenna",
    noiseless: bool = False,
    h_complex: np.ndarray | None = None,
) -> MimoSystem:
    """Draw bits, channel and noise for one fading block and form y = Hx + v.

    Noise is drawn as unit-variance samples and then scaled, so the same
    ``rng`` gives the same bits, channel and noise shape at every SNR.
    """
    if h_complex is None:
        h, h_real = generate_channel(n_t, n_r, rng)
    else:
        h = np.asarray(h_complex, dtype=complex)
        if h.shape != (n_r, n_t):
            raise ValueError(f"channel shape {h.shape} != ({n_r}, {n_t})")
        h_real = complex_to_real_matrix(h)
    bits = rng.generator(_BITS).integers(
        0, 2, size=2 * n_t * c.bits_per_real_dim, dtype=np.int8
    )
    x = modulate(bits, c, n_t)
    if noiseless:
        sigma_v2 = sigma_r2 = 0.0
    else:
        sigma_v2, sigma_r2 = snr_to_noise_variance(snr_db, n_t, n_r, convention)
    v = rng.generator(_NOISE).standard_normal(2 * n_r) * math.sqrt(sigma_r2)
    y = h_real @ x + v
    return MimoSystem(
        n_t=n_t,
        n_r=n_r,
        h_complex=h,
        h_real=h_real,
        x_true_real=x,
        y_real=y,
        noise_var_complex=sigma_v2,
        snr_db=math.inf if noiseless else snr_db,
        bits=bits,
        noise_real=v,
    )


def system_from_arrays(
    h_complex, x_true_real, noise_real=None, noise_var_complex: float = 0.0,
    snr_db: float = math.inf,
) -> MimoSystem:
    """Assemble a system from explicit arrays (fixed channels in tests, files)."""
    h = np.atleast_2d(np.asarray(h_complex, dtype=complex))
    n_r, n_t = h.shape
    h_real = complex_to_real_matrix(h)
    x = np.asarray(x_true_real, dtype=float)
    if x.shape != (2 * n_t,):
        raise ValueError(f"x_true_real must have length {2 * n_t}")
    v = np.zeros(2 * n_r) if noise_real is None else np.asarray(noise_real, float)
    return MimoSystem(
        n_t=n_t,
        n_r=n_r,
        h_complex=h,
        h_real=h_real,
        x_true_real=x,
        y_real=h_real @ x + v,
        noise_var_complex=noise_var_complex,
        snr_db=snr_db,
        noise_real=v,
    )
