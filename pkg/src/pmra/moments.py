"""Moment tensors of projected samples and their Fourier-cosine counterparts.

Third-order tensors are stored dense, (q, q, q); q stays small in practice.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import ObservationBatch, projected_orbit, projected_orbit_batch
from .signal import as_array, check_p


class MomentKind(str, enum.Enum):
    POPULATION = "population"
    RAW = "raw-empirical"
    DEBIASED = "debiased-empirical"


class MomentError(ValueError):
    pass


@dataclass(frozen=True)
class MomentSet:
    t1: np.ndarray
    t2: np.ndarray
    t3: np.ndarray
    kind: MomentKind

    @property
    def q(self) -> int:
        return self.t1.shape[0]

    @property
    def p(self) -> int:
        return 2 * self.t1.shape[0] + 1

    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.t1, self.t2, self.t3


@dataclass(frozen=True)
class CosineMomentSet:
    t1_projected: np.ndarray
    m2: np.ndarray
    m3: np.ndarray

    @property
    def q(self) -> int:
        return self.t1_projected.shape[0]

    @property
    def p(self) -> int:
        return 2 * self.t1_projected.shape[0] + 1


@dataclass(frozen=True)
class CosineMatrix:
    """``A[j, k] = 2 cos(2 pi j k / p)`` for 1 <= j, k <= q, with its inverse."""

    p: int
    a: np.ndarray
    a_inv: np.ndarray

    @property
    def q(self) -> int:
        return self.a.shape[0]

    def condition_number(self) -> float:
        s = np.linalg.svd(self.a, compute_uv=False)
        return float(s[0] / s[-1])


@lru_cache(maxsize=None)
def cosine_matrix(p: int) -> CosineMatrix:
    p = check_p(p)
    q = (p - 1) // 2
    k = np.arange(1, q + 1)
    a = 2.0 * np.cos(2.0 * np.pi * np.outer(k, k) / p)
    a_inv = np.linalg.solve(a, np.eye(q))
    if np.max(np.abs(a @ a_inv - np.eye(q))) >= 1e-10:
        raise ArithmeticError(f"cosine matrix inverse inaccurate for p={p}")
    a.setflags(write=False)
    a_inv.setflags(write=False)
    return CosineMatrix(p, a, a_inv)


def _outer3(x: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...j,...k->...ijk", x, x, x)


def _tensor_moments(X: np.ndarray):
    """Averages of X^{(x)d}, d = 1..3, over the second-to-last axis."""
    m = X.shape[-2]
    t1 = X.mean(axis=-2)
    t2 = np.einsum("...li,...lj->...ij", X, X) / m
    t3 = np.einsum("...li,...lj,...lk->...ijk", X, X, X) / m
    return t1, t2, t3


def population_moments(s) -> MomentSet:
    """Exact averages of ``X_l^{(x)d}`` over all p shifts, d = 1, 2, 3."""
    return MomentSet(*_tensor_moments(projected_orbit(s)), MomentKind.POPULATION)


def population_moments_batch(thetas: np.ndarray):
    """(t1, t2, t3) for a (B, p) stack of signals, each with a leading batch axis."""
    return _tensor_moments(projected_orbit_batch(thetas))


class MomentAccumulator:
    """Single-pass sums of y, y(x)y and y(x)y(x)y. Partial accumulators merge by addition."""

    def __init__(self, q: int):
        self.q = q
        self.count = 0
        self.s1 = np.zeros(q)
        self.s2 = np.zeros((q, q))
        self.s3 = np.zeros((q, q, q))

    def add(self, y: np.ndarray) -> MomentAccumulator:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if y.shape[1] != self.q:
            raise MomentError(f"expected samples of length {self.q}, got {y.shape[1]}")
        self.count += y.shape[0]
        self.s1 += y.sum(axis=0)
        self.s2 += y.T @ y
        self.s3 += np.einsum("ni,nj,nk->ijk", y, y, y)
        return self

    def merge(self, other: MomentAccumulator) -> MomentAccumulator:
        if other.q != self.q:
            raise MomentError("cannot merge accumulators of different dimension")
        out = MomentAccumulator(self.q)
        out.count = self.count + other.count
        out.s1 = self.s1 + other.s1
        out.s2 = self.s2 + other.s2
        out.s3 = self.s3 + other.s3
        return out

    def moments(self) -> MomentSet:
        if self.count == 0:
            raise MomentError("no samples accumulated")
        n = self.count
        return MomentSet(self.s1 / n, self.s2 / n, self.s3 / n, MomentKind.RAW)


def empirical_moments(batch: ObservationBatch | np.ndarray, chunk: int = 4096) -> MomentSet:
    """Raw empirical moments ``(1/n) sum_i y_i^{(x)d}``, accumulated chunkwise."""
    y = batch.samples if isinstance(batch, ObservationBatch) else np.atleast_2d(batch)
    acc = MomentAccumulator(y.shape[1])
    for start in range(0, y.shape[0], chunk):
        acc.add(y[start : start + chunk])
    return acc.moments()


def debias(raw: MomentSet, sigma: float) -> MomentSet:
    """Subtract the Gaussian noise contribution from raw second and third moments."""
    if raw.kind is not MomentKind.RAW:
        raise MomentError(f"debias expects raw empirical moments, got {raw.kind.value}")
    s2 = float(sigma) ** 2
    mu = raw.t1
    eye = np.eye(raw.q)
    correction = (
        np.einsum("a,bc->abc", mu, eye)
        + np.einsum("b,ac->abc", mu, eye)
        + np.einsum("c,ab->abc", mu, eye)
    )
    return MomentSet(raw.t1.copy(), raw.t2 - s2 * eye, raw.t3 - s2 * correction, MomentKind.DEBIASED)


def centered(m: MomentSet) -> tuple[np.ndarray, np.ndarray]:
    """Central second and third moments about the mean vector ``t1``."""
    mu = m.t1
    c2 = m.t2 - np.outer(mu, mu)
    mu_t2 = np.einsum("a,bc->abc", mu, m.t2)
    c3 = (
        m.t3
        - mu_t2
        - mu_t2.transpose(1, 0, 2)
        - mu_t2.transpose(1, 2, 0)
        + 2.0 * _outer3(mu)
    )
    return c2, c3


def mean_coefficient(t1: np.ndarray) -> float:
    """Zero-frequency DFT coefficient from the first moment, ``(sqrt(p)/2) * mean(t1)``."""
    p = 2 * t1.shape[-1] + 1
    return float(np.sqrt(p) / 2.0 * np.mean(t1))


def to_cosine(moments: MomentSet, cm: CosineMatrix | None = None) -> CosineMomentSet:
    """Center and map each tensor mode through ``sqrt(p) A^{-1}``."""
    if moments.kind is MomentKind.RAW:
        raise MomentError("raw empirical moments must be debiased before the cosine transfer")
    cm = cm or cosine_matrix(moments.p)
    if cm.q != moments.q:
        raise MomentError(f"cosine matrix has q={cm.q}, moments have q={moments.q}")
    t1 = moments.t1
    if moments.kind is MomentKind.POPULATION:
        # scale by a first-order quantity that stays meaningful when the mean vanishes
        scale = max(np.linalg.norm(t1), np.sqrt(np.linalg.norm(moments.t2)), np.finfo(float).tiny)
        if np.max(np.abs(t1 - t1.mean())) >= 1e-9 * scale:
            raise MomentError("population first moment is not a multiple of the ones vector")
    c2, c3 = centered(moments)
    B = np.sqrt(cm.p) * cm.a_inv
    m2 = B @ c2 @ B.T
    m3 = np.einsum("ai,bj,ck,ijk->abc", B, B, B, c3, optimize=True)
    return CosineMomentSet(t1.copy(), m2, m3)


def cosine_coefficients(s) -> np.ndarray:
    """(p, q) array with ``C[l, k-1] = 2 Re(theta_hat[k] exp(-2 pi i k l / p))``."""
    v = as_array(s)
    return _cosine_coefficients(v[None, :])[0]


def _cosine_coefficients(thetas: np.ndarray) -> np.ndarray:
    p = thetas.shape[-1]
    q = (p - 1) // 2
    h = np.fft.fft(thetas, axis=-1, norm="ortho")[..., 1 : q + 1]
    k = np.arange(1, q + 1)
    ell = np.arange(p)[:, None]
    phase = np.exp(-2j * np.pi * k * ell / p)  # (p, q)
    return 2.0 * np.real(h[..., None, :] * phase)


def population_cosine_moments(s) -> CosineMomentSet:
    """Direct averages of ``C_l^{(x)d}`` over the p shifts."""
    v = as_array(s)
    t1, m2, m3 = population_cosine_moments_batch(v[None, :])
    return CosineMomentSet(t1[0], m2[0], m3[0])


def population_cosine_moments_batch(thetas: np.ndarray):
    """(t1_projected, m2, m3) for a (B, p) stack of signals."""
    thetas = np.asarray(thetas, dtype=float)
    p = thetas.shape[-1]
    q = (p - 1) // 2
    C = _cosine_coefficients(thetas)
    mean = np.fft.fft(thetas, axis=-1, norm="ortho")[..., 0].real
    t1 = (2.0 / np.sqrt(p)) * mean[..., None] * np.ones(q)
    _, m2, m3 = _tensor_moments(C)
    return t1, m2, m3
