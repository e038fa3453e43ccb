"""Projected observation model ``y = Pi(R_l theta) + xi``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import as_array, check_p


@dataclass(frozen=True)
class ObservationBatch:
    """Noisy projected samples. Latent shifts are deliberately not kept."""

    samples: np.ndarray  # (n, q)
    sigma: float
    seed: int

    def __post_init__(self):
        y = np.array(self.samples, dtype=float)
        if y.ndim != 2 or y.shape[0] < 1:
            raise ValueError("samples must be a nonempty (n, q) array")
        check_p(2 * y.shape[1] + 1)
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        y.setflags(write=False)
        object.__setattr__(self, "samples", y)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def q(self) -> int:
        return self.samples.shape[1]

    @property
    def p(self) -> int:
        return 2 * self.samples.shape[1] + 1


def project(v) -> np.ndarray:
    """``(Pi v)[j] = v[j] + v[-j]`` for j = 1..q (returned at positions 0..q-1)."""
    v = np.asarray(v, dtype=float)
    q = (v.shape[-1] - 1) // 2
    return v[..., 1 : q + 1] + v[..., :q:-1][..., :q]


def projected_orbit(s) -> np.ndarray:
    """(p, q) array with row l equal to ``X_l = Pi(R_l s)``."""
    v = as_array(s)
    p = v.size
    q = (p - 1) // 2
    j = np.arange(1, q + 1)
    ell = np.arange(p)[:, None]
    return v[(j - ell) % p] + v[(-j - ell) % p]


def projected_orbit_batch(thetas: np.ndarray) -> np.ndarray:
    """``projected_orbit`` for a stack of signals: (B, p) -> (B, p, q)."""
    thetas = np.asarray(thetas, dtype=float)
    p = thetas.shape[-1]
    q = (p - 1) // 2
    j = np.arange(1, q + 1)
    ell = np.arange(p)[:, None]
    return thetas[..., (j - ell) % p] + thetas[..., (-j - ell) % p]


def projected_orbit_sample(s, ell: int) -> np.ndarray:
    v = as_array(s)
    if not 0 <= ell < v.size:
        raise ValueError(f"shift must lie in [0, {v.size}), got {ell}")
    return project(np.roll(v, ell))


def projection_operators(p: int) -> np.ndarray:
    """(p, q, p) stack of the linear maps ``Pi R_l``."""
    check_p(p)
    q = (p - 1) // 2
    ops = np.zeros((p, q, p))
    j = np.arange(q)
    for ell in range(p):
        ops[ell, j, (j + 1 - ell) % p] += 1.0
        ops[ell, j, (-(j + 1) - ell) % p] += 1.0
    return ops


def generate(s, n: int, sigma: float, seed: int) -> ObservationBatch:
    """Draw n projected samples with uniform shifts and N(0, sigma^2 I_q) noise.

    Randomness comes from a Philox counter-based generator keyed by ``seed``.
    Shifts are drawn first (``Generator.integers``), then the noise block in
    row-major order (``Generator.standard_normal``, numpy's ziggurat). The same
    ``(s, n, sigma, seed)`` therefore always yields the same batch.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    X = projected_orbit(s)
    p, q = X.shape
    rng = np.random.Generator(np.random.Philox(key=int(seed) % 2**64))
    shifts = rng.integers(0, p, size=n)
    noise = rng.standard_normal((n, q))
    return ObservationBatch(X[shifts] + sigma * noise, float(sigma), int(seed))

