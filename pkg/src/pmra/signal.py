"""Real signals on an odd cyclic grid and the dihedral group acting on them.

Index ``m`` of a length-``p`` array holds the value at residue ``m mod p``;
negative residues are reached through modular arithmetic (``-j -> p - j``).
The group element ``(shift=l, reflected=b)`` acts as ``R_l J^b``: reflect
first, then shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

MIN_P = 7


class DimensionError(ValueError):
    """Raised for invalid grid sizes or mismatched signal lengths."""


def check_p(p: int) -> int:
    p = int(p)
    if p % 2 == 0 or p < MIN_P:
        raise DimensionError(f"grid size must be odd and >= {MIN_P}, got {p}")
    return p


@dataclass(frozen=True)
class Signal:
    """A finite real vector on Z/p with p odd and at least 7."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        check_p(v.size)
        if not np.all(np.isfinite(v)):
            raise ValueError("signal values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def p(self) -> int:
        return self.values.size

    @property
    def q(self) -> int:
        return (self.values.size - 1) // 2

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    def __len__(self) -> int:
        return self.p

    def __repr__(self) -> str:
        return f"Signal(p={self.p}, values={np.array2string(self.values, precision=4)})"


def as_array(s) -> np.ndarray:
    """Values of ``s`` as a float vector, validating the grid size."""
    v = np.asarray(s, dtype=float).reshape(-1)
    check_p(v.size)
    return v


def dft(s) -> np.ndarray:
    """Unitary DFT: ``x_hat[k] = p**-0.5 * sum_n x[n] exp(-2j*pi*k*n/p)``."""
    return np.fft.fft(np.asarray(s, dtype=float), norm="ortho")


def idft(x_hat) -> np.ndarray:
    return np.fft.ifft(np.asarray(x_hat, dtype=complex), norm="ortho")


@dataclass(frozen=True)
class SpectralForm:
    """Polar Fourier data: ``x_hat[0] = mean`` and ``x_hat[k] = r_k e^{i phi_k}`` for k=1..q."""

    p: int
    mean: float
    magnitudes: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        check_p(self.p)
        q = (self.p - 1) // 2
        r = np.asarray(self.magnitudes, dtype=float)
        phi = np.mod(np.asarray(self.phases, dtype=float), 2 * np.pi)
        if r.shape != (q,) or phi.shape != (q,):
            raise DimensionError(f"expected {q} magnitudes and phases")
        if np.any(r < 0):
            raise ValueError("magnitudes must be nonnegative")
        object.__setattr__(self, "magnitudes", r)
        object.__setattr__(self, "phases", phi)

    @classmethod
    def from_signal(cls, s) -> SpectralForm:
        v = as_array(s)
        q = (v.size - 1) // 2
        h = dft(v)
        return cls(v.size, float(h[0].real), np.abs(h[1 : q + 1]), np.angle(h[1 : q + 1]))

    def coefficients(self) -> np.ndarray:
        """Full conjugate-symmetric spectrum of length p."""
        h = np.zeros(self.p, dtype=complex)
        h[0] = self.mean
        half = self.magnitudes * np.exp(1j * self.phases)
        h[1 : len(half) + 1] = half
        h[: len(half) : -1] = np.conj(half)
        return h

    def to_signal(self) -> Signal:
        return Signal(idft(self.coefficients()).real)


@dataclass(frozen=True)
class DihedralElement:
    """The group element ``R_shift J^reflected`` of D_2p."""

    shift: int
    reflected: bool = False

    def compose(self, other: DihedralElement, p: int) -> DihedralElement:
        """``self * other``, i.e. act with ``other`` first.

        Uses ``J R_c = R_{-c} J``.
        """
        c = -other.shift if self.reflected else other.shift
        return DihedralElement((self.shift + c) % p, self.reflected != other.reflected)

    def inverse(self, p: int) -> DihedralElement:
        if self.reflected:
            return DihedralElement(self.shift % p, True)
        return DihedralElement((-self.shift) % p, False)


def group_elements(p: int) -> Iterator[DihedralElement]:
    """All 2p elements, unreflected shifts first."""
    for reflected in (False, True):
        for shift in range(p):
            yield DihedralElement(shift, reflected)


def shift(s, ell: int) -> np.ndarray:
    """``(R_l x)[m] = x[m - l]``."""
    return np.roll(np.asarray(s, dtype=float), ell)


def reflect(s) -> np.ndarray:
    """``(J x)[m] = x[-m]``."""
    v = np.asarray(s, dtype=float)
    return np.roll(v[::-1], 1)


def apply(g: DihedralElement, s) -> Signal:
    v = as_array(s)
    if g.reflected:
        v = reflect(v)
    return Signal(shift(v, g.shift))


def orbit_matrix(s) -> np.ndarray:
    """(2p, p) array whose rows are the orbit members in ``group_elements`` order."""
    v = as_array(s)
    p = v.size
    idx = (np.arange(p)[None, :] - np.arange(p)[:, None]) % p
    return np.concatenate([v[idx], reflect(v)[idx]])


def orbit(s) -> list[Signal]:
    """The 2p images of ``s`` under D_2p (not deduplicated)."""
    return [Signal(row) for row in orbit_matrix(s)]


def orbit_distance(a, b) -> float:
    """``min_g ||a - g.b||_2`` over the dihedral group."""
    va, vb = as_array(a), as_array(b)
    if va.size != vb.size:
        raise DimensionError(f"signal lengths differ: {va.size} vs {vb.size}")
    return float(np.min(np.linalg.norm(orbit_matrix(vb) - va, axis=1)))


def align(estimate, reference) -> tuple[Signal, DihedralElement]:
    """Orbit member of ``estimate`` closest to ``reference`` and the element producing it."""
    ve, vr = as_array(estimate), as_array(reference)
    if ve.size != vr.size:
        raise DimensionError(f"signal lengths differ: {ve.size} vs {vr.size}")
    members = orbit_matrix(ve)
    i = int(np.argmin(np.linalg.norm(members - vr, axis=1)))
    return Signal(members[i]), list(group_elements(ve.size))[i]
