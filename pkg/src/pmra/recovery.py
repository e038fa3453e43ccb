"""Constructive orbit recovery from the first three projected moments.

Pipeline: mean coefficient from the first moment, Fourier magnitudes from the
diagonal of the second cosine moment, chain and consistency cosines from
selected third cosine moments, then a sequential sign-branch resolution (one
four-way decision and one binary decision per later sign, never 2^q), the
anchor phase from the terminal chain relation, and phase propagation.

Frequencies are 1-based in names and docstrings (``c_1..c_q``); arrays are
0-based, so ``c[j - 1]`` holds ``c_j``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .moments import (
    CosineMomentSet,
    MomentKind,
    MomentSet,
    cosine_matrix,
    mean_coefficient,
    population_moments_batch,
    to_cosine,
)
from .signal import Signal, SpectralForm

log = logging.getLogger(__name__)

CLAMP_SILENT = 1e-9
DEFAULT_R_MIN = 1e-8
DEFAULT_SEPARATION = 1e-3


class RecoveryError(ValueError):
    pass


@dataclass
class RecoveryTrace:
    q: int
    c: np.ndarray
    beta: np.ndarray
    d: np.ndarray  # d_2..d_{q-2}; d[0] is d_2
    d_star: float
    eps: np.ndarray | None = None
    anchor_candidates: np.ndarray | None = None
    degenerate_flags: np.ndarray = None  # per frequency, True where a genericity condition fails numerically
    clamps: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    # (step label, winning residual, best losing residual) per sign decision
    decisions: list[tuple[str, float, float]] = field(default_factory=list)
    quadruple_decisions: int = 0
    binary_decisions: int = 0
    candidate_residuals: np.ndarray | None = None

    def __post_init__(self):
        if self.degenerate_flags is None:
            self.degenerate_flags = np.zeros(self.q, dtype=bool)

    @property
    def degenerate(self) -> bool:
        return bool(np.any(self.degenerate_flags))

    def d_value(self, j: int) -> float:
        """Consistency cosine ``d_j`` for 2 <= j <= q-2."""
        return float(self.d[j - 2])


def recover_mean(m: MomentSet) -> float:
    return mean_coefficient(m.t1)


def recover_magnitudes(cm: CosineMomentSet) -> np.ndarray:
    """``r_k = sqrt(max(M2[k, k], 0) / 2)``."""
    diag = np.diag(cm.m2)
    scale = np.linalg.norm(cm.m2)
    if np.any(diag < -1e-6 * scale):
        k = int(np.argmin(diag)) + 1
        raise RecoveryError(
            f"second cosine moment has a strongly negative diagonal at frequency {k} ({diag[k - 1]:.3g})"
        )
    return np.sqrt(np.maximum(diag, 0.0) / 2.0)


def _clamp(x: float, name: str, trace_clamps: dict, warnings: list) -> float:
    if -1.0 <= x <= 1.0:
        return float(x)
    excess = abs(x) - 1.0
    if excess > CLAMP_SILENT:
        trace_clamps[name] = excess
        warnings.append(f"{name} = {x:.6g} clamped into [-1, 1]")
    return float(np.clip(x, -1.0, 1.0))


def extract_cosines(
    cm: CosineMomentSet,
    r: np.ndarray,
    r_min: float = DEFAULT_R_MIN,
    separation: float = DEFAULT_SEPARATION,
) -> RecoveryTrace:
    """Chain cosines ``c_j``, angles ``beta_j`` and consistency cosines ``d_j``, ``d_*``."""
    q = cm.q
    r = np.asarray(r, dtype=float)
    if q < 3:
        raise RecoveryError("recovery needs p >= 7")
    small = np.flatnonzero(r <= r_min)
    if small.size:
        k = int(small[0]) + 1
        raise RecoveryError(
            f"Fourier magnitude at frequency {k} is {r[k - 1]:.3g}, below the floor {r_min:.3g}; "
            "recovery requires every nonzero frequency to be present"
        )
    m3 = cm.m3
    clamps: dict[str, float] = {}
    warnings: list[str] = []

    c = np.empty(q)
    for j in range(1, q):
        c[j - 1] = m3[0, j - 1, j] / (2 * r[0] * r[j - 1] * r[j])
    c[q - 1] = m3[0, q - 1, q - 1] / (2 * r[0] * r[q - 1] ** 2)
    c = np.array([_clamp(x, f"c_{j + 1}", clamps, warnings) for j, x in enumerate(c)])

    d = np.array(
        [
            _clamp(m3[1, j - 1, j + 1] / (2 * r[1] * r[j - 1] * r[j + 1]), f"d_{j}", clamps, warnings)
            for j in range(2, q - 1)
        ]
    )
    d_star = _clamp(m3[1, q - 2, q - 1] / (2 * r[1] * r[q - 2] * r[q - 1]), "d_star", clamps, warnings)

    beta = np.arccos(c)
    trace = RecoveryTrace(q=q, c=c, beta=beta, d=d, d_star=d_star, clamps=clamps, warnings=warnings)
    # beta_j must stay away from multiples of pi
    trace.degenerate_flags |= np.abs(np.sin(beta)) < separation
    return trace


def consistency_residual(trace: RecoveryTrace, e1: int, e_prev: int, e_next: int, j_prev: int, target: float) -> float:
    """``|cos(-e1 b_1 + e_prev b_{j_prev} + e_next b_{j_prev+1}) - target|``."""
    b = trace.beta
    angle = -e1 * b[0] + e_prev * b[j_prev - 1] + e_next * b[j_prev]
    return abs(np.cos(angle) - target)


def resolve_sign_branch(trace: RecoveryTrace, separation: float = DEFAULT_SEPARATION) -> np.ndarray:
    """Sequentially resolve the sign branch with ``eps_1 = +1``.

    The base step picks ``(eps_2, eps_3)`` among four pairs using ``d_2``
    (or ``d_*`` when q = 3). Each later sign is one binary choice against
    ``d_{m-1}`` and finally ``d_*``. A decision whose winning and losing
    residuals differ by less than ``separation`` flags the sign it fixed.
    """
    q = trace.q
    eps = np.zeros(q, dtype=int)
    eps[0] = 1
    trace.decisions = []
    trace.quadruple_decisions = 0
    trace.binary_decisions = 0

    base_target = trace.d_star if q == 3 else trace.d_value(2)
    pairs = list(itertools.product((1, -1), repeat=2))
    res = np.array([consistency_residual(trace, 1, e2, e3, 2, base_target) for e2, e3 in pairs])
    order = np.argsort(res, kind="stable")
    eps[1], eps[2] = pairs[order[0]]
    trace.quadruple_decisions += 1
    trace.decisions.append(("base", float(res[order[0]]), float(res[order[1]])))
    if res[order[1]] - res[order[0]] < separation:
        trace.degenerate_flags[1:3] = True

    for m in range(4, q + 1):
        target = trace.d_star if m == q else trace.d_value(m - 1)
        r_plus = consistency_residual(trace, 1, eps[m - 2], 1, m - 1, target)
        r_minus = consistency_residual(trace, 1, eps[m - 2], -1, m - 1, target)
        eps[m - 1] = 1 if r_plus <= r_minus else -1
        win, lose = min(r_plus, r_minus), max(r_plus, r_minus)
        trace.binary_decisions += 1
        trace.decisions.append((f"eps_{m}", float(win), float(lose)))
        if lose - win < separation:
            trace.degenerate_flags[m - 1] = True

    trace.eps = eps
    return eps


def recover_anchor(trace: RecoveryTrace, p: int | None = None) -> np.ndarray:
    """The p admissible values of ``phi_1`` from ``p phi_1 = 2 sum_{t<q} eps_t beta_t + eps_q beta_q``."""
    if trace.eps is None:
        raise RecoveryError("sign branch not resolved")
    q = trace.q
    p = p or 2 * q + 1
    eb = trace.eps * trace.beta
    base = (2.0 * eb[:-1].sum() + eb[-1]) / p
    cands = np.mod(base + 2.0 * np.pi * np.arange(p) / p, 2.0 * np.pi)
    trace.anchor_candidates = cands
    return cands


def propagate_phases(anchor: float, trace: RecoveryTrace) -> np.ndarray:
    """``phi_k = k * anchor - sum_{t<k} eps_t beta_t`` mod 2 pi."""
    if trace.eps is None:
        raise RecoveryError("sign branch not resolved")
    k = np.arange(1, trace.q + 1)
    partial = np.concatenate([[0.0], np.cumsum(trace.eps * trace.beta)[:-1]])
    return np.mod(k * anchor - partial, 2.0 * np.pi)


def block_residual(t_model, t_target) -> float:
    """Block-normalized squared moment misfit ``sum_d ||T_d - T~_d||^2 / ||T~_d||^2``.

    ``t_model`` blocks may carry a leading batch axis; a vector is returned then.
    """
    total = 0.0
    for model, target in zip(t_model, t_target):
        norm2 = float(np.sum(target**2)) or 1.0
        diff = model - target
        axes = tuple(range(diff.ndim - target.ndim, diff.ndim))
        total = total + np.sum(diff**2, axis=axes) / norm2
    return total


def reconstruct(
    m: MomentSet,
    r_min: float = DEFAULT_R_MIN,
    separation: float = DEFAULT_SEPARATION,
    sanity_ceiling: float = 1e-2,
) -> tuple[Signal, RecoveryTrace]:
    """Run the full recovery on population or debiased empirical moments.

    All p anchor candidates are reconstructed; the one with the smallest
    block-normalized moment residual against ``m`` is returned (lowest index
    on ties). On population input every candidate is an orbit member.
    """
    if m.kind is MomentKind.RAW:
        raise RecoveryError("raw empirical moments must be debiased first")
    p = m.p
    mean = recover_mean(m)
    cm = to_cosine(m, cosine_matrix(p))
    r = recover_magnitudes(cm)
    trace = extract_cosines(cm, r, r_min=r_min, separation=separation)
    resolve_sign_branch(trace, separation=separation)
    anchors = recover_anchor(trace, p)

    candidates = np.stack(
        [SpectralForm(p, mean, r, propagate_phases(a, trace)).to_signal().values for a in anchors]
    )
    residuals = np.atleast_1d(block_residual(population_moments_batch(candidates), m.blocks()))
    trace.candidate_residuals = residuals
    best = int(np.argmin(residuals))
    if residuals[best] > sanity_ceiling:
        msg = f"best candidate moment residual {residuals[best]:.3g} exceeds {sanity_ceiling:.3g}"
        trace.warnings.append(msg)
        log.debug(msg)
    return Signal(candidates[best]), trace
