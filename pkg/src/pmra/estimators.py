"""Finite-sample estimators: EM on the projected likelihood and moment least squares.

Estimators return raw estimates; orbit alignment against a ground truth is the
caller's business.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lm import LMResult, OptConfig, levenberg_marquardt
from .model import ObservationBatch, projection_operators
from .moments import (
    CosineMatrix,
    MomentKind,
    MomentSet,
    cosine_matrix,
    population_cosine_moments_batch,
    population_moments_batch,
    to_cosine,
)
from .signal import Signal

__all__ = [
    "EMConfig",
    "FitResult",
    "OptConfig",
    "em_fit",
    "fit_M",
    "fit_T",
    "random_starts",
]


@dataclass(frozen=True)
class EMConfig:
    starts: int = 5
    max_iters: int = 2000
    rel_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.starts < 1:
            raise ValueError("starts must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")


@dataclass
class FitResult:
    estimate: Signal
    objective: float
    iterations: int
    start_index: int
    diagnostics: list[float] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    start_objectives: list[float] = field(default_factory=list)
    start_traces: list[list[float]] = field(default_factory=list)


def random_starts(p: int, count: int, seed: int) -> np.ndarray:
    """Unit-norm standard Gaussian initializations, one row per start."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((count, p))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# --- EM ------------------------------------------------------------------


class _EMProblem:
    def __init__(self, y: np.ndarray, sigma: float):
        self.y = y
        self.n, self.q = y.shape
        self.p = 2 * self.q + 1
        self.sigma = sigma
        self.ops = projection_operators(self.p)  # (p, q, p)
        self.grams = np.einsum("lja,ljb->lab", self.ops, self.ops)  # (p, p, p)
        self.y_t = np.ascontiguousarray(y.T)
        self.const = -np.log(self.p) - 0.5 * self.q * np.log(2 * np.pi * sigma**2)

    def e_step(self, theta):
        """Responsibilities (n, p) and marginal log-likelihood at ``theta``."""
        X = self.ops @ theta  # (p, q)
        # (p, n) layout keeps the per-sample reductions over a short leading axis.
        # Squared distances are formed directly: expanding |y|^2 - 2<X, y> + |X|^2
        # cancels badly at small sigma and shows up as likelihood noise.
        diff = self.y_t[None, :, :] - X[:, :, None]  # (p, q, n)
        logits = np.einsum("ljn,ljn->ln", diff, diff)
        logits *= -0.5 / self.sigma**2
        top = logits.max(axis=0)
        w = np.exp(logits - top)
        total = w.sum(axis=0)
        w /= total
        # exactly rounded sum: the log-likelihood is large while late EM increments are tiny
        loglik = math.fsum(np.concatenate([top, np.log(total), [self.n * self.const]]))
        return w.T, loglik

    def normal_equations(self, w):
        """Per-sample normal matrix and right-hand side of the weighted least squares."""
        W = w.sum(axis=0)  # (p,)
        Ybar = w.T @ self.y  # (p, q)
        N = np.einsum("l,lab->ab", W, self.grams) / self.n
        b = np.einsum("lja,lj->a", self.ops, Ybar) / self.n
        return N, b

    def m_step(self, w, notes):
        N, b = self.normal_equations(w)
        try:
            if np.linalg.cond(N) > 1e12:
                raise np.linalg.LinAlgError
            return np.linalg.solve(N, b)
        except np.linalg.LinAlgError:
            lam = 1e-10 * np.trace(N)
            notes.append(f"tikhonov fallback lambda={lam:.3g}")
            return np.linalg.solve(N + lam * np.eye(self.p), b)


def em_normal_matrix(w: np.ndarray, p: int) -> np.ndarray:
    """Per-sample M-step normal matrix ``(1/n) sum_{i,l} w_il (Pi R_l)^T (Pi R_l)``."""
    ops = projection_operators(p)
    grams = np.einsum("lja,ljb->lab", ops, ops)
    return np.einsum("l,lab->ab", w.sum(axis=0), grams) / w.shape[0]


def em_responsibilities(batch: ObservationBatch, theta, sigma: float) -> np.ndarray:
    return _EMProblem(batch.samples, sigma).e_step(np.asarray(theta, dtype=float))[0]


def _em_single(prob: _EMProblem, theta0, cfg: EMConfig):
    theta = np.asarray(theta0, dtype=float)
    notes: list[str] = []
    w, ll = prob.e_step(theta)
    trace = [ll]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        new = prob.m_step(w, notes)
        change = np.linalg.norm(new - theta) / max(np.linalg.norm(theta), np.finfo(float).tiny)
        theta = new
        w, ll = prob.e_step(theta)
        trace.append(ll)
        if change < cfg.rel_tol:
            break
    return theta, ll, it, trace, notes


def em_fit(batch: ObservationBatch, sigma: float, cfg: EMConfig = EMConfig(), starts=None) -> FitResult:
    """EM for the projected-shift mixture; best start by final marginal log-likelihood.

    ``diagnostics`` holds the log-likelihood after each iteration of the
    winning start (index 0 is the initialization).
    """
    if sigma <= 0:
        raise ValueError("EM needs sigma > 0")
    prob = _EMProblem(batch.samples, float(sigma))
    inits = random_starts(prob.p, cfg.starts, cfg.seed) if starts is None else np.atleast_2d(starts)
    runs = [_em_single(prob, x0, cfg) for x0 in inits]
    lls = [run[1] for run in runs]
    best = int(np.argmax(lls))  # argmax keeps the lowest index on ties
    theta, ll, it, trace, notes = runs[best]
    return FitResult(Signal(theta), ll, it, best, trace, notes, lls, [run[3] for run in runs])


# --- moment least squares -------------------------------------------------


def _block_weights(blocks, notes) -> list[float]:
    out = []
    for d, b in enumerate(blocks, start=1):
        norm = float(np.linalg.norm(b))
        if norm == 0.0:
            notes.append(f"block {d} has zero norm; normalizer replaced by 1")
            norm = 1.0
        out.append(norm)
    return out


def _stacked_residual(model_fn, targets, norms):
    flat_targets = [t.ravel() / s for t, s in zip(targets, norms)]

    def residual(xs):
        blocks = model_fn(np.atleast_2d(xs))
        k = blocks[0].shape[0]
        return np.concatenate(
            [b.reshape(k, -1) / s - t for b, s, t in zip(blocks, norms, flat_targets)], axis=1
        )

    return residual


def _multistart(residual, p: int, cfg: OptConfig, starts) -> FitResult:
    inits = random_starts(p, cfg.starts, cfg.seed) if starts is None else np.atleast_2d(starts)
    runs: list[LMResult] = [levenberg_marquardt(residual, x0, cfg, vectorized=True) for x0 in inits]
    objs = [run.cost for run in runs]
    best = int(np.argmin(objs))
    run = runs[best]
    return FitResult(
        Signal(run.x), run.cost, run.iterations, best, run.trace, [run.status], objs, [r.trace for r in runs]
    )


def _check_kind(moments: MomentSet):
    if moments.kind is MomentKind.RAW:
        raise ValueError("moment fitting expects debiased (or population) moments")


def t_objective_fn(moments: MomentSet):
    """Residual map for the block-normalized projected-moment misfit."""
    _check_kind(moments)
    notes: list[str] = []
    targets = moments.blocks()
    return _stacked_residual(population_moments_batch, targets, _block_weights(targets, notes)), notes


def m_objective_fn(moments: MomentSet, cm: CosineMatrix | None = None):
    """Residual map for the misfit with cosine-coordinate second and third blocks."""
    _check_kind(moments)
    cos = to_cosine(moments, cm or cosine_matrix(moments.p))
    notes: list[str] = []
    targets = (moments.t1, cos.m2, cos.m3)
    return (
        _stacked_residual(population_cosine_moments_batch, targets, _block_weights(targets, notes)),
        notes,
    )


def fit_T(moments: MomentSet, cfg: OptConfig = OptConfig(), starts=None) -> FitResult:
    residual, notes = t_objective_fn(moments)
    result = _multistart(residual, moments.p, cfg, starts)
    result.notes = notes + result.notes
    return result


def fit_M(moments: MomentSet, cm: CosineMatrix | None = None, cfg: OptConfig = OptConfig(), starts=None) -> FitResult:
    residual, notes = m_objective_fn(moments, cm)
    result = _multistart(residual, moments.p, cfg, starts)
    result.notes = notes + result.notes
    return result


def objective(residual_fn, theta) -> float:
    r = residual_fn(np.asarray(theta, dtype=float)[None, :])[0]
    return float(r @ r)
