"""Levenberg-Marquardt with finite-difference Jacobians."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

_SQRT_EPS = np.sqrt(np.finfo(float).eps)


@dataclass(frozen=True)
class OptConfig:
    starts: int = 20
    max_iters: int = 300
    max_fun_evals: int = 3000
    fun_tol: float = 1e-10
    step_tol: float = 1e-10
    seed: int = 0
    jacobian: Literal["forward-difference", "central-difference"] = "forward-difference"

    def __post_init__(self):
        if self.starts < 1:
            raise ValueError("starts must be >= 1")
        if min(self.fun_tol, self.step_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.jacobian not in ("forward-difference", "central-difference"):
            raise ValueError(f"unknown jacobian scheme {self.jacobian!r}")


@dataclass
class LMResult:
    x: np.ndarray
    cost: float  # sum of squared residuals
    iterations: int
    nfev: int
    status: str
    trace: list[float] = field(default_factory=list)


class _Counted:
    """Wraps the residual function, counting point evaluations."""

    def __init__(self, fun, vectorized: bool):
        self.fun = fun
        self.vectorized = vectorized
        self.nfev = 0

    def one(self, x):
        self.nfev += 1
        if self.vectorized:
            return np.asarray(self.fun(x[None, :]), dtype=float)[0]
        return np.asarray(self.fun(x), dtype=float)

    def many(self, xs):
        self.nfev += xs.shape[0]
        if self.vectorized:
            return np.asarray(self.fun(xs), dtype=float)
        return np.stack([np.asarray(self.fun(x), dtype=float) for x in xs])


def _jacobian(f: _Counted, x, r, scheme):
    h = _SQRT_EPS * (1.0 + np.abs(x))
    steps = np.diag(h)
    if scheme == "central-difference":
        rp = f.many(x + steps)
        rm = f.many(x - steps)
        return ((rp - rm) / (2.0 * h[:, None])).T
    rp = f.many(x + steps)
    return ((rp - r) / h[:, None]).T


def levenberg_marquardt(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    x0,
    cfg: OptConfig = OptConfig(),
    vectorized: bool = False,
) -> LMResult:
    """Minimize ``||residual_fn(x)||^2`` by damped Gauss-Newton.

    With ``vectorized=True`` the residual function takes a (k, n) stack of
    points and returns a (k, m) stack; Jacobian columns are then evaluated
    in one call. Every point counts as one evaluation against
    ``cfg.max_fun_evals``.
    """
    f = _Counted(residual_fn, vectorized)
    x = np.array(x0, dtype=float)
    r = f.one(x)
    if not np.all(np.isfinite(r)):
        raise FloatingPointError("residual is not finite at the starting point")
    cost = float(r @ r)
    trace = [cost]
    if cost == 0.0:
        return LMResult(x, cost, 0, f.nfev, "zero-residual", trace)

    n = x.size
    jac_cost = 2 * n if cfg.jacobian == "central-difference" else n
    lam = None
    status = "max-iters"
    it = 0
    while it < cfg.max_iters:
        if f.nfev + jac_cost + 1 > cfg.max_fun_evals:
            status = "max-fun-evals"
            break
        J = _jacobian(f, x, r, cfg.jacobian)
        g = J.T @ r
        H = J.T @ J
        if lam is None:
            lam = 1e-3 * float(np.max(np.diag(H))) or 1e-3
        it += 1
        accepted = False
        while True:
            try:
                step = -np.linalg.solve(H + lam * np.eye(n), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + step
            r_new = f.one(x_new)
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new < cost:
                accepted = True
                lam /= 10.0
                break
            lam *= 10.0
            if np.linalg.norm(step) <= cfg.step_tol * (cfg.step_tol + np.linalg.norm(x)):
                break
            if f.nfev >= cfg.max_fun_evals:
                break
        if not accepted:
            status = "step-tol" if f.nfev < cfg.max_fun_evals else "max-fun-evals"
            break
        decrease = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        trace.append(cost)
        if cost == 0.0 or decrease <= cfg.fun_tol * cost_new:
            status = "fun-tol"
            break
        if np.linalg.norm(step) <= cfg.step_tol * (cfg.step_tol + np.linalg.norm(x)):
            status = "step-tol"
            break
    return LMResult(x, cost, it, f.nfev, status, trace)
