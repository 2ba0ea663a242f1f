"""Objective functions with closed-form or finite-difference derivatives.

Built-ins cover the two desk problems: a pure quadratic and a quadratic
with trigonometric terms that break its symmetry, plus a general
positive-definite quadratic form.  User objectives are supplied as
evaluators via this module's `Objective`; there is no expression parser.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Objective",
    "quadratic_1d",
    "trig_quadratic_1d",
    "quadratic_nd",
    "builtin_objective",
    "grad_check",
    "bisect_root",
]


def _fd_step(theta: np.ndarray, h: float | None) -> float:
    # balances truncation and rounding for smooth objectives in double precision
    if h is not None:
        return h
    return 1e-4 * (1.0 + float(np.linalg.norm(theta)))


@dataclass
class Objective:
    """Scalar objective on R^d with optional closed-form derivatives.

    ``fn``/``fn_batch`` evaluate the objective at a (d,) vector or an
    (m, d) batch; batch evaluation falls back to a row loop when no
    vectorized form is given.  ``grad``/``hess`` fall back to central
    finite differences.  Metadata fields record the coercivity constant,
    a known stationary point, and a known lower bound when available.
    """

    dim: int
    fn: Callable[[np.ndarray], float]
    fn_batch: Callable[[np.ndarray], np.ndarray] | None = None
    grad_fn: Callable[[np.ndarray], np.ndarray] | None = None
    grad_batch_fn: Callable[[np.ndarray], np.ndarray] | None = None
    hess_fn: Callable[[np.ndarray], np.ndarray] | None = None
    coercivity_delta: float | None = None
    known_optimum: np.ndarray | None = None
    known_floor: float | None = None
    name: str = "custom"

    def value(self, theta) -> float:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.dim,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({self.dim},)")
        val = float(self.fn(theta))
        if self.known_floor is not None and np.isfinite(val) and val < self.known_floor - 1e-12:
            raise ValueError(f"objective {val} below declared floor {self.known_floor} at theta={theta}")
        return val

    def value_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        if self.fn_batch is not None:
            return np.asarray(self.fn_batch(thetas), dtype=float)
        return np.array([self.fn(row) for row in thetas], dtype=float)

    def grad(self, theta, h: float | None = None) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.grad_fn is not None:
            return np.atleast_1d(np.asarray(self.grad_fn(theta), dtype=float))
        step = _fd_step(theta, h)
        out = np.empty(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = step
            out[i] = (self.fn(theta + e) - self.fn(theta - e)) / (2.0 * step)
        return out

    def grad_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        if self.grad_batch_fn is not None:
            return np.asarray(self.grad_batch_fn(thetas), dtype=float)
        return np.stack([self.grad(row) for row in thetas])

    def hess(self, theta, h: float | None = None) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.hess_fn is not None:
            return np.asarray(self.hess_fn(theta), dtype=float)
        step = _fd_step(theta, h)
        out = np.empty((self.dim, self.dim))
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = step
            out[i] = (self.grad(theta + e) - self.grad(theta - e)) / (2.0 * step)
        return 0.5 * (out + out.T)


def grad_check(obj: Objective, theta_grid, h: float = 1e-4) -> float:
    """Max sup-norm gap between closed-form and central-difference gradients.

    Returns 0 for an empty grid.  ``h`` must lie in [1e-6, 1e-2]; the
    central difference has O(h^2) truncation on smooth objectives.
    """
    if not 1e-6 <= h <= 1e-2:
        raise ValueError(f"h must lie in [1e-6, 1e-2], got {h}")
    worst = 0.0
    for theta in theta_grid:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        closed = obj.grad(theta)
        fd = np.empty(obj.dim)
        for i in range(obj.dim):
            e = np.zeros(obj.dim)
            e[i] = h
            fd[i] = (obj.fn(theta + e) - obj.fn(theta - e)) / (2.0 * h)
        worst = max(worst, float(np.max(np.abs(closed - fd))))
    return worst


def bisect_root(fn, lo: float, hi: float, tol: float = 1e-14, max_iter: int = 200) -> float:
    """Plain interval bisection; requires a sign change on [lo, hi]."""
    flo, fhi = fn(lo), fn(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise ValueError(f"no sign change on [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = fn(mid)
        if fmid == 0.0 or hi - lo < tol:
            return mid
        if flo * fmid < 0:
            hi, fhi = mid, fmid
        else:
            lo, flo = mid, fmid
    return 0.5 * (lo + hi)


def quadratic_1d() -> Objective:
    """1-d quadratic, value theta^2, minimum 0 at the origin."""
    return Objective(
        dim=1,
        fn=lambda t: float(t[0] ** 2),
        fn_batch=lambda ts: ts[:, 0] ** 2,
        grad_fn=lambda t: np.array([2.0 * t[0]]),
        grad_batch_fn=lambda ts: 2.0 * ts[:, :1],
        hess_fn=lambda t: np.array([[2.0]]),
        coercivity_delta=1.0,
        known_optimum=np.array([0.0]),
        known_floor=0.0,
        name="quadratic1d",
    )


def trig_quadratic_1d() -> Objective:
    """Quadratic with trigonometric terms breaking its symmetry.

    value(t) = t^2 - cos(t) - sin(5 t)/5 + 4, bounded below by 2.8.  The
    stationary point (near 0.19) is located by bisection on the
    closed-form derivative at construction and stored as the known
    optimum.
    """

    def f(t):
        return float(t[0] ** 2 - np.cos(t[0]) - np.sin(5.0 * t[0]) / 5.0 + 4.0)

    def fb(ts):
        x = ts[:, 0]
        return x**2 - np.cos(x) - np.sin(5.0 * x) / 5.0 + 4.0

    def g(t):
        return np.array([2.0 * t[0] + np.sin(t[0]) - np.cos(5.0 * t[0])])

    def gb(ts):
        x = ts[:, 0]
        return (2.0 * x + np.sin(x) - np.cos(5.0 * x))[:, None]

    def h(t):
        return np.array([[2.0 + np.cos(t[0]) + 5.0 * np.sin(5.0 * t[0])]])

    stationary = bisect_root(lambda x: g(np.array([x]))[0], 0.0, 0.5)
    return Objective(
        dim=1,
        fn=f,
        fn_batch=fb,
        grad_fn=g,
        grad_batch_fn=gb,
        hess_fn=h,
        coercivity_delta=0.5,
        known_optimum=np.array([stationary]),
        known_floor=2.8,
        name="trig_quadratic1d",
    )


def quadratic_nd(q: np.ndarray) -> Objective:
    """Quadratic form value(t) = t' Q t / 2 for symmetric positive-definite Q."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError(f"Q must be square, got shape {q.shape}")
    if not np.allclose(q, q.T, atol=1e-12):
        raise ValueError("Q must be symmetric")
    eigs = np.linalg.eigvalsh(q)
    if eigs.min() <= 0:
        raise ValueError(f"Q must be positive definite, min eigenvalue {eigs.min()}")
    d = q.shape[0]
    return Objective(
        dim=d,
        fn=lambda t: float(0.5 * t @ q @ t),
        fn_batch=lambda ts: 0.5 * np.einsum("mi,ij,mj->m", ts, q, ts),
        grad_fn=lambda t: q @ t,
        grad_batch_fn=lambda ts: ts @ q.T,
        hess_fn=lambda t: q.copy(),
        coercivity_delta=float(eigs.min()),
        known_optimum=np.zeros(d),
        known_floor=0.0,
        name="quadratic_nd",
    )


def builtin_objective(kind: str, q=None) -> Objective:
    """Look up a built-in objective by config name."""
    if kind == "quadratic1d":
        return quadratic_1d()
    if kind == "trig_quadratic1d":
        return trig_quadratic_1d()
    if kind == "quadratic_nd":
        if q is None:
            raise ValueError("quadratic_nd requires objective.Q")
        return quadratic_nd(q)
    raise ValueError(f"unknown objective kind {kind!r}")
