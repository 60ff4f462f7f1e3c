"""BFGS and L-BFGS with Armijo backtracking.

Only accepted points get a gradient evaluation; trial points during the line
search use the value-only callback when the objective provides one. An
infinite objective value (e.g. a medium below its floor) is rejected like any
other failed Armijo test.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class ObjectiveHandle:
    dimension: int
    evaluate: Callable[[np.ndarray], tuple[float, np.ndarray]]
    value: Callable[[np.ndarray], float] | None = None
    description: str = ""

    def f(self, x):
        if self.value is not None:
            return self.value(x)
        return self.evaluate(x)[0]


@dataclass
class Armijo:
    c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30


@dataclass
class OptimResult:
    coords: np.ndarray
    value: float
    gradient: np.ndarray
    iterations: int
    termination_reason: str
    n_evals: int = 0

    @property
    def gradient_norm(self) -> float:
        return float(np.linalg.norm(self.gradient))


class _Counted:
    def __init__(self, obj: ObjectiveHandle):
        self.obj = obj
        self.n = 0

    def evaluate(self, x):
        self.n += 1
        f, g = self.obj.evaluate(x)
        return float(f), np.asarray(g, dtype=float)

    def value(self, x):
        self.n += 1
        return float(self.obj.f(x))


def _line_search(fun: _Counted, x, f, g, d, armijo: Armijo):
    """Backtracking until ``f(x + a d) <= f(x) + c1 a g.d``; returns (alpha, f_new) or (None, f)."""
    slope = float(g @ d)
    alpha = 1.0
    for _ in range(armijo.max_backtracks + 1):
        f_new = fun.value(x + alpha * d)
        if np.isfinite(f_new) and f_new <= f + armijo.c1 * alpha * slope:
            return alpha, f_new
        alpha *= armijo.backtrack
    return None, f


def _start(fun, x0):
    x = np.array(x0, dtype=float)
    f, g = fun.evaluate(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    return x, f, g


def bfgs_minimize(
    obj: ObjectiveHandle,
    x0,
    grad_tol: float = 1e-6,
    max_iter: int = 200,
    armijo: Armijo | None = None,
    callback=None,
) -> OptimResult:
    """Dense BFGS on the inverse Hessian with Armijo backtracking.

    Stops when ``||g|| <= grad_tol * max(1, ||g0||)``, or when ``callback(it, x, f, g)``
    returns a truthy value, which becomes the termination reason. The first accepted step
    rescales the initial inverse Hessian by ``s.y / y.y``; updates with
    ``s.y <= 1e-12 ||s|| ||y||`` are skipped.
    """
    armijo = armijo or Armijo()
    fun = _Counted(obj)
    x, f, g = _start(fun, x0)
    n = x.size
    target = grad_tol * max(1.0, np.linalg.norm(g))
    H = np.eye(n)
    scaled = False
    it = 0
    reason = "max-iter"
    while True:
        if np.linalg.norm(g) <= target:
            reason = "gradient-tol"
            break
        if it >= max_iter:
            break
        d = -H @ g
        if g @ d >= 0:
            H = np.eye(n)
            d = -g
        alpha, f_new = _line_search(fun, x, f, g, d, armijo)
        if alpha is None:
            reason = "line-search-fail"
            break
        s = alpha * d
        x_new = x + s
        f_eval, g_new = fun.evaluate(x_new)
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if not scaled:
                H = (sy / float(yv @ yv)) * np.eye(n)
                scaled = True
            rho = 1.0 / sy
            Hy = H @ yv
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (yv @ Hy) + rho) * np.outer(s, s)
        x, f, g = x_new, f_eval, g_new
        it += 1
        if callback is not None:
            stop = callback(it, x, f, g)
            if stop:
                reason = str(stop)
                break
    return OptimResult(x, f, g, it, reason, fun.n)


def lbfgs_minimize(
    obj: ObjectiveHandle,
    x0,
    memory: int = 10,
    grad_tol: float = 1e-6,
    max_iter: int = 200,
    armijo: Armijo | None = None,
    per_iteration_hook=None,
    h0_scaling: str = "latest",
    callback=None,
) -> OptimResult:
    """Limited-memory BFGS (two-loop recursion) with Armijo backtracking.

    ``per_iteration_hook(n)`` runs before iteration ``n = 0, 1, ...``; when given,
    the objective is re-evaluated at the current point afterwards since the hook
    may change it. ``h0_scaling`` selects ``s.y/y.y`` from the newest pair
    (``"latest"``) or from the first accepted pair (``"first"``, which reproduces
    dense BFGS while no pair has been discarded).
    """
    if memory < 1:
        raise ValueError("memory must be at least 1")
    armijo = armijo or Armijo()
    fun = _Counted(obj)
    x, f, g = _start(fun, x0)
    pairs: deque = deque(maxlen=memory)
    gamma = None
    it = 0
    reason = "max-iter"
    target = None
    while True:
        if per_iteration_hook is not None:
            per_iteration_hook(it)
            f, g = fun.evaluate(x)
        if target is None:
            target = grad_tol * max(1.0, np.linalg.norm(g))
        if np.linalg.norm(g) <= target:
            reason = "gradient-tol"
            break
        if it >= max_iter:
            break
        d = -_two_loop(g, pairs, gamma)
        if g @ d >= 0:
            pairs.clear()
            d = -g
        alpha, f_new = _line_search(fun, x, f, g, d, armijo)
        if alpha is None:
            reason = "line-search-fail"
            break
        s = alpha * d
        x_new = x + s
        f_eval, g_new = fun.evaluate(x_new)
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            pairs.append((s, yv, 1.0 / sy))
            if gamma is None or h0_scaling == "latest":
                gamma = sy / float(yv @ yv)
        x, f, g = x_new, f_eval, g_new
        it += 1
        if callback is not None:
            stop = callback(it, x, f, g)
            if stop:
                reason = str(stop)
                break
    return OptimResult(x, f, g, it, reason, fun.n)


def _two_loop(g, pairs, gamma):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if gamma is not None:
        q *= gamma
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q
