"""Inexact server-side solves of the proximal subproblems.

A subproblem has the form

    A(x) = <linear, x> + ||x - anchor||^2 / (2 theta) + sum_i local_i(x)

and is minimised by accelerated gradient descent started at the anchor.
The stopping rules of the outer methods compare ``||grad A(x)||^2`` to
``c * ||anchor - argmin A||^2``.  The argmin is unknown at run time, so the
solver stops on the sufficient condition

    ||grad A(x)|| <= sqrt(c) * ||grad A(anchor)|| / L_A

which implies the rule because ``||grad A(anchor)|| <= L_A ||anchor - argmin||``.
On quadratics :func:`certify_exact` checks the rule itself.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InputError, ModeError, ParameterError
from .numerics import as_vector, solve_spd
from .problems import ProxTerm


@dataclass(frozen=True)
class GradSqVsAnchorDist:
    """``||grad A(x)||^2 <= c ||anchor - argmin A||^2``."""

    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ParameterError("criterion constant must be positive")


@dataclass(frozen=True)
class GradRatio:
    """``||grad A(x)|| <= max(rho ||grad A(anchor)||, floor)``."""

    rho: float
    floor: float = 0.0

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ParameterError("rho must lie in (0, 1)")
        if self.floor < 0:
            raise ParameterError("floor must be non-negative")


def sgd_rule(theta):
    """Stopping rule of the stochastic extragradient method: ``c = 1/(11 theta^2)``."""
    return GradSqVsAnchorDist(1.0 / (11.0 * theta * theta))


def vr_rule(mu, theta):
    """Stopping rule of the variance-reduced epoch: ``c = mu/(17 theta)``."""
    return GradSqVsAnchorDist(mu / (17.0 * theta))


def outer_aeg_rule(delta):
    """Outer accelerated-extragradient subproblem: ``c = delta^2 / 3``."""
    return GradSqVsAnchorDist(delta * delta / 3.0)


def inner_aeg_rule(theta_g):
    """Inner (sliding) subproblem: ``c = 2 / (10 theta_g^2)``."""
    return GradSqVsAnchorDist(2.0 / (10.0 * theta_g * theta_g))


class LocalModel:
    """Sum of server-local oracles with cached curvature information.

    For all-quadratic parts the Hessian and the gradient offset at zero are
    assembled once and the eigenvalue bounds are exact.
    """

    def __init__(self, oracles, d=None):
        self.oracles = tuple(oracles)
        if not self.oracles and d is None:
            raise InputError("empty local model needs an explicit dimension")
        self.d = self.oracles[0].d if self.oracles else int(d)
        if any(o.d != self.d for o in self.oracles):
            raise InputError("local oracle dimensions differ")
        self.is_quadratic = all(o.is_quadratic for o in self.oracles)
        if self.is_quadratic:
            H = np.zeros((self.d, self.d))
            off = np.zeros(self.d)
            z = np.zeros(self.d)
            for o in self.oracles:
                H += o.hessian(z)
                off += o.grad(z)
            self.hessian = 0.5 * (H + H.T)
            self.offset = off
            if self.oracles:
                ev = np.linalg.eigvalsh(self.hessian)
                self.lam_min, self.lam_max = float(ev[0]), float(ev[-1])
            else:
                self.lam_min = self.lam_max = 0.0
        else:
            self.hessian = None
            self.offset = None
            self.lam_max = float(sum(o.smoothness for o in self.oracles))
            self.lam_min = float(sum(o.curvature_lower for o in self.oracles))

    def with_prox(self, term):
        """Copy with an extra :class:`ProxTerm`; bounds shift by ``1/theta`` exactly."""
        if not isinstance(term, ProxTerm):
            raise InputError("with_prox expects a ProxTerm")
        new = object.__new__(LocalModel)
        new.oracles = self.oracles + (term,)
        new.d = self.d
        new.is_quadratic = self.is_quadratic
        shift = 1.0 / term.theta
        if self.is_quadratic:
            new.hessian = self.hessian + shift * np.eye(self.d)
            new.offset = self.offset + term.linear - term.anchor * shift
        else:
            new.hessian = None
            new.offset = None
        new.lam_min = self.lam_min + shift
        new.lam_max = self.lam_max + shift
        return new

    def value(self, x):
        return sum(o.value(x) for o in self.oracles)

    def grad(self, x):
        if self.is_quadratic:
            return self.hessian @ x + self.offset
        out = np.zeros(self.d)
        for o in self.oracles:
            out += o.grad(x)
        return out


class ProxSubproblem:
    """``<linear, x> + ||x - anchor||^2/(2 theta) + local(x)``."""

    def __init__(self, linear, anchor, theta, local):
        if not theta > 0:
            raise ParameterError("theta must be positive")
        if not isinstance(local, LocalModel):
            local = LocalModel(local, d=len(anchor))
        self.anchor = as_vector(anchor, local.d)
        self.linear = as_vector(linear, local.d)
        self.theta = float(theta)
        self.local = local
        self.d = local.d

    @property
    def smoothness(self):
        return 1.0 / self.theta + max(self.local.lam_max, 0.0)

    @property
    def strong_convexity(self):
        return 1.0 / self.theta + self.local.lam_min

    def value(self, x):
        r = x - self.anchor
        return float(self.linear @ x) + float(r @ r) / (2.0 * self.theta) + self.local.value(x)

    def grad(self, x):
        return self.linear + (x - self.anchor) / self.theta + self.local.grad(x)

    def quadratic_system(self):
        """``(H, c)`` with ``grad A(x) = H x - c``; quadratic locals only."""
        if not self.local.is_quadratic:
            raise ModeError("subproblem has a non-quadratic local part")
        H = self.local.hessian + np.eye(self.d) / self.theta
        c = self.anchor / self.theta - self.linear - self.local.offset
        return H, c


def prox_value_grad(s, x):
    x = as_vector(x, s.d)
    return s.value(x), s.grad(x)


@dataclass(frozen=True)
class ProxSolution:
    x: np.ndarray
    iterations: int
    certified: bool
    grad_norm: float
    target: float


def _stop_tolerance(s, rule, anchor_grad_norm):
    if isinstance(rule, GradSqVsAnchorDist):
        return math.sqrt(rule.c) * anchor_grad_norm / s.smoothness
    if isinstance(rule, GradRatio):
        return max(rule.rho * anchor_grad_norm, rule.floor)
    raise InputError(f"unknown stopping rule {rule!r}")


def _agd(grad, x0, L, m, tol, max_iter):
    # Same iteration as the compiled quadratic kernel, for general locals.
    x = x0.copy()
    y = x0.copy()
    g = grad(y)
    gn = float(np.linalg.norm(g))
    best, best_gn = y.copy(), gn
    if gn <= tol:
        return best, 0, best_gn
    r = math.sqrt(m / L) if m > 0 else 0.0
    beta = (1.0 - r) / (1.0 + r)
    for k in range(1, max_iter + 1):
        x_new = y - g / L
        if float(g @ (x_new - x)) > 0.0:
            y = x_new.copy()
        else:
            y = x_new + beta * (x_new - x)
        x = x_new
        g = grad(y)
        gn = float(np.linalg.norm(g))
        if gn < best_gn:
            best, best_gn = y.copy(), gn
        if gn <= tol:
            return best, k, best_gn
    return best, max_iter, best_gn


def solve_prox(s, rule, budget=10_000):
    """Approximately minimise ``s`` from its anchor until ``rule``'s sufficient test holds.

    Returns a :class:`ProxSolution`; ``certified`` is false when the budget
    ran out, in which case ``x`` is the best iterate seen.
    """
    if budget < 1:
        raise ParameterError("budget must be at least 1")
    g0 = s.grad(s.anchor)
    tol = _stop_tolerance(s, rule, float(np.linalg.norm(g0)))
    L = s.smoothness
    m = max(s.strong_convexity, 0.0)
    if s.local.is_quadratic:
        H, c = s.quadratic_system()
        x, it, gn = _kernels.agd_quadratic(H, c, s.anchor.copy(), L, m, tol, int(budget))
    else:
        x, it, gn = _agd(s.grad, s.anchor.copy(), L, m, tol, int(budget))
    return ProxSolution(x, int(it), bool(gn <= tol), float(gn), float(tol))


def exact_argmin(s):
    H, c = s.quadratic_system()
    return solve_spd(H, c, tol=1e-14)


def certify_exact(s, x, rule):
    """Evaluate a ``||grad A(x)||^2 <= c ||anchor - argmin||^2`` rule with the true argmin."""
    if not isinstance(rule, GradSqVsAnchorDist):
        raise ModeError("exact certification needs a GradSqVsAnchorDist rule")
    if not s.local.is_quadratic:
        raise ModeError("exact certification requires quadratic local parts")
    x = as_vector(x, s.d)
    x_opt = exact_argmin(s)
    g = s.grad(x)
    dist = s.anchor - x_opt
    return float(g @ g) <= rule.c * float(dist @ dist)
