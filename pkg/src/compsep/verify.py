"""Self-check battery: oracle gradients, distributions, estimators, criteria, identities.

``verify_suite`` runs every check on small seeded instances and reports one
line per check.  ``fault`` injects a known defect so the suite itself can be
tested ("flip_grad_sign" negates a quadratic oracle's gradient).
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import algorithms
from .numerics import bregman, fd_gradient, spectral_norm
from .problems import (
    LogisticOracle,
    ProxTerm,
    QuadraticOracle,
    grad_group,
    make_logistic_split,
    make_quadratic_family,
    make_two_gaussian_dataset,
)
from .randomness import RngStream
from .simnet import Group, Network
from .subsolver import (
    LocalModel,
    ProxSubproblem,
    certify_exact,
    inner_aeg_rule,
    sgd_rule,
    solve_prox,
    vr_rule,
)

FAULTS = ("flip_grad_sign",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


class _FlippedGradient(QuadraticOracle):
    def grad(self, x):
        return -super().grad(x)


def _rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def check_gradients(seed, fault=None, points=10, tol=1e-5):
    rng = np.random.default_rng(seed)
    d = 6
    M = rng.standard_normal((d, d))
    cls = _FlippedGradient if fault == "flip_grad_sign" else QuadraticOracle
    quad = cls(M @ M.T + np.eye(d), rng.standard_normal(d))
    X = rng.standard_normal((40, d))
    y = np.where(rng.random(40) < 0.5, -1.0, 1.0)
    logi = LogisticOracle(X, y, l2=0.1)
    worst = 0.0
    for o in (quad, logi):
        for _ in range(points):
            x = rng.standard_normal(d)
            worst = max(worst, _rel_err(o.grad(x), fd_gradient(o.value, x)))
    return worst <= tol, f"max relative error {worst:.2e}"


def check_spectral_norm(seed, count=20, tol=1e-8):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        A = rng.standard_normal((8, 8))
        A = 0.5 * (A + A.T)
        ref = float(np.max(np.abs(np.linalg.eigvalsh(A))))
        worst = max(worst, abs(spectral_norm(A) - ref) / ref)
    return worst <= tol, f"max relative error {worst:.2e}"


def geometric_checks(seed, n=100_000):
    """Returns (mean of Geom(0.25), Bernoulli(0.3) z-score, geometric-stop identity relative gap)."""
    s = RngStream(seed)
    mean = float(np.mean([s.geometric(0.25) for _ in range(n)]))
    s = RngStream(seed, spawn_key=(1,))
    hits = sum(s.bernoulli(0.3) for _ in range(n))
    z = (hits / n - 0.3) / math.sqrt(0.21 / n)
    s = RngStream(seed, spawn_key=(2,))
    q, r = 0.3, 0.9
    T = np.array([s.geometric(q) for _ in range(n)])
    lhs = float(np.mean(r ** (T - 1)))
    rhs = q * 1.0 + (1 - q) * float(np.mean(r ** T))
    return mean, z, abs(lhs - rhs) / rhs


def check_distributions(seed):
    mean, z, gap = geometric_checks(seed)
    ok = abs(mean - 4.0) <= 0.08 and abs(z) <= 3.0 and gap <= 0.01
    return ok, f"geom mean {mean:.4f}, bernoulli z {z:+.2f}, identity gap {gap:.2e}"


def estimator_samples(problem, p, x, x0, draws, seed):
    """Empirical samples of the three sampled estimators at frozen points.

    Returns ``{name: (samples, target)}`` for ``xi``, ``zeta`` (both at
    ``x``) and the control-variate estimator anchored at ``x0``.
    """
    net = Network(problem)
    rng = RngStream(seed)
    start = (grad_group(problem, "f_minus_f1", x0), grad_group(problem, "g_minus_g1", x0))
    xi = np.array([algorithms.draw_xi(net, rng, p, x) for _ in range(draws)])
    zeta = np.array([algorithms.draw_zeta(net, rng, p, x) for _ in range(draws)])
    e = np.array([algorithms.vr_estimator(net, rng, p, x, start) for _ in range(draws)])
    hm = grad_group(problem, "h_minus_h1", x)
    return {
        "xi": (xi, hm),
        "zeta": (zeta, grad_group(problem, "h", x)),
        "vr": (e, hm),
    }


def max_zscore(samples, target):
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n)
    gap = np.abs(mean - target)
    z = np.where(se > 0, gap / np.where(se > 0, se, 1.0), np.where(gap > 1e-12, np.inf, 0.0))
    return float(np.max(z))


def check_unbiasedness(seed, draws=100_000):
    problem = make_quadratic_family(6, 3, 3, 2.0, 0.1, seed=seed)
    rng = np.random.default_rng(seed)
    x, x0 = rng.standard_normal(6), rng.standard_normal(6)
    zs = {k: max_zscore(s, t) for k, (s, t) in estimator_samples(problem, 0.3, x, x0, draws, seed).items()}
    ok = all(z <= 3.0 for z in zs.values())
    return ok, ", ".join(f"{k} z {v:.2f}" for k, v in zs.items())


def random_subproblem(rng, d=8, theta=None):
    """A seeded quadratic prox subproblem with a convex local part."""
    M = rng.standard_normal((d, d)) / math.sqrt(d)
    local = LocalModel([QuadraticOracle(M @ M.T, rng.standard_normal(d))])
    theta = float(rng.uniform(0.05, 2.0)) if theta is None else theta
    return ProxSubproblem(rng.standard_normal(d), rng.standard_normal(d), theta, local), theta


def check_criteria(seed, count=50):
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(count):
        s, theta = random_subproblem(rng)
        mu = float(rng.uniform(1e-3, 0.5))
        for rule in (sgd_rule(theta), vr_rule(mu, theta), inner_aeg_rule(theta)):
            sol = solve_prox(s, rule)
            if not (sol.certified and certify_exact(s, sol.x, rule)):
                failures += 1
    return failures == 0, f"{3 * count - failures}/{3 * count} certified"


def three_point_gap(value, grad, x, y, z):
    lhs = float((x - y) @ (grad(y) - grad(z)))
    rhs = bregman(value, grad, x, z) - bregman(value, grad, x, y) - bregman(value, grad, y, z)
    return abs(lhs - rhs) / max(1.0, abs(lhs))


def check_three_point(seed, triples=20, tol=1e-9):
    rng = np.random.default_rng(seed)
    quad = make_quadratic_family(8, 3, 3, 2.0, 0.1, seed=seed)
    ds = make_two_gaussian_dataset(200, 8, seed=seed)
    logi = make_logistic_split(ds, 0.7, 3, 3, l2=0.01, seed=seed)
    worst = 0.0
    for prob in (quad, logi):
        val = lambda x, p=prob: p.value("h", x)
        grd = lambda x, p=prob: grad_group(p, "h", x)
        for _ in range(triples):
            x, y, z = rng.standard_normal((3, 8))
            worst = max(worst, three_point_gap(val, grd, x, y, z))
    return worst <= tol, f"max relative gap {worst:.2e}"


CHECKS = (
    ("gradient_vs_fd", check_gradients),
    ("spectral_norm", check_spectral_norm),
    ("distributions", check_distributions),
    ("estimator_unbiasedness", check_unbiasedness),
    ("criterion_certification", check_criteria),
    ("three_point_equality", check_three_point),
)


def verify_suite(seed=0, fault=None, out=print):
    """Run all checks; returns the list of :class:`CheckResult`."""
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    results = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        kw = {"fault": fault} if name == "gradient_vs_fd" else {}
        try:
            ok, detail = fn(seed, **kw)
        except Exception as exc:  # report, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, bool(ok), detail, time.perf_counter() - t0)
        results.append(res)
        if out is not None:
            out(f"{'PASS' if res.passed else 'FAIL'} {name}: {detail} ({res.seconds:.1f}s)")
    return results
