"""Communication-split methods for ``min h = f + g`` under Hessian similarity.

All methods talk to the nodes only through :class:`~compsep.simnet.Network`
rounds; server-local work (``f1``, ``g1``, subproblem solves) is free.

* :func:`run_sc_aeg`   stochastic accelerated extragradient, one group per round
* :func:`run_vrcs`     variance-reduced epochs with geometric length
* :func:`run_acc_vrcs` accelerated variant of the above
* :func:`run_c_aeg`    composite accelerated extragradient with an inner
  sliding loop over ``M_g``; ``baseline=True`` gives plain AEG on ``h``
"""

import csv
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ParameterError
from .problems import ProxTerm, solve_reference
from .randomness import RngStream
from .simnet import Group, Network
from .subsolver import (
    LocalModel,
    ProxSubproblem,
    inner_aeg_rule,
    outer_aeg_rule,
    sgd_rule,
    solve_prox,
    vr_rule,
)

ALGORITHMS = ("sc_aeg", "vrcs", "acc_vrcs", "c_aeg", "aeg")

DIVERGENCE_FACTOR = 1e3
SUBSOLVE_BUDGET = 10_000
INNER_CAP_CONSTANT = 20


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class ScAegParams:
    theta: float
    tau: float
    eta: float
    alpha: float
    p: float


@dataclass(frozen=True)
class VrcsParams:
    theta: float
    p: float
    q: float


@dataclass(frozen=True)
class AccVrcsParams:
    theta: float
    p: float
    q: float
    tau: float
    alpha: float


@dataclass(frozen=True)
class InnerAegParams:
    theta_g: float
    tau_g: float
    eta_g: float
    alpha_g: float


@dataclass(frozen=True)
class CAegParams:
    """Outer parameters, the similarity constant they were built from, and the inner loop's."""

    theta_f: float
    tau_f: float
    eta_f: float
    alpha_f: float
    delta: float
    inner: InnerAegParams = None


def _check_probability(name, v):
    if not 0.0 < v < 1.0:
        raise ParameterError(f"{name} must lie in (0, 1), got {v}")


def _vr_theta(p, q, delta_f, delta_g):
    return 0.25 * math.sqrt(p * (1 - p) * q / (p * delta_g ** 2 + (1 - p) * delta_f ** 2))


def _outer_aeg(theta, mu):
    tau = math.sqrt(mu * theta)
    eta = min(1.0 / (2.0 * mu), 0.5 * math.sqrt(theta / mu))
    return tau, eta, mu


def tune(profile, algo, *, p=None, q=None, **overrides):
    """Parameters for ``algo`` from a similarity profile.

    ``p``/``q`` replace the default sampling probabilities *before* the
    dependent parameters are derived; any other keyword replaces a final
    value as-is.
    """
    mu, df, dg = profile.mu, profile.delta_f, profile.delta_g
    if not (0 < mu < df <= dg):
        raise ParameterError(f"need 0 < mu < delta_f <= delta_g, got {mu}, {df}, {dg}")
    if algo == "sc_aeg":
        theta = 1.0 / (3.0 * (df + dg))
        tau, eta, alpha = _outer_aeg(theta, mu)
        p = df / (df + dg) if p is None else p
        params = ScAegParams(theta, tau, eta, alpha, p)
    elif algo in ("vrcs", "acc_vrcs"):
        p_def = df ** 2 / (df ** 2 + dg ** 2)
        p = p_def if p is None else p
        q = p_def if q is None else q
        _check_probability("p", p)
        _check_probability("q", q)
        theta = _vr_theta(p, q, df, dg)
        if algo == "vrcs":
            params = VrcsParams(theta, p, q)
        else:
            params = AccVrcsParams(theta, p, q,
                                   tau=math.sqrt(theta * mu / (3.0 * q)),
                                   alpha=math.sqrt(theta / (3.0 * mu * q)))
    elif algo == "c_aeg":
        theta_f = 1.0 / df
        tau_f, eta_f, alpha_f = _outer_aeg(theta_f, mu)
        theta_g = 1.0 / (2.0 * dg)
        tau_g = 0.5 * math.sqrt(theta_g / theta_f)
        inner = InnerAegParams(theta_g, tau_g,
                               eta_g=min(theta_f / 2.0, 0.25 * theta_g / tau_g),
                               alpha_g=1.0 / theta_f)
        params = CAegParams(theta_f, tau_f, eta_f, alpha_f, df, inner)
    elif algo == "aeg":
        delta = df + dg
        theta = 1.0 / delta
        tau, eta, alpha = _outer_aeg(theta, mu)
        params = CAegParams(theta, tau, eta, alpha, delta, None)
    else:
        raise ParameterError(f"unknown algorithm {algo!r}")
    if overrides:
        params = replace(params, **overrides)
    for name in ("p", "q", "tau", "tau_f"):
        if hasattr(params, name):
            _check_probability(name, getattr(params, name))
    return params


# ---------------------------------------------------------------------------
# traces

TRACE_COLUMNS = ("outer_index", "rounds_f", "rounds_g", "comms_f", "comms_g",
                 "grad_norm", "subopt", "certified", "status")


@dataclass
class TraceRecord:
    outer_index: int
    rounds_f: int
    rounds_g: int
    comms_f: int
    comms_g: int
    grad_norm: float
    subopt: float
    certified: bool
    status: str = "ok"

    @property
    def total_rounds(self):
        return self.rounds_f + self.rounds_g


@dataclass
class Trace:
    """Per-outer-iteration records of one run plus its final status.

    ``status`` is one of ``converged``, ``budget``, ``diverged`` or
    ``uncertified``.
    """

    algorithm: str
    records: list = field(default_factory=list)
    status: str = "running"
    message: str = ""
    x: np.ndarray = None
    extras: dict = field(default_factory=dict)

    def rounds_to_eps(self, eps, key="rounds_f"):
        """Counter ``key`` at the first record with ``grad_norm <= eps`` (``None`` if never)."""
        for r in self.records:
            if r.grad_norm <= eps:
                return getattr(r, key)
        return None

    def subopt_at_budget(self, budget, key="rounds_f"):
        """Suboptimality of the last record whose counter ``key`` is within ``budget``."""
        best = None
        for r in self.records:
            if getattr(r, key) <= budget:
                best = r.subopt
        return best

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([r.outer_index, r.rounds_f, r.rounds_g, r.comms_f, r.comms_g,
                            repr(float(r.grad_norm)), repr(float(r.subopt)),
                            int(bool(r.certified)), r.status])


class _Recorder:
    """Builds a trace and applies the stopping / divergence tests."""

    def __init__(self, name, net, eps, max_rounds, x0):
        self.trace = Trace(name)
        self.net = net
        self.eps = eps
        self.max_rounds = max_rounds
        self.gn0 = None
        self.sub0 = None

    def record(self, k, x, certified=True):
        gn, sub, _ = self.net.observe(x)
        s = self.net.snapshot()
        rec = TraceRecord(k, s.rounds_f, s.rounds_g, s.comms_f, s.comms_g, gn, sub, certified)
        self.trace.records.append(rec)
        self.trace.x = x
        if self.gn0 is None:
            self.gn0, self.sub0 = gn, sub
        if not (math.isfinite(gn) and math.isfinite(sub if not math.isnan(sub) else 0.0)):
            return self.stop("diverged", "non-finite iterate")
        if not math.isnan(sub) and self.sub0 > 0:
            if sub > DIVERGENCE_FACTOR * self.sub0:
                return self.stop("diverged", f"suboptimality grew beyond {DIVERGENCE_FACTOR:g}x")
        elif gn > DIVERGENCE_FACTOR * max(self.gn0, 1e-300):
            return self.stop("diverged", f"gradient norm grew beyond {DIVERGENCE_FACTOR:g}x")
        if gn <= self.eps:
            return self.stop("converged")
        if s.total_rounds >= self.max_rounds:
            return self.stop("budget")
        return False

    def stop(self, status, message=""):
        self.trace.status = status
        self.trace.message = message
        if self.trace.records and status in ("diverged", "uncertified"):
            self.trace.records[-1].status = status
        return True

    def uncertified(self, k, x, what):
        self.record(k, x, certified=False)
        return self.stop("uncertified", f"{what} subproblem not certified at outer step {k}")


def _setup(problem, prof, algo, params, seed, x0, x_star):
    if params is None:
        params = tune(prof, algo)
    if x_star is None:
        x_star = solve_reference(problem)
    net = Network(problem, x_star=x_star)
    x0 = np.zeros(problem.d) if x0 is None else np.array(x0, dtype=np.float64)
    if isinstance(seed, RngStream):
        rng = seed
    else:
        rng = RngStream(0 if seed is None else seed)
    h1 = LocalModel([net.server_f, net.server_g])
    return params, net, x0, rng, h1


# ---------------------------------------------------------------------------
# stochastic accelerated extragradient


def draw_xi(net, rng, p, x):
    """Sampled estimate of ``grad (h - h1)(x)``: one round over the drawn group."""
    if rng.bernoulli(p):
        return net.round_grad(Group.F, "f_minus_f1", x) / p
    return net.round_grad(Group.G, "g_minus_g1", x) / (1.0 - p)


def draw_zeta(net, rng, p, x):
    """Sampled estimate of ``grad h(x)``: one round over the drawn group."""
    if rng.bernoulli(p):
        return net.round_grad(Group.F, "f", x) / p
    return net.round_grad(Group.G, "g", x) / (1.0 - p)


def run_sc_aeg(problem, prof, params=None, seed=0, eps=1e-6, max_rounds=100_000, *,
               x0=None, x_star=None, exact_estimators=False, max_outer=None, audit=None,
               monitor=None):
    """Stochastic accelerated extragradient with Bernoulli group sampling.

    Each outer step spends one round on ``xi`` (at the combined point) and
    one on ``zeta`` (at the subproblem solution).  ``exact_estimators``
    replaces both samples by their expectations, paid with full rounds.
    ``monitor(k, x, xbar)`` is called after every outer step.
    """
    params, net, x0, rng, h1 = _setup(problem, prof, "sc_aeg", params, seed, x0, x_star)
    theta, tau, eta, alpha, p = params.theta, params.tau, params.eta, params.alpha, params.p
    rule = sgd_rule(theta)
    rec = _Recorder("sc_aeg", net, eps, max_rounds, x0)
    x, xbar = x0.copy(), x0.copy()
    if rec.record(0, xbar):
        return rec.trace
    k = 0
    while max_outer is None or k < max_outer:
        xl = tau * x + (1.0 - tau) * xbar
        if exact_estimators:
            xi = sum(net.round_grad(Group.ALL, "h_minus_h1", xl))
        else:
            xi = draw_xi(net, rng, p, xl)
        sub = ProxSubproblem(xi, xl, theta, h1)
        sol = solve_prox(sub, rule, SUBSOLVE_BUDGET)
        if not sol.certified:
            rec.uncertified(k + 1, sol.x, "sgd")
            break
        if audit is not None:
            audit("sgd", sub, sol.x, rule)
        xbar = sol.x
        if exact_estimators:
            zeta = sum(net.round_grad(Group.ALL, "h", xbar))
        else:
            zeta = draw_zeta(net, rng, p, xbar)
        x = x + eta * alpha * (xbar - x) - eta * zeta
        k += 1
        if monitor is not None:
            monitor(k, x, xbar)
        if rec.record(k, xbar):
            break
    else:
        rec.stop("budget")
    rec.trace.extras.update(params=asdict(params), outer_steps=k, final_x=x)
    return rec.trace


# ---------------------------------------------------------------------------
# variance reduction


@dataclass
class EpochResult:
    x: np.ndarray
    length: int
    certified: bool
    start: tuple


def vr_estimator(net, rng, p, x, start):
    """Control-variate estimate of ``grad (h - h1)(x)`` anchored at the epoch start.

    ``start`` is the pair ``(grad (f-f1)(x0), grad (g-g1)(x0))`` from the
    epoch's opening full round.
    """
    df0, dg0 = start
    if rng.bernoulli(p):
        xi = net.round_grad(Group.F, "f_minus_f1", x) / p
        zeta = df0 / p
    else:
        xi = net.round_grad(Group.G, "g_minus_g1", x) / (1.0 - p)
        zeta = dg0 / (1.0 - p)
    return xi - zeta + (df0 + dg0)


def run_vrcs_epoch(net, prof, params, rng, x0, local=None, start=None, audit=None):
    """One epoch of geometric length ``T ~ Geom(q)`` starting at ``x0``.

    Opens with a full round at ``x0`` unless ``start`` already holds its
    result; each of the ``T`` inner steps costs one round over the sampled
    group.
    """
    if local is None:
        local = LocalModel([net.server_f, net.server_g])
    theta, p, q = params.theta, params.p, params.q
    rule = vr_rule(prof.mu, theta)
    length = rng.geometric(q)
    if start is None:
        start = net.round_grad(Group.ALL, "h_minus_h1", x0)
    x = np.array(x0, dtype=np.float64)
    for _ in range(length):
        e = vr_estimator(net, rng, p, x, start)
        sub = ProxSubproblem(e, x, theta, local)
        sol = solve_prox(sub, rule, SUBSOLVE_BUDGET)
        if not sol.certified:
            return EpochResult(sol.x, length, False, start)
        if audit is not None:
            audit("vr", sub, sol.x, rule)
        x = sol.x
    return EpochResult(x, length, True, start)


def run_vrcs(problem, prof, params=None, seed=0, eps=1e-6, max_rounds=100_000, *,
             x0=None, x_star=None, max_epochs=None, audit=None):
    """Restarted variance-reduced epochs.

    The stopping test runs at every epoch boundary, right after the epoch's
    opening full round; an epoch cut short by that test is logged with
    length 0 in ``extras['epoch_lengths']``.
    """
    params, net, x0, rng, h1 = _setup(problem, prof, "vrcs", params, seed, x0, x_star)
    rec = _Recorder("vrcs", net, eps, max_rounds, x0)
    lengths = []
    x = x0.copy()
    k = 0
    while True:
        if max_epochs is not None and k >= max_epochs:
            rec.stop("budget")
            break
        start = net.round_grad(Group.ALL, "h_minus_h1", x)
        if rec.record(k, x):
            lengths.append(0)
            break
        res = run_vrcs_epoch(net, prof, params, rng, x, h1, start=start, audit=audit)
        lengths.append(res.length)
        k += 1
        if not res.certified:
            rec.uncertified(k, res.x, "vr")
            break
        x = res.x
    rec.trace.extras.update(params=asdict(params), epoch_lengths=lengths)
    return rec.trace


def accvrcs_z_update(z, G, y, alpha, mu):
    """Closed-form ``argmin ||z' - z||^2/(2 alpha) + <G, z'> + mu/4 ||z' - y||^2``."""
    return (z / alpha - G + 0.5 * mu * y) / (1.0 / alpha + 0.5 * mu)


def run_acc_vrcs(problem, prof, params=None, seed=0, eps=1e-6, max_rounds=100_000, *,
                 x0=None, x_star=None, max_outer=None, audit=None):
    """Accelerated variance-reduced method built on the single-epoch routine.

    Per outer step: one full round at the combined point (shared with the
    epoch start), the epoch's sampled rounds, and one full round at the
    epoch output for the gradient-mapping term.
    """
    params, net, x0, rng, h1 = _setup(problem, prof, "acc_vrcs", params, seed, x0, x_star)
    theta, q, tau, alpha, mu = params.theta, params.q, params.tau, params.alpha, prof.mu
    rec = _Recorder("acc_vrcs", net, eps, max_rounds, x0)
    lengths = []
    y, z = x0.copy(), x0.copy()
    if rec.record(0, y):
        rec.trace.extras.update(params=asdict(params), epoch_lengths=lengths)
        return rec.trace
    k = 0
    while max_outer is None or k < max_outer:
        x = tau * z + (1.0 - tau) * y
        start = net.round_grad(Group.ALL, "h_minus_h1", x)
        res = run_vrcs_epoch(net, prof, params, rng, x, h1, start=start, audit=audit)
        lengths.append(res.length)
        k += 1
        if not res.certified:
            rec.uncertified(k, res.x, "vr")
            break
        y_new = res.x
        dfy, dgy = net.round_grad(Group.ALL, "h_minus_h1", y_new)
        t = (start[0] + start[1]) - (dfy + dgy)
        G = q * (t + (x - y_new) / theta)
        z = accvrcs_z_update(z, G, y_new, alpha, mu)
        y = y_new
        if rec.record(k, y):
            break
    else:
        rec.stop("budget")
    rec.trace.extras.update(params=asdict(params), epoch_lengths=lengths)
    return rec.trace


# ---------------------------------------------------------------------------
# composite accelerated extragradient


def inner_cap(params, delta_g, rho):
    """Inner-loop iteration cap ``ceil(C sqrt(theta_f delta_g) log(1/rho))``, at least 10."""
    return max(10, math.ceil(INNER_CAP_CONSTANT * math.sqrt(params.theta_f * delta_g)
                             * max(1.0, math.log(1.0 / rho))))


def _sliding_solve(net, params, delta_g, lin, anchor, base_local, audit=None):
    """Accelerated extragradient over ``M_g`` for the outer subproblem.

    Minimises ``A(x) = <lin, x> + ||x - anchor||^2/(2 theta_f) + f1(x) + g(x)``
    until the outer criterion's sufficient test holds.  Each step spends two
    rounds over ``M_g``: ``grad (g - g1)`` at the combined point and
    ``grad g`` at the inner subproblem solution.
    Returns ``(x, certified, inner_steps)``.
    """
    inner = params.inner
    theta_f = params.theta_f
    q_local = base_local.with_prox(ProxTerm(lin, anchor, theta_f))
    # grad^2 g <= grad^2 g1 + delta_g I
    L_A = q_local.lam_max + delta_g
    c_A = outer_aeg_rule(params.delta).c
    rho = math.sqrt(c_A) / L_A
    rule_b = inner_aeg_rule(inner.theta_g)
    cap = inner_cap(params, delta_g, rho)
    x = anchor.copy()
    xbar = anchor.copy()
    tol = None
    for t in range(cap):
        xl = inner.tau_g * x + (1.0 - inner.tau_g) * xbar
        dg_l = net.round_grad(Group.G, "g_minus_g1", xl)
        if tol is None:
            # x_0 = xbar_0 = anchor, so this round also yields grad A(anchor)
            g_anchor = q_local.grad(anchor) + dg_l
            tol = rho * float(np.linalg.norm(g_anchor))
        sub = ProxSubproblem(dg_l, xl, inner.theta_g, q_local)
        sol = solve_prox(sub, rule_b, SUBSOLVE_BUDGET)
        if not sol.certified:
            return sol.x, False, t + 1
        if audit is not None:
            audit("inner", sub, sol.x, rule_b)
        xbar = sol.x
        g_full = net.round_grad(Group.G, "g", xbar)
        grad_a = lin + (xbar - anchor) / theta_f + net.grad_f1(xbar) + g_full
        x = x + inner.eta_g * inner.alpha_g * (xbar - x) - inner.eta_g * grad_a
        if float(np.linalg.norm(grad_a)) <= tol:
            if audit is not None:
                audit("outer", dict(linear=lin, anchor=anchor, theta=theta_f), xbar,
                      outer_aeg_rule(params.delta))
            return xbar, True, t + 1
    return xbar, False, cap


def run_c_aeg(problem, prof, params=None, eps=1e-6, max_rounds=100_000, baseline=False, *,
              x0=None, x_star=None, max_outer=None, audit=None):
    """Composite accelerated extragradient (deterministic).

    ``baseline=True`` runs plain accelerated extragradient on ``h`` with
    ``delta = delta_f + delta_g``: both gradient requests are full rounds and
    the subproblem in ``h1`` is solved on the server.
    """
    algo = "aeg" if baseline else "c_aeg"
    params, net, x0, _, h1 = _setup(problem, prof, algo, params, None, x0, x_star)
    if not baseline and params.inner is None:
        raise ParameterError("composite run needs inner-loop parameters")
    theta, tau, eta, alpha = params.theta_f, params.tau_f, params.eta_f, params.alpha_f
    server_local = LocalModel([net.server_f, net.server_g])
    rec = _Recorder(algo, net, eps, max_rounds, x0)
    x, xbar = x0.copy(), x0.copy()
    inner_steps = []
    if rec.record(0, xbar):
        rec.trace.extras.update(params=asdict(params), inner_steps=inner_steps)
        return rec.trace
    k = 0
    while max_outer is None or k < max_outer:
        xl = tau * x + (1.0 - tau) * xbar
        if baseline:
            lin = sum(net.round_grad(Group.ALL, "h_minus_h1", xl))
            rule = outer_aeg_rule(params.delta)
            sub = ProxSubproblem(lin, xl, theta, h1)
            sol = solve_prox(sub, rule, SUBSOLVE_BUDGET)
            new_xbar, ok, steps = sol.x, sol.certified, 0
            if ok and audit is not None:
                audit("outer", sub, sol.x, rule)
        else:
            lin = net.round_grad(Group.F, "f_minus_f1", xl)
            new_xbar, ok, steps = _sliding_solve(net, params, prof.delta_g, lin, xl, server_local, audit)
        inner_steps.append(steps)
        k += 1
        if not ok:
            rec.uncertified(k, new_xbar, "outer")
            break
        xbar = new_xbar
        grad_h = sum(net.round_grad(Group.ALL, "h", xbar))
        x = x + eta * alpha * (xbar - x) - eta * grad_h
        if rec.record(k, xbar):
            break
    else:
        rec.stop("budget")
    rec.trace.extras.update(params=asdict(params), inner_steps=inner_steps)
    return rec.trace


def run_algorithm(name, problem, prof, params=None, seed=0, eps=1e-6, max_rounds=100_000, **kw):
    """Dispatch by name; ``aeg`` is the no-split baseline."""
    if name == "sc_aeg":
        return run_sc_aeg(problem, prof, params, seed, eps, max_rounds, **kw)
    if name == "vrcs":
        return run_vrcs(problem, prof, params, seed, eps, max_rounds, **kw)
    if name == "acc_vrcs":
        return run_acc_vrcs(problem, prof, params, seed, eps, max_rounds, **kw)
    if name == "c_aeg":
        return run_c_aeg(problem, prof, params, eps, max_rounds, baseline=False, **kw)
    if name == "aeg":
        return run_c_aeg(problem, prof, params, eps, max_rounds, baseline=True, **kw)
    raise ParameterError(f"unknown algorithm {name!r}")
