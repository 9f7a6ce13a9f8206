"""Composite distributed problems and their similarity constants.

A :class:`CompositeProblem` splits the nodes into two groups.  ``f`` is the
average of the f-oracles over ``M_f`` (server's ``f1`` first, then the
clients) and ``g`` likewise over ``M_g``; the objective is ``h = f + g`` and
the server's local objective is ``h1 = f1 + g1``.
"""

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import ConstructionError, InputError, ModeError, ParameterError, PartitionError
from .numerics import as_vector, min_eigenvalue, solve_spd, spectral_norm

GROUP_SELECTORS = (
    "f", "g", "h",
    "f1", "g1", "h1",
    "f_minus_f1", "g_minus_g1", "h_minus_h1",
)


class ComponentOracle:
    """Smooth function of ``x in R^d`` with value, gradient and Hessian."""

    d: int

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    @property
    def is_quadratic(self):
        return False

    @property
    def smoothness(self):
        """Upper bound on the spectral norm of the Hessian."""
        raise NotImplementedError

    @property
    def curvature_lower(self):
        """Lower bound on the smallest Hessian eigenvalue (may be negative)."""
        raise NotImplementedError


class QuadraticOracle(ComponentOracle):
    """``x -> 0.5 x'Ax - b'x``."""

    def __init__(self, A, b):
        A = np.array(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InputError("quadratic oracle needs a square matrix")
        if not np.all(np.isfinite(A)):
            raise InputError("quadratic matrix has non-finite entries")
        self.A = 0.5 * (A + A.T)
        self.d = self.A.shape[0]
        self.b = as_vector(b, self.d).copy()
        self.A.setflags(write=False)
        self.b.setflags(write=False)

    def value(self, x):
        return 0.5 * float(x @ self.A @ x) - float(self.b @ x)

    def grad(self, x):
        return self.A @ x - self.b

    def hessian(self, x=None):
        return self.A

    @property
    def is_quadratic(self):
        return True

    @cached_property
    def smoothness(self):
        return spectral_norm(self.A)

    @cached_property
    def curvature_lower(self):
        return min_eigenvalue(self.A)

    def __repr__(self):
        return f"QuadraticOracle(d={self.d})"


class LogisticOracle(ComponentOracle):
    """Weighted mean logistic loss plus ``(l2/2)||x||^2``.

    ``value(x) = weight/n * sum_j log(1 + exp(-y_j <a_j, x>)) + l2/2 ||x||^2``;
    with zero rows only the regulariser remains.
    """

    def __init__(self, features, labels, l2, weight=1.0):
        X = np.array(features, dtype=np.float64)
        y = np.array(labels, dtype=np.float64).reshape(-1)
        if X.ndim != 2:
            raise InputError("features must be a 2-d array")
        if X.shape[0] != y.shape[0]:
            raise InputError("features and labels differ in length")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InputError("non-finite data rows")
        if y.size and not np.all(np.abs(y) == 1.0):
            raise InputError("labels must be -1 or +1")
        if l2 < 0 or weight < 0:
            raise InputError("l2 and weight must be non-negative")
        self.X = np.ascontiguousarray(X)
        self.y = np.ascontiguousarray(y)
        self.l2 = float(l2)
        self.weight = float(weight)
        self.d = X.shape[1]
        self.X.setflags(write=False)
        self.y.setflags(write=False)

    @property
    def n(self):
        return self.X.shape[0]

    def value(self, x):
        return float(_kernels.logistic_value(self.X, self.y, np.ascontiguousarray(x), self.weight, self.l2))

    def grad(self, x):
        return _kernels.logistic_grad(self.X, self.y, np.ascontiguousarray(x), self.weight, self.l2)

    def hessian(self, x):
        return _kernels.logistic_hessian(self.X, self.y, np.ascontiguousarray(x), self.weight, self.l2)

    @cached_property
    def smoothness(self):
        if self.n == 0:
            return self.l2
        gram = self.X.T @ self.X
        return self.weight * spectral_norm(gram) / (4.0 * self.n) + self.l2

    @property
    def curvature_lower(self):
        return self.l2

    def __repr__(self):
        return f"LogisticOracle(n={self.n}, d={self.d}, l2={self.l2}, weight={self.weight})"


class ProxTerm(ComponentOracle):
    """``x -> <linear, x> + ||x - anchor||^2 / (2 theta)``."""

    def __init__(self, linear, anchor, theta):
        if not theta > 0:
            raise ParameterError("theta must be positive")
        self.linear = as_vector(linear)
        self.anchor = as_vector(anchor, self.linear.shape[0])
        self.theta = float(theta)
        self.d = self.linear.shape[0]

    def value(self, x):
        r = x - self.anchor
        return float(self.linear @ x) + float(r @ r) / (2.0 * self.theta)

    def grad(self, x):
        return self.linear + (x - self.anchor) / self.theta

    def hessian(self, x=None):
        return np.eye(self.d) / self.theta

    @property
    def is_quadratic(self):
        return True

    @property
    def smoothness(self):
        return 1.0 / self.theta

    @property
    def curvature_lower(self):
        return 1.0 / self.theta


class CombinedOracle(ComponentOracle):
    """Non-negative weighted sum of oracles sharing one dimension."""

    def __init__(self, parts, weights=None):
        parts = list(parts)
        if not parts:
            raise InputError("combined oracle needs at least one part")
        d = parts[0].d
        if any(p.d != d for p in parts):
            raise InputError("oracle dimensions differ")
        if weights is None:
            weights = [1.0] * len(parts)
        if len(weights) != len(parts) or any(w < 0 for w in weights):
            raise InputError("weights must be non-negative, one per part")
        self.parts = parts
        self.weights = [float(w) for w in weights]
        self.d = d

    @classmethod
    def mean(cls, parts):
        parts = list(parts)
        return cls(parts, [1.0 / len(parts)] * len(parts))

    def value(self, x):
        return sum(w * p.value(x) for w, p in zip(self.weights, self.parts))

    def grad(self, x):
        out = np.zeros(self.d)
        for w, p in zip(self.weights, self.parts):
            out += w * p.grad(x)
        return out

    def hessian(self, x=None):
        out = np.zeros((self.d, self.d))
        for w, p in zip(self.weights, self.parts):
            out += w * p.hessian(x)
        return out

    @property
    def is_quadratic(self):
        return all(p.is_quadratic for p in self.parts)

    @cached_property
    def smoothness(self):
        if self.is_quadratic:
            return spectral_norm(self.hessian())
        return sum(w * p.smoothness for w, p in zip(self.weights, self.parts))

    @cached_property
    def curvature_lower(self):
        if self.is_quadratic:
            return min_eigenvalue(self.hessian())
        return sum(w * p.curvature_lower for w, p in zip(self.weights, self.parts))


def grad_component(o, x):
    """Gradient of a single oracle with a dimension check."""
    x = as_vector(x, o.d)
    return o.grad(x)


@dataclass(frozen=True)
class CompositeProblem:
    """Server oracles ``f1``, ``g1`` plus the client oracles of each group."""

    server_f: ComponentOracle
    server_g: ComponentOracle
    clients_f: tuple = ()
    clients_g: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "clients_f", tuple(self.clients_f))
        object.__setattr__(self, "clients_g", tuple(self.clients_g))
        d = self.server_f.d
        for o in (self.server_g, *self.clients_f, *self.clients_g):
            if o.d != d:
                raise InputError("all oracles must share the dimension")

    @property
    def d(self):
        return self.server_f.d

    @property
    def f_oracles(self):
        return (self.server_f,) + self.clients_f

    @property
    def g_oracles(self):
        return (self.server_g,) + self.clients_g

    @property
    def m_f(self):
        return len(self.f_oracles)

    @property
    def m_g(self):
        return len(self.g_oracles)

    @property
    def is_quadratic(self):
        return all(o.is_quadratic for o in self.f_oracles + self.g_oracles)

    def group_oracle(self, which):
        """Oracle object for ``f``, ``g``, ``h``, ``f1``, ``g1`` or ``h1``."""
        if which == "f":
            return CombinedOracle.mean(self.f_oracles)
        if which == "g":
            return CombinedOracle.mean(self.g_oracles)
        if which == "h":
            return CombinedOracle([self.group_oracle("f"), self.group_oracle("g")])
        if which == "f1":
            return self.server_f
        if which == "g1":
            return self.server_g
        if which == "h1":
            return CombinedOracle([self.server_f, self.server_g])
        raise InputError(f"unknown group selector {which!r}")

    def value(self, which, x):
        x = as_vector(x, self.d)
        return self.group_oracle(which).value(x)

    def hessian_group(self, which, x=None):
        base, _, sub = which.partition("_minus_")
        H = self.group_oracle(base).hessian(x)
        if sub:
            H = H - self.group_oracle(sub).hessian(x)
        return H


def _mean_grad(oracles, x):
    out = np.zeros(x.shape[0])
    for o in oracles:
        out += o.grad(x)
    return out / len(oracles)


def grad_group(p, which, x):
    """Exact group gradients: averages over ``M_f``/``M_g`` and differences."""
    x = as_vector(x, p.d)
    if which == "f":
        return _mean_grad(p.f_oracles, x)
    if which == "g":
        return _mean_grad(p.g_oracles, x)
    if which == "h":
        return _mean_grad(p.f_oracles, x) + _mean_grad(p.g_oracles, x)
    if which == "f1":
        return p.server_f.grad(x)
    if which == "g1":
        return p.server_g.grad(x)
    if which == "h1":
        return p.server_f.grad(x) + p.server_g.grad(x)
    if which == "f_minus_f1":
        return _mean_grad(p.f_oracles, x) - p.server_f.grad(x)
    if which == "g_minus_g1":
        return _mean_grad(p.g_oracles, x) - p.server_g.grad(x)
    if which == "h_minus_h1":
        return grad_group(p, "f_minus_f1", x) + grad_group(p, "g_minus_g1", x)
    raise InputError(f"unknown group selector {which!r}")


# ---------------------------------------------------------------------------
# synthetic quadratics


def _random_orthogonal(rng, d, k=None):
    k = d if k is None else k
    q, r = np.linalg.qr(rng.standard_normal((d, k)))
    return q * np.sign(np.diag(r))


def _zero_sum_symmetric(rng, d, count, scale):
    if count < 2 or scale == 0:
        return [np.zeros((d, d)) for _ in range(count)]
    mats = []
    for _ in range(count):
        w = rng.standard_normal((d, d))
        mats.append((w + w.T) / (2.0 * math.sqrt(d)))
    mean = sum(mats) / count
    return [scale * (m - mean) for m in mats]


def make_quadratic_family(d, m_f, m_g, ratio, mu, seed, delta_f=1.0, *,
                          L=1.0, rank=None, client_spread=0.5, interpolate=False):
    """Quadratic composite problem with prescribed ``mu``, ``delta_f`` and ``delta_g = ratio * delta_f``.

    The f- and g-group mean Hessians share an eigenbasis with spectra in
    ``[mu/2, L]`` and a common bottom eigenvector, so ``h`` has smallest
    eigenvalue exactly ``mu``.  The server Hessians are the group means
    plus ``delta * U`` for a random rank-``rank`` orthogonal projector ``U``;
    the clients absorb ``-delta * U / (m - 1)`` plus zero-sum symmetric noise
    of size ``client_spread * delta``.  Group means (hence ``mu``) and the
    server gaps are therefore exact by construction.

    Since ``U`` is PSD the server components stay convex, as required by the
    extragradient method's outer subproblem.  With ``interpolate=True`` the
    linear terms are chosen so ``f``, ``f1``, ``g`` and ``g1`` are all
    stationary at one common point (zero estimator variance at the optimum).
    """
    if d < 2:
        raise ConstructionError("d must be at least 2")
    if m_f < 1 or m_g < 1:
        raise ConstructionError("each group needs at least the server")
    if not mu > 0:
        raise ConstructionError("mu must be positive")
    if ratio < 1:
        raise ConstructionError("ratio delta_g/delta_f must be >= 1")
    if delta_f < 0:
        raise ConstructionError("delta_f must be non-negative")
    if L <= mu / 2:
        raise ConstructionError("L must exceed mu/2")
    delta_g = ratio * delta_f
    if delta_f > 0 and m_f == 1:
        raise ConstructionError("a single-node f group cannot have a positive similarity gap")
    if delta_g > 0 and m_g == 1:
        raise ConstructionError("a single-node g group cannot have a positive similarity gap")

    rng = np.random.default_rng(seed)
    Q = _random_orthogonal(rng, d)
    lam_f = np.geomspace(mu / 2.0, L, d)
    lam_g = lam_f.copy()
    lam_g[1:] = rng.permutation(lam_f[1:])
    F = (Q * lam_f) @ Q.T
    G = (Q * lam_g) @ Q.T
    rank = max(1, d // 4) if rank is None else int(rank)
    Vf = _random_orthogonal(rng, d, rank)
    Vg = _random_orthogonal(rng, d, rank)
    Uf = Vf @ Vf.T
    Ug = Vg @ Vg.T

    def _group(mean_h, U, delta, m):
        server = mean_h + delta * U
        noise = _zero_sum_symmetric(rng, d, m - 1, client_spread * delta)
        clients = [mean_h - delta * U / (m - 1) + n for n in noise]
        return [server] + clients

    hess_f = _group(F, Uf, delta_f, m_f)
    hess_g = _group(G, Ug, delta_g, m_g)

    x_star = rng.standard_normal(d)

    def _linear(hess):
        if interpolate:
            shifts = [np.zeros(d)] + [rng.standard_normal(d) for _ in hess[1:]]
            if len(shifts) > 1:
                cmean = sum(shifts[1:]) / (len(shifts) - 1)
                shifts = [shifts[0]] + [s - cmean for s in shifts[1:]]
            return [H @ x_star + s for H, s in zip(hess, shifts)]
        return [rng.standard_normal(d) for _ in hess]

    b_f = _linear(hess_f)
    b_g = _linear(hess_g)
    f_or = [QuadraticOracle(H, b) for H, b in zip(hess_f, b_f)]
    g_or = [QuadraticOracle(H, b) for H, b in zip(hess_g, b_g)]
    meta = dict(kind="quadratic", d=d, m_f=m_f, m_g=m_g, ratio=ratio, mu=mu,
                delta_f=delta_f, delta_g=delta_g, seed=seed, interpolate=interpolate)
    return CompositeProblem(f_or[0], g_or[0], f_or[1:], g_or[1:], meta=meta)


# ---------------------------------------------------------------------------
# logistic regression with a disparity index


@dataclass(frozen=True)
class Dataset:
    """Labelled rows tagged with their class group (``'f'`` or ``'g'``)."""

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray

    def __post_init__(self):
        if not (len(self.features) == len(self.labels) == len(self.groups)):
            raise InputError("dataset columns differ in length")
        if not set(np.unique(self.groups)) <= {"f", "g"}:
            raise InputError("group tags must be 'f' or 'g'")

    @property
    def d(self):
        return self.features.shape[1]


def make_two_gaussian_dataset(n, d, seed, separation=1.5, g_scale=2.0):
    """Two class groups, each a pair of Gaussian blobs labelled -1/+1.

    Group ``f`` separates along one random direction with unit covariance;
    group ``g`` along an orthogonal direction with an anisotropic covariance
    whose scale reaches ``g_scale``, so the two groups' Hessians differ.
    """
    rng = np.random.default_rng(seed)
    dirs = _random_orthogonal(rng, d, 2)
    n_f = n // 2
    n_g = n - n_f
    y_f = np.where(np.arange(n_f) % 2 == 0, 1.0, -1.0)
    y_g = np.where(np.arange(n_g) % 2 == 0, 1.0, -1.0)
    x_f = rng.standard_normal((n_f, d)) + separation * y_f[:, None] * dirs[:, 0]
    scales = np.linspace(1.0, g_scale, d)
    x_g = rng.standard_normal((n_g, d)) * scales + separation * y_g[:, None] * dirs[:, 1]
    X = np.vstack([x_f, x_g]) / math.sqrt(d)
    y = np.concatenate([y_f, y_g])
    groups = np.array(["f"] * n_f + ["g"] * n_g)
    return Dataset(X, y, groups)


def load_dataset_csv(path):
    """Read ``label,feature_1,...,feature_d`` rows with a ``group`` column.

    The header must name a ``label`` and a ``group`` column; all remaining
    columns are features in file order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration as exc:
            raise InputError(f"{path}: empty file") from exc
        if "label" not in header or "group" not in header:
            raise InputError(f"{path}: header needs 'label' and 'group' columns")
        li, gi = header.index("label"), header.index("group")
        fcols = [i for i in range(len(header)) if i not in (li, gi)]
        X, y, g = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                label = float(row[li])
                feats = [float(row[i]) for i in fcols]
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            if label not in (-1.0, 1.0):
                raise InputError(f"{path}:{lineno}: label must be -1 or +1")
            tag = row[gi].strip()
            if tag not in ("f", "g"):
                raise InputError(f"{path}:{lineno}: group must be 'f' or 'g'")
            X.append(feats)
            y.append(label)
            g.append(tag)
    return Dataset(np.array(X, dtype=np.float64), np.array(y), np.array(g))


def make_logistic_split(dataset, kappa, m_f, m_g, l2, seed, server_size=None):
    """Distribute a two-group dataset over a star network.

    The server draws ``server_size`` rows of which a fraction ``kappa``
    comes from group ``f``.  Its loss is the mean over all of its rows, so
    ``f1`` carries weight ``kappa`` and ``g1`` weight ``1 - kappa``.  The
    remaining ``f`` rows are split disjointly over the ``m_f - 1`` f-clients
    and likewise for ``g``.  Every oracle carries ``l2/2`` regularisation so
    that ``h`` has curvature at least ``l2``.
    """
    if not 0.5 <= kappa <= 1.0:
        raise ParameterError("kappa must lie in [0.5, 1]")
    if m_f < 1 or m_g < 1:
        raise ParameterError("each group needs at least the server")
    rng = np.random.default_rng(seed)
    idx_f = rng.permutation(np.flatnonzero(dataset.groups == "f"))
    idx_g = rng.permutation(np.flatnonzero(dataset.groups == "g"))
    if server_size is None:
        server_size = (len(idx_f) + len(idx_g)) // (m_f + m_g)
    n_sf = int(round(kappa * server_size))
    n_sg = server_size - n_sf
    if n_sf < 1 or n_sf > len(idx_f) - (m_f - 1) or n_sg > len(idx_g) - (m_g - 1):
        raise PartitionError(
            f"cannot give the server {n_sf} f-rows and {n_sg} g-rows and every client at least one row"
        )
    X, y = dataset.features, dataset.labels
    half = 0.5 * l2
    server_f = LogisticOracle(X[idx_f[:n_sf]], y[idx_f[:n_sf]], half, weight=n_sf / server_size)
    server_g = LogisticOracle(X[idx_g[:n_sg]], y[idx_g[:n_sg]], half, weight=n_sg / server_size)

    def _clients(rest, m):
        if m == 1:
            return []
        return [LogisticOracle(X[part], y[part], half) for part in np.array_split(rest, m - 1)]

    meta = dict(kind="logistic", kappa=kappa, m_f=m_f, m_g=m_g, l2=l2, seed=seed,
                server_rows_f=n_sf, server_rows_g=n_sg)
    return CompositeProblem(server_f, server_g,
                            _clients(idx_f[n_sf:], m_f), _clients(idx_g[n_sg:], m_g), meta=meta)


# ---------------------------------------------------------------------------
# similarity constants


@dataclass(frozen=True)
class SimilarityProfile:
    """``mu``, ``delta_f``, ``delta_g`` with their provenance.

    ``raw_*`` hold the measured values before clamping to the strict order
    ``mu < delta_f <= delta_g`` that the parameter tuning needs.
    """

    mu: float
    delta_f: float
    delta_g: float
    provenance: str = "exact"
    points: int = 0
    radius: float = 0.0
    safety: float = 1.0
    raw_delta_f: float = float("nan")
    raw_delta_g: float = float("nan")

    @property
    def ordered(self):
        return 0 < self.mu < self.delta_f <= self.delta_g

    def clamped(self):
        df = max(self.delta_f, self.mu * (1.0 + 1e-6))
        dg = max(self.delta_g, df * (1.0 + 1e-12))
        return SimilarityProfile(self.mu, df, dg, self.provenance, self.points, self.radius,
                                 self.safety, self.raw_delta_f, self.raw_delta_g)


def _mean_hessian(oracles, x):
    return sum(o.hessian(x) for o in oracles) / len(oracles)


def make_profile(p, mode="exact", mu_hint=None, *, points=32, radius=1.0, safety=1.5, seed=0):
    """Similarity constants of ``p``, returned clamped to ``mu < delta_f <= delta_g``.

    ``exact`` (quadratics only): spectral norms of the server-minus-mean
    Hessian differences, ``mu`` the smallest eigenvalue of the mean Hessian
    of ``h``.  ``grid``: maximum of the same spectral norms over the origin
    and ``points - 1`` seeded points in the ball of ``radius``, multiplied by
    ``safety``; ``mu`` is the sum of per-group curvature lower bounds.
    ``mu_hint`` overrides the computed ``mu``.
    """
    if mode == "exact":
        if not p.is_quadratic:
            raise ModeError("exact profile requires quadratic oracles")
        Hf = _mean_hessian(p.f_oracles, None)
        Hg = _mean_hessian(p.g_oracles, None)
        delta_f = spectral_norm(p.server_f.hessian() - Hf)
        delta_g = spectral_norm(p.server_g.hessian() - Hg)
        mu = min_eigenvalue(Hf + Hg)
        prof = SimilarityProfile(mu, delta_f, delta_g, "exact",
                                 raw_delta_f=delta_f, raw_delta_g=delta_g)
    elif mode == "grid":
        if points < 1 or radius < 0:
            raise ParameterError("grid needs points >= 1 and radius >= 0")
        rng = np.random.default_rng(seed)
        xs = [np.zeros(p.d)]
        for _ in range(points - 1):
            u = rng.standard_normal(p.d)
            u *= radius * rng.random() ** (1.0 / p.d) / np.linalg.norm(u)
            xs.append(u)
        delta_f = delta_g = 0.0
        for x in xs:
            delta_f = max(delta_f, spectral_norm(p.server_f.hessian(x) - _mean_hessian(p.f_oracles, x)))
            delta_g = max(delta_g, spectral_norm(p.server_g.hessian(x) - _mean_hessian(p.g_oracles, x)))
        mu = (np.mean([o.curvature_lower for o in p.f_oracles])
              + np.mean([o.curvature_lower for o in p.g_oracles]))
        prof = SimilarityProfile(float(mu), safety * delta_f, safety * delta_g, "grid_estimate",
                                 points=points, radius=radius, safety=safety,
                                 raw_delta_f=delta_f, raw_delta_g=delta_g)
    else:
        raise ModeError(f"unknown profile mode {mode!r}")
    if mu_hint is not None:
        prof = SimilarityProfile(float(mu_hint), prof.delta_f, prof.delta_g, prof.provenance,
                                 prof.points, prof.radius, prof.safety,
                                 prof.raw_delta_f, prof.raw_delta_g)
    if not prof.mu > 0:
        raise ParameterError(f"profile mu must be positive, got {prof.mu}")
    return prof.clamped()


def solve_reference(p, tol=1e-12, max_iter=100):
    """High-accuracy minimiser of ``h`` (direct solve or damped Newton)."""
    h = p.group_oracle("h")
    if p.is_quadratic:
        H = h.hessian()
        return solve_spd(H, -h.grad(np.zeros(p.d)))
    x = np.zeros(p.d)
    for _ in range(max_iter):
        g = h.grad(x)
        if np.linalg.norm(g) <= tol:
            break
        step = solve_spd(h.hessian(x), g)
        t, fx = 1.0, h.value(x)
        while h.value(x - t * step) > fx - 0.25 * t * float(g @ step) and t > 1e-12:
            t *= 0.5
        x = x - t * step
    return x
