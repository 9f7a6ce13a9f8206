"""Dense linear-algebra primitives and finite-difference oracles.

Everything here works on float64 numpy arrays; vectors are 1-d, symmetric
matrices are 2-d square arrays.
"""

import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .errors import DefinitenessError, InputError, NumericalError


def as_vector(x, d=None):
    """Return ``x`` as a finite float64 vector, optionally checking length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise InputError(f"expected a vector, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise InputError(f"expected length {d}, got {v.shape[0]}")
    if not np.isfinite(v).all():
        raise InputError("vector has non-finite entries")
    return v


def as_symmetric(m, atol=1e-12):
    """Validate a square finite matrix and return its exactly symmetrised copy."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > atol * scale:
        raise InputError("matrix is not symmetric")
    return 0.5 * (a + a.T)


def _start_vector(d):
    # all-ones plus a fixed, non-symmetric perturbation
    return np.ones(d) + 1e-2 * np.sin(np.arange(1, d + 1, dtype=np.float64))


def spectral_norm(m, tol=1e-12, separation=1e-3):
    """Operator 2-norm of a symmetric matrix by power iteration.

    The iteration runs on ``t = (m @ m)^(P/2)``, Frobenius-normalised, with
    ``P`` raised by repeated squaring until one eigenvalue dominates, i.e.
    ``trace(t) <= 1 + separation`` (``trace(t) ~ 1 + (λ2/λ1)^P``).  Squaring makes the dominant
    eigenvalue positive (a ``±λ`` pair never stalls) and raises every
    eigenvalue ratio to the power ``P``, so after it the power steps
    converge in a handful of iterations even for near-degenerate spectra.
    Eigenvalues still unseparated after ``P >= 7/tol`` differ from the top
    one by less than ``tol`` relatively, so the estimate is accurate anyway.
    Power steps are capped at ``10 d log(1/tol) + 10``.
    """
    if not tol > 0:
        raise InputError("tol must be positive")
    a = as_symmetric(m)
    d = a.shape[0]
    if d == 0 or not np.any(a):
        return 0.0
    amax = float(np.max(np.abs(a)))
    a = a / amax
    t = a @ a
    c = float(np.linalg.norm(t))
    t = t / c
    log_scale = math.log(c)
    power = 2.0  # t = a^power / exp(log_scale)
    separated = False
    while power < 7.0 / tol:
        if float(np.trace(t)) <= 1.0 + separation:
            separated = True
            break
        t = t @ t
        c = float(np.linalg.norm(t))
        t = t / c
        log_scale = 2.0 * log_scale + math.log(c)
        power *= 2.0
    cap = int(math.ceil(10 * d * math.log(1.0 / min(tol, 0.5)))) + 10
    if not separated:
        # a cluster within relative tol of the top eigenvalue remains; any
        # vector in it gives an accurate estimate, so a short burst suffices
        cap = min(cap, 64)
    rho, _, converged = _kernels.power_iteration_psd(t, _start_vector(d), tol, cap)
    est = amax * math.exp((math.log(rho) + log_scale) / power) if rho > 0 else 0.0
    if separated and not converged:
        raise NumericalError(f"power iteration did not converge in {cap} steps", estimate=est)
    return est


def min_eigenvalue(m):
    """Smallest eigenvalue of a symmetric matrix (LAPACK ``eigvalsh``)."""
    a = as_symmetric(m)
    return float(np.linalg.eigvalsh(a)[0])


def solve_spd(a, b, tol=1e-12):
    """Solve ``a x = b`` for symmetric positive definite ``a`` via Cholesky.

    One step of iterative refinement is applied if the first solve misses
    the residual target ``||a x - b|| <= tol * ||b||``.
    """
    a = as_symmetric(a)
    b = as_vector(b, a.shape[0])
    try:
        factor = cho_factor(a)
    except np.linalg.LinAlgError as exc:
        raise DefinitenessError("matrix is not positive definite") from exc

    def _solve(rhs):
        return cho_solve(factor, rhs)

    x = _solve(b)
    bn = float(np.linalg.norm(b))
    r = b - a @ x
    if np.linalg.norm(r) > tol * bn:
        x = x + _solve(r)
    return x


def fd_gradient(f, x, h=1e-6):
    """Central-difference gradient of a scalar field ``f`` at ``x``."""
    if not h > 0:
        raise InputError("step h must be positive")
    x = as_vector(x)
    g = np.empty_like(x)
    e = np.zeros_like(x)
    for i in range(x.shape[0]):
        e[i] = h
        fp = float(f(x + e))
        fm = float(f(x - e))
        e[i] = 0.0
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise InputError(f"non-finite function value near coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return g


def bregman(value, grad, x, y):
    """``D(x, y) = value(x) - value(y) - <grad(y), x - y>``."""
    x = as_vector(x)
    y = as_vector(y, x.shape[0])
    return float(value(x)) - float(value(y)) - float(grad(y) @ (x - y))
