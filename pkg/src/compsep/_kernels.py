"""Hot numeric kernels.

Each kernel is written once in numba-compatible numpy and is either compiled
with ``numba.njit`` or used as-is.  Set ``COMPSEP_DISABLE_NUMBA=1`` to force
the pure-numpy path (the numba path is also skipped when numba is missing).
"""

import os

import numpy as np


def _numba_requested():
    flag = os.environ.get("COMPSEP_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("1", "true", "yes", "on")


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_ENABLED = _numba is not None and _numba_requested()


def _jit(fn):
    if NUMBA_ENABLED:
        return _numba.njit(cache=True, fastmath=False)(fn)
    return fn


def _agd_quadratic(H, c, x0, L, m, tol, max_iter):
    # Nesterov AGD on 0.5 x'Hx - c'x with gradient-based restart.
    # Returns (best point, iterations used, gradient norm at best point).
    x = x0.copy()
    y = x0.copy()
    g = H @ y - c
    gn = np.sqrt(np.dot(g, g))
    best = y.copy()
    best_gn = gn
    if gn <= tol:
        return best, 0, best_gn
    r = np.sqrt(m / L) if m > 0.0 else 0.0
    beta = (1.0 - r) / (1.0 + r)
    for k in range(1, max_iter + 1):
        x_new = y - g / L
        if np.dot(g, x_new - x) > 0.0:
            y = x_new.copy()
        else:
            y = x_new + beta * (x_new - x)
        x = x_new
        g = H @ y - c
        gn = np.sqrt(np.dot(g, g))
        if gn < best_gn:
            best_gn = gn
            best = y.copy()
        if gn <= tol:
            return best, k, best_gn
    return best, max_iter, best_gn


def _logistic_value(X, y, w, weight, l2):
    n = X.shape[0]
    reg = 0.5 * l2 * np.dot(w, w)
    if n == 0:
        return reg
    z = y * (X @ w)
    loss = np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return weight * np.sum(loss) / n + reg


def _logistic_grad(X, y, w, weight, l2):
    n = X.shape[0]
    if n == 0:
        return l2 * w
    z = y * (X @ w)
    # sigmoid(-z), split by sign to avoid overflow in exp
    s = np.empty_like(z)
    for i in range(z.shape[0]):
        if z[i] >= 0.0:
            e = np.exp(-z[i])
            s[i] = e / (1.0 + e)
        else:
            s[i] = 1.0 / (1.0 + np.exp(z[i]))
    return -(weight / n) * (X.T @ (y * s)) + l2 * w


def _logistic_hessian(X, y, w, weight, l2):
    n, d = X.shape
    H = l2 * np.eye(d)
    if n == 0:
        return H
    z = y * (X @ w)
    s = np.empty_like(z)
    for i in range(z.shape[0]):
        if z[i] >= 0.0:
            e = np.exp(-z[i])
            s[i] = e / (1.0 + e)
        else:
            s[i] = 1.0 / (1.0 + np.exp(z[i]))
    D = s * (1.0 - s)
    Xw = X * D.reshape(-1, 1)
    return H + (weight / n) * (X.T @ Xw)


def _power_iteration_psd(S, v0, tol, max_iter):
    # Dominant eigenvalue of a PSD matrix S.  The stopping test extrapolates
    # the geometric decay of successive Rayleigh-quotient changes; it must
    # pass on two consecutive steps with consistent decay ratios, so a
    # fast-decaying minor mode cannot fake convergence early on.
    v = v0 / np.sqrt(np.dot(v0, v0))
    rho = np.dot(v, S @ v)
    # rounding noise of a Rayleigh quotient
    floor = 8.0 * S.shape[0] * 2.220446049250313e-16
    prev_change = -1.0
    prev_ratio = -1.0
    passes = 0
    for k in range(1, max_iter + 1):
        w = S @ v
        nw = np.sqrt(np.dot(w, w))
        if nw == 0.0:
            return 0.0, k, True
        v = w / nw
        rho_new = np.dot(v, S @ v)
        change = abs(rho_new - rho)
        rho = rho_new
        if change <= floor * abs(rho):
            return rho, k, True
        ok = False
        if prev_change > 0.0:
            ratio = change / prev_change
            if ratio < 1.0:
                err = change * ratio / (1.0 - ratio)
                steady = prev_ratio > 0.0 and abs(ratio - prev_ratio) <= 0.5 * (1.0 - ratio)
                ok = err <= tol * abs(rho) and steady
            prev_ratio = ratio
        passes = passes + 1 if ok else 0
        if passes >= 2:
            return rho, k, True
        prev_change = change
    return rho, max_iter, False


agd_quadratic = _jit(_agd_quadratic)
logistic_value = _jit(_logistic_value)
logistic_grad = _jit(_logistic_grad)
logistic_hessian = _jit(_logistic_hessian)
power_iteration_psd = _jit(_power_iteration_psd)

# Uncompiled references, used by the benchmark and by consistency tests.
py_agd_quadratic = _agd_quadratic
py_logistic_value = _logistic_value
py_logistic_grad = _logistic_grad
py_logistic_hessian = _logistic_hessian
py_power_iteration_psd = _power_iteration_psd
