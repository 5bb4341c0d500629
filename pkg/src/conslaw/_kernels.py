"""Float hot loops: the two-layer discretized flow recursion and RK4.

Every kernel is written once in numba-compatible numpy. When numba is
importable and ``CONSLAW_DISABLE_NUMBA`` is not ``1`` the public names are
the jitted versions; the ``*_py`` originals stay available either way.
"""

from __future__ import annotations

import os
import types

import numpy as np

_DISABLED = os.environ.get("CONSLAW_DISABLE_NUMBA", "0") == "1"

try:
    if _DISABLED:
        raise ImportError("numba disabled by CONSLAW_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised with the env flag
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

BACKEND = "numba" if HAVE_NUMBA else "numpy"

# metric codes
EUCLIDEAN, MIRROR, ICNN = 0, 1, 2
# run status codes
OK, NON_FINITE, NOT_POSITIVE = 0, 1, 2


def two_layer_loss_grad_py(theta, X, XT, Y, n, m, r, relu, bias, out_bias):
    """Mean squared loss and its gradient for phi = U W with W = U2 (linear)
    or W = V^T (relu2), flat column-major parameters."""
    p = X.shape[1]
    oW = n * r
    oB = oW + r * m
    oC = oB + (r if bias else 0)
    U = np.empty((n, r))
    W = np.empty((r, m))
    for j in range(r):
        for k in range(n):
            U[k, j] = theta[k + n * j]
        for l in range(m):
            if relu:
                W[j, l] = theta[oW + l + m * j]
            else:
                W[j, l] = theta[oW + j + r * l]
    pre = np.dot(W, X)
    if bias:
        for j in range(r):
            pre[j, :] += theta[oB + j]
    act = pre.copy()
    if relu:
        for j in range(r):
            for i in range(p):
                if act[j, i] < 0.0:
                    act[j, i] = 0.0
    g = np.dot(U, act)
    if out_bias:
        for k in range(n):
            g[k, :] += theta[oC + k]
    R = g - Y
    loss = np.sum(R * R) / p
    R *= 2.0 / p
    gU = np.dot(R, np.ascontiguousarray(act.T))
    back = np.dot(np.ascontiguousarray(U.T), R)
    if relu:
        for j in range(r):
            for i in range(p):
                if pre[j, i] <= 0.0:
                    back[j, i] = 0.0
    gW = np.dot(back, XT)
    grad = np.zeros(theta.size)
    for j in range(r):
        for k in range(n):
            grad[k + n * j] = gU[k, j]
        for l in range(m):
            if relu:
                grad[oW + l + m * j] = gW[j, l]
            else:
                grad[oW + j + r * l] = gW[j, l]
        if bias:
            grad[oB + j] = np.sum(back[j, :])
    if out_bias:
        for k in range(n):
            grad[oC + k] = np.sum(R[k, :])
    return loss, grad


def _run_body(theta0, theta_prev, X, XT, Y, n, m, r, relu, bias, out_bias, metric,
              mu, nu, alpha, beta, delta, steps):
    """theta_{k+1} = theta_k - alpha M_k grad E + beta (theta_k - theta_{k-1}),
    M_k = M(mu (theta_k - theta_{k-1}) / delta + nu theta_k), theta_{-1} = theta_prev."""
    D = theta0.size
    thetas = np.empty((steps + 1, D))
    losses = np.full(steps + 1, np.nan)
    thetas[0, :] = theta0
    prev = theta_prev.copy()
    cur = theta0.copy()
    n_mirror = 0
    if metric == MIRROR:
        n_mirror = D
    elif metric == ICNN:
        n_mirror = n * r
    status = OK
    fail = -1
    for k in range(steps + 1):
        loss, g = two_layer_loss_grad(cur, X, XT, Y, n, m, r, relu, bias, out_bias)
        losses[k] = loss
        if not np.isfinite(loss):
            status = NON_FINITE
            fail = k
            break
        if k == steps:
            break
        for i in range(n_mirror):
            g[i] *= mu * (cur[i] - prev[i]) / delta + nu * cur[i]
        nxt = cur - alpha * g + beta * (cur - prev)
        for i in range(D):
            if not np.isfinite(nxt[i]):
                status = NON_FINITE
                fail = k + 1
        if status != OK:
            break
        for i in range(n_mirror):
            if nxt[i] <= 0.0:
                status = NOT_POSITIVE
                fail = k + 1
        if status != OK:
            break
        thetas[k + 1, :] = nxt
        prev = cur
        cur = nxt
    return thetas, losses, status, fail


def rk4_damped_py(theta0, thetadot0, tau, T, steps):
    """Classical RK4 on theta'' + tau theta' = 0 written as a first-order system."""
    h = T / steps
    D = theta0.size
    ts = np.empty(steps + 1)
    th = np.empty((steps + 1, D))
    vel = np.empty((steps + 1, D))
    x = theta0.copy()
    v = thetadot0.copy()
    ts[0] = 0.0
    th[0, :] = x
    vel[0, :] = v
    for k in range(steps):
        k1x = v
        k1v = -tau * v
        k2x = v + 0.5 * h * k1v
        k2v = -tau * (v + 0.5 * h * k1v)
        k3x = v + 0.5 * h * k2v
        k3v = -tau * (v + 0.5 * h * k2v)
        k4x = v + h * k3v
        k4v = -tau * (v + h * k3v)
        x = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        v = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        ts[k + 1] = (k + 1) * h
        th[k + 1, :] = x
        vel[k + 1, :] = v
    return ts, th, vel


# pure path: same code object, with the gradient global bound to the python kernel
run_two_layer_py = types.FunctionType(
    _run_body.__code__, {**globals(), "two_layer_loss_grad": two_layer_loss_grad_py},
    "run_two_layer_py")

if HAVE_NUMBA:
    two_layer_loss_grad = njit(cache=True)(two_layer_loss_grad_py)
    run_two_layer = njit(cache=True)(_run_body)
    rk4_damped = njit(cache=True)(rk4_damped_py)
else:
    two_layer_loss_grad = two_layer_loss_grad_py
    run_two_layer = run_two_layer_py
    rk4_damped = rk4_damped_py
