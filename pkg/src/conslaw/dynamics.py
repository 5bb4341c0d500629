"""Discretized gradient / momentum flows and drift of conservation laws.

The scheme is

    theta_{k+1} = theta_k - alpha M_k grad E(theta_k) + beta (theta_k - theta_{k-1}),
    alpha = delta / (nu + mu / delta),  beta = mu / (delta nu + mu),
    M_k = M(mu (theta_k - theta_{k-1}) / delta + nu theta_k),

a consistent discretization of mu theta'' + nu theta' = -M grad E (so
tau = nu / mu). mu = 0 is plain (mirror) gradient descent.
"""

from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import __version__, _kernels
from .model import Architecture, ConfigError, build_phi, grad_phi
from .ratpoly import Polynomial

METRICS = ("euclidean", "mirror", "icnn", "natural")
PINV_RCOND = 1e-10


class FlowAborted(RuntimeError):
    def __init__(self, message, step):
        super().__init__(f"{message} at step {step}")
        self.step = step


class NonFiniteError(FlowAborted):
    pass


class PositivityError(FlowAborted):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    seed: int
    target: str

    @property
    def p(self) -> int:
        return self.X.shape[1]


def make_synthetic_dataset(arch: Architecture, p: int, seed: int, target: str | None = None,
                           scale: float = 1.0) -> Dataset:
    """X standard normal (input_dim x p); Y from a random teacher.

    ``target``: ``linear`` (Y = G X), ``nmf`` (Y = |G X|) or ``relu``
    (random two-layer ReLU teacher). Default: relu for relu2, linear otherwise.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    target = target or ("relu" if arch.kind == "relu2" else "linear")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((arch.input_dim, p))
    if target in ("linear", "nmf"):
        G = scale * rng.standard_normal((arch.output_dim, arch.input_dim))
        Y = G @ X
        if target == "nmf":
            Y = np.abs(Y)
    elif target == "relu":
        n, m = arch.output_dim, arch.input_dim
        width = arch.dims[2] if arch.kind == "relu2" else max(arch.dims[1:-1])
        A = scale * rng.standard_normal((n, width))
        B = rng.standard_normal((m, width))
        Y = A @ np.maximum(B.T @ X, 0.0)
    else:
        raise ConfigError(f"unknown dataset target {target!r}")
    return Dataset(X, Y, seed, target)


# ---------------------------------------------------------------------------
# loss and gradients


def loss(arch: Architecture, theta, data: Dataset) -> float:
    R = arch.forward(theta, data.X) - data.Y
    return float(np.sum(R * R) / data.p)


def loss_grad(arch: Architecture, theta, data: Dataset):
    """Mean squared loss (1/p) sum_k |g(theta, x_k) - y_k|^2 and its gradient."""
    theta = np.asarray(theta, dtype=float)
    if arch.is_two_layer:
        n, m, r = arch.nmr
        return _kernels.two_layer_loss_grad(
            theta, data.X, np.ascontiguousarray(data.X.T), data.Y, n, m, r,
            arch.kind == "relu2", arch.bias, arch.out_bias)
    mats = arch.unpack(theta)
    names = [s[0] for s in arch.shapes()]
    out = data.X
    right = [out]
    for name in reversed(names):
        out = mats[name] @ out
        right.append(out)
    right = right[::-1]  # right[i] = U_{i+1} ... U_q X (right[q] = X)
    R = out - data.Y
    val = float(np.sum(R * R) / data.p)
    R = 2.0 * R / data.p
    grads = {}
    left = np.eye(arch.dims[0])
    for i, name in enumerate(names):
        grads[name] = left.T @ R @ right[i + 1].T
        left = left @ mats[name]
    return val, arch.pack(grads)


def _metric_code(metric: str) -> int:
    return {"euclidean": _kernels.EUCLIDEAN, "mirror": _kernels.MIRROR,
            "icnn": _kernels.ICNN}[metric]


def _mirror_count(arch: Architecture, metric: str) -> int:
    if metric == "mirror":
        return arch.D
    if metric == "icnn":
        if arch.kind != "relu2":
            raise ConfigError("icnn metric needs a relu2 architecture")
        n, _, r = arch.dims
        return n * r
    return 0


def step_parameters(mu: float, nu: float, delta: float):
    """(alpha, beta) of the two-step recursion."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    if mu < 0 or nu < 0 or (mu == 0 and nu == 0):
        raise ValueError("need mu, nu >= 0, not both zero")
    alpha = delta / (nu + mu / delta)
    beta = mu / (delta * nu + mu)
    return alpha, beta


# ---------------------------------------------------------------------------
# natural gradient


def gram_matrix(jacobians) -> np.ndarray:
    """H = (1/p) sum_k J_k^T J_k."""
    J = np.asarray(jacobians, dtype=float)
    return np.einsum("kij,kil->jl", J, J) / J.shape[0]


@functools.lru_cache(maxsize=32)
def _phi_jacobian_evaluator(arch: Architecture):
    fields = grad_phi(build_phi(arch))
    return compile_polynomials([c for f in fields for c in f.components]), len(fields)


def _phi_jacobian(arch: Architecture, theta) -> np.ndarray:
    ev, d = _phi_jacobian_evaluator(arch)
    return ev(theta).reshape(d, arch.D)


def model_jacobians(arch: Architecture, theta, X) -> np.ndarray:
    """Per-sample Jacobians d g(theta, x_k) / d theta, shape (p, n_out, D)."""
    if arch.kind != "linear":
        raise ConfigError("natural-gradient runs support linear architectures")
    Jphi = _phi_jacobian(arch, theta)  # (d, D), phi column-major n_0 x n_q
    n0, nq = arch.dims[0], arch.dims[-1]
    out = np.empty((X.shape[1], n0, arch.D))
    for k in range(X.shape[1]):
        # d(phi x)/d vec(phi) = x^T kron I_{n0}
        out[k] = np.kron(X[:, k][None, :], np.eye(n0)) @ Jphi
    return out


def natural_gradient_step(theta, data: Dataset, delta: float, arch: Architecture) -> np.ndarray:
    """theta - delta H^+ grad E with H the averaged Gram matrix of model Jacobians."""
    theta = np.asarray(theta, dtype=float)
    H = gram_matrix(model_jacobians(arch, theta, data.X))
    _, g = loss_grad(arch, theta, data)
    new = theta - delta * (np.linalg.pinv(H, rcond=PINV_RCOND, hermitian=True) @ g)
    if not np.all(np.isfinite(new)):
        raise NonFiniteError("non-finite natural-gradient step", 0)
    return new


# ---------------------------------------------------------------------------
# runs


@dataclass
class FlowRun:
    arch: Architecture
    metric: str
    mu: float
    nu: float
    delta: float
    steps: int
    dataset: Dataset
    thetas: np.ndarray
    losses: np.ndarray
    seed: int
    alpha: float = 0.0
    beta: float = 0.0
    backend: str = ""
    thetadot0: np.ndarray | None = None

    @property
    def tau(self) -> float | None:
        return self.nu / self.mu if self.mu > 0 else None

    @property
    def times(self) -> np.ndarray:
        return self.delta * np.arange(self.thetas.shape[0])

    @property
    def velocities(self) -> np.ndarray:
        """Backward differences (theta_k - theta_{k-1}) / delta; v_0 is the initial velocity."""
        v = np.zeros_like(self.thetas)
        if self.thetadot0 is not None:
            v[0] = self.thetadot0
        v[1:] = np.diff(self.thetas, axis=0) / self.delta
        return v

    def manifest(self) -> dict:
        return {
            "library": "conslaw", "version": __version__,
            "arch": self.arch.to_json(), "metric": self.metric,
            "mu": self.mu, "nu": self.nu, "tau": self.tau, "delta": self.delta,
            "steps": self.steps, "alpha": self.alpha, "beta": self.beta,
            "dataset": {"p": self.dataset.p, "seed": self.dataset.seed,
                        "target": self.dataset.target},
            "seed": self.seed, "loss": "mean squared error",
            "velocity": "backward difference (theta_k - theta_{k-1})/delta",
            "start": "cold (theta_{-1} = theta_0)" if self.thetadot0 is None
                     else "warm (theta_{-1} = theta_0 - delta thetadot0)",
            "backend": self.backend,
            "final_loss": float(self.losses[-1]),
        }


def init_theta(arch: Architecture, seed: int, metric: str = "euclidean",
               scale: float = 1.0) -> np.ndarray:
    """Unit-scale standard normal entries; mirrored coordinates drawn in (0.5, 1.5)."""
    rng = np.random.default_rng(seed)
    theta = scale * rng.standard_normal(arch.D)
    k = _mirror_count(arch, metric) if metric in ("mirror", "icnn") else 0
    theta[:k] = rng.uniform(0.5, 1.5, size=k)
    return theta


def simulate_flow(arch: Architecture, data: Dataset, theta0=None, metric: str = "euclidean",
                  mu: float = 0.0, nu: float = 1.0, delta: float = 1e-3, steps: int = 1000,
                  seed: int = 0, use_kernel: bool = True, thetadot0=None) -> FlowRun:
    """Run the two-step recursion for ``steps`` steps.

    The default cold start sets theta_{-1} = theta_0. With ``thetadot0`` the
    run starts warm, theta_{-1} = theta_0 - delta * thetadot0.
    """
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}")
    if theta0 is None:
        theta0 = init_theta(arch, seed, metric)
    theta0 = np.array(theta0, dtype=float)
    if metric == "natural":
        if mu != 0:
            raise ConfigError("natural gradient is a gradient-flow (mu = 0) method")
        return _simulate_natural(arch, data, theta0, nu, delta, steps, seed)
    alpha, beta = step_parameters(mu, nu, delta)
    if thetadot0 is not None:
        if mu == 0:
            raise ConfigError("an initial velocity needs a momentum run (mu > 0)")
        thetadot0 = np.array(thetadot0, dtype=float)
        theta_prev = theta0 - delta * thetadot0
    else:
        theta_prev = theta0.copy()
    k_mirror = _mirror_count(arch, metric)
    if np.any(theta0[:k_mirror] <= 0):
        raise PositivityError("mirror run needs a positive start", 0)
    if arch.is_two_layer and use_kernel:
        n, m, r = arch.nmr
        thetas, losses, status, fail = _kernels.run_two_layer(
            theta0, theta_prev, data.X, np.ascontiguousarray(data.X.T), data.Y, n, m, r,
            arch.kind == "relu2", arch.bias, arch.out_bias, _metric_code(metric),
            float(mu), float(nu), alpha, beta, float(delta), int(steps))
        backend = _kernels.BACKEND
    else:
        thetas, losses, status, fail = _run_generic(arch, data, theta0, theta_prev, k_mirror,
                                                    mu, nu, alpha, beta, delta, steps)
        backend = "numpy"
    if status == _kernels.NON_FINITE:
        raise NonFiniteError("non-finite loss or iterate", fail)
    if status == _kernels.NOT_POSITIVE:
        raise PositivityError("mirror iterate left the positive orthant", fail)
    return FlowRun(arch, metric, float(mu), float(nu), float(delta), int(steps), data,
                   thetas, losses, seed, alpha, beta, backend, thetadot0)


def _run_generic(arch, data, theta0, theta_prev, k_mirror, mu, nu, alpha, beta, delta, steps):
    thetas = np.empty((steps + 1, theta0.size))
    losses = np.full(steps + 1, np.nan)
    thetas[0] = theta0
    prev, cur = theta_prev.copy(), theta0.copy()
    for k in range(steps + 1):
        val, g = loss_grad(arch, cur, data)
        losses[k] = val
        if not math.isfinite(val):
            return thetas, losses, _kernels.NON_FINITE, k
        if k == steps:
            break
        if k_mirror:
            g[:k_mirror] *= mu * (cur[:k_mirror] - prev[:k_mirror]) / delta + nu * cur[:k_mirror]
        nxt = cur - alpha * g + beta * (cur - prev)
        if not np.all(np.isfinite(nxt)):
            return thetas, losses, _kernels.NON_FINITE, k + 1
        if k_mirror and np.any(nxt[:k_mirror] <= 0):
            return thetas, losses, _kernels.NOT_POSITIVE, k + 1
        thetas[k + 1] = nxt
        prev, cur = cur, nxt
    return thetas, losses, _kernels.OK, -1


def _simulate_natural(arch, data, theta0, nu, delta, steps, seed):
    thetas = np.empty((steps + 1, theta0.size))
    losses = np.empty(steps + 1)
    thetas[0] = theta0
    cur = theta0
    eff = delta / nu
    for k in range(steps):
        losses[k] = loss(arch, cur, data)
        try:
            cur = natural_gradient_step(cur, data, eff, arch)
        except NonFiniteError:
            raise NonFiniteError("non-finite natural-gradient step", k + 1) from None
        thetas[k + 1] = cur
    losses[steps] = loss(arch, cur, data)
    return FlowRun(arch, "natural", 0.0, float(nu), float(delta), int(steps), data, thetas,
                   losses, seed, eff, 0.0, "numpy")


# ---------------------------------------------------------------------------
# continuous-time oracle


def continuous_rhs(arch: Architecture, data: Dataset, metric: str, mu: float, nu: float):
    """Right-hand side of mu theta'' + nu theta' = -M(mu theta' + nu theta) grad E."""
    k_mirror = _mirror_count(arch, metric)
    D = arch.D

    def weight(g, theta, vel):
        if k_mirror:
            g = g.copy()
            g[:k_mirror] *= mu * vel[:k_mirror] + nu * theta[:k_mirror]
        return g

    if mu == 0:
        def rhs(t, y):
            _, g = loss_grad(arch, y, data)
            return -weight(g, y, np.zeros(D)) / nu
        return rhs

    def rhs(t, y):
        theta, vel = y[:D], y[D:]
        _, g = loss_grad(arch, theta, data)
        acc = (-weight(g, theta, vel) - nu * vel) / mu
        return np.concatenate([vel, acc])

    return rhs


def natural_rhs(arch: Architecture, data: Dataset, nu: float = 1.0):
    def rhs(t, y):
        H = gram_matrix(model_jacobians(arch, y, data.X))
        _, g = loss_grad(arch, y, data)
        return -(np.linalg.pinv(H, rcond=PINV_RCOND, hermitian=True) @ g) / nu
    return rhs


@dataclass
class OracleRun:
    times: np.ndarray
    thetas: np.ndarray
    velocities: np.ndarray
    mu: float
    nu: float

    @property
    def tau(self):
        return self.nu / self.mu if self.mu > 0 else None


def integrate_continuous(arch: Architecture, data: Dataset, theta0, T: float,
                         metric: str = "euclidean", mu: float = 0.0, nu: float = 1.0,
                         thetadot0=None, n_eval: int = 201, rtol: float = 1e-12,
                         atol: float = 1e-12) -> OracleRun:
    """Adaptive DOP853 solution of the continuous flow (the reference oracle)."""
    theta0 = np.asarray(theta0, dtype=float)
    t_eval = np.linspace(0.0, T, n_eval)
    if metric == "natural":
        rhs = natural_rhs(arch, data, nu)
        y0 = theta0
    else:
        rhs = continuous_rhs(arch, data, metric, mu, nu)
        if mu == 0:
            y0 = theta0
        else:
            v0 = np.zeros_like(theta0) if thetadot0 is None else np.asarray(thetadot0, float)
            y0 = np.concatenate([theta0, v0])
    sol = solve_ivp(rhs, (0.0, T), y0, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"oracle integration failed: {sol.message}")
    D = arch.D
    thetas = sol.y[:D].T
    if metric != "natural" and mu > 0:
        vel = sol.y[D:].T
    else:
        vel = np.array([rhs(t, th) for t, th in zip(sol.t, thetas)])
    return OracleRun(sol.t, thetas, vel, float(mu), float(nu))


# ---------------------------------------------------------------------------
# law evaluation and drift


def compile_polynomials(polys: list):
    """Vectorized float evaluator x -> [p_1(x), ..., p_k(x)] (x of shape (..., nvars))."""
    packs = []
    for p in polys:
        if p.terms:
            E = np.array(list(p.terms.keys()), dtype=np.int64)
            C = np.array([float(c) for c in p.terms.values()])
        else:
            E = np.zeros((0, p.space.nvars), dtype=np.int64)
            C = np.zeros(0)
        packs.append((E, C))

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        out = []
        for E, C in packs:
            if C.size == 0:
                out.append(np.zeros(x.shape[:-1]))
                continue
            mono = np.prod(x[..., None, :] ** E, axis=-1)
            out.append(mono @ C)
        return np.stack(out, axis=-1) if out else np.zeros(x.shape[:-1] + (0,))

    return evaluate


@dataclass
class DriftReport:
    law_id: str
    times: np.ndarray
    values: np.ndarray
    max_abs_drift: float
    relative_drift: float
    velocity_convention: str = "backward difference"
    steps: np.ndarray = field(default=None, repr=False)


def _law_points(law_space, times, thetas, velocities, tau):
    cols = []
    tk = law_space.time_kind
    if tk == "time":
        cols.append(times[:, None])
    elif tk == "time-surrogate":
        if tau is None:
            raise ConfigError("surrogate law requires a momentum run (mu > 0)")
        cols.append(np.exp(tau * times)[:, None])
    cols.append(thetas)
    if law_space.has_velocity:
        if velocities is None:
            raise ConfigError("law requires momentum run")
        cols.append(velocities)
    return np.concatenate(cols, axis=1)


def law_values(law: Polynomial, times, thetas, velocities=None, tau=None) -> np.ndarray:
    pts = _law_points(law.space, np.asarray(times), np.asarray(thetas),
                      None if velocities is None else np.asarray(velocities), tau)
    return compile_polynomials([law])(pts)[:, 0]


def evaluate_drift(run, laws: list, law_ids: list | None = None) -> list:
    """Time series and max |h_k - h_0| for each law along ``run``.

    ``run`` is a :class:`FlowRun` (backward-difference velocities) or an
    :class:`OracleRun` (exact velocities).
    """
    is_flow = isinstance(run, FlowRun)
    momentum = run.mu > 0
    reports = []
    for idx, law in enumerate(laws):
        poly = getattr(law, "realization", law)
        lid = law_ids[idx] if law_ids else f"law{idx}"
        if poly.space.has_velocity and not momentum:
            raise ConfigError("law requires momentum run")
        if poly.space.D != run.thetas.shape[1]:
            raise ConfigError("law variables do not match the run's parameter layout")
        vel = run.velocities if poly.space.has_velocity else None
        vals = law_values(poly, run.times, run.thetas, vel, run.tau)
        drift = np.abs(vals - vals[0])
        mx = float(drift.max())
        scale = float(np.abs(vals).max())
        reports.append(DriftReport(lid, run.times, vals, mx, mx / scale if scale > 0 else 0.0,
                                   "backward difference" if is_flow else "exact (oracle)",
                                   np.arange(len(vals))))
    return reports


def write_drift_csv(path, run: FlowRun, reports: list, every: int = 1):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "loss", "law_id", "value", "drift"])
        for k in range(0, len(run.times), every):
            for rep in reports:
                w.writerow([k, repr(float(run.times[k])), repr(float(run.losses[k])), rep.law_id,
                            repr(float(rep.values[k])), repr(float(rep.values[k] - rep.values[0]))])


def write_manifest(path, run: FlowRun, reports: list, extra: dict | None = None):
    body = run.manifest()
    body["laws"] = [{"law_id": r.law_id, "max_abs_drift": r.max_abs_drift,
                     "relative_drift": r.relative_drift} for r in reports]
    if extra:
        body.update(extra)
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
