"""Phase-space lifting of momentum flows into polynomial vector-field families.

A momentum flow theta'' + tau(t) theta' = -M grad E is rewritten on
(t, theta, thetadot) with the fields

    chi_0 = (1, thetadot, -tau thetadot),    chi_i = (0, 0, M grad phi_i).

Heavy ball (constant tau != 0) is moved to the surrogate s = exp(tau t),
where chi_0 becomes (tau s, thetadot, -tau thetadot). Nesterov (tau = 3/t) is
cleared of its denominator by using t chi_0 = (t, t thetadot, -3 thetadot).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np

from .model import (Architecture, ConfigError, MetricSpec, ReparamMap, apply_metric,
                    build_phi, grad_phi)
from .ratpoly import Polynomial, VariableSpace, VectorField, as_scalar, exact_rank
from .witness import all_of, nonzero_certificate, sample_point, stacked_rank_certificate

FLOW_NAMES = {"gf": "gradient", "heavy_ball": "heavy_ball", "nesterov": "nesterov"}


@dataclass(frozen=True)
class FlowSpec:
    kind: str = "gradient"
    tau: Fraction | None = None

    def __post_init__(self):
        if self.kind not in ("gradient", "heavy_ball", "nesterov"):
            raise ConfigError(f"unknown flow {self.kind!r}")
        if self.kind == "heavy_ball":
            tau = as_scalar(self.tau if self.tau is not None else 0)
            if tau < 0:
                raise ConfigError("heavy ball needs tau >= 0")
            object.__setattr__(self, "tau", tau)
        else:
            object.__setattr__(self, "tau", None)

    @classmethod
    def from_json(cls, obj) -> "FlowSpec":
        name = obj.get("flow", "gf")
        if name not in FLOW_NAMES:
            raise ConfigError(f"unknown flow {name!r}")
        return cls(FLOW_NAMES[name], Fraction(obj["tau"]) if "tau" in obj else None)

    def to_json(self) -> dict:
        inv = {v: k for k, v in FLOW_NAMES.items()}
        d = {"flow": inv[self.kind]}
        if self.tau is not None:
            d["tau"] = f"{self.tau.numerator}/{self.tau.denominator}"
        return d


@dataclass(frozen=True)
class LiftedSystem:
    space: VariableSpace
    fields: tuple
    flow: FlowSpec
    surrogate: bool = False
    cleared: bool = False

    @property
    def chi0(self) -> VectorField:
        return self.fields[0]


def _velocity_block(fields, space):
    """Move fields living on the parameter block into the velocity block."""
    D = space.D
    out = []
    for f in fields:
        comps = {}
        for j in space.parameter_indices:
            if f[j].terms:
                comps[j + D] = f[j]
        for j, c in enumerate(f.components):
            if c.terms and space.kinds[j] != "parameter":
                raise ConfigError("momentum fields must live on the parameter block")
        out.append(VectorField.from_dict(space, comps))
    return out


def _chi0(space, first, pos_scale, vel_coeff):
    D = space.D
    comps = {0: first}
    for j in space.parameter_indices:
        v = Polynomial.var(space, j + D)
        comps[j] = v if pos_scale is None else pos_scale * v
        if vel_coeff:
            comps[j + D] = v.scale(-vel_coeff)
    return VectorField.from_dict(space, comps)


def lift_momentum(fields: list, flow: FlowSpec, space: VariableSpace) -> LiftedSystem:
    """chi_0..chi_d for ``fields`` = M grad phi_i (given on the parameter block)."""
    if flow.kind == "gradient":
        raise ConfigError("use gradient fields directly")
    if space.time_kind != "time" or not space.has_velocity:
        raise ConfigError("lifting needs a (t, theta, thetadot) space")
    if flow.kind == "nesterov":
        return nesterov_cleared(fields, space)
    chi = [_chi0(space, Polynomial.constant(space, 1), None, flow.tau)]
    chi.extend(_velocity_block(fields, space))
    return LiftedSystem(space, tuple(chi), flow)


def _retime(space: VariableSpace, kind: str) -> VariableSpace:
    return VariableSpace.from_shapes(space.shapes, velocities=True, time=kind)


def heavy_ball_surrogate(system: LiftedSystem) -> LiftedSystem:
    if system.flow.kind != "heavy_ball" or system.surrogate:
        raise ConfigError("surrogate applies to an un-substituted heavy-ball system")
    tau = system.flow.tau
    if tau == 0:
        raise ConfigError("surrogate undefined; solve directly in t")
    space = _retime(system.space, "time-surrogate")
    ident = list(range(space.nvars))
    for f in system.fields[1:]:
        if f[0].terms or any(0 in c.used_variables() for c in f.components):
            raise ConfigError("chi_i must not depend on time for the surrogate")
    s = Polynomial.var(space, 0)
    chi = [_chi0(space, s.scale(tau), None, tau)]
    chi.extend(f.embed(space, ident) for f in system.fields[1:])
    return LiftedSystem(space, tuple(chi), system.flow, surrogate=True)


def nesterov_cleared(fields: list, space: VariableSpace) -> LiftedSystem:
    if space.time_kind != "time":
        raise ConfigError("Nesterov needs the time variable t")
    t = Polynomial.var(space, 0)
    D = space.D
    comps = {0: t}
    for j in space.parameter_indices:
        v = Polynomial.var(space, j + D)
        comps[j] = t * v
        comps[j + D] = v.scale(-3)
    chi = [VectorField.from_dict(space, comps)]
    chi.extend(_velocity_block(fields, space))
    return LiftedSystem(space, tuple(chi), FlowSpec("nesterov"), cleared=True)


# ---------------------------------------------------------------------------
# structure theorem on the free flow


class FreeFlow(NamedTuple):
    invariant_a: Callable
    invariant_b: Callable
    trajectory: Callable


def free_flow_invariant_pair(theta0, thetadot0, tau: float) -> FreeFlow:
    """Invariants a = theta + thetadot/tau and b = thetadot exp(tau t) of
    theta'' + tau theta' = 0, with its closed-form trajectory."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    theta0 = np.asarray(theta0, dtype=float)
    thetadot0 = np.asarray(thetadot0, dtype=float)

    def invariant_a(t, theta, thetadot):
        return np.asarray(theta) + np.asarray(thetadot) / tau

    def invariant_b(t, theta, thetadot):
        return np.asarray(thetadot) * math.exp(tau * t)

    def trajectory(t):
        decay = math.exp(-tau * t)
        return theta0 + thetadot0 / tau * (1.0 - decay), thetadot0 * decay

    return FreeFlow(invariant_a, invariant_b, trajectory)


# ---------------------------------------------------------------------------
# full pipeline: architecture + metric + flow -> field family


@dataclass
class System:
    """A field family whose common polynomial annihilators are the laws."""

    arch: Architecture
    metric: MetricSpec
    flow: FlowSpec
    space: VariableSpace
    fields: list
    lifted: LiftedSystem | None = None
    certificate: Callable | None = field(default=None, repr=False)
    config: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return "gf" if self.flow.kind == "gradient" else "mf"

    @property
    def D(self) -> int:
        return self.space.D

    @property
    def ambient(self) -> int:
        return self.space.nvars

    @property
    def default_degree(self) -> int:
        return {"gradient": 2, "heavy_ball": 3, "nesterov": 5}[self.flow.kind]

    @property
    def default_time_cap(self) -> int:
        return {"gradient": 0, "heavy_ball": 1, "nesterov": 3}[self.flow.kind]


def _jacobian_rank(phi_fields, point):
    return exact_rank([f.evaluate(point) for f in phi_fields])


def _certificate(arch, metric, space, phi_fields, seed=12345):
    checks = []
    mf = space.has_velocity
    if arch.is_two_layer:
        if arch.kind == "linear":
            blocks = [("U1", False, False), ("U2", True, False)]
        else:
            blocks = [("U", False, False), ("V", False, False)]
            if arch.bias:
                blocks.append(("b", False, False))
        if mf:
            blocks += [(n, tr, True) for n, tr, _ in blocks]
        checks.append(stacked_rank_certificate(space, blocks))
    else:
        rng = random.Random(seed)
        generic = max(_jacobian_rank(phi_fields, sample_point(space, rng)) for _ in range(5))

        def jac(point, generic=generic):
            return _jacobian_rank(phi_fields, point) == generic

        jac.description = f"phi Jacobian rank = {generic}"
        checks.append(jac)
    diag = metric.diagonal(space)
    if diag:
        checks.append(nonzero_certificate(list(diag.values())))
    return all_of(*checks)


def build_system(arch: Architecture, metric: MetricSpec | None = None,
                 flow: FlowSpec | None = None) -> System:
    """Assemble the generating fields for (architecture, metric, flow)."""
    flow = flow or FlowSpec("gradient")
    metric = metric or MetricSpec()
    mf = flow.kind != "gradient"
    applies = "momentum_flow" if mf else "gradient_flow"
    tau = flow.tau if flow.kind == "heavy_ball" else Fraction(0)
    schedule = "nesterov" if flow.kind == "nesterov" else "constant"
    metric = MetricSpec(metric.kind, applies, tau, schedule)
    if metric.kind == "icnn_hybrid" and arch.kind != "relu2":
        raise ConfigError("icnn metric needs a relu2 architecture")
    phi: ReparamMap = build_phi(arch)
    if not mf:
        space = arch.parameter_space()
        grads = grad_phi(phi, space)
        fields = apply_metric(metric, grads, space)
        return System(arch, metric, flow, space, fields,
                      certificate=_certificate(arch, metric, space, grads))
    space = arch.lifted_space("time")
    grads = grad_phi(phi, space)
    weighted = apply_metric(metric, grads, space)
    lifted = lift_momentum(weighted, flow, space)
    cert_space, cert_grads = space, grads
    if flow.kind == "heavy_ball" and flow.tau != 0:
        lifted = heavy_ball_surrogate(lifted)
        cert_space = lifted.space
        cert_grads = [g.embed(cert_space, list(range(cert_space.nvars))) for g in grads]
    return System(arch, metric, flow, lifted.space, list(lifted.fields), lifted,
                  certificate=_certificate(arch, metric, cert_space, cert_grads))
