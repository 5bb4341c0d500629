import random
from fractions import Fraction

import numpy as np
import pytest

from conslaw._kernels import rk4_damped
from conslaw.lift import (
    FlowSpec,
    build_system,
    free_flow_invariant_pair,
    heavy_ball_surrogate,
    lift_momentum,
    nesterov_cleared,
)
from conslaw.model import Architecture, ConfigError, MetricSpec, build_phi, grad_phi
from conslaw.ratpoly import Polynomial
from conslaw.witness import sample_point

ARCH_121 = Architecture("linear", (1, 2, 1))  # phi = u1 v1 + u2 v2


def _lifted(arch, flow, time="time"):
    space = arch.lifted_space(time)
    return lift_momentum(grad_phi(build_phi(arch), space), flow, space), space


def _vars(space):
    return [Polynomial.var(space, i) for i in range(space.nvars)]


def test_chi0_zero_damping():
    sys_, space = _lifted(ARCH_121, FlowSpec("heavy_ball", Fraction(0)))
    t, u1, u2, v1, v2, du1, du2, dv1, dv2 = _vars(space)
    zero = Polynomial.zero(space)
    assert list(sys_.chi0.components) == [Polynomial.constant(space, 1), du1, du2, dv1, dv2] + [zero] * 4
    assert list(sys_.fields[1].components) == [zero] * 5 + [v1, v2, u1, u2]


def test_chi0_unit_damping():
    arch = Architecture("linear", (1, 1, 1))
    sys_, space = _lifted(arch, FlowSpec("heavy_ball", Fraction(1)))
    t, u, v, du, dv = _vars(space)
    assert list(sys_.chi0.components) == [Polynomial.constant(space, 1), du, dv, -du, -dv]


def test_surrogate_examples():
    arch = Architecture("linear", (1, 1, 1))
    sys_, _ = _lifted(arch, FlowSpec("heavy_ball", Fraction(1)))
    sur = heavy_ball_surrogate(sys_)
    s, u, v, du, dv = _vars(sur.space)
    assert sur.surrogate and sur.space.time_kind == "time-surrogate"
    assert list(sur.chi0.components) == [s, du, dv, -du, -dv]
    assert list(sur.fields[1].components)[3:] == [v, u]
    sys2, _ = _lifted(arch, FlowSpec("heavy_ball", Fraction(2)))
    assert heavy_ball_surrogate(sys2).chi0[0] == s.scale(2)


def test_surrogate_rejects_zero_tau():
    sys_, _ = _lifted(ARCH_121, FlowSpec("heavy_ball", Fraction(0)))
    with pytest.raises(ValueError, match="surrogate undefined; solve directly in t"):
        heavy_ball_surrogate(sys_)


def test_gradient_flow_rejected():
    space = ARCH_121.lifted_space("time")
    with pytest.raises(ValueError, match="use gradient fields directly"):
        lift_momentum(grad_phi(build_phi(ARCH_121), space), FlowSpec("gradient"), space)


def test_nesterov_cleared_field():
    arch = Architecture("linear", (1, 1, 1))
    space = arch.lifted_space("time")
    grads = grad_phi(build_phi(arch), space)
    sys_ = nesterov_cleared(grads, space)
    t, u, v, du, dv = _vars(space)
    assert sys_.cleared
    assert list(sys_.chi0.components) == [t, t * du, t * dv, du.scale(-3), dv.scale(-3)]
    assert lift_momentum(grads, FlowSpec("nesterov"), space).fields == sys_.fields


def _pca_law(space, factor):
    t, u1, u2, v1, v2, du1, du2, dv1, dv2 = _vars(space)
    return factor * (u1 * du2 - du1 * u2 + v1 * dv2 - dv1 * v2)


def test_surrogate_equivalence_for_momentum_law():
    sys_, _ = _lifted(ARCH_121, FlowSpec("heavy_ball", Fraction(1)))
    sur = heavy_ball_surrogate(sys_)
    h = _pca_law(sur.space, Polynomial.var(sur.space, 0))
    assert all(f.apply(h).is_zero() for f in sur.fields)
    plain, space = _lifted(ARCH_121, FlowSpec("heavy_ball", Fraction(0)))
    h0 = _pca_law(space, Polynomial.constant(space, 1))
    assert all(f.apply(h0).is_zero() for f in plain.fields)


def test_nesterov_equivalence_on_positive_time():
    space = ARCH_121.lifted_space("time")
    grads = grad_phi(build_phi(ARCH_121), space)
    cleared = nesterov_cleared(grads, space)
    t = Polynomial.var(space, 0)
    h = _pca_law(space, t ** 3)
    assert cleared.chi0.apply(h).is_zero()
    # uncleared chi0 = (1, thetadot, -3/t thetadot): <grad h, chi0> = (t chi0 term) / t
    rng = random.Random(7)
    for _ in range(10):
        pt = sample_point(space, rng)
        assert pt[0] > 0
        grad = [d.evaluate(pt) for d in h.gradient()]
        D = space.D
        chi0 = [Fraction(1)] + pt[1 + D:] + [Fraction(-3) / pt[0] * x for x in pt[1 + D:]]
        assert sum(g * c for g, c in zip(grad, chi0)) == 0
    wrong = _pca_law(space, t ** 2)
    assert not cleared.chi0.apply(wrong).is_zero()


def test_constants_are_laws():
    for flow in (FlowSpec("heavy_ball", Fraction(1)), FlowSpec("nesterov"), FlowSpec("gradient")):
        system = build_system(Architecture("linear", (2, 2, 2)), flow=flow)
        one = Polynomial.constant(system.space, 5)
        assert all(f.apply(one).is_zero() for f in system.fields)


def test_flow_spec_json():
    f = FlowSpec.from_json({"flow": "heavy_ball", "tau": "3/2"})
    assert f.tau == Fraction(3, 2) and FlowSpec.from_json(f.to_json()) == f
    assert FlowSpec.from_json({"flow": "nesterov"}).tau is None
    with pytest.raises(ConfigError):
        FlowSpec("heavy_ball", Fraction(-1))


def test_mirror_nesterov_diagonal():
    arch = Architecture.linear_nmr(1, 1, 1)
    system = build_system(arch, MetricSpec("mirror_diag"), FlowSpec("nesterov"))
    t, u, v, du, dv = _vars(system.space)
    assert system.fields[1][3] == v * (t * du + u.scale(3))


# -- structure theorem (free flow) ------------------------------------------


def test_free_flow_examples():
    pair = free_flow_invariant_pair(np.array([1.0]), np.array([2.0]), 1.0)
    for t in (0.0, 0.3, 1.7):
        th, vel = pair.trajectory(t)
        assert pair.invariant_a(t, th, vel)[0] == pytest.approx(3.0, abs=1e-14)
    th, vel = pair.trajectory(0.0)
    assert pair.invariant_b(0.0, th, vel)[0] == 2.0


def test_free_flow_rk4_oracle():
    pair = free_flow_invariant_pair(np.array([1.0]), np.array([2.0]), 1.0)
    ts, th, vel = rk4_damped(np.array([1.0]), np.array([2.0]), 1.0, 2.0, 2000)
    a = [pair.invariant_a(t, x, v)[0] for t, x, v in zip(ts, th, vel)]
    b = [pair.invariant_b(t, x, v)[0] for t, x, v in zip(ts, th, vel)]
    assert max(abs(x - 3) for x in a) <= 1e-9
    assert max(abs(x - 2) for x in b) <= 1e-9


def test_free_flow_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        free_flow_invariant_pair([1.0], [1.0], 0.0)
