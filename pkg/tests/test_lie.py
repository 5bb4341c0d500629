from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conslaw.laws import lie_dim
from conslaw.lie import (
    DegreeWarning,
    LieBudgetExceeded,
    generate_lie_algebra,
    law_count_from_dim,
    lie_bracket,
    lie_count,
    trace_dimension,
)
from conslaw.lift import FlowSpec, build_system
from conslaw.model import Architecture, MetricSpec
from conslaw.ratpoly import Polynomial, VariableSpace, VectorField

UV = VariableSpace.scalars(["u", "v"])
u, v = Polynomial.var(UV, 0), Polynomial.var(UV, 1)
XYZ = VariableSpace.scalars(["x", "y", "z"])


def linear_field(space, A):
    xs = [Polynomial.var(space, i) for i in range(space.nvars)]
    comps = []
    for row in A:
        acc = Polynomial.zero(space)
        for a, x in zip(row, xs):
            acc = acc + x.scale(a)
        comps.append(acc)
    return VectorField(space, comps)


def matmul(A, B):
    return [[sum(a * b for a, b in zip(row, col)) for col in zip(*B)] for row in A]


def test_commutator_example():
    A1, A2 = [[0, 1], [0, 0]], [[0, 0], [1, 0]]
    got = lie_bracket(linear_field(UV, A1), linear_field(UV, A2))
    assert got == linear_field(UV, [[1, 0], [0, -1]])


def test_self_bracket_vanishes():
    x = VectorField(UV, [u * v, v * v + 1])
    assert lie_bracket(x, x).is_zero()


def test_swap_and_identity_commute():
    # the two fields are x -> P x and x -> x; P commutes with the identity
    assert lie_bracket(VectorField(UV, [v, u]), VectorField(UV, [u, v])).is_zero()


def test_bracket_space_mismatch():
    with pytest.raises(ValueError, match="space mismatch"):
        lie_bracket(VectorField(UV, [u, v]), VectorField.zero(XYZ))


int_mats = st.lists(st.lists(st.integers(-3, 3), min_size=3, max_size=3), min_size=3, max_size=3)


@settings(max_examples=50, deadline=None)
@given(int_mats, int_mats)
def test_linear_fields_bracket_is_matrix_commutator(A, B):
    # [Ax, Bx] = (AB - BA) x with [X, Y] = dX.Y - dY.X
    AB, BA = matmul(A, B), matmul(B, A)
    C = [[p - q for p, q in zip(r1, r2)] for r1, r2 in zip(AB, BA)]
    assert lie_bracket(linear_field(XYZ, A), linear_field(XYZ, B)) == linear_field(XYZ, C)


fracs = st.fractions(min_value=-5, max_value=5, max_denominator=4)
exps = st.tuples(*[st.integers(0, 2)] * 3)
polys = st.dictionaries(exps, fracs, max_size=3).map(lambda d: Polynomial(XYZ, d))
fields = st.lists(polys, min_size=3, max_size=3).map(lambda cs: VectorField(XYZ, cs))


@settings(max_examples=50, deadline=None)
@given(fields, fields, fields, fracs)
def test_antisymmetry_and_bilinearity(x, y, z, c):
    assert lie_bracket(x, y) == -lie_bracket(y, x)
    assert lie_bracket(x + y.scale(c), z) == lie_bracket(x, z) + lie_bracket(y, z).scale(c)


@settings(max_examples=20, deadline=None)
@given(fields, fields, fields)
def test_jacobi_identity(x, y, z):
    total = (lie_bracket(x, lie_bracket(y, z)) + lie_bracket(y, lie_bracket(z, x))
             + lie_bracket(z, lie_bracket(x, y)))
    assert total.is_zero()


def test_single_field_algebra():
    res = generate_lie_algebra([VectorField(UV, [v, u])])
    assert len(res.basis) == 1 and res.stabilized and res.iterations == 1


def test_coordinate_fields_algebra():
    one, zero = Polynomial.constant(UV, 1), Polynomial.zero(UV)
    res = generate_lie_algebra([VectorField(UV, [one, zero]), VectorField(UV, [zero, one])])
    assert len(res.basis) == 2 and res.stabilized


def test_trace_dimension_example():
    assert trace_dimension([VectorField(UV, [v, u])], [3, 2]) == 1


def test_momentum_two_hidden_units_dimension():
    system = build_system(Architecture.linear_nmr(2, 1, 2), flow=FlowSpec("heavy_ball", Fraction(1)))
    rep = lie_count(system, cap=12)
    assert rep.stabilized and rep.dim == 12 == lie_dim(2, 1, 2)
    assert rep.law_count == 1
    assert rep.history == sorted(rep.history)


@pytest.mark.parametrize("nmr", [(2, 2, 2), (1, 1, 4), (2, 1, 1)])
def test_formula_agreement(nmr):
    system = build_system(Architecture.linear_nmr(*nmr), flow=FlowSpec("heavy_ball", Fraction(1)))
    rep = lie_count(system)
    assert rep.dim == lie_dim(*nmr)


@pytest.mark.extended
def test_formula_agreement_wide():
    system = build_system(Architecture.linear_nmr(1, 2, 8), flow=FlowSpec("heavy_ball", Fraction(1)))
    assert lie_count(system).dim == 22 == lie_dim(1, 2, 8)


def test_cap_downgrades_to_lower_bound():
    system = build_system(Architecture.linear_nmr(2, 2, 2), flow=FlowSpec("heavy_ball", Fraction(1)))
    res = generate_lie_algebra(system.fields, cap=1)
    assert res.stop == "cap" and not res.exact and not res.stabilized


def test_mirror_algebra_saturates_at_solver_bound():
    system = build_system(Architecture.linear_nmr(2, 3, 2), MetricSpec("mirror_diag"))
    rep = lie_count(system, upper_bound=system.ambient - 2)
    assert rep.stop == "saturated" and rep.law_count == 2


def test_law_count_from_dim_examples():
    assert law_count_from_dim(12, 6, "mf") == 1
    assert law_count_from_dim(1, 2, "gf") == 1
    assert law_count_from_dim(5, 2, "mf") == 0
    with pytest.raises(ValueError):
        law_count_from_dim(6, 2, "mf")
    with pytest.raises(ValueError):
        law_count_from_dim(1, 2, "xx")


def test_relu_single_neuron_block():
    for n, m in [(1, 1), (2, 1), (2, 3)]:
        system = build_system(Architecture("relu2", (n, m, 1)), flow=FlowSpec("heavy_ball", Fraction(1)))
        rep = lie_count(system)
        assert rep.law_count == 0 and rep.dim == 2 * system.D + 1


def test_degree_warning_and_budget():
    x = VectorField(UV, [v ** 3, u])
    y = VectorField(UV, [u, u * u])
    with pytest.warns(DegreeWarning):
        generate_lie_algebra([x, y], cap=3, degree_cap=2)
    with pytest.raises(LieBudgetExceeded):
        generate_lie_algebra([x, y], cap=6, max_terms=10)
