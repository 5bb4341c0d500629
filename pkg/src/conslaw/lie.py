"""Lie brackets of polynomial vector fields and trace dimensions of generated algebras.

The algebra is grown as W_k = W_{k-1} + [W_0, W_{k-1}]. Only brackets of
generators with elements added in the previous round are formed: by
bilinearity every other bracket is already in the span.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

from .ratpoly import Polynomial, SparseEchelon, VectorField, exact_rank
from .witness import find_witness


class LieBudgetExceeded(MemoryError):
    pass


class DegreeWarning(UserWarning):
    pass


def lie_bracket(x: VectorField, y: VectorField) -> VectorField:
    """[X, Y] = dX.Y - dY.X (Jacobians applied to the other field)."""
    if x.space != y.space:
        raise ValueError("space mismatch")
    space = x.space
    xs = [(k, c) for k, c in enumerate(x.components) if c.terms]
    ys = [(k, c) for k, c in enumerate(y.components) if c.terms]
    out = []
    for j in range(space.nvars):
        xj, yj = x.components[j], y.components[j]
        acc = Polynomial.zero(space)
        if xj.terms:
            used = xj.used_variables()
            for k, yk in ys:
                if k in used:
                    acc = acc + xj.partial(k) * yk
        if yj.terms:
            used = yj.used_variables()
            for k, xk in xs:
                if k in used:
                    acc = acc - yj.partial(k) * xk
        out.append(acc)
    return VectorField(space, out)


class _CoefficientIndex:
    """Stable integer ids for (component, exponent) keys."""

    def __init__(self):
        self.ids = {}

    def row(self, f: VectorField) -> dict:
        ids = self.ids
        row = {}
        for key, v in f.coefficient_items():
            i = ids.get(key)
            if i is None:
                i = ids[key] = len(ids)
            row[i] = v
        return row


@dataclass
class LieBasis:
    generators: list
    basis: list
    iterations: int
    stabilized: bool
    cap: int
    stop: str
    history: list = field(default_factory=list)
    witness: list | None = None
    dim: int | None = None
    upper_bound: int | None = None

    @property
    def exact(self) -> bool:
        return self.stop in ("stabilized", "saturated")


def _n_terms(f):
    return sum(len(c.terms) for c in f.components)


def generate_lie_algebra(generators: list, cap: int = 8, witness=None,
                         dim_upper_bound: int | None = None, degree_cap: int = 12,
                         max_terms: int = 5_000_000) -> LieBasis:
    """Grow a functionally independent spanning list of Lie(generators).

    With a ``witness`` the trace rank is tracked; reaching ``dim_upper_bound``
    (default: ambient dimension) stops generation with ``stop = "saturated"``.
    """
    if not generators:
        raise ValueError("need at least one generator")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    space = generators[0].space
    coeff_index = _CoefficientIndex()
    functional = SparseEchelon()
    pointwise = SparseEchelon()
    bound = space.nvars if dim_upper_bound is None else dim_upper_bound
    basis: list = []
    history: list = []
    total_terms = 0
    warned = False

    def admit(f):
        nonlocal total_terms, warned
        if f.is_zero() or not functional.add(coeff_index.row(f)):
            return False
        basis.append(f)
        total_terms += _n_terms(f)
        if total_terms > max_terms:
            raise LieBudgetExceeded(
                f"Lie generation exceeded {max_terms} stored terms "
                f"({len(basis)} fields, max degree {max(b.degree for b in basis)})")
        if f.degree > degree_cap and not warned:
            warnings.warn(f"bracket degree {f.degree} exceeds cap {degree_cap}", DegreeWarning)
            warned = True
        if witness is not None:
            vals = {i: v for i, v in enumerate(f.evaluate(witness)) if v}
            pointwise.add(vals)
        return True

    def saturated():
        return witness is not None and pointwise.rank >= bound

    gens = [g for g in generators if admit(g)]
    history.append(pointwise.rank if witness is not None else len(basis))
    frontier = list(gens)
    iterations = 0
    stop = "cap"
    if saturated():
        stop = "saturated"
    while stop != "saturated" and iterations < cap:
        iterations += 1
        added = []
        for a, g in enumerate(gens):
            for b, f in enumerate(frontier):
                if iterations == 1 and b <= a:
                    continue  # antisymmetry among generators
                if admit(lie_bracket(g, f)):
                    added.append(basis[-1])
                    if saturated():
                        break
            if saturated():
                break
        history.append(pointwise.rank if witness is not None else len(basis))
        if saturated():
            stop = "saturated"
            break
        if not added:
            stop = "stabilized"
            break
        frontier = added
    dim = pointwise.rank if witness is not None else None
    return LieBasis(list(generators), basis, iterations, stop == "stabilized", cap, stop,
                    history, witness, dim, bound)


def trace_dimension(basis, witness) -> int:
    """Rank of the basis fields evaluated at ``witness``."""
    fields = basis.basis if isinstance(basis, LieBasis) else list(basis)
    if not fields:
        return 0
    return exact_rank([f.evaluate(witness) for f in fields])


def law_count_from_dim(dim: int, D: int, mode: str) -> int:
    if mode == "mf":
        ambient = 2 * D + 1
    elif mode == "gf":
        ambient = D
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not 0 <= dim <= ambient:
        raise ValueError(f"dimension {dim} outside [0, {ambient}] for mode {mode}")
    return ambient - dim


@dataclass
class LieReport:
    dim: int
    ambient: int
    law_count: int
    iterations: int
    stabilized: bool
    stop: str
    witness: list
    seed: int
    history: list
    basis_size: int
    certificate: str


def lie_count(system, cap: int = 8, seed: int = 0, upper_bound: int | None = None,
              degree_cap: int = 12) -> LieReport:
    """Trace dimension of Lie(system.fields) at a certified witness."""
    witness, _ = find_witness(system.space, system.certificate, seed)
    res = generate_lie_algebra(system.fields, cap, witness, upper_bound, degree_cap)
    ambient = system.ambient
    return LieReport(res.dim, ambient, law_count_from_dim(res.dim, system.D, system.mode),
                     res.iterations, res.stabilized, res.stop, witness, seed, res.history,
                     len(res.basis), getattr(system.certificate, "description", "none"))
