"""Polynomial conservation laws up to a degree bound.

A polynomial h is a law of a field family iff <grad h, X_i> vanishes
identically for every generator X_i. Writing h as an unknown combination of
monomials turns this into a sparse linear system over Q whose kernel is the
space of laws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

from .ratpoly import (Polynomial, SparseEchelon, VariableSpace, connected_blocks, exact_rank,
                      sparse_nullspace)
from .witness import find_witness


class UnsoundLaw(RuntimeError):
    pass


def monomial_basis(space: VariableSpace, degree: int, time_degree_cap: int | None = None) -> list:
    """Exponent vectors of total degree <= ``degree`` in graded-lex order.

    The exponent of the time-like variable (if any) is capped at
    ``time_degree_cap``.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    n = space.nvars
    ti = space.time_index
    cap = degree if (ti is None or time_degree_cap is None) else time_degree_cap
    out = []
    for d in range(degree + 1):
        # combinations in lex order of variable indices give lex-descending exponents
        for combo in combinations_with_replacement(range(n), d):
            e = [0] * n
            for i in combo:
                e[i] += 1
            if ti is not None and e[ti] > cap:
                continue
            out.append(tuple(e))
    return out


@dataclass
class OrthogonalitySystem:
    """Sparse rows of the linear map (ansatz coefficients) -> <grad h, X_i>."""

    columns: list
    rows: list
    row_keys: list

    @property
    def ncols(self) -> int:
        return len(self.columns)

    def to_dense(self) -> list:
        from fractions import Fraction

        dense = []
        for row in self.rows:
            r = [Fraction(0)] * self.ncols
            for c, v in row.items():
                r[c] = v
            dense.append(r)
        return dense


def _shift(e, j):
    return e[:j] + (e[j] - 1,) + e[j + 1:]


def build_orthogonality_system(fields: list, degree: int, time_degree_cap: int | None = None,
                               include_constant: bool = True) -> OrthogonalitySystem:
    if not fields:
        raise ValueError("empty field list")
    space = fields[0].space
    cols = monomial_basis(space, degree, time_degree_cap)
    if not include_constant:
        cols = [e for e in cols if any(e)]
    row_index: dict = {}
    rows: list = []
    keys: list = []
    # field components as lists of (exps, coeff) per coordinate
    comp_terms = [[list(c.terms.items()) for c in f.components] for f in fields]
    for ci, e in enumerate(cols):
        for j, k in enumerate(e):
            if not k:
                continue
            base = _shift(e, j)
            for fi, comps in enumerate(comp_terms):
                for fe, fc in comps[j]:
                    r = tuple([a + b for a, b in zip(base, fe)])
                    key = (fi, r)
                    ri = row_index.get(key)
                    if ri is None:
                        ri = row_index[key] = len(rows)
                        rows.append({})
                        keys.append(key)
                    row = rows[ri]
                    v = row.get(ci, 0) + fc * k
                    if v:
                        row[ci] = v
                    else:
                        del row[ci]
    # deterministic row order (sorted by key), drop rows that cancelled out
    order = sorted((i for i in range(len(rows)) if rows[i]), key=lambda i: keys[i])
    return OrthogonalitySystem(cols, [rows[i] for i in order], [keys[i] for i in order])


def gradient_matrix(laws: list, point) -> list:
    return [[d.evaluate(point) for d in h.gradient()] for h in laws]


def count_independent(laws: list, witness) -> int:
    """Rank of the gradient matrix [grad h_k(witness)]."""
    if not laws:
        return 0
    return exact_rank(gradient_matrix(laws, witness))


def verify_law(h: Polynomial, fields: list) -> bool:
    return all(f.apply(h).is_zero() for f in fields)


@dataclass
class LawBasis:
    laws: list
    degree: int
    time_degree_cap: int | None
    independent: int
    witness: list
    witness_certificate: str
    seed: int
    witness_attempts: int = 1
    columns: int = 0
    rows: int = 0
    blocks: int = 0
    extras: dict = field(default_factory=dict)

    def independent_subset(self) -> list:
        """Laws whose gradients at the witness are linearly independent."""
        ech = SparseEchelon()
        chosen = []
        for h in self.laws:
            g = {i: v for i, v in enumerate(d.evaluate(self.witness) for d in h.gradient()) if v}
            if ech.add(g):
                chosen.append(h)
        return chosen


def solve_laws(fields: list, degree: int, time_degree_cap: int | None = None,
               seed: int = 0, certificate=None) -> LawBasis:
    """All polynomial laws up to ``degree`` (constants excluded)."""
    system = build_orthogonality_system(fields, degree, time_degree_cap, include_constant=False)
    space = fields[0].space
    kernel = sparse_nullspace(system.rows, system.ncols)
    laws = []
    for vec in kernel:
        h = Polynomial(space, {system.columns[c]: v for c, v in vec.items()}).primitive()
        if not verify_law(h, fields):
            raise UnsoundLaw(f"kernel vector failed re-substitution: {h}")
        laws.append(h)
    laws.sort(key=lambda h: (h.degree, len(h.terms), h.dumps()))
    witness, attempts = find_witness(space, certificate, seed)
    independent = count_independent(laws, witness)
    desc = getattr(certificate, "description", "none")
    nblocks = len(connected_blocks(system.rows, system.ncols))
    return LawBasis(laws, degree, time_degree_cap, independent, witness, desc, seed,
                    attempts, system.ncols, len(system.rows), nblocks)


def solve_system(system, degree: int | None = None, time_degree_cap: int | None = None,
                 seed: int = 0) -> LawBasis:
    """:func:`solve_laws` on a :class:`conslaw.lift.System` with its defaults."""
    degree = system.default_degree if degree is None else degree
    if time_degree_cap is None and system.mode == "mf":
        time_degree_cap = system.default_time_cap
    return solve_laws(system.fields, degree, time_degree_cap, seed, system.certificate)
