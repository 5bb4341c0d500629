"""Seeded random rational witness points and genericity certificates."""

from __future__ import annotations

import random
from fractions import Fraction
from typing import Callable

from .ratpoly import VariableSpace, exact_rank

MAX_RESAMPLES = 32


class DegenerateWitness(RuntimeError):
    pass


def sample_point(space: VariableSpace, rng: random.Random) -> list:
    """Numerators uniform in [-19, 19] without 0, denominators in [1, 7].

    The time-like coordinate is drawn positive (t > 0 and s = exp(tau t) > 0).
    """
    point = []
    for i in range(space.nvars):
        num = rng.randint(1, 19)
        if rng.random() < 0.5 and i != space.time_index:
            num = -num
        point.append(Fraction(num, rng.randint(1, 7)))
    return point


def find_witness(space: VariableSpace, certificate: Callable | None, seed: int,
                 tries: int = MAX_RESAMPLES):
    """First sampled point passing ``certificate``; returns (point, attempts)."""
    rng = random.Random(seed)
    for attempt in range(1, tries + 1):
        point = sample_point(space, rng)
        if certificate is None or certificate(point):
            return point, attempt
    raise DegenerateWitness("degenerate witness")


def stacked_rank_certificate(space: VariableSpace, blocks: list) -> Callable:
    """Full rank of vertically stacked matrices.

    ``blocks`` is a list of (matrix name, transpose?, velocity?) triples; each
    contributes rows to the stack (after the optional transpose).
    """
    idx = []
    for name, transpose, velocity in blocks:
        m = space.matrix_indices(name, velocity=velocity)
        if transpose:
            m = [list(col) for col in zip(*m)]
        idx.extend(m)
    rows, cols = len(idx), len(idx[0])
    full = min(rows, cols)

    def check(point):
        mat = [[point[i] for i in row] for row in idx]
        return exact_rank(mat) == full

    check.description = f"rank of stacked {'/'.join(b[0] + ('dot' if b[2] else '') for b in blocks)} = {full}"
    return check


def nonzero_certificate(polys: list) -> Callable:
    def check(point):
        return all(p.evaluate(point) != 0 for p in polys)

    check.description = "metric diagonal nonzero"
    return check


def all_of(*checks) -> Callable:
    checks = [c for c in checks if c is not None]

    def check(point):
        return all(c(point) for c in checks)

    check.description = "; ".join(getattr(c, "description", "check") for c in checks)
    return check
