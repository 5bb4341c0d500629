"""Exact rational polynomials, vector fields and linear algebra.

Coefficients are :class:`fractions.Fraction` (always stored in lowest terms
with a positive denominator). Polynomials are sparse maps from dense exponent
tuples to nonzero coefficients over a shared :class:`VariableSpace`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from typing import Iterable, Mapping, Sequence

ExactScalar = Fraction

KINDS = ("time", "time-surrogate", "parameter", "velocity")


class SpaceMismatch(ValueError):
    pass


def as_scalar(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        raise TypeError("floats are not accepted as exact scalars")
    return Fraction(x)


# ---------------------------------------------------------------------------
# variable space


@dataclass(frozen=True)
class VariableSpace:
    """Ordered coordinates ``(time-like?, vec(U_1)..vec(U_q), vec(dU_1)..vec(dU_q))``.

    ``blocks[i]`` is ``(matrix, row, col)`` for parameter and velocity
    coordinates and ``None`` for the time-like one. ``shapes`` lists
    ``(matrix, rows, cols)`` for every weight matrix, in layout order.
    """

    names: tuple
    kinds: tuple
    blocks: tuple
    shapes: tuple = ()
    _index: dict = field(default=None, compare=False, hash=False, repr=False)

    def __post_init__(self):
        names, kinds = self.names, self.kinds
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        if not (len(names) == len(kinds) == len(self.blocks)):
            raise ValueError("names, kinds and blocks must have equal length")
        for k in kinds:
            if k not in KINDS:
                raise ValueError(f"unknown variable kind {k!r}")
        time_like = [i for i, k in enumerate(kinds) if k in ("time", "time-surrogate")]
        if len(time_like) > 1 or (time_like and time_like[0] != 0):
            raise ValueError("at most one time-like variable, at index 0")
        n_par = kinds.count("parameter")
        n_vel = kinds.count("velocity")
        if n_vel and n_vel != n_par:
            raise ValueError("parameter and velocity blocks must have equal length")
        expected = [
            (name, row, col)
            for name, rows, cols in self.shapes
            for col in range(cols)
            for row in range(rows)
        ]
        params = [b for b, k in zip(self.blocks, kinds) if k == "parameter"]
        if params != expected:
            raise ValueError("block map must enumerate the parameter matrices column-major")
        if n_vel:
            vels = [b for b, k in zip(self.blocks, kinds) if k == "velocity"]
            if vels != expected:
                raise ValueError("velocity blocks must mirror the parameter blocks")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    # constructors -----------------------------------------------------

    @classmethod
    def from_shapes(cls, shapes: Sequence[tuple], velocities: bool = False,
                    time: str | None = None) -> "VariableSpace":
        """Build the canonical layout for weight matrices ``shapes``.

        ``time`` is ``None`` (no time-like coordinate), ``"time"`` (named t)
        or ``"time-surrogate"`` (named s).
        """
        shapes = tuple((str(n), int(r), int(c)) for n, r, c in shapes)
        names, kinds, blocks = [], [], []
        if time is not None:
            names.append("t" if time == "time" else "s")
            kinds.append(time)
            blocks.append(None)
        layout = [(n, r, c) for n, rows, cols in shapes for c in range(cols) for r in range(rows)]
        for n, r, c in layout:
            names.append(_coord_name(n, r, c, shapes))
            kinds.append("parameter")
            blocks.append((n, r, c))
        if velocities:
            for n, r, c in layout:
                names.append("d" + _coord_name(n, r, c, shapes))
                kinds.append("velocity")
                blocks.append((n, r, c))
        return cls(tuple(names), tuple(kinds), tuple(blocks), shapes)

    @classmethod
    def scalars(cls, names: Iterable[str]) -> "VariableSpace":
        """A space of plain named parameters (each its own 1x1 matrix)."""
        names = tuple(names)
        return cls(names, ("parameter",) * len(names),
                   tuple((n, 0, 0) for n in names), tuple((n, 1, 1) for n in names))

    # queries ------------------------------------------------------------

    def __len__(self):
        return len(self.names)

    @property
    def nvars(self) -> int:
        return len(self.names)

    @property
    def D(self) -> int:
        return self.kinds.count("parameter")

    @property
    def has_velocity(self) -> bool:
        return "velocity" in self.kinds

    @property
    def time_index(self):
        return 0 if self.kinds and self.kinds[0] in ("time", "time-surrogate") else None

    @property
    def time_kind(self):
        return self.kinds[0] if self.time_index is not None else None

    @property
    def parameter_indices(self) -> list:
        return [i for i, k in enumerate(self.kinds) if k == "parameter"]

    @property
    def velocity_indices(self) -> list:
        return [i for i, k in enumerate(self.kinds) if k == "velocity"]

    def index(self, name: str) -> int:
        return self._index[name]

    def shape_of(self, matrix: str) -> tuple:
        for n, r, c in self.shapes:
            if n == matrix:
                return r, c
        raise KeyError(matrix)

    def matrix_indices(self, matrix: str, velocity: bool = False) -> list:
        """Row-major nested list of coordinate indices of ``matrix``."""
        rows, cols = self.shape_of(matrix)
        kind = "velocity" if velocity else "parameter"
        out = [[None] * cols for _ in range(rows)]
        for i, (b, k) in enumerate(zip(self.blocks, self.kinds)):
            if k == kind and b[0] == matrix:
                out[b[1]][b[2]] = i
        return out

    def parameter_space(self) -> "VariableSpace":
        return VariableSpace.from_shapes(self.shapes)

    def to_json(self) -> dict:
        return {"vars": list(self.names), "kinds": list(self.kinds),
                "shapes": [list(s) for s in self.shapes]}


def _coord_name(n, r, c, shapes):
    rows, cols = next((rr, cc) for nn, rr, cc in shapes if nn == n)
    if rows == 1 and cols == 1:
        return n
    return f"{n}[{r},{c}]"


def _check_same(a, b):
    if a is not b and a != b:
        raise SpaceMismatch("space mismatch")


# ---------------------------------------------------------------------------
# polynomials


class Polynomial:
    """Sparse multivariate polynomial with exact rational coefficients."""

    __slots__ = ("space", "terms", "_hash")

    def __init__(self, space: VariableSpace, terms: Mapping | None = None):
        n = space.nvars
        clean = {}
        for exps, c in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != n:
                raise ValueError("exponent vector length must equal the number of variables")
            if any(e < 0 for e in exps):
                raise ValueError("exponents must be natural numbers")
            c = as_scalar(c)
            if c:
                clean[exps] = clean.get(exps, 0) + c
        self.space = space
        self.terms = {e: c for e, c in clean.items() if c}
        self._hash = None

    @classmethod
    def _raw(cls, space, terms):
        # trusted constructor: terms already canonical
        p = cls.__new__(cls)
        p.space = space
        p.terms = terms
        p._hash = None
        return p

    @classmethod
    def zero(cls, space):
        return cls._raw(space, {})

    @classmethod
    def constant(cls, space, c):
        c = as_scalar(c)
        return cls._raw(space, {(0,) * space.nvars: c} if c else {})

    @classmethod
    def var(cls, space, i):
        if isinstance(i, str):
            i = space.index(i)
        e = [0] * space.nvars
        e[i] = 1
        return cls._raw(space, {tuple(e): Fraction(1)})

    @classmethod
    def monomial(cls, space, exps, coeff=1):
        return cls(space, {tuple(exps): coeff})

    # arithmetic ---------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Polynomial):
            _check_same(self.space, other.space)
            return other
        return Polynomial.constant(self.space, other)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            v = out.get(e, 0) + c
            if v:
                out[e] = v
            else:
                out.pop(e, None)
        return Polynomial._raw(self.space, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw(self.space, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return self.scale(other)
        _check_same(self.space, other.space)
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple([a + b for a, b in zip(e1, e2)])
                v = out.get(e, 0) + c1 * c2
                if v:
                    out[e] = v
                else:
                    out.pop(e, None)
        return Polynomial._raw(self.space, out)

    def __rmul__(self, other):
        return self.scale(other)

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        result = Polynomial.constant(self.space, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def scale(self, c):
        c = as_scalar(c)
        if not c:
            return Polynomial.zero(self.space)
        return Polynomial._raw(self.space, {e: v * c for e, v in self.terms.items()})

    # calculus -----------------------------------------------------------

    def partial(self, var) -> "Polynomial":
        if isinstance(var, str):
            var = self.space.index(var)
        if not 0 <= var < self.space.nvars:
            raise IndexError("variable index out of range")
        out = {}
        for e, c in self.terms.items():
            k = e[var]
            if k:
                ne = e[:var] + (k - 1,) + e[var + 1:]
                out[ne] = c * k
        return Polynomial._raw(self.space, out)

    def gradient(self) -> list:
        return [self.partial(i) for i in range(self.space.nvars)]

    def evaluate(self, point: Sequence) -> Fraction:
        if len(point) != self.space.nvars:
            raise ValueError("point dimension mismatch")
        point = [as_scalar(x) for x in point]
        total = Fraction(0)
        for e, c in self.terms.items():
            v = c
            for x, k in zip(point, e):
                if k:
                    v *= x ** k
            total += v
        return total

    __call__ = evaluate

    # structure ----------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def __bool__(self):
        return bool(self.terms)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=-1)

    def used_variables(self) -> set:
        return {i for e in self.terms for i, k in enumerate(e) if k}

    def embed(self, space: VariableSpace, index_map: Sequence[int]) -> "Polynomial":
        """Re-express in ``space``; variable ``i`` goes to ``index_map[i]``."""
        n = space.nvars
        out = {}
        for e, c in self.terms.items():
            ne = [0] * n
            for i, k in enumerate(e):
                if k:
                    ne[index_map[i]] += k
            out[tuple(ne)] = c
        return Polynomial._raw(space, out)

    def normalized(self) -> "Polynomial":
        return Polynomial(self.space, self.terms)

    def primitive(self) -> "Polynomial":
        """Scale to integer coprime coefficients with a positive leading term."""
        if not self.terms:
            return self
        den = 1
        for c in self.terms.values():
            den = den * c.denominator // gcd(den, c.denominator)
        ints = {e: int(c * den) for e, c in self.terms.items()}
        g = 0
        for v in ints.values():
            g = gcd(g, v)
        lead = max(ints, key=_term_order)
        if ints[lead] < 0:
            g = -g
        return Polynomial._raw(self.space, {e: Fraction(v // g) for e, v in ints.items()})

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            if self.space is not None and not isinstance(other, (Polynomial, VectorField)):
                try:
                    other = Polynomial.constant(self.space, other)
                except (TypeError, ValueError):
                    return NotImplemented
            else:
                return NotImplemented
        return self.space == other.space and self.terms == other.terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.space.names, frozenset(self.terms.items())))
        return self._hash

    def __repr__(self):
        return f"Polynomial({self})"

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for e in sorted(self.terms, key=_term_order, reverse=True):
            c = self.terms[e]
            mono = "*".join(
                (n if k == 1 else f"{n}^{k}") for n, k in zip(self.space.names, e) if k
            )
            if not mono:
                parts.append(str(c))
            elif c == 1:
                parts.append(mono)
            elif c == -1:
                parts.append("-" + mono)
            else:
                parts.append(f"{c}*{mono}")
        return " + ".join(parts).replace("+ -", "- ")

    # serialization ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "vars": list(self.space.names),
            "terms": [
                {"coeff": f"{c.numerator}/{c.denominator}", "exps": list(e)}
                for e, c in sorted(self.terms.items(), key=lambda t: _term_order(t[0]))
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, obj, space: VariableSpace | None = None) -> "Polynomial":
        if isinstance(obj, str):
            obj = json.loads(obj)
        names = tuple(obj["vars"])
        if space is None:
            space = VariableSpace.scalars(names)
        elif tuple(space.names) != names:
            raise SpaceMismatch("space mismatch")
        return cls(space, {tuple(t["exps"]): Fraction(t["coeff"]) for t in obj["terms"]})


def _term_order(e):
    return (sum(e), e)


# ---------------------------------------------------------------------------
# vector fields


class VectorField:
    """A polynomial vector field: one :class:`Polynomial` per coordinate."""

    __slots__ = ("space", "components")

    def __init__(self, space: VariableSpace, components: Sequence[Polynomial]):
        components = tuple(components)
        if len(components) != space.nvars:
            raise ValueError("a vector field needs one component per coordinate")
        for c in components:
            _check_same(space, c.space)
        self.space = space
        self.components = components

    @classmethod
    def zero(cls, space):
        z = Polynomial.zero(space)
        return cls(space, [z] * space.nvars)

    @classmethod
    def from_dict(cls, space, comps: Mapping[int, Polynomial]):
        z = Polynomial.zero(space)
        return cls(space, [comps.get(i, z) for i in range(space.nvars)])

    def __getitem__(self, i):
        return self.components[i]

    def __len__(self):
        return len(self.components)

    def __add__(self, other):
        _check_same(self.space, other.space)
        return VectorField(self.space, [a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other):
        _check_same(self.space, other.space)
        return VectorField(self.space, [a - b for a, b in zip(self.components, other.components)])

    def __neg__(self):
        return VectorField(self.space, [-a for a in self.components])

    def scale(self, c):
        if isinstance(c, Polynomial):
            return VectorField(self.space, [a * c for a in self.components])
        return VectorField(self.space, [a.scale(c) for a in self.components])

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def apply(self, h: Polynomial) -> Polynomial:
        """Directional derivative ``<grad h, X>``."""
        _check_same(self.space, h.space)
        total = Polynomial.zero(self.space)
        for j, comp in enumerate(self.components):
            if comp.terms:
                d = h.partial(j)
                if d.terms:
                    total = total + comp * d
        return total

    def evaluate(self, point) -> list:
        return [c.evaluate(point) for c in self.components]

    @property
    def degree(self) -> int:
        return max((c.degree for c in self.components), default=-1)

    def embed(self, space, index_map):
        comps = {index_map[i]: c.embed(space, index_map) for i, c in enumerate(self.components)}
        return VectorField.from_dict(space, comps)

    def coefficient_items(self):
        """Yield ``((component, exponents), coeff)`` over all nonzero terms."""
        for i, c in enumerate(self.components):
            for e, v in c.terms.items():
                yield (i, e), v

    def __eq__(self, other):
        if not isinstance(other, VectorField):
            return NotImplemented
        return self.space == other.space and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __repr__(self):
        return "VectorField(" + ", ".join(str(c) for c in self.components) + ")"

    def to_json(self):
        return {"vars": list(self.space.names),
                "components": [c.to_json()["terms"] for c in self.components]}


# ---------------------------------------------------------------------------
# dense exact linear algebra (fraction-free)


def _integer_rows(m) -> list:
    """Scale each row to integers (row scaling preserves rank and kernel)."""
    rows = []
    for row in m:
        row = [as_scalar(x) for x in row]
        den = 1
        for x in row:
            den = den * x.denominator // gcd(den, x.denominator)
        rows.append([int(x * den) for x in row])
    return rows


def _bareiss(a: list, ncols: int):
    """In-place fraction-free elimination; returns pivot columns."""
    nrows = len(a)
    prev = 1
    r = 0
    pivots = []
    for c in range(ncols):
        if r == nrows:
            break
        p = next((i for i in range(r, nrows) if a[i][c]), None)
        if p is None:
            continue
        if p != r:
            a[p], a[r] = a[r], a[p]
        prow = a[r]
        pv = prow[c]
        for i in range(r + 1, nrows):
            row = a[i]
            f = row[c]
            for j in range(c + 1, ncols):
                row[j] = (pv * row[j] - f * prow[j]) // prev
            row[c] = 0
        # rows above the pivot row keep their scale; only the trailing block
        # participates in the Bareiss exact-division recurrence
        prev = pv
        pivots.append(c)
        r += 1
    return pivots


def exact_rank(m) -> int:
    """Rank over the rationals of a rectangular matrix (list of rows)."""
    m = list(m)
    if not m:
        return 0
    ncols = len(m[0])
    if ncols == 0:
        return 0
    a = _integer_rows(m)
    return len(_bareiss(a, ncols))


def exact_nullspace(m, ncols: int | None = None) -> list:
    """Basis of the right kernel, as lists of Fractions."""
    m = list(m)
    if ncols is None:
        if not m:
            raise ValueError("ncols required for an empty matrix")
        ncols = len(m[0])
    if not m:
        return [[Fraction(int(i == j)) for i in range(ncols)] for j in range(ncols)]
    a = _integer_rows(m)
    pivots = _bareiss(a, ncols)
    # back substitution on the echelon rows (exact rationals from here on)
    echelon = [[Fraction(x) for x in a[i]] for i in range(len(pivots))]
    for k in range(len(pivots) - 1, -1, -1):
        c = pivots[k]
        row = echelon[k]
        inv = 1 / row[c]
        echelon[k] = row = [x * inv for x in row]
        for i in range(k):
            f = echelon[i][c]
            if f:
                echelon[i] = [x - f * y for x, y in zip(echelon[i], row)]
    pivset = set(pivots)
    basis = []
    for f in range(ncols):
        if f in pivset:
            continue
        v = [Fraction(0)] * ncols
        v[f] = Fraction(1)
        for k, c in enumerate(pivots):
            v[c] = -echelon[k][f]
        basis.append(v)
    return basis


def mat_vec(m, v) -> list:
    return [sum((as_scalar(a) * b for a, b in zip(row, v)), Fraction(0)) for row in m]


# ---------------------------------------------------------------------------
# sparse exact elimination


def _primitive_row(row: dict) -> dict:
    g = 0
    for v in row.values():
        g = gcd(g, v)
        if g == 1:
            return row
    if g > 1:
        return {c: v // g for c, v in row.items()}
    return row


def sparse_integer_row(row: Mapping) -> dict:
    """Clear denominators of a sparse rational row and make it primitive."""
    den = 1
    for x in row.values():
        x = as_scalar(x)
        den = den * x.denominator // gcd(den, x.denominator)
    out = {c: int(as_scalar(x) * den) for c, x in row.items() if x}
    return _primitive_row(out)


class SparseEchelon:
    """Incremental echelon form of sparse rows over Q.

    Rows are stored as primitive integer dicts ``{col: value}``; each stored
    row is keyed by its leading (smallest) column. Elimination is
    fraction-free: ``row <- a*row - b*pivot_row`` followed by content removal.
    """

    def __init__(self):
        self.pivots: dict = {}

    def __len__(self):
        return len(self.pivots)

    @property
    def rank(self) -> int:
        return len(self.pivots)

    def reduce(self, row: dict) -> dict:
        row = dict(row)
        pivots = self.pivots
        while row:
            lead = min(row)
            prow = pivots.get(lead)
            if prow is None:
                return row
            a = prow[lead]
            b = row[lead]
            g = gcd(a, b)
            ma, mb = a // g, b // g
            if ma != 1:
                row = {c: v * ma for c, v in row.items()}
            for c, v in prow.items():
                nv = row.get(c, 0) - mb * v
                if nv:
                    row[c] = nv
                else:
                    del row[c]
            row = _primitive_row(row)
        return row

    def add(self, row: Mapping) -> bool:
        """Insert a row; return True if it increased the rank."""
        if row and not all(isinstance(v, int) for v in row.values()):
            row = sparse_integer_row(row)
        else:
            row = _primitive_row({c: v for c, v in row.items() if v})
        red = self.reduce(row)
        if not red:
            return False
        self.pivots[min(red)] = red
        return True

    def is_independent(self, row: Mapping) -> bool:
        if row and not all(isinstance(v, int) for v in row.values()):
            row = sparse_integer_row(row)
        return bool(self.reduce(row))

    def nullspace(self, ncols: int) -> list:
        """Kernel basis (sparse dicts of Fractions) of the inserted rows."""
        order = sorted(self.pivots, reverse=True)
        reduced = {}
        for p in order:
            row = dict(self.pivots[p])
            # clear entries in later pivot columns using already reduced rows
            for c in sorted((c for c in row if c != p and c in reduced)):
                if c not in row:
                    continue
                q = reduced[c]
                a, b = q[c], row[c]
                g = gcd(a, b)
                ma, mb = a // g, b // g
                if ma != 1:
                    row = {k: v * ma for k, v in row.items()}
                for k, v in q.items():
                    nv = row.get(k, 0) - mb * v
                    if nv:
                        row[k] = nv
                    else:
                        del row[k]
            reduced[p] = _primitive_row(row)
        free = [c for c in range(ncols) if c not in self.pivots]
        basis = []
        # column -> list of (pivot, coefficient) for rows touching that free column
        touching = {}
        for p, row in reduced.items():
            for c, v in row.items():
                if c != p:
                    touching.setdefault(c, []).append((p, v))
        for f in free:
            vec = {f: Fraction(1)}
            for p, v in touching.get(f, ()):
                vec[p] = Fraction(-v, reduced[p][p])
            basis.append(vec)
        return basis


def connected_blocks(rows: Sequence[Mapping], ncols: int) -> list:
    """Group column indices that are linked through shared rows."""
    parent = list(range(ncols))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for row in rows:
        it = iter(row)
        first = next(it, None)
        if first is None:
            continue
        r0 = find(first)
        for c in it:
            rc = find(c)
            if rc != r0:
                parent[rc] = r0
    groups = {}
    for c in range(ncols):
        groups.setdefault(find(c), []).append(c)
    return sorted(groups.values(), key=lambda g: g[0])


def sparse_nullspace(rows: Sequence[Mapping], ncols: int) -> list:
    """Kernel basis of a sparse rational matrix, solving decoupled blocks apart."""
    blocks = connected_blocks(rows, ncols)
    col_block = {}
    for b, cols in enumerate(blocks):
        for c in cols:
            col_block[c] = b
    per_block = [[] for _ in blocks]
    for row in rows:
        if row:
            per_block[col_block[next(iter(row))]].append(row)
    basis = []
    for cols, brows in zip(blocks, per_block):
        local = {c: i for i, c in enumerate(cols)}
        ech = SparseEchelon()
        for row in brows:
            ech.add({local[c]: v for c, v in row.items()})
        for vec in ech.nullspace(len(cols)):
            basis.append({cols[i]: v for i, v in vec.items()})
    basis.sort(key=lambda v: min(v))
    return basis


def poly_arith(op: str, a: Polynomial, b) -> Polynomial:
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "scale":
        return a.scale(b)
    raise ValueError(f"unknown operation {op!r}")
