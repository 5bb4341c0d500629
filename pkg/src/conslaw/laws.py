"""Closed-form conservation-law families and the law-counting formulas.

These are independent oracles for the solver and the Lie-dimension route.
Momentum laws carry the factor exp(int tau), realized as the surrogate s
(heavy ball, tau != 0), 1 (tau = 0) or t^3 (Nesterov, tau = 3/t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .model import Architecture, ConfigError, symbolic_matrix
from .ratpoly import Polynomial, VariableSpace


@dataclass(frozen=True)
class LawFamily:
    name: str
    realization: Polynomial
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = {"family": self.name}
        d.update(self.params)
        d["law"] = self.realization.to_json()
        return d


def _transpose(a):
    return [list(col) for col in zip(*a)]


def _matmul(a, b, space):
    out = []
    for row in a:
        new = []
        for j in range(len(b[0])):
            acc = Polynomial.zero(space)
            for k, x in enumerate(row):
                if b[k][j].terms and x.terms:
                    acc = acc + x * b[k][j]
            new.append(acc)
        out.append(new)
    return out


def _inner(a, b, space):
    acc = Polynomial.zero(space)
    for ra, rb in zip(a, b):
        for x, y in zip(ra, rb):
            acc = acc + x * y
    return acc


def _const_matrix(rows, space):
    return [[Polynomial.constant(space, v) for v in row] for row in rows]


def elementary_skew(n: int, k: int, l: int) -> list:
    """A = E_{k,l} - E_{l,k} (0-based indices)."""
    a = [[0] * n for _ in range(n)]
    a[k][l] = 1
    a[l][k] = -1
    return a


def _layer_names(arch):
    return [s[0] for s in arch.shapes()]


# ---------------------------------------------------------------------------
# gradient-flow families


def balancedness_gf_laws(arch: Architecture, space: VariableSpace | None = None) -> list:
    space = space or arch.parameter_space()
    out = []
    if arch.kind == "linear":
        names = _layer_names(arch)
        for i in range(len(names) - 1):
            A = symbolic_matrix(space, names[i])
            B = symbolic_matrix(space, names[i + 1])
            left = _matmul(_transpose(A), A, space)
            right = _matmul(B, _transpose(B), space)
            w = len(left)
            for a in range(w):
                for b in range(a, w):
                    h = left[a][b] - right[a][b]
                    out.append(LawFamily("balancedness_gf", h, {"i": i + 1, "entry": [a, b]}))
        return out
    U = symbolic_matrix(space, "U")
    V = symbolic_matrix(space, "V")
    b = symbolic_matrix(space, "b") if arch.bias else None
    n, m, r = arch.dims
    for j in range(r):
        h = Polynomial.zero(space)
        for k in range(n):
            h = h + U[k][j] * U[k][j]
        for l in range(m):
            h = h - V[l][j] * V[l][j]
        if b is not None:
            h = h - b[0][j] * b[0][j]
        out.append(LawFamily("relu_gf", h, {"j": j}))
    return out


def nmf_gf_laws(arch: Architecture, space: VariableSpace | None = None) -> list:
    """1^T U - 1^T V per column, for phi = U V^T (two-layer linear)."""
    if arch.kind != "linear" or not arch.is_two_layer:
        raise ConfigError("NMF laws need a two-layer linear architecture")
    space = space or arch.parameter_space()
    U = symbolic_matrix(space, "U1")
    Vt = symbolic_matrix(space, "U2")
    n, m, r = arch.nmr
    out = []
    for j in range(r):
        h = Polynomial.zero(space)
        for k in range(n):
            h = h + U[k][j]
        for l in range(m):
            h = h - Vt[j][l]
        out.append(LawFamily("nmf_gf", h, {"j": j}))
    return out


def icnn_gf_laws(arch: Architecture, space: VariableSpace | None = None) -> list:
    """1^T U_j - (|V_j|^2 + b_j^2)/2 per hidden neuron."""
    if arch.kind != "relu2":
        raise ConfigError("ICNN laws need a relu2 architecture")
    space = space or arch.parameter_space()
    U = symbolic_matrix(space, "U")
    V = symbolic_matrix(space, "V")
    b = symbolic_matrix(space, "b") if arch.bias else None
    n, m, r = arch.dims
    half = Fraction(1, 2)
    out = []
    for j in range(r):
        h = Polynomial.zero(space)
        for k in range(n):
            h = h + U[k][j]
        sq = Polynomial.zero(space)
        for l in range(m):
            sq = sq + V[l][j] * V[l][j]
        if b is not None:
            sq = sq + b[0][j] * b[0][j]
        out.append(LawFamily("icnn_gf", h - sq.scale(half), {"j": j}))
    return out


# ---------------------------------------------------------------------------
# momentum families


def momentum_factor(space: VariableSpace, flow) -> Polynomial:
    if flow.kind == "heavy_ball":
        if flow.tau == 0:
            return Polynomial.constant(space, 1)
        if space.time_kind != "time-surrogate":
            raise ConfigError("heavy ball with tau != 0 is realized in the surrogate s")
        return Polynomial.var(space, 0)
    if flow.kind == "nesterov":
        if space.time_kind != "time":
            raise ConfigError("Nesterov laws live in t")
        return Polynomial.var(space, 0) ** 3
    raise ConfigError("momentum laws need a heavy-ball or Nesterov flow")


def momentum_space(arch: Architecture, flow) -> VariableSpace:
    time = "time-surrogate" if flow.kind == "heavy_ball" and flow.tau != 0 else "time"
    return arch.lifted_space(time)


def pca_momentum_laws(arch: Architecture, flow, space: VariableSpace | None = None) -> list:
    """factor * (<dU_i, U_i A> + <dU_{i+1}, A^T U_{i+1}>) for elementary skew A,
    plus the extra family when n_{i-1} = n_{i+1} = 1."""
    if arch.kind != "linear":
        raise ConfigError("PCA momentum laws need a linear architecture")
    space = space or momentum_space(arch, flow)
    factor = momentum_factor(space, flow)
    names = _layer_names(arch)
    widths = arch.dims
    out = []
    for i in range(len(names) - 1):
        Ui = symbolic_matrix(space, names[i])
        Uj = symbolic_matrix(space, names[i + 1])
        dUi = symbolic_matrix(space, names[i], velocity=True)
        dUj = symbolic_matrix(space, names[i + 1], velocity=True)
        w = widths[i + 1]
        extra = widths[i] == 1 and widths[i + 2] == 1
        for k in range(w):
            for l in range(k + 1, w):
                A = _const_matrix(elementary_skew(w, k, l), space)
                h = (_inner(dUi, _matmul(Ui, A, space), space)
                     + _inner(dUj, _matmul(_transpose(A), Uj, space), space))
                out.append(LawFamily("pca_mf", factor * h, {"i": i + 1, "A": [k, l]}))
                if extra:
                    g = (_inner(dUi, _matmul(_transpose(Uj), A, space), space)
                         + _inner(_transpose(dUj), _matmul(Ui, A, space), space))
                    out.append(LawFamily("pca_mf_extra_11", factor * g, {"i": i + 1, "A": [k, l]}))
    return out


# ---------------------------------------------------------------------------
# counting formulas (two-layer linear, phi = U V^T, U n x r, V m x r)


def _half(x):
    if x % 2:
        raise ArithmeticError("non-integral count")
    return x // 2


def predicted_counts(n: int, m: int, r: int, mode: str, rank_override: int | None = None) -> int:
    if mode == "gf":
        rk = min(r, n + m) if rank_override is None else rank_override
        return _half(rk * (2 * r + 1 - rk))
    if mode != "mf":
        raise ValueError(f"unknown mode {mode!r}")
    if n == 1 and m == 1:
        if r >= 4:
            return 4 * r - 6
        raise ConfigError("not covered by the closed-form momentum count; use computed Lie dimension")
    rk = min(r, 2 * (n + m)) if rank_override is None else rank_override
    return _half(rk * (2 * r - 1 - rk))


def gap(n: int, m: int, r: int) -> int:
    """N_GF - N_MF."""
    return predicted_counts(n, m, r, "gf") - predicted_counts(n, m, r, "mf")


def pca_family_count(n: int, m: int, r: int) -> int:
    """Number of independent laws produced by the skew families (two-layer, (n,m) != (1,1))."""
    if 2 * (n + m) <= r:
        return (n + m) * ((r - 2 * (n + m)) + r - 1)
    return _half(r * (r - 1))


def lie_dim(n: int, m: int, r: int) -> int:
    """Trace dimension of the generated momentum Lie algebra."""
    if n == 1 and m == 1 and r >= 4:
        return 7
    if 2 * (n + m) <= r:
        return (n + m) * (2 * (n + m) + 1) + 1
    return 2 * (n + m) * r + 1 - _half(r * (r - 1))


def formula_count(arch: Architecture, metric_kind: str, mode: str):
    """(count, source) from a closed formula, or None if no formula covers the case."""
    if not arch.is_two_layer:
        return None
    n, m, r = arch.nmr
    if arch.kind == "linear":
        if metric_kind == "euclidean":
            if mode == "gf":
                return predicted_counts(n, m, r, "gf"), "rk/2*(2r+1-rk), rk=min(r,n+m)"
            if (n, m) != (1, 1):
                return predicted_counts(n, m, r, "mf"), "rk/2*(2r-1-rk), rk=min(r,2(n+m))"
            if r >= 4:
                return 4 * r - 6, "4r-6 (n=m=1, r>=4)"
            return None
        if metric_kind == "mirror_diag":
            return (r, "r column-sum laws (NMF)") if mode == "gf" else (0, "no NMF momentum law")
        return None
    if metric_kind == "euclidean":
        return (r, "r per-neuron balancedness laws") if mode == "gf" else (0, "no ReLU momentum law")
    if metric_kind == "icnn_hybrid":
        return (r, "r ICNN laws") if mode == "gf" else (0, "no ICNN momentum law")
    return None


def closed_form_laws(system) -> list:
    """All closed-form families that apply to ``system``, realized in its space."""
    arch, kind, space = system.arch, system.metric.kind, system.space
    if system.mode == "gf":
        if kind == "euclidean":
            return balancedness_gf_laws(arch, space)
        if kind == "mirror_diag" and arch.kind == "linear" and arch.is_two_layer:
            return nmf_gf_laws(arch, space)
        if kind == "icnn_hybrid":
            return icnn_gf_laws(arch, space)
        return []
    if kind == "euclidean" and arch.kind == "linear":
        return pca_momentum_laws(arch, system.flow, space)
    return []
