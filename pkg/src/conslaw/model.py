"""Architectures, reparameterizations phi and the metric-weighted fields M grad(phi_i)."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .ratpoly import Polynomial, VariableSpace, VectorField, as_scalar


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    """``linear``: dims are layer widths n_0..n_q, U_i of shape n_{i-1} x n_i.

    ``relu2``: dims are (n, m, r); U is n x r (output side), V is m x r
    (input side), optional hidden bias b (1 x r) and output bias c (n x 1).
    """

    kind: str
    dims: tuple
    bias: bool = False
    out_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.kind == "linear":
            if len(self.dims) < 3:
                raise ConfigError("linear architectures need q >= 2 layers (>= 3 widths)")
            if self.bias or self.out_bias:
                raise ConfigError("biases are only supported for relu2")
        elif self.kind == "relu2":
            if len(self.dims) != 3:
                raise ConfigError("relu2 dims are (n, m, r)")
        else:
            raise ConfigError(f"unsupported architecture kind {self.kind!r}")
        if any(d < 1 for d in self.dims):
            raise ConfigError("all widths must be >= 1")

    @classmethod
    def linear_nmr(cls, n, m, r):
        """Two-layer linear phi = U V^T with U n x r and V m x r."""
        return cls("linear", (n, r, m))

    @property
    def depth(self) -> int:
        return len(self.dims) - 1 if self.kind == "linear" else 2

    @property
    def is_two_layer(self) -> bool:
        return self.depth == 2

    @property
    def nmr(self) -> tuple:
        """(n, m, r) of a two-layer architecture."""
        if not self.is_two_layer:
            raise ConfigError("(n, m, r) is only defined for two-layer architectures")
        if self.kind == "linear":
            n, r, m = self.dims
            return n, m, r
        return self.dims

    def shapes(self) -> tuple:
        if self.kind == "linear":
            return tuple((f"U{i + 1}", a, b) for i, (a, b) in enumerate(zip(self.dims, self.dims[1:])))
        n, m, r = self.dims
        out = [("U", n, r), ("V", m, r)]
        if self.bias:
            out.append(("b", 1, r))
        if self.out_bias:
            out.append(("c", n, 1))
        return tuple(out)

    @property
    def D(self) -> int:
        return sum(a * b for _, a, b in self.shapes())

    @property
    def input_dim(self) -> int:
        return self.dims[-1] if self.kind == "linear" else self.dims[1]

    @property
    def output_dim(self) -> int:
        return self.dims[0]

    def parameter_space(self) -> VariableSpace:
        return VariableSpace.from_shapes(self.shapes())

    def lifted_space(self, time: str | None = "time") -> VariableSpace:
        return VariableSpace.from_shapes(self.shapes(), velocities=True, time=time)

    def to_json(self) -> dict:
        d = {"kind": self.kind, "dims": list(self.dims), "bias": self.bias}
        if self.out_bias:
            d["out_bias"] = True
        return d

    @classmethod
    def from_json(cls, obj) -> "Architecture":
        return cls(obj["kind"], tuple(obj["dims"]), bool(obj.get("bias", False)),
                   bool(obj.get("out_bias", False)))

    # numeric helpers -------------------------------------------------------

    def unpack(self, theta) -> dict:
        """Split a flat (column-major) parameter vector into named matrices."""
        theta = np.asarray(theta)
        out, k = {}, 0
        for name, a, b in self.shapes():
            out[name] = theta[k:k + a * b].reshape((a, b), order="F")
            k += a * b
        return out

    def pack(self, mats: dict) -> np.ndarray:
        return np.concatenate([np.asarray(mats[name], dtype=float).reshape(-1, order="F")
                               for name, _, _ in self.shapes()])

    def forward(self, theta, X) -> np.ndarray:
        """Model output g(theta, X) for inputs X of shape (input_dim, p)."""
        mats = self.unpack(theta)
        if self.kind == "linear":
            out = X
            for name, _, _ in reversed(self.shapes()):
                out = mats[name] @ out
            return out
        pre = mats["V"].T @ X
        if self.bias:
            pre = pre + mats["b"].T
        out = mats["U"] @ np.maximum(pre, 0.0)
        if self.out_bias:
            out = out + mats["c"]
        return out


@dataclass(frozen=True)
class ReparamMap:
    """phi_1..phi_d as polynomials over the architecture's parameter space."""

    arch: Architecture
    components: tuple

    @property
    def d(self) -> int:
        return len(self.components)

    @property
    def space(self) -> VariableSpace:
        return self.components[0].space


def symbolic_matrix(space, name, velocity=False):
    idx = space.matrix_indices(name, velocity=velocity)
    return [[Polynomial.var(space, i) for i in row] for row in idx]


def _matmul(a, b, space):
    zero = Polynomial.zero(space)
    out = []
    for row in a:
        new = []
        for j in range(len(b[0])):
            acc = zero
            for k, x in enumerate(row):
                acc = acc + x * b[k][j]
            new.append(acc)
        out.append(new)
    return out


def build_phi(arch: Architecture) -> ReparamMap:
    space = arch.parameter_space()
    comps = []
    if arch.kind == "linear":
        names = [s[0] for s in arch.shapes()]
        prod = symbolic_matrix(space, names[0])
        for name in names[1:]:
            prod = _matmul(prod, symbolic_matrix(space, name), space)
        rows, cols = len(prod), len(prod[0])
        comps = [prod[i][j] for j in range(cols) for i in range(rows)]
    elif arch.kind == "relu2":
        n, m, r = arch.dims
        U = symbolic_matrix(space, "U")
        V = symbolic_matrix(space, "V")
        b = symbolic_matrix(space, "b") if arch.bias else None
        for j in range(r):
            for l in range(m):
                for k in range(n):
                    comps.append(U[k][j] * V[l][j])
            if b is not None:
                for k in range(n):
                    comps.append(U[k][j] * b[0][j])
        if arch.out_bias:
            c = symbolic_matrix(space, "c")
            comps.extend(c[k][0] for k in range(n))
    else:
        raise ConfigError(f"unsupported architecture kind {arch.kind!r}")
    return ReparamMap(arch, tuple(comps))


def _param_map(phi_space: VariableSpace, space: VariableSpace) -> list:
    """Index map from a parameter space into the matching block of ``space``."""
    if phi_space.shapes != space.shapes:
        raise ConfigError("phi variables are not the parameter block of the target space")
    return space.parameter_indices


def grad_phi(phi: ReparamMap, space: VariableSpace | None = None) -> list:
    """grad(phi_i) as fields on ``space``, nonzero only on parameter coordinates."""
    if space is None:
        space = phi.space
    imap = _param_map(phi.space, space)
    fields = []
    for comp in phi.components:
        p = comp.embed(space, imap)
        fields.append(VectorField.from_dict(space, {j: p.partial(j) for j in imap}))
    return fields


@dataclass(frozen=True)
class MetricSpec:
    """``kind`` in {euclidean, mirror_diag, icnn_hybrid}; ``applies_to`` in
    {gradient_flow, momentum_flow}. ``schedule`` is ``constant`` (tau fixed) or
    ``nesterov`` (tau = 3/t, fields cleared by a factor t)."""

    kind: str = "euclidean"
    applies_to: str = "gradient_flow"
    tau: Fraction = Fraction(0)
    schedule: str = "constant"

    def __post_init__(self):
        if self.kind not in ("euclidean", "mirror_diag", "icnn_hybrid"):
            raise ConfigError(f"unknown metric {self.kind!r}")
        if self.applies_to not in ("gradient_flow", "momentum_flow"):
            raise ConfigError(f"unknown metric mode {self.applies_to!r}")
        if self.schedule not in ("constant", "nesterov"):
            raise ConfigError(f"unknown tau schedule {self.schedule!r}")
        object.__setattr__(self, "tau", as_scalar(self.tau))

    CONFIG_NAMES = {"euclidean": "euclidean", "mirror": "mirror_diag", "icnn": "icnn_hybrid"}

    @classmethod
    def from_json(cls, obj) -> "MetricSpec":
        name = obj.get("metric", "euclidean")
        if name not in cls.CONFIG_NAMES:
            raise ConfigError(f"unknown metric {name!r}")
        mode = obj.get("mode", "gf")
        if mode not in ("gf", "mf"):
            raise ConfigError(f"unknown mode {mode!r}")
        return cls(cls.CONFIG_NAMES[name], "gradient_flow" if mode == "gf" else "momentum_flow",
                   Fraction(obj.get("tau", "0")))

    def to_json(self) -> dict:
        inv = {v: k for k, v in self.CONFIG_NAMES.items()}
        return {"metric": inv[self.kind], "mode": "gf" if self.applies_to == "gradient_flow" else "mf",
                "tau": f"{self.tau.numerator}/{self.tau.denominator}"}

    def diagonal(self, space: VariableSpace) -> dict:
        """Metric diagonal entries (parameter index -> Polynomial); identity entries omitted."""
        if self.kind == "euclidean":
            return {}
        params = space.parameter_indices
        if self.kind == "icnn_hybrid":
            params = [i for i in params if space.blocks[i][0] == "U"]
            if not params:
                raise ConfigError("icnn metric needs a relu2 architecture (U block)")
        if self.applies_to == "gradient_flow":
            return {j: Polynomial.var(space, j) for j in params}
        if not space.has_velocity:
            raise ConfigError("momentum-flow mirror metric requires a velocity block")
        D = space.D
        out = {}
        for j in params:
            vel = Polynomial.var(space, j + D)
            pos = Polynomial.var(space, j)
            if self.schedule == "nesterov":
                t = Polynomial.var(space, space.time_index)
                out[j] = t * vel + pos.scale(3)
            else:
                out[j] = vel + pos.scale(self.tau)
        return out


def apply_metric(metric: MetricSpec, fields: list, space: VariableSpace) -> list:
    """Multiply the parameter components of each field by the metric diagonal."""
    diag = metric.diagonal(space)
    if not diag:
        return list(fields)
    out = []
    for f in fields:
        comps = list(f.components)
        for j, w in diag.items():
            if comps[j].terms:
                comps[j] = comps[j] * w
        out.append(VectorField(space, comps))
    return out


def phi_numeric(arch: Architecture, theta) -> np.ndarray:
    """phi(theta) in float, same component order as :func:`build_phi`."""
    mats = arch.unpack(np.asarray(theta, dtype=float))
    if arch.kind == "linear":
        names = [s[0] for s in arch.shapes()]
        prod = mats[names[0]]
        for name in names[1:]:
            prod = prod @ mats[name]
        return prod.reshape(-1, order="F")
    n, m, r = arch.dims
    U, V = mats["U"], mats["V"]
    out = []
    for j in range(r):
        out.extend(np.outer(U[:, j], V[:, j]).reshape(-1, order="F"))
        if arch.bias:
            out.extend(U[:, j] * mats["b"][0, j])
    if arch.out_bias:
        out.extend(mats["c"][:, 0])
    return np.asarray(out)
