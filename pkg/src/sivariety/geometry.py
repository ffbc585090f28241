"""Conformally flat metric models and pointwise curvature data.

A metric model is g_ij = phi(x) * delta_ij for a closed-form conformal
factor phi.  Three kinds are built in: the flat Euclidean metric (phi = 1),
the negative-definite round model g = -n(n-1) sum dx_i^2 / x_n^2 (constant
sectional curvature 1/(n(n-1)), scalar curvature 1), and a user-supplied
conformal factor.

All curvature is assembled analytically from jets of phi; nothing is
numerically differentiated.  Index conventions:

* Christoffel symbols Gamma[i, j, k] = Gamma^i_{jk};
* Riemann tensor R^i_{jkl} = d_k Gamma^i_{lj} - d_l Gamma^i_{kj} + ...,
  lowered as R_ijkl = g_im R^m_{jkl}, so that a round sphere has
  R_ijkl = kappa (g_ik g_jl - g_il g_jk) with kappa > 0;
* Ricci R_jl = g^{ik} R_ijkl, scalar R = g^{jl} R_jl, kappa = R/(n(n-1));
* repeated covariant derivatives append indices left to right:
  f_{,ijk} means nabla_k nabla_j nabla_i f.  With these conventions the
  commutator identity reads f_{,ijk} - f_{,ikj} = R^m_{ijk} f_{,m}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .jets import Expr, Jet, Num, eval_jet, parse
from .tensors import remove_traces, riemann_adjoint

__all__ = [
    "MetricModel",
    "GeometryData",
    "GeometryError",
    "geometry_at",
    "covariant_derivatives",
    "laplacian",
]


class GeometryError(ValueError):
    """Inadmissible point or degenerate metric."""


@dataclass(frozen=True)
class MetricModel:
    """A conformally flat metric g = factor * identity on n >= 3 dimensions."""

    kind: str                 # "euclidean" | "table2_sphere" | "conformal"
    dim: int
    factor: Expr
    params: dict = field(default_factory=dict)

    @staticmethod
    def euclidean(dim: int) -> "MetricModel":
        _check_dim(dim)
        return MetricModel("euclidean", dim, Num(1.0))

    @staticmethod
    def table2_sphere(dim: int) -> "MetricModel":
        """The round model with g = -n(n-1) sum dx_i^2 / x_n^2."""
        _check_dim(dim)
        n = dim
        factor = parse(f"-{n * (n - 1)}/x{n}^2", dim=n)
        return MetricModel("table2_sphere", dim, factor)

    @staticmethod
    def conformal(factor: Expr, dim: int, params=None) -> "MetricModel":
        _check_dim(dim)
        return MetricModel("conformal", dim, factor, dict(params or {}))

    @property
    def is_flat(self) -> bool:
        return self.kind == "euclidean"

    @property
    def is_constant_curvature(self) -> bool:
        return self.kind in ("euclidean", "table2_sphere")

    def admissible(self, point) -> bool:
        point = np.asarray(point, dtype=float)
        if point.size != self.dim:
            return False
        if self.kind == "table2_sphere" and abs(point[-1]) < 1e-12:
            return False
        return True


def _check_dim(dim: int) -> None:
    if dim < 3:
        raise GeometryError(f"dimension {dim} unsupported (need n >= 3)")


@dataclass
class GeometryData:
    """Pointwise metric, connection and curvature package.

    Arrays follow the conventions in the module docstring; `gamma_jets` keeps
    the Christoffel symbols as order-2 jets for covariant differentiation.
    """

    model: MetricModel
    point: np.ndarray
    phi: float
    g: np.ndarray
    ginv: np.ndarray
    gamma: np.ndarray
    riemann_ud: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    ricci0: np.ndarray
    scalar: float
    dscalar: np.ndarray
    weyl: np.ndarray
    kappa: float
    gamma_jets: list
    _detrace_cache: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def is_flat(self) -> bool:
        return self.model.is_flat

    def detrace(self, arr: np.ndarray, slots=None) -> np.ndarray:
        """Metric trace removal (cached linearly per rank and slot choice)."""
        return remove_traces(arr, self.ginv, slots=slots)

    def raise_slot(self, arr: np.ndarray, slot: int) -> np.ndarray:
        return np.moveaxis(np.tensordot(arr, self.ginv, axes=([slot], [0])), -1, slot)

    def lower_slot(self, arr: np.ndarray, slot: int) -> np.ndarray:
        return np.moveaxis(np.tensordot(arr, self.g, axes=([slot], [0])), -1, slot)


def geometry_at(model: MetricModel, point, jet_order: int = 4) -> GeometryData:
    """Evaluate the metric model's geometry at one point."""
    point = np.asarray(point, dtype=float)
    n = model.dim
    if point.size != n:
        raise GeometryError(f"point has {point.size} coordinates; expected {n}")
    if not model.admissible(point):
        raise GeometryError(f"point {point.tolist()} inadmissible for {model.kind}")
    phi_jet = eval_jet(model.factor, point, model.params, order=jet_order)
    phi = phi_jet.value
    if abs(phi) < 1e-14:
        raise GeometryError(f"singular metric: conformal factor {phi} at {point.tolist()}")

    eye = np.eye(n)
    g = phi * eye
    ginv = eye / phi

    if model.is_flat:
        zero3 = np.zeros((n, n, n))
        zero4 = np.zeros((n, n, n, n))
        return GeometryData(model, point, phi, g, ginv, zero3, zero4, zero4,
                            np.zeros((n, n)), np.zeros((n, n)), 0.0, np.zeros(n),
                            zero4, 0.0, gamma_jets=None)

    # L_i = (d_i phi) / phi as order-3 jets; Gamma^i_jk = (L_j d_ik + L_k d_ij - L_i d_jk)/2
    inv_phi = phi_jet.reciprocal()
    L = [phi_jet.derivative(i) * inv_phi for i in range(n)]
    zero_jet = Jet.constant(0.0, n, jet_order - 1)
    gamma_jets = [[[zero_jet for _ in range(n)] for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            for k in range(n):
                acc = zero_jet
                if i == k:
                    acc = acc + L[j] * 0.5
                if i == j:
                    acc = acc + L[k] * 0.5
                if j == k:
                    acc = acc - L[i] * 0.5
                gamma_jets[i][j][k] = acc
    gamma = np.array([[[gamma_jets[i][j][k].value for k in range(n)]
                       for j in range(n)] for i in range(n)])

    # Riemann as order-1 jets so the scalar curvature gradient is available
    riem_order = 1
    gamma_low = [[[gamma_jets[i][j][k].truncated(riem_order)
                   for k in range(n)] for j in range(n)] for i in range(n)]
    dgamma = [[[[gamma_jets[i][j][k].derivative(l).truncated(riem_order)
                 for l in range(n)] for k in range(n)] for j in range(n)] for i in range(n)]
    riem_jets = [[[[None] * n for _ in range(n)] for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(k + 1, n):
                    acc = dgamma[i][l][j][k] - dgamma[i][k][j][l]
                    for m in range(n):
                        acc = acc + gamma_low[i][k][m] * gamma_low[m][l][j] \
                            - gamma_low[i][l][m] * gamma_low[m][k][j]
                    riem_jets[i][j][k][l] = acc
                    riem_jets[i][j][l][k] = -acc
                riem_jets[i][j][k][k] = Jet.constant(0.0, n, riem_order)

    riemann_ud = np.array([[[[riem_jets[i][j][k][l].value for l in range(n)]
                             for k in range(n)] for j in range(n)] for i in range(n)])
    riemann = np.einsum("im,mjkl->ijkl", g, riemann_ud)
    ricci = np.einsum("ik,ijkl->jl", ginv, riemann)
    scalar_jet = None
    inv_phi1 = inv_phi.truncated(riem_order)
    for j in range(n):
        for l in range(n):
            if j == l:
                ric_jl = riem_jets[0][j][0][l]
                for k in range(1, n):
                    ric_jl = ric_jl + riem_jets[k][j][k][l]
                term = inv_phi1 * ric_jl
                scalar_jet = term if scalar_jet is None else scalar_jet + term
    scalar = scalar_jet.value
    dscalar = scalar_jet.gradient()
    ricci0 = ricci - (scalar / n) * g
    kappa = scalar / (n * (n - 1))
    weyl = riemann \
        - riemann_adjoint(np.einsum("ik,jl->ijkl", ricci0, g)) / (4.0 * (n - 2)) \
        - riemann_adjoint(np.einsum("ik,jl->ijkl", g, g)) * (scalar / (8.0 * n * (n - 1)))
    return GeometryData(model, point, phi, g, ginv, gamma, riemann_ud, riemann,
                        ricci, ricci0, scalar, dscalar, weyl, kappa, gamma_jets)


# ---------------------------------------------------------------------------
# covariant derivatives of scalar jets
# ---------------------------------------------------------------------------

def covariant_derivatives(f: Jet, gd: GeometryData, up_to: int) -> list[np.ndarray]:
    """Covariant derivative tensors [f_,i, f_,ij, ...] up to the given order.

    The derivative index is appended on the right: out[2][i, j, k] is
    nabla_k nabla_j nabla_i f.  Requires f.order >= up_to; up_to <= 4.
    """
    n = gd.dim
    if up_to > 4:
        raise ValueError("covariant derivatives supported up to order 4")
    if f.order < up_to:
        raise ValueError(f"jet order {f.order} insufficient for {up_to} derivatives")

    if gd.is_flat:
        out = []
        sp = f.space
        for k in range(1, up_to + 1):
            arr = np.zeros((n,) * k)
            for idx in np.ndindex(*arr.shape):
                alpha = [0] * n
                for s in idx:
                    alpha[s] += 1
                arr[idx] = f.c[sp.index[tuple(alpha)]]
            out.append(arr)
        return out

    gj = gd.gamma_jets
    current = {(): f}
    out = []
    for level in range(1, up_to + 1):
        nxt = {}
        for idx, jet in current.items():
            for k in range(n):
                new = jet.derivative(k)
                for pos, i_low in enumerate(idx):
                    # subtract Gamma^m_{k, idx[pos]} * (tensor with idx[pos] -> m)
                    for m in range(n):
                        gcoef = gj[m][k][i_low]
                        repl = idx[:pos] + (m,) + idx[pos + 1:]
                        new = new - gcoef * current[repl]
                nxt[idx + (k,)] = new
        current = nxt
        arr = np.zeros((n,) * level)
        for idx, jet in current.items():
            arr[idx] = jet.value
        out.append(arr)
    return out


def laplacian(f: Jet, gd: GeometryData) -> float:
    """Trace of the covariant Hessian with the inverse metric."""
    hess = covariant_derivatives(f, gd, 2)[1]
    return float(np.einsum("ij,ij->", gd.ginv, hess))
