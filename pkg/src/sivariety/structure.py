"""Structure tensors of superintegrable systems and their integrability laws.

Everything here is pointwise linear algebra on one tangent space.  The
central object is a rank-3 tensor T, symmetric and trace-free in its first
two slots, that expresses the Hessian of a compatible potential through its
gradient and Laplacian:

    V_{,ij} = T_ij^m V_{,m} + g_ij (Delta V) / n.

From T we build the derived tensors

    Q_ijk^m = T_ij^m_{,k} + T_ij^l T_lk^m - R_ijk^m,
    q_j^m   = Q_ij^{im},        t_j = T_ij^i,
    Z_ij    = T0_i^{ab} T0_jab - (n-2)(T0_ij^a tbar_a + tbar_i tbar_j) - R_ij,

where T0 is the trace-free symmetric part and tbar the rescaled trace in
the decomposition

    T_ijk = T0_ijk + (tbar_i g_jk + tbar_j g_ik - 2 g_ij tbar_k / n),
    tbar_i = n t_i / ((n+2)(n-1)).

Residual maps evaluate each compatibility condition at a point and report
max-abs norms scaled by the inputs.  Array index conventions: covariant
slots first, any raised slot last, covariant-derivative slot last of all
(dT[i, j, k, l] = T_{ijk,l}).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryData, covariant_derivatives
from .jets import Jet
from .tensors import antisym_sum, riemann_adjoint, sym_sum

__all__ = [
    "KillingData", "StructureData", "CodazziData", "StructureConnection",
    "StructureError",
    "solve_structure_tensor", "irreducibility_check", "decompose_T",
    "reassemble_T", "derived_tensors", "sic_v_residuals", "killing_residuals",
    "structure_derivative_rhs", "sic_k_residuals", "codazzi_from_scalars",
    "structure_from_BC", "gauge_normalize", "structure_connection",
    "killing_prolongation_rhs", "synthesize_killing_data",
    "abundance_constraint_matrix", "frame_components",
]


class StructureError(ValueError):
    """Inconsistent or ill-posed structure-tensor computation."""


def _scale(*arrays) -> float:
    return max([1.0] + [float(np.max(np.abs(a))) for a in arrays if a is not None and np.asarray(a).size])


def _maxabs(a) -> float:
    return float(np.max(np.abs(a))) if np.asarray(a).size else 0.0


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------

@dataclass
class KillingData:
    """Values and covariant derivatives of a family of Killing tensors.

    values[a][i, j] = K_ij, derivs[a][i, j, k] = K_{ij,k} and, when
    available, second_derivs[a][i, j, k, l] = K_{ij,kl}.
    """

    values: list[np.ndarray]
    derivs: list[np.ndarray]
    second_derivs: list[np.ndarray] | None = None

    @property
    def count(self) -> int:
        return len(self.values)


@dataclass
class StructureData:
    """A structure tensor with its decomposition and derived tensors."""

    T: np.ndarray
    T0: np.ndarray = None
    tbar: np.ndarray = None
    t: np.ndarray = None
    Q: np.ndarray = None           # Q[i, j, k, m], m contravariant
    q: np.ndarray = None           # q[j, m], m contravariant
    Z: np.ndarray = None
    dT: np.ndarray = None          # dT[i, j, k, l] = T_{ijk,l}
    unique: bool = True
    kernel_dim: int = 0
    solve_residual: float = 0.0


@dataclass
class CodazziData:
    """Second and third order Codazzi tensors built from scalar potentials."""

    C2: np.ndarray
    B3: np.ndarray
    Phi: float = 0.0
    dB3: np.ndarray = None         # dB3[i, j, k, l] = B_{ijk,l}
    dC2: np.ndarray = None         # dC2[i, j, k] = C_{ij,k}


@dataclass
class StructureConnection:
    """Connection deformation A_ijk and the two curvature evaluations."""

    A: np.ndarray
    Rhat: np.ndarray               # from nabla A + A A (definition)
    Rhat_closed: np.ndarray        # closed form in B, C
    agreement: float = 0.0


# ---------------------------------------------------------------------------
# structure-tensor extraction from Killing data
# ---------------------------------------------------------------------------

def _t_space_basis(gd: GeometryData) -> np.ndarray:
    """Basis of tensors symmetric and g-trace-free in their first two slots."""
    n = gd.dim
    mats = []
    for a in range(n):
        for b in range(a, n):
            m = np.zeros((n, n))
            m[a, b] = m[b, a] = 1.0
            mats.append(m)
    mats = [m - (np.einsum("ij,ij->", gd.ginv, m) / n) * gd.g for m in mats]
    # drop one dependent direction: the g-trace kills exactly one dimension
    basis = []
    stack = []
    for m in mats:
        v = m.ravel()
        if stack:
            proj = v - np.array(stack).T @ (np.array(stack) @ v)
        else:
            proj = v
        norm = np.linalg.norm(proj)
        if norm > 1e-10:
            stack.append(proj / norm)
            basis.append(m)
    out = []
    for k in range(n):
        for m in basis:
            tb = np.zeros((n, n, n))
            tb[:, :, k] = m
            out.append(tb)
    return np.array(out)


def solve_structure_tensor(kd: KillingData, gd: GeometryData,
                           residual_tol: float = 1e-10,
                           vcov: list[np.ndarray] | None = None) -> StructureData:
    """Least-norm structure tensor matching the Killing derivatives.

    Solves alt_(j,k)[K_{ij,k} - T^a_{ji} K_{ak}] = 0 over all supplied
    Killing tensors, within the space of tensors with the structure-tensor
    symmetries.  When the potential's covariant derivatives [V_,i, V_,ij]
    are passed in `vcov`, the Hessian-closure equations
    T_ij^m V_,m = V_,ij - g_ij (Delta V)/n augment the system, so the kernel
    is reported for the tensors compatible with that particular potential.
    Reports the kernel dimension; raises if the least-squares residual is
    above `residual_tol` relative.
    """
    if kd.count < 1:
        raise StructureError("need at least one Killing tensor")
    n = gd.dim
    basis = _t_space_basis(gd)
    ncols = basis.shape[0]
    pairs = [(j, k) for j in range(n) for k in range(j + 1, n)]
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    raised = np.einsum("ab,cbji->caji", gd.ginv, basis)   # g^{ab} basis[c]_{bji}
    for kval, kder in zip(kd.values, kd.derivs):
        tk = np.einsum("caji,ak->cjik", raised, kval)   # T^a_{ji} K_{ak}
        for i in range(n):
            for (j, k) in pairs:
                rows.append(tk[:, j, i, k] - tk[:, k, i, j])
                rhs.append(kder[i, j, k] - kder[i, k, j])
    if vcov is not None:
        lap = float(np.einsum("ij,ij->", gd.ginv, vcov[1]))
        basis_up = np.einsum("mk,cijk->cijm", gd.ginv, basis)
        tv = np.einsum("cijm,m->cij", basis_up, vcov[0])
        target = vcov[1] - (lap / n) * gd.g
        for i in range(n):
            for j in range(i, n):
                rows.append(tv[:, i, j])
                rhs.append(target[i, j])
    amat = np.array(rows)
    bvec = np.array(rhs)
    coeffs, _, rank, _ = np.linalg.lstsq(amat, bvec, rcond=1e-12)
    kernel_dim = ncols - rank
    resid = amat @ coeffs - bvec
    scale = _scale(bvec, *(kd.derivs))
    rel = _maxabs(resid) / scale
    if rel > residual_tol:
        raise StructureError(
            f"no structure tensor at this point: solve residual {rel:.3e}")
    T = np.einsum("c,cijk->ijk", coeffs, basis)
    sd = StructureData(T=T, unique=(kernel_dim == 0), kernel_dim=int(kernel_dim),
                       solve_residual=rel)
    sd.T0, sd.tbar, sd.t = decompose_T(T, gd)
    return sd


def irreducibility_check(kd: KillingData, gd: GeometryData):
    """Dimension of the space of g-symmetric endomorphisms commuting with all K."""
    n = gd.dim
    sym_basis = []
    for a in range(n):
        for b in range(a, n):
            m = np.zeros((n, n))
            m[a, b] = m[b, a] = 1.0
            sym_basis.append(m)
    sym_basis = np.array(sym_basis)
    xs = np.einsum("ia,cab->cib", gd.ginv, sym_basis)    # endomorphisms g^{-1} S
    rows = []
    for kval in kd.values:
        kend = gd.ginv @ kval
        comm = np.einsum("ij,cjk->cik", kend, xs) - np.einsum("cij,jk->cik", xs, kend)
        rows.append(comm.reshape(len(sym_basis), n * n))
    mat = np.concatenate(rows, axis=1)
    sv = np.linalg.svd(mat, compute_uv=False)
    tol = max(mat.shape) * (sv[0] if sv.size else 1.0) * 1e-12
    rank = int(np.sum(sv > tol))
    commutant_dim = len(sym_basis) - rank
    return commutant_dim == 1, commutant_dim


# ---------------------------------------------------------------------------
# decomposition and derived tensors
# ---------------------------------------------------------------------------

def check_T_symmetries(T: np.ndarray, gd: GeometryData, tol: float = 1e-10) -> None:
    s = _scale(T)
    if _maxabs(T - T.transpose(1, 0, 2)) > tol * s:
        raise StructureError("T not symmetric in its first two slots")
    if _maxabs(np.einsum("ij,ijk->k", gd.ginv, T)) > tol * s:
        raise StructureError("T not trace-free in its first two slots")


def decompose_T(T: np.ndarray, gd: GeometryData):
    """Split T into (T0, tbar, t): symmetric trace-free part and traces."""
    check_T_symmetries(T, gd)
    n = gd.dim
    t = np.einsum("ik,ijk->j", gd.ginv, T)
    tbar = t * (n / ((n + 2) * (n - 1)))
    T0 = gd.detrace(sym_sum(T, (0, 1, 2)) / 6.0)
    return T0, tbar, t


def reassemble_T(T0: np.ndarray, tbar: np.ndarray, gd: GeometryData) -> np.ndarray:
    """T from its parts (valid when the hook component vanishes)."""
    n = gd.dim
    g = gd.g
    return T0 + np.einsum("i,jk->ijk", tbar, g) + np.einsum("j,ik->ijk", tbar, g) \
        - (2.0 / n) * np.einsum("ij,k->ijk", g, tbar)


def derived_tensors(sd: StructureData, dT: np.ndarray, gd: GeometryData) -> StructureData:
    """Fill Q, q and Z from T, its covariant derivative and the curvature."""
    n = gd.dim
    T = sd.T
    if sd.T0 is None:
        sd.T0, sd.tbar, sd.t = decompose_T(T, gd)
    t_up = gd.raise_slot(T, 2)                       # T_ij^m at slot 2
    q_part = np.einsum("ijl,lkm->ijkm", t_up, t_up)  # T_ij^l T_lk^m
    dT_up = np.einsum("ma,ijal->ijlm", gd.ginv, dT)  # T_ij^m_{,k} -> [i,j,k,m]
    riem_up = np.einsum("ma,ijka->ijkm", gd.ginv, gd.riemann)
    Q = dT_up + q_part - riem_up
    q = np.einsum("ik,ijkm->jm", gd.ginv, Q)
    T0_up2 = gd.raise_slot(gd.raise_slot(sd.T0, 1), 2)
    TT = np.einsum("iab,jab->ij", T0_up2, sd.T0)
    Tt = np.einsum("ijc,ca,a->ij", sd.T0, gd.ginv, sd.tbar)
    Z = TT - (n - 2) * (Tt + np.outer(sd.tbar, sd.tbar)) - gd.ricci
    sd.Q, sd.q, sd.Z, sd.dT = Q, q, Z, dT
    return sd


# ---------------------------------------------------------------------------
# residuals of the potential-side integrability conditions
# ---------------------------------------------------------------------------

def sic_v_residuals(sd: StructureData, gd: GeometryData, dq_cov: np.ndarray = None) -> dict:
    """Residuals of the compatibility conditions tied to the potential.

    Keys: linear, quadratic, hook, weyl, differential and (when a covariant
    derivative of q is supplied) cubic.  All values are max-abs, scaled by
    the participating tensors.
    """
    n = gd.dim
    T, t, dT = sd.T, sd.t, sd.dT
    g = gd.g
    out = {}

    lin = T + np.einsum("ij,k->ijk", g, t) / (n - 1)
    out["linear"] = _maxabs(lin - lin.transpose(0, 2, 1)) / _scale(T, t)

    q_low = gd.lower_slot(sd.q, 1)
    Q_low = gd.lower_slot(sd.Q, 3)
    quad = Q_low + np.einsum("ij,kl->ijkl", g, q_low) / (n - 1)
    out["quadratic"] = _maxabs(quad - quad.transpose(0, 2, 1, 3)) / _scale(Q_low, q_low)

    hook = antisym_sum(sym_sum(T, (0, 1)), (1, 2))
    out["hook"] = _maxabs(gd.detrace(hook)) / _scale(T)

    t_up_first = gd.raise_slot(T, 0)
    tt = np.einsum("aik,ajl->ijkl", t_up_first, T)
    weyl_part = gd.detrace(riemann_adjoint(tt)) / 8.0
    out["weyl"] = _maxabs(weyl_part - gd.weyl) / _scale(tt, gd.weyl)

    diff = dT + (2.0 / (n - 2)) * np.einsum("ik,jl->ijkl", g, sd.Z)
    out["differential"] = _maxabs(sym_sum(antisym_sum(diff, (2, 3)), (0, 1, 2))) \
        / _scale(dT, sd.Z)

    if dq_cov is not None:
        t_up_last = gd.raise_slot(T, 2)
        e = dq_cov.transpose(0, 2, 1) \
            + np.einsum("mln,km->kln", t_up_last, sd.q) \
            + np.einsum("k,ln->kln", t, sd.q) / (n - 1)
        out["cubic"] = _maxabs(e - e.transpose(1, 0, 2)) / _scale(dq_cov, sd.q)
    return out


# ---------------------------------------------------------------------------
# Killing-side residuals
# ---------------------------------------------------------------------------

def killing_prolongation_rhs(T: np.ndarray, kval: np.ndarray, gd: GeometryData) -> np.ndarray:
    """Predicted K_{ij,k} = hook(T^a_{ji} K_{ak}) / 3 for one Killing value."""
    t_up_first = gd.raise_slot(T, 0)
    x = np.einsum("aji,ak->ijk", t_up_first, kval)
    return sym_sum(antisym_sum(x, (1, 2)), (0, 1)) / 3.0


def killing_residuals(kd: KillingData, sd: StructureData, gd: GeometryData,
                      vcov: list[np.ndarray] = None) -> dict:
    """Killing equation, prolongation, compatibility and identity residuals.

    `vcov` carries the potential's covariant derivatives [V_,i, V_,ij]; the
    second-derivative identity is reported only when the Killing data
    includes second derivatives.
    """
    out = {"killing": 0.0, "prolongation": 0.0}
    if vcov is not None:
        out["bertrand_darboux"] = 0.0
        out["wilczynski"] = 0.0
    if kd.second_derivs is not None:
        out["second_derivative_identity"] = 0.0
    n = gd.dim
    for idx, (kval, kder) in enumerate(zip(kd.values, kd.derivs)):
        s = _scale(kval, kder)
        cyc = kder + kder.transpose(1, 2, 0) + kder.transpose(2, 0, 1)
        out["killing"] = max(out["killing"], _maxabs(cyc) / s)
        pred = killing_prolongation_rhs(sd.T, kval, gd)
        out["prolongation"] = max(out["prolongation"],
                                  _maxabs(kder - pred) / _scale(kval, kder, sd.T))
        if vcov is not None:
            k_up = np.einsum("ma,ai->mi", gd.ginv, kval)
            dk_up = np.einsum("ma,aij->mij", gd.ginv, kder)
            bd = np.einsum("mi,jm->ij", k_up, vcov[1]) + np.einsum("mij,m->ij", dk_up, vcov[0])
            out["bertrand_darboux"] = max(out["bertrand_darboux"],
                                          _maxabs(bd - bd.T) / _scale(kval, kder, vcov[1], vcov[0]))
        if kd.second_derivs is not None:
            kdd = kd.second_derivs[idx]
            rk = np.einsum("aijk,al->ijkl", gd.riemann_ud, kval)
            y = kdd + rk + rk.transpose(0, 3, 2, 1)
            res = sym_sum(antisym_sum(y, (1, 2)), (0, 3))
            out["second_derivative_identity"] = max(
                out["second_derivative_identity"], _maxabs(res) / _scale(kdd, kval))
    if vcov is not None:
        lap = float(np.einsum("ij,ij->", gd.ginv, vcov[1]))
        t_up = gd.raise_slot(sd.T, 2)
        wil = vcov[1] - np.einsum("ijm,m->ij", t_up, vcov[0]) - (lap / n) * gd.g
        out["wilczynski"] = _maxabs(wil) / _scale(vcov[1], vcov[0])
    return out


# ---------------------------------------------------------------------------
# derivative formulas for abundant systems
# ---------------------------------------------------------------------------

def structure_derivative_rhs(sd: StructureData, gd: GeometryData) -> np.ndarray:
    """Polynomial prediction of T_{ijk,l} from T alone (abundant case)."""
    n = gd.dim
    g, ginv = gd.g, gd.ginv
    T0, tbar = sd.T0, sd.tbar
    T0_up_last = gd.raise_slot(T0, 2)
    T0_up2 = gd.raise_slot(T0_up_last, 1)
    TT = np.einsum("iab,jab->ij", T0_up2, T0)             # T0_i^{ab} T0_{jab}
    Tt = np.einsum("ija,a->ij", T0_up_last, tbar)          # T0_ij^a tbar_a
    tbar_up = ginv @ tbar
    t0_sq = float(np.einsum("abc,abc->", gd.raise_slot(T0_up2, 0), T0))
    tbar_sq = float(tbar_up @ tbar)

    x = np.einsum("ija,kla->ijkl", T0_up_last, T0) \
        + np.einsum("ijk,l->ijkl", T0, tbar) \
        + 3.0 * np.einsum("ijl,k->ijkl", T0, tbar) \
        + np.einsum("ij,kl->ijkl", 4.0 / (n - 2) * TT - 3.0 * Tt, g)
    x = sym_sum(x, (0, 1, 2))
    x = np.stack([gd.detrace(x[:, :, :, l], slots=(0, 1, 2)) for l in range(n)], axis=-1)
    dT0 = x / 18.0

    m = -2.0 / (n - 2) * TT + 3.0 * Tt + 4.0 * np.outer(tbar, tbar)
    m = 0.5 * (m + m.T)
    m0 = m - (float(np.einsum("ij,ij->", ginv, m)) / n) * g
    scal = (3.0 * n + 2.0) / (6.0 * (n + 2) * (n - 1)) * t0_sq \
        - (n - 2.0) / 6.0 * tbar_sq + 1.5 / (n - 1) * gd.scalar
    dtbar = m0 / 3.0 + (scal / n) * g

    return dT0 + np.einsum("il,jk->ijkl", dtbar, g) + np.einsum("jl,ik->ijkl", dtbar, g) \
        - (2.0 / n) * np.einsum("ij,kl->ijkl", g, dtbar)


def sic_k_residuals(sd: StructureData, gd: GeometryData) -> dict:
    """Residuals of the Killing-side polynomial conditions.

    Keys: weyl (both the Weyl tensor and the projected T*T must vanish on a
    conformally flat background), ricci (-Z0/4 = Ricci0), scalar_gradient
    (the one-index consequence), and on constant curvature the triple
    cc_weyl / cc_ricci / cc_scalar.
    """
    n = gd.dim
    out = {}
    T = sd.T
    t_up_first = gd.raise_slot(T, 0)
    tt = np.einsum("aik,ajl->ijkl", t_up_first, T)
    proj = gd.detrace(riemann_adjoint(tt)) / 8.0
    out["weyl"] = max(_maxabs(gd.weyl), _maxabs(proj - gd.weyl)) / _scale(tt)

    z0 = sd.Z - (float(np.einsum("ij,ij->", gd.ginv, sd.Z)) / n) * gd.g
    out["ricci"] = _maxabs(-0.25 * z0 - gd.ricci0) / _scale(sd.Z, gd.ricci)

    T0, tbar = sd.T0, sd.tbar
    T0_up_last = gd.raise_slot(T0, 2)
    T0_up2 = gd.raise_slot(T0_up_last, 1)
    TT = np.einsum("iab,jab->ij", T0_up2, T0)
    Tt = np.einsum("ija,a->ij", T0_up_last, tbar)
    t0_sq = float(np.einsum("abc,abc->", gd.raise_slot(T0_up2, 0), T0))
    tbar_up = gd.ginv @ tbar
    tbar_sq = float(tbar_up @ tbar)
    ricci0_up = gd.ginv @ gd.ricci0 @ gd.ginv
    lhs = (n + 2.0) / (9.0 * n) * (t0_sq - (n + 2) * (n - 1) * tbar_sq - 9.0 * gd.scalar) * tbar
    rhs = -gd.dscalar \
        + 2.0 * (5 * n + 2) / (3.0 * (n - 2)) * np.einsum("iab,ab->i", T0, ricci0_up) \
        - 2.0 * (n * n - 2 * n + 8) / (3.0 * (n - 2)) * (gd.ricci0 @ tbar_up)
    out["scalar_gradient"] = _maxabs(lhs - rhs) / _scale(T0, tbar, [gd.scalar])

    if gd.model.is_constant_curvature:
        tt0 = np.einsum("aik,ajl->ijkl", gd.raise_slot(T0, 0), T0)
        out["cc_weyl"] = _maxabs(gd.detrace(riemann_adjoint(tt0))) / _scale(tt0)
        zfree = TT - (n - 2.0) * (Tt + np.outer(tbar, tbar))
        zfree0 = zfree - (float(np.einsum("ij,ij->", gd.ginv, zfree)) / n) * gd.g
        out["cc_ricci"] = _maxabs(zfree0) / _scale(TT, Tt)
        out["cc_scalar"] = abs(t0_sq - (n - 1) * (n + 2) * tbar_sq - 9.0 * gd.scalar) \
            / _scale([t0_sq], [9.0 * gd.scalar])
    return out


# ---------------------------------------------------------------------------
# Codazzi tensors and structure functions
# ---------------------------------------------------------------------------

def codazzi_from_scalars(Bjet: Jet, Cjet: Jet, gd: GeometryData,
                         Z: np.ndarray = None) -> CodazziData:
    """Codazzi tensors from their scalar potentials on constant curvature.

    C2_ij  = C_,ij + R C g_ij / (n(n-1)),
    B3_ijk = sym over (i,j,k) of [B_,ijk + 4R g_ij B_,k / (n(n-1))] / 6.
    """
    if Bjet.order < 3 or Cjet.order < 2:
        raise StructureError("jets of order >= 3 (B) and >= 2 (C) required")
    n = gd.dim
    r = gd.scalar
    covb = covariant_derivatives(Bjet, gd, min(4, Bjet.order))
    covc = covariant_derivatives(Cjet, gd, min(3, Cjet.order))
    c2 = covc[1] + (r / (n * (n - 1))) * Cjet.value * gd.g
    c4 = 4.0 * r / (n * (n - 1))
    x = covb[2] + c4 * np.einsum("ij,k->ijk", gd.g, covb[0])
    b3 = sym_sum(x, (0, 1, 2)) / 6.0
    cd = CodazziData(C2=c2, B3=b3)
    if len(covb) >= 4:
        dx = covb[3] + c4 * np.einsum("ij,kl->ijkl", gd.g, covb[1])
        cd.dB3 = sym_sum(dx, (0, 1, 2)) / 6.0
    if len(covc) >= 3:
        cd.dC2 = covc[2] + (r / (n * (n - 1))) * np.einsum("ij,k->ijk", gd.g, covc[0])
    if Z is not None:
        cd.Phi = float(np.einsum("ij,ij->", gd.ginv, c2) -
                       np.einsum("ij,ij->", gd.ginv, Z)) / n
    return cd


def structure_from_BC(Bjet: Jet, Cjet: Jet, gd: GeometryData) -> StructureData:
    """Structure tensor generated by the scalar structure functions B and C.

    Only valid on constant-curvature models.  The trace-free part comes from
    the symmetrized trace-free third derivative of B; the trace from

        n t / (n-1) = Delta B + 2(n+1) R B / (n(n-1)) - (n+2) C / (n-2).

    The analytic covariant derivative of T is filled alongside.
    """
    if not gd.model.is_constant_curvature:
        raise StructureError("structure functions require a constant-curvature model")
    if Bjet.order < 4:
        raise StructureError("order-4 jet of B required")
    n = gd.dim
    r = gd.scalar
    covb = covariant_derivatives(Bjet, gd, 4)
    covc = covariant_derivatives(Cjet, gd, min(2, Cjet.order))
    t0 = gd.detrace(sym_sum(covb[2], (0, 1, 2)) / 6.0)
    cr = 2.0 * (n + 1) * r / (n * (n - 1))
    cc = (n + 2.0) / (n - 2.0)
    t = ((n - 1.0) / n) * (np.einsum("ab,abk->k", gd.ginv, covb[2])
                           + cr * covb[0] - cc * covc[0])
    tbar = t * (n / ((n + 2.0) * (n - 1.0)))
    T = reassemble_T(t0, tbar, gd)

    x4 = sym_sum(covb[3], (0, 1, 2))
    dT0 = np.stack([gd.detrace(x4[:, :, :, l], slots=(0, 1, 2)) for l in range(n)],
                   axis=-1) / 6.0
    dt = ((n - 1.0) / n) * (np.einsum("ab,abkl->kl", gd.ginv, covb[3])
                            + cr * covb[1] - cc * covc[1])
    dtbar = dt * (n / ((n + 2.0) * (n - 1.0)))
    dT = dT0 + np.einsum("il,jk->ijkl", dtbar, gd.g) + np.einsum("jl,ik->ijkl", dtbar, gd.g) \
        - (2.0 / n) * np.einsum("ij,kl->ijkl", gd.g, dtbar)

    sd = StructureData(T=T, T0=t0, tbar=tbar, t=t)
    return derived_tensors(sd, dT, gd)


def gauge_normalize(Bjet: Jet, Cjet: Jet, gd: GeometryData, x0=None):
    """Remove the polynomial gauge freedom of (B, C) at the base point.

    Flat backgrounds only.  Subtracts
        dC = 2(n-2) (c2 r^2/2 + c1.r + c0),
        dB = b4 r^4/4 + r^2 b3.r + r^T A r + b1.r + b0,   b4 = c2, b3 = c1,
    chosen so that C, grad C, Lap C and B, grad B, Hess B all vanish at the
    point.  The generated structure tensor is unchanged.
    """
    if not gd.is_flat:
        raise StructureError("gauge normalization implemented for flat models only")
    n = gd.dim
    x0 = gd.point if x0 is None else np.asarray(x0, dtype=float)
    covc = covariant_derivatives(Cjet, gd, 2)
    covb = covariant_derivatives(Bjet, gd, 2)

    c2 = float(np.trace(covc[1])) / (2.0 * n * (n - 2))
    c1 = covc[0] / (2.0 * (n - 2)) - c2 * x0
    c0 = Cjet.value / (2.0 * (n - 2)) - 0.5 * c2 * float(x0 @ x0) - float(c1 @ x0)
    b4, b3 = c2, c1

    r2 = float(x0 @ x0)
    hess_gauge_wo_a = b4 * (2.0 * np.outer(x0, x0) + r2 * np.eye(n)) \
        + 2.0 * float(b3 @ x0) * np.eye(n) + 2.0 * np.outer(x0, b3)
    hess_gauge_wo_a = 0.5 * (hess_gauge_wo_a + hess_gauge_wo_a.T)
    a_mat = 0.5 * (covb[1] - hess_gauge_wo_a)
    grad_wo_b1 = b4 * r2 * x0 + 2.0 * x0 * float(b3 @ x0) + r2 * b3 + 2.0 * a_mat @ x0
    b1 = covb[0] - grad_wo_b1
    b0 = Bjet.value - (0.25 * b4 * r2 * r2 + r2 * float(b3 @ x0)
                       + float(x0 @ a_mat @ x0) + float(b1 @ x0))

    order = Bjet.order
    xj = [Jet.coordinate(i, x0[i], n, order) for i in range(n)]
    r2j = xj[0] * xj[0]
    for i in range(1, n):
        r2j = r2j + xj[i] * xj[i]
    lin3 = sum_jets([xj[i] * float(b3[i]) for i in range(n)])
    lin1 = sum_jets([xj[i] * float(b1[i]) for i in range(n)])
    quad = sum_jets([xj[i] * xj[j] * float(a_mat[i, j]) for i in range(n) for j in range(n)])
    db_jet = r2j * r2j * (0.25 * b4) + r2j * lin3 + quad + lin1 + b0
    linc = sum_jets([xj[i] * float(c1[i]) for i in range(n)])
    dc_full = (r2j * (0.5 * c2) + linc + c0) * (2.0 * (n - 2.0))
    dc_jet = dc_full.truncated(Cjet.order)

    return (Jet(Bjet.space, Bjet.c - db_jet.truncated(order).c),
            Jet(Cjet.space, Cjet.c - dc_jet.c))


def sum_jets(jets):
    out = jets[0]
    for j in jets[1:]:
        out = out + j
    return out


def structure_connection(Bjet: Jet, Cjet: Jet, gd: GeometryData) -> StructureConnection:
    """Deformation A_ijk and its curvature, computed two independent ways.

    A = -B3/3 + (g_ij C_,k + g_ik C_,j + g_jk C_,i) / (3(n-2)).  The
    curvature comes once from nabla A + [A, A] and once from the closed
    form quadratic in (B3, C); their agreement is reported.
    """
    if Bjet.order < 4:
        raise StructureError("order-4 jet of B required for the connection curvature")
    n = gd.dim
    cd = codazzi_from_scalars(Bjet, Cjet, gd)
    covc = covariant_derivatives(Cjet, gd, min(3, Cjet.order))
    dc1, dc2 = covc[0], covc[1]
    g = gd.g
    sigma = np.einsum("ij,k->ijk", g, dc1) + np.einsum("ik,j->ijk", g, dc1) \
        + np.einsum("jk,i->ijk", g, dc1)
    a = -cd.B3 / 3.0 + sigma / (3.0 * (n - 2))
    dsigma = np.einsum("ij,kl->ijkl", g, dc2) + np.einsum("ik,jl->ijkl", g, dc2) \
        + np.einsum("jk,il->ijkl", g, dc2)
    da = -cd.dB3 / 3.0 + dsigma / (3.0 * (n - 2))

    a_up = gd.raise_slot(a, 0)
    da_up = gd.raise_slot(da, 0)
    term = da_up.transpose(0, 1, 3, 2) + np.einsum("imk,mjl->ijkl", a_up, a_up)
    rhat = gd.riemann_ud + term - term.transpose(0, 1, 3, 2)

    b_up = gd.raise_slot(cd.B3, 0)
    c_up = gd.ginv @ dc1
    c2_mixed = gd.ginv @ dc2                    # C^{,i}_{,k}
    csq = float(c_up @ dc1)
    eye = np.eye(n)
    e = np.einsum("ika,ajl->ijkl", b_up, b_up) \
        + (np.einsum("a,il,jak->ijkl", c_up, eye, cd.B3)
           - np.einsum("a,jl,iak->ijkl", c_up, g, b_up)) / (n - 2) \
        + 3.0 / (n - 2) * (np.einsum("il,jk->ijkl", eye, dc2)
                           + np.einsum("jl,ik->ijkl", g, c2_mixed)) \
        + (np.einsum("ik,j,l->ijkl", eye, dc1, dc1)
           - np.einsum("jk,i,l->ijkl", g, c_up, dc1)
           + csq * np.einsum("ik,jl->ijkl", eye, g)) / (n - 2) ** 2
    rhat_closed = gd.riemann_ud + (e - e.transpose(0, 1, 3, 2)) / 9.0

    agreement = _maxabs(rhat - rhat_closed) / _scale(rhat, rhat_closed)
    return StructureConnection(A=a, Rhat=rhat, Rhat_closed=rhat_closed,
                               agreement=agreement)


# ---------------------------------------------------------------------------
# synthesized Killing data and the abundance constraint
# ---------------------------------------------------------------------------

def _prolongation_operator(T: np.ndarray, gd: GeometryData) -> np.ndarray:
    """P[i, j, k, a, b] with K_{ij,k} = P_{ijk}^{ab} K_{ab} (a, b raised)."""
    n = gd.dim
    t_up_first = gd.raise_slot(T, 0)
    eye = np.eye(n)
    x = np.einsum("ak,bji->ijkab", eye, t_up_first)
    x = antisym_sum(x, (1, 2))
    x = sym_sum(x, (0, 1))
    x = sym_sum(x, (3, 4))
    return x / 6.0


def synthesize_killing_data(sd: StructureData, gd: GeometryData,
                            include_second: bool = True) -> KillingData:
    """Pointwise Killing data generated by the structure tensor.

    Values run over the standard symmetric basis; first derivatives follow
    the prolongation K_{ij,k} = hook(T^a_{ji} K_{ak})/3 and second
    derivatives its analytic derivative (needs sd.dT).
    """
    n = gd.dim
    values, derivs, seconds = [], [], []
    p = _prolongation_operator(sd.T, gd)
    dp = _prolongation_derivative(sd, gd) if include_second else None
    for a in range(n):
        for b in range(a, n):
            k = np.zeros((n, n))
            k[a, b] = k[b, a] = 1.0
            dk = np.einsum("ijkab,ab->ijk", p, k)
            values.append(k)
            derivs.append(dk)
            if include_second:
                # K_{ij,kl} = P_{ijk}^{ab}_{,l} K_ab + P_{ijk}^{ab} K_{ab,l}
                seconds.append(np.einsum("ijkabl,ab->ijkl", dp, k)
                               + np.einsum("ijkab,abl->ijkl", p, dk))
    return KillingData(values=values, derivs=derivs,
                       second_derivs=seconds if include_second else None)


def _prolongation_derivative(sd: StructureData, gd: GeometryData) -> np.ndarray:
    """dP[i, j, k, a, b, l] = nabla_l P_{ijk}^{ab}, from the analytic dT."""
    if sd.dT is None:
        raise StructureError("covariant derivative of T required")
    n = gd.dim
    dt_up_first = np.einsum("ba,aijl->bijl", gd.ginv, sd.dT)
    eye = np.eye(n)
    x = np.einsum("ak,bjil->ijkabl", eye, dt_up_first)
    x = antisym_sum(x, (1, 2))
    x = sym_sum(x, (0, 1))
    x = sym_sum(x, (3, 4))
    return x / 6.0


def abundance_constraint_matrix(sd: StructureData, gd: GeometryData) -> np.ndarray:
    """The linear constraints the prolongation's integrability puts on K_ab.

    Rows index (i, j, k < l); columns the symmetric basis of K.  For an
    abundant system every entry vanishes, leaving the full n(n+1)/2 of
    initial values free.
    """
    n = gd.dim
    p = _prolongation_operator(sd.T, gd)
    dp = _prolongation_derivative(sd, gd)
    chain = np.einsum("ijkpq,pqlab->ijklab", p, p)
    curv = 0.5 * np.einsum("ai,bjkl->ijklab", np.eye(n), gd.riemann_ud)
    curv = curv + curv.transpose(1, 0, 2, 3, 4, 5)           # sym over (i, j)
    expr = dp.transpose(0, 1, 2, 5, 3, 4) + chain - curv
    expr = expr - expr.transpose(0, 1, 3, 2, 4, 5)           # alt over (k, l)
    expr = expr + expr.transpose(0, 1, 2, 3, 5, 4)           # sym over the K slots
    rows = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(k + 1, n):
                    mat = expr[i, j, k, l]
                    row = []
                    for a in range(n):
                        for b in range(a, n):
                            row.append(mat[a, b] * (1.0 if a == b else 2.0))
                    rows.append(row)
    return np.array(rows)


def frame_components(arr: np.ndarray, gd: GeometryData) -> np.ndarray:
    """Components in a real orthonormal-up-to-sign frame of a conformal metric.

    Rescales each covariant slot by |phi|^(-1/2); for g = phi * identity the
    frame metric is sign(phi) * identity.
    """
    scale = abs(gd.phi) ** (-0.5 * arr.ndim)
    return arr * scale
