"""Cubic forms, the membership equation and a damped Gauss-Newton solver.

A cubic form is a fully symmetric rank-3 tensor Psi on R^n, stored packed
as its C(n+2, 3) independent components in lexicographic multi-index order
(i <= j <= k).  Membership in the classification variety for background
scalar curvature R is the quadratic equation

    alt_(j,k) [ Psi^a_ij Psi_kla - 9 R / (n (n-1)) g_ij g_kl ] = 0

with g the identity.  The sign of the curvature term is fixed so that the
inverse-square family on the curved catalog background, expressed in a real
orthonormal-up-to-sign frame, lies on the variety with its scalar curvature
R = 1; on a flat background the term drops out and the convention is
immaterial.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CubicForm", "VarietyPoint", "SolveOptions",
    "packed_indices", "pack_symmetric", "unpack_symmetric",
    "psi_residual", "psi_jacobian", "solve_variety", "orbit_fingerprint",
    "psi_from_system", "solve_variety_multistart", "dedupe_points",
]


def packed_indices(dim: int) -> list[tuple[int, int, int]]:
    """Multi-indices i <= j <= k in lexicographic order."""
    return [(i, j, k)
            for i in range(dim) for j in range(i, dim) for k in range(j, dim)]


def pack_symmetric(arr: np.ndarray) -> np.ndarray:
    dim = arr.shape[0]
    return np.array([arr[idx] for idx in packed_indices(dim)])


def unpack_symmetric(packed: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros((dim, dim, dim))
    for pos, (i, j, k) in enumerate(packed_indices(dim)):
        for perm in set(itertools.permutations((i, j, k))):
            out[perm] = packed[pos]
    return out


@dataclass(frozen=True)
class CubicForm:
    """Fully symmetric cubic form, packed canonical storage."""

    dim: int
    packed: np.ndarray

    def __init__(self, dim: int, packed):
        packed = np.asarray(packed, dtype=float).ravel()
        want = len(packed_indices(dim))
        if packed.size != want:
            raise ValueError(f"packed length {packed.size}; expected {want} for dim {dim}")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "packed", packed)

    @staticmethod
    def from_tensor(arr: np.ndarray, tol: float = 1e-10) -> "CubicForm":
        scale = max(1.0, float(np.max(np.abs(arr))))
        for axes in ((1, 0, 2), (0, 2, 1)):
            if np.max(np.abs(arr - arr.transpose(axes))) > tol * scale:
                raise ValueError("input tensor is not fully symmetric")
        return CubicForm(arr.shape[0], pack_symmetric(arr))

    @property
    def tensor(self) -> np.ndarray:
        return unpack_symmetric(self.packed, self.dim)


@dataclass(frozen=True)
class VarietyPoint:
    form: CubicForm
    scalar_R: float
    residual_norm: float
    fingerprint: tuple[float, ...]
    converged: bool = True
    iterations: int = 0


@dataclass(frozen=True)
class SolveOptions:
    max_iter: int = 50
    tol: float = 1e-10
    damping: float = 1e-3


# ---------------------------------------------------------------------------
# residual, Jacobian, solver
# ---------------------------------------------------------------------------

def _quad_term(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """alt_(j,k) of sum_a A_aij B_kla (identity metric)."""
    e = np.einsum("aij,kla->ijkl", a, b)
    return e - e.transpose(0, 2, 1, 3)


def psi_residual(f: CubicForm, scalar_R: float):
    """Rank-4 membership residual and its max-norm."""
    n = f.dim
    if n < 3:
        raise ValueError("dimension must be at least 3")
    psi = f.tensor
    eye = np.eye(n)
    gg = np.einsum("ij,kl->ijkl", eye, eye)
    res = _quad_term(psi, psi) - (9.0 * scalar_R / (n * (n - 1))) * (
        gg - gg.transpose(0, 2, 1, 3))
    return res, float(np.max(np.abs(res)))


def psi_jacobian(f: CubicForm, scalar_R: float = 0.0) -> np.ndarray:
    """Jacobian of the flattened residual with respect to packed coordinates."""
    n = f.dim
    psi = f.tensor
    cols = []
    for (i, j, k) in packed_indices(n):
        basis = np.zeros((n, n, n))
        for perm in set(itertools.permutations((i, j, k))):
            basis[perm] = 1.0
        col = _quad_term(psi, basis) + _quad_term(basis, psi)
        cols.append(col.ravel())
    return np.array(cols).T


def solve_variety(seed: CubicForm, scalar_R: float,
                  opts: SolveOptions = SolveOptions()) -> VarietyPoint:
    """Damped Gauss-Newton from a seed form; deterministic for fixed inputs.

    Success means the residual max-norm drops below opts.tol within
    opts.max_iter iterations; otherwise the best iterate is returned with
    converged=False.  Rank-deficient steps are handled by the damping.
    """
    if opts.tol <= 0:
        raise ValueError("tolerance must be positive")
    x = seed.packed.copy()
    n = seed.dim
    lam = opts.damping
    best_x, best_norm = x.copy(), _res_norm(x, n, scalar_R)
    iters = 0
    if best_norm < opts.tol:
        return _variety_point(best_x, n, scalar_R, best_norm, True, 0)
    for it in range(1, opts.max_iter + 1):
        form = CubicForm(n, x)
        r, rnorm = psi_residual(form, scalar_R)
        jac = psi_jacobian(form, scalar_R)
        g = jac.T @ r.ravel()
        h = jac.T @ jac
        stepped = False
        for _ in range(60):
            try:
                delta = np.linalg.solve(h + lam * np.eye(h.shape[0]), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = x + delta
            cnorm = _res_norm(cand, n, scalar_R)
            if cnorm < rnorm:
                x = cand
                lam = max(lam / 10.0, 1e-14)
                stepped = True
                break
            lam *= 10.0
            if lam > 1e14:
                break
        iters = it
        norm = _res_norm(x, n, scalar_R)
        if norm < best_norm:
            best_x, best_norm = x.copy(), norm
        if norm < opts.tol:
            return _variety_point(x, n, scalar_R, norm, True, iters)
        if not stepped:
            break
    return _variety_point(best_x, n, scalar_R, best_norm, False, iters)


def _res_norm(packed: np.ndarray, n: int, scalar_R: float) -> float:
    return psi_residual(CubicForm(n, packed), scalar_R)[1]


def _variety_point(packed, n, scalar_R, norm, ok, iters) -> VarietyPoint:
    form = CubicForm(n, packed)
    return VarietyPoint(form=form, scalar_R=scalar_R, residual_norm=norm,
                        fingerprint=orbit_fingerprint(form), converged=ok,
                        iterations=iters)


# ---------------------------------------------------------------------------
# invariants and system extraction
# ---------------------------------------------------------------------------

def orbit_fingerprint(f: CubicForm) -> tuple[float, ...]:
    """Orthogonally invariant scalars: ||Psi||^2, |tbar|^2, eigs of Psi.Psi.

    The middle entry reads Psi as a structure tensor: the trace vector
    t_j = Psi_iji rescaled by n/((n+2)(n-1)), squared.
    """
    n = f.dim
    psi = f.tensor
    norm2 = float(np.einsum("ijk,ijk->", psi, psi))
    t = np.einsum("iji->j", psi)
    tbar = t * (n / ((n + 2.0) * (n - 1.0)))
    gram = np.einsum("iab,jab->ij", psi, psi)
    eigs = np.sort(np.linalg.eigvalsh(gram))
    return (norm2, float(tbar @ tbar), *map(float, eigs))


def psi_from_system(b3, tol: float = 1e-10) -> CubicForm:
    """Pack a (frame-component) Codazzi tensor value as a cubic form."""
    arr = b3.array if hasattr(b3, "array") else np.asarray(b3, dtype=float)
    return CubicForm.from_tensor(arr, tol=tol)


# ---------------------------------------------------------------------------
# multi-start driver
# ---------------------------------------------------------------------------

def dedupe_points(points: list[VarietyPoint], tol: float = 1e-8) -> list[VarietyPoint]:
    """Keep one representative per fingerprint (max-abs distance below tol)."""
    kept: list[VarietyPoint] = []
    for p in sorted(points, key=lambda q: q.fingerprint):
        if any(max(abs(a - b) for a, b in zip(p.fingerprint, q.fingerprint)) < tol
               for q in kept):
            continue
        kept.append(p)
    return kept


def solve_variety_multistart(dim: int, scalar_R: float, starts: int, rng_seed: int,
                             opts: SolveOptions = SolveOptions(),
                             fingerprint_tol: float = 1e-8) -> list[VarietyPoint]:
    """Solve from the zero form plus `starts` random seeds; dedupe and sort.

    Random seeds are drawn entrywise uniform in [-2, 2] from a generator
    seeded with rng_seed, so the full output is reproducible bit for bit.
    """
    if starts < 1:
        raise ValueError("need at least one start")
    npacked = len(packed_indices(dim))
    rng = np.random.default_rng(rng_seed)
    seeds = [np.zeros(npacked)]
    seeds.extend(rng.uniform(-2.0, 2.0, npacked) for _ in range(starts))
    found = []
    for s in seeds:
        point = solve_variety(CubicForm(dim, s), scalar_R, opts)
        if point.converged:
            found.append(point)
    return dedupe_points(found, tol=fingerprint_tol)
