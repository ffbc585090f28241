"""Dense small-rank tensor algebra with Young projectors and metric traces.

Tensors live on a single tangent space: numpy arrays of shape (dim,)*rank
with dim <= 8 and rank <= 4.  Projectors follow the classical convention of
*unnormalized* permutation sums (a single-row tableau of k boxes applied to
an already symmetric tensor multiplies it by k!), so that coefficient-exact
formulas can be transcribed literally.  A general tableau applies its column
antisymmetrizers first; the adjoint operator applies the row symmetrizers
first.

Slot numbering is 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "DenseTensor",
    "Tableau",
    "TensorError",
    "antisym_sum",
    "antisymmetrize",
    "contract",
    "projector_eigenvalue",
    "remove_traces",
    "ricci_decompose",
    "riemann_adjoint",
    "ricci_reassemble",
    "sym_sum",
    "symmetrize",
    "trace_free",
    "young_apply",
    "young_project",
]

MAX_RANK = 4
MAX_DIM = 8

# Construction-time symmetry checks are absolute, scaled by the max-norm.
SYMMETRY_TOL = 1e-13


class TensorError(ValueError):
    """Invalid tensor operation (bad slots, ranks, symmetries or metric)."""


# ---------------------------------------------------------------------------
# permutation machinery on raw numpy arrays
# ---------------------------------------------------------------------------

def _permuted(a: np.ndarray, slots: tuple[int, ...], perm: tuple[int, ...]) -> np.ndarray:
    """View of `a` with the content of the given slots rearranged by `perm`."""
    axes = list(range(a.ndim))
    for dst, src in zip(slots, perm):
        axes[dst] = src
    return a.transpose(axes)


def _check_slots(a: np.ndarray, slots) -> tuple[int, ...]:
    slots = tuple(slots)
    if len(set(slots)) != len(slots):
        raise TensorError(f"repeated slot in {slots}")
    for s in slots:
        if not 0 <= s < a.ndim:
            raise TensorError(f"slot {s} out of range for rank {a.ndim}")
    return slots


def sym_sum(a: np.ndarray, slots) -> np.ndarray:
    """Unnormalized sum of `a` over all permutations of the given slots."""
    slots = _check_slots(a, slots)
    out = np.zeros_like(a)
    for perm in itertools.permutations(slots):
        out += _permuted(a, slots, perm)
    return out


def antisym_sum(a: np.ndarray, slots) -> np.ndarray:
    """Unnormalized alternating sum of `a` over permutations of the slots."""
    slots = _check_slots(a, slots)
    out = np.zeros_like(a)
    for perm in itertools.permutations(slots):
        out += _perm_sign(slots, perm) * _permuted(a, slots, perm)
    return out


def _perm_sign(slots: tuple[int, ...], perm: tuple[int, ...]) -> int:
    order = [slots.index(p) for p in perm]
    sign = 1
    for i in range(len(order)):
        for j in range(i + 1, len(order)):
            if order[i] > order[j]:
                sign = -sign
    return sign


def young_apply(a: np.ndarray, rows: list[tuple[int, ...]], adjoint: bool = False) -> np.ndarray:
    """Apply the Young operator of the tableau with the given rows.

    Rows list the tensor slots filling each tableau row; columns are read
    off across the rows.  The plain operator antisymmetrizes the columns
    first and then symmetrizes the rows; `adjoint=True` swaps the order.
    """
    rows = [tuple(r) for r in rows]
    ncols = max(len(r) for r in rows)
    cols = [tuple(r[c] for r in rows if len(r) > c) for c in range(ncols)]
    out = a
    stages = ([("sym", r) for r in rows] + [("alt", c) for c in cols]) if adjoint else (
        [("alt", c) for c in cols] + [("sym", r) for r in rows])
    for kind, slots in stages:
        if len(slots) < 2:
            continue
        out = sym_sum(out, slots) if kind == "sym" else antisym_sum(out, slots)
    return out


def riemann_adjoint(a: np.ndarray) -> np.ndarray:
    """Adjoint projector of the two-row tableau with rows (0,2) and (1,3).

    Symmetrizes slot pairs (0,2) and (1,3), then antisymmetrizes (0,1) and
    (2,3).  Output has the algebraic curvature symmetries; on an algebraic
    curvature tensor the operator acts as multiplication by 12.
    """
    if a.ndim != 4:
        raise TensorError("curvature projector needs a rank-4 tensor")
    return young_apply(a, [(0, 2), (1, 3)], adjoint=True)


# ---------------------------------------------------------------------------
# metric trace removal
# ---------------------------------------------------------------------------

def _contract_pair(x: np.ndarray, ginv: np.ndarray, u: int, v: int) -> np.ndarray:
    out = np.tensordot(x, ginv, axes=([u, v], [0, 1]))
    return out  # remaining axes keep their relative order


def _insert_pair(g: np.ndarray, m: np.ndarray, s: int, t: int, rank: int) -> np.ndarray:
    x = np.multiply.outer(g, m)
    # axes currently: (s', t', rest...) -> move to their true positions
    order = [s, t] + [k for k in range(rank) if k not in (s, t)]
    axes = np.argsort(order)
    return x.transpose(axes)


@lru_cache(maxsize=None)
def _identity_detrace_solver(dim: int, rank: int, slots: tuple[int, ...]):
    """Pseudo-inverse of the trace-matching system for the identity metric."""
    eye = np.eye(dim)
    pairs = list(itertools.combinations(sorted(slots), 2))
    mshape = (dim,) * (rank - 2)
    msize = dim ** (rank - 2)
    cols = []
    for (s, t) in pairs:
        for alpha in range(msize):
            m = np.zeros(msize)
            m[alpha] = 1.0
            x = _insert_pair(eye, m.reshape(mshape), s, t, rank)
            cols.append(np.concatenate(
                [_contract_pair(x, eye, u, v).ravel() for (u, v) in pairs]))
    a = np.array(cols).T
    return np.linalg.pinv(a, rcond=1e-12), pairs, mshape, msize


def remove_traces(a: np.ndarray, ginv: np.ndarray, slots=None) -> np.ndarray:
    """Subtract metric terms so every contraction over the slots vanishes.

    Works for any nondegenerate metric; slots defaults to all of them.  The
    subtracted part is a combination of metric insertions g ⊗ M, solved in
    the least-squares sense (the system is consistent for nondegenerate g).
    """
    if a.ndim < 2:
        return a.copy()
    slots = tuple(range(a.ndim)) if slots is None else tuple(sorted(slots))
    if len(slots) < 2:
        return a.copy()
    dim = a.shape[0]
    # All supported metrics are pointwise conformal to the identity; trace
    # removal is then independent of the conformal factor.
    diag = ginv[0, 0]
    if abs(diag) < 1e-300 or not np.allclose(ginv, diag * np.eye(dim), atol=1e-12 * abs(diag)):
        return _remove_traces_general(a, ginv, slots)
    pinv, pairs, mshape, msize = _identity_detrace_solver(dim, a.ndim, slots)
    eye = np.eye(dim)
    b = np.concatenate([_contract_pair(a, eye, u, v).ravel() for (u, v) in pairs])
    coeffs = pinv @ b
    out = a.copy()
    for p, (s, t) in enumerate(pairs):
        m = coeffs[p * msize:(p + 1) * msize].reshape(mshape)
        out -= _insert_pair(eye, m, s, t, a.ndim)
    return out


def _remove_traces_general(a: np.ndarray, ginv: np.ndarray, slots) -> np.ndarray:
    pairs = list(itertools.combinations(slots, 2))
    dim = a.shape[0]
    g = np.linalg.inv(ginv)
    mshape = (dim,) * (a.ndim - 2)
    msize = dim ** (a.ndim - 2)
    cols = []
    for (s, t) in pairs:
        for alpha in range(msize):
            m = np.zeros(msize)
            m[alpha] = 1.0
            x = _insert_pair(g, m.reshape(mshape), s, t, a.ndim)
            cols.append(np.concatenate(
                [_contract_pair(x, ginv, u, v).ravel() for (u, v) in pairs]))
    mat = np.array(cols).T
    b = np.concatenate([_contract_pair(a, ginv, u, v).ravel() for (u, v) in pairs])
    coeffs, *_ = np.linalg.lstsq(mat, b, rcond=None)
    out = a.copy()
    for p, (s, t) in enumerate(pairs):
        m = coeffs[p * msize:(p + 1) * msize].reshape(mshape)
        out -= _insert_pair(g, m, s, t, a.ndim)
    return out


# ---------------------------------------------------------------------------
# public dataclasses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tableau:
    """A filled Young tableau over tensor slots (rows of 0-based slots)."""

    rows: tuple[tuple[int, ...], ...]

    def __init__(self, rows):
        object.__setattr__(self, "rows", tuple(tuple(r) for r in rows))
        lengths = [len(r) for r in self.rows]
        if any(l == 0 for l in lengths):
            raise TensorError("empty tableau row")
        if any(lengths[i] < lengths[i + 1] for i in range(len(lengths) - 1)):
            raise TensorError("tableau row lengths must be weakly decreasing")
        flat = [s for r in self.rows for s in r]
        if len(set(flat)) != len(flat):
            raise TensorError("tableau slots must be distinct")

    @property
    def slots(self) -> tuple[int, ...]:
        return tuple(s for r in self.rows for s in r)


@dataclass(frozen=True)
class DenseTensor:
    """Dense multi-index array on one tangent space with declared symmetries.

    `entries` is the flat row-major array of length dim**rank; `variance`
    flags each slot as covariant ("lo") or contravariant ("up").  Declared
    symmetries are checked on construction (tolerance 1e-13 scaled by the
    max-norm) and then enforced exactly by averaging.
    """

    rank: int
    dim: int
    entries: np.ndarray
    variance: tuple[str, ...]
    symmetries: tuple[tuple[str, tuple[int, ...]], ...] = field(default=())

    def __init__(self, rank, dim, entries, variance=None, symmetries=()):
        if not 0 <= rank <= MAX_RANK:
            raise TensorError(f"rank {rank} outside 0..{MAX_RANK}")
        if not 1 <= dim <= MAX_DIM:
            raise TensorError(f"dim {dim} outside 1..{MAX_DIM}")
        entries = np.asarray(entries, dtype=float).ravel()
        if entries.size != dim ** rank:
            raise TensorError(
                f"expected {dim ** rank} entries for rank {rank}, dim {dim}; got {entries.size}")
        if variance is None:
            variance = ("lo",) * rank
        variance = tuple(variance)
        if len(variance) != rank or any(v not in ("lo", "up") for v in variance):
            raise TensorError(f"bad variance {variance}")
        symmetries = tuple((kind, tuple(slots)) for kind, slots in symmetries)
        arr = entries.reshape((dim,) * rank) if rank else entries.reshape(())
        scale = max(1.0, float(np.max(np.abs(arr))) if arr.size else 0.0)
        for kind, slots in symmetries:
            for s in slots:
                if not 0 <= s < rank:
                    raise TensorError(f"symmetry slot {s} out of range")
            probe = sym_sum(arr, slots) if kind == "antisym" else antisym_sum(arr, slots)
            # the opposite projector must annihilate a (anti)symmetric tensor
            if np.max(np.abs(probe)) > SYMMETRY_TOL * scale * math.factorial(len(slots)):
                raise TensorError(f"declared symmetry {kind}{slots} violated")
        for kind, slots in symmetries:
            k = math.factorial(len(slots))
            arr = (sym_sum(arr, slots) if kind == "sym" else antisym_sum(arr, slots)) / k
        object.__setattr__(self, "rank", rank)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "entries", arr.ravel())
        object.__setattr__(self, "variance", variance)
        object.__setattr__(self, "symmetries", symmetries)

    @property
    def array(self) -> np.ndarray:
        """Entries reshaped to (dim,)*rank."""
        if self.rank == 0:
            return self.entries.reshape(())
        return self.entries.reshape((self.dim,) * self.rank)

    def with_array(self, arr: np.ndarray, variance=None, symmetries=()) -> "DenseTensor":
        return DenseTensor(arr.ndim, self.dim, arr.ravel(),
                           variance or ("lo",) * arr.ndim, symmetries)

    def __repr__(self):
        return f"DenseTensor(rank={self.rank}, dim={self.dim}, variance={self.variance})"


def _same_variance(t: DenseTensor, slots) -> None:
    kinds = {t.variance[s] for s in slots}
    if len(kinds) > 1:
        raise TensorError(f"mixed variance across slots {tuple(slots)}")


# ---------------------------------------------------------------------------
# public operations on DenseTensor
# ---------------------------------------------------------------------------

def symmetrize(t: DenseTensor, slots) -> DenseTensor:
    """Unnormalized sum over all permutations of the listed slots."""
    slots = _check_slots(t.array, slots)
    _same_variance(t, slots)
    return t.with_array(sym_sum(t.array, slots), variance=t.variance)


def antisymmetrize(t: DenseTensor, slots) -> DenseTensor:
    """Unnormalized alternating sum over permutations of the listed slots."""
    slots = _check_slots(t.array, slots)
    _same_variance(t, slots)
    return t.with_array(antisym_sum(t.array, slots), variance=t.variance)


def young_project(t: DenseTensor, tab: Tableau, adjoint: bool = False) -> DenseTensor:
    """Apply the tableau's Young operator (columns first; rows first if adjoint)."""
    for s in tab.slots:
        if s >= t.rank:
            raise TensorError(f"tableau slot {s} out of range for rank {t.rank}")
    return t.with_array(young_apply(t.array, list(tab.rows), adjoint=adjoint),
                        variance=t.variance)


def projector_eigenvalue(rows, dim: int, rng=None) -> float:
    """Scale factor lam with P(P(T)) = lam * P(T) for the tableau's operator."""
    rng = np.random.default_rng(0) if rng is None else rng
    rank = max(s for r in rows for s in r) + 1
    a = rng.standard_normal((dim,) * rank)
    pa = young_apply(a, rows)
    ppa = young_apply(pa, rows)
    k = int(np.argmax(np.abs(pa)))
    return float(ppa.ravel()[k] / pa.ravel()[k])


def trace_free(t: DenseTensor, g: DenseTensor, ginv: DenseTensor) -> DenseTensor:
    """Completely trace-free part of `t` with respect to the metric."""
    garr = g.array
    if abs(np.linalg.det(garr)) < 1e-300:
        raise TensorError("singular metric")
    return t.with_array(remove_traces(t.array, ginv.array), variance=t.variance)


def contract(a: DenseTensor, b: DenseTensor, pairs, ginv: DenseTensor) -> DenseTensor:
    """Metric contraction of a ⊗ b over the listed (slot_a, slot_b) pairs.

    Opposite-variance pairs contract directly; two covariant slots go
    through the inverse metric.  Two contravariant slots are rejected.
    """
    if a.dim != b.dim:
        raise TensorError("dimension mismatch")
    pairs = [(int(p), int(q)) for p, q in pairs]
    out_rank = a.rank + b.rank - 2 * len(pairs)
    if out_rank > MAX_RANK:
        raise TensorError(f"result rank {out_rank} exceeds {MAX_RANK}")
    arr_a, arr_b = a.array, b.array
    g_up = ginv.array
    # raise the a-side slot of every covariant/covariant pair
    for (p, q) in pairs:
        va, vb = a.variance[p], b.variance[q]
        if va == "lo" and vb == "lo":
            arr_a = np.moveaxis(
                np.tensordot(arr_a, g_up, axes=([p], [0])), -1, p)
        elif va == "up" and vb == "up":
            raise TensorError("cannot contract two contravariant slots with g inverse")
    out = np.tensordot(arr_a, arr_b, axes=([p for p, _ in pairs], [q for _, q in pairs]))
    var = tuple(a.variance[i] for i in range(a.rank) if i not in {p for p, _ in pairs})
    var += tuple(b.variance[j] for j in range(b.rank) if j not in {q for _, q in pairs})
    return DenseTensor(out.ndim, a.dim, out.ravel(), var or None)


# ---------------------------------------------------------------------------
# curvature helpers
# ---------------------------------------------------------------------------

def _check_curvature_symmetries(r: np.ndarray, tol: float) -> None:
    scale = max(1.0, float(np.max(np.abs(r))))
    checks = [
        np.max(np.abs(r + r.transpose(1, 0, 2, 3))),
        np.max(np.abs(r + r.transpose(0, 1, 3, 2))),
        np.max(np.abs(r - r.transpose(2, 3, 0, 1))),
        np.max(np.abs(r + r.transpose(0, 2, 3, 1) + r.transpose(0, 3, 1, 2))),
    ]
    if max(checks) > tol * scale:
        raise TensorError("input lacks algebraic curvature symmetries")


def ricci_decompose(riem: DenseTensor, g: DenseTensor):
    """Split an algebraic curvature tensor into (weyl, ricci0, scalar).

    The reassembly is
        riem = weyl + P*(ricci0_ik g_jl) / (4 (n-2)) + R P*(g_ik g_jl) / (8 n (n-1))
    with P* the adjoint curvature projector.
    """
    r = riem.array
    garr = g.array
    n = garr.shape[0]
    _check_curvature_symmetries(r, 1e-10)
    ginv = np.linalg.inv(garr)
    ricci = np.einsum("ik,ijkl->jl", ginv, r)
    scalar = float(np.einsum("jl,jl->", ginv, ricci))
    ricci0 = ricci - (scalar / n) * garr
    mid = riemann_adjoint(np.einsum("ik,jl->ijkl", ricci0, garr)) / (4.0 * (n - 2))
    pure = riemann_adjoint(np.einsum("ik,jl->ijkl", garr, garr)) * (
        scalar / (8.0 * n * (n - 1)))
    weyl = r - mid - pure
    return (riem.with_array(weyl, variance=riem.variance),
            g.with_array(ricci0, variance=g.variance),
            scalar)


def ricci_reassemble(weyl: DenseTensor, ricci0: DenseTensor, scalar: float,
                     g: DenseTensor) -> DenseTensor:
    """Inverse of :func:`ricci_decompose`."""
    garr = g.array
    n = garr.shape[0]
    mid = riemann_adjoint(np.einsum("ik,jl->ijkl", ricci0.array, garr)) / (4.0 * (n - 2))
    pure = riemann_adjoint(np.einsum("ik,jl->ijkl", garr, garr)) * (
        scalar / (8.0 * n * (n - 1)))
    return weyl.with_array(weyl.array + mid + pure, variance=weyl.variance)
