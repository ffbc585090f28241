"""Built-in families of second-order superintegrable systems and their checks.

Each family is defined for any dimension n >= 3 by a potential, a metric
model, a set of quadratic first integrals (through their kinetic Killing
tensors) and, where applicable, the scalar structure functions B and C that
generate the structure tensor.  `verify_system` runs the full residual
battery at seeded sample points and returns a deterministic report.

Available names:

* ``oscillator``      flat; V = w^2 sum x_i^2 + sum a_i x_i; constant
                      Killing tensors p_i p_j; structure tensor zero.
* ``generic_flat``    flat; V = sum(a_i / x_i^2 + w x_i^2); Killing set
                      {p_i^2, (x_i p_j - x_j p_i)^2}; B = -3/2 sum x_i^2 ln x_i.
* ``sw2_flat``        flat anisotropic variant with one special axis m.
* ``generic_sphere``  the curved model g = -n(n-1) sum dx_i^2 / x_n^2.
* ``aniso_sphere``    reduced anisotropic family on the same model.
* ``nonwilczynski``   V = sum x_i^2 with only the rotational Killing
                      tensors: a consistent but non-unique structure solve.

The flat structure functions carry the coefficient -3/2 independent of n;
the n-dependent coefficient printed in the source table only matches the
Killing-tensor route at n = 3 (the redundant trace column matches -3/2 at
every n, as does the curved-model row).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import structure as st
from .geometry import GeometryData, MetricModel, covariant_derivatives, geometry_at
from .jets import Expr, Jet, constant_jet, eval_jet, eval_value, parse
from .report import ResidualReport
from .structure import KillingData, StructureData
from .variety import CubicForm, psi_residual

__all__ = [
    "SystemSpec", "PhasePoint", "KillingField", "ConstantKilling",
    "RotationSquared", "RotationTranslation", "QuadraticIntegral",
    "CatalogError", "SYSTEM_NAMES",
    "get_system", "poisson_bracket", "verify_system", "independence_rank",
    "sample_points", "killing_data_at", "structure_at",
    "fd_structure_gradient", "fd_q_gradient",
]

SYSTEM_NAMES = ("oscillator", "generic_flat", "sw2_flat", "generic_sphere",
                "aniso_sphere", "nonwilczynski")


class CatalogError(ValueError):
    """Unknown system, unsupported dimension or missing ingredients."""


# ---------------------------------------------------------------------------
# closed-form Killing tensor fields on flat space
# ---------------------------------------------------------------------------

class KillingField:
    """A Killing tensor field with analytic derivatives (flat background)."""

    label = "K"
    companion_expr: Expr | None = None

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def deriv(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def second(self, x: np.ndarray) -> np.ndarray:
        n = x.size
        return np.zeros((n, n, n, n))

    def companion_grad(self, x: np.ndarray, vgrad: np.ndarray) -> np.ndarray:
        """Gradient of the companion potential, pointwise from K dV."""
        return self.value(x) @ vgrad


class ConstantKilling(KillingField):
    def __init__(self, mat: np.ndarray, label: str = "K"):
        self.mat = np.asarray(mat, dtype=float)
        self.label = label

    def value(self, x):
        return self.mat

    def deriv(self, x):
        n = self.mat.shape[0]
        return np.zeros((n, n, n))


class RotationSquared(KillingField):
    """Kinetic part of (x_i p_j - x_j p_i)^2."""

    def __init__(self, i: int, j: int, dim: int):
        self.i, self.j, self.dim = i, j, dim
        self.label = f"J{i + 1}{j + 1}"

    def value(self, x):
        n = self.dim
        i, j = self.i, self.j
        k = np.zeros((n, n))
        k[i, i] = x[j] ** 2
        k[j, j] = x[i] ** 2
        k[i, j] = k[j, i] = -x[i] * x[j]
        return k

    def deriv(self, x):
        n = self.dim
        i, j = self.i, self.j
        dk = np.zeros((n, n, n))
        dk[i, i, j] = 2 * x[j]
        dk[j, j, i] = 2 * x[i]
        dk[i, j, i] = dk[j, i, i] = -x[j]
        dk[i, j, j] = dk[j, i, j] = -x[i]
        return dk

    def second(self, x):
        n = self.dim
        i, j = self.i, self.j
        dd = np.zeros((n, n, n, n))
        dd[i, i, j, j] = 2.0
        dd[j, j, i, i] = 2.0
        for a, b in ((i, j), (j, i)):
            dd[a, b, i, j] = dd[a, b, j, i] = -1.0
        return dd


class RotationTranslation(KillingField):
    """Kinetic part of (x_i p_m - x_m p_i) p_i, the mixed integral of the
    anisotropic family (i runs over the non-special axes, m is special)."""

    def __init__(self, i: int, m: int, dim: int):
        self.i, self.m, self.dim = i, m, dim
        self.label = f"S{i + 1}"

    def value(self, x):
        n = self.dim
        i, m = self.i, self.m
        w = np.zeros(n)
        w[m] = x[i]
        w[i] = -x[m]
        k = np.zeros((n, n))
        k[:, i] += 0.5 * w
        k[i, :] += 0.5 * w
        return k

    def deriv(self, x):
        n = self.dim
        i, m = self.i, self.m
        dk = np.zeros((n, n, n))
        # dw_a / dx_c = d_am d_ci - d_ai d_cm
        for c, a, val in ((i, m, 1.0), (m, i, -1.0)):
            dk[a, i, c] += 0.5 * val
            dk[i, a, c] += 0.5 * val
        return dk


# ---------------------------------------------------------------------------
# system specifications
# ---------------------------------------------------------------------------

@dataclass
class SystemSpec:
    """A catalog family instantiated at a dimension with parameter values."""

    name: str
    dim: int
    metric: MetricModel
    potential: Expr
    params: dict
    killing: list[KillingField] | None
    B_expr: Expr | None
    C_expr: Expr | None
    flags: dict = field(default_factory=dict)
    integral_selection: list[int] | None = None   # indices into [H] + killing
    special_index: int | None = None
    notes: dict = field(default_factory=dict)

    @property
    def has_closed_killing(self) -> bool:
        return self.killing is not None

    def potential_jet(self, x, order: int = 3) -> Jet:
        return eval_jet(self.potential, x, self.params, order=order)

    def b_jet(self, x, order: int = 4) -> Jet:
        if self.B_expr is None:
            return constant_jet(0.0, self.dim, order)
        return eval_jet(self.B_expr, x, self.params, order=order)

    def c_jet(self, x, order: int = 4) -> Jet:
        if self.C_expr is None:
            return constant_jet(0.0, self.dim, order)
        return eval_jet(self.C_expr, x, self.params, order=order)


def _merge_params(defaults: dict, params: dict | None) -> dict:
    out = dict(defaults)
    for k, v in (params or {}).items():
        if k not in defaults:
            raise CatalogError(f"unknown parameter {k!r}; valid: {sorted(defaults)}")
        out[k] = v
    return out


def get_system(name: str, n: int, params: dict | None = None) -> SystemSpec:
    """Instantiate a catalog family at dimension n (>= 3)."""
    if n < 3:
        raise CatalogError(f"dimension {n} unsupported (need n >= 3)")
    if name not in SYSTEM_NAMES:
        raise CatalogError(f"unknown system {name!r}; valid: {SYSTEM_NAMES}")
    builder = globals()[f"_build_{name}"]
    return builder(n, params)


def _pnames(n: int, extra=("w",)) -> set[str]:
    return {f"a{i}" for i in range(1, n + 1)} | set(extra)


def _build_oscillator(n: int, params) -> SystemSpec:
    defaults = {f"a{i}": 1.0 for i in range(1, n + 1)}
    defaults["w"] = 1.0
    p = _merge_params(defaults, params)
    names = _pnames(n)
    v_src = "w^2*(" + " + ".join(f"x{i}^2" for i in range(1, n + 1)) + ")" \
        + "".join(f" + a{i}*x{i}" for i in range(1, n + 1))
    killing = []
    selection = [0]
    for i in range(n):
        for j in range(i, n):
            mat = np.zeros((n, n))
            if i == j:
                mat[i, i] = 1.0
            else:
                mat[i, j] = mat[j, i] = 0.5
            k = ConstantKilling(mat, label=(f"P{i + 1}" if i == j else f"F{i + 1}{j + 1}"))
            if i == j:
                k.companion_expr = parse(f"w^2*x{i + 1}^2 + a{i + 1}*x{i + 1}", n, names)
            else:
                k.companion_expr = parse(
                    f"w^2*x{i + 1}*x{j + 1} + (a{i + 1}*x{j + 1} + a{j + 1}*x{i + 1})/2",
                    n, names)
            killing.append(k)
    order = {f.label: idx for idx, f in enumerate(killing)}
    selection += [1 + order[f"P{i}"] for i in range(1, n)]
    selection += [1 + order[f"F1{j}"] for j in range(2, n + 1)]
    return SystemSpec(
        name="oscillator", dim=n, metric=MetricModel.euclidean(n),
        potential=parse(v_src, n, names), params=p, killing=killing,
        B_expr=None, C_expr=None,
        flags={"wilczynski": True, "nondegenerate_claimed": True, "abundant_claimed": True},
        integral_selection=selection)


def _build_generic_flat(n: int, params) -> SystemSpec:
    defaults = {f"a{i}": 1.0 for i in range(1, n + 1)}
    defaults["w"] = 1.0
    p = _merge_params(defaults, params)
    names = _pnames(n)
    v_src = " + ".join(f"a{i}/x{i}^2 + w*x{i}^2" for i in range(1, n + 1))
    b_src = "-(3/2)*(" + " + ".join(f"x{i}^2*ln(x{i})" for i in range(1, n + 1)) + ")"
    killing: list[KillingField] = []
    for i in range(n):
        mat = np.zeros((n, n))
        mat[i, i] = 1.0
        k = ConstantKilling(mat, label=f"P{i + 1}")
        k.companion_expr = parse(f"a{i + 1}/x{i + 1}^2 + w*x{i + 1}^2", n, names)
        killing.append(k)
    for i in range(n):
        for j in range(i + 1, n):
            k = RotationSquared(i, j, n)
            k.companion_expr = parse(
                f"a{i + 1}*x{j + 1}^2/x{i + 1}^2 + a{j + 1}*x{i + 1}^2/x{j + 1}^2",
                n, names)
            killing.append(k)
    order = {f.label: idx for idx, f in enumerate(killing)}
    selection = [0] + [1 + order[f"P{i}"] for i in range(1, n)] \
        + [1 + order[f"J1{j}"] for j in range(2, n + 1)]
    return SystemSpec(
        name="generic_flat", dim=n, metric=MetricModel.euclidean(n),
        potential=parse(v_src, n, names), params=p, killing=killing,
        B_expr=parse(b_src, n), C_expr=None,
        flags={"wilczynski": True, "nondegenerate_claimed": True, "abundant_claimed": True},
        integral_selection=selection,
        notes={"printed_b_coefficient": f"-3/(n-1) = {-3.0 / (n - 1):.6g}",
               "used_b_coefficient": "-3/2"})


def _build_sw2_flat(n: int, params) -> SystemSpec:
    defaults = {f"a{i}": 1.0 for i in range(1, n + 1)}
    defaults["w"] = 1.0
    defaults["m"] = 1.0
    p = _merge_params(defaults, params)
    m = int(p["m"]) - 1
    if not 0 <= m < n:
        raise CatalogError(f"special index m={p['m']} outside 1..{n}")
    names = _pnames(n)
    rest = [i for i in range(n) if i != m]
    v_src = f"w^2*(4*x{m + 1}^2 + " + " + ".join(f"x{i + 1}^2" for i in rest) + ")" \
        + f" + a{m + 1}*x{m + 1} + " \
        + " + ".join(f"a{i + 1}/x{i + 1}^2" for i in rest)
    b_src = "-(3/2)*(" + " + ".join(f"x{i + 1}^2*ln(x{i + 1})" for i in rest) + ")"
    killing: list[KillingField] = []
    for i in range(n):
        mat = np.zeros((n, n))
        mat[i, i] = 1.0
        killing.append(ConstantKilling(mat, label=f"P{i + 1}"))
    for ai, i in enumerate(rest):
        for j in rest[ai + 1:]:
            killing.append(RotationSquared(i, j, n))
    for i in rest:
        killing.append(RotationTranslation(i, m, n))
    order = {f.label: idx for idx, f in enumerate(killing)}
    selection = [0] + [1 + order[f"P{i + 1}"] for i in rest[:n - 1]] \
        + [1 + order[f"S{i + 1}"] for i in rest]
    return SystemSpec(
        name="sw2_flat", dim=n, metric=MetricModel.euclidean(n),
        potential=parse(v_src, n, names), params=p, killing=killing,
        B_expr=parse(b_src, n), C_expr=None,
        flags={"wilczynski": True, "nondegenerate_claimed": True, "abundant_claimed": True},
        integral_selection=selection, special_index=m,
        notes={"printed_b_coefficient": f"-3/(n-1) = {-3.0 / (n - 1):.6g}",
               "used_b_coefficient": "-3/2"})


def _build_generic_sphere(n: int, params) -> SystemSpec:
    defaults = {f"a{i}": 1.0 for i in range(1, n + 1)}
    defaults["w"] = 1.0
    p = _merge_params(defaults, params)
    names = _pnames(n)
    inner = " + ".join(f"a{i}/x{i}^2 + w*x{i}^2" for i in range(1, n + 1))
    v_src = f"-(x{n}^2/{n * (n - 1)})*({inner})"
    b_src = f"(3/2)*{n * (n - 1)}*(" \
        + " + ".join(f"x{i}^2*ln(x{i})" for i in range(1, n + 1)) + f")/x{n}^2"
    return SystemSpec(
        name="generic_sphere", dim=n, metric=MetricModel.table2_sphere(n),
        potential=parse(v_src, n, names), params=p, killing=None,
        B_expr=parse(b_src, n), C_expr=None,
        flags={"wilczynski": True, "nondegenerate_claimed": True, "abundant_claimed": True})


def _build_aniso_sphere(n: int, params) -> SystemSpec:
    defaults = {f"a{i}": 1.0 for i in range(1, n + 1)}
    p = _merge_params(defaults, params)
    names = _pnames(n, extra=())
    rest = range(1, n)
    v_src = f"-(x{n}^2/{n * (n - 1)})*(x{n}^2 + 4*(" \
        + " + ".join(f"x{i}^2" for i in rest) + "))" \
        + f" + a{n}*x{n} + " + " + ".join(f"a{i}/x{i}^2" for i in rest)
    b_src = f"(3/2)*{n * (n - 1)}*ln(x{n})"
    return SystemSpec(
        name="aniso_sphere", dim=n, metric=MetricModel.table2_sphere(n),
        potential=parse(v_src, n, names), params=p, killing=None,
        B_expr=parse(b_src, n), C_expr=None, special_index=n - 1,
        flags={"wilczynski": True, "nondegenerate_claimed": True, "abundant_claimed": True})


def _build_nonwilczynski(n: int, params) -> SystemSpec:
    p = _merge_params({}, params)
    v_src = " + ".join(f"x{i}^2" for i in range(1, n + 1))
    killing = [RotationSquared(i, j, n) for i in range(n) for j in range(i + 1, n)]
    for k in killing:
        k.companion_expr = parse("0", n)
    return SystemSpec(
        name="nonwilczynski", dim=n, metric=MetricModel.euclidean(n),
        potential=parse(v_src, n), params=p, killing=killing,
        B_expr=None, C_expr=None,
        flags={"wilczynski": True, "nondegenerate_claimed": False,
               "abundant_claimed": False})


# ---------------------------------------------------------------------------
# phase-space machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhasePoint:
    q: np.ndarray
    p: np.ndarray


class QuadraticIntegral:
    """F = K^{ab}(q) p_a p_b + V_F(q) with pointwise companion gradient."""

    def __init__(self, spec: SystemSpec, kfield: KillingField | None):
        self.spec = spec
        self.kfield = kfield    # None means the Hamiltonian itself

    def _kinetic(self, q):
        if self.kfield is None:
            gd_phi = eval_value(self.spec.metric.factor, q, self.spec.metric.params)
            return np.eye(q.size) / gd_phi
        return self.kfield.value(q)

    def value(self, pt: PhasePoint) -> float:
        k = self._kinetic(pt.q)
        kin = float(pt.p @ k @ pt.p)
        if self.kfield is None:
            return kin + eval_value(self.spec.potential, pt.q, self.spec.params)
        if self.kfield.companion_expr is not None:
            return kin + eval_value(self.kfield.companion_expr, pt.q, self.spec.params)
        return kin   # companion potential known only through its gradient

    def grad_p(self, pt: PhasePoint) -> np.ndarray:
        return 2.0 * self._kinetic(pt.q) @ pt.p

    def grad_q(self, pt: PhasePoint) -> np.ndarray:
        q, p = pt.q, pt.p
        vjet = eval_jet(self.spec.potential, q, self.spec.params, order=1)
        vgrad = vjet.gradient()
        if self.kfield is None:
            phi_jet = eval_jet(self.spec.metric.factor, q, self.spec.metric.params, order=1)
            dginv = -phi_jet.gradient() / phi_jet.value ** 2
            return dginv * float(p @ p) + vgrad
        dk = self.kfield.deriv(q)
        kin_grad = np.einsum("abc,a,b->c", dk, p, p)
        return kin_grad + self.kfield.companion_grad(q, vgrad)


def poisson_bracket(f, g, pt: PhasePoint) -> float:
    """Canonical bracket sum_i (dF/dq_i dG/dp_i - dG/dq_i dF/dp_i)."""
    return float(f.grad_q(pt) @ g.grad_p(pt) - g.grad_q(pt) @ f.grad_p(pt))


def integrals_of(spec: SystemSpec) -> list[QuadraticIntegral]:
    if not spec.has_closed_killing:
        raise CatalogError(f"{spec.name} has no closed-form integrals")
    pool = [QuadraticIntegral(spec, None)] + \
        [QuadraticIntegral(spec, k) for k in spec.killing]
    return pool


def independence_rank(spec: SystemSpec, pt: PhasePoint, tol: float = 1e-9) -> int:
    """Rank of the phase-space differentials of the selected 2n-1 integrals."""
    n = spec.dim
    if spec.integral_selection is None or len(spec.integral_selection) < 2 * n - 1:
        raise CatalogError(f"{spec.name} provides fewer than {2 * n - 1} integrals")
    pool = integrals_of(spec)
    rows = []
    for idx in spec.integral_selection[:2 * n - 1]:
        f = pool[idx]
        rows.append(np.concatenate([f.grad_q(pt), f.grad_p(pt)]))
    sv = np.linalg.svd(np.array(rows), compute_uv=False)
    return int(np.sum(sv > tol * sv[0]))


# ---------------------------------------------------------------------------
# pointwise assembly helpers
# ---------------------------------------------------------------------------

def killing_data_at(spec: SystemSpec, x: np.ndarray,
                    gd: GeometryData | None = None,
                    sd: StructureData | None = None) -> KillingData:
    """Killing data at a point: closed forms when available, synthesized
    from the structure tensor otherwise."""
    if spec.has_closed_killing:
        return KillingData(values=[k.value(x) for k in spec.killing],
                           derivs=[k.deriv(x) for k in spec.killing],
                           second_derivs=[k.second(x) for k in spec.killing])
    gd = geometry_at(spec.metric, x) if gd is None else gd
    sd = structure_at(spec, x, gd) if sd is None else sd
    return st.synthesize_killing_data(sd, gd)


def structure_at(spec: SystemSpec, x: np.ndarray,
                 gd: GeometryData | None = None) -> StructureData:
    """Structure tensor at a point from the system's structure functions."""
    gd = geometry_at(spec.metric, x) if gd is None else gd
    return st.structure_from_BC(spec.b_jet(x), spec.c_jet(x), gd)


def sample_points(spec: SystemSpec, npoints: int, rng_seed: int,
                  lo: float = 0.5, hi: float = 2.0) -> list[np.ndarray]:
    rng = np.random.default_rng(rng_seed)
    out = []
    attempts = 0
    while len(out) < npoints:
        attempts += 1
        if attempts > 1000 + npoints:
            raise CatalogError("sampling failure: admissible domain too constrained")
        x = rng.uniform(lo, hi, spec.dim)
        if spec.metric.admissible(x):
            out.append(x)
    return out


def sample_phase_points(spec: SystemSpec, npoints: int, rng_seed: int) -> list[PhasePoint]:
    rng = np.random.default_rng(rng_seed)
    out = []
    for _ in range(npoints):
        q = rng.uniform(0.5, 2.0, spec.dim)
        p = rng.uniform(-1.0, 1.0, spec.dim)
        out.append(PhasePoint(q=q, p=p))
    return out


def fd_structure_gradient(spec: SystemSpec, x: np.ndarray, h: float = 1e-4,
                          via: str = "killing") -> np.ndarray:
    """Central-difference covariant gradient of the structure tensor field.

    `via="killing"` recomputes T at displaced points from the Killing data;
    `via="bc"` uses the structure functions.  On curved models the partial
    derivatives are corrected with the Christoffel symbols at x.
    """
    n = spec.dim
    gd = geometry_at(spec.metric, x)

    def t_at(y):
        gdy = geometry_at(spec.metric, y)
        if via == "killing":
            kd = killing_data_at(spec, y, gdy)
            return st.solve_structure_tensor(kd, gdy).T
        return structure_at(spec, y, gdy).T

    dt = np.zeros((n, n, n, n))
    for l in range(n):
        xp = x.copy(); xp[l] += h
        xm = x.copy(); xm[l] -= h
        dt[:, :, :, l] = (t_at(xp) - t_at(xm)) / (2.0 * h)
    if not gd.is_flat:
        t0 = t_at(x)
        dt -= np.einsum("mli,mjk->ijkl", gd.gamma, t0)
        dt -= np.einsum("mlj,imk->ijkl", gd.gamma, t0)
        dt -= np.einsum("mlk,ijm->ijkl", gd.gamma, t0)
    return dt


def fd_q_gradient(spec: SystemSpec, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Covariant FD gradient of q_k^m; derivative slot last: out[k, m, l]."""
    n = spec.dim
    gd = geometry_at(spec.metric, x)

    def q_at(y):
        gdy = geometry_at(spec.metric, y)
        return structure_at(spec, y, gdy).q

    dq = np.zeros((n, n, n))
    for l in range(n):
        xp = x.copy(); xp[l] += h
        xm = x.copy(); xm[l] -= h
        dq[:, :, l] = (q_at(xp) - q_at(xm)) / (2.0 * h)
    if not gd.is_flat:
        q0 = q_at(x)
        dq = dq - np.einsum("alk,am->kml", gd.gamma, q0) \
            + np.einsum("mla,ka->kml", gd.gamma, q0)
    return dq


# ---------------------------------------------------------------------------
# the verification battery
# ---------------------------------------------------------------------------

TOLS = {
    "killing_equation": 1e-10,
    "bertrand_darboux": 1e-9,
    "wilczynski_solve": 1e-10,
    "wilczynski_equation": 1e-8,
    "structure_unique": 0.5,
    "structure_cross_check": 1e-9,
    "killing_prolongation": 1e-8,
    "killing_identity": 1e-8,
    "potential_ic_linear": 1e-8,
    "potential_ic_hook": 1e-8,
    "potential_ic_quadratic": 1e-8,
    "potential_ic_weyl": 1e-8,
    "potential_ic_differential": 1e-8,
    "killing_ic_weyl": 1e-8,
    "killing_ic_ricci": 1e-8,
    "killing_ic_scalar_gradient": 1e-8,
    "cc_weyl": 1e-8,
    "cc_ricci": 1e-8,
    "cc_scalar": 1e-8,
    "codazzi_second": 1e-8,
    "codazzi_third": 1e-8,
    "connection_flat": 1e-8,
    "connection_consistency": 1e-8,
    "variety_membership": 1e-8,
    "derivative_formula": 1e-8,
    "abundance": 0.5,
    "q_symmetry": 1e-10,
    "poisson": 1e-10,
    "independence_rank": 0.5,
}

EQUATION_IDS = {
    "killing_equation": "cyclic-killing",
    "bertrand_darboux": "potential-compatibility",
    "wilczynski_solve": "hessian-closure-solve",
    "wilczynski_equation": "hessian-closure",
    "structure_unique": "hessian-closure-uniqueness",
    "structure_cross_check": "structure-tensor-two-routes",
    "killing_prolongation": "killing-derivative-reduction",
    "killing_identity": "killing-second-derivative-identity",
    "potential_ic_linear": "potential-integrability-linear",
    "potential_ic_hook": "potential-integrability-hook",
    "potential_ic_quadratic": "potential-integrability-quadratic",
    "potential_ic_weyl": "potential-integrability-weyl",
    "potential_ic_differential": "potential-integrability-differential",
    "killing_ic_weyl": "killing-integrability-weyl",
    "killing_ic_ricci": "killing-integrability-ricci",
    "killing_ic_scalar_gradient": "killing-integrability-scalar-gradient",
    "cc_weyl": "constant-curvature-weyl",
    "cc_ricci": "constant-curvature-ricci",
    "cc_scalar": "constant-curvature-scalar",
    "codazzi_second": "codazzi-rank2",
    "codazzi_third": "codazzi-rank3",
    "connection_flat": "structure-connection-flatness",
    "connection_consistency": "structure-connection-two-routes",
    "variety_membership": "cubic-form-variety",
    "derivative_formula": "structure-derivative-polynomial",
    "abundance": "killing-space-dimension",
    "q_symmetry": "laplacian-coupling-symmetry",
    "poisson": "poisson-commutation",
    "independence_rank": "functional-independence",
}


def verify_system(spec: SystemSpec, npoints: int = 20, rng_seed: int = 0,
                  phase_points: int = 100) -> ResidualReport:
    """Run every applicable residual check at seeded sample points."""
    rep = ResidualReport(system=spec.name, params=dict(spec.params), seed=rng_seed)
    points = sample_points(spec, npoints, rng_seed)
    rep.points = [list(map(float, x)) for x in points]
    n = spec.dim

    def rec(name, value, passed=None):
        rep.record(name, EQUATION_IDS[name], float(value), TOLS[name], passed)

    for x in points:
        gd = geometry_at(spec.metric, x)
        vjet = spec.potential_jet(x, order=3)
        vcov = covariant_derivatives(vjet, gd, 2)
        has_bc = spec.B_expr is not None or spec.name == "oscillator"

        sd_bc = None
        if has_bc:
            sd_bc = st.structure_from_BC(spec.b_jet(x), spec.c_jet(x), gd)

        if spec.has_closed_killing:
            kd = killing_data_at(spec, x, gd)
        else:
            kd = st.synthesize_killing_data(sd_bc, gd)
        solved = st.solve_structure_tensor(kd, gd, vcov=vcov)
        rec("wilczynski_solve", solved.solve_residual)
        rec("structure_unique", float(solved.kernel_dim))
        if sd_bc is not None:
            rec("structure_cross_check",
                float(np.max(np.abs(solved.T - sd_bc.T))) / max(1.0, np.max(np.abs(sd_bc.T))))
            sd = st.derived_tensors(sd_bc, sd_bc.dT, gd) if sd_bc.Q is None else sd_bc
        else:
            sd = solved

        kres = st.killing_residuals(kd, sd, gd, vcov)
        rec("killing_equation", kres["killing"])
        rec("killing_prolongation", kres["prolongation"])
        rec("bertrand_darboux", kres["bertrand_darboux"])
        rec("wilczynski_equation", kres["wilczynski"])
        if "second_derivative_identity" in kres:
            rec("killing_identity", kres["second_derivative_identity"])

        if sd_bc is None:
            continue

        sv = st.sic_v_residuals(sd, gd)
        rec("potential_ic_linear", sv["linear"])
        rec("potential_ic_hook", sv["hook"])
        rec("potential_ic_quadratic", sv["quadratic"])
        rec("potential_ic_weyl", sv["weyl"])
        rec("potential_ic_differential", sv["differential"])
        rec("q_symmetry", float(np.max(np.abs(sd.q - sd.q.T))) / max(1.0, np.max(np.abs(sd.q))))

        sk = st.sic_k_residuals(sd, gd)
        rec("killing_ic_weyl", sk["weyl"])
        rec("killing_ic_ricci", sk["ricci"])
        rec("killing_ic_scalar_gradient", sk["scalar_gradient"])
        rec("cc_weyl", sk["cc_weyl"])
        rec("cc_ricci", sk["cc_ricci"])
        rec("cc_scalar", sk["cc_scalar"])

        pred = st.structure_derivative_rhs(sd, gd)
        rec("derivative_formula",
            float(np.max(np.abs(pred - sd.dT))) / max(1.0, np.max(np.abs(sd.dT))))

        cd = st.codazzi_from_scalars(spec.b_jet(x), spec.c_jet(x), gd, Z=sd.Z)
        rec("codazzi_third",
            float(np.max(np.abs(cd.dB3 - cd.dB3.transpose(0, 1, 3, 2))))
            / max(1.0, np.max(np.abs(cd.dB3))))
        rec("codazzi_second",
            float(np.max(np.abs(cd.dC2 - cd.dC2.transpose(0, 2, 1))))
            / max(1.0, np.max(np.abs(cd.dC2))))

        sc = st.structure_connection(spec.b_jet(x), spec.c_jet(x), gd)
        rec("connection_flat",
            float(np.max(np.abs(sc.Rhat))) / max(1.0, np.max(np.abs(gd.riemann_ud)) or 1.0))
        rec("connection_consistency", sc.agreement)

        psi = CubicForm.from_tensor(st.frame_components(cd.B3, gd))
        _, pnorm = psi_residual(psi, gd.scalar)
        rec("variety_membership", pnorm / max(1.0, float(np.max(np.abs(psi.tensor))) ** 2))

        mat = st.abundance_constraint_matrix(sd, gd)
        sv_m = np.linalg.svd(mat, compute_uv=False)
        tol_m = 1e-8 * max(1.0, float(sv_m[0]) if sv_m.size else 0.0)
        nullity = mat.shape[1] - int(np.sum(sv_m > tol_m))
        rec("abundance", float(n * (n + 1) // 2 - nullity))

    if spec.has_closed_killing and spec.integral_selection is not None \
            and len(spec.integral_selection) >= 2 * n - 1:
        pool = integrals_of(spec)
        ham = pool[0]
        ppts = sample_phase_points(spec, phase_points, rng_seed + 1)
        worst = 0.0
        for ppt in ppts:
            for idx in spec.integral_selection[:2 * n - 1]:
                b = poisson_bracket(pool[idx], ham, ppt)
                scale = max(1.0, abs(pool[idx].value(ppt)), abs(ham.value(ppt)))
                worst = max(worst, abs(b) / scale)
        rec("poisson", worst)
        rank_pts = sample_phase_points(spec, 10, rng_seed + 2)
        worst_rank_gap = 0
        for ppt in rank_pts:
            worst_rank_gap = max(worst_rank_gap,
                                 (2 * n - 1) - independence_rank(spec, ppt))
        rec("independence_rank", float(worst_rank_gap))
    return rep
