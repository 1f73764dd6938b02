"""Solution diagnostics: truncated residuals, concentration maps, defects.

Solutions of linear-growth problems can concentrate stress on sets of
measure zero, which a finite mesh can only hint at.  The tools here compute
the hints: renormalized (stress-truncated) equilibrium residuals, discrete
maximal-function growth exponents that flag candidate concentration
vertices, the boundary defect that measures by how much the prescribed
traction fails to be attained, mollified direction fields of strain and
stress, and the boundedness trace along a regularization schedule.

None of these certify a singularity; the flags are documented heuristics
and the exact thresholds live in the decisions ledger.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .constitutive import tensor_norm
from .discretization import (
    DIRICHLET,
    NEUMANN,
    CellTensorField,
    FESpace,
    Field,
    MeshDomain,
    assemble_load,
    gradient,
    internal_forces,
)
from .errors import ConfigError, InvalidInput
from .solver import ApproxSolution

__all__ = [
    "tau_k",
    "dtau_k",
    "G_k",
    "htilde",
    "RenormReport",
    "renorm_residual",
    "equilibrium_residual",
    "stress_quantile_ladder",
    "SingularSupportMap",
    "maximal_function",
    "BoundaryDefectEstimate",
    "boundary_defect",
    "DirectionFields",
    "direction_fields",
    "AprioriTrace",
    "apriori_monitor",
]


# ---------------------------------------------------------------------------
# truncation functions


def tau_k(s, k: float):
    """C1 cutoff: 1 on [0, k], 0 on [2k, inf), cubic smoothstep between."""
    if k <= 0.0:
        raise InvalidInput("truncation level k must be positive")
    s = np.asarray(s, dtype=float)
    x = np.clip((s - k) / k, 0.0, 1.0)
    out = 1.0 - x * x * (3.0 - 2.0 * x)
    return out if out.ndim else float(out)


def dtau_k(s, k: float):
    """Derivative of :func:`tau_k`; bounded by 1.5/k in magnitude."""
    if k <= 0.0:
        raise InvalidInput("truncation level k must be positive")
    s = np.asarray(s, dtype=float)
    x = (s - k) / k
    inside = (x > 0.0) & (x < 1.0)
    out = np.where(inside, -6.0 * x * (1.0 - x) / k, 0.0)
    return out if out.ndim else float(out)


def G_k(s: float, k: float, g: Callable[[float], float]) -> float:
    """``int_0^s tau_k'(t) g(t) dt`` by adaptive quadrature.

    The integrand is supported on [k, 2k], so the result is 0 for s <= k and
    constant for s >= 2k; for the constant weight g = 1 that constant is
    exactly -1.
    """
    if k <= 0.0:
        raise InvalidInput("truncation level k must be positive")
    s = float(s)
    if s <= k:
        return 0.0
    hi = min(s, 2.0 * k)
    val, _ = quad(lambda t: dtau_k(t, k) * g(t), k, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(val)


def htilde(law, s: float) -> float:
    """Compactness weight ``int_0^s h(t)/(1+t)^2 dt`` (finite for every s)."""
    s = float(s)
    if s < 0.0:
        raise InvalidInput("magnitude must be nonnegative")
    if s == 0.0:
        return 0.0
    val, _ = quad(lambda t: law.h(t) / (1.0 + t) ** 2, 0.0, s, epsabs=1e-13, limit=200)
    return float(val)


# ---------------------------------------------------------------------------
# renormalized residual


def _p1_magnitude(T: CellTensorField) -> np.ndarray:
    """Nodal P1 interpolant of |T|: measure-weighted patch average per vertex."""
    mesh = T.mesh
    cellvals = tensor_norm(T.values)[:, 0]
    num = np.zeros(mesh.n_vertices)
    den = np.zeros(mesh.n_vertices)
    share = mesh.cell_measures / (mesh.dim + 1)
    for kk in range(mesh.dim + 1):
        np.add.at(num, mesh.cells[:, kk], share * cellvals)
        np.add.at(den, mesh.cells[:, kk], share)
    return num / den


@dataclass(frozen=True)
class RenormReport:
    """One truncated-identity evaluation.

    residual:
        |LHS - RHS| of the truncated identity at level k.
    transport_magnitude:
        |int T_ij w_i d_j tau_k(|T|)| alone.
    equilibrium_residual:
        the same functional with the cutoff frozen at exactly 1 (the plain
        equilibrium residual against w, same code path and summation order).
    quad_tolerance:
        computable envelope of the interpolation commutator plus the leakage
        of the converged discrete residual; the residual of a converged
        solution is bounded by it.
    """

    k: float
    residual: float
    transport_magnitude: float
    equilibrium_residual: float
    quad_tolerance: float


def _renorm_sums(T: CellTensorField, f, w: Field, kind: str, tau_cells: np.ndarray):
    """Shared cellwise accumulation for the (possibly truncated) identity.

    Returns (lhs, f_term).  Passing tau_cells identically 1.0 reproduces the
    plain equilibrium residual bit for bit: every cell contribution is
    multiplied by exactly 1.0 and summed in the same order.
    """
    space = w.space
    mesh = space.mesh
    Ew = gradient(w, kind)
    lhs_cells = tau_cells * T.weights[:, 0] * np.sum(T.values[:, 0] * Ew.values[:, 0],
                                                     axis=(-2, -1))
    from .discretization import _volume_rule, _eval_data

    bary, wq, pts = _volume_rule(mesh)
    fv = _eval_data(f, pts, space.n_components)
    wh = np.einsum("qb,cbi->cqi", bary, w.values[mesh.cells])
    f_cells = tau_cells * np.einsum("cq,cqi->c", wq, fv * wh)
    return float(lhs_cells.sum()), float(f_cells.sum())


def renorm_residual(T: CellTensorField, f, w: Field, k: float,
                    kind: str = "full") -> RenormReport:
    """Defect of the truncated identity
    ``int T : eps(w) tau_k(|T|) = int f . w tau_k(|T|) - int T_ij w_i d_j tau_k(|T|)``.

    The test field w must vanish on every boundary node.  |T| is first
    interpolated to a continuous P1 scalar (patch averages), the cutoff and
    its cellwise gradient are taken of that interpolant, and all cut-off
    factors are frozen at the cell centroid.  For k at or above max|T| the
    cutoff is exactly 1, the transport term is exactly 0, and the returned
    residual coincides bit for bit with ``equilibrium_residual``.
    """
    space = w.space
    mesh = space.mesh
    if T.mesh.n_cells != mesh.n_cells or T.mesh.dim != mesh.dim:
        raise InvalidInput("test field and stress live on different meshes")
    bnodes = mesh.boundary_vertices()
    if bnodes.size and float(np.max(np.abs(w.values[bnodes]))) > 0.0:
        raise InvalidInput("renormalized test fields must vanish on all boundary nodes")

    s_nodal = _p1_magnitude(T)
    s_cells = s_nodal[mesh.cells]        # (ncell, d+1)
    s_hat = s_cells.mean(axis=1)         # P1 interpolant at centroids
    tau_c = tau_k(s_hat, k)
    dtau_c = dtau_k(s_hat, k)

    lhs, f_term = _renorm_sums(T, f, w, kind, tau_c)
    lhs_plain, f_plain = _renorm_sums(T, f, w, kind, np.ones(mesh.n_cells))

    # transport: meas * tau'(s_hat) * w(centroid)^T T grad(s_h), per cell
    grads = mesh.hat_gradients
    grad_s = np.einsum("cb,cbd->cd", s_cells, grads)
    w_cent = w.values[mesh.cells].mean(axis=1)       # (ncell, ncomp)
    wT = np.einsum("ci,cid->cd", w_cent, T.values[:, 0])
    transport = float(np.sum(mesh.cell_measures * dtau_c * np.sum(wT * grad_s, axis=1)))

    residual = abs(lhs - f_term + transport)
    plain = abs(lhs_plain - f_plain)

    tol = _commutator_envelope(T, f, w, k, kind, s_nodal, s_hat)
    return RenormReport(k=float(k), residual=residual,
                        transport_magnitude=abs(transport),
                        equilibrium_residual=plain,
                        quad_tolerance=tol)


def equilibrium_residual(T: CellTensorField, f, w: Field, kind: str = "full") -> float:
    """Plain residual ``|int T : eps(w) - int f . w|`` for an interior test field."""
    lhs, f_term = _renorm_sums(T, f, w, kind, np.ones(T.mesh.n_cells))
    return abs(lhs - f_term)


def _commutator_envelope(T, f, w, k, kind, s_nodal, s_hat) -> float:
    """Upper bound for the truncated residual of a converged discrete solution.

    The truncated identity differs from testing the discrete equilibrium with
    the P1 interpolant of w*tau_k(s_h) only through cellwise Taylor remainders
    of tau_k; each remainder is bounded by the cell oscillations of s_h and w
    against |tau'| <= 1.5/k and |tau''| <= 6/k^2.  Added to that is the exact
    pairing of the discrete residual vector with that interpolant, and a
    floating-point floor.
    """
    space = w.space
    mesh = space.mesh
    cells = mesh.cells
    meas = mesh.cell_measures

    osc_s = np.max(np.abs(s_nodal[cells] - s_hat[:, None]), axis=1)
    w_cell = w.values[cells]                          # (nc, d+1, ncomp)
    w_cent = w_cell.mean(axis=1)
    osc_w = np.max(np.linalg.norm(w_cell - w_cent[:, None, :], axis=2), axis=1)
    wmax = np.max(np.linalg.norm(w_cell, axis=2), axis=1)
    tnorm = tensor_norm(T.values)[:, 0]
    gsum = np.sum(np.linalg.norm(mesh.hat_gradients, axis=2), axis=1)

    from .discretization import _volume_rule, _eval_data

    bary, wq, pts = _volume_rule(mesh)
    fmax = np.max(np.linalg.norm(_eval_data(f, pts, space.n_components), axis=2), axis=1)

    per_cell = meas * (
        tnorm * gsum * osc_s * ((2.0 / k) * osc_w + (6.0 / k**2) * osc_s * wmax)
        + fmax * (2.0 / k) * osc_s * wmax
    )
    envelope = float(per_cell.sum())

    load = assemble_load(f, None, space, compat_tol=np.inf)
    r = internal_forces(T, space, kind) - load
    v_h = w.values * tau_k(s_nodal, k)[:, None]
    leakage = abs(float(r.ravel() @ v_h.ravel()))
    floor = 1e-13 * (1.0 + float(np.abs(load).sum()))
    return envelope + leakage + floor


def stress_quantile_ladder(T: CellTensorField,
                           quantiles: Sequence[float] = (0.5, 0.75, 0.9)) -> List[float]:
    """Truncation levels at the given quantiles of the cell stress magnitudes,
    plus one level strictly above the maximum (where truncation is inactive)."""
    mags = tensor_norm(T.values)[:, 0]
    ladder = [float(np.quantile(mags, q)) for q in quantiles]
    ladder.append(2.0 * float(mags.max()) + 1.0)
    return [max(lv, 1e-12) for lv in ladder]


# ---------------------------------------------------------------------------
# discrete maximal function


@dataclass
class SingularSupportMap:
    """Per-vertex concentration report.

    averages[v, i] is the mean of the scalar field over the mesh ball of
    radius radii[i] at vertex v; patch_average is the mean over the cells
    touching the vertex (the smallest resolvable "ball", always included in
    the max).  The growth exponent is the slope of -log(average) against
    log(radius); flags follow thresholds recorded in the decisions ledger.
    """

    radii: np.ndarray
    averages: np.ndarray
    patch_average: np.ndarray
    max_value: np.ndarray
    exponent: np.ndarray
    r_squared: np.ndarray
    flag: np.ndarray
    nearest_tag: np.ndarray
    is_boundary: np.ndarray

    def count(self, flag: str, interior_only: bool = False) -> int:
        sel = self.flag == flag
        if interior_only:
            sel &= ~self.is_boundary
        return int(np.sum(sel))


FLAG_CLEAN = "clean"
FLAG_SUSPICIOUS = "suspicious"
FLAG_CONCENTRATING = "concentrating"


def maximal_function(values, mesh: MeshDomain, radii: Sequence[float],
                     chunk: int = 512) -> SingularSupportMap:
    """Discrete maximal function of a nonnegative cell scalar over a radius ladder.

    ``values`` is one scalar per cell (a CellTensorField is reduced to its
    point norms).  Balls are approximated by the cells whose centroid lies
    within the radius; the radii must be strictly decreasing and the smallest
    at least twice the minimal cell diameter, otherwise the ball may be empty
    of centroids and the request is rejected as a configuration error.
    """
    if isinstance(values, CellTensorField):
        vals = tensor_norm(values.values)[:, 0]
    else:
        vals = np.asarray(values, dtype=float).reshape(-1)
    if vals.shape[0] != mesh.n_cells:
        raise InvalidInput("need one scalar per cell")
    if np.any(vals < 0.0):
        raise InvalidInput("maximal function expects nonnegative values")
    radii = np.asarray([float(r) for r in radii])
    if radii.size < 2 or np.any(np.diff(radii) >= 0.0):
        raise ConfigError("radius ladder must be strictly decreasing with >= 2 entries")
    if radii[-1] < 2.0 * mesh.min_diameter:
        raise ConfigError(
            f"smallest radius {radii[-1]:g} below resolvable scale "
            f"2*h_min = {2.0 * mesh.min_diameter:g}")

    cent = mesh.cell_centroids
    meas = mesh.cell_measures
    mv = meas * vals
    nv, nr = mesh.n_vertices, radii.size
    averages = np.empty((nv, nr))
    for lo in range(0, nv, chunk):
        hi = min(lo + chunk, nv)
        d2 = np.sum((mesh.vertices[lo:hi, None, :] - cent[None, :, :]) ** 2, axis=2)
        for i, r in enumerate(radii):
            mask = d2 <= r * r
            num = mask @ mv
            den = mask @ meas
            if np.any(den == 0.0):  # pragma: no cover - excluded by the radius guard
                raise ConfigError(f"radius {r:g} captures no cell centroid at some vertex")
            averages[lo:hi, i] = num / den

    patch_num = np.zeros(nv)
    patch_den = np.zeros(nv)
    for kk in range(mesh.dim + 1):
        np.add.at(patch_num, mesh.cells[:, kk], mv)
        np.add.at(patch_den, mesh.cells[:, kk], meas)
    patch = patch_num / patch_den

    max_value = np.maximum(averages.max(axis=1), patch)

    logr = np.log(radii)
    xc = logr - logr.mean()
    safe = np.maximum(averages, 1e-300)
    y = np.log(safe)
    yc = y - y.mean(axis=1, keepdims=True)
    denom = float(np.sum(xc * xc))
    slope = (yc @ xc) / denom
    ss_tot = np.sum(yc * yc, axis=1)
    ss_fit = slope**2 * denom
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(ss_tot > 0.0, ss_fit / ss_tot, 0.0)
    exponent = -slope
    degenerate = averages.min(axis=1) <= 0.0
    exponent[degenerate] = 0.0
    r2[degenerate] = 0.0

    flag = np.full(nv, FLAG_CLEAN, dtype=object)
    suspicious = (exponent > 0.1) & (r2 > 0.5)
    flag[suspicious] = FLAG_SUSPICIOUS
    if nr >= 4:
        conc = (exponent > 0.25) & (r2 > 0.9)
        flag[conc] = FLAG_CONCENTRATING

    fmid = mesh.vertices[mesh.facets].mean(axis=1)
    nearest = np.empty(nv, dtype=object)
    for lo in range(0, nv, chunk):
        hi = min(lo + chunk, nv)
        d2 = np.sum((mesh.vertices[lo:hi, None, :] - fmid[None, :, :]) ** 2, axis=2)
        nearest[lo:hi] = mesh.facet_tags[np.argmin(d2, axis=1)]
    is_b = np.zeros(nv, dtype=bool)
    is_b[mesh.boundary_vertices()] = True

    return SingularSupportMap(radii=radii, averages=averages, patch_average=patch,
                              max_value=max_value, exponent=exponent, r_squared=r2,
                              flag=flag, nearest_tag=nearest, is_boundary=is_b)


def default_radius_ladder(mesh: MeshDomain, n_radii: int = 5,
                          largest: Optional[float] = None) -> List[float]:
    """Strictly decreasing geometric ladder from ~domain scale down to 2*h_min."""
    lo = 2.0 * mesh.min_diameter
    if largest is None:
        span = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
        largest = 0.25 * float(np.max(span))
    if largest <= lo:
        largest = 4.0 * lo
    return list(np.geomspace(largest, lo, n_radii))


# ---------------------------------------------------------------------------
# boundary defect


@dataclass(frozen=True)
class BoundaryDefectEstimate:
    """Per-facet defect of the traction identity on the Neumann boundary.

    Each Neumann facet gets the bump test built from its vertices' hat
    functions (nodes on the Dirichlet closure are dropped; shared nodes are
    split 1/count so the family is a partition of unity over the Neumann
    nodes).  ``identically_absent`` is set when there is no Neumann boundary
    at all, in which case there is no defect object to estimate.
    """

    facet_indices: np.ndarray
    defects: np.ndarray
    total_variation: float
    identically_absent: bool


def boundary_defect(problem, T: CellTensorField) -> BoundaryDefectEstimate:
    """Estimate the boundary defect of a stress field for the given data.

    defect(facet) = |int f . w + int_GammaN g . w - int T : eps(w)| with the
    facet's bump w; at a converged discrete solution every bump is a linear
    combination of equilibrium test functions, so all defects vanish to
    solver precision, and a nonzero value signals non-attainment of the
    prescribed traction (or an unconverged/corrupted stress field).
    """
    mesh = problem.mesh
    nm = np.nonzero(mesh.facet_tags == NEUMANN)[0]
    if nm.size == 0:
        return BoundaryDefectEstimate(facet_indices=nm, defects=np.empty(0),
                                      total_variation=0.0, identically_absent=True)
    space = problem.space
    r = problem.load() - internal_forces(T, space, problem.kind)

    dir_nodes = set(mesh.boundary_vertices(DIRICHLET).tolist())
    counts = np.zeros(mesh.n_vertices)
    for fi in nm:
        for v in mesh.facets[fi]:
            counts[v] += 1.0
    defects = np.empty(nm.size)
    for j, fi in enumerate(nm):
        acc = np.zeros(space.n_components)
        for v in mesh.facets[fi]:
            if int(v) in dir_nodes:
                continue
            acc += r[v] / counts[v]
        defects[j] = float(np.linalg.norm(acc))
    return BoundaryDefectEstimate(facet_indices=nm, defects=defects,
                                  total_variation=float(defects.sum()),
                                  identically_absent=False)


# ---------------------------------------------------------------------------
# mollified direction fields


@dataclass
class DirectionFields:
    """Ball-averaged unit direction fields of strain and stress per epsilon.

    strain_dirs[i] and stress_dirs[i] are (n_cells, N, d) unit tensors (zero
    where the average has norm below 1e-12) at smoothing radius eps[i];
    pair_l1[i] is the measure-weighted L1 distance between the two.
    """

    eps: np.ndarray
    strain_dirs: np.ndarray
    stress_dirs: np.ndarray
    pair_l1: np.ndarray

    def successive_l1(self, mesh: MeshDomain, which: str = "stress") -> np.ndarray:
        fields = self.stress_dirs if which == "stress" else self.strain_dirs
        out = []
        for a, b in zip(fields, fields[1:]):
            diff = tensor_norm(a - b)
            out.append(float(np.sum(mesh.cell_measures * diff)))
        return np.asarray(out)


def direction_fields(T: CellTensorField, u: Field, eps_ladder: Sequence[float],
                     kind: str = "full", alpha: float = 1.0,
                     chunk: int = 512) -> DirectionFields:
    """Mollified directions of the strain (eps(u)/alpha) and the stress (T/|T|).

    Both fields are ball-averaged over cell centroids at each smoothing
    radius, then normalized to unit tensors (zero below 1e-12).  Radii must
    be at least twice the minimal cell diameter.
    """
    eps_ladder = np.asarray([float(e) for e in eps_ladder])
    if eps_ladder.size == 0:
        raise ConfigError("empty mollification ladder")
    if np.any(eps_ladder < 2.0 * T.mesh.min_diameter):
        raise ConfigError(
            f"mollification radius below resolvable scale 2*h_min = "
            f"{2.0 * T.mesh.min_diameter:g}")
    mesh = T.mesh
    E = gradient(u, kind)
    strain = E.values[:, 0] / alpha
    tn = tensor_norm(T.values[:, 0])
    with np.errstate(invalid="ignore", divide="ignore"):
        stress = np.where(tn[:, None, None] > 1e-12,
                          T.values[:, 0] / np.maximum(tn, 1e-300)[:, None, None], 0.0)

    cent = mesh.cell_centroids
    meas = mesh.cell_measures
    nc = mesh.n_cells
    shape = strain.shape[1:]
    m = int(np.prod(shape))
    sflat = (strain.reshape(nc, m) * meas[:, None])
    tflat = (stress.reshape(nc, m) * meas[:, None])

    strain_dirs = np.empty((eps_ladder.size, nc) + shape)
    stress_dirs = np.empty_like(strain_dirs)
    for lo in range(0, nc, chunk):
        hi = min(lo + chunk, nc)
        d2 = np.sum((cent[lo:hi, None, :] - cent[None, :, :]) ** 2, axis=2)
        for i, ep in enumerate(eps_ladder):
            mask = d2 <= ep * ep
            den = mask @ meas
            savg = (mask @ sflat) / den[:, None]
            tavg = (mask @ tflat) / den[:, None]
            strain_dirs[i, lo:hi] = _normalize(savg).reshape(-1, *shape)
            stress_dirs[i, lo:hi] = _normalize(tavg).reshape(-1, *shape)

    pair = np.array([float(np.sum(meas * tensor_norm(strain_dirs[i] - stress_dirs[i])))
                     for i in range(eps_ladder.size)])
    return DirectionFields(eps=eps_ladder, strain_dirs=strain_dirs,
                           stress_dirs=stress_dirs, pair_l1=pair)


def _normalize(flat: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(flat, axis=1)
    out = np.where(nrm[:, None] > 1e-12, flat / np.maximum(nrm, 1e-300)[:, None], 0.0)
    return out


# ---------------------------------------------------------------------------
# a-priori trace along the schedule


@dataclass
class AprioriTrace:
    """Per-index boundedness quantities of a continuation run.

    t_l1 = ||T^n||_1, t_holder = ||T^n||_{1+1/n}^{1+1/n} / n,
    strain_norm = ||strain(u^n)||_{n+1}, reg_l1 = ||reg(T^n, n)||_1.
    growth_flag is set when ||T^n||_1 grows by more than 10x along the run.
    """

    n: np.ndarray
    t_l1: np.ndarray
    t_holder: np.ndarray
    strain_norm: np.ndarray
    reg_l1: np.ndarray
    growth_flag: bool


def apriori_monitor(solutions: Sequence[ApproxSolution]) -> AprioriTrace:
    from .discretization import norms
    from .solver import regularization_term

    if len(solutions) == 0:
        raise InvalidInput("apriori_monitor needs at least one solution")
    ns = [s.n for s in solutions]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise InvalidInput("solutions must have strictly increasing index n")
    t_l1, t_h, s_n, r_l1 = [], [], [], []
    for s in solutions:
        n = s.n
        t_l1.append(norms(s.T, 1))
        t_h.append(norms(s.T, 1.0 + 1.0 / n) ** (1.0 + 1.0 / n) / n)
        s_n.append(norms(s.strain, n + 1))
        reg = s.T.with_values(regularization_term(s.T.values, n))
        r_l1.append(norms(reg, 1))
    t_l1 = np.asarray(t_l1)
    arr = t_l1[t_l1 > 0.0]
    growth = bool(arr.size and float(arr.max()) > 10.0 * float(arr.min()))
    trace = AprioriTrace(n=np.asarray(ns), t_l1=t_l1, t_holder=np.asarray(t_h),
                         strain_norm=np.asarray(s_n), reg_l1=np.asarray(r_l1),
                         growth_flag=growth)
    for name in ("t_l1", "t_holder", "strain_norm", "reg_l1"):
        vals = getattr(trace, name)
        if not np.all(np.isfinite(vals)) or np.any(vals < 0.0):
            raise InvalidInput(f"apriori trace entry {name} not finite and nonnegative")
    return trace
