"""Convex variational forms of the limit problem and their duality gap.

Two convex functionals bracket the exact (unregularized) problem.  The
stress functional

    J(T) = int F(T) dx - int T : grad(u0) dx

is minimized over equilibrated stress fields, and the displacement
functional

    J*(u) = int F*(grad u) dx - int f.u dx - int_GammaN g.u dS

over displacements matching the boundary datum whose strain stays in the
closed constitutive range.  Young's inequality gives, for any admissible
pair,

    J*(u) + J(T) + int f.u0 + int_GammaN g.u0 >= 0,

with equality exactly at a solution pair; the left side is the duality gap
computed by :func:`duality_gap`, split into a pointwise Fenchel defect and
an equilibrium defect.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import tensor_norm
from .discretization import (
    DIRICHLET,
    CellTensorField,
    Field,
    assemble_tangent,
    gradient,
    internal_forces,
)
from .errors import DomainError, InvalidInput, OutOfRange, SolverError
from .potentials import (
    conjugate_Fstar,
    potential_F,
    potential_F_radial,
    conjugate_Fstar_radial,
    recession_Finf,
)
from .solver import ApproxProblem, _kernel_basis, _lumped_mass

__all__ = [
    "EnergyValue",
    "primal_energy",
    "dual_energy",
    "relaxed_dual_energy",
    "PrimalSolution",
    "minimize_primal",
    "vi_residual",
    "VIResult",
    "DualityReport",
    "duality_gap",
]


@dataclass(frozen=True)
class EnergyValue:
    """A possibly infinite energy; ``at_boundary`` marks strains that touched
    the closed range boundary within the law's margin."""

    value: float
    at_boundary: bool = False

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value))


def _F_values(law, tensors: np.ndarray) -> np.ndarray:
    """Pointwise potential F over an array of tensors."""
    if getattr(law, "is_radial", False):
        return potential_F_radial(law, tensor_norm(tensors))
    flat = tensors.reshape((-1,) + tensors.shape[-2:])
    return np.array([potential_F(law, t).value for t in flat]).reshape(tensors.shape[:-2])


def _Fstar_values(law, tensors: np.ndarray):
    """Pointwise conjugate potential; returns (values, any_at_boundary)."""
    margin = getattr(law, "margin", 1e-8)
    if getattr(law, "is_radial", False):
        b = tensor_norm(tensors)
        vals = conjugate_Fstar_radial(law, b)
        at_b = bool(np.any(np.abs(1.0 - b) <= margin))
        return vals, at_b
    flat = tensors.reshape((-1,) + tensors.shape[-2:])
    out = np.empty(len(flat))
    at_b = False
    for i, t in enumerate(flat):
        pv = conjugate_Fstar(law, t)
        out[i] = pv.value
        at_b = at_b or pv.at_boundary
    return out.reshape(tensors.shape[:-2]), at_b


def _cell_integral(weights: np.ndarray, point_values: np.ndarray) -> float:
    return float(np.sum(weights * point_values))


def primal_energy(problem: ApproxProblem, u: Field) -> EnergyValue:
    """Displacement energy ``J*(u)``; +inf when the strain leaves the closed range."""
    E = gradient(u, problem.kind)
    vals, at_b = _Fstar_values(problem.law, E.values)
    if not np.all(np.isfinite(vals)):
        return EnergyValue(np.inf, at_boundary=True)
    bulk = _cell_integral(E.weights, vals.reshape(E.weights.shape))
    work = float(problem.load().ravel() @ u.flat())
    return EnergyValue(bulk - work, at_boundary=at_b)


def dual_energy(problem: ApproxProblem, T: CellTensorField) -> EnergyValue:
    """Stress energy ``J(T) = int F(T) - int T : grad(u0)``."""
    vals = _F_values(problem.law, T.values)
    bulk = _cell_integral(T.weights, vals)
    E0 = problem.boundary_strain()
    pairing = float(np.sum(T.weights * np.sum(T.values * E0.values, axis=(-2, -1))))
    return EnergyValue(bulk - pairing)


def relaxed_dual_energy(
    problem: ApproxProblem,
    T: CellTensorField,
    singular_facets: Optional[np.ndarray] = None,
    singular_masses: Optional[np.ndarray] = None,
    singular_directions: Optional[np.ndarray] = None,
) -> EnergyValue:
    """Stress energy extended to measures with a boundary-concentrated
    singular part.

    The singular part is a sum of facet-supported measures: for facet index
    ``k`` a mass ``m_k >= 0`` in the unit direction ``U_k``.  Its energy
    contribution is the recession slope in that direction times the mass,
    minus the pairing of the measure with the boundary strain.  Singular
    mass on a Dirichlet facet is rejected with :class:`DomainError`: the
    relaxation only admits concentration where the traction is prescribed.
    """
    base = dual_energy(problem, T)
    if singular_facets is None or len(np.atleast_1d(singular_facets)) == 0:
        return base
    mesh = problem.mesh
    fidx = np.atleast_1d(np.asarray(singular_facets, dtype=int))
    masses = np.atleast_1d(np.asarray(singular_masses, dtype=float))
    dirs = np.asarray(singular_directions, dtype=float).reshape(
        (len(fidx), problem.n_components, mesh.dim))
    if np.any(masses < 0.0):
        raise InvalidInput("singular masses must be nonnegative")
    tags = mesh.facet_tags[fidx]
    if np.any(tags == DIRICHLET):
        bad = fidx[tags == DIRICHLET]
        raise DomainError(
            f"singular stress mass on Dirichlet facet(s) {bad.tolist()}; "
            "concentration is only admissible on the traction boundary")
    total = base.value
    E0 = problem.boundary_strain()
    # trace of the (cellwise-constant) boundary strain on each singular facet,
    # taken from an adjacent cell
    adj = _facet_to_cell(mesh)
    for k, m, U in zip(fidx, masses, dirs):
        nu = float(tensor_norm(U))
        if not np.isclose(nu, 1.0, atol=1e-10):
            raise InvalidInput("singular directions must be unit tensors")
        slope = recession_Finf(problem.law, U)
        e0 = E0.values[adj[k], 0]
        total += m * (slope - float(np.sum(U * e0)))
    return EnergyValue(total, at_boundary=base.at_boundary)


def _facet_to_cell(mesh) -> np.ndarray:
    """Index of one cell adjacent to each boundary facet."""
    lookup = {}
    nloc = mesh.dim + 1
    for ci, c in enumerate(mesh.cells):
        for k in range(nloc):
            f = tuple(sorted(int(v) for i, v in enumerate(c) if i != k))
            lookup[f] = ci
    return np.array([lookup[tuple(sorted(int(v) for v in f))] for f in mesh.facets])


# ---------------------------------------------------------------------------
# direct minimization of the displacement functional


@dataclass
class PrimalSolution:
    u: Field
    T: CellTensorField
    objective: float
    grad_norm: float
    iters: int
    history: List[float]


def minimize_primal(
    problem: ApproxProblem,
    u_init: Optional[Field] = None,
    feas_margin: float = 1e-12,
    grad_tol: float = 1e-8,
    max_iter: int = 200,
    max_halvings: int = 60,
) -> PrimalSolution:
    """Minimize ``J*`` by a feasible-interior damped Newton method.

    Iterates keep every cell strain strictly inside the unit range: each
    Newton direction is capped at the largest step for which
    ``|E + t dE| <= 1 - feas_margin`` holds cellwise (a scalar quadratic per
    cell), then backtracks under an Armijo decrease test on the objective.
    Convergence is declared when the projected gradient drops below
    ``grad_tol * (1 + ||load||_inf)``.  The boundary datum must itself be
    strictly feasible.
    """
    law = problem.law
    space = problem.space
    kind = problem.kind
    load = problem.load()
    u0f = problem.u0_field()
    free = space.free_dofs()
    Z = _kernel_basis(space, kind)
    if Z is not None:
        Q, _ = np.linalg.qr(_lumped_mass(space)[:, None] * Z)

    u = (u0f if u_init is None else u_init).copy()
    ddofs = space.dirichlet_dofs()
    if ddofs.size:
        flat = u.values.ravel()
        flat[ddofs] = u0f.values.ravel()[ddofs]
        u = Field(space, flat.reshape(u.values.shape))

    def strain_sup(field):
        return float(np.max(gradient(field, kind).point_norms))

    if strain_sup(u) >= 1.0 - feas_margin:
        raise InvalidInput(
            "starting displacement is not strictly feasible: its strain reaches "
            "the range boundary; provide admissible boundary data or u_init")

    def objective_of(field: Field):
        E = gradient(field, kind)
        vals, _ = _Fstar_values(law, E.values)
        vals = vals.reshape(E.weights.shape)
        if not np.all(np.isfinite(vals)):
            return np.inf, E
        return _cell_integral(E.weights, vals) - float(load.ravel() @ field.flat()), E

    def project_kernel(v):
        return v - Q @ (Q.T @ v) if Z is not None else v

    obj, E = objective_of(u)
    history = [obj]
    gnorm = np.inf
    gscale = 1.0 + float(np.max(np.abs(load))) if load.size else 1.0
    iters = 0
    while iters < max_iter:
        T = invert_relation_exact(law, E)
        grad_full = internal_forces(T, space, kind) - load
        gfree = project_kernel(grad_full.ravel())[free]
        gnorm = float(np.max(np.abs(gfree))) if gfree.size else 0.0
        if gnorm <= grad_tol * gscale:
            break
        iters += 1
        A = law.A_matrix(T.values[:, 0])
        H = np.linalg.inv(A)
        H = 0.5 * (H + np.transpose(H, (0, 2, 1)))
        K = assemble_tangent(H, space, kind)
        if Z is None:
            Kff = K[np.ix_(free, free)].tocsc()
            dfree = spla.splu(Kff).solve(-gfree)
            delta = np.zeros(space.n_dofs)
            delta[free] = dfree
        else:
            MZ = _lumped_mass(space)[:, None] * Z
            bordered = sp.bmat([[K, sp.csc_matrix(MZ)],
                                [sp.csc_matrix(MZ.T), None]], format="csc")
            rhs = np.concatenate([-grad_full.ravel(), np.zeros(Z.shape[1])])
            delta = spla.splu(bordered).solve(rhs)[: space.n_dofs]

        dE = gradient(Field(space, delta.reshape(u.values.shape)), kind)
        cap = _feasible_step(E.values, dE.values, 1.0 - feas_margin)
        slope = float(gfree @ project_kernel(delta)[free])
        step = min(1.0, 0.99 * cap)
        accepted = False
        for _ in range(max_halvings + 1):
            trial = Field(space, u.values + step * delta.reshape(u.values.shape))
            try:
                new_obj, new_E = objective_of(trial)
            except OutOfRange:
                step *= 0.5
                continue
            if np.isfinite(new_obj) and new_obj <= obj + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise SolverError(
                f"primal line search failed at iteration {iters} "
                f"(gradient {gnorm:.3e})", history=history)
        u, obj, E = trial, new_obj, new_E
        history.append(obj)
    else:
        raise SolverError(
            f"primal Newton did not reach gradient tolerance {grad_tol:g} "
            f"in {max_iter} iterations (gradient {gnorm:.3e})", history=history)

    T = invert_relation_exact(law, E)
    return PrimalSolution(u=u, T=T, objective=obj, grad_norm=gnorm,
                          iters=iters, history=history)


def invert_relation_exact(law, E: CellTensorField) -> CellTensorField:
    """Stress field ``D^{-1}(E)`` for strains strictly inside the range."""
    from .constitutive import invert_D

    vals = invert_D(law, E.values)
    return E.with_values(vals)


def _feasible_step(E: np.ndarray, dE: np.ndarray, radius: float) -> float:
    """Largest t with ``|E + t dE| <= radius`` at every point (E strictly inside)."""
    a = np.sum(dE**2, axis=(-2, -1)).ravel()
    b = np.sum(E * dE, axis=(-2, -1)).ravel()
    c = (np.sum(E**2, axis=(-2, -1)) - radius**2).ravel()
    t = np.full(a.shape, np.inf)
    mask = a > 0.0
    disc = np.sqrt(np.maximum(b[mask] ** 2 - a[mask] * c[mask], 0.0))
    t[mask] = (-b[mask] + disc) / a[mask]
    tmin = float(np.min(t)) if t.size else np.inf
    return max(tmin, 0.0)


# ---------------------------------------------------------------------------
# variational inequality and duality gap


@dataclass(frozen=True)
class VIResult:
    """Outcome of one variational-inequality test.

    ``violation`` is the amount by which the inequality fails (nonpositive
    means satisfied); when the comparison field is inadmissible the test is
    skipped and ``note`` says why.
    """

    violation: Optional[float]
    admissible: bool
    note: str = ""


def vi_residual(problem: ApproxProblem, T: CellTensorField, u: Field,
                v: Field, tol: float = 1e-9) -> VIResult:
    """Test ``int T : grad(u - v) <= load(u - v)`` for one comparison field v.

    A solution stress satisfies this for every admissible v (strain in the
    closed range, boundary values matching the datum).  Inadmissible v gives
    a skipped result, not an error.
    """
    sup_v = float(np.max(gradient(v, problem.kind).point_norms))
    if sup_v > 1.0 + 1e-10:
        return VIResult(None, False, f"comparison strain |E|={sup_v:.6g} outside closed range")
    dn = problem.space.dirichlet_nodes()
    if dn.size:
        u0v = problem.u0_field().values
        dev = float(np.max(np.abs(v.values[dn] - u0v[dn])))
        if dev > 1e-10:
            return VIResult(None, False,
                            f"comparison field deviates from boundary datum by {dev:.3g}")
    diff = u.values - v.values
    Ed = gradient(Field(problem.space, diff), problem.kind)
    lhs = float(np.sum(T.weights * np.sum(T.values * Ed.values, axis=(-2, -1))))
    rhs = float(problem.load().ravel() @ diff.ravel())
    return VIResult(violation=lhs - rhs, admissible=True)


@dataclass(frozen=True)
class DualityReport:
    gap: float
    fenchel_defect: float
    equilibrium_defect: float
    primal_value: float
    dual_value: float
    finite: bool


def duality_gap(problem: ApproxProblem, u: Field, T: CellTensorField) -> DualityReport:
    """Duality gap of an admissible pair, with its two-part split.

    gap = J*(u) + J(T) + int f.u0 + int_GammaN g.u0
        = int [F(T) + F*(grad u) - T : grad u] dx        (Fenchel defect)
        + int T : grad(u - u0) dx - load(u - u0)         (equilibrium defect)

    Both parts vanish exactly at a solution pair; the Fenchel defect is
    pointwise nonnegative for strains in the closed range.
    """
    E = gradient(u, problem.kind)
    fstar, _ = _Fstar_values(problem.law, E.values)
    fstar = fstar.reshape(E.weights.shape)
    fvals = _F_values(problem.law, T.values).reshape(T.weights.shape)
    pairing = np.sum(T.values * E.values, axis=(-2, -1))
    fen = float(np.sum(T.weights * (fvals + fstar - pairing)))

    u0f = problem.u0_field()
    diff = u.values - u0f.values
    Ed = gradient(Field(problem.space, diff), problem.kind)
    work = float(problem.load().ravel() @ diff.ravel())
    eq = float(np.sum(T.weights * np.sum(T.values * Ed.values, axis=(-2, -1)))) - work

    jstar = primal_energy(problem, u)
    jdual = dual_energy(problem, T)
    anchor = float(problem.load().ravel() @ u0f.flat())
    gap = jstar.value + jdual.value + anchor
    return DualityReport(
        gap=gap,
        fenchel_defect=fen,
        equilibrium_defect=eq,
        primal_value=jstar.value,
        dual_value=jdual.value,
        finite=bool(np.isfinite(gap)),
    )
