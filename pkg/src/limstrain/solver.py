"""Regularized strain-limiting solves.

The exact constitutive relation ``grad u = D(T)`` pins the strain inside the
closed unit ball, so the stress is not a function of the strain and standard
displacement methods stall.  The regularized relation adds a small polynomial
term,

    E = D(T) + T / (n (1 + |T|^2)^((n-1)/(2n))),

which is a bijection from tensor space onto itself for every integer index
``n``; its inverse is evaluated pointwise and a damped Newton iteration
drives the discrete equilibrium residual to zero.  As ``n`` grows the extra
term vanishes like ``|T|/n`` on bounded stress sets, and a continuation sweep
over doubling indices tracks the limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import tensor_norm
from .discretization import (
    CellTensorField,
    FESpace,
    Field,
    MeshDomain,
    assemble_load,
    assemble_tangent,
    gradient,
    internal_forces,
)
from .errors import (
    CompatibilityError,
    ConfigError,
    InvalidInput,
    NumericalDegeneracy,
    OutOfRange,
    SolverError,
)
from .potentials import safety_strain_check

__all__ = [
    "regularization_term",
    "bn_matrix",
    "bn_form",
    "invert_relation",
    "relation_residual",
    "ApproxProblem",
    "ApproxSolution",
    "SolveReport",
    "solve_approx",
    "continuation_solve",
    "default_schedule",
]

_RHO_MAX = 1e300


def regularization_term(T: np.ndarray, n: int) -> np.ndarray:
    """The added term ``T / (n (1+|T|^2)^((n-1)/(2n)))``, elementwise over fields."""
    T = np.asarray(T, dtype=float)
    _check_index(n)
    s2 = np.sum(T**2, axis=(-2, -1), keepdims=True) if T.ndim >= 2 else T**2
    return T / (n * (1.0 + s2) ** ((n - 1.0) / (2.0 * n)))


def bn_matrix(T: np.ndarray, n: int) -> np.ndarray:
    """Derivative of the regularization term as an operator on vectorised tensors.

    For a tensor with m entries this is the m-by-m symmetric positive
    definite matrix ``c (I - ((n-1)/n) t t^T / (1+|t|^2))`` with
    ``c = 1/(n (1+|t|^2)^((n-1)/(2n)))``; batched over leading axes.
    """
    T = np.asarray(T, dtype=float)
    _check_index(n)
    if T.ndim < 2:
        raise InvalidInput("bn_matrix expects tensors with at least 2 axes")
    lead = T.shape[:-2]
    m = T.shape[-2] * T.shape[-1]
    t = T.reshape(lead + (m,))
    s2 = np.sum(t**2, axis=-1)
    c = 1.0 / (n * (1.0 + s2) ** ((n - 1.0) / (2.0 * n)))
    eye = np.broadcast_to(np.eye(m), lead + (m, m))
    outer = t[..., :, None] * t[..., None, :] / (1.0 + s2)[..., None, None]
    return c[..., None, None] * (eye - ((n - 1.0) / n) * outer)


def bn_form(T: np.ndarray, B: np.ndarray, n: int) -> np.ndarray:
    """Quadratic form ``B : (d reg/dT)[B]`` of the regularization derivative."""
    T = np.asarray(T, dtype=float)
    B = np.asarray(B, dtype=float)
    M = bn_matrix(T, n)
    b = B.reshape(B.shape[:-2] + (-1,))
    return np.einsum("...i,...ij,...j->...", b, M, b)


def _check_index(n) -> int:
    if int(n) != n or int(n) < 2:
        raise InvalidInput(f"regularization index must be an integer >= 2, got {n!r}")
    return int(n)


# ---------------------------------------------------------------------------
# inverting E = D(T) + reg(T, n)


def _reg_profile(rho: np.ndarray, n: int) -> np.ndarray:
    """Magnitude of the regularization term at stress magnitude rho, overflow safe."""
    rho = np.asarray(rho, dtype=float)
    big = rho > 1e100
    safe = np.where(big, 1.0, rho)
    out = safe / (n * (1.0 + safe**2) ** ((n - 1.0) / (2.0 * n)))
    if np.any(big):
        # rho^(1/n)/n, via logs so rho near 1e300 cannot overflow
        tail = np.exp(np.log(np.where(big, rho, 1.0)) / n) / n
        out = np.where(big, tail, out)
    return out


def _radial_invert(law, e: np.ndarray, n: int) -> np.ndarray:
    """Solve phi(rho) + reg_profile(rho) = e for rho >= 0 (vectorised bisection).

    The iteration runs in x = log1p(rho), which keeps the bracket tame out to
    rho ~ 1e300; 80 halvings resolve x to full double precision.
    """
    e = np.asarray(e, dtype=float)
    rho = np.zeros_like(e)
    active = e > 0.0
    if not np.any(active):
        return rho
    ea = e[active]

    def mval(x):
        r = np.expm1(x)
        return law.phi(r) + _reg_profile(r, n)

    x_hi_cap = np.log1p(_RHO_MAX)
    top = mval(np.full(ea.shape, x_hi_cap))
    if np.any(top < ea):
        worst = float(np.max(ea))
        raise NumericalDegeneracy(
            f"strain magnitude {worst:.6g} not representable at regularization "
            f"index n={n}: the inverse stress would exceed {_RHO_MAX:.1e}")
    x_lo = np.zeros(ea.shape)
    x_hi = np.full(ea.shape, x_hi_cap)
    for _ in range(80):
        x_mid = 0.5 * (x_lo + x_hi)
        above = mval(x_mid) >= ea
        x_hi = np.where(above, x_mid, x_hi)
        x_lo = np.where(above, x_lo, x_mid)
    rho[active] = np.expm1(0.5 * (x_lo + x_hi))
    return rho


def _generic_invert(law, E: np.ndarray, n: int, T_init=None) -> np.ndarray:
    """Pointwise damped Newton for non-radial laws, batched over leading axes."""
    E = np.asarray(E, dtype=float)
    lead = E.shape[:-2]
    m = E.shape[-2] * E.shape[-1]
    T = np.zeros_like(E) if T_init is None else np.array(T_init, dtype=float)
    res = law.D(T) + regularization_term(T, n) - E
    rnorm = tensor_norm(res)
    tol = 1e-12 * (1.0 + tensor_norm(E))
    for _ in range(100):
        if np.all(rnorm <= tol):
            break
        A = law.A_matrix(T)
        J = A + bn_matrix(T, n)
        delta = -np.linalg.solve(J, res.reshape(lead + (m,))[..., None])[..., 0]
        delta = delta.reshape(E.shape)
        step = np.ones(lead if lead else (1,))
        for _ in range(60):
            trial = T + step.reshape(lead + (1, 1)) * delta if lead else T + float(step) * delta
            new = law.D(trial) + regularization_term(trial, n) - E
            nnorm = tensor_norm(new)
            bad = nnorm > (1.0 - 1e-4 * step) * rnorm
            bad &= rnorm > tol
            if not np.any(bad):
                break
            step = np.where(bad, 0.5 * step, step)
        else:
            raise SolverError("pointwise relation inversion stalled", history=list(rnorm.ravel()))
        T = trial
        res = new
        rnorm = nnorm
    else:
        raise SolverError("pointwise relation inversion did not converge",
                          history=list(np.atleast_1d(rnorm).ravel()))
    return T


def invert_relation(law, E, n: int, T_init=None):
    """Invert ``E = D(T) + reg(T, n)`` pointwise.

    ``E`` may be a raw tensor array (any leading shape) or a
    :class:`CellTensorField`; the result matches the input type.  Radial laws
    use a scalar solve on the magnitude, anything else falls back to a
    batched tensor Newton iteration.
    """
    n = _check_index(n)
    if isinstance(E, CellTensorField):
        vals = invert_relation(law, E.values, n, T_init=T_init)
        return E.with_values(vals)
    E = np.asarray(E, dtype=float)
    if E.ndim < 2:
        raise InvalidInput("invert_relation expects tensors with at least 2 axes")
    if not np.all(np.isfinite(E)):
        raise InvalidInput("strain values must be finite")
    if getattr(law, "is_radial", False):
        e = tensor_norm(E)
        rho = _radial_invert(law, e, n)
        scale = np.where(e > 0.0, rho / np.where(e > 0.0, e, 1.0), 0.0)
        return E * scale[..., None, None]
    return _generic_invert(law, E, n, T_init=T_init)


def relation_residual(law, T, E, n: int) -> float:
    """Sup-norm defect ``max |D(T) + reg(T,n) - E|`` over all points."""
    Tv = T.values if isinstance(T, CellTensorField) else np.asarray(T, dtype=float)
    Ev = E.values if isinstance(E, CellTensorField) else np.asarray(E, dtype=float)
    defect = law.D(Tv) + regularization_term(Tv, _check_index(n)) - Ev
    return float(np.max(tensor_norm(defect))) if defect.size else 0.0


# ---------------------------------------------------------------------------
# problems and solutions


@dataclass
class ApproxProblem:
    """A strain-limited equilibrium problem on a tagged mesh.

    kind selects the strain measure: "full" uses the displacement gradient,
    "symmetric" its symmetric part (then n_components must equal the mesh
    dimension).  Data f (body force), g (surface traction on the Neumann
    part), and u0 (Dirichlet values / mean-value anchor) may each be None,
    a constant vector, a callable of coordinates, or a nodal Field.
    """

    law: object
    mesh: MeshDomain
    kind: str = "full"
    n_components: Optional[int] = None
    f: object = None
    g: object = None
    u0: object = None
    _cache: dict = dc_field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("full", "symmetric"):
            raise InvalidInput(f"unknown strain kind '{self.kind}'")
        ncomp = self.mesh.dim if self.n_components is None else int(self.n_components)
        if self.kind == "symmetric" and ncomp != self.mesh.dim:
            raise InvalidInput("symmetric strain needs n_components == mesh dimension")
        self.n_components = ncomp

    @property
    def space(self) -> FESpace:
        if "space" not in self._cache:
            self._cache["space"] = FESpace(self.mesh, self.n_components)
        return self._cache["space"]

    def load(self) -> np.ndarray:
        if "load" not in self._cache:
            self._cache["load"] = assemble_load(self.f, self.g, self.space)
        return self._cache["load"]

    def u0_field(self) -> Field:
        if "u0" not in self._cache:
            if isinstance(self.u0, Field):
                self._cache["u0"] = self.u0
            else:
                self._cache["u0"] = self.space.interpolate(self.u0)
        return self._cache["u0"]

    def boundary_strain(self) -> CellTensorField:
        return gradient(self.u0_field(), self.kind)

    def check_boundary_data(self, margin: float = 1e-6):
        """Safety check on the boundary datum: its strain must stay strictly
        inside the constitutive range for the limit problem to be meaningful."""
        return safety_strain_check(self.law, self.boundary_strain().values, margin=margin)


@dataclass
class SolveReport:
    n: int
    newton_iters: int
    final_residual: float
    damping_events: int
    residual_history: List[float]
    relation_defect: float
    regularization_l1: float
    converged: bool


@dataclass
class ApproxSolution:
    problem: ApproxProblem
    n: int
    u: Field
    T: CellTensorField
    report: SolveReport

    @property
    def strain(self) -> CellTensorField:
        return gradient(self.u, self.problem.kind)


def _lumped_mass(space: FESpace) -> np.ndarray:
    mesh = space.mesh
    node_mass = np.zeros(space.n_nodes)
    share = mesh.cell_measures / (mesh.dim + 1)
    for k in range(mesh.dim + 1):
        np.add.at(node_mass, mesh.cells[:, k], share)
    return np.repeat(node_mass, space.n_components)


def _kernel_basis(space: FESpace, kind: str) -> Optional[np.ndarray]:
    """M-orthonormal basis of the discrete strain kernel for pure-Neumann
    problems: constants per component, plus the in-plane rotation when the
    symmetric strain is used in 2D."""
    if space.mesh.has_dirichlet():
        return None
    Mdiag = _lumped_mass(space)
    cols = []
    for j in range(space.n_components):
        z = np.zeros((space.n_nodes, space.n_components))
        z[:, j] = 1.0
        cols.append(z.ravel())
    if kind == "symmetric" and space.mesh.dim == 2:
        x = space.mesh.vertices
        c = x.mean(axis=0)
        rot = np.stack([-(x[:, 1] - c[1]), x[:, 0] - c[0]], axis=1)
        cols.append(rot.ravel())
    Z = np.stack(cols, axis=1)
    for k in range(Z.shape[1]):  # Gram-Schmidt in the lumped-mass inner product
        for j in range(k):
            Z[:, k] -= (Z[:, j] @ (Mdiag * Z[:, k])) * Z[:, j]
        Z[:, k] /= np.sqrt(Z[:, k] @ (Mdiag * Z[:, k]))
    return Z


def solve_approx(
    problem: ApproxProblem,
    n: int,
    u_init: Optional[Field] = None,
    tol: float = 1e-10,
    max_iter: int = 60,
    max_halvings: int = 60,
) -> ApproxSolution:
    """Damped Newton solve of the regularized equilibrium at index ``n``.

    The residual is the discrete balance ``int T(grad u) : grad(phi) - load``
    over unconstrained degrees of freedom; convergence is declared at
    ``tol * (1 + ||load||)``.  Each rejected line-search trial (including
    trials whose strain is not representable at this index) halves the step;
    more than ``max_halvings`` halvings aborts with the residual history
    attached to the error.
    """
    n = _check_index(n)
    if n < problem.mesh.dim:
        raise InvalidInput(
            f"regularization index n={n} below mesh dimension {problem.mesh.dim}")
    space = problem.space
    load = problem.load()
    kind = problem.kind

    Z = _kernel_basis(space, kind)
    if Z is not None:
        moment = Z.T @ load.ravel()
        scale_l = np.abs(load).sum() + 1e-300
        if np.any(np.abs(moment) > 1e-9 * scale_l):
            raise CompatibilityError(
                "load has a component along the rigid kernel "
                f"(defect {np.max(np.abs(moment)):.3e}); pure-Neumann data must balance")
        Q, _ = np.linalg.qr(_lumped_mass(space)[:, None] * Z)

    u0f = problem.u0_field()
    u = u0f.copy() if u_init is None else u_init.copy()
    ddofs = space.dirichlet_dofs()
    if ddofs.size:
        flat = u.values.ravel()
        flat[ddofs] = u0f.values.ravel()[ddofs]
        u = Field(space, flat.reshape(u.values.shape))
    free = space.free_dofs()
    scale = 1.0 + float(np.linalg.norm(load.ravel()[free]))

    def project_kernel(v):
        return v - Q @ (Q.T @ v) if Z is not None else v

    def anchor(field_vals):
        # pin the kernel components of u to those of the boundary datum
        if Z is None:
            return field_vals
        Md = _lumped_mass(space)
        diff = field_vals.ravel() - u0f.values.ravel()
        coef = Z.T @ (Md * diff)
        return (field_vals.ravel() - Z @ coef).reshape(field_vals.shape)

    def residual_of(field: Field):
        E = gradient(field, kind)
        T = invert_relation(problem.law, E, n)
        r = internal_forces(T, space, kind) - load
        rfree = project_kernel(r.ravel())[free]
        return T, r, float(np.linalg.norm(rfree))

    u.values[:] = anchor(u.values)
    try:
        T, r_full, rnorm = residual_of(u)
    except (NumericalDegeneracy, OutOfRange) as exc:
        raise SolverError(f"initial state not evaluable: {exc}", history=[]) from exc

    history = [rnorm / scale]
    damping_events = 0
    iters = 0
    converged = rnorm <= tol * scale
    while not converged and iters < max_iter:
        iters += 1
        M = bn_matrix(T.values[:, 0], n) + problem.law.A_matrix(T.values[:, 0])
        Minv = np.linalg.inv(M)
        Minv = 0.5 * (Minv + np.transpose(Minv, (0, 2, 1)))
        K = assemble_tangent(Minv, space, kind)
        if Z is None:
            Kff = K[np.ix_(free, free)].tocsc()
            delta_free = spla.splu(Kff).solve(-project_kernel(r_full.ravel())[free])
            delta = np.zeros(space.n_dofs)
            delta[free] = delta_free
        else:
            MZ = _lumped_mass(space)[:, None] * Z
            bordered = sp.bmat([[K, sp.csc_matrix(MZ)],
                                [sp.csc_matrix(MZ.T), None]], format="csc")
            rhs = np.concatenate([-r_full.ravel(), np.zeros(Z.shape[1])])
            delta = spla.splu(bordered).solve(rhs)[: space.n_dofs]

        step = 1.0
        accepted = False
        for halving in range(max_halvings + 1):
            trial_vals = u.values + step * delta.reshape(u.values.shape)
            trial = Field(space, anchor(trial_vals))
            try:
                T_new, r_new, rnorm_new = residual_of(trial)
            except (NumericalDegeneracy, OutOfRange):
                step *= 0.5
                damping_events += 1
                continue
            if rnorm_new <= (1.0 - 1e-4 * step) * rnorm:
                accepted = True
                break
            step *= 0.5
            damping_events += 1
        if not accepted:
            raise SolverError(
                f"line search failed after {max_halvings} halvings at Newton "
                f"iteration {iters} (residual {rnorm / scale:.3e})",
                history=history)
        u, T, r_full, rnorm = trial, T_new, r_new, rnorm_new
        history.append(rnorm / scale)
        converged = rnorm <= tol * scale

    if not converged:
        raise SolverError(
            f"Newton did not reach tolerance {tol:g} in {max_iter} iterations "
            f"(residual {rnorm / scale:.3e})", history=history)

    E = gradient(u, kind)
    reg = regularization_term(T.values, n)
    reg_l1 = float(np.sum(T.weights[:, 0] * tensor_norm(reg)[:, 0]))
    report = SolveReport(
        n=n,
        newton_iters=iters,
        final_residual=rnorm / scale,
        damping_events=damping_events,
        residual_history=history,
        relation_defect=relation_residual(problem.law, T, E, n),
        regularization_l1=reg_l1,
        converged=True,
    )
    return ApproxSolution(problem=problem, n=n, u=u, T=T, report=report)


def default_schedule(dim: int, n_max: int = 256) -> List[int]:
    """Doubling index ladder ``dim * 2^k`` clipped below at 2 and above at n_max."""
    out = []
    n = max(2, dim)
    while n <= n_max:
        out.append(n)
        n *= 2
    if not out:
        raise ConfigError(f"empty schedule: n_max={n_max} below smallest valid index")
    return out


def continuation_solve(
    problem: ApproxProblem,
    schedule: Optional[Sequence[int]] = None,
    reg_tol: float = 1e-8,
    **solve_kw,
) -> List[ApproxSolution]:
    """Solve along an increasing ladder of regularization indices with warm starts.

    Stops early once the L1 mass of the regularization term drops below
    ``reg_tol * (1 + ||T||_L1)``.  A custom schedule must be a strictly
    increasing sequence of integers, each at least max(2, dim).
    """
    if schedule is None:
        schedule = default_schedule(problem.mesh.dim)
    schedule = [int(x) for x in schedule]
    lo = max(2, problem.mesh.dim)
    if any(b <= a for a, b in zip(schedule, schedule[1:])) or any(x < lo for x in schedule):
        raise ConfigError(
            f"schedule must be strictly increasing integers >= {lo}, got {schedule}")

    out: List[ApproxSolution] = []
    u_prev: Optional[Field] = None
    for n in schedule:
        sol = solve_approx(problem, n, u_init=u_prev, **solve_kw)
        out.append(sol)
        u_prev = sol.u
        t_l1 = float(np.sum(sol.T.weights[:, 0] * tensor_norm(sol.T.values)[:, 0]))
        if sol.report.regularization_l1 <= reg_tol * (1.0 + t_l1):
            break
    return out
