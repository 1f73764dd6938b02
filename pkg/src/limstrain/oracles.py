"""Independent reference computations used to cross-check the solvers.

Nothing here shares numerics with the main code paths: the 1D solution is
written down in closed form and integrated by adaptive quadrature, and the
tiny-mesh minimizer is an exhaustive grid search over nodal values.  Tests
compare solver output against these, never the other way around.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np
from scipy.integrate import quad

from .errors import InvalidInput, OracleFailure
from .discretization import Field
from .variational import primal_energy

__all__ = [
    "Oracle1DSolution",
    "oracle_1d",
    "BruteForceResult",
    "brute_force_primal",
]


@dataclass
class Oracle1DSolution:
    """Closed-form 1D mixed-boundary solution.

    With a constant body force c on (0, 1), a displacement value at the left
    end and a traction g1 at the right end, the stress is statically
    determinate: T(x) = g1 + c(1 - x).  The displacement follows by
    integrating the constitutive map along x.
    """

    T_exact: Callable[[np.ndarray], np.ndarray]
    u_exact: Callable[[np.ndarray], np.ndarray]
    params: Dict[str, float]


def oracle_1d(law, f_const: float, dirichlet_left: float = 0.0,
              neumann_right: float = 0.0) -> Oracle1DSolution:
    """Reference solution of the 1D problem on (0, 1).

    The displacement is ``u(x) = u_left + int_0^x D(T(s)) ds`` with the
    integral done by adaptive quadrature to 1e-12 absolute accuracy.
    """
    c = float(f_const)
    g1 = float(neumann_right)
    u_left = float(dirichlet_left)

    def T_exact(x):
        x = np.asarray(x, dtype=float)
        out = g1 + c * (1.0 - x)
        return out if out.ndim else float(out)

    def d_scalar(t: float) -> float:
        return float(law.D(np.array([[t]]))[0, 0])

    def u_exact(x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty(xs.shape)
        for i, xi in enumerate(xs.ravel()):
            val, _ = quad(lambda s: d_scalar(T_exact(s)), 0.0, float(xi),
                          epsabs=1e-12, epsrel=1e-12, limit=200)
            out.ravel()[i] = u_left + val
        return out if np.asarray(x).ndim else float(out[0])

    return Oracle1DSolution(T_exact=T_exact, u_exact=u_exact,
                            params={"c": c, "g1": g1, "u_left": u_left})


@dataclass
class BruteForceResult:
    u: Field
    value: float
    grid_step: float
    n_free: int


def brute_force_primal(problem, grid_resolution: int = 7, halfwidth: float = 0.5,
                       max_points: int = 2_000_000) -> BruteForceResult:
    """Exhaustive grid minimization of the displacement functional.

    Every free degree of freedom ranges over ``grid_resolution`` equispaced
    values in a box of the given halfwidth around the boundary-datum
    extension; the full Cartesian product is evaluated.  Only meshes with at
    most 6 free values are accepted (the cost is exponential).  If no grid
    point is feasible the search reports an oracle failure.
    """
    space = problem.space
    free = space.free_dofs()
    k = len(free)
    if k > 6:
        raise InvalidInput(f"brute force limited to 6 free values, got {k}")
    if k == 0:
        raise InvalidInput("no free values to optimize")
    if grid_resolution < 2:
        raise InvalidInput("grid resolution must be >= 2")
    total = grid_resolution**k
    if total > max_points:
        raise InvalidInput(f"grid has {total} points, above cap {max_points}")

    base = problem.u0_field().flat().copy()
    axes = [np.linspace(base[d] - halfwidth, base[d] + halfwidth, grid_resolution)
            for d in free]
    mesh_axes = np.meshgrid(*axes, indexing="ij")
    candidates = np.stack([m.ravel() for m in mesh_axes], axis=1)  # (total, k)

    best_val = np.inf
    best = None
    vals_shape = (space.n_nodes, space.n_components)
    for row in candidates:
        flat = base.copy()
        flat[free] = row
        cand = Field(space, flat.reshape(vals_shape))
        e = primal_energy(problem, cand)
        if e.value < best_val:
            best_val = e.value
            best = cand
    if best is None or not np.isfinite(best_val):
        raise OracleFailure(
            "no feasible grid point: every candidate strain leaves the range; "
            "shrink the halfwidth or refine the grid")
    step = 2.0 * halfwidth / (grid_resolution - 1)
    return BruteForceResult(u=best, value=float(best_val), grid_step=step, n_free=k)
