"""Truncation machinery, renormalized residuals, the discrete maximal
function, boundary defects, and direction fields."""

import numpy as np
import pytest
from scipy.integrate import quad

from limstrain.cli import interior_bump
from limstrain.constitutive import PrototypeLaw, tensor_norm
from limstrain.diagnostics import (
    G_k,
    apriori_monitor,
    boundary_defect,
    default_radius_ladder,
    direction_fields,
    dtau_k,
    equilibrium_residual,
    htilde,
    maximal_function,
    renorm_residual,
    stress_quantile_ladder,
    tau_k,
)
from limstrain.discretization import (
    FESpace,
    build_structured_mesh,
    gradient,
    refine_uniform,
)
from limstrain.errors import ConfigError, InvalidInput
from limstrain.solver import ApproxProblem, solve_approx


def test_tau_k_plateau_and_midpoint():
    for k in (0.5, 1.0, 7.0):
        assert tau_k(0.5 * k, k) == 1.0
        assert tau_k(k, k) == 1.0
        assert tau_k(2.0 * k, k) == 0.0
        assert tau_k(3.0 * k, k) == 0.0
        assert tau_k(1.5 * k, k) == pytest.approx(0.5, abs=1e-15)


def test_tau_k_slope_bound():
    k = 2.0
    s = np.linspace(0.0, 3.0 * k, 4001)
    d = dtau_k(s, k)
    assert np.all(np.abs(d) <= 2.0 / k + 1e-15)
    assert np.all(d <= 0.0)
    # consistent with a finite-difference of tau
    fd = np.gradient(tau_k(s, k), s)
    assert np.max(np.abs(fd - d)) < 1e-2


def test_G_k_support_and_exact_value():
    law = PrototypeLaw(a=2.0)
    assert G_k(0.9, 1.0, law.g_weight) == 0.0
    assert G_k(1.0, 1.0, law.g_weight) == 0.0
    # g == 1: integral of tau' alone telescopes to -1
    one = np.vectorize(lambda t: 1.0)
    assert G_k(5.0, 1.0, one) == pytest.approx(-1.0, abs=1e-12)
    assert G_k(2.0, 1.0, one) == pytest.approx(-1.0, abs=1e-12)


def test_G_k_against_riemann_oracle():
    law = PrototypeLaw(a=2.0)
    val = G_k(2.0, 1.0, law.g_weight)
    t = np.linspace(1.0, 2.0, 10_001)
    mid = 0.5 * (t[1:] + t[:-1])
    riemann = float(np.sum(law.g_weight(mid) * dtau_k(mid, 1.0) * np.diff(t)))
    assert val == pytest.approx(riemann, abs=1e-6)
    assert val < 0.0


def test_G_k_growth_bound():
    law05 = PrototypeLaw(a=0.5)
    C = 2.0 * max(law05.C2, law05.uhlenbeck_constant)
    for k in (0.1, 1.0, 10.0, 100.0):
        val = G_k(10.0 * k, k, law05.g_weight)
        assert abs(val) <= C * (1.0 + k)


def test_htilde_monotone_bounded():
    law = PrototypeLaw(a=2.0)
    vals = [htilde(law, s) for s in (0.0, 0.5, 1.0, 10.0, 100.0)]
    assert vals[0] == 0.0
    assert all(b > a for a, b in zip(vals, vals[1:]))
    full, _ = quad(lambda t: law.h(t) / (1.0 + t) ** 2, 0.0, np.inf, limit=200)
    assert vals[-1] < full + 1e-10
    with pytest.raises(InvalidInput):
        htilde(law, -1.0)


def test_renorm_requires_interior_test_field(problem_2d, solutions_2d):
    s = solutions_2d[-1]
    space = problem_2d.space
    w_bad = space.interpolate((1.0, 0.0))
    with pytest.raises(InvalidInput):
        renorm_residual(s.T, problem_2d.f, w_bad, 1.0)


def test_renorm_exact_equality_above_max(problem_2d, solutions_2d):
    s = solutions_2d[-1]
    w = interior_bump(problem_2d.space)
    kmax = 2.0 * float(np.max(tensor_norm(s.T.values))) + 1.0
    rep = renorm_residual(s.T, problem_2d.f, w, kmax)
    # inactive truncation: same code path, all factors exactly 1.0
    assert rep.residual == rep.equilibrium_residual
    assert rep.transport_magnitude == 0.0
    assert rep.equilibrium_residual == equilibrium_residual(s.T, problem_2d.f, w)
    assert rep.equilibrium_residual < 1e-8 * (1.0 + float(np.abs(problem_2d.load()).sum()))


def test_renorm_ladder_within_tolerance(problem_2d, solutions_2d):
    s = solutions_2d[-1]
    w = interior_bump(problem_2d.space)
    ladder = stress_quantile_ladder(s.T)
    assert len(ladder) == 4  # three quantiles plus the above-max level
    for k in ladder:
        rep = renorm_residual(s.T, problem_2d.f, w, k)
        assert rep.residual <= rep.quad_tolerance, f"k={k}"
        assert rep.quad_tolerance > 0.0


def test_renorm_constant_stress_has_no_transport(problem_2d):
    mesh = problem_2d.mesh
    space = problem_2d.space
    w = interior_bump(space)
    from limstrain.discretization import centroid_rule

    wts, pts = centroid_rule(mesh)
    const = np.broadcast_to(np.array([[0.3, 0.0], [0.0, -0.1]]),
                            (mesh.n_cells, 1, 2, 2)).copy()
    from limstrain.discretization import CellTensorField

    T = CellTensorField(mesh, const, wts, pts)
    k = 0.2  # below |T| = const: tau is a constant factor < 1
    rep = renorm_residual(T, problem_2d.f, w, k)
    assert rep.transport_magnitude == 0.0
    tau = tau_k(float(tensor_norm(const[0, 0])), k)
    assert 0.0 < tau < 1.0
    assert rep.residual == pytest.approx(tau * rep.equilibrium_residual, rel=1e-12)


def test_maximal_function_constant_field():
    mesh = build_structured_mesh("rectangle", (8, 8), dirichlet=("left",))
    vals = np.full(mesh.n_cells, 3.25)
    smap = maximal_function(vals, mesh, default_radius_ladder(mesh))
    assert np.allclose(smap.max_value, 3.25)
    assert np.allclose(smap.patch_average, 3.25)
    assert np.max(np.abs(smap.exponent)) < 1e-12
    assert all(f == "clean" for f in smap.flag)
    assert smap.count("concentrating") == 0


def test_maximal_function_validates_radii():
    mesh = build_structured_mesh("rectangle", (8, 8), dirichlet=("left",))
    vals = np.ones(mesh.n_cells)
    with pytest.raises(ConfigError):
        maximal_function(vals, mesh, [0.1, 0.2])  # increasing
    with pytest.raises(ConfigError):
        maximal_function(vals, mesh, [0.5, 0.01])  # below 2 h_min
    with pytest.raises(InvalidInput):
        maximal_function(-vals, mesh, [0.5, 0.3])


def test_maximal_function_singular_profile():
    """Sampled |x - x0|^(-1/2): the exact ball average around x0 is
    (4/3) r^(-1/2), so the fitted exponent approaches 1/2 and the vertex
    is flagged."""
    mesh = build_structured_mesh("rectangle", (8, 8), dirichlet=("left",))
    for _ in range(3):
        mesh = refine_uniform(mesh)
    x0 = np.array([0.5, 0.5])
    d = np.linalg.norm(mesh.cell_centroids - x0, axis=1)
    vals = d ** -0.5
    radii = default_radius_ladder(mesh)
    smap = maximal_function(vals, mesh, radii)
    v0 = int(np.argmin(np.linalg.norm(mesh.vertices - x0, axis=1)))

    assert smap.flag[v0] == "concentrating"
    assert smap.exponent[v0] == pytest.approx(0.5, abs=0.05)
    assert smap.r_squared[v0] > 0.99
    for r, avg in zip(radii, smap.averages[v0]):
        assert avg == pytest.approx((4.0 / 3.0) * r ** -0.5, rel=0.15)
    # the maximal value dominates the patch average by construction
    assert np.all(smap.max_value >= smap.patch_average - 1e-12)
    assert not smap.is_boundary[v0]
    assert smap.nearest_tag[v0] in ("dirichlet", "neumann")


def test_default_radius_ladder_properties():
    mesh = build_structured_mesh("rectangle", (16, 16), dirichlet=("left",))
    radii = default_radius_ladder(mesh)
    assert all(b < a for a, b in zip(radii, radii[1:]))
    assert radii[-1] >= 2.0 * mesh.min_diameter - 1e-15


def test_boundary_defect_cases(law_a2):
    mesh = build_structured_mesh("rectangle", (4, 4), dirichlet=("left",))
    prob = ApproxProblem(law=law_a2, mesh=mesh, kind="full", f=(0.1, 0.0))
    sol = solve_approx(prob, n=16)

    bd = boundary_defect(prob, sol.T)
    assert not bd.identically_absent
    assert bd.total_variation < 1e-10

    corrupted = sol.T.with_values(2.0 * sol.T.values)
    bd2 = boundary_defect(prob, corrupted)
    assert bd2.total_variation > 1e-3
    assert np.all(bd2.defects >= 0.0)

    all_dirichlet = build_structured_mesh("rectangle", (4, 4), dirichlet="all")
    prob3 = ApproxProblem(law=law_a2, mesh=all_dirichlet, kind="full", f=(0.1, 0.0))
    sol3 = solve_approx(prob3, n=8)
    bd3 = boundary_defect(prob3, sol3.T)
    assert bd3.identically_absent
    assert bd3.total_variation == 0.0
    assert bd3.facet_indices.size == 0


def test_direction_fields_aligned_constant(law_a2):
    # stress proportional to a fixed unit tensor everywhere: both mollified
    # direction fields reproduce it at every radius
    mesh = build_structured_mesh("rectangle", (8, 8), dirichlet=("left",))
    space = FESpace(mesh, n_components=2)
    U = np.array([[1.0, 0.0], [0.0, 0.0]])
    u = space.interpolate(lambda x: np.stack([0.5 * x[:, 0], np.zeros(len(x))], axis=1))
    E = gradient(u, "full")
    T = E.with_values(np.broadcast_to(0.5 * U, E.values.shape).copy())
    h = mesh.min_diameter
    out = direction_fields(T, u, [8 * h, 4 * h, 2 * h])
    for i in range(3):
        assert np.max(tensor_norm(out.stress_dirs[i] - U)) < 1e-12
        assert np.max(tensor_norm(out.strain_dirs[i] - U)) < 1e-12
        assert out.pair_l1[i] < 1e-12
    succ = out.successive_l1(mesh, "stress")
    assert np.max(np.abs(succ)) < 1e-12
    with pytest.raises(ConfigError):
        direction_fields(T, u, [h])


def test_apriori_monitor_validation_and_growth(solutions_1d):
    trace = apriori_monitor(solutions_1d)
    assert list(trace.n) == [4, 8, 16, 32, 64]
    assert not trace.growth_flag
    assert all(np.isfinite(trace.t_holder))

    with pytest.raises(InvalidInput):
        apriori_monitor([])
    with pytest.raises(InvalidInput):
        apriori_monitor([solutions_1d[1], solutions_1d[0]])


def test_stress_quantile_ladder(solutions_1d):
    T = solutions_1d[-1].T
    ladder = stress_quantile_ladder(T, (0.5, 0.9))
    mags = tensor_norm(T.values)[:, 0]
    assert ladder[0] == pytest.approx(np.quantile(mags, 0.5))
    assert ladder[-1] > float(mags.max())
