"""Meshes, P1 spaces, quadrature exactness, norms, and the field file formats."""

import numpy as np
import pytest

from limstrain.discretization import (
    DIRICHLET,
    NEUMANN,
    CellTensorField,
    FESpace,
    Field,
    assemble_load,
    build_structured_mesh,
    field_max,
    gradient,
    korn_constant,
    norms,
    refine_uniform,
)
from limstrain.errors import CompatibilityError, ConfigError, InvalidInput
from limstrain.formats import (
    read_field,
    read_mesh,
    read_tensor_field,
    write_field,
    write_mesh,
    write_tensor_field,
)


def test_interval_mesh_counts():
    mesh = build_structured_mesh("interval", 4, dirichlet=("left",))
    assert mesh.dim == 1
    assert mesh.n_vertices == 5
    assert mesh.n_cells == 4
    assert mesh.facets.shape[0] == 2
    assert np.sum(mesh.facet_tags == DIRICHLET) == 1
    assert np.sum(mesh.facet_tags == NEUMANN) == 1
    assert mesh.cell_measures.sum() == pytest.approx(1.0)


def test_rectangle_mesh_counts():
    mesh = build_structured_mesh("rectangle", (2, 3), dirichlet=("left", "top"))
    assert mesh.n_vertices == 12
    assert mesh.n_cells == 12
    assert mesh.cell_measures.sum() == pytest.approx(1.0)
    assert np.all(mesh.cell_measures > 0.0)
    # left edge contributes 3 facets, top edge 2
    assert np.sum(mesh.facet_tags == DIRICHLET) == 5


def test_l_shape_mesh():
    mesh = build_structured_mesh("l_shape", 2, dirichlet=("left",))
    assert mesh.n_cells == 24  # 6 * res^2 triangles
    assert mesh.n_vertices == 21
    assert mesh.cell_measures.sum() == pytest.approx(0.75)
    # the reentrant corner is a mesh vertex
    corner = np.min(np.linalg.norm(mesh.vertices - [0.5, 0.5], axis=1))
    assert corner == 0.0
    # no vertex in the removed open quadrant
    assert not np.any((mesh.vertices[:, 0] > 0.5 + 1e-12)
                      & (mesh.vertices[:, 1] > 0.5 + 1e-12))


def test_l_shape_notch_edges_taggable():
    mesh = build_structured_mesh("l_shape", 2, dirichlet=("notch_v", "notch_h"))
    assert np.sum(mesh.facet_tags == DIRICHLET) == 4  # 2 facets per notch edge at res 2


def test_unknown_edge_name():
    with pytest.raises(ConfigError):
        build_structured_mesh("rectangle", (2, 2), dirichlet=("north",))
    with pytest.raises(ConfigError):
        build_structured_mesh("interval", 4, dirichlet=("top",))


def test_dirichlet_all():
    mesh = build_structured_mesh("rectangle", (2, 2), dirichlet="all")
    assert np.all(mesh.facet_tags == DIRICHLET)
    assert mesh.has_dirichlet()


def test_refine_uniform():
    mesh = build_structured_mesh("rectangle", (2, 2), dirichlet=("left",))
    fine = refine_uniform(mesh)
    assert fine.n_cells == 4 * mesh.n_cells
    assert fine.min_diameter == pytest.approx(0.5 * mesh.min_diameter)
    assert fine.cell_measures.sum() == pytest.approx(1.0)
    # tags survive: twice as many Dirichlet facets, all still on x = 0
    dir_facets = fine.facets[fine.facet_tags == DIRICHLET]
    assert dir_facets.shape[0] == 2 * np.sum(mesh.facet_tags == DIRICHLET)
    assert np.all(fine.vertices[dir_facets.ravel()][:, 0] == 0.0)

    line = build_structured_mesh("interval", 3, dirichlet=("left",))
    assert refine_uniform(line).n_cells == 6


def test_interpolate_variants():
    mesh = build_structured_mesh("rectangle", (2, 2), dirichlet=("left",))
    space = FESpace(mesh, n_components=2)
    z = space.interpolate(None)
    assert np.all(z.values == 0.0)
    c = space.interpolate((1.0, -2.0))
    assert np.all(c.values == [1.0, -2.0])
    f = space.interpolate(lambda x: np.stack([x[:, 0], x[:, 1] ** 2], axis=1))
    assert f.values[:, 0] == pytest.approx(mesh.vertices[:, 0])


def test_gradient_of_affine_field_exact():
    mesh = build_structured_mesh("rectangle", (3, 3), dirichlet=("left",))
    space = FESpace(mesh, n_components=2)
    G = np.array([[0.25, -1.5], [2.0, 0.5]])
    u = space.interpolate(lambda x: x @ G.T)
    E = gradient(u, "full")
    assert np.max(np.abs(E.values - G)) < 1e-13
    Es = gradient(u, "symmetric")
    assert np.max(np.abs(Es.values - 0.5 * (G + G.T))) < 1e-13


def test_load_integrates_polynomials_exactly():
    mesh = build_structured_mesh("rectangle", (3, 3), dirichlet=("left",))
    space = FESpace(mesh, n_components=2)
    # degree-2 volume rule: sum of the load vector is int f for affine f
    load = assemble_load(lambda x: np.stack([x[..., 0], 1.0 + x[..., 1]], axis=-1),
                         None, space)
    assert load[:, 0].sum() == pytest.approx(0.5, abs=1e-14)
    assert load[:, 1].sum() == pytest.approx(1.5, abs=1e-14)

    # Neumann part: tag everything but the right edge Dirichlet so the
    # constant traction acts on a single unit-length edge
    m2 = build_structured_mesh("rectangle", (3, 3), dirichlet=("left", "top", "bottom"))
    sp2 = FESpace(m2, n_components=2)
    load_g = assemble_load(None, (2.0, 0.0), sp2)
    assert load_g[:, 0].sum() == pytest.approx(2.0, abs=1e-14)
    right = m2.vertices[:, 0] == 1.0
    assert np.all(load_g[~right, 0] == 0.0)


def test_pure_neumann_compatibility():
    mesh = build_structured_mesh("rectangle", (2, 2), dirichlet=())
    space = FESpace(mesh, n_components=2)
    with pytest.raises(CompatibilityError):
        assemble_load((0.3, 0.0), None, space)
    # balanced data passes

    def g(p):
        out = np.zeros(p.shape[:-1] + (2,))
        out[..., 0] = np.where(p[..., 0] > 0.5, 1.0, -1.0)
        return out

    load = assemble_load(None, g, space)
    assert abs(load[:, 0].sum()) < 1e-12


def test_norms_including_huge_exponent():
    mesh = build_structured_mesh("interval", 4, dirichlet=("left",))
    w, pts = mesh.cell_measures.reshape(-1, 1), mesh.cell_centroids.reshape(-1, 1, 1)
    vals = np.full((4, 1, 1, 1), 2.0)
    tf = CellTensorField(mesh, vals, w, pts)
    assert norms(tf, 1) == pytest.approx(2.0)
    assert norms(tf, 2) == pytest.approx(2.0)
    assert norms(tf, np.inf) == 2.0
    # constant field: ||.||_p = 2 * |Omega|^(1/p) for any p, however large
    p = 2 ** 17 + 1
    assert norms(tf, p) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(InvalidInput):
        norms(tf, 0.5)


def test_field_max():
    mesh = build_structured_mesh("interval", 4, dirichlet=("left",))
    space = FESpace(mesh, n_components=1)
    u = space.interpolate(lambda x: -3.0 * x[:, :1])
    assert field_max(u) == pytest.approx(3.0)


def test_korn_constant_bounds():
    mesh = build_structured_mesh("rectangle", (4, 4), dirichlet=("left",))
    space = FESpace(mesh, n_components=2)
    c = korn_constant(space)
    assert 1.0 <= c < 50.0
    free = FESpace(build_structured_mesh("rectangle", (4, 4), dirichlet=()), 2)
    with pytest.raises(InvalidInput):
        korn_constant(free)


def test_mesh_file_round_trip(tmp_path):
    mesh = build_structured_mesh("l_shape", 2, dirichlet=("left", "notch_v"))
    p = tmp_path / "m.txt"
    write_mesh(mesh, p)
    back = read_mesh(p)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.cells, mesh.cells)
    assert np.array_equal(back.facets, mesh.facets)
    assert np.array_equal(back.facet_tags, mesh.facet_tags)
    # byte-stable: writing the read-back mesh reproduces the file
    p2 = tmp_path / "m2.txt"
    write_mesh(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_field_file_round_trip(tmp_path):
    mesh = build_structured_mesh("rectangle", (2, 2), dirichlet=("left",))
    space = FESpace(mesh, n_components=2)
    u = space.interpolate(lambda x: np.stack([x[:, 0] / 3.0, -x[:, 1]], axis=1))
    p = tmp_path / "u.txt"
    write_field(u, p)
    back = read_field(p, space)
    assert np.array_equal(back.values, u.values)


def test_tensor_field_round_trip(tmp_path):
    mesh = build_structured_mesh("rectangle", (2, 2), dirichlet=("left",))
    space = FESpace(mesh, n_components=2)
    u = space.interpolate(lambda x: np.stack([x[:, 0] ** 2, x[:, 1]], axis=1))
    E = gradient(u, "full")
    p = tmp_path / "T.txt"
    write_tensor_field(E, p)
    back = read_tensor_field(p, mesh)
    assert np.array_equal(back.values, E.values)
    assert np.array_equal(back.weights, E.weights)
    assert np.array_equal(back.points, E.points)


def test_malformed_files_rejected(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("not-a-mesh 1\n")
    with pytest.raises(ConfigError):
        read_mesh(p)
    p.write_text("limstrain-mesh 1\ndim 2\nvertices 1 oops\n")
    with pytest.raises(ConfigError):
        read_mesh(p)
