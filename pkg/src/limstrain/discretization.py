"""Simplicial meshes, P1 vector elements, gradients, loads, and norms.

The discrete ansatz is intentionally plain: continuous piecewise-linear
vector fields on conforming simplicial meshes (intervals in 1D, positively
oriented triangles in 2D).  Stress-like tensor fields are carried at
quadrature points rather than as finite-element unknowns; with P1 elements a
single centroid point per cell integrates products of cellwise-constant
tensors exactly, which is all the solver needs.  Loads use degree-2 rules so
affine data is integrated exactly as well.

Boundary facets carry exactly one tag each, ``DIRICHLET`` or ``NEUMANN``,
and together the tags cover the whole boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CompatibilityError, ConfigError, InvalidInput

__all__ = [
    "DIRICHLET",
    "NEUMANN",
    "MeshDomain",
    "FESpace",
    "Field",
    "CellTensorField",
    "build_structured_mesh",
    "refine_uniform",
    "gradient",
    "assemble_load",
    "internal_forces",
    "assemble_tangent",
    "norms",
    "korn_constant",
]

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass
class MeshDomain:
    """A conforming simplicial mesh with a tagged boundary.

    vertices : (n_vertices, dim) floats
    cells : (n_cells, dim+1) vertex indices, positively oriented
    facets : (n_facets, dim) vertex indices of boundary facets
    facet_tags : (n_facets,) strings, each DIRICHLET or NEUMANN
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray
    _geom: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        self.facets = np.ascontiguousarray(self.facets, dtype=np.int64).reshape(-1, self.dim)
        self.facet_tags = np.asarray(self.facet_tags, dtype=object)
        if self.vertices.shape[1] != self.dim or self.cells.shape[1] != self.dim + 1:
            raise InvalidInput("mesh arrays inconsistent with dimension")
        bad = set(self.facet_tags) - {DIRICHLET, NEUMANN}
        if bad:
            raise InvalidInput(f"unknown facet tags: {sorted(bad)}")
        if np.any(self.signed_measures() <= 0.0):
            raise InvalidInput("mesh contains non-positively oriented cells")

    # -- geometry (computed once, cached) --------------------------------

    def signed_measures(self) -> np.ndarray:
        X = self.vertices[self.cells]
        edges = X[:, 1:, :] - X[:, :1, :]
        det = np.linalg.det(edges) if self.dim > 1 else edges[:, 0, 0]
        return det / _factorial(self.dim)

    @property
    def cell_measures(self) -> np.ndarray:
        if "meas" not in self._geom:
            self._geom["meas"] = self.signed_measures()
        return self._geom["meas"]

    @property
    def cell_centroids(self) -> np.ndarray:
        if "cent" not in self._geom:
            self._geom["cent"] = self.vertices[self.cells].mean(axis=1)
        return self._geom["cent"]

    @property
    def hat_gradients(self) -> np.ndarray:
        """(n_cells, dim+1, dim): gradients of the barycentric hat functions."""
        if "grad" not in self._geom:
            X = self.vertices[self.cells]
            edges = X[:, 1:, :] - X[:, :1, :]
            if self.dim == 1:
                inv = 1.0 / edges
            else:
                inv = np.linalg.inv(edges)
            g = np.empty((len(self.cells), self.dim + 1, self.dim))
            g[:, 1:, :] = np.transpose(inv, (0, 2, 1))
            g[:, 0, :] = -g[:, 1:, :].sum(axis=1)
            self._geom["grad"] = g
        return self._geom["grad"]

    @property
    def min_diameter(self) -> float:
        if "hmin" not in self._geom:
            X = self.vertices[self.cells]
            h = 0.0
            best = np.inf
            for i in range(self.dim + 1):
                for j in range(i + 1, self.dim + 1):
                    e = np.linalg.norm(X[:, i, :] - X[:, j, :], axis=1)
                    h = max(h, float(e.max()))
                    best = min(best, float(e.min()))
            self._geom["hmin"] = best
            self._geom["hmax"] = h
        return self._geom["hmin"]

    @property
    def max_diameter(self) -> float:
        self.min_diameter
        return self._geom["hmax"]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def facet_measures(self) -> np.ndarray:
        if self.dim == 1:
            return np.ones(len(self.facets))
        P = self.vertices[self.facets]
        return np.linalg.norm(P[:, 1, :] - P[:, 0, :], axis=1)

    def boundary_vertices(self, tag: Optional[str] = None) -> np.ndarray:
        sel = slice(None) if tag is None else (self.facet_tags == tag)
        return np.unique(self.facets[sel].ravel())

    def has_dirichlet(self) -> bool:
        return bool(np.any(self.facet_tags == DIRICHLET))


def _factorial(d: int) -> int:
    out = 1
    for k in range(2, d + 1):
        out *= k
    return out


# ---------------------------------------------------------------------------
# structured geometries

_EDGE_PREDICATES = {
    "interval": {
        "left": lambda x, lo, hi: np.isclose(x[:, 0], lo[0]),
        "right": lambda x, lo, hi: np.isclose(x[:, 0], hi[0]),
    },
    "rectangle": {
        "left": lambda x, lo, hi: np.isclose(x[:, 0], lo[0]),
        "right": lambda x, lo, hi: np.isclose(x[:, 0], hi[0]),
        "bottom": lambda x, lo, hi: np.isclose(x[:, 1], lo[1]),
        "top": lambda x, lo, hi: np.isclose(x[:, 1], hi[1]),
    },
    # the L-shape is the unit square minus its open upper-right quadrant;
    # the two notch edges meet at the reentrant corner (0.5, 0.5)
    "l_shape": {
        "left": lambda x, lo, hi: np.isclose(x[:, 0], 0.0),
        "bottom": lambda x, lo, hi: np.isclose(x[:, 1], 0.0),
        "right": lambda x, lo, hi: np.isclose(x[:, 0], 1.0),
        "top": lambda x, lo, hi: np.isclose(x[:, 1], 1.0),
        "notch_v": lambda x, lo, hi: np.isclose(x[:, 0], 0.5) & (x[:, 1] >= 0.5 - 1e-12),
        "notch_h": lambda x, lo, hi: np.isclose(x[:, 1], 0.5) & (x[:, 0] >= 0.5 - 1e-12),
    },
}


def build_structured_mesh(
    kind: str,
    resolution: Union[int, Sequence[int]],
    dirichlet: Union[str, Sequence[str]] = (),
    bounds: Optional[Sequence[Sequence[float]]] = None,
) -> MeshDomain:
    """Build an interval, rectangle, or L-shape mesh with tagged boundary.

    Parameters
    ----------
    kind:
        "interval", "rectangle", or "l_shape".
    resolution:
        Cells per axis.  For the L-shape, each quadrant edge is split into
        ``resolution`` intervals (mesh width 1/(2*resolution)), giving
        ``6 * resolution**2`` triangles and keeping the reentrant corner at
        (0.5, 0.5) in the vertex set.
    dirichlet:
        Edge names to tag DIRICHLET ("all" for the whole boundary); every
        other boundary facet is tagged NEUMANN.  Unknown names raise
        :class:`ConfigError`.
    bounds:
        Axis bounds for interval/rectangle, default unit.  The L-shape is
        fixed to the unit square.
    """
    if kind not in _EDGE_PREDICATES:
        raise ConfigError(f"unknown geometry kind '{kind}'")
    names = _EDGE_PREDICATES[kind]
    if dirichlet == "all":
        dnames = set(names)
    else:
        dnames = {dirichlet} if isinstance(dirichlet, str) else set(dirichlet)
        unknown = dnames - set(names)
        if unknown:
            raise ConfigError(
                f"unknown edge name(s) {sorted(unknown)} for geometry '{kind}'; "
                f"known: {sorted(names)}"
            )

    if kind == "interval":
        verts, cells = _interval_mesh(int(resolution), bounds)
    elif kind == "rectangle":
        verts, cells = _rectangle_mesh(resolution, bounds)
    else:
        if bounds is not None:
            raise ConfigError("l_shape geometry has fixed unit-square bounds")
        verts, cells = _l_shape_mesh(int(resolution))

    facets = _boundary_facets(verts.shape[1], cells)
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    tags = np.empty(len(facets), dtype=object)
    tags[:] = NEUMANN
    matched = np.zeros(len(facets), dtype=bool)
    for name, pred in names.items():
        mids = verts[facets].mean(axis=1)
        onedge = pred(np.atleast_2d(mids), lo, hi)
        matched |= onedge
        if name in dnames:
            tags[onedge] = DIRICHLET
    if not np.all(matched):  # pragma: no cover - guards builder bugs
        raise InvalidInput("some boundary facets matched no named edge")
    return MeshDomain(verts.shape[1], verts, cells, facets, tags)


def _interval_mesh(n, bounds):
    if n < 1:
        raise ConfigError("resolution must be >= 1")
    lo, hi = (0.0, 1.0) if bounds is None else (float(bounds[0][0]), float(bounds[0][1]))
    verts = np.linspace(lo, hi, n + 1).reshape(-1, 1)
    cells = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
    return verts, cells


def _rectangle_mesh(resolution, bounds):
    if np.isscalar(resolution):
        nx = ny = int(resolution)
    else:
        nx, ny = (int(r) for r in resolution)
    if nx < 1 or ny < 1:
        raise ConfigError("resolution must be >= 1 per axis")
    if bounds is None:
        bounds = ((0.0, 1.0), (0.0, 1.0))
    xs = np.linspace(bounds[0][0], bounds[0][1], nx + 1)
    ys = np.linspace(bounds[1][0], bounds[1][1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return j * (nx + 1) + i

    cells = []
    for j in range(ny):
        for i in range(nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v11, v01 = vid(i + 1, j + 1), vid(i, j + 1)
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return verts, np.asarray(cells, dtype=np.int64)


def _l_shape_mesh(resolution):
    if resolution < 1:
        raise ConfigError("resolution must be >= 1")
    n = 2 * resolution
    verts, cells = _rectangle_mesh(n, ((0.0, 1.0), (0.0, 1.0)))
    cent = verts[cells].mean(axis=1)
    keep = ~((cent[:, 0] > 0.5) & (cent[:, 1] > 0.5))
    cells = cells[keep]
    used = np.unique(cells.ravel())
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return verts[used], remap[cells]


def _boundary_facets(dim, cells):
    faces: dict = {}
    nloc = dim + 1
    for c in cells:
        for k in range(nloc):
            f = tuple(sorted(int(v) for i, v in enumerate(c) if i != k))
            faces[f] = faces.get(f, 0) + 1
    boundary = sorted(f for f, cnt in faces.items() if cnt == 1)
    return np.asarray(boundary, dtype=np.int64).reshape(-1, dim)


def refine_uniform(mesh: MeshDomain) -> MeshDomain:
    """One sweep of uniform (red) refinement, preserving facet tags."""
    if mesh.dim == 1:
        return _refine_1d(mesh)
    if mesh.dim != 2:
        raise InvalidInput("uniform refinement implemented for dim 1 and 2")
    verts = list(map(tuple, mesh.vertices))
    midpoint: dict = {}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in midpoint:
            verts.append(tuple(0.5 * (mesh.vertices[a] + mesh.vertices[b])))
            midpoint[key] = len(verts) - 1
        return midpoint[key]

    cells = []
    for v0, v1, v2 in mesh.cells:
        m01, m12, m02 = mid(v0, v1), mid(v1, v2), mid(v0, v2)
        cells.extend([(v0, m01, m02), (v1, m12, m01), (v2, m02, m12), (m01, m12, m02)])
    facets = []
    tags = []
    for (a, b), tag in zip(mesh.facets, mesh.facet_tags):
        m = mid(int(a), int(b))
        facets.extend([(min(a, m), max(a, m)), (min(b, m), max(b, m))])
        tags.extend([tag, tag])
    return MeshDomain(2, np.asarray(verts), np.asarray(cells, dtype=np.int64),
                      np.asarray(facets, dtype=np.int64), np.asarray(tags, dtype=object))


def _refine_1d(mesh):
    verts = list(mesh.vertices[:, 0])
    cells = []
    for a, b in mesh.cells:
        verts.append(0.5 * (verts[a] + verts[b]))
        m = len(verts) - 1
        cells.extend([(a, m), (m, b)])
    return MeshDomain(1, np.asarray(verts).reshape(-1, 1),
                      np.asarray(cells, dtype=np.int64),
                      mesh.facets.copy(), mesh.facet_tags.copy())


# ---------------------------------------------------------------------------
# function spaces and fields


class FESpace:
    """Continuous piecewise-linear vector space with ``n_components`` per node.

    Degrees of freedom are node-major: dof(node, comp) = node*ncomp + comp.
    """

    def __init__(self, mesh: MeshDomain, n_components: Optional[int] = None):
        self.mesh = mesh
        self.n_components = mesh.dim if n_components is None else int(n_components)
        self._strain = {}

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.n_components

    def dirichlet_nodes(self) -> np.ndarray:
        return self.mesh.boundary_vertices(DIRICHLET)

    def dirichlet_dofs(self) -> np.ndarray:
        nodes = self.dirichlet_nodes()
        return (nodes[:, None] * self.n_components + np.arange(self.n_components)).ravel()

    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.dirichlet_dofs()] = False
        return np.nonzero(mask)[0]

    def interpolate(self, data) -> "Field":
        """Nodal interpolation of a constant, array, or callable."""
        nv, nc = self.n_nodes, self.n_components
        if data is None:
            vals = np.zeros((nv, nc))
        elif callable(data):
            vals = np.asarray(data(self.mesh.vertices), dtype=float).reshape(nv, nc)
        else:
            arr = np.asarray(data, dtype=float)
            if arr.shape == (nv, nc):
                vals = arr.copy()
            else:
                vals = np.broadcast_to(arr.reshape(1, -1), (nv, nc)).copy()
        return Field(self, vals)

    def strain_matrix(self, kind: str) -> np.ndarray:
        """(n_cells, ncomp*dim, (dim+1)*ncomp) map from local dofs to the
        (optionally symmetrised) gradient tensor, vectorised as i*dim+p."""
        if kind not in ("full", "symmetric"):
            raise InvalidInput(f"unknown gradient kind '{kind}'")
        if kind in self._strain:
            return self._strain[kind]
        mesh, nc, d = self.mesh, self.n_components, self.mesh.dim
        if kind == "symmetric" and nc != d:
            raise InvalidInput("symmetric gradient needs n_components == dim")
        g = mesh.hat_gradients  # (ncell, d+1, d)
        ncell, nloc = mesh.n_cells, (d + 1) * nc
        B = np.zeros((ncell, nc * d, nloc))
        for b in range(d + 1):
            for j in range(nc):
                col = b * nc + j
                # grad(phi_b e_j) = e_j (x) grad(lambda_b)
                for p in range(d):
                    B[:, j * d + p, col] += g[:, b, p]
        if kind == "symmetric":
            S = _sym_projector(nc, d)
            B = np.einsum("mk,ckl->cml", S, B)
        self._strain[kind] = B
        return B


def _sym_projector(nc, d):
    m = nc * d
    S = np.zeros((m, m))
    for i in range(nc):
        for p in range(d):
            S[i * d + p, i * d + p] += 0.5
            S[i * d + p, p * d + i] += 0.5
    return S


@dataclass
class Field:
    """Nodal vector field: values[node, component]."""

    space: FESpace
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expect = (self.space.n_nodes, self.space.n_components)
        if self.values.shape != expect:
            raise InvalidInput(f"field values shape {self.values.shape}, expected {expect}")

    def copy(self) -> "Field":
        return Field(self.space, self.values.copy())

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def local_dofs(self) -> np.ndarray:
        """(n_cells, (dim+1)*ncomp) cellwise gather of nodal values."""
        return self.values[self.space.mesh.cells].reshape(self.space.mesh.n_cells, -1)


@dataclass
class CellTensorField:
    """Tensor values at quadrature points: values[cell, point, comp, dir].

    Weights are positive and sum per cell to the cell measure.
    """

    mesh: MeshDomain
    values: np.ndarray
    weights: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if np.any(self.weights <= 0.0):
            raise InvalidInput("quadrature weights must be positive")

    @property
    def point_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=(-2, -1)))

    def with_values(self, values) -> "CellTensorField":
        return CellTensorField(self.mesh, values, self.weights, self.points)


def centroid_rule(mesh: MeshDomain):
    """One-point rule: exact for cellwise-constant integrands against P1 data."""
    w = mesh.cell_measures.reshape(-1, 1)
    pts = mesh.cell_centroids.reshape(mesh.n_cells, 1, mesh.dim)
    return w, pts


def gradient(u: Field, kind: str) -> CellTensorField:
    """Cellwise (symmetric) gradient of a P1 field at centroid points.

    P1 gradients are constant per cell, so the single point carries the
    exact value everywhere in the cell.
    """
    space = u.space
    B = space.strain_matrix(kind)
    E = np.einsum("cml,cl->cm", B, u.local_dofs())
    nc, d = space.n_components, space.mesh.dim
    w, pts = centroid_rule(space.mesh)
    return CellTensorField(space.mesh, E.reshape(space.mesh.n_cells, 1, nc, d), w, pts)


# ---------------------------------------------------------------------------
# quadrature rules of degree 2 for data terms

_TRI_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_TRI_W = np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])
_GL2 = np.array([-1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0)])
_SEG_BARY = np.stack([(1.0 - (_GL2 + 1.0) / 2.0), (_GL2 + 1.0) / 2.0], axis=1)
_SEG_W = np.array([0.5, 0.5])


def _volume_rule(mesh):
    if mesh.dim == 1:
        bary = _SEG_BARY
        wts = _SEG_W
    elif mesh.dim == 2:
        bary = _TRI_BARY
        wts = _TRI_W
    else:
        raise InvalidInput("volume quadrature implemented for dim 1 and 2")
    X = mesh.vertices[mesh.cells]  # (ncell, d+1, d)
    pts = np.einsum("qb,cbd->cqd", bary, X)
    w = mesh.cell_measures[:, None] * wts[None, :]
    return bary, w, pts


def _eval_data(data, pts, ncomp):
    """Constant / array / callable data evaluated at points (..., d) -> (..., ncomp)."""
    if data is None:
        return np.zeros(pts.shape[:-1] + (ncomp,))
    if callable(data):
        out = np.asarray(data(pts), dtype=float)
        if out.shape != pts.shape[:-1] + (ncomp,):
            raise InvalidInput("data callable returned wrong shape")
        return out
    arr = np.asarray(data, dtype=float).reshape(-1)
    if arr.size != ncomp:
        raise InvalidInput(f"constant data has {arr.size} components, expected {ncomp}")
    return np.broadcast_to(arr, pts.shape[:-1] + (ncomp,))


def assemble_load(f, g, space: FESpace, compat_tol: float = 1e-10) -> np.ndarray:
    """Load vector ``int f . phi dx + int_GammaN g . phi dS`` as (n_nodes, ncomp).

    Body and surface data may be None, constant arrays, or callables of the
    coordinates.  With an empty Dirichlet boundary the compatibility defect
    ``|int f + int g|`` must vanish relative to the data size, otherwise a
    :class:`CompatibilityError` is raised (the resolved defect is included).
    """
    mesh, ncomp = space.mesh, space.n_components
    load = np.zeros((space.n_nodes, ncomp))
    fscale = 0.0
    bary, w, pts = _volume_rule(mesh)
    fv = _eval_data(f, pts, ncomp)  # (ncell, nq, ncomp)
    fscale += float(np.sum(w[..., None] * np.abs(fv)))
    contrib = np.einsum("cq,qb,cqi->cbi", w, bary, fv)
    np.add.at(load, mesh.cells, contrib)

    neumann = np.nonzero(mesh.facet_tags == NEUMANN)[0]
    if neumann.size:
        F = mesh.facets[neumann]
        if mesh.dim == 1:
            fpts = mesh.vertices[F[:, 0]].reshape(-1, 1, 1)
            gv = _eval_data(g, fpts, ncomp)
            np.add.at(load, F[:, 0], gv[:, 0, :])
            fscale += float(np.sum(np.abs(gv)))
        else:
            P = mesh.vertices[F]  # (nf, 2, d)
            fpts = np.einsum("qb,fbd->fqd", _SEG_BARY, P)
            lengths = np.linalg.norm(P[:, 1, :] - P[:, 0, :], axis=1)
            gv = _eval_data(g, fpts, ncomp)  # (nf, 2, ncomp)
            wq = lengths[:, None] * _SEG_W[None, :]
            fscale += float(np.sum(wq[..., None] * np.abs(gv)))
            contrib = np.einsum("fq,qb,fqi->fbi", wq, _SEG_BARY, gv)
            np.add.at(load, F, contrib)

    if not mesh.has_dirichlet():
        defect = np.abs(load.sum(axis=0))
        if np.any(defect > compat_tol * (fscale + 1e-300)):
            raise CompatibilityError(
                "pure-Neumann data violates compatibility: "
                f"|int f + int g| = {defect} exceeds {compat_tol:g} * data scale"
            )
    return load


def internal_forces(T: CellTensorField, space: FESpace, kind: str) -> np.ndarray:
    """``int T : grad(phi) dx`` for every nodal basis function, as (n_nodes, ncomp)."""
    B = space.strain_matrix(kind)
    mesh = space.mesh
    tvec = T.values.reshape(mesh.n_cells, -1)
    wq = T.weights[:, 0]
    local = np.einsum("cml,cm,c->cl", B, tvec, wq)
    out = np.zeros((space.n_nodes, space.n_components))
    np.add.at(out, mesh.cells, local.reshape(mesh.n_cells, mesh.dim + 1, space.n_components))
    return out


def assemble_tangent(M: np.ndarray, space: FESpace, kind: str) -> sp.csr_matrix:
    """Assemble the sparse tangent from per-cell tensor-space operators.

    M has shape (n_cells, m, m) with m = ncomp*dim, acting on vectorised
    gradients; the element matrix is ``w_c B^T M B``.
    """
    Bmat = space.strain_matrix(kind)
    mesh = space.mesh
    w = mesh.cell_measures
    Ke = np.einsum("c,cmk,cmn,cnl->ckl", w, Bmat, M, Bmat, optimize=True)
    nloc = Bmat.shape[2]
    dofs = (mesh.cells[:, :, None] * space.n_components
            + np.arange(space.n_components)[None, None, :]).reshape(mesh.n_cells, nloc)
    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(space.n_dofs, space.n_dofs))
    return K.tocsr()


def norms(tf: CellTensorField, p) -> float:
    """Quadrature L^p norm of a cell tensor field; ``p = inf`` is the max over points.

    The sum is computed with the max point norm factored out, so very large
    exponents (p ~ thousands) neither overflow nor underflow to zero.
    """
    pn = tf.point_norms
    if p == np.inf or p == "inf":
        return float(pn.max()) if pn.size else 0.0
    p = float(p)
    if p < 1.0:
        raise InvalidInput("norms requires p >= 1 or inf")
    m = float(pn.max()) if pn.size else 0.0
    if m == 0.0:
        return 0.0
    return m * float(np.sum(tf.weights * (pn / m) ** p) ** (1.0 / p))


def field_max(u: Field) -> float:
    return float(np.max(np.abs(u.values))) if u.values.size else 0.0


# ---------------------------------------------------------------------------
# a discrete Korn constant, estimated once per mesh


def korn_constant(space: FESpace, n_iter: int = 60, seed: int = 0) -> float:
    """Estimate ``sup ||grad u||_2 / ||eps(u)||_2`` over the Dirichlet-constrained
    space by power iteration on the generalised eigenproblem.

    Requires a nonempty Dirichlet boundary (otherwise rigid rotations make
    the ratio infinite).
    """
    if not space.mesh.has_dirichlet():
        raise InvalidInput("Korn estimate needs a Dirichlet part of positive measure")
    eye = np.broadcast_to(np.eye(space.n_components * space.mesh.dim),
                          (space.mesh.n_cells,
                           space.n_components * space.mesh.dim,
                           space.n_components * space.mesh.dim))
    K_full = assemble_tangent(eye, space, "full")
    K_sym = assemble_tangent(eye, space, "symmetric")
    free = space.free_dofs()
    A = K_full[np.ix_(free, free)].tocsc()
    Bm = K_sym[np.ix_(free, free)].tocsc()
    solve = spla.factorized(Bm)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(len(free))
    lam = 1.0
    for _ in range(n_iter):
        y = solve(A @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 1.0
        x = y / ny
        lam = float(x @ (A @ x)) / float(x @ (Bm @ x))
    return float(np.sqrt(lam))
