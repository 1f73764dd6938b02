"""Plain-text, byte-deterministic readers and writers for meshes and fields.

Every writer emits LF line endings and shortest round-tripping float
literals (Python ``repr``), so writing the same object twice produces
identical bytes on any platform.  See FORMATS.md at the repository root for
the grammar of each format.
"""

from __future__ import annotations

from typing import List, TextIO, Tuple, Union

import numpy as np

from .discretization import CellTensorField, FESpace, Field, MeshDomain
from .errors import ConfigError

__all__ = [
    "write_mesh",
    "read_mesh",
    "write_field",
    "read_field",
    "write_tensor_field",
    "read_tensor_field",
]

_MESH_MAGIC = "limstrain-mesh 1"
_FIELD_MAGIC = "limstrain-field 1"
_TENSOR_MAGIC = "limstrain-tensorfield 1"


def _fmt(x: float) -> str:
    return repr(float(x))


def _row(vals) -> str:
    return " ".join(_fmt(v) for v in vals)


def _open_write(path_or_file: Union[str, TextIO]):
    if hasattr(path_or_file, "write"):
        return path_or_file, False
    return open(path_or_file, "w", newline="\n"), True


def _read_lines(path_or_file: Union[str, TextIO]) -> List[str]:
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file, "r") as fh:
            text = fh.read()
    return [ln.rstrip("\n") for ln in text.split("\n") if ln.strip()]


def _expect(line: str, keyword: str, n_args: int = 1) -> List[str]:
    parts = line.split()
    if not parts or parts[0] != keyword or len(parts) != 1 + n_args:
        raise ConfigError(f"malformed file: expected '{keyword}' line, got '{line}'")
    return parts[1:]


# -- meshes -----------------------------------------------------------------


def write_mesh(mesh: MeshDomain, path_or_file) -> None:
    fh, owned = _open_write(path_or_file)
    try:
        fh.write(_MESH_MAGIC + "\n")
        fh.write(f"dim {mesh.dim}\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        for v in mesh.vertices:
            fh.write(_row(v) + "\n")
        fh.write(f"cells {mesh.n_cells}\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(i)) for i in c) + "\n")
        fh.write(f"facets {len(mesh.facets)}\n")
        for f, tag in zip(mesh.facets, mesh.facet_tags):
            fh.write(tag + " " + " ".join(str(int(i)) for i in f) + "\n")
    finally:
        if owned:
            fh.close()


def read_mesh(path_or_file) -> MeshDomain:
    lines = _read_lines(path_or_file)
    if not lines or lines[0] != _MESH_MAGIC:
        raise ConfigError("not a mesh file (bad or missing header)")
    k = 1
    (dim_s,) = _expect(lines[k], "dim")
    dim = int(dim_s)
    k += 1
    (nv_s,) = _expect(lines[k], "vertices")
    nv = int(nv_s)
    k += 1
    try:
        verts = np.array([[float(t) for t in lines[k + i].split()] for i in range(nv)])
        k += nv
        (ncell_s,) = _expect(lines[k], "cells")
        ncell = int(ncell_s)
        k += 1
        cells = np.array([[int(t) for t in lines[k + i].split()] for i in range(ncell)],
                         dtype=np.int64)
        k += ncell
        (nf_s,) = _expect(lines[k], "facets")
        nf = int(nf_s)
        k += 1
        facets = []
        tags = []
        for i in range(nf):
            parts = lines[k + i].split()
            tags.append(parts[0])
            facets.append([int(t) for t in parts[1:]])
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"malformed mesh file: {exc}") from exc
    return MeshDomain(dim, verts, cells,
                      np.asarray(facets, dtype=np.int64).reshape(nf, dim),
                      np.asarray(tags, dtype=object))


# -- nodal fields -------------------------------------------------------------


def write_field(u: Field, path_or_file) -> None:
    fh, owned = _open_write(path_or_file)
    try:
        fh.write(_FIELD_MAGIC + "\n")
        fh.write(f"components {u.space.n_components}\n")
        fh.write(f"nodes {u.space.n_nodes}\n")
        for row in u.values:
            fh.write(_row(row) + "\n")
    finally:
        if owned:
            fh.close()


def read_field(path_or_file, space: FESpace) -> Field:
    lines = _read_lines(path_or_file)
    if not lines or lines[0] != _FIELD_MAGIC:
        raise ConfigError("not a field file (bad or missing header)")
    (nc_s,) = _expect(lines[1], "components")
    (nn_s,) = _expect(lines[2], "nodes")
    nc, nn = int(nc_s), int(nn_s)
    if nc != space.n_components or nn != space.n_nodes:
        raise ConfigError(
            f"field file has {nn} nodes x {nc} components, "
            f"space expects {space.n_nodes} x {space.n_components}")
    try:
        vals = np.array([[float(t) for t in lines[3 + i].split()] for i in range(nn)])
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"malformed field file: {exc}") from exc
    return Field(space, vals.reshape(nn, nc))


# -- quadrature-point tensor fields -------------------------------------------


def write_tensor_field(T: CellTensorField, path_or_file) -> None:
    ncell, nq, ncomp, dim = T.values.shape
    fh, owned = _open_write(path_or_file)
    try:
        fh.write(_TENSOR_MAGIC + "\n")
        fh.write(f"cells {ncell} points {nq} components {ncomp} dim {dim}\n")
        for c in range(ncell):
            for q in range(nq):
                head = [T.weights[c, q], *T.points[c, q]]
                fh.write(_row(head) + " " + _row(T.values[c, q].ravel()) + "\n")
    finally:
        if owned:
            fh.close()


def read_tensor_field(path_or_file, mesh: MeshDomain) -> CellTensorField:
    lines = _read_lines(path_or_file)
    if not lines or lines[0] != _TENSOR_MAGIC:
        raise ConfigError("not a tensor-field file (bad or missing header)")
    parts = lines[1].split()
    try:
        if parts[0] != "cells" or parts[2] != "points" or parts[4] != "components" or parts[6] != "dim":
            raise ValueError(f"bad shape line '{lines[1]}'")
        ncell, nq, ncomp, dim = int(parts[1]), int(parts[3]), int(parts[5]), int(parts[7])
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"malformed tensor-field file: {exc}") from exc
    if ncell != mesh.n_cells or dim != mesh.dim:
        raise ConfigError(
            f"tensor-field file has {ncell} cells in dim {dim}, "
            f"mesh has {mesh.n_cells} cells in dim {mesh.dim}")
    vals = np.empty((ncell, nq, ncomp, dim))
    wts = np.empty((ncell, nq))
    pts = np.empty((ncell, nq, dim))
    row = 2
    try:
        for c in range(ncell):
            for q in range(nq):
                nums = [float(t) for t in lines[row].split()]
                row += 1
                wts[c, q] = nums[0]
                pts[c, q] = nums[1:1 + dim]
                body = nums[1 + dim:]
                if len(body) != ncomp * dim:
                    raise ValueError(f"row {row} has {len(body)} tensor entries")
                vals[c, q] = np.asarray(body).reshape(ncomp, dim)
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"malformed tensor-field file: {exc}") from exc
    return CellTensorField(mesh, vals, wts, pts)
