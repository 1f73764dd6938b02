"""Run configuration: strict TOML schema, safe expressions, manifest echo.

A run is described by one TOML file.  Validation is strict: any key outside
the schema is rejected by its full dotted path, so typos fail loudly instead
of silently using a default.  Data entries (u0, f, g) accept three forms:

* a constant vector: ``f = [0.1, 0.0]``
* an affine map: ``f = { const = [0.0, 0.0], matrix = [[0.1, 0.0], [0.0, 0.0]] }``
* component expressions: ``f = ["0.1 * sin(pi * x)", "0.0"]`` with names
  x, y, pi, e and a small whitelist of functions, parsed through the ast
  module -- no attribute access, no calls outside the whitelist.

The resolved configuration (all defaults filled in) is echoed into the run
manifest with a deterministic emitter, so re-ingesting a manifest reproduces
the run byte for byte; the extra [run] section in manifests is ignored on
re-ingestion.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import tomli

from .constitutive import PrototypeLaw
from .discretization import MeshDomain, build_structured_mesh, refine_uniform
from .errors import ConfigError
from .solver import ApproxProblem, default_schedule

__all__ = ["RunConfig", "load_config", "parse_config", "dump_toml", "compile_data"]


_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "sinh": np.sinh,
    "cosh": np.cosh, "arctan": np.arctan, "atan": np.arctan,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_COORDS = ("x", "y")

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod)
_UNARY = (ast.UAdd, ast.USub)


def _check_expr(node: ast.AST, where: str) -> None:
    if isinstance(node, ast.Expression):
        _check_expr(node.body, where)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _check_expr(node.left, where)
        _check_expr(node.right, where)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _UNARY):
        _check_expr(node.operand, where)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        pass
    elif isinstance(node, ast.Name):
        if node.id not in _FUNCS and node.id not in _CONSTS and node.id not in _COORDS:
            raise ConfigError(f"{where}: unknown name '{node.id}' in expression")
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ConfigError(f"{where}: only whitelisted functions are callable")
        if node.keywords:
            raise ConfigError(f"{where}: keyword arguments not allowed in expressions")
        for a in node.args:
            _check_expr(a, where)
    else:
        raise ConfigError(
            f"{where}: disallowed syntax {type(node).__name__} in expression")


def _compile_expr(expr: str, dim: int, where: str):
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"{where}: cannot parse expression '{expr}': {exc}") from exc
    _check_expr(tree, where)
    code = compile(tree, f"<{where}>", "eval")

    def evaluate(points: np.ndarray) -> np.ndarray:
        env = dict(_FUNCS)
        env.update(_CONSTS)
        for i, name in enumerate(_COORDS[:dim]):
            env[name] = points[..., i]
        out = eval(code, {"__builtins__": {}}, env)  # nosec - ast-whitelisted above
        return np.broadcast_to(np.asarray(out, dtype=float), points.shape[:-1])

    return evaluate


def compile_data(spec: Any, dim: int, ncomp: int, where: str):
    """Turn a config data entry into None, a constant vector, or a callable."""
    if spec is None:
        return None
    if isinstance(spec, (int, float)):
        if ncomp != 1:
            raise ConfigError(f"{where}: scalar given but {ncomp} components expected")
        return np.array([float(spec)])
    if isinstance(spec, dict):
        extra = set(spec) - {"const", "matrix"}
        if extra:
            raise ConfigError(f"{where}: unknown affine key(s) {sorted(extra)}")
        const = np.asarray(spec.get("const", [0.0] * ncomp), dtype=float)
        matrix = np.asarray(spec.get("matrix", np.zeros((ncomp, dim))), dtype=float)
        if const.shape != (ncomp,) or matrix.shape != (ncomp, dim):
            raise ConfigError(
                f"{where}: affine parts need shapes ({ncomp},) and ({ncomp}, {dim})")

        def affine(points):
            return const + points @ matrix.T

        return affine
    if isinstance(spec, str):
        spec = [spec]
    if isinstance(spec, list):
        if all(isinstance(v, (int, float)) for v in spec):
            arr = np.asarray(spec, dtype=float)
            if arr.shape != (ncomp,):
                raise ConfigError(f"{where}: expected {ncomp} components, got {arr.shape}")
            return arr
        if all(isinstance(v, str) for v in spec):
            if len(spec) != ncomp:
                raise ConfigError(f"{where}: expected {ncomp} expressions, got {len(spec)}")
            fns = [_compile_expr(s, dim, f"{where}[{i}]") for i, s in enumerate(spec)]

            def evaluate(points):
                return np.stack([fn(points) for fn in fns], axis=-1)

            return evaluate
    raise ConfigError(f"{where}: unsupported data form {type(spec).__name__}")


# ---------------------------------------------------------------------------
# schema


_SCHEMA: Dict[str, Any] = {
    "seed": 0,
    "threads": None,
    "law": {"kind": "prototype", "a": 2.0, "margin": 1e-8},
    "check": {"dim": 2, "symmetric": True, "radius": 1e3,
              "n_radii": 64, "n_directions": 32},
    "geometry": {"kind": "rectangle", "resolution": [8, 8], "refine": 0,
                 "dirichlet": ["left"], "bounds": None, "n_components": None},
    "data": {"u0": None, "f": None, "g": None},
    "solver": {"kind": "full", "schedule": None, "n_max": 256, "tol": 1e-10,
               "max_iter": 60, "reg_tol": 1e-8},
    "diagnostics": {"k_quantiles": [0.5, 0.75, 0.9], "radii": None, "n_radii": 5,
                    "eps_factors": [8.0, 4.0, 2.0]},
    "sweep": {"a_values": [0.5, 1.0, 2.0]},
    "oracle": {"t_l1_tol": 0.05, "u_linf_tol": 0.05},
    "output": {"directory": "out", "fields": True},
}

# manifests carry an extra [run] section that is ignored when re-ingested
_IGNORED_SECTIONS = ("run",)


def _merge(defaults: Any, given: Any, path: str) -> Any:
    if isinstance(defaults, dict):
        if not isinstance(given, dict):
            raise ConfigError(f"config key '{path}' must be a section")
        out = {}
        for key, sub in defaults.items():
            sub_path = f"{path}.{key}" if path else key
            if key in given:
                out[key] = _merge(sub, given[key], sub_path)
            else:
                out[key] = sub
        unknown = [k for k in given if k not in defaults]
        if unknown:
            where = f"{path}.{unknown[0]}" if path else unknown[0]
            raise ConfigError(f"unknown config key '{where}'")
        return out
    return given


@dataclass
class RunConfig:
    """A fully resolved run configuration."""

    resolved: Dict[str, Any] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.resolved["seed"])

    @property
    def output_dir(self) -> str:
        return str(self.resolved["output"]["directory"])

    def build_law(self, a: Optional[float] = None) -> PrototypeLaw:
        law = self.resolved["law"]
        if law["kind"] != "prototype":
            raise ConfigError(f"unknown law kind '{law['kind']}'")
        return PrototypeLaw(a=float(a if a is not None else law["a"]),
                            margin=float(law["margin"]))

    def build_mesh(self) -> MeshDomain:
        geo = self.resolved["geometry"]
        res = geo["resolution"]
        if isinstance(res, list) and len(res) == 1:
            res = res[0]
        dirichlet = geo["dirichlet"]
        if isinstance(dirichlet, list):
            dirichlet = tuple(dirichlet)
        mesh = build_structured_mesh(geo["kind"], res, dirichlet=dirichlet,
                                     bounds=geo["bounds"])
        for _ in range(int(geo["refine"])):
            mesh = refine_uniform(mesh)
        return mesh

    def build_problem(self, mesh: Optional[MeshDomain] = None,
                      a: Optional[float] = None) -> ApproxProblem:
        mesh = self.build_mesh() if mesh is None else mesh
        law = self.build_law(a=a)
        geo = self.resolved["geometry"]
        ncomp = geo["n_components"]
        ncomp = mesh.dim if ncomp is None else int(ncomp)
        data = self.resolved["data"]
        return ApproxProblem(
            law=law, mesh=mesh, kind=self.resolved["solver"]["kind"],
            n_components=ncomp,
            f=compile_data(data["f"], mesh.dim, ncomp, "data.f"),
            g=compile_data(data["g"], mesh.dim, ncomp, "data.g"),
            u0=compile_data(data["u0"], mesh.dim, ncomp, "data.u0"),
        )

    def schedule(self, dim: int) -> List[int]:
        sol = self.resolved["solver"]
        if sol["schedule"] is not None:
            return [int(n) for n in sol["schedule"]]
        return default_schedule(dim, n_max=int(sol["n_max"]))

    def solver_options(self) -> Dict[str, Any]:
        sol = self.resolved["solver"]
        return {"tol": float(sol["tol"]), "max_iter": int(sol["max_iter"])}


def parse_config(raw: Dict[str, Any]) -> RunConfig:
    raw = {k: v for k, v in raw.items() if k not in _IGNORED_SECTIONS}
    resolved = _merge(_SCHEMA, raw, "")
    sol = resolved["solver"]
    if sol["kind"] not in ("full", "symmetric"):
        raise ConfigError(f"solver.kind must be 'full' or 'symmetric', got '{sol['kind']}'")
    dia = resolved["diagnostics"]
    if any(f < 2.0 for f in dia["eps_factors"]):
        raise ConfigError("diagnostics.eps_factors entries must be >= 2 (units of h_min)")
    if not all(0.0 < q < 1.0 for q in dia["k_quantiles"]):
        raise ConfigError("diagnostics.k_quantiles must lie strictly in (0, 1)")
    return RunConfig(resolved=resolved)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return parse_config(raw)


# ---------------------------------------------------------------------------
# deterministic emission (manifests)


def _fmt_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        r = repr(float(v))
        return r if any(c in r for c in ".einf") else r + ".0"
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialise value of type {type(v).__name__}")


def dump_toml(data: Dict[str, Any]) -> str:
    """Deterministic TOML emission: scalars before sections, keys sorted.

    None values are omitted (TOML has no null); nested dicts become dotted
    sections one level deep, matching the config schema's shape.
    """
    lines: List[str] = []

    def emit(prefix: str, table: Dict[str, Any]):
        scalars = [(k, v) for k, v in sorted(table.items())
                   if not isinstance(v, dict) and v is not None]
        subs = [(k, v) for k, v in sorted(table.items()) if isinstance(v, dict)]
        if prefix and (scalars or not subs):
            lines.append(f"[{prefix}]")
        for k, v in scalars:
            lines.append(f"{k} = {_fmt_value(v)}")
        if scalars or not prefix:
            lines.append("")
        for k, v in subs:
            emit(f"{prefix}.{k}" if prefix else k, v)

    emit("", data)
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines) + "\n"
