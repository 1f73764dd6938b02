"""Solvers and diagnostics for elliptic systems with strain-limiting laws.

The package is organized around a constitutive law object (strain as a
bounded function of stress), an index-n approximation family that restores
coercivity, convex primal/dual energies with a computable duality gap, and
diagnostics that locate where the stress concentrates when the limit
problem has no classical solution.

Submodules are imported lazily so the command line entry point can pin
thread counts in the environment before the numeric stack initializes.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "PrototypeLaw": "constitutive",
    "CustomLaw": "constitutive",
    "StructureSampler": "constitutive",
    "check_structure": "constitutive",
    "eval_D": "constitutive",
    "eval_A": "constitutive",
    "invert_D": "constitutive",
    "monotonicity_gap": "constitutive",
    "tensor_norm": "constitutive",
    "potential_F": "potentials",
    "conjugate_Fstar": "potentials",
    "recession_Finf": "potentials",
    "alpha_limit": "potentials",
    "safety_strain_check": "potentials",
    "MeshDomain": "discretization",
    "FESpace": "discretization",
    "Field": "discretization",
    "CellTensorField": "discretization",
    "build_structured_mesh": "discretization",
    "refine_uniform": "discretization",
    "gradient": "discretization",
    "assemble_load": "discretization",
    "norms": "discretization",
    "korn_constant": "discretization",
    "ApproxProblem": "solver",
    "ApproxSolution": "solver",
    "solve_approx": "solver",
    "continuation_solve": "solver",
    "default_schedule": "solver",
    "invert_relation": "solver",
    "regularization_term": "solver",
    "bn_form": "solver",
    "primal_energy": "variational",
    "dual_energy": "variational",
    "relaxed_dual_energy": "variational",
    "minimize_primal": "variational",
    "duality_gap": "variational",
    "vi_residual": "variational",
    "tau_k": "diagnostics",
    "G_k": "diagnostics",
    "renorm_residual": "diagnostics",
    "equilibrium_residual": "diagnostics",
    "maximal_function": "diagnostics",
    "stress_quantile_ladder": "diagnostics",
    "boundary_defect": "diagnostics",
    "direction_fields": "diagnostics",
    "apriori_monitor": "diagnostics",
    "oracle_1d": "oracles",
    "brute_force_primal": "oracles",
    "load_config": "config",
    "parse_config": "config",
    "dump_toml": "config",
    "LimstrainError": "errors",
    "InvalidInput": "errors",
    "OutOfRange": "errors",
    "NumericalDegeneracy": "errors",
    "AccuracyError": "errors",
    "ConfigError": "errors",
    "CompatibilityError": "errors",
    "SolverError": "errors",
    "OracleFailure": "errors",
    "DomainError": "errors",
}

__all__ = ["__version__", *sorted(_EXPORTS)]


def __getattr__(name):
    try:
        modname = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module 'limstrain' has no attribute '{name}'") from None
    import importlib

    mod = importlib.import_module(f".{modname}", __name__)
    value = getattr(mod, name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
