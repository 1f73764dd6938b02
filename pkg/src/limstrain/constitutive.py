"""Constitutive laws with bounded range and linear-growth energy.

The central object is a law ``T -> D(T)`` mapping stress-like tensors to
strain-like tensors, uniformly bounded (``|D(T)| <= C2``) and strictly
monotone with a quantitative floor ``h``.  The bundled prototype is

    D(T) = T / (1 + |T|^a)^(1/a),        a > 0,

whose range is the open unit ball and whose inverse is
``B -> B / (1 - |B|^a)^(1/a)``.  Everything here is a pure function of its
inputs; law objects are immutable and safe to share between threads.

Tensors are plain numpy arrays whose trailing two axes hold the tensor
entries (components x spatial directions).  Any number of leading batch
axes is allowed, so the same code path serves a single tensor and a whole
quadrature field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInput, NumericalDegeneracy, OutOfRange

__all__ = [
    "PrototypeLaw",
    "CustomLaw",
    "StructureReport",
    "StructureSampler",
    "eval_D",
    "eval_A",
    "invert_D",
    "check_structure",
    "tensor_norm",
    "monotonicity_gap",
]


def tensor_norm(T: np.ndarray) -> np.ndarray:
    """Frobenius norm over the trailing two axes.

    Scaled by the largest entry before squaring, so magnitudes up to the
    float maximum come out finite (line-search probes do reach them).
    """
    T = np.asarray(T, dtype=float)
    m = np.max(np.abs(T), axis=(-2, -1), keepdims=True)
    r = T / np.where(m > 0.0, m, 1.0)
    return m[..., 0, 0] * np.sqrt(np.sum(r * r, axis=(-2, -1)))


def _dot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.sum(np.asarray(A, dtype=float) * np.asarray(B, dtype=float), axis=(-2, -1))


def _as_tensor(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.ndim == 0:
        T = T.reshape(1, 1)
    elif T.ndim == 1:
        T = T.reshape(T.shape + (1,))
    if not np.all(np.isfinite(T)):
        raise InvalidInput("tensor contains non-finite entries")
    return T


@dataclass(frozen=True)
class PrototypeLaw:
    """The bounded-range prototype with exponent ``a > 0``.

    Parameters
    ----------
    a:
        Growth exponent of the law.  The monotonicity floor is
        ``h(s) = (1 + s^a)^(-1-1/a)`` and the derivative bound constant is
        ``C2 = max(1, 2^(1-1/a))``.
    C0:
        Working constant in the coercivity bound ``D(T):T >= C1|T| - C0``.
        The default 1.0 is a certified working bound for ``a >= 1``;
        ``check_structure`` reports the empirically smallest admissible value.
    margin:
        Default exclusion margin around the range boundary used by
        :func:`invert_D`.
    """

    a: float
    C0: float = 1.0
    margin: float = 1e-8

    is_radial = True
    smooth = True

    def __post_init__(self):
        if not (self.a > 0 and np.isfinite(self.a)):
            raise InvalidInput("prototype exponent a must be positive and finite")

    @property
    def C1(self) -> float:
        # C1 = 1 admits no finite C0 for a < 1 (the defect s*(1-phi(s)) grows
        # like s^(1-a)); 1/2 keeps the coercivity certificate honest there.
        return 1.0 if self.a >= 1.0 else 0.5

    @property
    def C2(self) -> float:
        return max(1.0, 2.0 ** (1.0 - 1.0 / self.a))

    @property
    def uhlenbeck_constant(self) -> float:
        # Sharp constant in g(t) <= C_u (1 + t) for the prototype weight,
        # attained at t = 1.
        return max(1.0, 2.0 ** (1.0 / self.a - 1.0))

    # -- radial profiles ------------------------------------------------

    def phi(self, s):
        """Radial profile of D: ``D(T) = phi(|T|) T/|T|``."""
        s = np.asarray(s, dtype=float)
        return s * self._decay(s)

    def _decay(self, s):
        # (1 + s^a)^(-1/a), written to stay finite for very large s.
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore"):
            sa = np.power(s, self.a)
        out = np.where(
            np.isfinite(sa),
            np.power(1.0 + np.minimum(sa, 1e300), -1.0 / self.a),
            # s^a overflowed: (1+s^a)^(-1/a) ~ 1/s
            np.divide(1.0, np.maximum(s, 1.0)),
        )
        return out

    def h(self, s):
        """Monotonicity floor ``h(s) = (1 + s^a)^(-1-1/a)``."""
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore"):
            sa = np.power(s, self.a)
        sa = np.minimum(sa, 1e300)
        return np.power(1.0 + sa, -1.0 - 1.0 / self.a)

    def g_weight(self, t):
        """Uhlenbeck weight ``g(t) = (1 + t^a)^(1/a)``; satisfies ``g(t) D(T) = T``."""
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore"):
            ta = np.power(t, self.a)
        return np.where(
            np.isfinite(ta),
            np.power(1.0 + np.minimum(ta, 1e300), 1.0 / self.a),
            np.maximum(t, 1.0),
        )

    # -- tensor maps ----------------------------------------------------

    def D(self, T: np.ndarray) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        s = tensor_norm(T)
        return T * self._decay(s)[..., None, None]

    def A_apply(self, T: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Directional derivative ``A(T)[B]`` of D at T."""
        T = np.asarray(T, dtype=float)
        B = np.asarray(B, dtype=float)
        s = tensor_norm(T)
        dec = self._decay(s)
        # A(T) = dec * (Id - (s^a/(1+s^a)) That (x) That), That = T/|T|
        coef = self._ray_coef(s)
        unit = T / np.where(s > 0.0, s, 1.0)[..., None, None]
        ub = _dot(unit, B)
        return dec[..., None, None] * (B - (coef * ub)[..., None, None] * unit)

    def _ray_coef(self, s):
        # s^a / (1 + s^a), stable for large s
        with np.errstate(over="ignore"):
            sa = np.power(np.asarray(s, dtype=float), self.a)
        return np.where(np.isfinite(sa), sa / (1.0 + np.minimum(sa, 1e300)), 1.0)

    def A_quad(self, T: np.ndarray, B: np.ndarray) -> np.ndarray:
        return _dot(B, self.A_apply(T, B))

    def A_matrix(self, T: np.ndarray) -> np.ndarray:
        """Full derivative as a matrix on vectorised tensors (m x m, m = N*d)."""
        T = np.asarray(T, dtype=float)
        m = T.shape[-2] * T.shape[-1]
        s = tensor_norm(T)
        dec = self._decay(s)
        coef = self._ray_coef(s)
        unit = (T / np.where(s > 0.0, s, 1.0)[..., None, None]).reshape(T.shape[:-2] + (m,))
        eye = np.eye(m)
        outer = unit[..., :, None] * unit[..., None, :]
        return dec[..., None, None] * (eye - coef[..., None, None] * outer)

    def range_distance(self, B: np.ndarray) -> np.ndarray:
        """Distance of B to the boundary of the range closure (unit sphere)."""
        return 1.0 - tensor_norm(B)

    def invert(self, B: np.ndarray) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        b = tensor_norm(B)
        ba = np.power(b, self.a)
        return B * np.power(1.0 - ba, -1.0 / self.a)[..., None, None]


@dataclass(frozen=True)
class CustomLaw:
    """A user-supplied law given by callables.

    ``D`` is required.  The derivative defaults to central finite differences
    with step ``1e-6 * (1 + |T|)``; pass ``A_apply`` to override.  ``h`` and
    the constants must come from the user since nothing can be inferred.
    Set ``smooth=False`` for laws whose derivative jumps; the asymptotic
    symmetry check is then skipped.
    """

    D_fn: Callable[[np.ndarray], np.ndarray]
    h_fn: Callable[[np.ndarray], np.ndarray]
    C0: float = 1.0
    C1: float = 0.5
    C2: float = 1.0
    g_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    A_fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    invert_init: Optional[Callable[[np.ndarray], np.ndarray]] = None
    uhlenbeck_constant: float = field(default=0.0)
    smooth: bool = True
    margin: float = 1e-8

    is_radial = False

    def __post_init__(self):
        if self.uhlenbeck_constant == 0.0:
            object.__setattr__(self, "uhlenbeck_constant", self.C2)

    def D(self, T: np.ndarray) -> np.ndarray:
        return np.asarray(self.D_fn(np.asarray(T, dtype=float)), dtype=float)

    def h(self, s):
        return np.asarray(self.h_fn(np.asarray(s, dtype=float)), dtype=float)

    def g_weight(self, t):
        if self.g_fn is None:
            raise InvalidInput("law has no Uhlenbeck weight g")
        return np.asarray(self.g_fn(np.asarray(t, dtype=float)), dtype=float)

    def A_apply(self, T: np.ndarray, B: np.ndarray) -> np.ndarray:
        if self.A_fn is not None:
            return np.asarray(self.A_fn(T, B), dtype=float)
        return _fd_directional(self.D, T, B)

    def A_quad(self, T: np.ndarray, B: np.ndarray) -> np.ndarray:
        return _dot(B, self.A_apply(T, B))

    def A_matrix(self, T: np.ndarray) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        nc, d = T.shape[-2], T.shape[-1]
        m = nc * d
        cols = []
        for k in range(m):
            E = np.zeros((nc, d))
            E[divmod(k, d)] = 1.0
            cols.append(self.A_apply(T, np.broadcast_to(E, T.shape)).reshape(T.shape[:-2] + (m,)))
        return np.stack(cols, axis=-1)


def _fd_directional(Dfun, T, B):
    """Central finite difference of D at T along B, step 1e-6*(1+|T|)."""
    T = np.asarray(T, dtype=float)
    B = np.asarray(B, dtype=float)
    nb = tensor_norm(B)
    step = 1e-6 * (1.0 + tensor_norm(T)) / np.where(nb > 0.0, nb, 1.0)
    if not np.all(np.isfinite(step)) or np.any(step == 0.0):
        raise NumericalDegeneracy("finite-difference step underflowed or overflowed")
    st = step[..., None, None]
    return (Dfun(T + st * B) - Dfun(T - st * B)) / (2.0 * st)


# ---------------------------------------------------------------------------
# module-level operations


def eval_D(law, T) -> np.ndarray:
    """Evaluate the constitutive map at T (batched over leading axes)."""
    return law.D(_as_tensor(T))


def eval_A(law, T, B):
    """Derivative of D at T applied to B.

    Returns
    -------
    applied : ndarray
        The tensor ``A(T)[B]``.
    quad_form : ndarray or float
        The quadratic form ``(B, B)_{A(T)}``; for a valid law it sits in the
        sandwich ``h(|T|)|B|^2 <= . <= C2 |B|^2 / (1 + |T|)``.
    """
    T = _as_tensor(T)
    B = _as_tensor(B)
    applied = law.A_apply(T, B)
    return applied, _dot(B, applied)


def invert_D(law, B, margin: Optional[float] = None) -> np.ndarray:
    """Solve ``D(T) = B`` for T.

    B must lie strictly inside the range of D, at distance greater than
    ``margin`` from its boundary; otherwise :class:`OutOfRange` is raised
    carrying the distance estimate.  For the prototype the closed-form
    inverse is used; custom laws get a damped Newton iteration.
    """
    B = _as_tensor(B)
    if margin is None:
        margin = law.margin
    if law.is_radial:
        dist = law.range_distance(B)
        worst = float(np.min(dist))
        if worst <= margin:
            raise OutOfRange("argument outside or too close to range boundary", worst)
        return law.invert(B)
    return _invert_newton(law, B, margin)


def _invert_newton(law, B, margin):
    # Damped Newton on the monotone map; backtracks on residual growth.
    X = law.invert_init(B) if law.invert_init is not None else B.copy()
    scale = 1.0 + tensor_norm(B)
    for _ in range(100):
        R = law.D(X) - B
        rnorm = tensor_norm(R)
        if np.all(rnorm <= 1e-12 * scale):
            return X
        M = law.A_matrix(X)
        m = M.shape[-1]
        try:
            delta = np.linalg.solve(M, -R.reshape(R.shape[:-2] + (m,)))
        except np.linalg.LinAlgError:
            raise OutOfRange("Newton Jacobian singular; argument likely at range boundary",
                             float(np.min(margin - 0.0)))
        delta = delta.reshape(X.shape)
        t = np.ones(rnorm.shape)
        for _ in range(60):
            Xn = X + t[..., None, None] * delta
            rn = tensor_norm(law.D(Xn) - B)
            bad = rn > (1.0 - 1e-4 * t) * rnorm
            if not np.any(bad):
                break
            t = np.where(bad, 0.5 * t, t)
        X = X + t[..., None, None] * delta
    rfinal = float(np.max(tensor_norm(law.D(X) - B) / scale))
    raise OutOfRange("inverse Newton stagnated; argument may be outside the range", -rfinal)


def monotonicity_gap(law, T1, T2) -> np.ndarray:
    """``(D(T1)-D(T2)):(T1-T2) - h(|T1|+|T2|) |T1-T2|^2`` (nonnegative for valid laws)."""
    T1 = _as_tensor(T1)
    T2 = _as_tensor(T2)
    diff = T1 - T2
    lhs = _dot(law.D(T1) - law.D(T2), diff)
    floor = law.h(tensor_norm(T1) + tensor_norm(T2)) * np.sum(diff * diff, axis=(-2, -1))
    return lhs - floor


# ---------------------------------------------------------------------------
# structural certification


@dataclass(frozen=True)
class StructureSampler:
    """Deterministic radial sampling plan for :func:`check_structure`.

    64 log-spaced radii times 32 random directions per radius, seedable,
    covering ``|T|`` up to ``radius``.
    """

    dim: int = 2
    n_components: Optional[int] = None
    symmetric: bool = True
    radius: float = 1e3
    n_radii: int = 64
    n_directions: int = 32
    seed: int = 0

    def draw(self):
        nc = self.n_components if self.n_components is not None else self.dim
        if self.radius < 1e3:
            raise InvalidInput("sampler radius must cover |T| up to at least 1e3")
        rng = np.random.default_rng(self.seed)
        radii = np.logspace(-3.0, np.log10(self.radius), self.n_radii)
        U = rng.standard_normal((self.n_radii, self.n_directions, nc, self.dim))
        Bdir = rng.standard_normal((self.n_radii, self.n_directions, nc, self.dim))
        if self.symmetric and nc == self.dim:
            U = 0.5 * (U + np.swapaxes(U, -1, -2))
            Bdir = 0.5 * (Bdir + np.swapaxes(Bdir, -1, -2))
        U = U / tensor_norm(U)[..., None, None]
        Bdir = Bdir / tensor_norm(Bdir)[..., None, None]
        T = radii[:, None, None, None] * U
        return radii, T, Bdir


@dataclass
class StructureReport:
    """Outcome of certifying the structural inequalities on a sample cloud.

    ``worst_violation`` is the largest signed violation across every check;
    a value <= 0 means every inequality held on every sample.
    """

    coercivity_ok: bool
    boundedness_ok: bool
    h_sandwich_ok: bool
    asym_symmetry_ok: Optional[bool]
    uhlenbeck_ok: Optional[bool]
    bifu_exponent: Optional[float]
    bifu_admissible: Optional[bool]
    worst_violation: float
    sample_count: int
    c0_empirical: float
    smooth_ok: bool

    def rows(self):
        """Flat (name, value) pairs for table emission."""
        return [
            ("coercivity_ok", self.coercivity_ok),
            ("boundedness_ok", self.boundedness_ok),
            ("h_sandwich_ok", self.h_sandwich_ok),
            ("asym_symmetry_ok", self.asym_symmetry_ok),
            ("uhlenbeck_ok", self.uhlenbeck_ok),
            ("bifu_exponent", self.bifu_exponent),
            ("bifu_admissible", self.bifu_admissible),
            ("worst_violation", self.worst_violation),
            ("sample_count", self.sample_count),
            ("c0_empirical", self.c0_empirical),
            ("smooth_ok", self.smooth_ok),
        ]


def check_structure(law, sampler: StructureSampler) -> StructureReport:
    """Numerically certify the structural assumptions of a law.

    Each inequality is tested at every sample; the report records the worst
    signed violation (positive means violated).  The decay exponent of the
    monotonicity floor is estimated by a least-squares fit of ``log h(s)``
    against ``-q log(1 + s)`` over the tail radii and flagged admissible when
    ``q < 1 + 2/d`` (d >= 3) or ``q <= 2`` (d = 2).
    """
    radii, T, Bdir = sampler.draw()
    s = tensor_norm(T)
    DT = law.D(T)
    tol = 1e-12

    # coercivity (lower growth bound on D(T):T)
    coerc_viol = law.C1 * s - law.C0 - _dot(DT, T)
    c0_emp = float(max(0.0, np.max(law.C1 * s - _dot(DT, T))))

    # uniform boundedness of D
    bound_viol = tensor_norm(DT) - law.C2

    # h-monotone sandwich of the derivative quadratic form
    quad = law.A_quad(T, Bdir)
    b2 = np.sum(Bdir * Bdir, axis=(-2, -1))
    sandwich_lower = law.h(s) * b2 - quad
    sandwich_upper = quad - law.C2 * b2 / (1.0 + s)
    sandwich_viol = np.maximum(sandwich_lower, sandwich_upper)

    # asymptotic symmetry of the derivative
    smooth = bool(getattr(law, "smooth", True))
    if smooth:
        M = law.A_matrix(T)
        skew = M - np.swapaxes(M, -1, -2)
        # |A^s - A|^2 = |skew/2|^2
        asym2 = 0.25 * np.sum(skew * skew, axis=(-2, -1))
        asym_viol = asym2 / law.h(s) - law.C2 / (1.0 + s)
        asym_worst = float(np.max(asym_viol))
        asym_ok = asym_worst <= tol
    else:
        asym_worst = -np.inf
        asym_ok = None

    # asymptotic Uhlenbeck structure
    cu = getattr(law, "uhlenbeck_constant", law.C2)
    try:
        g = law.g_weight(s)
        has_g = True
    except InvalidInput:
        has_g = False
    if has_g:
        uh_a4 = g - cu * (1.0 + s)
        resid = g[..., None, None] * DT - T
        uh_a5 = np.sum(resid * resid, axis=(-2, -1)) / law.h(s) - cu * (1.0 + s ** 3)
        uh_worst = float(max(np.max(uh_a4), np.max(uh_a5)))
        uh_ok = uh_worst <= tol * float(np.max(1.0 + s ** 3))
    else:
        uh_worst = -np.inf
        uh_ok = None

    # decay-exponent fit on the tail half of the radius ladder
    tail = radii[radii.size // 2:]
    logh = np.log(law.h(tail))
    slope, _ = np.polyfit(np.log1p(tail), logh, 1)
    q = float(-slope)
    d = sampler.dim
    if d >= 3:
        bifu_adm = q < 1.0 + 2.0 / d
    elif d == 2:
        bifu_adm = q <= 2.0
    else:
        bifu_adm = None

    worst = float(
        max(
            np.max(coerc_viol),
            np.max(bound_viol),
            np.max(sandwich_viol),
            asym_worst,
            uh_worst,
        )
    )
    return StructureReport(
        coercivity_ok=bool(np.max(coerc_viol) <= tol * float(np.max(1.0 + s))),
        boundedness_ok=bool(np.max(bound_viol) <= tol),
        h_sandwich_ok=bool(np.max(sandwich_viol) <= tol),
        asym_symmetry_ok=asym_ok,
        uhlenbeck_ok=uh_ok,
        bifu_exponent=q,
        bifu_admissible=bifu_adm,
        worst_violation=worst,
        sample_count=int(s.size),
        c0_empirical=c0_emp,
        smooth_ok=smooth,
    )
