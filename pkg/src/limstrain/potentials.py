"""Potentials, conjugates, recession slopes, and the safety strain check.

The potential of a law is ``F(T) = int_0^1 D(tT):T dt``, a strictly convex
function with linear growth whose gradient recovers D.  Its Legendre
conjugate ``F*`` is finite exactly on the closure of the range of D (where
it may or may not be finite on the boundary itself; evaluations near the
boundary are flagged, never classified).  The recession slope
``F_inf(U) = lim F(nU)/n`` weights singular mass in the relaxed dual
functional, and ``alpha = lim t/g(t)`` normalises strain directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .constitutive import tensor_norm, _as_tensor, invert_D
from .errors import AccuracyError, InvalidInput, OutOfRange

__all__ = [
    "PotentialValue",
    "SafetyStrainReport",
    "potential_F",
    "potential_F_radial",
    "conjugate_Fstar",
    "conjugate_Fstar_radial",
    "recession_Finf",
    "alpha_limit",
    "safety_strain_check",
]


@dataclass(frozen=True)
class PotentialValue:
    """Extended-real conjugate value.  ``math.inf`` marks +infinity;
    ``at_boundary`` is set only when the argument sat within margin of the
    range boundary and the value came from a capped-radius supremum."""

    value: float
    at_boundary: bool = False

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


@dataclass(frozen=True)
class SafetyStrainReport:
    """Whether a boundary datum's gradient stays compactly inside the range.

    ``t_c`` bounds the norm of the pre-image stress field;
    ``sufficient_condition_holds`` records the cruder ess-sup test against C1.
    """

    satisfied: bool
    t_c: float
    margin_to_range_boundary: float
    sufficient_condition_holds: bool


# ---------------------------------------------------------------------------
# the potential


def potential_F(law, T) -> float:
    """Potential ``F(T) = int_0^1 D(tT):T dt`` by adaptive quadrature.

    Absolute tolerance ``1e-10 * (1 + |T|)``; raises :class:`AccuracyError`
    with the achieved error estimate if the quadrature cannot certify it.
    F(0) = 0 exactly.
    """
    T = _as_tensor(T)
    if T.ndim != 2:
        raise InvalidInput("potential_F takes a single tensor; use potential_F_radial for fields")
    nT = float(tensor_norm(T))
    if nT == 0.0:
        return 0.0
    tol = 1e-10 * (1.0 + nT)

    if getattr(law, "is_radial", False):
        val, err = integrate.quad(lambda s: float(law.phi(s)), 0.0, nT,
                                  epsabs=0.1 * tol, epsrel=1e-13, limit=200)
    else:
        def integrand(t):
            return float(np.sum(law.D(t * T) * T))

        val, err = integrate.quad(integrand, 0.0, 1.0, epsabs=0.1 * tol,
                                  epsrel=1e-13, limit=200)
    if err > tol:
        raise AccuracyError("potential quadrature did not reach tolerance", err)
    return float(val)


# Gauss-Legendre panels for the vectorised radial path.  The profile phi is
# smooth with its curvature near the knee at s ~ 1; fixed panels there plus
# geometrically growing tail panels keep the rule spectrally accurate for
# arbitrarily large radii (each tail panel spans a fixed ratio, so the
# analyticity ellipse of phi never collapses).
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def potential_F_radial(law, s) -> np.ndarray:
    """Vectorised ``Phi(s) = int_0^s phi(r) dr`` for radial laws.

    Cross-validated against :func:`potential_F` in the test suite; used by
    the energy assemblers where per-point adaptive quadrature would be waste.
    """
    if not getattr(law, "is_radial", False):
        raise InvalidInput("potential_F_radial requires a radial law")
    s = np.asarray(s, dtype=float)
    smax = float(np.max(s)) if s.size else 0.0
    edges = [0.0, 0.5, 1.0, 2.0, 4.0]
    while edges[-1] < smax:
        edges.append(4.0 * edges[-1])
    out = np.zeros(s.shape)
    for lo_e, hi_e in zip(edges[:-1], edges[1:]):
        lo = np.minimum(s, lo_e)
        hi = np.minimum(s, hi_e)
        out += _gl_panel(law, lo, hi)
    return out


def _gl_panel(law, lo, hi):
    mid = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    nodes = mid[..., None] + half[..., None] * _GL_NODES
    vals = law.phi(nodes)
    return half * np.sum(vals * _GL_WEIGHTS, axis=-1)


# ---------------------------------------------------------------------------
# the conjugate


def conjugate_Fstar(law, B, margin: float | None = None, cap: float = 1e6) -> PotentialValue:
    """Legendre conjugate ``F*(B) = sup_T (B:T - F(T))``.

    Strictly inside the range the supremum is attained at ``T = D^{-1}(B)``
    and evaluated in closed form through the inverse; outside the range
    closure the value is +infinity.  Within ``margin`` of the boundary the
    value is a supremum over the capped radius ``cap`` and carries
    ``at_boundary=True``: the true boundary value is never classified.
    """
    B = _as_tensor(B)
    if B.ndim != 2:
        raise InvalidInput("conjugate_Fstar takes a single tensor")
    if margin is None:
        margin = law.margin
    if getattr(law, "is_radial", False):
        dist = float(law.range_distance(B))
        if dist > margin:
            T = law.invert(B)
            return PotentialValue(float(np.sum(B * T)) - potential_F(law, T), False)
        if dist < 0.0:
            return PotentialValue(math.inf, at_boundary=(-dist) <= margin)
        return PotentialValue(_sup_along_ray(law, B, cap), True)
    # generic law: try the inverse, fall back on the ray supremum near the boundary
    try:
        T = invert_D(law, B, margin=margin)
        return PotentialValue(float(np.sum(B * T)) - potential_F(law, T), False)
    except OutOfRange as err:
        if err.distance < -margin:
            return PotentialValue(math.inf, False)
        if err.distance < 0.0:
            return PotentialValue(math.inf, True)
        return PotentialValue(_sup_along_ray(law, B, cap), True)


def _sup_along_ray(law, B, cap):
    # sup_t ( |B| t - Phi(t) ) along the ray through B; concave in t.
    b = float(tensor_norm(B))
    if b == 0.0:
        return 0.0

    def neg(t):
        return -(b * t - potential_F(law, (t / b) * B))

    res = optimize.minimize_scalar(neg, bounds=(0.0, cap), method="bounded",
                                   options={"xatol": 1e-9 * cap})
    return float(-res.fun)


def conjugate_Fstar_radial(law, b) -> np.ndarray:
    """Vectorised conjugate for radial laws at radii ``b = |B|``.

    Returns +inf where ``b >= 1`` is outside the invertible range; callers
    that need boundary flags should use :func:`conjugate_Fstar`.
    """
    if not getattr(law, "is_radial", False):
        raise InvalidInput("conjugate_Fstar_radial requires a radial law")
    b = np.asarray(b, dtype=float)
    inside = b < 1.0
    bs = np.where(inside, b, 0.5)
    rho = bs * np.power(1.0 - np.power(bs, law.a), -1.0 / law.a)
    val = bs * rho - potential_F_radial(law, rho)
    return np.where(inside, val, np.inf)


# ---------------------------------------------------------------------------
# recession slope and the alpha limit


def recession_Finf(law, U) -> float:
    """Recession slope ``lim n->inf F(nU)/n`` for a unit tensor U.

    Richardson-extrapolated over the ladder n in {2^6, ..., 2^16}.  The
    raw ratios are nondecreasing for a convex F with F(0)=0; a Richardson
    spread above 1e-4 raises :class:`AccuracyError`.
    """
    U = _as_tensor(U)
    nu = float(tensor_norm(U))
    if abs(nu - 1.0) > 1e-12:
        raise InvalidInput(f"recession direction must be unit (|U| = {nu:.2e})")
    ns = 2.0 ** np.arange(6, 17)
    ratios = np.array([potential_F(law, n * U) / n for n in ns])
    rich = 2.0 * ratios[1:] - ratios[:-1]
    spread = float(np.max(np.abs(rich[-4:] - rich[-1])))
    if spread > 1e-4:
        raise AccuracyError("recession extrapolation did not settle", spread)
    return float(rich[-1])


def alpha_limit(law) -> float:
    """``alpha = lim t/g(t)`` from log-spaced samples up to 1e8.

    The tail of the ratio must be monotone; an oscillating tail raises
    :class:`AccuracyError`.  For the prototype weight the limit is 1.
    """
    t = np.logspace(2.0, 8.0, 25)
    ratios = t / law.g_weight(t)
    diffs = np.diff(ratios[-8:])
    scale = abs(float(ratios[-1])) + 1e-300
    if np.any(diffs > 1e-9 * scale) and np.any(diffs < -1e-9 * scale):
        raise AccuracyError("t/g(t) tail oscillates; no limit certified", float(ratios[-1]))
    alpha = float(ratios[-1])
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise AccuracyError("alpha limit not positive and finite", alpha)
    return alpha


# ---------------------------------------------------------------------------
# boundary-datum certification


def safety_strain_check(law, grad_u0, margin: float = 1e-6) -> SafetyStrainReport:
    """Check that a boundary datum's gradient lies compactly inside the range.

    ``grad_u0`` may be a cell tensor field or a plain array of tensors; each
    quadrature point is inverted through the law.  Satisfied means every
    point admits a pre-image ``T0`` with a uniform bound ``|T0| <= t_c`` and
    distance to the range boundary at least ``margin``.  The sufficient
    condition is the cruder ess-sup test ``sup|grad u0| < C1``.
    """
    values = getattr(grad_u0, "values", grad_u0)
    G = np.asarray(values, dtype=float)
    if G.ndim < 2:
        G = np.atleast_2d(G)
    if not np.all(np.isfinite(G)):
        raise InvalidInput("boundary datum gradient has non-finite entries")
    flat = G.reshape((-1,) + G.shape[-2:])
    sup = float(np.max(tensor_norm(flat))) if flat.size else 0.0
    sufficient = sup < law.C1

    if getattr(law, "is_radial", False):
        dist = 1.0 - sup
        ok = dist >= margin
        t_c = float(tensor_norm(law.invert(_ray_at(sup, flat)))) if ok else math.inf
        return SafetyStrainReport(ok, t_c, dist, sufficient)

    worst_dist = math.inf
    t_c = 0.0
    ok = True
    for point in flat:
        try:
            T0 = invert_D(law, point, margin=margin)
            t_c = max(t_c, float(tensor_norm(T0)))
        except OutOfRange as err:
            ok = False
            worst_dist = min(worst_dist, err.distance)
    if ok:
        worst_dist = margin  # no sharper estimate available generically
    return SafetyStrainReport(ok, t_c if ok else math.inf, worst_dist, sufficient)


def _ray_at(sup, flat):
    if sup == 0.0 or flat.size == 0:
        return np.zeros(flat.shape[-2:]) if flat.size else np.zeros((1, 1))
    idx = int(np.argmax(tensor_norm(flat)))
    return flat[idx]
