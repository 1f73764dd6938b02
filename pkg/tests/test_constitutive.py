"""Law-level checks: frozen point values, inversion round trips, and the
monotonicity/sandwich inequalities as hypothesis properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from limstrain.constitutive import (
    CustomLaw,
    PrototypeLaw,
    StructureSampler,
    check_structure,
    eval_A,
    eval_D,
    invert_D,
    monotonicity_gap,
    tensor_norm,
)
from limstrain.errors import InvalidInput, OutOfRange

E11 = np.array([[1.0, 0.0], [0.0, 0.0]])


def test_prototype_point_values():
    law = PrototypeLaw(a=2.0)
    # phi(1) = 1/sqrt(2) for a = 2
    assert eval_D(law, E11)[0, 0] == pytest.approx(math.sqrt(0.5), abs=1e-15)
    # a = 1: phi(s)/s = 1/(1+s), so |D| = 3/4 at |T| = 3
    law1 = PrototypeLaw(a=1.0)
    T = 3.0 * E11
    assert tensor_norm(eval_D(law1, T)) == pytest.approx(0.75, abs=1e-15)


def test_derivative_point_value():
    # radial direction at |T| = 1, a = 2: quad form = (1+1)^(-3/2)
    law = PrototypeLaw(a=2.0)
    _, quad = eval_A(law, E11, E11)
    assert quad == pytest.approx(2.0 ** -1.5, abs=1e-15)
    # tangential direction sees no ray correction: quad = decay = 2^(-1/2)
    B = np.array([[0.0, 1.0], [0.0, 0.0]])
    _, quad_t = eval_A(law, E11, B)
    assert quad_t == pytest.approx(2.0 ** -0.5, abs=1e-15)


def test_h_and_constants():
    law = PrototypeLaw(a=2.0)
    assert law.h(1.0) == pytest.approx(2.0 ** -1.5)
    assert law.C2 == pytest.approx(math.sqrt(2.0))
    assert law.uhlenbeck_constant == 1.0
    assert PrototypeLaw(a=0.5).uhlenbeck_constant == pytest.approx(2.0)
    assert PrototypeLaw(a=0.5).C1 == 0.5
    assert PrototypeLaw(a=1.0).C1 == 1.0


def test_bad_exponent_rejected():
    with pytest.raises(InvalidInput):
        PrototypeLaw(a=0.0)
    with pytest.raises(InvalidInput):
        PrototypeLaw(a=float("nan"))


def test_boundedness_extreme_magnitudes():
    law = PrototypeLaw(a=2.0)
    for mag in (1e-12, 1.0, 1e8, 1e300):
        D = eval_D(law, mag * E11)
        assert np.all(np.isfinite(D))
        assert tensor_norm(D) <= 1.0
    # strictly inside while the gap to 1 is representable, saturated above
    assert tensor_norm(eval_D(law, 1e6 * E11)) < 1.0
    assert tensor_norm(eval_D(law, 1e300 * E11)) == pytest.approx(1.0, abs=1e-12)


def test_invert_round_trip(rng):
    for a in (0.5, 1.0, 2.0):
        law = PrototypeLaw(a=a)
        T = rng.standard_normal((40, 2, 2)) * rng.uniform(0.1, 50.0, (40, 1, 1))
        back = invert_D(law, eval_D(law, T))
        assert np.max(tensor_norm(back - T) / (1.0 + tensor_norm(T))) < 1e-10


def test_invert_rejects_boundary():
    law = PrototypeLaw(a=2.0)
    with pytest.raises(OutOfRange) as exc:
        invert_D(law, E11)  # |B| = 1 is the range boundary
    assert exc.value.distance <= law.margin
    with pytest.raises(OutOfRange):
        invert_D(law, 1.5 * E11)


def test_custom_law_finite_difference_matches_analytic(rng):
    proto = PrototypeLaw(a=2.0)
    law = CustomLaw(D_fn=proto.D, h_fn=proto.h, C2=proto.C2)
    T = rng.standard_normal((10, 2, 2))
    B = rng.standard_normal((10, 2, 2))
    fd = law.A_apply(T, B)
    exact = proto.A_apply(T, B)
    assert np.max(tensor_norm(fd - exact)) < 1e-8


tensor_entries = st.lists(
    st.floats(min_value=-10.0, max_value=10.0, allow_nan=False), min_size=4, max_size=4
)


@given(tensor_entries, tensor_entries, st.sampled_from([0.5, 1.0, 2.0]))
@settings(max_examples=300, deadline=None)
def test_monotonicity_floor_property(t1, t2, a):
    """(D(T1)-D(T2)):(T1-T2) >= h(|T1|+|T2|) |T1-T2|^2 up to roundoff."""
    law = PrototypeLaw(a=a)
    T1 = np.array(t1).reshape(2, 2)
    T2 = np.array(t2).reshape(2, 2)
    gap = monotonicity_gap(law, T1, T2)
    scale = float(np.sum((T1 - T2) ** 2)) + 1.0
    assert gap >= -1e-12 * scale


@given(tensor_entries, tensor_entries, st.sampled_from([0.5, 1.0, 2.0]))
@settings(max_examples=300, deadline=None)
def test_sandwich_property(t, b, a):
    law = PrototypeLaw(a=a)
    T = np.array(t).reshape(2, 2)
    B = np.array(b).reshape(2, 2)
    s = float(tensor_norm(T))
    b2 = float(np.sum(B * B))
    _, quad = eval_A(law, T, B)
    assert quad >= law.h(s) * b2 - 1e-12 * (1.0 + b2)
    assert quad <= law.C2 * b2 / (1.0 + s) + 1e-12 * (1.0 + b2)


def test_structure_report_prototype_a2():
    law = PrototypeLaw(a=2.0)
    rep = check_structure(law, StructureSampler(dim=2, seed=1))
    assert rep.coercivity_ok and rep.boundedness_ok and rep.h_sandwich_ok
    assert rep.asym_symmetry_ok and rep.uhlenbeck_ok and rep.smooth_ok
    assert rep.worst_violation <= 0.0 or rep.worst_violation < 1e-9
    assert rep.sample_count == 64 * 32
    # h ~ s^-(a+1): the finite-window fit lands near 3, well above the d = 2
    # threshold of 2
    assert 2.5 < rep.bifu_exponent < 3.5
    assert rep.bifu_admissible is False


def test_structure_report_admissible_cases():
    # a = 1 is the exact case: h(s) = (1+s)^-2, so the fit recovers q = 2
    # to machine precision and the d = 2 threshold q <= 2 admits it
    rep1 = check_structure(PrototypeLaw(a=1.0), StructureSampler(dim=2, seed=2))
    assert rep1.bifu_exponent == pytest.approx(2.0, abs=1e-10)
    assert rep1.bifu_admissible is True

    rep2 = check_structure(PrototypeLaw(a=0.5), StructureSampler(dim=3, seed=3))
    assert 1.2 < rep2.bifu_exponent < 1.6  # below the d = 3 threshold 5/3
    assert rep2.bifu_admissible is True


def test_structure_rows_flat():
    rep = check_structure(PrototypeLaw(a=2.0), StructureSampler(dim=2, seed=4))
    rows = rep.rows()
    assert [r[0] for r in rows][:3] == ["coercivity_ok", "boundedness_ok", "h_sandwich_ok"]
    assert all(len(r) == 2 for r in rows)


def test_sampler_radius_floor():
    with pytest.raises(InvalidInput):
        StructureSampler(radius=10.0).draw()


def test_sampler_symmetric_draws():
    _, T, B = StructureSampler(dim=2, symmetric=True, seed=5).draw()
    assert np.max(np.abs(T - np.swapaxes(T, -1, -2))) == 0.0
    assert np.max(np.abs(tensor_norm(B) - 1.0)) < 1e-12
