import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkh.bath import CouplingDensity, discretize, single_mode_bath
from qkh.drive import DriveSpec, Envelope
from qkh.effective import (
    EffectiveField,
    alpha_R_ddot,
    alpha_R_dot,
    bch_termination_check,
    commutator_kernel,
    correction_norms,
    ell_for_epsilon,
    epsilon_report,
    export_kernel_csv,
    f_kernel_bruteforce,
    f_kernel_continuum,
    f_kernel_single_mode,
    regime_verdict,
)
from qkh.errors import RegimeViolationError
from qkh.drive import alpha_i_ddot, alpha_i_dot

PULSE = Envelope("sin_squared", 0.0, 2 * np.pi)


def test_kernel_vanishes_on_diagonal_and_is_antisymmetric():
    spec = DriveSpec(0.3, 1.3, PULSE)
    rng = np.random.default_rng(0)
    for tp, t in rng.uniform(0, 2 * np.pi, size=(20, 2)):
        assert commutator_kernel(spec, t, t) == 0
        a = commutator_kernel(spec, tp, t)
        assert a.real == 0
        assert a == -commutator_kernel(spec, t, tp)


def test_closed_form_magnitude_at_quarter_period():
    spec = DriveSpec(0.2, 2.0, None)
    t = 0.4
    tp = t + (math.pi / 2) / 2.0
    val = f_kernel_single_mode(spec, tp, t)
    assert abs(val) == pytest.approx(2 * 0.2**2 * 2.0**2, rel=1e-14)
    assert f_kernel_single_mode(spec, t, t) == 0


def test_closed_form_requires_slow_envelope():
    with pytest.raises(RegimeViolationError):
        f_kernel_single_mode(DriveSpec(0.2, 1.0, PULSE), 1.0, 2.0)


def test_closed_form_matches_exact_for_slow_envelope():
    spec = DriveSpec(0.2, 3.0, Envelope("sin_squared", 0, 40.0), slow_envelope=True)
    for tp, t in [(3.0, 7.1), (20.0, 12.5), (33.3, 1.0)]:
        assert commutator_kernel(spec, tp, t) == pytest.approx(f_kernel_single_mode(spec, tp, t), abs=1e-14)


def test_bruteforce_kernel_zero_drive():
    spec = DriveSpec(0.0, 1.0, PULSE)
    assert f_kernel_bruteforce(spec, 1.0, 2.0) == (0, 0)


@settings(max_examples=40, deadline=None)
@given(tp=st.floats(0, 2 * np.pi), t=st.floats(0, 2 * np.pi), ell=st.floats(0.01, 1.0), omega=st.floats(0.3, 3.0))
def test_bruteforce_kernel_is_c_number(tp, t, ell, omega):
    spec = DriveSpec(ell, omega, PULSE)
    scalar, defect = f_kernel_bruteforce(spec, tp, t, 24)
    assert defect < 1e-12
    assert abs(scalar - commutator_kernel(spec, tp, t)) <= 1e-10 * max(1.0, abs(scalar))


@settings(max_examples=25, deadline=None)
@given(tp=st.floats(0, 2 * np.pi), t=st.floats(0, 2 * np.pi))
def test_bch_identities(tp, t):
    d = bch_termination_check(DriveSpec(0.4, 1.2, PULSE), tp, t, 16)
    assert d.nested < 1e-10
    assert d.commutator < 1e-10
    # the truncation edge is where the defect lives
    assert np.all(d.level_profile[:12] < 1e-10)


def test_bch_zero_drive():
    d = bch_termination_check(DriveSpec(0.0, 1.2, PULSE), 1.0, 2.0)
    assert d.nested == 0 and d.commutator == 0


def test_epsilon_examples():
    a = math.sqrt(1 / (2 * 1.0 * 2.0))
    assert epsilon_report(1.0, 2.0, a).epsilon == pytest.approx(0.5, rel=1e-15)
    assert epsilon_report(1.0, 2.0, a * math.sqrt(2)).epsilon == pytest.approx(1.0, rel=1e-15)
    assert regime_verdict(0.05) == "perturbative"
    assert regime_verdict(0.5) == "marginal"
    assert regime_verdict(5) == "nonperturbative"
    assert epsilon_report(1.0, 1.0, ell_for_epsilon(0.07, 1.0)).epsilon == pytest.approx(0.07)


@settings(max_examples=30, deadline=None)
@given(m=st.floats(0.1, 10), omega=st.floats(0.1, 10), ell=st.floats(0.0, 2.0), s=st.floats(0.1, 10))
def test_epsilon_rescaling_invariance(m, omega, ell, s):
    e1 = epsilon_report(m, omega, ell).epsilon
    e2 = epsilon_report(s * m, omega, ell / math.sqrt(s)).epsilon
    assert e2 == pytest.approx(e1, rel=1e-12, abs=1e-300)


def test_order_zero_is_alpha_i_dot():
    spec = DriveSpec(0.2, 1.0, PULSE)
    for t in (0.5, 3.0):
        assert np.array_equal(alpha_R_dot(spec, 0, t, 8), alpha_i_dot(spec, t, 8))
        assert np.array_equal(alpha_R_ddot(spec, 0, t, 8), alpha_i_ddot(spec, t, 8))


def test_zero_drive_gives_zero_at_all_orders():
    spec = DriveSpec(0.0, 1.0, PULSE)
    for k in range(3):
        assert not np.any(alpha_R_dot(spec, k, 2.0, 6))
        assert not np.any(alpha_R_ddot(spec, k, 2.0, 6))


def test_separable_matches_nested_quadrature():
    spec = DriveSpec(0.3, 1.0, PULSE)
    for order in (1, 2):
        sep = EffectiveField(spec, order, "separable")
        nes = EffectiveField(spec, order, "nested")
        for t in (1.3, 4.0):
            ref = abs(sep.coeff_dot(t)[0])
            assert abs(sep.coeff_dot(t)[0] - nes.coeff_dot(t)[0]) / ref < 1e-8
            assert abs(sep.coeff_ddot(t)[0] - nes.coeff_ddot(t)[0]) / abs(sep.coeff_ddot(t)[0]) < 1e-8


def test_multi_mode_separable_matches_nested():
    modes = [DriveSpec(0.2, 1.0, PULSE), DriveSpec(0.15, 1.7, PULSE)]
    sep = EffectiveField(modes, 2, "separable")
    nes = EffectiveField(modes, 2, "nested")
    t = 3.3
    assert np.allclose(sep.coeff_dot(t), nes.coeff_dot(t), rtol=1e-8, atol=0)


@pytest.mark.parametrize("order", [1, 2])
def test_ddot_is_time_derivative(order):
    spec = DriveSpec(0.3, 1.0, PULSE)
    fld = EffectiveField(spec, order)
    h = 1e-5 / spec.omega
    for t in (1.1, 3.9, 5.5):
        fd = (fld.coeff_dot(t + h)[0] - fld.coeff_dot(t - h)[0]) / (2 * h)
        ref = fld.coeff_ddot(t)[0]
        assert abs(fd - ref) / abs(ref) < 1e-5


def test_correction_is_quadratic_in_ell():
    t = 4.0
    rel = []
    for ell in (0.02, 0.04):
        spec = DriveSpec(ell, 1.0, PULSE)
        lead = abs(complex(spec.coeff_ddot(t)))
        corr = abs(EffectiveField(spec, 1).coeff_ddot(t)[0] - complex(spec.coeff_ddot(t)))
        rel.append(corr / lead)
    assert rel[1] / rel[0] == pytest.approx(4.0, rel=1e-3)


def test_each_order_is_smaller_by_epsilon():
    spec = DriveSpec(ell_for_epsilon(0.02, 1.0), 1.0, PULSE)
    out = correction_norms(spec, [2.0, 4.0], order=2)
    assert np.all(out["order1_correction"] < 0.1 * out["order0"])
    assert np.all(out["order2_correction"] < 0.1 * out["order1_correction"])


def test_series_matches_conjugation_oracle_small_eps():
    from qkh.gauge import conjugation_oracle
    from qkh.hilbert import FockSpace

    spec = DriveSpec(ell_for_epsilon(0.01, 1.0), 1.0, PULSE)
    t = 0.6 * 2 * np.pi
    oracle = conjugation_oracle(spec, t, 16, 2000)[:8, :8]
    scale = np.linalg.norm(oracle, 2)
    errs = [np.linalg.norm(alpha_R_dot(spec, k, t, FockSpace(16))[:8, :8] - oracle, 2) / scale for k in range(3)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-5


def test_continuum_kernel_narrow_peak_reproduces_single_mode():
    spec = DriveSpec(0.25, 1.3, None)
    bath = single_mode_bath(spec)
    for tp, t in [(0.3, 1.7), (5.0, 2.2)]:
        assert f_kernel_continuum(bath, tp, t) == pytest.approx(complex(f_kernel_single_mode(spec, tp, t)), abs=1e-13)
    assert f_kernel_continuum(bath, 1.0, 1.0) == 0


def test_continuum_kernel_antisymmetric_and_midpoint_rule():
    dens = CouplingDensity("gaussian", amplitude=0.3, center=1.0, width=0.2)
    bath = discretize(dens, (0.2, 1.8), M=400, n_cut=2)
    tp, t = 2.0, 0.7
    assert f_kernel_continuum(bath, tp, t) == -f_kernel_continuum(bath, t, tp)
    from scipy.integrate import quad

    ref = quad(lambda w: -2 * dens(w) ** 2 * w**2 * math.sin(w * (tp - t)), 0.2, 1.8, epsabs=1e-13)[0]
    assert f_kernel_continuum(bath, tp, t).imag == pytest.approx(ref, rel=1e-4)


def test_export_kernel_csv(tmp_path):
    spec = DriveSpec(0.2, 1.0, PULSE)
    times = np.linspace(0, 2 * np.pi, 4)
    path = export_kernel_csv(tmp_path / "k.csv", spec, times)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t_prime", "t", "im_F"]
    assert len(rows) == 1 + 16
    assert float(rows[1][2]) == 0.0
