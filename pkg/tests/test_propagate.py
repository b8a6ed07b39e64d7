import json

import numpy as np
import pytest

from qkh.bath import BathSpec, single_mode_bath
from qkh.drive import DriveSpec, Envelope
from qkh.errors import ConfigError, DimensionBudgetError, StabilityError, TaylorRemainderError
from qkh.hilbert import (
    Coherent,
    CompositeState,
    FockSpace,
    GaussianPacket,
    PotentialSpec,
    SpatialGrid,
    Squeezed,
    TrapGround,
    Vacuum,
    fock_amplitudes,
    gaussian_packet,
    prepare_state,
)
from qkh.propagate import (
    Absorber,
    ObservableSeries,
    PropagatorConfig,
    escape_probability,
    evolve_continuum,
    evolve_final,
    evolve_lab,
    evolve_scalar,
    fidelity,
    min_quadrature_variance,
    quadrature_variances,
    shaken_trap_ehrenfest,
)

PULSE = Envelope("sin_squared", 0.0, 2 * np.pi)
GRID = SpatialGrid(128, -10, 10)
HARM = PotentialSpec.harmonic(1.0)


def _ground(n_cut=4, osc=Vacuum(), grid=GRID, pot=HARM):
    return prepare_state(grid, FockSpace(n_cut), TrapGround("analytic" if pot.is_quadratic else "imaginary_time"), osc, pot)


def test_config_validation():
    with pytest.raises(ConfigError):
        PropagatorConfig(dt=0)
    with pytest.raises(ConfigError):
        PropagatorConfig(scheme="leapfrog")
    with pytest.raises(ConfigError):
        Absorber(onset=1.0)
    with pytest.raises(ConfigError):
        PropagatorConfig(dt=1e-6, max_steps=10).steps(0, 1)
    n, dt = PropagatorConfig(dt=0.3).steps(0, 1)
    assert n == 4 and dt == 0.25


def test_stationary_ground_state_without_drive():
    s = _ground()
    spec = DriveSpec(0.0, 1.0, PULSE)
    out, series = evolve_lab(s, HARM, spec, PropagatorConfig(dt=0.01), 0, 2 * np.pi)
    for ch in ("norm", "x_mean", "p_mean", "particle_energy", "photon_number", "var_X", "var_P"):
        v = series[ch]
        assert np.ptp(v) < 1e-8, ch
    assert fidelity(out, s) == pytest.approx(1.0, abs=1e-8)


def test_free_spreading_matches_analytic_width():
    g = SpatialGrid(512, -40, 40)
    s0 = 0.7
    psi0 = gaussian_packet(g, 0.0, 0.0, s0)
    widths = []

    def obs(t, p):
        d = np.abs(p) ** 2
        d /= d.sum()
        widths.append((t, np.sqrt(np.sum(g.x**2 * d) - np.sum(g.x * d) ** 2)))

    evolve_scalar(psi0, g, lambda t: np.zeros(g.n_points), 0, 4.0, 400, obs, 100)
    for t, w in widths:
        exact = s0 * np.sqrt(1 + (t / (2 * s0**2)) ** 2)
        assert abs(w - exact) / exact < 1e-6


def test_lab_frame_matches_ehrenfest_for_harmonic_trap():
    spec = DriveSpec(0.1, 1.3, PULSE)
    beta = 0.6 + 0.2j
    s = prepare_state(GRID, FockSpace(14), GaussianPacket(0.5, 0.0, 1 / np.sqrt(2)), Coherent(beta))
    cfg = PropagatorConfig(dt=0.002, record_every=250)
    _, series = evolve_lab(s, HARM, spec, cfg, 0, 2 * np.pi)
    x, p, _ = shaken_trap_ehrenfest(spec, 1.0, 0.5, 0.0, beta, series["t"])
    assert np.max(np.abs(series["x_mean"] - x)) < 1e-5
    assert np.max(np.abs(series["p_mean"] - p)) < 1e-5
    assert np.ptp(series["norm"]) < 1e-10


def test_split_step_and_crank_nicolson_agree():
    spec = DriveSpec(0.1, 1.0, PULSE)
    g = SpatialGrid(128, -8, 8)
    s = _ground(10, Coherent(0.5), grid=g)
    a, _ = evolve_lab(s, HARM, spec, PropagatorConfig(dt=0.005), 0, np.pi / 2)
    b, _ = evolve_lab(s, HARM, spec, PropagatorConfig(dt=0.005, scheme="crank_nicolson"), 0, np.pi / 2)
    assert fidelity(a, b) > 1 - 1e-6


def test_final_frame_zero_coupling_is_bare_trap():
    spec = DriveSpec(0.0, 1.0, PULSE)
    pot = PotentialSpec.gaussian_well(2.0, 1.0)
    psi = gaussian_packet(GRID, 0.3, 0.2, 0.8)
    amp = np.zeros((GRID.n_points, 3), complex)
    amp[:, 0] = psi
    s = CompositeState(GRID, amp)
    out, _ = evolve_final(s, pot, spec, 1, PropagatorConfig(dt=0.01))
    bare = evolve_scalar(psi, GRID, lambda t: pot(GRID.x), 0, 2 * np.pi, 629)
    assert np.max(np.abs(out.amplitudes[:, 0] - bare)) < 1e-10
    assert np.max(np.abs(out.amplitudes[:, 1:])) == 0


def test_final_order0_classical_limit_matches_dipole_frame():
    from qkh.gauge import ClassicalTrajectory, classical_dipole_potential

    ell, beta = 1e-5, 1e4 * np.exp(0.4j)
    spec = DriveSpec(ell, 1.0, PULSE)
    pot = PotentialSpec.gaussian_well(2.0, 1.0)
    g = SpatialGrid(256, -15, 15)
    s = prepare_state(g, FockSpace(4), TrapGround(), Vacuum(), pot)
    cfg = PropagatorConfig(dt=2 * np.pi / 2000, record_every=100)
    _, series = evolve_final(s, pot, spec, 0, cfg, displacement=beta)
    traj = ClassicalTrajectory.from_coherent(spec, beta)
    xs = []
    evolve_scalar(
        s.amplitudes[:, 0], g, classical_dipole_potential(pot, g, traj), 0, 2 * np.pi, 2000,
        lambda t, p: xs.append(np.sum(g.x * np.abs(p) ** 2) * g.spacing), 100,
    )
    assert np.max(np.abs(series["x_mean"] - np.array(xs))) < 1e-4


def test_norm_constant_without_absorber_and_decreasing_with():
    spec = DriveSpec(0.1, 1.0, PULSE)
    pot = PotentialSpec.gaussian_well(1.0, 1.0)
    s = prepare_state(GRID, FockSpace(14), GaussianPacket(0, 2.0, 0.7), Coherent(0.5), pot)
    _, ser = evolve_final(s, pot, spec, 1, PropagatorConfig(dt=0.01))
    assert np.ptp(ser["norm"]) < 1e-6
    _, ser = evolve_final(s, pot, spec, 1, PropagatorConfig(dt=0.01, absorber=Absorber(5.0, 0.6)))
    assert np.all(np.diff(ser["norm"]) <= 1e-14)
    assert ser["norm"][-1] < 0.999


def test_escape_probability_limits():
    amp = np.zeros((GRID.n_points, 2), complex)
    amp[:, 0] = gaussian_packet(GRID, 0.0, 0.0, 0.5)
    s = CompositeState(GRID, amp)
    assert escape_probability(s, (-8, 8)) < 1e-14
    assert escape_probability(s, (6, 9)) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValueError):
        escape_probability(s, (-11, 0))


def test_quadrature_variances_examples():
    n = 40
    vac = np.zeros(n)
    vac[0] = 1
    assert np.allclose(quadrature_variances(np.outer(vac, vac)), (0.5, 0.5, 0.0), atol=1e-15)
    v = fock_amplitudes(Squeezed(0.3), n)
    vx, vp, c = quadrature_variances(np.outer(v, v.conj()))
    assert vx == pytest.approx(np.exp(-0.6) / 2, rel=1e-9)
    assert vp == pytest.approx(np.exp(0.6) / 2, rel=1e-9)
    assert abs(c) < 1e-12
    # rotated squeezing: min variance is invariant
    v = fock_amplitudes(Squeezed(0.3, 1.1), n)
    assert min_quadrature_variance(np.outer(v, v.conj())) == pytest.approx(np.exp(-0.6) / 2, rel=1e-9)


def test_fidelity_examples():
    a = np.array([1, 0], complex)
    b = np.array([0, 1], complex)
    assert fidelity(a, a) == 1.0
    assert fidelity(a, b) == 0.0
    assert fidelity(a, (a + b) / np.sqrt(2)) == pytest.approx(0.5)


def test_series_monotone_and_csv_sidecar(tmp_path):
    ser = ObservableSeries(meta={"frame": "lab"})
    ser.append(0.0, a=1.0)
    ser.append(0.5, a=2.0)
    with pytest.raises(ValueError):
        ser.append(0.1, a=3.0)
    path = ser.to_csv(tmp_path / "obs.csv", {"seed": 1})
    side = json.loads(path.with_suffix(".json").read_text())
    assert side["columns"] == ["t", "a"] and side["frame"] == "lab" and side["seed"] == 1
    assert path.read_text().splitlines()[0] == "t,a"


def test_taylor_remainder_escalation_and_functional_mode():
    pot = PotentialSpec.gaussian_well(2.0, 0.5)
    spec = DriveSpec(1.0, 1.0, PULSE)
    s = _ground(8, Vacuum(), pot=pot)
    with pytest.raises(TaylorRemainderError):
        evolve_lab(s, pot, spec, PropagatorConfig(dt=0.01), 0, np.pi)
    out, ser = evolve_lab(s, pot, spec, PropagatorConfig(dt=0.01, potential_mode="functional"), 0, 0.1)
    assert ser.meta["coupling_rule"] == "functional"
    # small coupling passes with an escalated Taylor order
    _, ser = evolve_lab(s, pot, DriveSpec(1e-3, 1.0, PULSE), PropagatorConfig(dt=0.01), 0, 0.1)
    assert ser.meta["coupling_rule"] == "taylor" and 2 <= ser.meta["taylor_order"] <= 4


def test_taylor_matches_functional_for_small_coupling():
    pot = PotentialSpec.gaussian_well(2.0, 1.0)
    spec = DriveSpec(2e-3, 1.0, PULSE)
    s = _ground(10, Coherent(0.5), pot=pot)
    a, _ = evolve_lab(s, pot, spec, PropagatorConfig(dt=0.01), 0, np.pi)
    b, _ = evolve_lab(s, pot, spec, PropagatorConfig(dt=0.01, potential_mode="functional"), 0, np.pi)
    assert fidelity(a, b) > 1 - 1e-10


def test_stability_audit_rejects_large_step():
    spec = DriveSpec(0.5, 1.0, PULSE)
    s = prepare_state(GRID, FockSpace(12), GaussianPacket(0, 0, 1.0), Coherent(1.0))
    with pytest.raises(StabilityError):
        evolve_final(s, HARM, spec, 0, PropagatorConfig(dt=1.5))


def test_continuum_empty_packet_ground_state_is_stationary():
    bath = BathSpec((0.9, 1.1), (0.0, 0.0), 0.2, n_cut=3)
    g = SpatialGrid(64, -8, 8)
    psi = _ground(1 + 1, grid=g).amplitudes[:, 0]
    amp = np.zeros((64, bath.dim), complex)
    amp[:, 0] = psi
    s = CompositeState(g, amp)
    cfg = PropagatorConfig(dt=0.005, scheme="split_step_spectral")
    out, ser = evolve_continuum(s, HARM, bath, cfg, 0, 2.0)
    assert np.ptp(ser["x_mean"]) < 1e-8 and np.ptp(ser["particle_energy"]) < 1e-8
    assert fidelity(out, s) > 1 - 1e-10


def test_continuum_budget():
    bath = BathSpec((1.0,), (0.1,), 0.1, n_cut=16)
    g = SpatialGrid(2**19, -10, 10)
    s = CompositeState(g, np.ones((g.n_points, 16), complex))
    with pytest.raises(DimensionBudgetError):
        evolve_continuum(s, HARM, bath, None, 0, 1)


def test_continuum_single_mode_matches_lab():
    spec = DriveSpec(0.2, 1.0, None)
    bath = single_mode_bath(spec, n_cut=10)
    g = SpatialGrid(64, -8, 8)
    s = prepare_state(g, FockSpace(10), TrapGround("analytic"), Coherent(0.4), HARM)
    cfg = PropagatorConfig(dt=0.01, scheme="crank_nicolson", record_every=50)
    a, _ = evolve_lab(s, HARM, spec, cfg, 0, 1.0)
    b, ser = evolve_continuum(s, HARM, bath, cfg, 0, 1.0)
    assert np.max(np.abs(a.amplitudes - b.amplitudes)) < 1e-10
    assert np.ptp(ser["energy"]) / abs(ser["energy"][0]) < 1e-10
