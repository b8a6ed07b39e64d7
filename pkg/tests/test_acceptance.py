"""Acceptance suite: one test per criterion, tolerances pinned below.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they finish; a summary block is printed at the end either way.
"""
import time

import numpy as np
import pytest

from qkh.bath import BathSpec, single_mode_bath
from qkh.drive import DriveSpec, Envelope
from qkh.effective import (
    alpha_R_dot,
    bch_termination_check,
    ell_for_epsilon,
    f_kernel_bruteforce,
    f_kernel_single_mode,
)
from qkh.gauge import (
    ClassicalTrajectory,
    apply_U_half,
    classical_dipole_potential,
    classical_frames,
    conjugation_oracle,
    covariance_oracle,
    gauge_equivalence_fidelity,
)
from qkh.hilbert import (
    Coherent,
    CompositeState,
    FockSpace,
    PotentialSpec,
    SpatialGrid,
    TrapGround,
    Vacuum,
    ground_state,
    prepare_state,
    reduced_oscillator,
)
from qkh.optomech import convention_report, map_to_qkh, rb87_setting
from qkh.propagate import (
    PropagatorConfig,
    evolve_continuum,
    evolve_final,
    evolve_lab,
    evolve_scalar,
    min_quadrature_variance,
    quadrature_variances,
)

# pinned tolerances
C1_TOL, C1_RUNTIME = 1e-6, 60.0
C2_SLOPE, C2_SLOPE_TOL, C2_RUNTIME = 2.0, 0.15, 600.0
C3_DEFECT, C3_SCALAR = 1e-12, 1e-10
C4_TOL = 1e-10
C5_SLOPE_TOL = 0.1
C6_TOL = 1e-6
C7_RANGE, C7_RUNTIME = (0.03, 0.3), 1.0
C8_TOL = 1e-8
C9_SLOPE, C9_SLOPE_TOL = -1.0, 0.3


def _report(record_property, n, ok, detail):
    record_property("detail", detail)
    print(f"\ncriterion {n} [{'PASS' if ok else 'FAIL'}] {detail}")


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@pytest.mark.criterion(1, "classical frames related by the trap shift")
def test_criterion_1_classical_equivalence(record_property):
    start = time.perf_counter()
    grid = SpatialGrid(1024, -40, 40)
    pot = PotentialSpec.gaussian_well(1.0, 1.0)
    psi0, _ = ground_state(grid, pot)
    traj = ClassicalTrajectory(0.5, 1.0, Envelope("sin_squared", 0.0, 4 * np.pi))
    errs = {}
    for n in (5000, 10000):
        t, x_lab, x_dip, _, _ = classical_frames(psi0, grid, pot, traj, 0.0, 4 * np.pi, n, n // 100)
        errs[n] = float(np.max(np.abs(x_lab - (x_dip + traj.derivatives(t)[0]))))
    runtime = time.perf_counter() - start
    ok = errs[10000] < C1_TOL and errs[5000] < C1_TOL and runtime < C1_RUNTIME
    _report(record_property, 1, ok, f"max|<x>_lab - <x>_dip - alpha| = {errs[10000]:.2e} (5000 steps: {errs[5000]:.2e}), {runtime:.1f} s")
    assert ok


@pytest.mark.criterion(2, "quantum gauge equivalence scales as eps^2")
def test_criterion_2_quantum_gauge_equivalence(record_property):
    start = time.perf_counter()
    grid = SpatialGrid(256, -12, 12)
    pot = PotentialSpec.harmonic(1.5)
    state = prepare_state(grid, FockSpace(8), TrapGround("analytic"), Vacuum(), pot)
    T = 2 * np.pi
    cfg = PropagatorConfig(dt=T / 3000, record_every=10**9)
    eps = np.geomspace(3e-3, 1e-1, 5)
    infid = []
    for e in eps:
        spec = DriveSpec(ell_for_epsilon(e, 1.0), 1.0, Envelope("sin_squared", 0.0, T))
        infid.append(1 - gauge_equivalence_fidelity(state, spec, pot, T, 1, cfg))
    infid = np.array(infid)
    slope = _slope(eps, infid)
    c = float(np.max(infid / eps**2))
    at_1e2 = float(np.interp(np.log(1e-2), np.log(eps), infid))
    runtime = time.perf_counter() - start
    ok = abs(slope - C2_SLOPE) <= C2_SLOPE_TOL and runtime < C2_RUNTIME
    _report(
        record_property, 2, ok,
        f"slope {slope:.3f}, 1-F at eps=1e-2 ~ {at_1e2:.2e} <= c eps^2 with c = {c:.2f}, {runtime:.0f} s",
    )
    assert ok


@pytest.mark.criterion(3, "commutator kernel is a c-number")
def test_criterion_3_kernel(record_property):
    spec = DriveSpec(0.4, 2.0, Envelope("sin_squared", 0.0, 20.0), slow_envelope=True)
    rng = np.random.default_rng(20261015)
    pairs = rng.uniform(0.0, 20.0, size=(100, 2))
    worst_defect = worst_scalar = worst_mag = 0.0
    for tp, t in pairs:
        scalar, defect = f_kernel_bruteforce(spec, tp, t, n_cut=24)
        closed = complex(f_kernel_single_mode(spec, tp, t))
        worst_defect = max(worst_defect, defect)
        worst_scalar = max(worst_scalar, abs(scalar - closed))
        worst_mag = max(worst_mag, abs(abs(scalar) - abs(closed)))
    ok = worst_defect < C3_DEFECT and worst_mag < C3_SCALAR and worst_scalar < C3_SCALAR
    _report(
        record_property, 3, ok,
        f"max defect {worst_defect:.1e}, max ||F|-|closed|| {worst_mag:.1e}, max |F - closed| (signed) {worst_scalar:.1e}",
    )
    assert ok


@pytest.mark.criterion(4, "BCH series terminates")
def test_criterion_4_bch(record_property):
    rng = np.random.default_rng(4)
    specs = [
        DriveSpec(0.4, 1.0, Envelope("sin_squared", 0.0, 2 * np.pi)),
        DriveSpec(0.25, 1.7, Envelope("flat_top_cosine_ramps", 0.0, 2 * np.pi, ramp=2.0)),
        DriveSpec(0.6, 0.8, Envelope("gaussian", 0.0, 2 * np.pi)),
    ]
    nested = comm = 0.0
    for spec in specs:
        for tp, t in rng.uniform(0, 2 * np.pi, size=(20, 2)):
            d = bch_termination_check(spec, tp, t, n_cut=16)
            nested, comm = max(nested, d.nested), max(comm, d.commutator)
    ok = nested < C4_TOL and comm < C4_TOL
    _report(record_property, 4, ok, f"max ||[Z,[Z,X]]|| {nested:.1e}, max ||[Z,X] - 2F alpha_dot|| {comm:.1e}")
    assert ok


@pytest.mark.criterion(5, "series residual after order k scales as eps^(k+1)")
def test_criterion_5_series_order(record_property):
    T = 2 * np.pi
    t = 0.6 * T
    fock = FockSpace(16)
    eps = np.geomspace(1e-3, 1e-1, 5)
    res = {k: [] for k in range(3)}
    for e in eps:
        spec = DriveSpec(ell_for_epsilon(e, 1.0), 1.0, Envelope("sin_squared", 0.0, T))
        oracle = conjugation_oracle(spec, t, n_cut=16, n_steps=4000)[:8, :8]
        scale = np.linalg.norm(oracle, 2)
        for k in range(3):
            res[k].append(np.linalg.norm(alpha_R_dot(spec, k, t, fock)[:8, :8] - oracle, 2) / scale)
    slopes = [_slope(eps, res[k]) for k in range(3)]
    ok = all(abs(slopes[k] - (k + 1)) <= C5_SLOPE_TOL for k in range(3))
    _report(record_property, 5, ok, "slopes " + ", ".join(f"k={k}: {s:.3f}" for k, s in enumerate(slopes)))
    assert ok


@pytest.mark.criterion(6, "U_half squeezes the vacuum")
def test_criterion_6_squeezing(record_property):
    n_cut = 40
    grid = SpatialGrid(8, -1, 1)
    T = 2 * np.pi
    drives = [
        DriveSpec(0.1, 1.0, Envelope("sin_squared", 0.0, T)),
        DriveSpec(0.3, 1.0, Envelope("sin_squared", 0.0, T)),
        DriveSpec(0.2, 2.0, Envelope("flat_top_cosine_ramps", 0.0, T, ramp=1.5)),
        DriveSpec(0.25, 1.3, Envelope("gaussian", 0.0, T)),
        DriveSpec(0.3, 1.0, None),
    ]
    worst_dev, worst_min = 0.0, 0.0
    for spec in drives:
        t1 = T
        ts = np.linspace(0, t1, 20001)
        f = np.ones_like(ts) if spec.envelope is None else spec.envelope.derivatives(ts)[0]
        assert np.trapezoid(f**2 * spec.omega, ts) > 0.1
        amp = np.zeros((grid.n_points, n_cut), complex)
        amp[:, 0] = 1
        vac = CompositeState(grid, amp).normalize()
        n_steps = 4000
        out = apply_U_half(vac, spec, 0.0, t1, n_steps)
        rho = reduced_oscillator(out)
        vx, vp, c = quadrature_variances(rho)
        V = covariance_oracle(spec, 0.0, t1, n_steps)
        dev = float(np.max(np.abs(np.array([vx, vp, c]) - np.array([V[0, 0], V[1, 1], V[0, 1]]))))
        worst_dev = max(worst_dev, dev)
        worst_min = max(worst_min, min_quadrature_variance(rho))
    ok = worst_min < 0.5 and worst_dev < C6_TOL
    _report(record_property, 6, ok, f"largest min variance {worst_min:.6f} (< 0.5), max |cov - oracle| {worst_dev:.1e}")
    assert ok


@pytest.mark.criterion(7, "optomechanical eps under both frequency conventions")
def test_criterion_7_optomech_estimate(record_property):
    start = time.perf_counter()
    params = rb87_setting()
    mp = map_to_qkh(params)
    conv = convention_report(params)
    runtime = time.perf_counter() - start
    lo, hi = C7_RANGE
    e_ang, e_ord = conv["angular"]["epsilon"], conv["ordinary"]["epsilon"]
    ok_ang = lo <= e_ang <= hi
    ok_ord = lo <= e_ord <= hi
    ok = ok_ang and ok_ord and runtime < C7_RUNTIME and mp.slow_modulation
    _report(
        record_property, 7, ok,
        f"eps(angular) = {e_ang:.4f} {'in' if ok_ang else 'outside'} [{lo}, {hi}]; "
        f"eps(ordinary) = {e_ord:.4f} {'in' if ok_ord else 'outside'} [{lo}, {hi}]; {runtime * 1e3:.1f} ms",
    )
    assert ok


@pytest.mark.criterion(8, "continuum energy conservation and M = 1 reduction")
def test_criterion_8_continuum(record_property):
    pot = PotentialSpec.gaussian_well(2.0, 1.0)
    grid = SpatialGrid(48, -8, 8)
    psi0, _ = ground_state(SpatialGrid(64, -8, 8), pot)
    psi0 = np.interp(grid.x, SpatialGrid(64, -8, 8).x, psi0)
    bath = BathSpec((0.9, 1.0, 1.1), (0.08, 0.1, 0.08), 0.1, betas=(0.1, 0.1j, -0.1), n_cut=4)
    state = CompositeState(grid, np.outer(psi0, bath.coherent_amplitudes())).normalize()
    cfg = PropagatorConfig(dt=1e-3, scheme="crank_nicolson", potential_mode="functional", record_every=500,
                           leakage_check=False)
    _, series = evolve_continuum(state, pot, bath, cfg, 0.0, 10.0)
    energy = series["energy"]
    drift = float(np.max(np.abs(energy - energy[0])) / abs(energy[0]))
    steps = int(round(10.0 / 1e-3))

    spec = DriveSpec(0.15, 1.0, None)
    one = single_mode_bath(spec, beta=0.3, n_cut=8)
    s1 = prepare_state(SpatialGrid(64, -8, 8), FockSpace(8), TrapGround(), Coherent(0.3), pot)
    cfg1 = PropagatorConfig(dt=1e-2, scheme="crank_nicolson", potential_mode="functional", record_every=100)
    a, _ = evolve_lab(s1, pot, spec, cfg1, 0.0, 5.0)
    b, _ = evolve_continuum(s1, pot, one, cfg1, 0.0, 5.0)
    diff = float(np.max(np.abs(a.amplitudes - b.amplitudes)))
    ok = drift < C8_TOL and diff < C8_TOL and steps == 10000
    _report(record_property, 8, ok, f"M=3 relative <H> drift {drift:.1e} over {steps} steps; M=1 vs single-mode max diff {diff:.1e}")
    assert ok


@pytest.mark.criterion(9, "quantum chain approaches the classical chain as 1/|beta|")
def test_criterion_9_classical_limit(record_property):
    grid = SpatialGrid(256, -15, 15)
    pot = PotentialSpec.gaussian_well(2.0, 1.0)
    T = 4 * np.pi
    env = Envelope("sin_squared", 0.0, T)
    amplitude = 0.1  # ell |beta|
    n_steps = 2000
    psi0, _ = ground_state(grid, pot)
    state = prepare_state(grid, FockSpace(8), TrapGround(), Vacuum(), pot)
    betas = [2, 4, 8, 16]
    dist = []
    for b in betas:
        spec = DriveSpec(amplitude / b, 1.0, env)
        q, _ = evolve_final(state, pot, spec, 1, PropagatorConfig(dt=T / n_steps, record_every=10**6), displacement=b)
        traj = ClassicalTrajectory.from_coherent(spec, b)
        c = evolve_scalar(psi0, grid, classical_dipole_potential(pot, grid, traj), 0.0, T, n_steps)
        overlaps = (c.conj() @ q.amplitudes) * grid.spacing
        fid = float(min(1.0, np.sum(np.abs(overlaps) ** 2) / (np.vdot(c, c).real * grid.spacing * q.norm)))
        dist.append(float(np.arccos(np.sqrt(fid))))
    slope = _slope(betas, dist)
    monotone = all(d1 > d2 for d1, d2 in zip(dist, dist[1:]))
    ok = monotone and abs(slope - C9_SLOPE) <= C9_SLOPE_TOL
    _report(
        record_property, 9, ok,
        "Bures angle " + ", ".join(f"{d:.2e}" for d in dist) + f" for |beta| = {betas}; slope {slope:.2f}",
    )
    assert ok
