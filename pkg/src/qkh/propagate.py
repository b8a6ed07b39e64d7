"""Time evolution of the particle x oscillator system in the lab, final and continuum frames.

All couplings that act on both subsystems in these frames are functions of a
single Hermitian oscillator-side operator Q(t): ``V(x - Q)`` in the lab frame,
``V(x) + x Q`` in the final frame.  Diagonalising Q once per step makes the
potential block diagonal in (grid point, Q eigenvector), so a Strang split step
costs two FFTs, two small matrix products and one exponential table.

Crank-Nicolson is offered as a second scheme.  It conserves <H> exactly for a
time-independent Hamiltonian, which is what the continuum checks need.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import splu

from . import __version__
from .drive import DriveSpec
from .effective import effective_field
from .errors import (
    ConfigError,
    DimensionBudgetError,
    DimensionMismatchError,
    StabilityError,
    TaylorRemainderError,
)
from .hilbert import (
    CompositeState,
    FockSpace,
    PotentialSpec,
    SpatialGrid,
    check_leakage,
    kinetic_apply,
    momentum_apply,
    reduced_oscillator,
)

DIMENSION_BUDGET = 2**22
SCHEMES = ("split_step_spectral", "crank_nicolson")


@dataclass(frozen=True)
class Absorber:
    """Quartic complex absorbing potential -i eta s^4 beyond ``onset`` of the half-width."""

    strength: float = 1.0
    onset: float = 0.8

    def __post_init__(self):
        if not 0 < self.onset < 1:
            raise ConfigError("absorber onset must lie strictly inside the grid (0 < onset < 1)", "absorber.onset")
        if not self.strength >= 0:
            raise ConfigError("absorber strength must be >= 0", "absorber.strength")

    def profile(self, grid: SpatialGrid) -> np.ndarray:
        xc = 0.5 * (grid.x_min + grid.x_max)
        half = 0.5 * (grid.x_max - grid.x_min)
        s = np.clip((np.abs(grid.x - xc) / half - self.onset) / (1 - self.onset), 0.0, None)
        return self.strength * s**4


@dataclass(frozen=True)
class PropagatorConfig:
    """Numerical settings shared by every propagator.

    ``potential_mode`` selects how V(x - Q) is evaluated in the lab frame:
    ``auto`` uses the exact quadratic form for a harmonic trap and a Taylor
    expansion in Q otherwise; ``taylor`` forces the expansion; ``functional``
    evaluates V at the eigenvalues of the truncated Q (exact on the truncated
    space, no remainder).
    """

    dt: float = 0.01
    scheme: str = "split_step_spectral"
    absorber: Absorber | None = None
    max_steps: int = 1_000_000
    record_every: int = 10
    taylor_order: int = 2
    taylor_max_order: int = 4
    taylor_tol: float = 1e-8
    potential_mode: str = "auto"
    trap_region: tuple[float, float] | None = None
    leakage_check: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be > 0", "dt")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}", "scheme")
        if self.potential_mode not in ("auto", "taylor", "functional"):
            raise ConfigError("potential_mode must be auto, taylor or functional", "potential_mode")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1", "record_every")
        if not 1 <= self.taylor_order <= self.taylor_max_order:
            raise ConfigError("need 1 <= taylor_order <= taylor_max_order", "taylor_order")

    def steps(self, t0: float, t1: float) -> tuple[int, float]:
        """Number of steps and the adjusted step that lands exactly on t1."""
        span = t1 - t0
        if span < 0:
            raise ValueError("t1 must not precede t0")
        if span == 0:
            return 0, self.dt
        n = max(1, math.ceil(span / self.dt - 1e-9))
        if n > self.max_steps:
            raise ConfigError(f"run needs {n} steps, above max_steps={self.max_steps}", "max_steps")
        return n, span / n

    def as_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(obj):
    if is_dataclass(obj):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class ObservableSeries:
    """Time-stamped named channels recorded during a run."""

    times: list = field(default_factory=list)
    channels: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def append(self, t: float, **values):
        if self.times and t < self.times[-1]:
            raise ValueError("observable time stamps must be monotone")
        self.times.append(float(t))
        for k, v in values.items():
            self.channels.setdefault(k, []).append(float(v))

    def __getitem__(self, name) -> np.ndarray:
        if name == "t":
            return np.asarray(self.times)
        return np.asarray(self.channels[name])

    def names(self) -> list[str]:
        return list(self.channels)

    def to_csv(self, path, manifest: dict | None = None) -> Path:
        """Write the CSV and a JSON sidecar ``<name>.json`` describing it."""
        path = Path(path)
        names = self.names()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + names)
            for i, t in enumerate(self.times):
                w.writerow([repr(t)] + [repr(self.channels[n][i]) for n in names])
        side = {
            "csv": path.name,
            "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
            "code_version": __version__,
            "columns": ["t"] + names,
            **_plain(self.meta),
            **(manifest or {}),
        }
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))
        return path


# -- observables ---------------------------------------------------------------------


def quadrature_variances(rho: np.ndarray) -> tuple[float, float, float]:
    """(Var X, Var P, symmetrised covariance) with X=(a+a^dag)/sqrt2, P=(a-a^dag)/(i sqrt2)."""
    fock = FockSpace(rho.shape[0])
    X, P = fock.quad_x, fock.quad_p
    ex = np.trace(rho @ X).real
    ep = np.trace(rho @ P).real
    vx = np.trace(rho @ X @ X).real - ex**2
    vp = np.trace(rho @ P @ P).real - ep**2
    cov = 0.5 * np.trace(rho @ (X @ P + P @ X)).real - ex * ep
    return float(vx), float(vp), float(cov)


def min_quadrature_variance(rho: np.ndarray) -> float:
    """Smallest variance over all rotated quadratures: the lower covariance eigenvalue."""
    vx, vp, c = quadrature_variances(rho)
    return float(np.linalg.eigvalsh(np.array([[vx, c], [c, vp]]))[0])


def fidelity(a, b) -> float:
    """|<a|b>|^2 / (||a||^2 ||b||^2) for states or raw amplitude arrays."""
    A = a.amplitudes if isinstance(a, CompositeState) else np.asarray(a)
    B = b.amplitudes if isinstance(b, CompositeState) else np.asarray(b)
    if A.shape != B.shape:
        raise DimensionMismatchError(f"state shapes differ: {A.shape} vs {B.shape}")
    ov = np.vdot(A, B)
    return float(min(1.0, abs(ov) ** 2 / (np.vdot(A, A).real * np.vdot(B, B).real)))


def escape_probability(state: CompositeState, trap_region) -> float:
    """1 - (norm inside the trap region).

    States are prepared with unit norm, so norm removed by an absorber is counted
    as escaped automatically.
    """
    xa, xb = trap_region
    g = state.grid
    if not (g.x_min <= xa < xb <= g.x_max):
        raise ValueError(f"trap region {trap_region} is not inside the grid [{g.x_min}, {g.x_max}]")
    inside = (g.x >= xa) & (g.x <= xb)
    p_in = float(np.sum(state.particle_density()[inside]) * g.spacing)
    return float(min(1.0, max(0.0, 1.0 - p_in)))


def _mode_top_population(psi, dims, dx) -> float:
    if len(dims) == 1:
        return float(np.sum(np.abs(psi[:, -1]) ** 2) * dx)
    p = np.abs(psi.reshape((psi.shape[0],) + tuple(dims))) ** 2
    worst = 0.0
    for k, d in enumerate(dims):
        idx = [slice(None)] * (len(dims) + 1)
        idx[k + 1] = d - 1
        worst = max(worst, float(np.sum(p[tuple(idx)]) * dx))
    return worst


class _Recorder:
    """Builds the standard channel set from a state in the frame's own picture."""

    def __init__(self, grid, potential, config, series, dims, to_schrodinger=None, extra=None):
        self.grid = grid
        self.vx = potential(grid.x) if potential is not None else np.zeros(grid.n_points)
        self.config = config
        self.series = series
        self.dims = dims
        self.to_schrodinger = to_schrodinger
        self.extra = extra

    def __call__(self, t, psi):
        g = self.grid
        dx = g.spacing
        dens = np.sum(np.abs(psi) ** 2, axis=1)
        norm = float(np.sum(dens) * dx)
        vals = {
            "norm": norm,
            "x_mean": float(np.sum(g.x * dens) * dx / norm),
            "p_mean": float(np.vdot(psi, momentum_apply(psi, g)).real * dx / norm),
            "particle_energy": float(
                (np.vdot(psi, kinetic_apply(psi, g)).real * dx + np.sum(self.vx * dens) * dx) / norm
            ),
        }
        top = _mode_top_population(psi, self.dims, dx) / norm
        vals["leakage"] = top
        if self.config.leakage_check and len(self.dims) == 1:
            check_leakage(CompositeState(g, psi))
        elif self.config.leakage_check:
            if top > 1e-3:
                from .errors import TruncationLeakageError

                raise TruncationLeakageError(f"top Fock level population {top:.3e} exceeds 1e-3")
        if len(self.dims) == 1:
            rho = psi.T @ psi.conj() * dx / norm
            if self.to_schrodinger is not None:
                rho = self.to_schrodinger(t, rho)
            vals["var_X"], vals["var_P"], vals["cov_XP"] = quadrature_variances(rho)
            vals["photon_number"] = float(np.real(np.trace(rho @ np.diag(np.arange(rho.shape[0])))))
        if self.config.trap_region is not None:
            vals["escape"] = escape_probability(CompositeState(g, psi), self.config.trap_region)
        if self.extra is not None:
            vals.update(self.extra(t, psi))
        self.series.append(t, **vals)


# -- potential tables ----------------------------------------------------------------


def taylor_remainder_bound(potential: PotentialSpec, grid: SpatialGrid, q_norm: float, dt: float, order: int) -> float:
    """||Q||^(K+1) max|V^(K+1)| dt / (K+1)! for the Taylor expansion of V(x - Q) to order K."""
    k1 = order + 1
    return float(q_norm**k1 * np.max(np.abs(potential.derivative(grid.x, k1))) * dt / math.factorial(k1))


def resolve_lab_coupling(potential: PotentialSpec, grid: SpatialGrid, q_norm: float, dt: float, config: PropagatorConfig):
    """Pick the evaluation rule for V(x - Q); returns (mode, order)."""
    if config.potential_mode == "functional":
        return "functional", None
    if potential.is_quadratic and config.potential_mode == "auto":
        return "quadratic", 2
    for order in range(config.taylor_order, config.taylor_max_order + 1):
        if taylor_remainder_bound(potential, grid, q_norm, dt, order) < config.taylor_tol:
            return "taylor", order
    bound = taylor_remainder_bound(potential, grid, q_norm, dt, config.taylor_max_order)
    raise TaylorRemainderError(
        f"Taylor remainder {bound:.2e} per step exceeds {config.taylor_tol:g} even at order "
        f"{config.taylor_max_order}; reduce dt or ell, or use potential_mode='functional'"
    )


def lab_table(potential: PotentialSpec, x: np.ndarray, q: np.ndarray, mode: str, order) -> np.ndarray:
    """h[j, m] = V(x_j - q_m) under the chosen evaluation rule."""
    X = x[:, None]
    if mode in ("quadratic", "functional"):
        return potential(X - q[None, :])
    h = np.zeros((x.size, q.size))
    for n in range(order + 1):
        h += potential.derivative(x, n)[:, None] * (-q[None, :]) ** n / math.factorial(n)
    return h


# -- steppers ------------------------------------------------------------------------


def _split_step(psi, grid, t0, n, dt, table_at, record, record_every, absorb):
    """Strang split: half kinetic, full potential at the step midpoint, half kinetic."""
    half_kin = np.exp(-0.25j * grid.k**2 * dt)[:, None]
    damp = None if absorb is None else np.exp(-absorb * dt)[:, None]
    record(t0, psi)
    for j in range(n):
        tm = t0 + (j + 0.5) * dt
        W, h = table_at(tm)
        psi = np.fft.ifft(half_kin * np.fft.fft(psi, axis=0), axis=0)
        if W is None:
            psi = psi * np.exp(-1j * h * dt)
        else:
            c = psi @ W.conj()
            c *= np.exp(-1j * h * dt)
            psi = c @ W.T
        if damp is not None:
            psi = psi * damp
        psi = np.fft.ifft(half_kin * np.fft.fft(psi, axis=0), axis=0)
        if (j + 1) % record_every == 0 or j == n - 1:
            record(t0 + (j + 1) * dt, psi)
    if not np.all(np.isfinite(psi)):
        raise StabilityError("non-finite amplitudes after split-step propagation")
    return psi


def fd_kinetic(grid: SpatialGrid) -> sp.csr_matrix:
    """Fourth-order finite-difference -1/2 d^2/dx^2 with zero boundary values."""
    n = grid.n_points
    c = np.array([-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12]) * (-0.5 / grid.spacing**2)
    return sp.diags([np.full(n - abs(o), c[o + 2]) for o in range(-2, 3)], list(range(-2, 3)), format="csr")


def block_coupling(W: np.ndarray, h: np.ndarray) -> sp.csr_matrix:
    """Block-diagonal sparse matrix with blocks W diag(h_j) W^dag."""
    blocks = np.einsum("im,jm,km->jik", W, h, W.conj())
    return sp.block_diag(list(blocks), format="csr")


def _crank_nicolson(psi, grid, t0, n, dt, hamiltonian_at, static, record, record_every, absorb):
    shape = psi.shape
    dim = shape[0] * shape[1]
    eye = sp.identity(dim, dtype=complex, format="csc")
    absorb_op = None
    if absorb is not None:
        absorb_op = sp.kron(sp.diags(absorb), sp.identity(shape[1]), format="csc")
    lu = None
    B = None
    v = psi.ravel().astype(complex)
    record(t0, psi)
    for j in range(n):
        if lu is None or not static:
            H = hamiltonian_at(t0 + (j + 0.5) * dt).astype(complex)
            if absorb_op is not None:
                H = H - 1j * absorb_op
            lu = splu((eye + 0.5j * dt * H).tocsc())
            B = (eye - 0.5j * dt * H).tocsr()
        v = lu.solve(B @ v)
        if (j + 1) % record_every == 0 or j == n - 1:
            record(t0 + (j + 1) * dt, v.reshape(shape))
    if not np.all(np.isfinite(v)):
        raise StabilityError("non-finite amplitudes after Crank-Nicolson propagation")
    return v.reshape(shape)


def _support(psi: np.ndarray, rel: float = 1e-8) -> np.ndarray:
    dens = np.sum(np.abs(psi) ** 2, axis=1)
    return dens >= rel * dens.max()


def _audit_phase(h: np.ndarray, dt: float, mask: np.ndarray):
    """Stability audit: the spread of the coupling phase across oscillator channels must stay below pi
    wherever the initial state has weight, otherwise entangling phases alias within one step."""
    spread = float(np.max(np.ptp(h[mask], axis=1))) if h.shape[1] > 1 else 0.0
    if spread * dt > np.pi:
        raise StabilityError(
            f"coupling phase spread per step {spread * dt:.3g} exceeds pi; reduce dt below {np.pi / spread:.3g}"
        )


# -- frames --------------------------------------------------------------------------


def _check_state(state: CompositeState, dim: int, scheme: str):
    if state.n_cut != dim:
        raise DimensionMismatchError(f"state oscillator dimension {state.n_cut} does not match {dim}")
    if scheme == "split_step_spectral":
        state.grid.require_spectral()


def _rotate_rho(omega):
    def rotate(t, rho):
        n = np.arange(rho.shape[0])
        ph = np.exp(-1j * omega * t * n)
        return ph[:, None] * rho * ph.conj()[None, :]

    return rotate


def evolve_lab(
    state: CompositeState,
    potential: PotentialSpec,
    spec: DriveSpec,
    config: PropagatorConfig = PropagatorConfig(),
    t0: float = 0.0,
    t1: float = 2 * np.pi,
):
    """Evolve under p^2/2 + V(x - ell f(t)(a + a^dag)) + w a^dag a.

    Input and output states are in the Schroedinger picture.  The split-step
    scheme works internally in the oscillator interaction picture, where the
    free term disappears and the trap operator becomes alpha_i(t).
    """
    n_cut = state.n_cut
    _check_state(state, n_cut, config.scheme)
    grid = state.grid
    fock = FockSpace(n_cut)
    n, dt = config.steps(t0, t1)
    x = grid.x
    lam_max = float(np.max(np.abs(np.linalg.eigvalsh((fock.a + fock.adag).real))))
    f_max = 1.0 if spec.envelope is None else float(np.max(spec.envelope.derivatives(np.linspace(t0, t1, 2001))[0]))
    mode, order = resolve_lab_coupling(potential, grid, spec.ell * f_max * lam_max, dt, config)
    absorb = None if config.absorber is None else config.absorber.profile(grid)
    series = ObservableSeries(meta={"frame": "lab", "coupling_rule": mode, "taylor_order": order, "dt": dt})
    numbers = np.arange(n_cut)
    w = spec.omega

    mask = _support(state.amplitudes)
    if config.scheme == "split_step_spectral":
        record = _Recorder(grid, potential, config, series, (n_cut,), _rotate_rho(w))

        def table_at(t):
            q, W = np.linalg.eigh(fock.linear(complex(spec.coeff_alpha(t))))
            h = lab_table(potential, x, q, mode, order)
            _audit_phase(h, dt, mask)
            return W, h

        psi = state.amplitudes * np.exp(1j * w * t0 * numbers)[None, :]
        psi = _split_step(psi, grid, t0, n, dt, table_at, record, config.record_every, absorb)
        psi = psi * np.exp(-1j * w * t1 * numbers)[None, :]
    else:
        record = _Recorder(grid, potential, config, series, (n_cut,))
        kin = sp.kron(fd_kinetic(grid), sp.identity(n_cut), format="csr")
        free = sp.kron(sp.identity(grid.n_points), sp.diags(w * numbers.astype(float)), format="csr")

        def hamiltonian_at(t):
            f = float(envelope_value(spec, t))
            q, W = np.linalg.eigh(spec.ell * f * (fock.a + fock.adag))
            return kin + block_coupling(W, lab_table(potential, x, q, mode, order)) + free

        psi = _crank_nicolson(
            state.amplitudes.copy(), grid, t0, n, dt, hamiltonian_at, spec.envelope is None,
            record, config.record_every, absorb,
        )
    return CompositeState(grid, psi), series


def envelope_value(spec: DriveSpec, t):
    return spec._env(t)[0]


def evolve_final(
    state: CompositeState,
    potential: PotentialSpec,
    spec: DriveSpec,
    order: int = 1,
    config: PropagatorConfig = PropagatorConfig(),
    t0: float | None = None,
    t1: float | None = None,
    displacement: complex | None = None,
    method: str = "separable",
):
    """Evolve under p^2/2 + V(x) + x alpha_R_ddot(t) in the final frame.

    With ``displacement=beta`` the oscillator amplitudes are read as those of
    D(beta)^dag |state>, i.e. fluctuations about the coherent amplitude beta.
    Since the final-frame Hamiltonian is linear in a, the shift only adds the
    c-number 2 Re(c beta) to the coupling, which keeps n_cut small for large
    |beta|.
    """
    t0 = spec.t_i if t0 is None else t0
    t1 = spec.t_f if t1 is None else t1
    n_cut = state.n_cut
    _check_state(state, n_cut, config.scheme)
    grid = state.grid
    fock = FockSpace(n_cut)
    n, dt = config.steps(t0, t1)
    x = grid.x
    vx = potential(x)
    field_ = None if order == 0 else effective_field(spec, order, method, t_max=t1)
    beta = 0j if displacement is None else complex(displacement)
    absorb = None if config.absorber is None else config.absorber.profile(grid)
    series = ObservableSeries(meta={"frame": "final", "order": order, "dt": dt, "displacement": [beta.real, beta.imag]})
    record = _Recorder(grid, potential, config, series, (n_cut,))
    mask = _support(state.amplitudes)

    def coeff(t):
        return complex(spec.coeff_ddot(t)) if field_ is None else complex(field_.coeff_ddot(t)[0])

    def eig_at(t):
        c = coeff(t)
        q, W = np.linalg.eigh(fock.linear(c))
        return q + 2 * (c * beta).real, W

    if config.scheme == "split_step_spectral":

        def table_at(t):
            q, W = eig_at(t)
            h = vx[:, None] + x[:, None] * q[None, :]
            _audit_phase(h, dt, mask)
            return W, h

        psi = _split_step(state.amplitudes.copy(), grid, t0, n, dt, table_at, record, config.record_every, absorb)
    else:
        kin = sp.kron(fd_kinetic(grid), sp.identity(n_cut), format="csr")

        def hamiltonian_at(t):
            q, W = eig_at(t)
            return kin + block_coupling(W, vx[:, None] + x[:, None] * q[None, :])

        psi = _crank_nicolson(
            state.amplitudes.copy(), grid, t0, n, dt, hamiltonian_at, False, record, config.record_every, absorb
        )
    return CompositeState(grid, psi), series


def evolve_continuum(
    state: CompositeState,
    potential: PotentialSpec,
    bath,
    config: PropagatorConfig | None = None,
    t0: float = 0.0,
    t1: float = 1.0,
):
    """Evolve under p^2/2 + V(x - sum_k ell_k (a_k + a_k^dag)) + sum_k w_k a_k^dag a_k.

    The Hamiltonian is time independent, so Crank-Nicolson (the default here)
    conserves <H> to round-off.  The state's oscillator axis is the product
    space of the bath modes in row-major mode order.
    """
    config = config or PropagatorConfig(scheme="crank_nicolson")
    dims = tuple(bath.mode_dims)
    D = int(np.prod(dims))
    grid = state.grid
    if grid.n_points * D > DIMENSION_BUDGET:
        raise DimensionBudgetError(
            f"composite dimension {grid.n_points}x{D} exceeds budget {DIMENSION_BUDGET}", "bath"
        )
    _check_state(state, D, config.scheme)
    n, dt = config.steps(t0, t1)
    x = grid.x
    alpha = bath.alpha_operator()
    q_all, W_all = np.linalg.eigh(alpha)
    mode, order = resolve_lab_coupling(potential, grid, float(np.max(np.abs(q_all))), dt, config)
    H_osc_diag = bath.free_energies()
    absorb = None if config.absorber is None else config.absorber.profile(grid)
    kin = sp.kron(fd_kinetic(grid), sp.identity(D), format="csr")
    H_static = (
        kin
        + block_coupling(W_all, lab_table(potential, x, q_all, mode, order))
        + sp.kron(sp.identity(grid.n_points), sp.diags(H_osc_diag), format="csr")
    ).tocsr()

    def energy(t, psi):
        v = psi.ravel()
        e = np.vdot(v, H_static @ v).real / np.vdot(v, v).real
        return {"energy": float(e)}

    series = ObservableSeries(
        meta={"frame": "continuum", "modes": len(dims), "mode_dims": list(dims), "coupling_rule": mode, "dt": dt}
    )
    record = _Recorder(grid, potential, config, series, dims, extra=energy)
    if config.scheme == "crank_nicolson":
        psi = _crank_nicolson(
            state.amplitudes.copy(), grid, t0, n, dt, lambda t: H_static, True, record, config.record_every, absorb
        )
    else:
        phases = H_osc_diag
        mask = _support(state.amplitudes)

        def table_at(t):
            q, W = np.linalg.eigh(bath.alpha_i(t))
            h = lab_table(potential, x, q, mode, order)
            _audit_phase(h, dt, mask)
            return W, h

        psi = state.amplitudes * np.exp(1j * t0 * phases)[None, :]
        psi = _split_step(psi, grid, t0, n, dt, table_at, record, config.record_every, absorb)
        psi = psi * np.exp(-1j * t1 * phases)[None, :]
    return CompositeState(grid, psi), series


# -- scalar (classical-trap) propagation ---------------------------------------------


def evolve_scalar(
    psi: np.ndarray,
    grid: SpatialGrid,
    potential_at: Callable[[float], np.ndarray],
    t0: float,
    t1: float,
    n_steps: int,
    observe: Callable[[float, np.ndarray], None] | None = None,
    record_every: int = 1,
) -> np.ndarray:
    """Strang split step for a single particle under a time-dependent potential array."""
    grid.require_spectral()
    dt = (t1 - t0) / n_steps
    psi = np.asarray(psi, dtype=complex)[:, None]

    def table_at(t):
        return None, potential_at(t)[:, None]

    def record(t, p):
        if observe is not None:
            observe(t, p[:, 0])

    psi = _split_step(psi, grid, t0, n_steps, dt, table_at, record, record_every, None)
    return psi[:, 0]


def shaken_trap_ehrenfest(spec: DriveSpec, omega_trap: float, x0: float, p0: float, beta: complex, times):
    """Mean-value ODE for the harmonic shaken trap with a quantized, back-acting trap position.

    Returns arrays (x(t), p(t), a(t)) of expectation values; for quadratic
    Hamiltonians these are exact.
    """
    W2 = omega_trap**2
    w = spec.omega

    def rhs(t, y):
        x, p, ar, ai = y
        f = float(envelope_value(spec, t))
        lf = spec.ell * f
        shift = x - 2 * lf * ar
        da = -1j * w * (ar + 1j * ai) + 1j * W2 * lf * shift
        return [p, -W2 * shift, da.real, da.imag]

    times = np.asarray(times, dtype=float)
    sol = solve_ivp(
        rhs, (times[0], times[-1]), [x0, p0, complex(beta).real, complex(beta).imag],
        t_eval=times, method="DOP853", rtol=1e-11, atol=1e-13,
    )
    return sol.y[0], sol.y[1], sol.y[2] + 1j * sol.y[3]
