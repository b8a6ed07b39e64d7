"""Acceleration-gauge transformation chains, classical and quantized.

Classical chain (trap position alpha(t) a c-number):

    lab frame     H = p^2/2 + V(x - alpha)
    shift         exp(i p alpha)            ->  V(x) appears, p picks up -alpha_dot
    kick          exp(-i x alpha_dot)       ->  H = p^2/2 + V(x) + x alpha_ddot

Quantized chain (alpha = ell f (a + a^dag)), applied to a lab-frame state:

    U_a     exp(i w t a^dag a)                    oscillator interaction picture
    U_0     T exp(i p int alpha_i_dot)             entangling position shift
    U_half  T exp(+i/2 int alpha_i_dot^2)          oscillator-only Gaussian unitary
    U_1     exp(-i x alpha_R_dot(t))               entangling momentum kick

Time-ordered exponentials are stepwise products, later times on the left.  The
``midpoint`` rule is second order in the step; ``first_order`` samples the left
end of each step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .drive import DriveSpec, Envelope
from .effective import effective_field
from .errors import ConvergenceError, StabilityError
from .hilbert import CompositeState, FockSpace, PotentialSpec, SpatialGrid
from .propagate import PropagatorConfig, evolve_final, evolve_lab, evolve_scalar, fidelity

STEP_LIMIT = 0.5
UNITARITY_TOL = 1e-8


def _steps(t0, t1, n_steps, scheme):
    if scheme not in ("midpoint", "first_order"):
        raise ValueError("scheme must be 'midpoint' or 'first_order'")
    dt = (t1 - t0) / n_steps
    offset = 0.5 if scheme == "midpoint" else 0.0
    return t0 + (np.arange(n_steps) + offset) * dt, dt


def _default_steps(spec: DriveSpec, t0, t1, per_period: int = 400) -> int:
    return max(1, math.ceil((t1 - t0) * spec.omega / (2 * np.pi) * per_period))


def apply_Ua(state: CompositeState, omega: float, t: float, inverse: bool = False) -> CompositeState:
    """Multiply by exp(+i w t n) (or its inverse); exact phases, no exponentiation."""
    sign = -1.0 if inverse else 1.0
    ph = np.exp(sign * 1j * omega * t * np.arange(state.n_cut))
    return CompositeState(state.grid, state.amplitudes * ph[None, :])


def _eig(fock, c):
    lam, W = np.linalg.eigh(fock.linear(complex(c)))
    return lam, W


def apply_U0(
    state: CompositeState,
    spec: DriveSpec,
    t0: float,
    t1: float,
    n_steps: int | None = None,
    scheme: str = "midpoint",
    step_limit: float = STEP_LIMIT,
) -> CompositeState:
    """Stepwise T exp(i p int_{t0}^{t1} alpha_i_dot): spectral shift per Fock eigenvector."""
    if t1 == t0:
        return state.copy()
    grid = state.grid
    grid.require_spectral()
    fock = FockSpace(state.n_cut)
    n_steps = n_steps or _default_steps(spec, t0, t1)
    times, dt = _steps(t0, t1, n_steps, scheme)
    coeffs = spec.coeff_dot(times)
    lam_max = float(np.max(np.linalg.eigvalsh((fock.a + fock.adag).real)))
    worst = float(np.max(np.abs(coeffs))) * lam_max * abs(dt) / grid.spacing
    if worst > step_limit:
        raise StabilityError(
            f"U_0 step shifts by {worst:.3g} grid spacings (limit {step_limit}); increase n_steps"
        )
    k = grid.k[:, None]
    s = np.fft.fft(state.amplitudes, axis=0)
    for c in coeffs:
        lam, W = _eig(fock, c)
        s = ((s @ W.conj()) * np.exp(1j * k * lam[None, :] * dt)) @ W.T
    return CompositeState(grid, np.fft.ifft(s, axis=0))


def u0_phase(spec: DriveSpec, t0: float, t1: float) -> float:
    """Phi in the exact form U_0 = exp(i p A + i p^2 Phi).

    Phi = (i/2) int_{t0}^{t1} dtau1 int_{t0}^{tau1} dtau2 F(tau1, tau2) = -Im int u conj(W),
    W(tau) = int_{t0}^{tau} u.  It is real and O(eps).
    """
    if t1 == t0:
        return 0.0

    def rhs(t, y):
        u = complex(spec.coeff_dot(t))
        W = y[0] + 1j * y[1]
        z = u * np.conj(W)
        return [u.real, u.imag, z.real, z.imag]

    period = 2 * np.pi / spec.omega
    sol = solve_ivp(rhs, (t0, t1), [0, 0, 0, 0], method="DOP853", rtol=1e-12, atol=1e-16, max_step=period / 16)
    return float(-sol.y[3, -1])


def apply_U0_exact(state: CompositeState, spec: DriveSpec, t0: float, t1: float) -> CompositeState:
    """Closed-form U_0 = exp(i p A + i p^2 Phi) with A = alpha_i(t1) - alpha_i(t0).

    The Magnus series of the shift generator stops after two terms because
    [alpha_i_dot(t), alpha_i_dot(t')] is a c-number; this is the reference for
    the stepwise product.
    """
    fock = FockSpace(state.n_cut)
    A = complex(spec.coeff_alpha(t1)) - complex(spec.coeff_alpha(t0))
    lam, W = _eig(fock, A)
    phi = u0_phase(spec, t0, t1)
    k = state.grid.k[:, None]
    s = np.fft.fft(state.amplitudes, axis=0)
    s = ((s @ W.conj()) * np.exp(1j * k * lam[None, :] + 1j * k**2 * phi)) @ W.T
    return CompositeState(state.grid, np.fft.ifft(s, axis=0))


def u_half_matrix(
    spec: DriveSpec, t0: float, t1: float, n_cut: int, n_steps: int | None = None, scheme: str = "midpoint"
) -> np.ndarray:
    """Stepwise T exp(+i/2 int alpha_i_dot^2) on the truncated oscillator space."""
    fock = FockSpace(n_cut)
    U = np.eye(n_cut, dtype=complex)
    if t1 == t0:
        return U
    n_steps = n_steps or _default_steps(spec, t0, t1)
    times, dt = _steps(t0, t1, n_steps, scheme)
    for c in spec.coeff_dot(times):
        lam, W = _eig(fock, c)
        U = (W * np.exp(0.5j * lam**2 * dt)) @ W.conj().T @ U
    return U


def unitarity_defect(U: np.ndarray) -> float:
    return float(np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0]), 2))


def apply_U_half(state: CompositeState, spec: DriveSpec, t0: float, t1: float, n_steps=None, scheme="midpoint"):
    U = u_half_matrix(spec, t0, t1, state.n_cut, n_steps, scheme)
    if unitarity_defect(U) > UNITARITY_TOL:
        raise StabilityError("U_half lost unitarity; increase n_steps")
    return CompositeState(state.grid, state.amplitudes @ U.T)


def symplectic_u_half(spec: DriveSpec, t0: float, t1: float, n_steps: int | None = None, scheme: str = "midpoint"):
    """2x2 symplectic matrix S with (X, P) -> S (X, P) under the same stepwise U_half.

    Per step the generator is H = -(g . r)^2 / 2 with r = (X, P) and
    g = sqrt2 (Re c, -Im c), so r' = J M r with M = -g g^T.
    """
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    S = np.eye(2)
    if t1 == t0:
        return S
    n_steps = n_steps or _default_steps(spec, t0, t1)
    times, dt = _steps(t0, t1, n_steps, scheme)
    for c in spec.coeff_dot(times):
        g = math.sqrt(2) * np.array([c.real, -c.imag])
        S = expm(J @ (-np.outer(g, g)) * dt) @ S
    return S


def covariance_oracle(spec: DriveSpec, t0, t1, n_steps=None, scheme="midpoint", initial=None) -> np.ndarray:
    """Covariance matrix of (X, P) after U_half, starting from vacuum unless given."""
    V = 0.5 * np.eye(2) if initial is None else np.asarray(initial, float)
    S = symplectic_u_half(spec, t0, t1, n_steps, scheme)
    return S @ V @ S.T


def conjugation_oracle(spec: DriveSpec, t: float, n_cut: int = 16, n_steps: int = 4000) -> np.ndarray:
    """U_half(t_i -> t) alpha_i_dot(t) U_half^dag by stepwise products, Richardson-combined.

    The midpoint product is symmetric, so its error is even in the step and
    (4 B - A) / 3 with A, B at n and 2n steps removes the leading term.
    """
    fock = FockSpace(n_cut)
    X = fock.linear(complex(spec.coeff_dot(t)))
    out = []
    for n in (n_steps, 2 * n_steps):
        U = u_half_matrix(spec, spec.t_i, t, n_cut, n)
        out.append(U @ X @ U.conj().T)
    return (4 * out[1] - out[0]) / 3


def _kick_coeff(spec, t, order, integrand, method):
    if integrand == "i" or order == 0:
        return complex(spec.coeff_dot(t))
    if integrand != "R":
        raise ValueError("integrand must be 'R' or 'i'")
    return complex(effective_field(spec, order, method, t_max=t).coeff_dot(t)[0])


def apply_U1(
    state: CompositeState,
    spec: DriveSpec,
    t0: float,
    t1: float,
    order: int = 1,
    integrand: str = "R",
    method: str = "separable",
) -> CompositeState:
    """Momentum kick carrying the frame from K(t0) to K(t1): exp(-i x K(t1)) exp(+i x K(t0)).

    K = alpha_R_dot at the given order (``integrand='R'``) or alpha_i_dot
    (``integrand='i'``).  Starting from the envelope switch-on, K(t0) = 0 and
    this is the single kick exp(-i x K(t1)).
    """
    fock = FockSpace(state.n_cut)
    x = state.grid.x[:, None]
    psi = state.amplitudes
    for t, sign in ((t0, 1.0), (t1, -1.0)):
        c = _kick_coeff(spec, t, order, integrand, method)
        if c == 0:
            continue
        lam, W = _eig(fock, c)
        psi = ((psi @ W.conj()) * np.exp(sign * 1j * x * lam[None, :])) @ W.T
    return CompositeState(state.grid, psi)


@dataclass
class TransformChain:
    """The quantized chain U_1 U_half U_0 U_a taking lab-frame states to the final frame."""

    spec: DriveSpec
    order: int = 1
    n_steps: int | None = None
    scheme: str = "midpoint"
    integrand: str = "R"
    stages: tuple = ("U_a", "U_0", "U_half", "U_1")
    audit: dict = field(default_factory=dict)

    def apply(self, state: CompositeState, t: float) -> CompositeState:
        t_i = self.spec.t_i
        n = self.n_steps or _default_steps(self.spec, t_i, t)
        norm0 = state.norm
        out = state
        for stage in self.stages:
            if stage == "U_a":
                out = apply_Ua(out, self.spec.omega, t)
            elif stage == "U_0":
                out = apply_U0(out, self.spec, t_i, t, n, self.scheme)
            elif stage == "U_half":
                U = u_half_matrix(self.spec, t_i, t, out.n_cut, n, self.scheme)
                self.audit["U_half_unitarity"] = unitarity_defect(U)
                out = CompositeState(out.grid, out.amplitudes @ U.T)
            elif stage == "U_1":
                out = apply_U1(out, self.spec, t_i, t, self.order, self.integrand)
            else:
                raise ValueError(f"unknown stage {stage!r}")
        self.audit["norm_drift"] = abs(out.norm - norm0)
        if self.audit["norm_drift"] > 1e-6:
            raise StabilityError(f"transformation chain changed the norm by {self.audit['norm_drift']:.2e}")
        return out


def gauge_equivalence_fidelity(
    initial: CompositeState,
    spec: DriveSpec,
    potential: PotentialSpec,
    t: float,
    order: int = 1,
    config: PropagatorConfig | None = None,
    integrand: str = "R",
    check_convergence: bool = False,
    tol: float = 1e-6,
) -> float:
    """Fidelity between the lab run pushed through the chain and a direct final-frame run.

    Both runs start from ``initial`` (a lab-frame state at the envelope
    switch-on, where the chain is the identity) and use the same time step.
    With ``check_convergence`` the comparison is repeated at twice the step and
    a :class:`ConvergenceError` carrying both values is raised if they differ
    by more than ``tol``.
    """
    config = config or PropagatorConfig(dt=0.002, record_every=10**9)
    t_i = spec.t_i
    if t == t_i:
        return 1.0

    def run(cfg):
        lab, _ = evolve_lab(initial, potential, spec, cfg, t_i, t)
        n, _ = cfg.steps(t_i, t)
        chain = TransformChain(spec, order, n_steps=n, integrand=integrand).apply(lab, t)
        fin, _ = evolve_final(initial, potential, spec, order, cfg, t_i, t)
        return fidelity(chain, fin)

    fid = run(config)
    if check_convergence:
        coarse = PropagatorConfig(**{**config.__dict__, "dt": 2 * config.dt})
        fid2 = run(coarse)
        if abs(fid - fid2) > tol:
            raise ConvergenceError(
                f"fidelity changed by {abs(fid - fid2):.2e} under step doubling",
                {"dt": config.dt, "fidelity": fid, "dt_coarse": coarse.dt, "fidelity_coarse": fid2},
            )
    return fid


# -- classical chain -----------------------------------------------------------------


@dataclass(frozen=True)
class ClassicalTrajectory:
    """c-number trap position alpha(t) = A f(t) sin(w t + phase); charge e = 1."""

    amplitude: float
    omega: float
    envelope: Envelope | None = None
    phase: float = 0.0

    @classmethod
    def from_coherent(cls, spec: DriveSpec, beta: complex) -> "ClassicalTrajectory":
        """Mean of alpha_i(t) in the coherent state beta: 2 ell |beta| f cos(w t - arg beta)."""
        return cls(2 * spec.ell * abs(beta), spec.omega, spec.envelope, math.pi / 2 - float(np.angle(beta)))

    def derivatives(self, t):
        t = np.asarray(t, dtype=float)
        if self.envelope is None:
            f, fp, fpp = np.ones_like(t), np.zeros_like(t), np.zeros_like(t)
        else:
            f, fp, fpp = self.envelope.derivatives(t)
        w = self.omega
        s = np.sin(w * t + self.phase)
        c = np.cos(w * t + self.phase)
        A = self.amplitude
        return A * f * s, A * (fp * s + w * f * c), A * (fpp * s + 2 * w * fp * c - w * w * f * s)


def classical_effective_field(traj: ClassicalTrajectory, t):
    """E_eff(t) = -alpha_ddot(t)."""
    return -traj.derivatives(t)[2]


def classical_lab_potential(potential: PotentialSpec, grid: SpatialGrid, traj: ClassicalTrajectory):
    return lambda t: potential(grid.x - traj.derivatives(t)[0])


def classical_dipole_potential(potential: PotentialSpec, grid: SpatialGrid, traj: ClassicalTrajectory):
    vx = potential(grid.x)
    return lambda t: vx + grid.x * traj.derivatives(t)[2]


def classical_chain(psi: np.ndarray, grid: SpatialGrid, traj: ClassicalTrajectory, t: float) -> np.ndarray:
    """Lab-frame wavefunction to the dipole frame: exp(-i x alpha_dot) exp(i p alpha) psi."""
    a, ad, _ = traj.derivatives(t)
    shifted = np.fft.ifft(np.exp(1j * grid.k * a) * np.fft.fft(psi))
    return np.exp(-1j * grid.x * ad) * shifted


def classical_frames(psi0, grid, potential, traj, t0, t1, n_steps, record_every=100):
    """Run both classical frames; returns (times, <x>_lab, <x>_dipole, psi_lab, psi_dipole)."""
    dx = grid.spacing
    rec = {"lab": [], "dip": [], "t": []}

    def mean_x(p):
        d = np.abs(p) ** 2
        return float(np.sum(grid.x * d) / np.sum(d))

    def obs_lab(t, p):
        rec["t"].append(t)
        rec["lab"].append(mean_x(p))

    def obs_dip(t, p):
        rec["dip"].append(mean_x(p))

    lab = evolve_scalar(psi0, grid, classical_lab_potential(potential, grid, traj), t0, t1, n_steps, obs_lab, record_every)
    dip = evolve_scalar(psi0, grid, classical_dipole_potential(potential, grid, traj), t0, t1, n_steps, obs_dip, record_every)
    return np.array(rec["t"]), np.array(rec["lab"]), np.array(rec["dip"]), lab, dip
