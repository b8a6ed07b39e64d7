"""State spaces and operator matrices for the particle x oscillator system.

Natural units are used throughout the core: hbar = m = 1.  A composite state is
stored as an ``(n_points, n_cut)`` complex array ``psi[j, n]``: amplitude of the
particle at grid point ``x_j`` with the oscillator in Fock level ``n``.  The
continuum normalisation ``sum |psi|^2 dx = 1`` is used.
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.polynomial import hermite
from scipy.special import eval_legendre, gammaln

from .errors import (
    DimensionMismatchError,
    InvalidDimensionError,
    StabilityError,
    TruncationLeakageError,
    TruncationRiskError,
    TruncationWarning,
)

LEAKAGE_WARN = 1e-6
LEAKAGE_ERROR = 1e-3
SNAPSHOT_MAGIC = b"QKH1"
_SNAPSHOT_HEADER = struct.Struct("<4sIIdd")


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform 1D grid including both end points."""

    n_points: int
    x_min: float
    x_max: float

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 8:
            raise InvalidDimensionError(f"n_points must be an integer >= 8, got {self.n_points}")
        if not self.x_max > self.x_min:
            raise InvalidDimensionError("x_max must exceed x_min")

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order (equal to momenta since hbar = 1)."""
        return 2 * np.pi * np.fft.fftfreq(self.n_points, self.spacing)

    @property
    def is_power_of_two(self) -> bool:
        return self.n_points & (self.n_points - 1) == 0

    def require_spectral(self):
        if not self.is_power_of_two:
            raise InvalidDimensionError(
                f"spectral propagation needs a power-of-two grid, got n_points={self.n_points}"
            )


def make_annihilation(n_cut: int) -> np.ndarray:
    """Truncated annihilation matrix with sqrt(n+1) on the first superdiagonal."""
    if int(n_cut) != n_cut or n_cut < 2:
        raise InvalidDimensionError(f"n_cut must be an integer >= 2, got {n_cut}")
    return np.diag(np.sqrt(np.arange(1, n_cut, dtype=float)), 1).astype(complex)


@dataclass(frozen=True)
class FockSpace:
    n_cut: int = 16

    def __post_init__(self):
        make_annihilation(self.n_cut)  # validates

    @cached_property
    def a(self) -> np.ndarray:
        return make_annihilation(self.n_cut)

    @cached_property
    def adag(self) -> np.ndarray:
        return self.a.conj().T

    @cached_property
    def number(self) -> np.ndarray:
        return np.diag(np.arange(self.n_cut)).astype(complex)

    @cached_property
    def identity(self) -> np.ndarray:
        return np.eye(self.n_cut, dtype=complex)

    @cached_property
    def quad_x(self) -> np.ndarray:
        """X = (a + a^dag)/sqrt(2); vacuum variance 1/2."""
        return (self.a + self.adag) / np.sqrt(2)

    @cached_property
    def quad_p(self) -> np.ndarray:
        return (self.a - self.adag) / (1j * np.sqrt(2))

    def linear(self, coeff: complex) -> np.ndarray:
        """The Hermitian operator ``c a + conj(c) a^dag``."""
        return coeff * self.a + np.conj(coeff) * self.adag


@dataclass(frozen=True)
class PotentialSpec:
    """Trap potential V(x).

    Use the constructors :meth:`harmonic`, :meth:`gaussian_well` and
    :meth:`soft_core` rather than filling the fields by hand.
    """

    kind: str
    omega: float | None = None
    depth: float | None = None
    width: float | None = None
    softening: float | None = None

    def __post_init__(self):
        if self.kind == "harmonic":
            if self.omega is None or not self.omega > 0:
                raise ValueError("harmonic potential needs trap frequency omega > 0")
        elif self.kind == "gaussian_well":
            if self.depth is None or self.width is None or not self.width > 0:
                raise ValueError("gaussian_well needs depth and width > 0")
        elif self.kind == "soft_core":
            if self.depth is None or self.softening is None or not self.softening > 0:
                raise ValueError("soft_core needs depth and softening > 0")
        else:
            raise ValueError(f"unknown potential kind {self.kind!r}")

    @classmethod
    def harmonic(cls, omega: float) -> "PotentialSpec":
        return cls("harmonic", omega=float(omega))

    @classmethod
    def gaussian_well(cls, depth: float, width: float) -> "PotentialSpec":
        return cls("gaussian_well", depth=float(depth), width=float(width))

    @classmethod
    def soft_core(cls, depth: float, softening: float) -> "PotentialSpec":
        return cls("soft_core", depth=float(depth), softening=float(softening))

    @property
    def is_quadratic(self) -> bool:
        return self.kind == "harmonic"

    def __call__(self, x):
        return self.derivative(x, 0)

    def derivative(self, x, order: int):
        """Closed-form ``d^order V / dx^order`` evaluated at ``x``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "harmonic":
            w2 = self.omega**2
            if order == 0:
                return 0.5 * w2 * x**2
            if order == 1:
                return w2 * x
            if order == 2:
                return np.full_like(x, w2)
            return np.zeros_like(x)
        if self.kind == "gaussian_well":
            # d^n/dz^n exp(-z^2) = (-1)^n H_n(z) exp(-z^2),  z = x / (sqrt(2) w)
            scale = math.sqrt(2.0) * self.width
            z = x / scale
            coeffs = np.zeros(order + 1)
            coeffs[order] = 1.0
            return -self.depth * (-1) ** order * hermite.hermval(z, coeffs) * np.exp(-z * z) / scale**order
        # soft core: d^n/dx^n (x^2+s^2)^(-1/2) = (-1)^n n! P_n(x/r) / r^(n+1)
        r = np.sqrt(x * x + self.softening**2)
        return -self.depth * (-1) ** order * math.factorial(order) * eval_legendre(order, x / r) / r ** (order + 1)

    def check_bounded(self, grid: SpatialGrid):
        v = self(grid.x)
        if not np.all(np.isfinite(v)):
            raise ValueError("potential is not finite on the grid")
        return float(v.min())


@dataclass
class CompositeState:
    """Joint particle-oscillator amplitudes, mutated in place by propagators."""

    grid: SpatialGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.ascontiguousarray(self.amplitudes, dtype=complex)
        if self.amplitudes.ndim != 2 or self.amplitudes.shape[0] != self.grid.n_points:
            raise DimensionMismatchError(
                f"amplitudes must have shape (n_points={self.grid.n_points}, n_cut), "
                f"got {self.amplitudes.shape}"
            )
        if not np.all(np.isfinite(self.amplitudes)):
            raise StabilityError("non-finite amplitudes in state")

    @property
    def n_cut(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.spacing)

    def copy(self) -> "CompositeState":
        return CompositeState(self.grid, self.amplitudes.copy())

    def normalize(self) -> "CompositeState":
        self.amplitudes /= math.sqrt(self.norm)
        return self

    def particle_density(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1)


# -- preparation ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrapGround:
    """Particle in the trap ground state.

    ``method='analytic'`` is only available for the harmonic trap.
    """

    method: str = "imaginary_time"


@dataclass(frozen=True)
class GaussianPacket:
    x0: float = 0.0
    p0: float = 0.0
    sigma: float = 1.0


@dataclass(frozen=True)
class Vacuum:
    pass


@dataclass(frozen=True)
class Coherent:
    beta: complex


@dataclass(frozen=True)
class Squeezed:
    """Squeezed vacuum S(xi)|0> with xi = r exp(i phi); phi = 0 squeezes X."""

    r: float
    phi: float = 0.0


def gaussian_packet(grid: SpatialGrid, x0=0.0, p0=0.0, sigma=1.0) -> np.ndarray:
    x = grid.x
    psi = np.exp(-((x - x0) ** 2) / (4 * sigma**2) + 1j * p0 * x)
    return psi / math.sqrt(np.sum(np.abs(psi) ** 2) * grid.spacing)


def kinetic_apply(psi: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """p^2/2 applied spectrally along axis 0."""
    k = grid.k.reshape((-1,) + (1,) * (psi.ndim - 1))
    return np.fft.ifft(0.5 * k**2 * np.fft.fft(psi, axis=0), axis=0)


def momentum_apply(psi: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    k = grid.k.reshape((-1,) + (1,) * (psi.ndim - 1))
    return np.fft.ifft(k * np.fft.fft(psi, axis=0), axis=0)


def momentum_matrix(grid: SpatialGrid) -> np.ndarray:
    """Dense spectral representation of p = -i d/dx (use only on small grids)."""
    eye = np.eye(grid.n_points)
    p = momentum_apply(eye.astype(complex), grid)
    return 0.5 * (p + p.conj().T)


def particle_energy(psi: np.ndarray, grid: SpatialGrid, potential: PotentialSpec) -> float:
    dx = grid.spacing
    kin = np.vdot(psi, kinetic_apply(psi, grid)).real * dx
    pot = np.sum(potential(grid.x) * np.abs(psi) ** 2) * dx
    return float((kin + pot) / (np.sum(np.abs(psi) ** 2) * dx))


def _relax(psi, grid, vx, dt, tol, max_iter):
    half_v = np.exp(-0.5 * dt * vx)
    kin = np.exp(-0.5 * grid.k**2 * dt)
    dx = grid.spacing
    energy = np.inf
    for it in range(max_iter):
        for _ in range(20):
            psi = half_v * np.fft.ifft(kin * np.fft.fft(half_v * psi))
            psi /= math.sqrt(np.sum(np.abs(psi) ** 2) * dx)
        e_new = float(
            np.vdot(psi, kinetic_apply(psi, grid)).real * dx + np.sum(vx * np.abs(psi) ** 2) * dx
        )
        if abs(e_new - energy) < tol:
            return psi, e_new
        energy = e_new
    raise StabilityError(f"imaginary-time relaxation did not converge in {max_iter * 20} steps")


def ground_state(
    grid: SpatialGrid,
    potential: PotentialSpec,
    method: str = "imaginary_time",
    dt: float = 0.02,
    tol: float = 1e-10,
    max_iter: int = 20000,
) -> tuple[np.ndarray, float]:
    """Particle ground state and its energy.

    Imaginary-time Strang relaxation is repeated with halved steps until two
    successive energies agree; the splitting bias of the converged state is
    O(dt^2), so the energy bias is O(dt^4) and the halving difference bounds it
    (Richardson estimate ``|E(dt) - E(dt/2)| * 16/15``).
    """
    if method == "analytic":
        if potential.kind != "harmonic":
            raise ValueError("analytic ground state only exists for the harmonic trap")
        psi = gaussian_packet(grid, 0.0, 0.0, 1.0 / math.sqrt(2 * potential.omega)).astype(complex)
        return psi, particle_energy(psi, grid, potential)
    if method != "imaginary_time":
        raise ValueError(f"unknown ground-state method {method!r}")
    vx = potential(grid.x)
    psi = np.exp(-((grid.x - grid.x[np.argmin(vx)]) ** 2) / 2).astype(complex)
    psi /= math.sqrt(np.sum(np.abs(psi) ** 2) * grid.spacing)
    psi, e_prev = _relax(psi, grid, vx, dt, 1e-3 * tol, max_iter)
    for _ in range(12):
        dt /= 2
        psi, e = _relax(psi, grid, vx, dt, 1e-3 * tol, max_iter)
        if abs(e - e_prev) * 16 / 15 < tol:
            return psi, e
        e_prev = e
    raise StabilityError("ground-state energy did not converge under step halving")


def fock_amplitudes(oscillator, n_cut: int, tail_tol: float = 1e-8) -> np.ndarray:
    """Normalised Fock-basis amplitudes of a Gaussian oscillator state."""
    n = np.arange(n_cut)
    if isinstance(oscillator, Vacuum):
        amp = np.zeros(n_cut, complex)
        amp[0] = 1.0
        return amp
    if isinstance(oscillator, Coherent):
        beta = complex(oscillator.beta)
        if abs(beta) ** 2 > n_cut / 4:
            raise TruncationRiskError(f"|beta|^2 = {abs(beta) ** 2:.3g} exceeds n_cut/4 = {n_cut / 4}")
        if beta == 0:
            return fock_amplitudes(Vacuum(), n_cut)
        logmag = -abs(beta) ** 2 / 2 + n * math.log(abs(beta)) - 0.5 * gammaln(n + 1)
        amp = np.exp(logmag) * np.exp(1j * n * np.angle(beta))
    elif isinstance(oscillator, Squeezed):
        r, phi = oscillator.r, oscillator.phi
        amp = np.zeros(n_cut, complex)
        if r == 0:
            amp[0] = 1.0
            return amp
        m = n[::2] // 2
        t = math.tanh(r)
        logmag = 0.5 * gammaln(2 * m + 1) - gammaln(m + 1) - m * math.log(2) + m * math.log(t)
        amp[::2] = np.exp(logmag) * (-np.exp(1j * phi)) ** m / math.sqrt(math.cosh(r))
    else:
        raise TypeError(f"unsupported oscillator state {oscillator!r}")
    tail = 1.0 - float(np.sum(np.abs(amp) ** 2))
    if tail > tail_tol:
        raise TruncationRiskError(f"population {tail:.2e} lies above the Fock truncation n_cut={n_cut}")
    return amp / np.linalg.norm(amp)


def prepare_state(
    grid: SpatialGrid,
    fock: FockSpace,
    particle=TrapGround(),
    oscillator=Vacuum(),
    potential: PotentialSpec | None = None,
) -> CompositeState:
    """Product state particle (x) oscillator with unit norm."""
    if isinstance(particle, TrapGround):
        if potential is None:
            raise ValueError("a potential is required for the trap ground state")
        phi, _ = ground_state(grid, potential, method=particle.method)
    elif isinstance(particle, GaussianPacket):
        phi = gaussian_packet(grid, particle.x0, particle.p0, particle.sigma)
    else:
        phi = np.asarray(particle, dtype=complex)
        if phi.shape != (grid.n_points,):
            raise DimensionMismatchError("particle wavefunction does not match the grid")
    chi = fock_amplitudes(oscillator, fock.n_cut)
    state = CompositeState(grid, np.outer(phi, chi))
    return state.normalize()


# -- observables ---------------------------------------------------------------------


def expectation(state: CompositeState, particle=None, oscillator=None) -> complex:
    """<state| P (x) O |state> for a particle-side and/or oscillator-side operator.

    ``particle`` may be a full ``(n_points, n_points)`` matrix or a 1D array of
    diagonal entries (position-diagonal operators such as V(x)).  A missing side
    is the identity, so ``expectation(state)`` is the norm.
    """
    psi = state.amplitudes
    out = psi
    if particle is not None:
        particle = np.asarray(particle)
        if particle.shape == (state.grid.n_points,):
            out = particle[:, None] * out
        elif particle.shape == (state.grid.n_points, state.grid.n_points):
            out = particle @ out
        else:
            raise DimensionMismatchError(f"particle operator shape {particle.shape} does not match grid")
    if oscillator is not None:
        oscillator = np.asarray(oscillator)
        if oscillator.shape != (state.n_cut, state.n_cut):
            raise DimensionMismatchError(f"oscillator operator shape {oscillator.shape} != n_cut {state.n_cut}")
        out = out @ oscillator.T
    return complex(np.vdot(psi, out) * state.grid.spacing)


def reduced_oscillator(state: CompositeState) -> np.ndarray:
    """Oscillator density matrix, trace-normalised."""
    psi = state.amplitudes
    rho = psi.T @ psi.conj()
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def reduced_particle(state: CompositeState) -> np.ndarray:
    """Particle density matrix on the grid (rows/cols indexed by x_j), unit trace."""
    psi = state.amplitudes
    rho = psi @ psi.conj().T
    return rho / np.trace(rho).real


def top_level_population(state: CompositeState) -> float:
    return float(np.sum(np.abs(state.amplitudes[:, -1]) ** 2) * state.grid.spacing / state.norm)


def check_leakage(state: CompositeState, warn: float = LEAKAGE_WARN, error: float = LEAKAGE_ERROR) -> float:
    """Raise on heavy top-level Fock population, warn on moderate population."""
    pop = top_level_population(state)
    if pop > error:
        raise TruncationLeakageError(f"top Fock level population {pop:.3e} exceeds {error:g}")
    if pop > warn:
        warnings.warn(f"top Fock level population {pop:.3e} exceeds {warn:g}", TruncationWarning, stacklevel=2)
    return pop


# -- snapshots -----------------------------------------------------------------------


def save_snapshot(path, state: CompositeState) -> Path:
    """Write the binary snapshot: header then row-major interleaved (re, im) f64."""
    path = Path(path)
    g = state.grid
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, g.n_points, state.n_cut, g.x_min, g.x_max))
        fh.write(np.ascontiguousarray(state.amplitudes, dtype="<c16").tobytes())
    return path


def load_snapshot(path) -> CompositeState:
    data = Path(path).read_bytes()
    magic, n_points, n_cut, x_min, x_max = _SNAPSHOT_HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"not a QKH1 snapshot: magic {magic!r}")
    body = np.frombuffer(data, dtype="<c16", offset=_SNAPSHOT_HEADER.size)
    if body.size != n_points * n_cut:
        raise ValueError("snapshot body size does not match header")
    return CompositeState(SpatialGrid(n_points, x_min, x_max), body.reshape(n_points, n_cut).copy())
