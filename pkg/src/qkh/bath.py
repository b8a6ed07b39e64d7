"""Discretised continuum of drive modes and pulse shaping from wave packets.

A coupling density ell_w (length per unit frequency) is sampled on a midpoint
grid of M modes.  Mode k then couples with ell_k = ell_w(w_k) sqrt(dw), which
makes sums of ell_k^2 (the only combination entering commutators) the midpoint
rule for the frequency integral of ell_w^2.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .drive import DriveSpec
from .errors import DimensionBudgetError, PulseDesignError
from .hilbert import Coherent, fock_amplitudes, make_annihilation

DEFAULT_MODES = 64
MAX_OSCILLATOR_DIM = 1024
EDGE_FRACTION = 1e-3


@dataclass(frozen=True)
class CouplingDensity:
    """ell_w as a function of w.

    ``flat``: ``amplitude`` everywhere.  ``gaussian``: ``amplitude *
    exp(-(w - center)^2 / (2 width^2))``.  ``table``: linear interpolation of
    (``omegas``, ``values``), zero outside the table.
    """

    kind: str = "flat"
    amplitude: float = 0.0
    center: float = 1.0
    width: float = 0.1
    omegas: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("flat", "gaussian", "table"):
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.kind == "gaussian" and not self.width > 0:
            raise ValueError("gaussian density needs width > 0")
        if self.kind == "table":
            w = np.asarray(self.omegas, dtype=float)
            if w.size < 2 or w.size != len(self.values) or np.any(np.diff(w) <= 0):
                raise ValueError("table density needs >= 2 strictly increasing frequencies with matching values")

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "flat":
            return np.full_like(w, self.amplitude)
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-((w - self.center) ** 2) / (2 * self.width**2))
        return np.interp(w, np.asarray(self.omegas, float), np.asarray(self.values, float), left=0.0, right=0.0)


def load_density_csv(path) -> CouplingDensity:
    """Read a two-column CSV (w, ell_w); a header row is skipped if present."""
    rows = []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                if rows:
                    raise
    w, v = zip(*rows)
    return CouplingDensity("table", omegas=tuple(w), values=tuple(v))


@dataclass(frozen=True)
class BathSpec:
    """M discrete modes with effective couplings and initial coherent amplitudes."""

    omegas: tuple
    ells: tuple
    d_omega: float
    betas: tuple = ()
    n_cut: int = 4

    def __post_init__(self):
        M = len(self.omegas)
        if M < 1 or len(self.ells) != M:
            raise ValueError("bath needs M >= 1 modes with one coupling each")
        if not self.betas:
            object.__setattr__(self, "betas", (0j,) * M)
        if len(self.betas) != M:
            raise ValueError("need one coherent amplitude per mode")
        if np.any(np.asarray(self.ells) < 0) or not np.all(np.isfinite(self.ells)):
            raise ValueError("mode couplings must be finite and >= 0")
        if np.any(np.asarray(self.omegas) <= 0):
            raise ValueError("mode frequencies must be > 0")

    @property
    def n_modes(self) -> int:
        return len(self.omegas)

    @property
    def mode_dims(self) -> tuple:
        return (self.n_cut,) * self.n_modes

    @property
    def dim(self) -> int:
        return self.n_cut**self.n_modes

    def with_betas(self, betas) -> "BathSpec":
        return BathSpec(self.omegas, self.ells, self.d_omega, tuple(complex(b) for b in betas), self.n_cut)

    def mode_specs(self) -> list[DriveSpec]:
        """Each mode as a continuous-wave single-mode drive."""
        return [DriveSpec(float(l), float(w), envelope=None) for l, w in zip(self.ells, self.omegas)]

    def _check_dim(self):
        if self.dim > MAX_OSCILLATOR_DIM:
            raise DimensionBudgetError(
                f"bath oscillator dimension {self.n_cut}^{self.n_modes} = {self.dim} exceeds {MAX_OSCILLATOR_DIM}",
                "bath",
            )

    @cached_property
    def ladders(self) -> list[np.ndarray]:
        self._check_dim()
        a = make_annihilation(self.n_cut)
        eye = np.eye(self.n_cut)
        ops = []
        for k in range(self.n_modes):
            m = np.ones((1, 1))
            for j in range(self.n_modes):
                m = np.kron(m, a if j == k else eye)
            ops.append(m.astype(complex))
        return ops

    def linear(self, coeffs) -> np.ndarray:
        """sum_k c_k a_k + h.c. on the product space."""
        out = np.zeros((self.dim, self.dim), complex)
        for c, a in zip(coeffs, self.ladders):
            out += c * a + np.conj(c) * a.conj().T
        return out

    def alpha_operator(self) -> np.ndarray:
        """Schroedinger-picture trap displacement sum_k ell_k (a_k + a_k^dag)."""
        return self.linear(np.asarray(self.ells, dtype=complex))

    def alpha_i(self, t: float) -> np.ndarray:
        return self.linear(np.asarray(self.ells) * np.exp(-1j * np.asarray(self.omegas) * t))

    def free_energies(self) -> np.ndarray:
        """Diagonal of sum_k w_k a_k^dag a_k in the product basis."""
        n = np.indices(self.mode_dims).reshape(self.n_modes, -1)
        return np.asarray(self.omegas, float) @ n

    def coherent_amplitudes(self) -> np.ndarray:
        """Product coherent state of all modes as a vector on the product space."""
        v = np.ones(1, complex)
        for b in self.betas:
            v = np.kron(v, fock_amplitudes(Coherent(b), self.n_cut))
        return v


def discretize(density: CouplingDensity, omega_range, M: int = DEFAULT_MODES, betas=None, n_cut: int = 4) -> BathSpec:
    """Midpoint mode grid on ``omega_range`` with ell_k = ell_w(w_k) sqrt(dw)."""
    w_min, w_max = map(float, omega_range)
    if M < 1:
        raise ValueError("M must be >= 1")
    if not 0 < w_min < w_max:
        raise ValueError("omega_range must satisfy 0 < w_min < w_max")
    dw = (w_max - w_min) / M
    w = w_min + (np.arange(M) + 0.5) * dw
    dens = np.asarray(density(w), dtype=float)
    if not np.all(np.isfinite(dens)):
        raise ValueError("coupling density is not finite on the mode grid")
    if np.any(dens < 0):
        raise ValueError("coupling density must be >= 0")
    ells = dens * math.sqrt(dw)
    b = tuple(complex(x) for x in betas) if betas is not None else ()
    return BathSpec(tuple(float(x) for x in w), tuple(float(x) for x in ells), dw, b, n_cut)


def single_mode_bath(spec: DriveSpec, beta: complex = 0j, n_cut: int = 4, d_omega: float = 1e-3) -> BathSpec:
    """One-mode bath whose density is a narrow box of weight ell^2 around w."""
    return BathSpec((spec.omega,), (spec.ell,), d_omega, (complex(beta),), n_cut)


def gaussian_wavepacket(bath: BathSpec, center: float, width: float, amplitude: float, t_center: float = 0.0) -> BathSpec:
    """Coherent amplitudes beta_k = A exp(-(w_k - w_c)^2 / (2 s^2)) exp(i w_k t_c).

    With a flat density the mean trap trajectory is then a pulse centred at
    ``t_center`` with Gaussian envelope exp(-s^2 (t - t_c)^2 / 2) oscillating
    at ``center``.
    """
    w = np.asarray(bath.omegas)
    betas = amplitude * np.exp(-((w - center) ** 2) / (2 * width**2)) * np.exp(1j * w * t_center)
    return bath.with_betas(betas)


def mean_alpha(bath: BathSpec, t):
    """<alpha_i(t)> over the product coherent state: sum_k ell_k 2 Re(beta_k e^{-i w_k t})."""
    t = np.asarray(t, dtype=float)
    w = np.asarray(bath.omegas)
    coef = np.asarray(bath.ells) * np.asarray(bath.betas)
    return 2 * np.real(np.exp(-1j * np.multiply.outer(t, w)) @ coef)


@dataclass(frozen=True)
class Pulse:
    times: np.ndarray
    alpha: np.ndarray
    peak: float
    edge: float


def pulse_from_wavepacket(bath: BathSpec, window, n_samples: int = 2001) -> Pulse:
    """Mean trap trajectory over ``window`` with the switched-off-at-the-edges check.

    The discrete mode sum recurs with period 2 pi / dw, so the window must be
    shorter than that.  The trajectory at both window edges must be below
    1e-3 of its peak, otherwise the packet does not describe a pulse that
    vanishes in the far past.
    """
    t0, t1 = map(float, window)
    if not t1 > t0:
        raise ValueError("window must have t1 > t0")
    recurrence = 2 * np.pi / bath.d_omega
    if bath.n_modes > 1 and t1 - t0 >= recurrence:
        raise PulseDesignError(f"window {t1 - t0:.3g} exceeds the mode-grid recurrence time {recurrence:.3g}")
    times = np.linspace(t0, t1, n_samples)
    alpha = mean_alpha(bath, times)
    peak = float(np.max(np.abs(alpha)))
    edge = float(max(abs(alpha[0]), abs(alpha[-1])))
    if peak > 0 and edge >= EDGE_FRACTION * peak:
        raise PulseDesignError(f"trajectory at window edge is {edge / peak:.2e} of peak (limit {EDGE_FRACTION:g})")
    return Pulse(times, alpha, peak, edge)


def alpha_i_bath(bath: BathSpec, t: float) -> np.ndarray:
    return bath.alpha_i(t)
