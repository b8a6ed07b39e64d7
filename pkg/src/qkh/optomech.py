"""SI-facing map from cavity-optomechanics parameters onto the quantized-trap model.

The trapped object (mass m, trap frequency Omega) plays the particle and a
cavity mode at effective frequency w plays the quantized oscillator.
Completing the square in the radiation-pressure coupling gives a trap
displacement of length

    ell = 2 x_zp sqrt(n_ph) g0 / Omega,   x_zp = sqrt(hbar / (2 m Omega)),

and the expansion parameter eps = m w ell^2 / hbar = 2 n_ph (g0/Omega)^2 (w/Omega).
The core runs in natural units of the mechanical trap: time 1/Omega, length
sqrt(hbar / (m Omega)).
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .effective import epsilon_report, regime_verdict
from .errors import SlowModulationError

HBAR = 1.054571817e-34
ATOMIC_MASS = 1.66053906660e-27
RB87_MASS = 86.909180527 * ATOMIC_MASS
SLOW_MODULATION_RATIO = 0.1


@dataclass(frozen=True)
class OptomechParams:
    """SI inputs; give exactly one of ``g0`` (rad/s) or ``G`` (rad/s/m)."""

    m: float
    Omega: float
    omega: float
    kappa: float
    n0: float
    omega0: float
    g0: float | None = None
    G: float | None = None

    def __post_init__(self):
        if (self.g0 is None) == (self.G is None):
            raise ValueError("supply exactly one of g0 or G")
        for name in ("m", "Omega", "omega", "kappa", "omega0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.n0 >= 0:
            raise ValueError("n0 must be >= 0")
        coupling = self.g0 if self.g0 is not None else self.G
        if not coupling >= 0:
            raise ValueError("coupling must be >= 0")

    @property
    def x_zp(self) -> float:
        return math.sqrt(HBAR / (2 * self.m * self.Omega))

    @property
    def coupling_g0(self) -> float:
        return self.g0 if self.g0 is not None else self.G * self.x_zp

    @property
    def coupling_G(self) -> float:
        return self.G if self.G is not None else self.g0 / self.x_zp


def rb87_setting(omega: float = 1e8, n0: float = 1e4, omega0: float = 2 * math.pi * 1e4) -> OptomechParams:
    """Atomic-cloud setting: Omega = 2pi 400 kHz, g0 = 2pi 100 Hz, kappa = 2pi 1 MHz.

    ``omega0`` is not fixed by the setting; the default keeps it two decades
    below kappa.
    """
    return OptomechParams(
        m=RB87_MASS,
        Omega=2 * math.pi * 4e5,
        omega=omega,
        kappa=2 * math.pi * 1e6,
        n0=n0,
        omega0=omega0,
        g0=2 * math.pi * 100.0,
    )


def photon_modulation(n0: float, omega0: float, t):
    """n_ph(t) = n0 (1 - sin(w0 t))."""
    if n0 < 0:
        raise ValueError("n0 must be >= 0")
    return n0 * (1.0 - np.sin(omega0 * np.asarray(t, dtype=float)))


def epsilon_formula(n_ph: float, g0: float, Omega: float, omega: float) -> float:
    return 2 * n_ph * (g0 / Omega) ** 2 * (omega / Omega)


@dataclass(frozen=True)
class QkhMapping:
    ell: float                 # m, coupling length at the mean photon number n0
    ell_per_photon: float      # m, 2 x_zp g0 / Omega
    epsilon: float
    epsilon_peak: float        # at the modulation maximum 2 n0
    x_zp: float
    a_zp: float                # zero-point length of the cavity-mode oscillator at w
    g0: float
    G: float
    slow_modulation: bool
    perturbative: bool
    verdict: str
    time_unit: float           # s per natural time unit (1/Omega)
    length_unit: float         # m per natural length unit sqrt(hbar/(m Omega))
    ell_natural: float
    omega_natural: float

    def alpha_m(self, t, omega0: float, n0: float, envelope=None):
        """Classical trap trajectory ell_per_photon f(t) sqrt(n_ph(t)) in metres (f = 1 by default)."""
        f = 1.0 if envelope is None else envelope(t)
        return self.ell_per_photon * f * np.sqrt(photon_modulation(n0, omega0, t))

    def as_dict(self) -> dict:
        return asdict(self)


def map_to_qkh(params: OptomechParams, severity: str = "error") -> QkhMapping:
    """Derive ell, eps and validity flags; ``severity`` is 'error' or 'warn' for slow modulation."""
    if severity not in ("error", "warn"):
        raise ValueError("severity must be 'error' or 'warn'")
    slow = params.omega0 < SLOW_MODULATION_RATIO * params.kappa
    if not slow:
        msg = f"modulation w0={params.omega0:.3g} rad/s is not below kappa/10={params.kappa / 10:.3g} rad/s"
        if severity == "error":
            raise SlowModulationError(msg)
        warnings.warn(msg, stacklevel=2)
    g0 = params.coupling_g0
    x_zp = params.x_zp
    per_photon = 2 * x_zp * g0 / params.Omega
    ell = per_photon * math.sqrt(params.n0)
    rep = epsilon_report(params.m, params.omega, ell, hbar=HBAR)
    eps = rep.epsilon
    length_unit = math.sqrt(HBAR / (params.m * params.Omega))
    return QkhMapping(
        ell=ell,
        ell_per_photon=per_photon,
        epsilon=eps,
        epsilon_peak=epsilon_formula(2 * params.n0, g0, params.Omega, params.omega),
        x_zp=x_zp,
        a_zp=rep.a_zp,
        g0=g0,
        G=params.coupling_G,
        slow_modulation=slow,
        perturbative=eps < 1.0,
        verdict=rep.verdict,
        time_unit=1.0 / params.Omega,
        length_unit=length_unit,
        ell_natural=ell / length_unit,
        omega_natural=params.omega / params.Omega,
    )


def convention_report(params: OptomechParams, severity: str = "error") -> dict:
    """eps with the stated w read as angular (rad/s) and as ordinary frequency (Hz -> 2 pi w)."""
    out = {}
    for name, w in (("angular", params.omega), ("ordinary", 2 * math.pi * params.omega)):
        p = OptomechParams(
            params.m, params.Omega, w, params.kappa, params.n0, params.omega0, params.g0, params.G
        )
        mp = map_to_qkh(p, severity)
        out[name] = {"omega_rad_s": w, "epsilon": mp.epsilon, "verdict": regime_verdict(mp.epsilon)}
    return out


def kerr_phase_audit(params: OptomechParams, duration: float) -> dict:
    """Phase spread of the eliminated (c^dag c)^2 term over ``duration`` seconds.

    The term has rate chi = hbar G^2 / (2 m Omega^2) = g0^2 / Omega.  Across a
    coherent state's number spread sqrt(n) the phase chi n^2 t fans out by
    about 2 chi n sqrt(n) t.  Report-only.
    """
    chi = params.coupling_g0**2 / params.Omega
    n = params.n0
    spread = 2 * chi * n * math.sqrt(n) * duration
    return {"chi_rad_s": chi, "n_ph": n, "duration_s": duration, "phase_spread_rad": spread}


def mapping_report(params: OptomechParams, duration: float = 1e-3, severity: str = "warn") -> dict:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mp = map_to_qkh(params, severity)
        conv = convention_report(params, severity)
    return {
        "inputs": asdict(params),
        "mapping": mp.as_dict(),
        "conventions": conv,
        "kerr": kerr_phase_audit(params, duration),
        "flags": {"slow_modulation": mp.slow_modulation, "perturbative": mp.perturbative},
    }


def write_report(path, report: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True))
    return path
