"""Pulse envelopes and the quantized trap-position operators.

Every operator here is linear in the ladder operators, so it is carried around
as a single complex coefficient ``c(t)`` standing for ``c a + conj(c) a^dag``.
In the oscillator interaction picture

    alpha_i(t)       = ell f e^{-i w t} a + h.c.
    d/dt alpha_i(t)  = ell (f' - i w f) e^{-i w t} a + h.c.
    d2/dt2 alpha_i   = ell (f'' - 2 i w f' - w^2 f) e^{-i w t} a + h.c.

With ``slow_envelope`` the envelope derivatives are dropped, leaving the
``-i w f`` and ``-w^2 f`` terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import RegimeViolationError
from .hilbert import FockSpace

SLOW_THRESHOLD = 10.0
ENVELOPE_KINDS = ("sin_squared", "flat_top_cosine_ramps", "gaussian")


@dataclass(frozen=True)
class Envelope:
    """Smooth switch-on/off function supported on ``[t_i, t_f]``.

    kinds
        ``sin_squared``: sin^2(pi (t - t_i)/(t_f - t_i)); scale T = t_f - t_i.
        ``flat_top_cosine_ramps``: sin^2 ramps of length ``ramp`` around a flat
        top; scale T = ramp.
        ``gaussian``: squared, baseline-shifted Gaussian centred in the window,
        ``((g - g_e)/(1 - g_e))^2`` with ``g = exp(-(t - t_c)^2 / (2 sigma^2))``
        and ``g_e`` its edge value, so f and f' vanish at both ends;
        scale T = sigma.
    """

    kind: str = "sin_squared"
    t_i: float = 0.0
    t_f: float = 2 * np.pi
    ramp: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if self.kind not in ENVELOPE_KINDS:
            raise ValueError(f"unknown envelope kind {self.kind!r}; choose from {ENVELOPE_KINDS}")
        if not self.t_f > self.t_i:
            raise ValueError("envelope needs t_f > t_i")
        if self.kind == "flat_top_cosine_ramps":
            if self.ramp is None or not 0 < self.ramp <= 0.5 * self.duration:
                raise ValueError("flat-top envelope needs 0 < ramp <= (t_f - t_i)/2")
        if self.kind == "gaussian":
            if self.sigma is None:
                object.__setattr__(self, "sigma", self.duration / 6)
            if not self.sigma > 0:
                raise ValueError("gaussian envelope needs sigma > 0")

    @property
    def duration(self) -> float:
        return self.t_f - self.t_i

    @property
    def scale(self) -> float:
        """Characteristic time T used in the slow-envelope criterion w T >= 10."""
        if self.kind == "sin_squared":
            return self.duration
        if self.kind == "flat_top_cosine_ramps":
            return self.ramp
        return self.sigma

    @cached_property
    def c_env(self) -> float:
        """max|f'| * T, the constant in ||dot(full) - dot(slow)|| / ||dot(slow)|| <= c_env / (w T)."""
        if self.kind == "sin_squared":
            return math.pi
        if self.kind == "flat_top_cosine_ramps":
            return math.pi / 2
        t = np.linspace(self.t_i, self.t_f, 20001)
        return float(np.max(np.abs(self.derivatives(t)[1])) * self.sigma)

    def derivatives(self, t):
        """(f, f', f'') as arrays; zero outside the support."""
        t = np.asarray(t, dtype=float)
        f = np.zeros_like(t)
        fp = np.zeros_like(t)
        fpp = np.zeros_like(t)
        inside = (t > self.t_i) & (t < self.t_f)
        if self.kind == "sin_squared":
            w = math.pi / self.duration
            s = w * (t - self.t_i)
            f = np.where(inside, np.sin(s) ** 2, 0.0)
            fp = np.where(inside, w * np.sin(2 * s), 0.0)
            fpp = np.where(inside, 2 * w * w * np.cos(2 * s), 0.0)
        elif self.kind == "flat_top_cosine_ramps":
            w = math.pi / (2 * self.ramp)
            up = inside & (t < self.t_i + self.ramp)
            down = inside & (t > self.t_f - self.ramp)
            flat = inside & ~up & ~down
            s_up = w * (t - self.t_i)
            s_dn = w * (self.t_f - t)
            f = np.where(up, np.sin(s_up) ** 2, np.where(down, np.sin(s_dn) ** 2, np.where(flat, 1.0, 0.0)))
            fp = np.where(up, w * np.sin(2 * s_up), np.where(down, -w * np.sin(2 * s_dn), 0.0))
            fpp = np.where(up, 2 * w * w * np.cos(2 * s_up), np.where(down, 2 * w * w * np.cos(2 * s_dn), 0.0))
        else:
            tc = 0.5 * (self.t_i + self.t_f)
            s2 = self.sigma**2
            ge = math.exp(-((0.5 * self.duration) ** 2) / (2 * s2))
            tau = t - tc
            g = np.exp(-(tau**2) / (2 * s2))
            gp = -tau / s2 * g
            gpp = (tau**2 / s2 - 1) / s2 * g
            h = (g - ge) / (1 - ge)
            hp = gp / (1 - ge)
            hpp = gpp / (1 - ge)
            f = np.where(inside, h * h, 0.0)
            fp = np.where(inside, 2 * h * hp, 0.0)
            fpp = np.where(inside, 2 * (hp * hp + h * hpp), 0.0)
        return f, fp, fpp


def envelope_eval(env: Envelope | None, t):
    """(f(t), f'(t)); ``env=None`` is a continuous wave with f = 1."""
    if env is None:
        t = np.asarray(t, dtype=float)
        return np.ones_like(t), np.zeros_like(t)
    f, fp, _ = env.derivatives(t)
    return f, fp


@dataclass(frozen=True)
class DriveSpec:
    """Single quantized drive mode coupled to the trap position.

    ``envelope=None`` means a continuous wave (f = 1 for all t), which is only
    meaningful for steady-state checks; physical pulses should use an
    :class:`Envelope`.  ``ell = 0`` is accepted as the decoupled limit.
    """

    ell: float
    omega: float
    envelope: Envelope | None = Envelope()
    slow_envelope: bool = False

    def __post_init__(self):
        if not self.ell >= 0:
            raise ValueError("coupling length ell must be >= 0")
        if not self.omega > 0:
            raise ValueError("mode frequency omega must be > 0")
        if self.slow_envelope and self.envelope is not None:
            wt = self.omega * self.envelope.scale
            if wt < SLOW_THRESHOLD:
                raise RegimeViolationError(
                    f"slow envelope needs omega*T >= {SLOW_THRESHOLD:g}, got {wt:.3g}"
                )

    @property
    def t_i(self) -> float:
        return 0.0 if self.envelope is None else self.envelope.t_i

    @property
    def t_f(self) -> float:
        return np.inf if self.envelope is None else self.envelope.t_f

    def _env(self, t):
        if self.envelope is None:
            t = np.asarray(t, dtype=float)
            return np.ones_like(t), np.zeros_like(t), np.zeros_like(t)
        return self.envelope.derivatives(t)

    def coeff_alpha(self, t):
        f, _, _ = self._env(t)
        return self.ell * f * np.exp(-1j * self.omega * np.asarray(t, dtype=float))

    def coeff_dot(self, t):
        f, fp, _ = self._env(t)
        w = self.omega
        if self.slow_envelope:
            fp = 0.0
        return self.ell * (fp - 1j * w * f) * np.exp(-1j * w * np.asarray(t, dtype=float))

    def coeff_ddot(self, t):
        f, fp, fpp = self._env(t)
        w = self.omega
        if self.slow_envelope:
            fp = fpp = 0.0
        return self.ell * (fpp - 2j * w * fp - w * w * f) * np.exp(-1j * w * np.asarray(t, dtype=float))


def _fock(fock) -> FockSpace:
    return fock if isinstance(fock, FockSpace) else FockSpace(int(fock))


def alpha_op(spec: DriveSpec, t: float, fock=16) -> np.ndarray:
    """Schroedinger-picture trap displacement ell f(t) (a + a^dag)."""
    fock = _fock(fock)
    f, _ = envelope_eval(spec.envelope, t)
    return spec.ell * float(f) * (fock.a + fock.adag)


def alpha_i(spec: DriveSpec, t: float, fock=16) -> np.ndarray:
    return _fock(fock).linear(complex(spec.coeff_alpha(t)))


def alpha_i_dot(spec: DriveSpec, t: float, fock=16) -> np.ndarray:
    return _fock(fock).linear(complex(spec.coeff_dot(t)))


def alpha_i_ddot(spec: DriveSpec, t: float, fock=16) -> np.ndarray:
    return _fock(fock).linear(complex(spec.coeff_ddot(t)))
