"""Commutator kernel, effective-field series and the expansion parameter.

Operators linear in the ladder operators are handled through their complex
coefficients (see :mod:`qkh.drive`).  Writing ``u_k(t)`` for the coefficient of
``a_k`` in ``d/dt alpha_i``, the c-number commutator is

    F(t', t) = [d/dt alpha_i(t'), d/dt alpha_i(t)] = sum_k u_k(t') conj(u_k(t)) - c.c.

Conjugating ``d/dt alpha_i`` by the quadratic unitary
``T exp(+i/2 int (d/dt alpha_i)^2)`` gives a series in the number of F factors:

    alpha_R_dot(t) = d/dt alpha_i(t)
                     + i   int_{t_i}^t dtau F(tau, t) d/dt alpha_i(tau)
                     - int_{t_i}^t dtau2 int_{t_i}^{tau2} dtau1 F(tau1, t) F(tau2, tau1) d/dt alpha_i(tau2)
                     + ...

Each F carries a factor ell^2 w, i.e. one power of eps.  Two evaluation methods
are offered.  ``nested`` evaluates the integrals literally with adaptive
Gauss-Kronrod quadrature split into one panel per drive period.  ``separable``
uses the product structure of F to reduce everything to cumulative single
integrals that are integrated as an ODE; it is far faster and agrees with the
nested form to the quadrature tolerance.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import IntegrationWarning, quad, solve_ivp

from .drive import DriveSpec
from .errors import AccuracyError, RegimeViolationError
from .hilbert import FockSpace

QUAD_RTOL = 1e-9


def _modes(source) -> tuple[DriveSpec, ...]:
    """Normalise a DriveSpec, a sequence of them, or a bath to a tuple of modes."""
    if isinstance(source, DriveSpec):
        return (source,)
    if hasattr(source, "mode_specs"):
        return tuple(source.mode_specs())
    return tuple(source)


def _u(modes, t):
    return np.array([m.coeff_dot(t) for m in modes], dtype=complex)


def _udot(modes, t):
    return np.array([m.coeff_ddot(t) for m in modes], dtype=complex)


# -- kernel -------------------------------------------------------------------------


def commutator_kernel(source, tp, t):
    """Exact F(t', t) including envelope-derivative terms; purely imaginary."""
    total = 0j
    for m in _modes(source):
        z = m.coeff_dot(tp) * np.conj(m.coeff_dot(t))
        total = total + (z - np.conj(z))
    return total


def f_kernel_single_mode(spec: DriveSpec, tp, t):
    """Closed form -2i ell^2 w^2 f(t') f(t) sin(w (t' - t)) for a slowly varying envelope.

    The overall sign is the one produced by the matrix commutator of the
    truncated ladder operators.
    """
    if spec.envelope is not None and not spec.slow_envelope:
        raise RegimeViolationError(
            "closed-form kernel needs slow_envelope=True; use f_kernel_bruteforce or commutator_kernel"
        )
    w = spec.omega
    f1 = spec._env(tp)[0]
    f2 = spec._env(t)[0]
    return -2j * spec.ell**2 * w**2 * f1 * f2 * np.sin(w * (np.asarray(tp) - np.asarray(t)))


def f_kernel_bruteforce(spec: DriveSpec, tp: float, t: float, n_cut: int = 24):
    """Dense matrix commutator on the truncated space.

    Returns ``(scalar, defect)``: the identity component on the interior block
    (levels 0..n_cut-2, where the truncation cannot reach) and the spectral norm
    of what is left after removing it.
    """
    if n_cut < 8:
        raise ValueError("f_kernel_bruteforce needs n_cut >= 8")
    fock = FockSpace(n_cut)
    A = fock.linear(complex(spec.coeff_dot(tp)))
    B = fock.linear(complex(spec.coeff_dot(t)))
    C = (A @ B - B @ A)[: n_cut - 1, : n_cut - 1]
    scalar = complex(np.trace(C) / (n_cut - 1))
    defect = float(np.linalg.norm(C - scalar * np.eye(n_cut - 1), 2))
    return scalar, defect


def f_kernel_continuum(bath, tp, t):
    """Kernel of a discretised continuum: sum over modes of ell_k^2-weighted terms.

    With per-mode couplings ell_k = ell_w sqrt(dw) this is the midpoint rule for
    -2i int ell_w^2 w^2 sin(w (t' - t)) dw.
    """
    modes = _modes(bath)
    ells = np.array([m.ell for m in modes], dtype=float)
    if not np.all(np.isfinite(ells)):
        raise ValueError("coupling density is not finite on the mode grid")
    return commutator_kernel(modes, tp, t)


@dataclass(frozen=True)
class BCHDefect:
    nested: float          # ||[Z,[Z,X]]|| on the interior block
    commutator: float      # ||[Z,X] - 2 F(t',t) alpha_dot(t')|| on the interior block
    level_profile: np.ndarray  # row norms of [Z,[Z,X]] over all Fock levels


def bch_termination_check(spec: DriveSpec, tp: float, t: float, n_cut: int = 16) -> BCHDefect:
    """Check the two identities that make the conjugation series terminate.

    Z = alpha_dot(t')^2 and X = alpha_dot(t).  Products of three ladder
    operators reach two levels into the truncation edge, so the interior block is
    levels 0..n_cut-3.
    """
    fock = FockSpace(n_cut)
    Ap = fock.linear(complex(spec.coeff_dot(tp)))
    X = fock.linear(complex(spec.coeff_dot(t)))
    Z = Ap @ Ap
    C1 = Z @ X - X @ Z
    C2 = Z @ C1 - C1 @ Z
    F = complex(commutator_kernel(spec, tp, t))
    k = n_cut - 2
    nested = float(np.linalg.norm(C2[:k, :k], 2))
    comm = float(np.linalg.norm((C1 - 2 * F * Ap)[:k, :k], 2))
    return BCHDefect(nested, comm, np.linalg.norm(C2, axis=1))


# -- expansion parameter -------------------------------------------------------------


@dataclass(frozen=True)
class EpsilonReport:
    epsilon: float
    a_zp: float
    ell: float
    verdict: str
    m: float = 1.0
    omega: float = 1.0
    hbar: float = 1.0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("epsilon", "a_zp", "ell", "verdict", "m", "omega", "hbar")}


def regime_verdict(eps: float) -> str:
    if eps < 0.1:
        return "perturbative"
    if eps < 1.0:
        return "marginal"
    return "nonperturbative"


def epsilon_report(m: float, omega: float, ell: float, hbar: float = 1.0) -> EpsilonReport:
    """eps = ell^2 / (2 a_zp^2) with a_zp = sqrt(hbar / (2 m w))."""
    if not (m > 0 and omega > 0 and ell >= 0 and hbar > 0):
        raise ValueError("m, omega, hbar must be positive and ell non-negative")
    a_zp = math.sqrt(hbar / (2 * m * omega))
    eps = ell**2 / (2 * a_zp**2)
    return EpsilonReport(eps, a_zp, ell, regime_verdict(eps), m, omega, hbar)


def ell_for_epsilon(eps: float, omega: float, m: float = 1.0, hbar: float = 1.0) -> float:
    return math.sqrt(eps * hbar / (m * omega))


# -- effective field series ----------------------------------------------------------


class EffectiveField:
    """Coefficients of alpha_R_dot and alpha_R_ddot at a chosen order.

    ``coeff_dot(t)`` returns one complex coefficient per mode, so that
    ``alpha_R_dot(t) = sum_k c_k a_k + h.c.``.  ``coeff_ddot`` is its exact time
    derivative.

    ``t_max`` bounds the time range for continuous-wave modes; for enveloped
    modes the envelope end is used.
    """

    def __init__(self, source, order: int = 1, method: str = "separable", rtol: float = QUAD_RTOL, t_max=None):
        if order not in (0, 1, 2):
            raise ValueError("order must be 0, 1 or 2")
        if method not in ("separable", "nested"):
            raise ValueError("method must be 'separable' or 'nested'")
        self.modes = _modes(source)
        self.order = order
        self.method = method
        self.rtol = rtol
        self.t_i = min(m.t_i for m in self.modes)
        t_end = max(m.t_f for m in self.modes)
        if not np.isfinite(t_end):
            if t_max is None:
                raise ValueError("continuous-wave modes need an explicit t_max")
            t_end = float(t_max)
        self.t_end = t_end
        self.w_max = max(m.omega for m in self.modes)
        self._sol = None

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    # separable path: cumulative integrals of products of u

    def _rhs(self, t, y):
        M = self.n_modes
        u = _u(self.modes, t)
        z = y[: y.size // 2] + 1j * y[y.size // 2 :]
        P, Q = z[: M * M].reshape(M, M), z[M * M : 2 * M * M].reshape(M, M)
        out = [np.outer(u.conj(), u), np.outer(u, u)]
        if self.order >= 2:
            out += [
                np.outer(P.conj() @ u, u),
                np.outer(Q @ u.conj(), u),
                np.outer(Q.conj() @ u, u),
                np.outer(P @ u.conj(), u),
            ]
        d = np.concatenate([o.ravel() for o in out])
        return np.concatenate([d.real, d.imag])

    def _cumulative(self):
        if self._sol is None:
            M = self.n_modes
            n = (2 if self.order < 2 else 6) * M * M
            period = 2 * np.pi / self.w_max
            scale = max(1.0, max(abs(m.ell) for m in self.modes) ** 2 * self.w_max**2 * (self.t_end - self.t_i))
            self._sol = solve_ivp(
                self._rhs,
                (self.t_i, self.t_end),
                np.zeros(2 * n),
                method="DOP853",
                rtol=1e-12,
                atol=1e-16 * scale,
                max_step=period / 16,
                dense_output=True,
            )
            if not self._sol.success:
                raise AccuracyError(f"cumulative kernel integrals failed: {self._sol.message}")
        return self._sol

    def _tensors(self, t):
        M = self.n_modes
        t = min(max(t, self.t_i), self.t_end)
        y = self._cumulative().sol(t)
        z = y[: y.size // 2] + 1j * y[y.size // 2 :]
        return [z[i * M * M : (i + 1) * M * M].reshape(M, M) for i in range(z.size // (M * M))]

    def _separable(self, t, deriv: bool):
        u = _u(self.modes, t)
        ud = _udot(self.modes, t)
        lead = ud if deriv else u
        if self.order == 0 or t <= self.t_i:
            return lead
        tens = self._tensors(t)
        P, Q = tens[0], tens[1]
        uc = u.conj()
        if not deriv:
            c = u + 1j * (uc @ Q - u @ P)
        else:
            c = ud + 1j * (ud.conj() @ Q - ud @ P)
        if self.order >= 2:
            T1, T2, T3, T4 = tens[2:]
            if not deriv:
                c = c - (uc @ (T1 - T2) + u @ (T4 - T3))
            else:
                S = P.conj()
                # d/dt of the nested term: derivative on the outer coefficient plus the tau2 = t endpoint
                edge = (
                    (uc @ (S @ u)) * u
                    - (uc @ (Q @ uc)) * u
                    + (u @ (P @ uc)) * u
                    - (u @ (Q.conj() @ u)) * u
                )
                c = c - (ud.conj() @ (T1 - T2) + ud @ (T4 - T3) + edge)
        return c

    # nested path: literal Gauss-Kronrod quadrature

    def _quad(self, func, a, b):
        if b <= a:
            return 0j
        period = 2 * np.pi / self.w_max
        edges = np.arange(a, b, period)
        edges = np.append(edges, b)
        total = 0j
        with warnings.catch_warnings():
            warnings.simplefilter("error", IntegrationWarning)
            for lo, hi in zip(edges[:-1], edges[1:]):
                if hi - lo <= 0:
                    continue
                try:
                    val, err = quad(func, lo, hi, complex_func=True, epsabs=1e-300, epsrel=self.rtol, limit=200)
                except IntegrationWarning as exc:
                    raise AccuracyError(f"kernel quadrature did not converge on [{lo:.4g}, {hi:.4g}]: {exc}") from exc
                total += val
        return total

    def _nested(self, t, deriv: bool):
        modes = self.modes
        u_t = _u(modes, t)
        ud_t = _udot(modes, t)
        if self.order == 0 or t <= self.t_i:
            return ud_t if deriv else u_t

        def F(a, b):
            return complex(commutator_kernel(modes, a, b))

        def dF(tau):
            # d/dt F(tau, t)
            uu = _u(modes, tau)
            return complex(np.sum(uu * ud_t.conj() - uu.conj() * ud_t))

        kern = dF if deriv else (lambda tau: F(tau, t))
        out = (ud_t if deriv else u_t).astype(complex).copy()
        for k, m in enumerate(modes):
            out[k] += 1j * self._quad(lambda tau: kern(tau) * complex(m.coeff_dot(tau)), self.t_i, t)
            if self.order >= 2:
                def inner(t2, _kern=kern):
                    return self._quad(lambda t1: _kern(t1) * F(t2, t1), self.t_i, t2)

                nested = self._quad(lambda t2: inner(t2) * complex(m.coeff_dot(t2)), self.t_i, t)
                if deriv:
                    nested -= complex(m.coeff_dot(t)) * self._quad(lambda t1: F(t1, t) ** 2, self.t_i, t)
                out[k] -= nested
        return out

    def coeff_dot(self, t: float) -> np.ndarray:
        t = float(t)
        return self._separable(t, False) if self.method == "separable" else self._nested(t, False)

    def coeff_ddot(self, t: float) -> np.ndarray:
        t = float(t)
        return self._separable(t, True) if self.method == "separable" else self._nested(t, True)


@lru_cache(maxsize=64)
def _cached_field(modes: tuple, order: int, method: str, t_max) -> EffectiveField:
    return EffectiveField(modes, order, method, t_max=t_max)


def effective_field(source, order: int = 1, method: str = "separable", t_max=None) -> EffectiveField:
    """Cached :class:`EffectiveField`; specs are immutable so the cache is safe to share."""
    return _cached_field(_modes(source), order, method, t_max)


def alpha_R_dot(spec: DriveSpec, order: int, t: float, fock=16, method: str = "separable", t_max=None) -> np.ndarray:
    """Single-mode alpha_R_dot(t) as an oscillator matrix."""
    fock = fock if isinstance(fock, FockSpace) else FockSpace(int(fock))
    if order == 0:
        return fock.linear(complex(spec.coeff_dot(t)))
    c = effective_field(spec, order, method, t_max).coeff_dot(t)[0]
    return fock.linear(complex(c))


def alpha_R_ddot(spec: DriveSpec, order: int, t: float, fock=16, method: str = "separable", t_max=None) -> np.ndarray:
    """Single-mode alpha_R_ddot(t), the exact time derivative of :func:`alpha_R_dot`."""
    fock = fock if isinstance(fock, FockSpace) else FockSpace(int(fock))
    if order == 0:
        return fock.linear(complex(spec.coeff_ddot(t)))
    c = effective_field(spec, order, method, t_max).coeff_ddot(t)[0]
    return fock.linear(complex(c))


def correction_norms(source, t, order: int = 2, t_max=None) -> dict:
    """Operator norms of the order-0 term and of each added correction at times t.

    For a single mode the operator norm of ``c a + h.c.`` on the untruncated
    space is unbounded, so the coefficient modulus ``|c|`` is reported instead;
    it is the norm per unit quadrature amplitude.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    fields = [effective_field(source, k, t_max=t_max) for k in range(order + 1)]
    prev = None
    out = {"t": t}
    for k, fld in enumerate(fields):
        cs = np.array([fld.coeff_ddot(tt) for tt in t])
        if prev is None:
            out["order0"] = np.linalg.norm(cs, axis=1)
        else:
            out[f"order{k}_correction"] = np.linalg.norm(cs - prev, axis=1)
        prev = cs
    return out


def export_kernel_csv(path, source, times) -> Path:
    """Write rows (t', t, Im F(t', t)) over the product grid ``times x times``."""
    path = Path(path)
    times = np.asarray(times, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_prime", "t", "im_F"])
        for tp in times:
            vals = np.imag(commutator_kernel(source, tp, times))
            for tt, v in zip(times, np.atleast_1d(vals)):
                w.writerow([repr(float(tp)), repr(float(tt)), repr(float(v))])
    return path

