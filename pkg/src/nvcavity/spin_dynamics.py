"""Ground-state spin observables of a single NV: ODMR, Rabi, Hahn echo.

Frequencies are in MHz unless a name says GHz/kHz; times are in us.
The magnetic field is axial (along the NV axis) and the secular
approximation is used throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, InputError

# Literature constants; overridable through SpinParams.
D_ZFS_GHZ = 2.870
GAMMA_E_MHZ_PER_MT = 28.024
A_15N_MHZ = 3.05
GAMMA_13C_KHZ_PER_MT = 10.705


@dataclass(frozen=True)
class SpinParams:
    d_zfs: float = D_ZFS_GHZ
    gamma_e: float = GAMMA_E_MHZ_PER_MT
    b_field: float = 2.0
    a_hyperfine: float = A_15N_MHZ
    t2_star: float = 1.0
    t2: float = 230.0
    t2_prime: float = math.inf
    bath_larmor: float | None = None
    revival_width: float = 5.0

    def __post_init__(self):
        if not self.d_zfs > 0:
            raise DomainError(f"d_zfs must be > 0, got {self.d_zfs}")
        if self.b_field < 0:
            raise DomainError(f"b_field must be >= 0, got {self.b_field}")
        if not (self.t2_star > 0 and self.t2 >= self.t2_star):
            raise DomainError("need t2 >= t2_star > 0")
        if not self.t2_prime > 0:
            raise DomainError(f"t2_prime must be > 0, got {self.t2_prime}")
        if self.bath_larmor is not None and self.bath_larmor < 0:
            raise DomainError(f"bath_larmor must be >= 0, got {self.bath_larmor}")

    @property
    def larmor_khz(self):
        """13C bath Larmor frequency, from the field unless set explicitly."""
        if self.bath_larmor is not None:
            return self.bath_larmor
        return GAMMA_13C_KHZ_PER_MT * self.b_field

    @property
    def revival_period(self):
        larmor = self.larmor_khz
        return 1e3 / larmor if larmor > 0 else math.inf


@dataclass(frozen=True)
class EchoModel:
    t2: float = 230.0
    exponent_p: float = 1.0
    revival_period: float = 46.7
    revival_depth: float = 0.0
    revival_width: float = 5.0

    def __post_init__(self):
        if not self.t2 > 0:
            raise DomainError(f"t2 must be > 0, got {self.t2}")
        if not 0.5 <= self.exponent_p <= 4:
            raise DomainError(f"exponent_p must lie in [0.5, 4], got {self.exponent_p}")
        if not 0 <= self.revival_depth <= 1:
            raise DomainError(f"revival_depth must lie in [0, 1], got {self.revival_depth}")
        if not self.revival_period > 0 or not self.revival_width > 0:
            raise DomainError("revival_period and revival_width must be > 0")

    @classmethod
    def from_spin(cls, params, exponent_p=1.0, revival_depth=0.8):
        return cls(t2=params.t2, exponent_p=exponent_p,
                   revival_period=params.revival_period,
                   revival_depth=revival_depth, revival_width=params.revival_width)


def odmr_resonances(params, linewidth=None):
    """Centres (GHz) and relative weights of all ODMR lines.

    Each ``m_s = 0 -> +-1`` transition carries weight 1/2. It is split into a
    hyperfine doublet of equal halves when ``a_hyperfine > linewidth/3``
    (or always, if ``linewidth`` is None and ``a_hyperfine > 0``).
    """
    zeeman = params.gamma_e * params.b_field * 1e-3
    centres = [params.d_zfs - zeeman, params.d_zfs + zeeman]
    resolved = params.a_hyperfine > 0 and (linewidth is None
                                           or params.a_hyperfine > linewidth / 3)
    lines = []
    for c in centres:
        if resolved:
            half = 0.5 * params.a_hyperfine * 1e-3
            lines += [(c - half, 0.25), (c + half, 0.25)]
        else:
            lines.append((c, 0.5))
    return lines


def odmr_splitting(params):
    """Separation (MHz) of the two electron-spin transitions."""
    return 2.0 * params.gamma_e * params.b_field


def odmr_spectrum(params, f_grid, linewidth=5.0, contrast=0.2):
    """CW ODMR fluorescence normalised to the off-resonant level.

    Lorentzian dips (FWHM ``linewidth`` in MHz) on a unit baseline. The
    weights sum to one, so ``contrast`` is the depth of the fully merged
    zero-field dip.
    """
    if not linewidth > 0:
        raise DomainError(f"linewidth must be > 0, got {linewidth}")
    if not 0 < contrast < 1:
        raise DomainError(f"contrast must lie in (0, 1), got {contrast}")
    f = np.asarray(f_grid, dtype=float)
    dip = np.zeros_like(f)
    width_ghz = linewidth * 1e-3
    for centre, weight in odmr_resonances(params, linewidth):
        dip += weight / (1.0 + 4.0 * ((f - centre) / width_ghz) ** 2)
    return 1.0 - contrast * dip


def hyperfine_detunings(params, detuning=0.0):
    half = 0.5 * params.a_hyperfine
    return (detuning - half, detuning + half)


def rabi_signal(omega_rabi, params, detuning, t_grid):
    """Population of ``m_s = 0`` under a continuous MW drive.

    Averages two two-level solutions whose detunings differ by the
    hyperfine constant (unpolarised 15N). The oscillating part decays
    with ``params.t2_prime``; it relaxes toward each line's mean.
    """
    if not omega_rabi > 0:
        raise DomainError(f"omega_rabi must be > 0, got {omega_rabi}")
    t = np.asarray(t_grid, dtype=float)
    envelope = np.exp(-t / params.t2_prime)
    p0 = np.zeros_like(t)
    for delta in hyperfine_detunings(params, detuning):
        omega_eff = math.hypot(omega_rabi, delta)
        amp = (omega_rabi / omega_eff) ** 2
        p0 += 1.0 - 0.5 * amp + 0.5 * amp * envelope * np.cos(2 * math.pi * omega_eff * t)
    return p0 / 2.0


def generalized_rabi_frequencies(omega_rabi, params, detuning=0.0):
    return tuple(math.hypot(omega_rabi, d) for d in hyperfine_detunings(params, detuning))


def _revival_comb(tau, period, width):
    nearest = np.round(tau / period) * period
    return np.exp(-0.5 * ((tau - nearest) / width) ** 2)


def hahn_echo_signal(model, tau_grid):
    """Echo amplitude after total free evolution ``2 tau``.

    Stretched-exponential envelope times a Gaussian revival train whose
    peaks sit at multiples of the bath revival period.
    """
    tau = np.asarray(tau_grid, dtype=float)
    if np.any(tau < 0) or np.any(np.diff(tau) < 0):
        raise InputError("tau_grid must be non-negative and sorted")
    envelope = np.exp(-((2.0 * tau / model.t2) ** model.exponent_p))
    comb = _revival_comb(tau, model.revival_period, model.revival_width)
    return envelope * (1.0 - model.revival_depth * (1.0 - comb))


def echo_envelope(model, tau_grid):
    tau = np.asarray(tau_grid, dtype=float)
    return np.exp(-((2.0 * tau / model.t2) ** model.exponent_p))


def rabi_decay_bound(t, signal, t2_prime_min):
    """True when the oscillation envelope shows no decay faster than ``t2_prime_min``.

    Compares the peak-to-peak amplitude in the first and last fifth of
    the record against ``exp(-dt / t2_prime_min)``.
    """
    t = np.asarray(t)
    signal = np.asarray(signal)
    n = max(len(t) // 5, 2)
    early = np.ptp(signal[:n])
    late = np.ptp(signal[-n:])
    dt = t[-n:].mean() - t[:n].mean()
    return late >= early * math.exp(-dt / t2_prime_min)


def _is_hermitian(h, tol=1e-12):
    return np.allclose(h, h.conj().T, atol=tol, rtol=0)


def liouvillian(hamiltonian, dephasing_rate=0.0):
    """Superoperator for row-major ``vec(rho)``.

    ``hamiltonian`` is in MHz (cycles per us); dephasing damps every
    coherence of the computational basis at ``dephasing_rate`` (1/us).
    """
    h = 2 * math.pi * np.asarray(hamiltonian, dtype=complex)
    n = h.shape[0]
    eye = np.eye(n)
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    if dephasing_rate:
        mask = (1.0 - eye).reshape(-1)
        sup = sup - dephasing_rate * np.diag(mask)
    return sup


def evolve_density_matrix(hamiltonian, dephasing_rate, rho0, t_grid):
    """Exact open-system evolution by matrix exponential of the Liouvillian.

    Returns an array of shape ``(len(t_grid), n, n)``.
    """
    h = np.asarray(hamiltonian, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or not _is_hermitian(h):
        raise InputError("hamiltonian must be a square Hermitian matrix")
    rho0 = np.asarray(rho0, dtype=complex)
    n = h.shape[0]
    if rho0.shape != (n, n) or not _is_hermitian(rho0, 1e-12):
        raise InputError("rho0 must be Hermitian and match the hamiltonian")
    if abs(np.trace(rho0) - 1) > 1e-12 or np.linalg.eigvalsh(rho0).min() < -1e-12:
        raise InputError("rho0 must be positive semidefinite with unit trace")
    if dephasing_rate < 0:
        raise DomainError("dephasing_rate must be >= 0")
    t = np.asarray(t_grid, dtype=float)
    sup = liouvillian(h, dephasing_rate)
    vec0 = rho0.reshape(-1)
    out = np.empty((t.size, n, n), dtype=complex)
    for i, ti in enumerate(t):
        rho = (expm(sup * ti) @ vec0).reshape(n, n)
        out[i] = 0.5 * (rho + rho.conj().T)
    return out


def two_level_drive(omega_rabi, delta):
    """Rotating-frame Hamiltonian (MHz) of ``{|0>, |-1>}`` under a MW drive."""
    return np.array([[0.0, omega_rabi / 2], [omega_rabi / 2, -delta]], dtype=complex)


def electron_nuclear_drive(omega_rabi, params, detuning=0.0):
    """4x4 rotating-frame Hamiltonian of the driven electron with a 15N spin-1/2.

    Basis is ``|m_s> (x) |m_I>`` with ``m_s in {0, -1}``, ``m_I in {+1/2, -1/2}``.
    """
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    proj_minus1 = np.diag([0.0, 1.0]).astype(complex)
    iz = np.diag([0.5, -0.5]).astype(complex)
    eye2 = np.eye(2)
    return (0.5 * omega_rabi * np.kron(sx, eye2)
            - detuning * np.kron(proj_minus1, eye2)
            - params.a_hyperfine * np.kron(proj_minus1, iz))
