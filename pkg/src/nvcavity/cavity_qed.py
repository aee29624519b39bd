"""Closed-form cavity-QED quantities for an emitter in a photonic nanocavity.

Mode volumes are always dimensionless, in units of ``(lambda/n)**3``.
Wavelengths are in nm, lifetimes in ns, angular rates in rad/s.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InputError, OverlapWarning

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# smallest angle between a TE cavity field and an NV dipole in a {100} membrane
DIPOLE_ANGLE_100 = 35.3  # deg


@dataclass(frozen=True)
class EmitterCavityParams:
    q_factor: float
    lambda_cav: float
    lambda_zpl: float = 637.0
    v_mode: float = 1.05
    n_index: float = 2.4
    dw: float = 0.028
    tau_bulk: float = 12.5
    xi: float = 1.0
    dipole_angle: float = DIPOLE_ANGLE_100
    strain_split: float = 0.0

    def __post_init__(self):
        if not self.q_factor > 0:
            raise DomainError(f"q_factor must be > 0, got {self.q_factor}")
        if not self.v_mode > 0:
            raise DomainError(f"v_mode must be > 0, got {self.v_mode}")
        if not 0 < self.dw <= 1:
            raise DomainError(f"dw must lie in (0, 1], got {self.dw}")
        if not 0 <= self.xi <= 1:
            raise DomainError(f"xi must lie in [0, 1], got {self.xi}")
        if not 0 <= self.dipole_angle <= 90:
            raise DomainError(f"dipole_angle must lie in [0, 90], got {self.dipole_angle}")
        for name in ("lambda_cav", "lambda_zpl"):
            value = getattr(self, name)
            if not 400 < value < 1600:
                raise DomainError(f"{name}={value} nm outside (400, 1600) nm")
        if not self.tau_bulk > 0:
            raise DomainError(f"tau_bulk must be > 0, got {self.tau_bulk}")

    @property
    def f_max(self):
        return purcell_max(self.q_factor, self.v_mode)

    @property
    def f_max_star(self):
        return orientation_reduced_max(self.f_max, self.dipole_angle)

    @property
    def f_zpl(self):
        """Detuned, overlap-weighted ZPL enhancement."""
        return purcell_detuned(self.xi * self.f_max_star, self.q_factor,
                               self.lambda_zpl, self.lambda_cav)

    @property
    def kappa(self):
        return kappa_from_q(self.lambda_cav, self.q_factor)


@dataclass(frozen=True)
class TuningSchedule:
    """Linear red-shift of a cavity by gas condensation.

    ``rate`` is in pm/s, ``max_range`` in nm, ``duration`` in s.
    """

    lambda_start: float
    rate: float = 8.0
    max_range: float = 31.0
    duration: float = 600.0

    def __post_init__(self):
        if self.rate < 0:
            raise DomainError(f"rate must be >= 0, got {self.rate}")
        if self.max_range < 0:
            raise DomainError(f"max_range must be >= 0, got {self.max_range}")
        if self.duration < 0:
            raise DomainError(f"duration must be >= 0, got {self.duration}")


def purcell_max(q_factor, v_mode_norm):
    """Maximum spectrally resolved enhancement ``3 Q / (4 pi^2 V)``.

    Parameters
    ----------
    q_factor : float
        Cavity quality factor.
    v_mode_norm : float
        Mode volume in units of ``(lambda/n)**3``.
    """
    if not q_factor > 0 or not v_mode_norm > 0:
        raise DomainError(
            f"purcell_max needs positive Q and V, got Q={q_factor}, V={v_mode_norm}")
    return 3.0 * q_factor / (4.0 * math.pi**2 * v_mode_norm)


def mode_volume_normalized(v_nm3, wavelength, n_index):
    """Convert a mode volume in nm^3 to ``(lambda/n)**3`` units."""
    if not v_nm3 > 0 or not wavelength > 0 or not n_index > 0:
        raise DomainError("mode volume conversion needs positive inputs")
    return v_nm3 / (wavelength / n_index) ** 3


def mode_volume_nm3(v_norm, wavelength, n_index):
    """Inverse of :func:`mode_volume_normalized`."""
    if not v_norm > 0 or not wavelength > 0 or not n_index > 0:
        raise DomainError("mode volume conversion needs positive inputs")
    return v_norm * (wavelength / n_index) ** 3


def orientation_reduced_max(f_max, angle_deg=DIPOLE_ANGLE_100):
    """Scale ``f_max`` by ``cos^2`` of the dipole-field angle."""
    if f_max < 0:
        raise DomainError(f"f_max must be >= 0, got {f_max}")
    return math.cos(math.radians(angle_deg)) ** 2 * f_max


def relative_detuning(lambda_zpl, lambda_cav):
    return np.asarray(lambda_zpl) / np.asarray(lambda_cav) - 1.0


def purcell_detuned(f_max_eff, q_factor, lambda_zpl, lambda_cav):
    """Lorentzian detuning factor applied to a peak enhancement.

    The detuning variable is ``lambda_zpl/lambda_cav - 1``. Array inputs
    broadcast; a scalar in gives a float out.
    """
    lam_z = np.asarray(lambda_zpl, dtype=float)
    lam_c = np.asarray(lambda_cav, dtype=float)
    if f_max_eff < 0 or not q_factor > 0 or np.any(lam_z <= 0) or np.any(lam_c <= 0):
        raise DomainError("purcell_detuned needs positive inputs")
    x = lam_z / lam_c - 1.0
    out = f_max_eff / (1.0 + 4.0 * q_factor**2 * x**2)
    return float(out) if out.ndim == 0 else out


def overlap_xi(f_zpl, f_max_star):
    """Overlap factor ``f_zpl / f_max_star``; warns when it exceeds one."""
    if not f_max_star > 0:
        raise DomainError(f"f_max_star must be > 0, got {f_max_star}")
    if f_zpl < 0:
        raise DomainError(f"f_zpl must be >= 0, got {f_zpl}")
    xi = f_zpl / f_max_star
    if xi > 1:
        warnings.warn(f"overlap factor {xi:.3g} > 1: measured enhancement exceeds "
                      "the orientation-limited maximum", OverlapWarning, stacklevel=2)
    return xi


def kappa_from_q(lambda_cav, q_factor):
    """Cavity intensity decay rate ``omega_cav / Q`` in rad/s."""
    if not lambda_cav > 0 or not q_factor > 0:
        raise DomainError("kappa_from_q needs positive inputs")
    omega = 2.0 * math.pi * SPEED_OF_LIGHT / (lambda_cav * 1e-9)
    return omega / q_factor


def coupling_g(f_zpl, dw, gamma_total, kappa):
    """Emitter-cavity coupling rate (rad/s).

    Inverts ``4 g^2 / kappa = f_zpl * dw * gamma``; ``gamma_total`` is in
    1/ns and is converted to 1/s internally.
    """
    if not kappa > 0:
        raise DomainError(f"kappa must be > 0, got {kappa}")
    if f_zpl < 0 or dw < 0 or gamma_total < 0:
        raise DomainError("coupling_g needs non-negative f_zpl, dw and gamma")
    return math.sqrt(f_zpl * dw * gamma_total * 1e9 * kappa / 4.0)


def purcell_from_coupling(g, dw, gamma_total, kappa):
    """Algebraic inverse of :func:`coupling_g`."""
    if not kappa > 0 or not dw > 0 or not gamma_total > 0:
        raise DomainError("purcell_from_coupling needs positive dw, gamma and kappa")
    return 4.0 * g**2 / (kappa * dw * gamma_total * 1e9)


def tuning_trajectory(schedule, t_grid):
    """Cavity wavelength (nm) at each time in ``t_grid`` (s).

    The shift grows at ``schedule.rate`` and saturates at ``max_range``.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1:
        raise InputError("t_grid must be one-dimensional")
    if t.size and (np.any(t < 0) or np.any(np.diff(t) < 0)):
        raise InputError("t_grid must be non-negative and sorted ascending")
    shift = np.minimum(schedule.rate * 1e-3 * t, schedule.max_range)
    return schedule.lambda_start + shift


def tuning_sweep(params, schedule, t_grid):
    """Purcell factor seen by the ZPL while the cavity is gas-tuned.

    Returns ``(lambda_cav, f_zpl)`` arrays over ``t_grid``.
    """
    lam = tuning_trajectory(schedule, t_grid)
    peak = params.xi * params.f_max_star
    return lam, np.atleast_1d(purcell_detuned(peak, params.q_factor, params.lambda_zpl, lam))


def entanglement_gain(beta, reference_zpl_fraction):
    """Rate gain of a two-photon heralded scheme, ``(beta / ref)**2``."""
    if not 0 < beta <= 1:
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    if not 0 < reference_zpl_fraction <= 1:
        raise DomainError(
            f"reference_zpl_fraction must lie in (0, 1], got {reference_zpl_fraction}")
    return (beta / reference_zpl_fraction) ** 2
