"""Five-level NV photodynamics and the (DW, F_ZPL) inversions.

Level order is ``(g, e*, e, g*, s)``:

* ``g``  ground triplet
* ``e*`` vibronic excited level reached by the pump
* ``e``  relaxed excited level, source of ZPL and PSB emission
* ``g*`` vibronic ground level where PSB emission terminates
* ``s``  metastable singlet

Transitions: pump g->e*, relax e*->e, ZPL e->g, PSB e->g*, relax g*->g,
ISC e->s, singlet decay s->g. All rates are in 1/ns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import brentq

from .errors import DegeneracyError, DomainError, InputError, IntegrationError, NoSolutionError

LEVELS = ("g", "e*", "e", "g*", "s")
G, ESTAR, E, GSTAR, S = range(5)

FAST_RELAX = 1000.0  # 1/ns, i.e. 1 ps^-1
STIFF_RATIO = 1e5


@dataclass(frozen=True)
class FiveLevelRates:
    """Rate constants of the five-level model.

    ``psb_scale`` multiplies the PSB channel to represent an environment
    (such as a photonic bandgap) that suppresses or enhances the off-resonant
    emission; 1.0 means bulk-like.
    """

    pump: float = 0.01
    relax_e: float = FAST_RELAX
    gamma_rad: float = 1 / 12.5
    dw: float = 0.028
    f_zpl: float = 1.0
    relax_g: float = FAST_RELAX
    gamma_isc: float = 0.0
    gamma_s: float = 1 / 250.0
    psb_scale: float = 1.0
    enforce_fast_phonon: bool = True

    def __post_init__(self):
        for name in ("pump", "relax_e", "gamma_rad", "relax_g", "gamma_isc",
                     "gamma_s", "f_zpl", "psb_scale"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be finite and >= 0, got {value}")
        if not 0 < self.dw <= 1:
            raise DomainError(f"dw must lie in (0, 1], got {self.dw}")
        if self.enforce_fast_phonon:
            floor = 100.0 * self.gamma_rad
            if self.relax_e < floor or self.relax_g < floor:
                raise DomainError(
                    "phonon relaxation rates must be >= 100 * gamma_rad "
                    "(pass enforce_fast_phonon=False to override)")

    @property
    def k_zpl(self):
        return self.gamma_rad * self.dw * self.f_zpl

    @property
    def k_psb(self):
        return self.gamma_rad * (1.0 - self.dw) * self.psb_scale

    @property
    def k_excited(self):
        """Total decay rate out of ``e``."""
        return self.k_zpl + self.k_psb + self.gamma_isc

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class PhotodynamicsObservables:
    i_zpl: float
    i_psb: float
    beta: float
    tau_excited: float


def build_generator(rates):
    """Rate matrix ``M`` with ``dp/dt = M p``; columns sum to zero."""
    m = np.zeros((5, 5))
    # (from, to, rate)
    edges = (
        (G, ESTAR, rates.pump),
        (ESTAR, E, rates.relax_e),
        (E, G, rates.k_zpl),
        (E, GSTAR, rates.k_psb),
        (GSTAR, G, rates.relax_g),
        (E, S, rates.gamma_isc),
        (S, G, rates.gamma_s),
    )
    for src, dst, k in edges:
        m[dst, src] += k
        m[src, src] -= k
    return m


def _check_generator(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError("generator must be a square matrix")
    off = m - np.diag(np.diag(m))
    if np.any(off < 0):
        raise InputError("generator has negative off-diagonal rates")
    scale = max(np.abs(m).max(), 1.0)
    if np.any(np.abs(m.sum(axis=0)) > 1e-12 * scale):
        raise InputError("generator columns must sum to zero")
    return m


def steady_state(generator):
    """Stationary populations of a generator.

    Raises :class:`DegeneracyError` when the kernel is more than
    one-dimensional, i.e. the stationary state is not unique.
    """
    m = _check_generator(generator)
    n = m.shape[0]
    sv = np.linalg.svd(m, compute_uv=False)
    tol = sv[0] * n * np.finfo(float).eps * 10 if sv[0] > 0 else 0.0
    if n > 1 and sv[-2] <= tol:
        raise DegeneracyError("generator kernel is degenerate: no unique steady state")
    # replace one balance equation by normalisation
    a = m.copy()
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    p = np.linalg.solve(a, b)
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def _stiffness_ratio(m):
    rates = -np.diag(m)
    positive = rates[rates > 0]
    if positive.size < 2:
        return 1.0
    return positive.max() / positive.min()


def _propagator(m, dt):
    prop = expm(m * dt)
    # exact propagators have unit column sums; remove round-off drift so
    # repeated stepping conserves probability
    prop[np.diag_indices_from(prop)] += 1.0 - prop.sum(axis=0)
    return prop


def evolve(generator, p0, t_grid, method="auto", rtol=1e-10, atol=1e-13):
    """Populations at each time of ``t_grid`` (ns), starting from ``p0``.

    ``method`` is ``"rk45"`` (adaptive explicit Dormand-Prince),
    ``"expm"`` (exact propagators) or ``"auto"``, which picks ``expm`` when
    the ratio of fastest to slowest decay exceeds ``STIFF_RATIO``.
    Returns an array of shape ``(len(t_grid), n)``.
    """
    m = _check_generator(generator)
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (m.shape[0],) or np.any(p0 < 0) or abs(p0.sum() - 1) > 1e-12:
        raise InputError("p0 must be a probability vector matching the generator")
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise InputError("t_grid must be a non-empty 1D array")
    if np.any(np.diff(t) < 0):
        raise InputError("t_grid must be sorted ascending")

    if method == "auto":
        method = "expm" if _stiffness_ratio(m) > STIFF_RATIO else "rk45"

    if method == "expm":
        out = np.empty((t.size, p0.size))
        cache = {}
        p = p0.copy()
        t_prev = t[0]
        if t_prev != 0:
            p = _propagator(m, t_prev) @ p
        for i, ti in enumerate(t):
            dt = ti - t_prev
            if dt > 0:
                key = float(dt)
                prop = cache.get(key)
                if prop is None:
                    prop = cache[key] = _propagator(m, dt)
                p = prop @ p
            out[i] = p
            t_prev = ti
        out[0] = p0 if t[0] == 0 else out[0]
        return out

    if method != "rk45":
        raise InputError(f"unknown method {method!r}")
    if t[-1] == t[0]:
        return np.tile(p0, (t.size, 1))
    sol = solve_ivp(lambda _t, y: m @ y, (0.0, t[-1]), p0, method="RK45",
                    t_eval=t, rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(f"RK45 integration failed: {sol.message}",
                               diagnostics={"nfev": sol.nfev, "t_last": float(sol.t[-1])
                                            if sol.t.size else None})
    out = sol.y.T.copy()
    if t[0] == 0:
        out[0] = p0
    return out


def observables(rates, populations):
    p_e = float(np.asarray(populations)[E])
    i_zpl = p_e * rates.k_zpl
    i_psb = p_e * rates.k_psb
    if i_zpl + i_psb > 0:
        beta = i_zpl / (i_zpl + i_psb)
    else:
        # dark emitter: fall back to the branching ratio of the rates
        total = rates.k_zpl + rates.k_psb
        beta = rates.k_zpl / total if total > 0 else 0.0
    return PhotodynamicsObservables(i_zpl=i_zpl, i_psb=i_psb, beta=beta,
                                    tau_excited=lifetime_from_rates(rates))


def steady_observables(rates):
    return observables(rates, steady_state(build_generator(rates)))


def fzpl_from_lifetimes(tau_bulk, tau_on, tau_off, dw):
    """ZPL enhancement from the on/off resonance lifetime change."""
    if min(tau_bulk, tau_on, tau_off) <= 0:
        raise DomainError("lifetimes must be positive")
    if not 0 < dw <= 1:
        raise DomainError(f"dw must lie in (0, 1], got {dw}")
    if tau_on >= tau_off:
        raise DomainError(f"tau_on={tau_on} >= tau_off={tau_off}: no enhancement")
    return (tau_bulk / tau_on - tau_bulk / tau_off) / dw


def fzpl_from_beta(beta, dw):
    """ZPL enhancement from the cavity coupling efficiency.

    The overall Purcell factor is ``beta / (1 - beta)``; dividing by the
    Debye-Waller factor gives the ZPL-resolved value.
    """
    if not 0 <= beta < 1:
        raise DomainError(f"beta must lie in [0, 1), got {beta}")
    if not 0 < dw <= 1:
        raise DomainError(f"dw must lie in (0, 1], got {dw}")
    return beta / (1.0 - beta) / dw


def lifetime_from_rates(rates):
    k = rates.k_excited
    return 1.0 / k if k > 0 else math.inf


def calibrate_psb_scale(tau_off, gamma_rad, dw, gamma_isc=0.0, f_zpl_off=0.0):
    """PSB scale that reproduces an off-resonance lifetime.

    Solves ``gamma_rad*dw*f_zpl_off + gamma_rad*(1-dw)*s + gamma_isc = 1/tau_off``.
    """
    rest = 1.0 / tau_off - gamma_rad * dw * f_zpl_off - gamma_isc
    if rest <= 0:
        raise NoSolutionError("off-resonance lifetime too short for the given rates")
    return rest / (gamma_rad * (1.0 - dw))


def total_intensity(rates):
    """Steady-state ZPL + PSB photon rate per emitter (1/ns)."""
    obs = steady_observables(rates)
    return obs.i_zpl + obs.i_psb


def intensity_ratio(rates_template, dw, f_zpl, f_zpl_off=0.0):
    """Predicted total-intensity ratio between on- and off-resonance."""
    on = rates_template.with_(dw=dw, f_zpl=f_zpl)
    off = rates_template.with_(dw=dw, f_zpl=f_zpl_off)
    i_off = total_intensity(off)
    if i_off <= 0:
        raise DomainError("off-resonance emitter is dark; intensity ratio undefined")
    return total_intensity(on) / i_off


def solve_dw_fzpl(tau_bulk, tau_on, tau_off, intensity_ratio_on_off, rates_template,
                  f_zpl_off=0.0, n_scan=400):
    """Jointly infer ``(dw, f_zpl)`` from lifetimes and an intensity ratio.

    The lifetime change fixes the product ``f_zpl * dw``; the steady-state
    rate model then has to reproduce the measured on/off total-intensity
    ratio. The remaining one-dimensional problem in ``dw`` is bracketed on
    a log grid and polished with Brent's method.
    """
    if not intensity_ratio_on_off > 1:
        raise DomainError(f"intensity ratio must be > 1, got {intensity_ratio_on_off}")
    product = fzpl_from_lifetimes(tau_bulk, tau_on, tau_off, 1.0)

    def residual(dw):
        try:
            ratio = intensity_ratio(rates_template, dw, product / dw, f_zpl_off)
        except DomainError:
            return math.inf
        return ratio / intensity_ratio_on_off - 1.0

    grid = np.geomspace(1e-4, 1.0, n_scan)
    values = np.array([residual(d) for d in grid])
    if not np.isfinite(values[-1]):
        # dw = 1 with a suppressed off-resonance ZPL leaves the reference dark
        grid[-1] = 1.0 - 1e-12
        values[-1] = residual(grid[-1])
    finite = np.isfinite(values)
    sign_changes = np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)[0]
    if sign_changes.size == 0:
        raise NoSolutionError(
            "no (dw, f_zpl) in (0,1] x (0,inf) reproduces the intensity ratio",
            diagnostics={"product": product, "dw_range": (grid[0], grid[-1]),
                         "ratio_range": (float((values[finite].min() + 1) * intensity_ratio_on_off),
                                         float((values[finite].max() + 1) * intensity_ratio_on_off))})
    if sign_changes.size > 1:
        brackets = [(grid[i], grid[i + 1]) for i in sign_changes]
        raise NoSolutionError("intensity ratio is matched by several dw values",
                              diagnostics={"brackets": brackets, "product": product})
    i = sign_changes[0]
    if values[i] == 0:
        dw = grid[i]
    elif values[i + 1] == 0:
        dw = grid[i + 1]
    else:
        dw = brentq(residual, grid[i], grid[i + 1], xtol=1e-300, rtol=4 * np.finfo(float).eps,
                    maxiter=500)
    return dw, product / dw


def g2_curve(rates, tau_grid):
    """Normalised intensity autocorrelation of a single emitter.

    After a photon the emitter is reset to ``g``; ``g2(tau)`` is the
    excited-state population regrowth relative to steady state.
    """
    tau = np.asarray(tau_grid, dtype=float)
    if np.any(tau < 0):
        raise InputError("tau_grid must be non-negative")
    m = build_generator(rates)
    p_ss = steady_state(m)
    p0 = np.zeros(5)
    p0[G] = 1.0
    order = np.argsort(tau, kind="stable")
    traj = evolve(m, p0, tau[order], method="expm")
    g2 = np.empty(tau.size)
    g2[order] = traj[:, E] / p_ss[E]
    return g2


def g2_with_background(g2, signal_fraction):
    """Mix uncorrelated background into a pure-emitter ``g2``."""
    if not 0 <= signal_fraction <= 1:
        raise DomainError(f"signal_fraction must lie in [0, 1], got {signal_fraction}")
    s2 = signal_fraction**2
    return 1.0 - s2 + s2 * np.asarray(g2)


def signal_fraction_for_g2zero(g2_zero):
    """Signal fraction that lifts a perfect antibunching dip to ``g2_zero``."""
    if not 0 <= g2_zero <= 1:
        raise DomainError("g2(0) must lie in [0, 1]")
    return math.sqrt(1.0 - g2_zero)
