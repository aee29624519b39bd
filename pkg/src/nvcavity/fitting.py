"""Levenberg-Marquardt least squares and the lineshape models used for
cavity spectra, lifetimes, Rabi beats and echo envelopes.

Weights follow the ``1/sigma**2`` convention. With ``weights=None`` the
covariance is rescaled by the reduced chi-square, so quoted 1-sigma errors
reflect the observed scatter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, InputError, RankDeficiencyError
from .spin_dynamics import EchoModel, hahn_echo_signal


@dataclass(frozen=True)
class FitModel:
    kind: str
    param_names: tuple
    evaluate: Callable
    jacobian: Optional[Callable] = None
    guess: Optional[Callable] = None

    @property
    def n_params(self):
        return len(self.param_names)

    @property
    def has_jacobian(self):
        return self.jacobian is not None


@dataclass
class FitResult:
    params: np.ndarray
    sigma: np.ndarray
    covariance: np.ndarray
    chi2: float
    chi2_reduced: float
    iterations: int
    converged: bool
    message: str = ""
    param_names: tuple = ()
    chi2_history: list = field(default_factory=list)

    def as_dict(self):
        return dict(zip(self.param_names, self.params))


# -- models ---------------------------------------------------------------

def _lorentzian(p, x):
    x0, fwhm, amp, offset = p
    if not fwhm > 0:
        raise DomainError(f"fwhm must be > 0, got {fwhm}")
    return offset + amp / (1.0 + 4.0 * ((x - x0) / fwhm) ** 2)


def _lorentzian_jac(p, x):
    x0, fwhm, amp, _ = p
    u = (x - x0) / fwhm
    den = 1.0 + 4.0 * u**2
    common = 8.0 * amp * u / den**2
    return np.column_stack([common / fwhm, common * u / fwhm, 1.0 / den, np.ones_like(x)])


def _lorentzian_guess(x, y):
    x = np.asarray(x)
    y = np.asarray(y)
    offset = float(np.median(np.sort(y)[: max(len(y) // 10, 1)]))
    i = int(np.argmax(y))
    amp = float(y[i] - offset)
    above = np.nonzero(y - offset >= amp / 2)[0]
    fwhm = float(x[above[-1]] - x[above[0]]) if above.size > 1 else float(np.ptp(x) / 10)
    if fwhm <= 0:
        fwhm = float(np.ptp(x) / 10)
    return np.array([x[i], fwhm, amp, offset])


def lorentzian_q(params):
    """Quality factor ``x0 / fwhm`` of a Lorentzian parameter vector."""
    x0, fwhm = params[0], params[1]
    return x0 / fwhm


def lorentzian_q_sigma(result):
    """Propagated 1-sigma of ``x0 / fwhm`` from the fit covariance."""
    x0, fwhm = result.params[:2]
    grad = np.array([1.0 / fwhm, -x0 / fwhm**2])
    return float(math.sqrt(grad @ result.covariance[:2, :2] @ grad))


def _exponential(p, t):
    tau, amp, offset = p
    if not tau > 0:
        raise DomainError(f"tau must be > 0, got {tau}")
    return offset + amp * np.exp(-t / tau)


def _exponential_jac(p, t):
    tau, amp, _ = p
    e = np.exp(-t / tau)
    return np.column_stack([amp * e * t / tau**2, e, np.ones_like(t)])


def _exponential_guess(t, y):
    t = np.asarray(t)
    y = np.asarray(y)
    tail = max(len(y) // 10, 2)
    offset = float(np.mean(y[np.argsort(t)][-tail:]))
    z = y - offset
    usable = z > 0.05 * np.abs(z).max()
    if usable.sum() >= 3:
        slope, intercept = np.polyfit(t[usable], np.log(z[usable]), 1)
        if slope < 0:
            return np.array([-1.0 / slope, math.exp(intercept), offset])
    return np.array([np.ptp(t) / 3, float(z.max()), offset])


def _rabi_beat(p, t):
    f1, f2, t_decay, amp, offset = p
    if not (f1 > 0 and f2 > 0 and t_decay > 0):
        raise DomainError("rabi_beat needs positive frequencies and decay time")
    w = 2 * math.pi
    return offset + amp * np.exp(-t / t_decay) * 0.5 * (np.cos(w * f1 * t) + np.cos(w * f2 * t))


def _rabi_beat_jac(p, t):
    f1, f2, t_decay, amp, _ = p
    w = 2 * math.pi
    env = np.exp(-t / t_decay)
    c = 0.5 * (np.cos(w * f1 * t) + np.cos(w * f2 * t))
    return np.column_stack([
        -amp * env * 0.5 * w * t * np.sin(w * f1 * t),
        -amp * env * 0.5 * w * t * np.sin(w * f2 * t),
        amp * env * c * t / t_decay**2,
        env * c,
        np.ones_like(t),
    ])


def spectral_peaks(t, y, n_peaks=2, pad=8):
    """Frequencies of the ``n_peaks`` strongest local maxima of ``|FFT(y)|``."""
    t = np.asarray(t)
    y = np.asarray(y) - np.mean(y)
    dt = t[1] - t[0]
    n = pad * len(y)
    spec = np.abs(np.fft.rfft(y * np.hanning(len(y)), n=n))
    freqs = np.fft.rfftfreq(n, dt)
    interior = np.nonzero((spec[1:-1] > spec[:-2]) & (spec[1:-1] >= spec[2:]))[0] + 1
    best = interior[np.argsort(spec[interior])[::-1][:n_peaks]]
    return np.sort(freqs[best])


def _rabi_beat_guess(t, y):
    t = np.asarray(t)
    y = np.asarray(y)
    peaks = spectral_peaks(t, y, 2)
    if peaks.size == 1:
        peaks = np.array([peaks[0], peaks[0] * 1.05])
    offset = float(np.mean(y))
    amp = float(y[0] - offset) or float(np.ptp(y) / 2)
    return np.array([peaks[0], peaks[1], 10 * np.ptp(t), amp, offset])


def _echo(p, tau):
    t2, exponent, period, depth, width = p
    model = EchoModel(t2=t2, exponent_p=exponent, revival_period=period,
                      revival_depth=depth, revival_width=width)
    return hahn_echo_signal(model, tau)


def _echo_guess(tau, y):
    tau = np.asarray(tau)
    y = np.asarray(y)
    span = float(np.ptp(tau))
    # revival period from the strongest spectral line above the slow decay
    detrended = y - np.polyval(np.polyfit(tau, y, 2), tau)
    n = 8 * len(y)
    spec = np.abs(np.fft.rfft(detrended * np.hanning(len(y)), n=n))
    freqs = np.fft.rfftfreq(n, tau[1] - tau[0])
    band = freqs > 3.0 / span
    period = 1.0 / freqs[band][np.argmax(spec[band])] if band.any() else span / 4
    # envelope from the samples nearest each revival maximum
    idx = np.unique(np.searchsorted(tau, np.arange(0, tau.max(), period)).clip(0, len(y) - 1))
    good = y[idx] > 0.05
    t2 = span
    if good.sum() >= 2:
        slope = np.polyfit(2 * tau[idx][good], np.log(y[idx][good]), 1)[0]
        if slope < 0:
            t2 = -1.0 / slope
    first = tau <= period
    depth = float(np.clip(1 - np.min(y[first]), 0.05, 0.95))
    return np.array([t2, 1.0, period, depth, period / 10])


def _linear(p, x):
    return p[0] + p[1] * x


def _linear_jac(p, x):
    return np.column_stack([np.ones_like(x), x])


def _linear_guess(x, y):
    return np.polyfit(x, y, 1)[::-1]


LORENTZIAN = FitModel("lorentzian", ("x0", "fwhm", "amp", "offset"),
                      _lorentzian, _lorentzian_jac, _lorentzian_guess)
EXPONENTIAL = FitModel("exponential_decay", ("tau", "amp", "offset"),
                       _exponential, _exponential_jac, _exponential_guess)
RABI_BEAT = FitModel("rabi_beat", ("f1", "f2", "t_decay", "amp", "offset"),
                     _rabi_beat, _rabi_beat_jac, _rabi_beat_guess)
# piecewise in the revival period; finite differences are used
ECHO_ENVELOPE = FitModel("echo_envelope", ("t2", "p", "period", "depth", "width"),
                         _echo, None, _echo_guess)
LINEAR = FitModel("linear", ("intercept", "slope"), _linear, _linear_jac, _linear_guess)

MODELS = {m.kind: m for m in (LORENTZIAN, EXPONENTIAL, RABI_BEAT, ECHO_ENVELOPE, LINEAR)}


def get_model(kind):
    try:
        return MODELS[kind]
    except KeyError:
        raise InputError(f"unknown model kind {kind!r}; choose from {sorted(MODELS)}") from None


def model_lorentzian(params, x):
    return _lorentzian(params, np.asarray(x, dtype=float))


def model_exponential(params, t):
    return _exponential(params, np.asarray(t, dtype=float))


def model_rabi_beat(params, t):
    return _rabi_beat(params, np.asarray(t, dtype=float))


def model_echo_envelope(params, tau):
    return _echo(params, np.asarray(tau, dtype=float))


def model_linear(params, x):
    return _linear(params, np.asarray(x, dtype=float))


# -- engine ---------------------------------------------------------------

def numerical_jacobian(func, p, x, rel_step=1e-6):
    """Central-difference Jacobian with steps ``rel_step * max(|p|, 1e-3)``.

    Falls back to a one-sided difference where a step leaves the model domain.
    """
    p = np.asarray(p, dtype=float)
    cols = []
    for j in range(p.size):
        h = rel_step * max(abs(p[j]), 1e-3)
        up = p.copy()
        dn = p.copy()
        up[j] += h
        dn[j] -= h
        try:
            f_up = func(up, x)
        except DomainError:
            # on a domain edge: fall back to a one-sided difference
            cols.append((func(p, x) - func(dn, x)) / h)
            continue
        try:
            f_dn = func(dn, x)
        except DomainError:
            cols.append((f_up - func(p, x)) / h)
            continue
        cols.append((f_up - f_dn) / (2 * h))
    return np.column_stack(cols)


def fit(model, x, y, weights=None, init=None, *, max_iter=200, gtol=1e-10,
        xtol=1e-12, ftol=1e-15, lambda0=1e-3, lambda_down=0.3, lambda_up=2.0):
    """Fit ``model`` to ``(x, y)`` with a damped Gauss-Newton iteration.

    The damping term is Marquardt's ``lambda * diag(J^T W J)``. ``lambda``
    starts at ``lambda0``, is multiplied by ``lambda_down`` after an
    accepted step and by ``lambda_up`` after a rejected one. Steps that
    leave the model's domain count as rejected. Convergence is declared
    when the scaled gradient (cosine between residual and Jacobian
    columns) drops below ``gtol``, the relative parameter step below
    ``xtol``, or the relative chi-square decrease below ``ftol``.

    Returns a :class:`FitResult`; ``converged`` is False if ``max_iter``
    outer iterations are exhausted, and the best parameters so far are
    reported.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("x and y must be 1D arrays of equal length")
    n = model.n_params
    if x.size < n:
        raise InputError(f"need at least {n} points, got {x.size}")
    uniform = weights is None
    w = np.ones_like(y) if uniform else np.asarray(weights, dtype=float)
    if w.shape != y.shape or np.any(w < 0):
        raise InputError("weights must be non-negative and match y")
    p = np.asarray(model.guess(x, y) if init is None else init, dtype=float).copy()
    if p.shape != (n,) or not np.all(np.isfinite(p)):
        raise InputError("init must be a finite vector of model parameters")

    sqrt_w = np.sqrt(w)

    def jac(q):
        if model.jacobian is not None:
            return model.jacobian(q, x)
        return numerical_jacobian(model.evaluate, q, x)

    r = sqrt_w * (y - model.evaluate(p, x))
    chi2 = float(r @ r)
    history = [chi2]
    lam = lambda0
    converged = False
    message = "maximum iterations reached"
    iterations = 0

    for iterations in range(1, max_iter + 1):
        jw = sqrt_w[:, None] * jac(p)
        a = jw.T @ jw
        g = jw.T @ r
        col_norm = np.sqrt(np.diag(a))
        r_norm = math.sqrt(chi2)
        if r_norm == 0 or np.all(np.abs(g) <= gtol * np.where(col_norm > 0, col_norm, 1) * r_norm):
            converged = True
            message = "gradient below tolerance"
            break
        # floor the Marquardt scaling so a momentarily flat direction is still damped
        diag = np.maximum(np.diag(a), 1e-12 * max(np.diag(a).max(), 1e-300))
        accepted = False
        for _ in range(60):
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= lambda_up
                continue
            trial = p + step
            try:
                r_trial = sqrt_w * (y - model.evaluate(trial, x))
            except DomainError:
                lam *= lambda_up
                continue
            chi2_trial = float(r_trial @ r_trial)
            if np.isfinite(chi2_trial) and chi2_trial <= chi2:
                accepted = True
                break
            lam *= lambda_up
        if not accepted:
            converged = True
            message = "no further decrease possible"
            break
        rel_step = np.max(np.abs(step) / np.maximum(np.abs(p), 1e-300))
        rel_drop = (chi2 - chi2_trial) / chi2 if chi2 > 0 else 0.0
        p, r, chi2 = trial, r_trial, chi2_trial
        history.append(chi2)
        lam = max(lam * lambda_down, 1e-15)
        if rel_step < xtol:
            converged = True
            message = "relative step below tolerance"
            break
        if rel_drop < ftol:
            converged = True
            message = "chi-square decrease below tolerance"
            break

    if converged:
        # Undamped Gauss-Newton polish. Near the minimum chi-square is flat to
        # rounding, so the step is judged by the gradient instead.
        jw = sqrt_w[:, None] * jac(p)
        try:
            step = np.linalg.lstsq(jw, r, rcond=None)[0]
            trial = p + step
            r_trial = sqrt_w * (y - model.evaluate(trial, x))
            chi2_trial = float(r_trial @ r_trial)
            jw_trial = sqrt_w[:, None] * jac(trial)
            if (np.isfinite(chi2_trial) and chi2_trial <= chi2 * (1 + 1e-12)
                    and np.linalg.norm(jw_trial.T @ r_trial) < np.linalg.norm(jw.T @ r)):
                if chi2_trial < chi2:
                    history.append(chi2_trial)
                p, r, chi2 = trial, r_trial, chi2_trial
        except (DomainError, np.linalg.LinAlgError):
            pass

    jw = sqrt_w[:, None] * jac(p)
    a = jw.T @ jw
    if not np.all(np.isfinite(a)) or np.linalg.matrix_rank(a) < n:
        raise RankDeficiencyError("singular normal equations at the solution")
    cond = np.linalg.cond(a)
    if cond > 1e16:
        raise RankDeficiencyError(f"normal equations ill-conditioned (cond={cond:.3g})")
    cov = np.linalg.inv(a)
    cov = 0.5 * (cov + cov.T)
    dof = max(x.size - n, 1)
    chi2_red = chi2 / dof
    if uniform:
        cov = cov * chi2_red
    sigma = np.sqrt(np.clip(np.diag(cov), 0, None))
    return FitResult(params=p, sigma=sigma, covariance=cov, chi2=chi2,
                     chi2_reduced=chi2_red, iterations=iterations, converged=converged,
                     message=message, param_names=model.param_names, chi2_history=history)


def synthetic(model, params, x, noise_sigma, seed):
    """Model curve plus seeded Gaussian noise of standard deviation ``noise_sigma``."""
    if seed is None:
        raise InputError("a seed is required for synthetic data")
    rng = np.random.default_rng(seed)
    y = model.evaluate(np.asarray(params, dtype=float), np.asarray(x, dtype=float))
    return y + rng.normal(0.0, noise_sigma, size=y.shape)
