"""Normal-incidence transfer matrices for 1D effective-index models of a
tapered nanobeam photonic crystal cavity.

Each photonic-crystal period is reduced to a symmetric three-segment cell
(half diamond, hole, half diamond) with effective indices ``n_eff_hi`` and
``n_eff_lo``. The Q reported here is the mirror-leakage Q of that 1D
model; out-of-plane radiation loss does not exist in 1D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import DesignError, DomainError
from .fitting import LORENTZIAN, fit

# Index scale that puts the default design's resonance at the NV ZPL.
# Recomputed in the test suite by calibrate_index_scale(TaperSpec(index_scale=1.0)).
DEFAULT_INDEX_SCALE = 0.7078188174959327
TARGET_WAVELENGTH = 637.0


@dataclass(frozen=True)
class LayerStack:
    """Ordered ``(n, length_nm)`` segments between two ambient media."""

    segments: tuple = ()
    n_in: float = 1.0
    n_out: float = 1.0

    def __post_init__(self):
        segs = tuple((float(n), float(d)) for n, d in self.segments)
        for n, d in segs:
            if not n >= 1 or not math.isfinite(n):
                raise DomainError(f"segment index must be real and >= 1, got {n}")
            if not d > 0:
                raise DomainError(f"segment length must be > 0, got {d}")
        if self.n_in < 1 or self.n_out < 1:
            raise DomainError("ambient indices must be >= 1")
        object.__setattr__(self, "segments", segs)

    def reversed(self):
        return LayerStack(self.segments[::-1], n_in=self.n_out, n_out=self.n_in)

    def __add__(self, other):
        return LayerStack(self.segments + other.segments, self.n_in, other.n_out)

    @property
    def length(self):
        return sum(d for _, d in self.segments)


@dataclass(frozen=True)
class TaperSpec:
    a: float = 220.0
    taper_start_fraction: float = 0.9
    taper_periods: int = 5
    mirror_periods: int = 8
    fill_factor: float = 0.6
    n_eff_hi: float = 2.20
    n_eff_lo: float = 1.55
    index_scale: float = DEFAULT_INDEX_SCALE

    def __post_init__(self):
        if not 0 < self.taper_start_fraction < 1:
            raise DomainError("taper_start_fraction must lie in (0, 1)")
        if self.taper_periods < 1 or self.mirror_periods < 1:
            raise DomainError("taper_periods and mirror_periods must be >= 1")
        if not 0 < self.fill_factor < 1:
            raise DomainError("fill_factor must lie in (0, 1)")
        if not self.a > 0 or not self.index_scale > 0:
            raise DomainError("a and index_scale must be > 0")
        if self.n_eff_lo * self.index_scale < 1 or self.n_eff_hi * self.index_scale < 1:
            raise DomainError("scaled effective indices must be >= 1")

    @property
    def n_hi(self):
        return self.n_eff_hi * self.index_scale

    @property
    def n_lo(self):
        return self.n_eff_lo * self.index_scale

    def lattice_fractions(self):
        """Per-cell lattice constants in units of ``a``, left to right."""
        step = (1.0 - self.taper_start_fraction) / self.taper_periods
        half = [self.taper_start_fraction + i * step for i in range(self.taper_periods)]
        mirror = [1.0] * self.mirror_periods
        return mirror + half[::-1] + half + mirror

    def with_(self, **changes):
        return replace(self, **changes)


def unit_cell(n_hi, n_lo, fill, a):
    """Symmetric cell: half high-index, low-index, half high-index."""
    d_hi = fill * a / 2
    return ((n_hi, d_hi), (n_lo, (1 - fill) * a), (n_hi, d_hi))


def build_stack(taper):
    segs = []
    for frac in taper.lattice_fractions():
        segs.extend(unit_cell(taper.n_hi, taper.n_lo, taper.fill_factor, frac * taper.a))
    return LayerStack(tuple(segs), n_in=taper.n_hi, n_out=taper.n_hi)


def layer_matrix(n, d, wavelength):
    delta = 2 * math.pi * n * d / wavelength
    c, s = math.cos(delta), math.sin(delta)
    return np.array([[c, -1j * s / n], [-1j * n * s, c]])


def _segments_matrix(segments, wavelength):
    m = np.eye(2, dtype=complex)
    for n, d in segments:
        m = m @ layer_matrix(n, d, wavelength)
    return m


def transfer_matrix(stack, wavelength):
    """Characteristic matrix of ``stack`` at ``wavelength`` (nm).

    Products of lossless layer matrices are unimodular.
    """
    if not wavelength > 0:
        raise DomainError(f"wavelength must be > 0, got {wavelength}")
    return _segments_matrix(stack.segments, wavelength)


def transmission(stack, wavelength):
    """Intensity ``(R, T)`` at normal incidence."""
    m = transfer_matrix(stack, wavelength)
    n0, ns = stack.n_in, stack.n_out
    b = m[0, 0] + m[0, 1] * ns
    c = m[1, 0] + m[1, 1] * ns
    den = n0 * b + c
    r = (n0 * b - c) / den
    t = 2 * n0 / den
    return float(abs(r) ** 2), float(ns / n0 * abs(t) ** 2)


def spectrum(stack, lambda_grid):
    lam = np.asarray(lambda_grid, dtype=float)
    rt = np.array([transmission(stack, x) for x in lam])
    return rt[:, 0], rt[:, 1]


def bloch_trace(period_spec, wavelength):
    """Half-trace of the unit-cell matrix; ``|value| > 1`` inside a stop band."""
    n_hi, n_lo, fill, a = period_spec
    m = _segments_matrix(unit_cell(n_hi, n_lo, fill, a), wavelength)
    return float(np.real(np.trace(m)) / 2)


def band_edges(period_spec, lambda_range, n_scan=2000):
    """Edges ``(lambda_low, lambda_high)`` of the widest stop band in range.

    Returns None when the range holds no gap.
    """
    lo, hi = lambda_range
    if not 0 < lo < hi:
        raise DomainError("lambda_range must be increasing and positive")
    lam = np.linspace(lo, hi, n_scan)
    excess = np.array([abs(bloch_trace(period_spec, x)) - 1 for x in lam])
    inside = excess > 0
    if not inside.any():
        return None

    def edge(i):
        f = lambda x: abs(bloch_trace(period_spec, x)) - 1  # noqa: E731
        return brentq(f, lam[i], lam[i + 1], xtol=1e-12, rtol=1e-15)

    gaps = []
    start = None
    for i in range(n_scan):
        if inside[i] and start is None:
            start = lo if i == 0 else edge(i - 1)
        if start is not None and (not inside[i] or i == n_scan - 1):
            end = hi if inside[i] else edge(i - 1)
            gaps.append((start, end))
            start = None
    return max(gaps, key=lambda g: g[1] - g[0])


def gap_center(edges):
    """Frequency-midpoint of a stop band expressed as a wavelength."""
    lo, hi = edges
    return 2.0 / (1.0 / lo + 1.0 / hi)


def _peak_in(stack, lo, hi):
    res = minimize_scalar(lambda x: -math.log(max(transmission(stack, x)[1], 1e-300)),
                          bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13 * hi, "maxiter": 500})
    return float(res.x), transmission(stack, res.x)[1]


def find_resonance(stack, lambda_grid, window=None, min_points_per_fwhm=8):
    """Strongest transmission resonance of ``stack`` within ``window``.

    The coarse ``lambda_grid`` locates the peak; a bounded scalar search
    refines it, half-maximum crossings give the width, and a Lorentzian
    fit on a grid with at least ``min_points_per_fwhm`` samples per FWHM
    gives the final centre and linewidth.

    Returns ``(lambda_res, fwhm, fit_result)``.
    """
    lam = np.asarray(lambda_grid, dtype=float)
    if window is not None:
        lam = lam[(lam > window[0]) & (lam < window[1])]
        lam = np.concatenate([[window[0] * (1 + 1e-9)], lam, [window[1] * (1 - 1e-9)]])
    if lam.size < 3:
        raise DesignError("grid does not sample the search window")
    t = np.array([transmission(stack, x)[1] for x in lam])
    i = int(np.argmax(t))
    lo = lam[max(i - 1, 0)]
    hi = lam[min(i + 1, lam.size - 1)]
    centre, t_peak = _peak_in(stack, lo, hi)
    if window is not None and not window[0] < centre < window[1]:
        raise DesignError("transmission maximum sits on the search window edge")
    # reject edges of the window as peaks: require a genuine local maximum
    if centre - lo < 1e-9 * centre or hi - centre < 1e-9 * centre:
        raise DesignError("no resonance peak found inside the search window")

    half = t_peak / 2
    f = lambda x: transmission(stack, x)[1] - half  # noqa: E731

    def crossing(direction):
        step = max(abs(hi - lo) * 1e-6, centre * 1e-12)
        x = centre
        for _ in range(200):
            nxt = x + direction * step
            if f(nxt) < 0:
                a_, b_ = sorted((x, nxt))
                return brentq(f, a_, b_, xtol=1e-15 * centre, rtol=1e-15)
            x = nxt
            step *= 2
        raise DesignError("could not bracket the half-maximum of the resonance")

    fwhm0 = crossing(+1) - crossing(-1)
    if not fwhm0 > 0:
        raise DesignError("degenerate resonance width")
    n_pts = max(6 * min_points_per_fwhm + 1, 81)
    # the line is Lorentzian in frequency; fit in a centred, scaled
    # wavenumber coordinate to keep the normal equations well conditioned
    nu0 = 1.0 / centre
    dnu = fwhm0 / centre**2
    u = np.linspace(-3.0, 3.0, n_pts)
    y = np.array([transmission(stack, 1.0 / (nu0 + v * dnu))[1] for v in u])
    result = fit(LORENTZIAN, u, y, init=[0.0, 1.0, t_peak, 0.0])
    nu_res = nu0 + result.params[0] * dnu
    nu_fwhm = result.params[1] * dnu
    lam_res = 1.0 / nu_res
    # wavelength FWHM of a line with this wavenumber width
    fwhm = 1.0 / (nu_res - nu_fwhm / 2) - 1.0 / (nu_res + nu_fwhm / 2)
    return float(lam_res), float(fwhm), result


def cavity_scan(taper, lambda_grid):
    """Resonance wavelength, mirror-leakage Q and spectrum of a tapered nanobeam.

    Returns ``(lambda_res, q_est, (lambda_grid, T))``.
    """
    lam = np.asarray(lambda_grid, dtype=float)
    stack = build_stack(taper)
    period = (taper.n_hi, taper.n_lo, taper.fill_factor, taper.a)
    gap = band_edges(period, (lam.min(), lam.max()))
    if gap is None:
        raise DesignError("mirror cell has no stop band in the scanned range")
    lam_res, fwhm, _ = find_resonance(stack, lam, window=gap)
    _, t = spectrum(stack, lam)
    return float(lam_res), float(lam_res / fwhm), (lam, t)


def calibrate_index_scale(taper, target=TARGET_WAVELENGTH, lambda_grid=None):
    """Index scale that moves the resonance of ``taper`` to ``target``.

    Scaling every index (ambient included) by ``s`` scales all optical
    path lengths and hence the resonance wavelength by exactly ``s``.
    """
    if lambda_grid is None:
        guess = target / taper.index_scale
        lambda_grid = np.linspace(0.6 * guess, 1.6 * guess, 4001)
    lam_res, _, _ = cavity_scan(taper, lambda_grid)
    return taper.index_scale * target / lam_res


def quarter_wave_stack(n_hi, n_lo, periods, design_wavelength, n_in=1.0, n_out=1.0):
    segs = []
    for _ in range(periods):
        segs.append((n_hi, design_wavelength / (4 * n_hi)))
        segs.append((n_lo, design_wavelength / (4 * n_lo)))
    return LayerStack(tuple(segs), n_in=n_in, n_out=n_out)


def bragg_reflectance(n_hi, n_lo, periods, n_in=1.0, n_out=1.0):
    """Peak reflectance of an ``(HL)^N`` quarter-wave stack."""
    y = n_out * (n_hi / n_lo) ** (2 * periods)
    return ((n_in - y) / (n_in + y)) ** 2


def defect_cavity_stack(n_hi, n_lo, periods, design_wavelength, n_ambient=1.0):
    """``(HL)^N  2H  (LH)^N`` with the half-wave defect in the centre."""
    mirror = quarter_wave_stack(n_hi, n_lo, periods, design_wavelength)
    left = mirror.segments
    right = left[::-1]
    defect = ((n_hi, design_wavelength / (2 * n_hi)),)
    return LayerStack(left + defect + right, n_in=n_ambient, n_out=n_ambient)
