"""Orientation statistics of quantum-dot decay rates near the antenna.

A colloidal dot emits like two incoherent orthogonal dipoles perpendicular to
its c-axis. With the c-axis at angle theta to the antenna normal its rate is

    gamma = gamma_q / 2 * (F_perp sin^2 theta + F_par (1 + cos^2 theta)).

Intrinsic rates ``gamma_q`` follow a Gaussian ensemble (truncated at zero)
and orientations are isotropic (density ``sin theta``), i.e. ``cos theta`` is
uniform on [0, 1]. Rates are in ns^-1, times in ns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .exceptions import AccuracyError, DegeneratePairError, ValidationError

# Reference ensemble of dots in bulk silica
GAMMA_C = 0.055
W_C = 0.020


@dataclass(frozen=True)
class PurcellPair:
    F_perp: float
    F_par: float

    def __post_init__(self):
        if not (self.F_perp > 0 and self.F_par > 0):
            raise ValidationError(f"Purcell factors must be > 0, got {self.F_perp}, {self.F_par}")

    @property
    def degenerate(self):
        return self.F_perp == self.F_par


@dataclass(frozen=True)
class RateEnsemble:
    """Gaussian intrinsic-rate ensemble; ``w_c`` is the standard deviation."""

    gamma_c: float = GAMMA_C
    w_c: float = W_C
    truncate_at_zero: bool = True

    def __post_init__(self):
        if not self.gamma_c > 0:
            raise ValidationError(f"gamma_c must be > 0, got {self.gamma_c}")
        if not self.w_c >= 0:
            raise ValidationError(f"w_c must be >= 0, got {self.w_c}")

    @property
    def degenerate(self):
        return self.w_c == 0

    @property
    def kept_mass(self):
        """Probability mass of the untruncated Gaussian above zero."""
        if self.degenerate or not self.truncate_at_zero:
            return 1.0
        return float(special.ndtr(self.gamma_c / self.w_c))


@dataclass(frozen=True)
class DecayCurve:
    t_grid: np.ndarray
    intensity: np.ndarray
    I0: float = 1.0


@dataclass(frozen=True)
class OrientationSample:
    theta: float
    gamma_q: float
    gamma: float


def gamma_of_theta(gamma_q, theta, fp: PurcellPair):
    s2 = np.sin(theta) ** 2
    c2 = np.cos(theta) ** 2
    return gamma_q / 2 * (fp.F_perp * s2 + fp.F_par * (1 + c2))


def pi1(gamma_q, ens: RateEnsemble):
    """Density of intrinsic rates in silica."""
    if ens.degenerate:
        raise ValidationError("w_c = 0 is a delta distribution; use the degenerate path")
    x = np.asarray(gamma_q, dtype=float)
    z = (x - ens.gamma_c) / ens.w_c
    dens = np.exp(-0.5 * z * z) / (ens.w_c * math.sqrt(2 * math.pi)) / ens.kept_mass
    if ens.truncate_at_zero:
        dens = np.where(x > 0, dens, 0.0)
    return dens


def _check_pair(fp):
    if fp.F_perp <= fp.F_par:
        raise DegeneratePairError(
            f"F_perp={fp.F_perp} <= F_par={fp.F_par}: the rate density is a delta; "
            "use the degenerate path of decay_curve"
        )


def pi2(gamma, gamma_q, fp: PurcellPair):
    """Density of the antenna rate ``gamma`` for a dot of intrinsic rate ``gamma_q``.

    Non-zero for ``F_par <= gamma/gamma_q < (F_perp + F_par)/2``; the upper edge
    carries an integrable inverse-square-root singularity.
    """
    _check_pair(fp)
    g = np.asarray(gamma, dtype=float)
    gq = np.asarray(gamma_q, dtype=float)
    u = g / gq
    arg = (fp.F_perp - fp.F_par) * (fp.F_perp + fp.F_par - 2 * u)
    inside = (u >= fp.F_par) & (u < (fp.F_perp + fp.F_par) / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = 1.0 / (gq * np.sqrt(np.where(inside, arg, 1.0)))
    return np.where(inside, dens, 0.0)


def _gq_range(ens, nsigma=8.0):
    lo = ens.gamma_c - nsigma * ens.w_c
    if ens.truncate_at_zero:
        lo = max(lo, 0.0)
    return lo, ens.gamma_c + nsigma * ens.w_c


def pi_gamma(gamma, ens: RateEnsemble, fp: PurcellPair, epsabs=1e-12, epsrel=1e-10):
    """Marginal density of antenna rates over the intrinsic-rate ensemble.

    At fixed ``gamma`` the ``gamma_q`` integral is rewritten over
    ``c = cos theta``, where ``gamma_q = gamma / g(c)`` and the edge
    singularity of ``pi2`` disappears:

        pi(gamma) = int_0^1 pi1(gamma / g(c)) / g(c) dc.
    """
    _check_pair(fp)
    lo, hi = _gq_range(ens)
    out = []
    for g in np.atleast_1d(np.asarray(gamma, dtype=float)):
        if g <= 0:
            out.append(0.0)
            continue
        # c-range where gamma/g(c) stays inside the non-negligible gq window
        def integrand(c):
            gc = _g_of_c(c, fp)
            return float(pi1(g / gc, ens)) / gc

        val, err = integrate.quad(integrand, 0.0, 1.0, epsabs=epsabs, epsrel=epsrel, limit=200,
                                  points=_c_breaks(g, lo, hi, fp))
        if err > max(1e-8, 1e3 * epsrel * abs(val)):
            raise AccuracyError(f"pi(gamma={g}) quadrature error {err:.2g}", estimate=val, error=err)
        out.append(val)
    out = np.array(out)
    return out if np.ndim(gamma) else float(out[0])


def _g_of_c(c, fp):
    return 0.5 * ((fp.F_perp + fp.F_par) - (fp.F_perp - fp.F_par) * c * c)


def _c_breaks(g, lo, hi, fp):
    """c values where gamma/g(c) crosses the ensemble window edges or mean."""
    pts = []
    dF = fp.F_perp - fp.F_par
    for gq in (lo, hi):
        if gq <= 0:
            continue
        c2 = (fp.F_perp + fp.F_par - 2 * g / gq) / dF
        if 0 < c2 < 1:
            pts.append(math.sqrt(c2))
    return sorted(pts) or None


# ---------------------------------------------------------------- decay curve

def _orientation_kernel(a, fp):
    """``int_0^1 exp(-a g(c)) dc`` for ``a = gamma_q t >= 0``.

    With ``b = a (F_perp - F_par) / 2`` this is ``exp(-a F_par) D(sqrt b)/sqrt b``
    (``D`` = Dawson's integral); for ``F_par > F_perp`` the erf form is used.
    """
    a = np.asarray(a, dtype=float)
    b = a * (fp.F_perp - fp.F_par) / 2
    base = np.exp(-a * fp.F_par)
    if fp.F_perp >= fp.F_par:
        sb = np.sqrt(b)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(b > 1e-12, special.dawsn(sb) / sb, 1.0 - 2.0 * b / 3.0)
        return base * ratio
    beta = -b
    sb = np.sqrt(beta)
    # exp(beta) * sqrt(pi) erf(sqrt beta) / (2 sqrt beta), with exp(-a F_par) folded in
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(beta > 1e-12, math.sqrt(math.pi) * special.erf(sb) / (2 * sb), 1.0 - beta / 3.0)
    return np.exp(-a * fp.F_par + beta) * ratio


def _gauss_legendre_panels(lo, hi, panels, order, grade_left=0):
    """Composite Gauss-Legendre nodes/weights, optionally graded toward ``lo``."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = list(np.linspace(lo, hi, panels + 1))
    if grade_left:
        h = edges[1] - edges[0]
        edges = [lo + h * 2.0**-k for k in range(grade_left, 0, -1)] + edges[1:]
        edges = [lo] + edges
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (b + a))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def ensemble_nodes(ens: RateEnsemble, panels=8, order=8):
    """Quadrature nodes and probability weights for the intrinsic-rate ensemble."""
    if ens.degenerate:
        return np.array([ens.gamma_c]), np.array([1.0])
    lo, hi = _gq_range(ens)
    grade = 8 if lo == 0.0 else 0
    x, w = _gauss_legendre_panels(lo, hi, panels, order, grade_left=grade)
    w = w * pi1(x, ens)
    return x, w


def decay_curve(t_grid, ens: RateEnsemble, fp: PurcellPair, I0=1.0) -> DecayCurve:
    """Ensemble- and orientation-averaged decay ``I(t) = I0 <exp(-gamma t)>``.

    Equivalent to the Laplace transform of :func:`pi_gamma`; the orientation
    average is done in closed form and the intrinsic-rate average by
    composite Gauss-Legendre quadrature. Works for ``F_perp == F_par``
    (single exponential per dot) and ``w_c == 0`` alike.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or np.any(t < 0):
        raise ValidationError("t_grid must be a 1-D grid of non-negative times")
    x, w = ensemble_nodes(ens)
    I = _orientation_kernel(np.outer(t, x), fp) @ w
    return DecayCurve(t, I0 * I, float(I0))


def reference_curve(t_grid, ens: RateEnsemble, I0=1.0) -> DecayCurve:
    """Decay of the same ensemble in bulk silica, ``I0 <exp(-gamma_q t)>``.

    Closed form for the (truncated) Gaussian Laplace transform.
    """
    t = np.asarray(t_grid, dtype=float)
    mu, sig = ens.gamma_c, ens.w_c
    if ens.degenerate:
        return DecayCurve(t, I0 * np.exp(-mu * t), float(I0))
    log_I = -mu * t + 0.5 * (sig * t) ** 2
    if ens.truncate_at_zero:
        log_I = log_I + special.log_ndtr((mu - sig * sig * t) / sig) - special.log_ndtr(mu / sig)
    return DecayCurve(t, I0 * np.exp(log_I), float(I0))


def one_over_e_time(curve: DecayCurve):
    """First time the curve drops to ``I0/e`` (linear interpolation in log I)."""
    y = np.log(curve.intensity / curve.I0)
    idx = np.flatnonzero(y <= -1.0)
    if idx.size == 0 or idx[0] == 0:
        raise ValidationError("curve does not cross 1/e inside the grid")
    i = idx[0]
    t0, t1 = curve.t_grid[i - 1], curve.t_grid[i]
    return float(t0 + (t1 - t0) * (-1.0 - y[i - 1]) / (y[i] - y[i - 1]))


# ----------------------------------------------------------------- IRF

def fwhm_to_sigma(fwhm):
    return fwhm / (2 * math.sqrt(2 * math.log(2)))


def irf_kernel(n, dt, fwhm, delay=0.0):
    """Bin-integrated periodic Gaussian IRF on an ``n``-bin circular grid."""
    sigma = fwhm_to_sigma(fwhm)
    k = np.arange(n)
    offsets = (k + 0.5 * n) % n - 0.5 * n  # signed bin offsets on the circle
    lo = (offsets - 0.5) * dt - delay
    hi = (offsets + 0.5) * dt - delay
    kern = special.ndtr(hi / sigma) - special.ndtr(lo / sigma)
    return kern / kern.sum()


def convolve_irf(curve: DecayCurve, irf_fwhm, delay=0.0) -> DecayCurve:
    """Blur with a unit-area Gaussian instrument response.

    The convolution is circular over the grid (the excitation repeats every
    window), so the total integral is conserved. Widths below one bin leave
    the curve untouched.
    """
    t = np.asarray(curve.t_grid, dtype=float)
    if t.size < 2:
        raise ValidationError("need at least two time points")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-6 * dt[0]:
        raise ValidationError("IRF convolution needs a uniform time grid")
    dt = float(dt[0])
    if irf_fwhm < dt and delay == 0.0:
        return curve
    kern = irf_kernel(t.size, dt, irf_fwhm, delay)
    out = np.real(np.fft.ifft(np.fft.fft(curve.intensity) * np.fft.fft(kern)))
    return DecayCurve(t, out, curve.I0)


# ----------------------------------------------------------------- Monte Carlo

def _sample_gamma_q(rng, n, ens):
    if ens.degenerate:
        return np.full(n, ens.gamma_c)
    v = rng.random(n)
    if ens.truncate_at_zero:
        p0 = special.ndtr(-ens.gamma_c / ens.w_c)
        v = p0 + v * (1 - p0)
    return ens.gamma_c + ens.w_c * special.ndtri(v)


def sample_orientations(n, seed, ens: RateEnsemble, fp: PurcellPair):
    """Draw ``n`` dots: isotropic c-axis by inverse CDF and intrinsic rate.

    Returns ``(theta, gamma_q, gamma)`` arrays.
    """
    if n <= 0:
        raise ValidationError("n must be > 0")
    rng = np.random.default_rng(seed)
    theta = np.arccos(1.0 - rng.random(n))
    gq = _sample_gamma_q(rng, n, ens)
    return theta, gq, gamma_of_theta(gq, theta, fp)


def sample_decay_mc(n, seed, ens: RateEnsemble, fp: PurcellPair, bin_edges=None, total_counts=None):
    """Monte Carlo ensemble, optionally with a Poisson-noised histogram.

    Returns the list of :class:`OrientationSample` and, when ``bin_edges``
    and ``total_counts`` are given, a :class:`~patchantenna.histogram.DecayHistogram`
    whose expected counts are the binned ``exp(-gamma t)`` mixture of the
    sampled dots (the same weighting as :func:`decay_curve`).
    """
    theta, gq, g = sample_orientations(n, seed, ens, fp)
    samples = [OrientationSample(float(a), float(b), float(c)) for a, b, c in zip(theta, gq, g)]
    if bin_edges is None or total_counts is None:
        return samples, None
    from .histogram import DecayHistogram

    edges = np.asarray(bin_edges, dtype=float)
    prob = np.zeros(edges.size - 1)
    # bin integrals of exp(-gamma t), averaged over dots, in chunks to bound memory
    for chunk in np.array_split(g, max(1, g.size // 20000)):
        cdf = -np.expm1(-np.outer(chunk, edges)) / chunk[:, None]
        prob += np.diff(cdf, axis=1).sum(axis=0)
    prob /= g.size
    rng = np.random.default_rng([seed, 1])
    counts = rng.poisson(total_counts * prob / prob.sum())
    return samples, DecayHistogram(edges[:-1], counts)
