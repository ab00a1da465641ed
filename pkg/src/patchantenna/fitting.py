"""Maximum-likelihood fits of TCSPC decay histograms.

Two fits share one machinery. The reference fit extracts the intrinsic-rate
ensemble ``(gamma_c, w_c)`` from dots in bulk silica. The antenna fit
extracts ``(F_perp, F_par)`` at a known ensemble. Counts are Poisson, so the
loss is the Poisson negative log-likelihood. The amplitude and a flat
background are profiled out exactly at every trial shape, which leaves a 2-D
bounded simplex search.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .decay_stats import (
    DecayCurve,
    PurcellPair,
    RateEnsemble,
    convolve_irf,
    decay_curve,
    reference_curve,
)
from .exceptions import ValidationError
from .histogram import DEFAULT_WINDOW, DecayHistogram

MU_MIN = 1e-12
DEFAULT_IRF_FWHM = 0.5
DEFAULT_BIN_WIDTH = 0.25
F_BOUNDS = (0.1, 500.0)


# ----------------------------------------------------------------- likelihood

def poisson_nll(mu, counts):
    """``sum(mu - c ln mu)`` with ``mu`` floored at ``MU_MIN``."""
    mu = np.maximum(np.asarray(mu, dtype=float), MU_MIN)
    c = np.asarray(counts, dtype=float)
    return float(np.sum(mu - c * np.log(mu)))


def _check_aligned(model: DecayCurve, hist: DecayHistogram):
    t = np.asarray(model.t_grid, dtype=float)
    if t.shape != hist.bin_start.shape or not np.allclose(
        t, hist.bin_start, rtol=1e-9, atol=1e-9 * hist.bin_width
    ):
        raise ValidationError("model grid is not aligned with the histogram bins")


def neg_log_likelihood(model: DecayCurve, hist: DecayHistogram, amplitude=1.0, background=0.0):
    """Poisson NLL of ``hist`` under ``mu = amplitude * model + background``.

    ``model.intensity`` must already be integrated per bin and sampled at the
    histogram's bin starts.
    """
    _check_aligned(model, hist)
    mu = amplitude * np.asarray(model.intensity, dtype=float) + background
    return poisson_nll(mu, hist.counts)


def profile_nuisance(m, counts, fit_background=True, max_iter=100):
    """Amplitude and background that minimize the NLL for a fixed shape ``m``.

    Projected Newton iteration on ``(A, B)`` with ``B >= 0``. Without a
    background the optimum is ``A = sum(c) / sum(m)`` exactly.

    Returns
    -------
    amplitude, background, nll
    """
    m = np.asarray(m, dtype=float)
    c = np.asarray(counts, dtype=float)
    S, M, n = c.sum(), m.sum(), m.size
    if not M > 0:
        raise ValidationError("model carries no counts")
    if not fit_background:
        A = S / M
        return A, 0.0, poisson_nll(A * m, c)

    def nll(x):
        return poisson_nll(x[0] * m + x[1], c)

    x = np.array([0.9 * S / M, 0.1 * S / n])
    f = nll(x)
    for _ in range(max_iter):
        mu = np.maximum(x[0] * m + x[1], MU_MIN)
        r = c / mu
        g = np.array([M - m @ r, n - r.sum()])
        w = r / mu
        H = np.array([[w @ (m * m), w @ m], [w @ m, w.sum()]])
        if x[1] == 0.0 and g[1] >= 0:
            # background pinned at its bound: 1-D optimum in A is closed form
            x_new = np.array([S / M, 0.0])
            f_new = nll(x_new)
            if f_new <= f:
                x, f = x_new, f_new
            break
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g / np.maximum(np.diag(H), MU_MIN)
        lam = 1.0
        while lam > 1e-12:
            trial = x - lam * step
            if trial[1] < 0:
                trial = np.array([S / M, 0.0])
            if trial[0] > 0:
                ft = nll(trial)
                if ft <= f:
                    break
            lam *= 0.5
        else:
            break
        done = abs(f - ft) <= 1e-13 * max(1.0, abs(f)) and np.all(np.abs(trial - x) <= 1e-10 * (np.abs(x) + 1e-9))
        x, f = trial, ft
        if done:
            break
    return float(x[0]), float(x[1]), f


# ----------------------------------------------------------------- forward model

@dataclass(frozen=True, eq=False)
class BinnedModel:
    """Expected per-bin counts (unit amplitude) of a histogram layout.

    The decay is integrated over each bin by Simpson's rule on the edges and
    midpoints, then blurred by the Gaussian IRF (circular, since the
    excitation repeats every window).
    """

    bin_start: np.ndarray
    irf_fwhm: float = DEFAULT_IRF_FWHM
    irf_delay: float = 0.0
    _t: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = np.asarray(self.bin_start, dtype=float)
        if t.ndim != 1 or t.size < 2 or t[0] < 0:
            raise ValidationError("bin_start must be a 1-D grid starting at t >= 0")
        if self.irf_fwhm < 0:
            raise ValidationError("irf_fwhm must be >= 0")
        dt = t[1] - t[0]
        object.__setattr__(self, "bin_start", t)
        object.__setattr__(self, "_t", t[0] + 0.5 * dt * np.arange(2 * t.size + 1))

    @classmethod
    def for_histogram(cls, hist: DecayHistogram, irf_fwhm=DEFAULT_IRF_FWHM, irf_delay=0.0):
        return cls(hist.bin_start, irf_fwhm, irf_delay)

    @property
    def bin_width(self):
        return float(self.bin_start[1] - self.bin_start[0])

    def _bin(self, f):
        per_bin = self.bin_width / 6 * (f[:-2:2] + 4 * f[1:-1:2] + f[2::2])
        curve = DecayCurve(self.bin_start, per_bin)
        if self.irf_fwhm > 0 or self.irf_delay:
            curve = convolve_irf(curve, self.irf_fwhm, self.irf_delay)
        return np.maximum(curve.intensity, 0.0)

    def antenna(self, ens: RateEnsemble, fp: PurcellPair):
        return self._bin(decay_curve(self._t, ens, fp).intensity)

    def reference(self, ens: RateEnsemble):
        return self._bin(reference_curve(self._t, ens).intensity)

    def curve(self, m):
        return DecayCurve(self.bin_start, np.asarray(m, dtype=float))


def synthesize_histogram(
    fp: PurcellPair | None = None,
    ens: RateEnsemble = RateEnsemble(),
    total_counts=1_000_000,
    seed=0,
    bin_width=DEFAULT_BIN_WIDTH,
    window=DEFAULT_WINDOW,
    irf_fwhm=DEFAULT_IRF_FWHM,
    background=0.0,
) -> DecayHistogram:
    """Poisson-noised TCSPC histogram of the model decay.

    ``fp=None`` gives the bulk-silica reference decay. ``total_counts`` is
    the expected signal total and ``background`` the expected dark counts
    per bin.
    """
    if not total_counts > 0 or background < 0:
        raise ValidationError("total_counts must be > 0 and background >= 0")
    n = int(round(window / bin_width))
    if n < 2 or abs(n * bin_width - window) > 1e-9 * window:
        raise ValidationError("window must be a whole number of bins")
    model = BinnedModel(np.arange(n) * bin_width, irf_fwhm)
    m = model.reference(ens) if fp is None else model.antenna(ens, fp)
    mu = total_counts * m / m.sum() + background
    counts = np.random.default_rng(seed).poisson(mu)
    return DecayHistogram(model.bin_start, counts, float(window))


# ----------------------------------------------------------------- results

@dataclass(frozen=True)
class FitResult:
    """Best-fit values, their 1-sigma widths from the likelihood curvature, and diagnostics.

    ``start_nll`` holds the profiled NLL of every multi-start grid point.
    """

    parameters: dict
    confidence: dict
    nll: float
    converged: bool
    evaluations: int
    flags: tuple = ()
    start_nll: tuple = ()

    def to_dict(self):
        return {
            "parameters": dict(self.parameters),
            "confidence": dict(self.confidence),
            "nll": self.nll,
            "converged": self.converged,
            "evaluations": self.evaluations,
            "flags": list(self.flags),
        }


class _Counter:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.fn(x)


def _initial_simplex(x0, steps, bounds):
    pts = [np.array(x0, dtype=float)]
    for k, h in enumerate(steps):
        p = pts[0].copy()
        lo, hi = bounds[k]
        p[k] = p[k] + h if p[k] + h <= hi else p[k] - h
        p[k] = min(max(p[k], lo), hi)
        pts.append(p)
    return np.array(pts)


def _multistart(objective, starts, bounds, steps, n_polish, xatol, fatol, max_evaluations):
    """Grid scan, then bounded Nelder-Mead from the ``n_polish`` best distinct starts."""
    f = _Counter(objective)
    start_vals = [f(np.asarray(s, dtype=float)) for s in starts]
    order = np.argsort(start_vals, kind="stable")
    best = None
    for idx in order[:n_polish]:
        if not np.isfinite(start_vals[idx]):
            continue
        res = optimize.minimize(
            f,
            starts[idx],
            method="Nelder-Mead",
            bounds=bounds,
            options=dict(
                xatol=xatol,
                fatol=fatol,
                maxfev=max_evaluations,
                initial_simplex=_initial_simplex(starts[idx], steps, bounds),
            ),
        )
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        i = int(order[0])
        return np.asarray(starts[i], dtype=float), start_vals[i], False, f.calls, start_vals
    return best.x, float(best.fun), bool(best.success), f.calls, start_vals


def _fisher_sigma(jac, mu):
    """Square roots of the inverse Fisher information ``J^T diag(1/mu) J``."""
    mu = np.maximum(mu, MU_MIN)
    info = jac.T @ (jac / mu[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    return np.sqrt(np.abs(np.diag(cov)))


def _validate_hist(hist):
    if not isinstance(hist, DecayHistogram):
        raise ValidationError(f"expected a DecayHistogram, got {type(hist).__name__}")
    if np.count_nonzero(hist.counts) < 50:
        raise ValidationError("need at least 50 bins with nonzero counts")


def _at_bound(x, bounds, tol=1e-6):
    lo, hi = bounds
    span = hi - lo
    return abs(x - lo) <= tol * span or abs(x - hi) <= tol * span


# ----------------------------------------------------------------- reference fit

GAMMA_BOUNDS = (1e-4, 10.0)
REL_WIDTH_BOUNDS = (0.0, 2.0)


def fit_reference(
    hist: DecayHistogram,
    irf_fwhm=DEFAULT_IRF_FWHM,
    fit_background=True,
    n_grid=5,
    n_polish=3,
    xatol=1e-3,
    fatol=1e-6,
    max_evaluations=2000,
) -> FitResult:
    """Fit the bulk-silica ensemble ``(gamma_c, w_c)``.

    The search runs over ``(ln gamma_c, w_c / gamma_c)``. The confidence of
    ``w_c`` comes from the curvature in the variance ``s = w_c^2``, which stays
    regular at ``w_c = 0``. It is the larger distance from ``w`` to the
    square roots of ``s +- sigma_s``, so the interval reaches zero whenever
    ``s <= sigma_s``.
    """
    _validate_hist(hist)
    model = BinnedModel.for_histogram(hist, irf_fwhm)
    c = hist.counts

    def shape(gc, wc):
        return model.reference(RateEnsemble(gc, wc))

    def objective(x):
        gc = math.exp(x[0])
        return profile_nuisance(shape(gc, gc * x[1]), c, fit_background)[2]

    # rate guess from the background-uncorrected mean arrival time
    t_mid = hist.bin_start + 0.5 * hist.bin_width
    g0 = float(np.clip(c.sum() / (c @ t_mid), *GAMMA_BOUNDS))
    lg = np.log(GAMMA_BOUNDS)
    centers = (np.arange(n_grid) + 0.5) / n_grid
    log_g = np.clip(math.log(g0) + np.log(3.0) * (2 * centers - 1), *lg)
    rel = REL_WIDTH_BOUNDS[0] + centers * 0.8
    starts = [np.array([a, b]) for a in log_g for b in rel]
    bounds = [tuple(lg), REL_WIDTH_BOUNDS]
    x, nll, ok, calls, start_vals = _multistart(
        objective, starts, bounds, (0.2, 0.1), n_polish, xatol, fatol, max_evaluations
    )
    gc = math.exp(x[0])
    wc = float(gc * x[1])
    m = shape(gc, wc)
    A, B, nll = profile_nuisance(m, c, fit_background)

    # Fisher information in (gamma_c, s = w_c^2, A, B)
    s = wc * wc
    hg = 1e-5 * gc
    d_g = (shape(gc + hg, wc) - shape(gc - hg, wc)) / (2 * hg)
    hs = 1e-4 * max(s, (0.05 * gc) ** 2)
    if s > hs:
        d_s = (shape(gc, math.sqrt(s + hs)) - shape(gc, math.sqrt(s - hs))) / (2 * hs)
    else:
        d_s = (shape(gc, math.sqrt(s + hs)) - m) / hs
    cols = [A * d_g, A * d_s, m] + ([np.ones_like(m)] if fit_background else [])
    sig = _fisher_sigma(np.column_stack(cols), A * m + B)
    conf = {
        "gamma_c": float(sig[0]),
        "w_c": float(max(math.sqrt(s + sig[1]) - wc, wc - math.sqrt(max(s - sig[1], 0.0)))),
        "amplitude": float(sig[2]),
        "background": float(sig[3]) if fit_background else 0.0,
    }
    flags = []
    if _at_bound(x[0], bounds[0]) or _at_bound(x[1], bounds[1]):
        flags.append("boundary-pinned")
    return FitResult(
        {"gamma_c": gc, "w_c": wc, "amplitude": A, "background": B},
        conf,
        nll,
        ok,
        calls,
        tuple(flags),
        tuple(start_vals),
    )


# ----------------------------------------------------------------- antenna fit

def _fpar_from(log_fperp, q, f_min):
    """``F_par = f_min (F_perp / f_min)^q``: ``q`` in [0, 1] spans ``[f_min, F_perp]`` log-uniformly."""
    fperp = math.exp(log_fperp)
    return fperp, float(f_min * (fperp / f_min) ** q)


def fit_antenna(
    hist: DecayHistogram,
    ens: RateEnsemble = RateEnsemble(),
    irf_fwhm=DEFAULT_IRF_FWHM,
    fit_background=True,
    bounds=F_BOUNDS,
    n_grid=5,
    n_polish=3,
    xatol=1e-3,
    fatol=1e-6,
    max_evaluations=2000,
) -> FitResult:
    """Fit ``(F_perp, F_par)`` with ``bounds[0] <= F_par <= F_perp <= bounds[1]``.

    The simplex runs over ``(ln F_perp, q)`` with ``F_par`` log-interpolated
    between the lower bound and ``F_perp``, so the ordering constraint is a
    box. The start grid is ``n_grid`` x ``n_grid`` cell centres, log-spaced in
    both factors. Flags: ``boundary-pinned`` when the optimum sits on a box
    face, ``near-degenerate`` when ``|F_perp - F_par|`` is below the summed
    1-sigma widths or the best degenerate pair lies within 0.5 in NLL.
    """
    _validate_hist(hist)
    f_min, f_max = map(float, bounds)
    if not 0 < f_min < f_max:
        raise ValidationError(f"invalid F bounds {bounds}")
    model = BinnedModel.for_histogram(hist, irf_fwhm)
    c = hist.counts

    def shape(fperp, fpar):
        return model.antenna(ens, PurcellPair(fperp, fpar))

    def objective(x):
        return profile_nuisance(shape(*_fpar_from(x[0], x[1], f_min)), c, fit_background)[2]

    lb = (math.log(f_min), math.log(f_max))
    centers = (np.arange(n_grid) + 0.5) / n_grid
    starts = [np.array([lb[0] + a * (lb[1] - lb[0]), q]) for a in centers for q in centers]
    box = [lb, (0.0, 1.0)]
    x, nll, ok, calls, start_vals = _multistart(
        objective, starts, box, (0.3, 0.1), n_polish, xatol, fatol, max_evaluations
    )
    # best fit on the degenerate diagonal F_perp = F_par; the likelihood is
    # quadratic in (F_perp - F_par)^2 there, so curvature alone misses it
    diag = optimize.minimize_scalar(
        lambda lf: objective(np.array([lf, 1.0])), bounds=lb, method="bounded", options={"xatol": 1e-6}
    )
    calls += diag.nfev
    if diag.fun < nll:
        x, nll = np.array([diag.x, 1.0]), float(diag.fun)
    fperp, fpar = _fpar_from(x[0], x[1], f_min)
    m = shape(fperp, fpar)
    A, B, nll = profile_nuisance(m, c, fit_background)

    h1, h2 = 1e-4 * fperp, 1e-4 * fpar
    d_perp = (shape(fperp + h1, fpar) - shape(fperp - h1, fpar)) / (2 * h1)
    d_par = (shape(fperp, fpar + h2) - shape(fperp, fpar - h2)) / (2 * h2)
    cols = [A * d_perp, A * d_par, m] + ([np.ones_like(m)] if fit_background else [])
    sig = _fisher_sigma(np.column_stack(cols), A * m + B)
    conf = {
        "F_perp": float(sig[0]),
        "F_par": float(sig[1]),
        "amplitude": float(sig[2]),
        "background": float(sig[3]) if fit_background else 0.0,
    }
    flags = []
    if _at_bound(x[0], box[0]) or _at_bound(x[1], box[1]):
        flags.append("boundary-pinned")
    if abs(fperp - fpar) < conf["F_perp"] + conf["F_par"] or diag.fun - nll <= 0.5:
        flags.append("near-degenerate")
    return FitResult(
        {"F_perp": fperp, "F_par": fpar, "amplitude": A, "background": B},
        conf,
        nll,
        ok,
        calls,
        tuple(flags),
        tuple(start_vals),
    )


# ----------------------------------------------------------------- estimators

def _as_histogram(X, y, window):
    if isinstance(X, DecayHistogram):
        return X
    if y is None:
        raise ValidationError("pass a DecayHistogram, or bin start times X with counts y")
    t = column_or_1d(check_array(X, ensure_2d=False, dtype=float))
    counts = column_or_1d(check_array(y, ensure_2d=False, dtype=float))
    return DecayHistogram(t, counts, window)


def _bin_starts(X):
    if isinstance(X, DecayHistogram):
        return X.bin_start
    return column_or_1d(check_array(X, ensure_2d=False, dtype=float))


class _DecayFitter(BaseEstimator):
    def _result_params(self):
        raise NotImplementedError

    def _shape(self, model):
        raise NotImplementedError

    def predict(self, X):
        """Expected counts per bin at the bin starts ``X``."""
        check_is_fitted(self, "result_")
        model = BinnedModel(_bin_starts(X), self.irf_fwhm)
        p = self.result_.parameters
        return p["amplitude"] * self._shape(model) + p["background"]

    def score(self, X, y=None):
        """Mean Poisson log-likelihood per bin, up to the count-only constant."""
        hist = _as_histogram(X, y, self.window)
        return -poisson_nll(self.predict(hist), hist.counts) / len(hist)


class ReferenceDecayFitter(_DecayFitter):
    """Estimator wrapper around :func:`fit_reference`.

    ``fit`` takes a :class:`DecayHistogram`, or bin start times ``X`` with
    counts ``y``. Fitted attributes: ``gamma_c_``, ``w_c_``, ``result_``.
    """

    def __init__(self, irf_fwhm=DEFAULT_IRF_FWHM, fit_background=True, n_grid=5, n_polish=3,
                 max_evaluations=2000, window=DEFAULT_WINDOW):
        self.irf_fwhm = irf_fwhm
        self.fit_background = fit_background
        self.n_grid = n_grid
        self.n_polish = n_polish
        self.max_evaluations = max_evaluations
        self.window = window

    def fit(self, X, y=None):
        hist = _as_histogram(X, y, self.window)
        self.result_ = fit_reference(
            hist, self.irf_fwhm, self.fit_background, self.n_grid, self.n_polish,
            max_evaluations=self.max_evaluations,
        )
        self.gamma_c_ = self.result_.parameters["gamma_c"]
        self.w_c_ = self.result_.parameters["w_c"]
        return self

    @property
    def ensemble_(self):
        check_is_fitted(self, "result_")
        return RateEnsemble(self.gamma_c_, self.w_c_)

    def _shape(self, model):
        return model.reference(self.ensemble_)


class AntennaDecayFitter(_DecayFitter):
    """Estimator wrapper around :func:`fit_antenna`.

    Fitted attributes: ``F_perp_``, ``F_par_``, ``result_``.
    """

    def __init__(self, gamma_c=0.055, w_c=0.020, irf_fwhm=DEFAULT_IRF_FWHM, fit_background=True,
                 bounds=F_BOUNDS, n_grid=5, n_polish=3, max_evaluations=2000, window=DEFAULT_WINDOW):
        self.gamma_c = gamma_c
        self.w_c = w_c
        self.irf_fwhm = irf_fwhm
        self.fit_background = fit_background
        self.bounds = bounds
        self.n_grid = n_grid
        self.n_polish = n_polish
        self.max_evaluations = max_evaluations
        self.window = window

    def fit(self, X, y=None):
        hist = _as_histogram(X, y, self.window)
        self.result_ = fit_antenna(
            hist, RateEnsemble(self.gamma_c, self.w_c), self.irf_fwhm, self.fit_background,
            self.bounds, self.n_grid, self.n_polish, max_evaluations=self.max_evaluations,
        )
        self.F_perp_ = self.result_.parameters["F_perp"]
        self.F_par_ = self.result_.parameters["F_par"]
        return self

    def _shape(self, model):
        return model.antenna(RateEnsemble(self.gamma_c, self.w_c), PurcellPair(self.F_perp_, self.F_par_))
