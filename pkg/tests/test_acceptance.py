"""End-to-end acceptance criteria.

Each test carries an ``acceptance`` marker; the conftest prints one PASS/FAIL
line per criterion at the end of the session.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate
from scipy.signal import find_peaks

from patchantenna.cli import MANIFEST, run
from patchantenna.decay_stats import (
    PurcellPair,
    RateEnsemble,
    decay_curve,
    one_over_e_time,
    pi1,
    pi2,
    pi_gamma,
    reference_curve,
    sample_orientations,
)
from patchantenna.fitting import fit_antenna, synthesize_histogram
from patchantenna.gap_plasmon import (
    patch_gap_mode,
    purcell_vs_diameter,
    solve_gap_mode,
    spp_single_interface,
)
from patchantenna.layered import PARALLEL, PERP, decay_channels, purcell_planar
from patchantenna.materials import GOLD, SILICA, AntennaGeometry, PlanarStack, build_patch_stack
from patchantenna.radiation import ClusterSpec, cluster_pattern, lobe_metrics, rim_far_field

ENS = RateEnsemble(0.055, 0.020)
LAM = 630.0


def report(**values):
    print("  " + ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in values.items()))


# ----------------------------------------------------------------- 1, 2: fit round trips

def _round_trip(F_perp, F_par, seed):
    truth = PurcellPair(F_perp, F_par)
    hist = synthesize_histogram(truth, ENS, total_counts=1e6, seed=seed, irf_fwhm=0.5)
    t0 = time.perf_counter()
    res = fit_antenna(hist, ENS, irf_fwhm=0.5)
    elapsed = time.perf_counter() - t0
    fp, fa = res.parameters["F_perp"], res.parameters["F_par"]
    report(F_perp=fp, F_par=fa, seconds=elapsed, converged=res.converged)
    assert res.converged
    assert fp == pytest.approx(F_perp, rel=0.10)
    assert fa == pytest.approx(F_par, rel=0.20)
    assert elapsed < 300


@pytest.mark.acceptance(1, "round trip at F_perp=35, F_par=5")
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_round_trip_patch1(seed):
    _round_trip(35.0, 5.0, seed)


@pytest.mark.acceptance(2, "round trip at F_perp=80, F_par=2")
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_round_trip_upper_range(seed):
    _round_trip(80.0, 2.0, seed)


# ----------------------------------------------------------------- 3: acceleration

@pytest.mark.acceptance(3, "reference/antenna 1/e time ratio within 5-15")
def test_acceleration_band():
    t = np.linspace(0.0, 100.0, 20001)
    ratio = one_over_e_time(reference_curve(t, ENS)) / one_over_e_time(decay_curve(t, ENS, PurcellPair(35.0, 5.0)))
    report(ratio=ratio)
    assert 5.0 <= ratio <= 15.0


# ----------------------------------------------------------------- 4: densities

@pytest.mark.acceptance(4, "rate densities normalized; Monte Carlo agrees per bin")
def test_density_exactness():
    t0 = time.perf_counter()
    fp = PurcellPair(35.0, 5.0)
    gq = 0.055
    # closed-form antiderivative of pi2 in u = gamma / gamma_q
    anti = lambda u: -math.sqrt(max(fp.F_perp + fp.F_par - 2 * u, 0.0) / (fp.F_perp - fp.F_par))
    lo, hi = fp.F_par, (fp.F_perp + fp.F_par) / 2
    assert anti(hi) - anti(lo) == pytest.approx(1.0, abs=1e-6)
    top = ENS.gamma_c + 10 * ENS.w_c
    i1, _ = integrate.quad(lambda g: pi1(g, ENS), 0.0, top, limit=200)
    assert i1 == pytest.approx(1.0, abs=1e-6)

    g_hi = hi * top
    ip, _ = integrate.quad(lambda g: pi_gamma(g, ENS, fp), 0.0, g_hi, limit=400,
                           points=[fp.F_par * ENS.gamma_c, hi * ENS.gamma_c])
    assert ip == pytest.approx(1.0, abs=1e-4)

    n = 1_000_000
    _, _, g = sample_orientations(n, 2024, ENS, fp)
    edges = np.linspace(0.0, np.quantile(g, 0.999), 51)
    counts, _ = np.histogram(g, edges)
    x, w = np.polynomial.legendre.leggauss(16)
    expected = np.array([
        0.5 * (b - a) * np.dot(w, pi_gamma(0.5 * (b - a) * x + 0.5 * (a + b), ENS, fp))
        for a, b in zip(edges[:-1], edges[1:])
    ])
    mu = n * expected
    z = np.abs(counts - mu) / np.sqrt(np.maximum(mu, 1.0))
    elapsed = time.perf_counter() - t0
    report(int_pi1=i1, int_pi=ip, max_z=float(z.max()), seconds=elapsed)
    assert np.all(z < 3.0)
    assert elapsed < 60


# ----------------------------------------------------------------- 5: planar physics

@pytest.mark.acceptance(5, "planar Purcell limits, near-field slope and quenching")
def test_planar_physics():
    t0 = time.perf_counter()
    for o in (PERP, PARALLEL):
        assert purcell_planar(PlanarStack.homogeneous(SILICA, LAM), o) == pytest.approx(1.0, abs=1e-6)
        far = purcell_planar(PlanarStack.single_interface(GOLD, SILICA, 10 * LAM, LAM), o)
        assert far == pytest.approx(1.0, abs=0.02)
    d = np.linspace(1.0, 3.0, 5)
    F = [purcell_planar(PlanarStack.single_interface(GOLD, SILICA, x, LAM), PERP) for x in d]
    slope = np.polyfit(np.log(d), np.log(F), 1)[0]
    q15 = decay_channels(build_patch_stack(AntennaGeometry(emitter_height=15.0)), PERP).quench_fraction
    q3 = decay_channels(build_patch_stack(AntennaGeometry(emitter_height=3.0)), PERP).quench_fraction
    elapsed = time.perf_counter() - t0
    report(slope=float(slope), quench_15nm=q15, quench_3nm=q3, seconds=elapsed)
    assert slope == pytest.approx(-3.0, abs=0.45)
    assert q15 < q3 / 5
    assert elapsed < 120


# ----------------------------------------------------------------- 6: gap mode

@pytest.mark.acceptance(6, "gap plasmon dispersion, wide-gap limit and bound-mode region")
def test_gap_mode():
    mode = solve_gap_mode(LAM, 30.0)
    assert mode.residual < 1e-10
    wide = solve_gap_mode(LAM, 2000.0)
    spp = spp_single_interface(LAM, GOLD, SILICA)
    assert abs(wide.n_eff - spp) < 1e-3
    worst_re, worst_im = np.inf, np.inf
    for lam in np.linspace(550.0, 700.0, 7):
        for gap in np.linspace(10.0, 60.0, 6):
            m = solve_gap_mode(lam, gap)
            assert m.residual < 1e-10
            worst_re = min(worst_re, m.n_eff.real)
            worst_im = min(worst_im, m.n_eff.imag)
    report(residual=float(mode.residual), wide_gap_error=float(abs(wide.n_eff - spp)),
           min_re=float(worst_re), min_im=float(worst_im))
    assert worst_re > 1.5 and worst_im > 0


# ----------------------------------------------------------------- 7: oscillatory Purcell

@pytest.mark.acceptance(7, "Purcell factor oscillates with the plasmon period; flat F_par")
def test_oscillatory_purcell(geom):
    mode = patch_gap_mode(geom)
    D = np.arange(500.0, 2500.0 + 0.5, 0.5)
    c = purcell_vs_diameter(geom, D, mode=mode)
    peaks, _ = find_peaks(c.F_perp)
    spacing = np.diff(c.diameters[peaks])
    expected = LAM / mode.n_eff.real
    report(peaks=len(peaks), mean_spacing=float(spacing.mean()), expected=expected,
           F_par_min=float(c.F_par.min()), F_par_max=float(c.F_par.max()))
    assert len(peaks) >= 3
    assert np.all(np.abs(spacing / expected - 1) < 0.10)
    assert np.all((c.F_par >= 4) & (c.F_par <= 5))
    assert np.ptp(c.F_par) == 0


# ----------------------------------------------------------------- 8: radiation pattern

@pytest.fixture(scope="module")
def point_metrics(geom):
    return lobe_metrics(rim_far_field(geom, 0.0, patch_gap_mode(geom)))


@pytest.mark.acceptance(8, "radiation pattern width, size trend, off-centre tilt, cluster washing")
def test_pattern_width_and_trend(geom, point_metrics):
    t0 = time.perf_counter()
    widths = [lobe_metrics(rim_far_field(AntennaGeometry(disk_diameter=D), 0.0)).null_to_null_width
              for D in (1000.0, 1400.0, 1800.0, 2200.0)]
    off = lobe_metrics(rim_far_field(geom, 50.0, patch_gap_mode(geom)))
    elapsed = time.perf_counter() - t0
    report(width=point_metrics.null_to_null_width, widths=str(np.round(widths, 2).tolist()),
           offset_peak_theta=float(off.peak_direction[0]), seconds=elapsed)
    assert point_metrics.null_to_null_width == pytest.approx(35.0, abs=2.0)
    assert np.all(np.diff(widths) < 0)
    assert off.peak_direction[0] > 1.0
    assert elapsed < 120


# both candidate cluster radii (25 nm and 50 nm) are checked
@pytest.mark.acceptance(8, "radiation pattern width, size trend, off-centre tilt, cluster washing")
@pytest.mark.parametrize("radius", [25.0, 50.0])
def test_cluster_raises_peak_to_sidelobe(geom, point_metrics, radius):
    spec = ClusterSpec(radius=radius, height=10.0, center_offset=15.0)
    m = lobe_metrics(cluster_pattern(geom, spec, patch_gap_mode(geom)))
    report(radius=radius, cluster_ratio=m.peak_to_sidelobe_ratio, point_ratio=point_metrics.peak_to_sidelobe_ratio)
    assert not m.no_lobe
    assert m.peak_to_sidelobe_ratio > point_metrics.peak_to_sidelobe_ratio


# ----------------------------------------------------------------- 9: determinism

COMMAND_CONFIGS = [
    {"command": "purcell-planar"},
    {"command": "quench-sweep"},
    {"command": "gap-mode"},
    {"command": "purcell-vs-diameter"},
    {"command": "pattern"},
    {"command": "synth-decay", "seed": 7},
    {"command": "sweep"},
]


def _artifacts(out):
    return {p.name: p.read_bytes() for p in sorted(Path(out).iterdir()) if p.name != MANIFEST}


@pytest.mark.acceptance(9, "byte-identical repeated runs; parallel sweep equals serial")
@pytest.mark.parametrize("doc", COMMAND_CONFIGS, ids=lambda d: d["command"])
def test_repeat_runs_identical(tmp_path, doc):
    assert run({**doc, "output_dir": str(tmp_path / "a")}) == 0
    assert run({**doc, "output_dir": str(tmp_path / "b")}) == 0
    a = _artifacts(tmp_path / "a")
    assert a and a == _artifacts(tmp_path / "b")


@pytest.mark.acceptance(9, "byte-identical repeated runs; parallel sweep equals serial")
def test_fit_decay_repeatable(tmp_path):
    run({"command": "synth-decay", "seed": 3, "fp": {"F_perp": 35, "F_par": 5}, "output_dir": str(tmp_path / "s")})
    src = str(tmp_path / "s" / "decay.csv")
    for kind in ("reference", "antenna"):
        for tag in ("a", "b"):
            assert run({"command": "fit-decay", "fit": kind, "input": src,
                        "output_dir": str(tmp_path / kind / tag)}) == 0
        assert _artifacts(tmp_path / kind / "a") == _artifacts(tmp_path / kind / "b")
    fit = json.loads((tmp_path / "antenna" / "a" / "fit.json").read_text())
    assert fit["converged"]


@pytest.mark.acceptance(9, "byte-identical repeated runs; parallel sweep equals serial")
def test_parallel_sweep_equals_serial(tmp_path):
    assert run({"command": "sweep", "workers": 1, "output_dir": str(tmp_path / "s")}) == 0
    assert run({"command": "sweep", "workers": 4, "output_dir": str(tmp_path / "p")}) == 0
    assert _artifacts(tmp_path / "s") == _artifacts(tmp_path / "p")
