"""Metal-insulator-metal gap plasmon and the radial Fabry-Perot disk surrogate."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NoBoundModeError, RootFindingError, ValidationError
from .materials import GOLD, SILICA, AntennaGeometry, Material, build_patch_stack, permittivity_at


def _eps(medium, wavelength):
    if isinstance(medium, Material):
        return permittivity_at(medium, wavelength)
    return complex(medium)


@dataclass(frozen=True)
class GapPlasmonMode:
    n_eff: complex
    wavelength: float
    gap_thickness: float
    residual: float | None = None

    @property
    def propagation_length(self):
        """Intensity 1/e length in nm."""
        k0 = 2 * math.pi / self.wavelength
        return 1.0 / (2 * k0 * self.n_eff.imag)

    @property
    def plasmon_wavelength(self):
        return self.wavelength / self.n_eff.real


def spp_single_interface(wavelength, metal, dielectric) -> complex:
    """Effective index of the surface plasmon on one flat metal/dielectric interface."""
    em = _eps(metal, wavelength)
    ed = _eps(dielectric, wavelength)
    if not em.real < -ed.real:
        raise NoBoundModeError(
            f"no bound surface plasmon: Re(eps_metal)={em.real:g} is not below -eps_d={-ed.real:g}"
        )
    n = np.sqrt(em * ed / (em + ed))
    if n.real < 0:
        n = -n
    return complex(n)


def _kappa(n, eps):
    k = np.sqrt(n * n - eps)
    return k if k.real >= 0 else -k


def gap_dispersion(n, k0, t, em, ed):
    """Residual of the symmetric gap-mode relation and its derivative in ``n``.

    The relation reads ``tanh(kd t/2) + (ed km)/(em kd) = 0`` with
    ``ki = k0 sqrt(n^2 - eps_i)``.
    """
    km = k0 * _kappa(n, em)
    kd = k0 * _kappa(n, ed)
    th = np.tanh(kd * t / 2)
    f = th + ed * km / (em * kd)
    dkm = k0 * k0 * n / km
    dkd = k0 * k0 * n / kd
    df = (1 - th * th) * (t / 2) * dkd + (ed / em) * (dkm * kd - km * dkd) / (kd * kd)
    return complex(f), complex(df)


def _newton(n0, k0, t, em, ed, tol, maxiter=100):
    n = complex(n0)
    f, df = gap_dispersion(n, k0, t, em, ed)
    for _ in range(maxiter):
        if abs(f) < tol:
            break
        if df == 0 or not np.isfinite(df):
            break
        step = f / df
        lam = 1.0
        while lam > 1e-6:
            trial = n - lam * step
            ft, dft = gap_dispersion(trial, k0, t, em, ed)
            if np.isfinite(ft) and abs(ft) < abs(f):
                break
            lam /= 2
        else:
            break
        n, f, df = trial, ft, dft
    return n, abs(f)


def _is_bound(n, ed, em):
    return n.real > math.sqrt(ed.real) and n.imag > 0 and _kappa(n, em).real > 0 and _kappa(n, ed).real > 0


def solve_gap_mode(
    wavelength, gap_thickness, metal=GOLD, dielectric=SILICA, tol=1e-12
) -> GapPlasmonMode:
    """Fundamental symmetric gap plasmon of a metal/dielectric/metal slab.

    Damped complex Newton iteration seeded from the single-interface plasmon
    and from the thin-gap estimate; a grid of seeds is tried if both fail.
    """
    if not gap_thickness > 0:
        raise ValidationError(f"gap_thickness must be > 0, got {gap_thickness}")
    em = _eps(metal, wavelength)
    ed = _eps(dielectric, wavelength)
    n_spp = spp_single_interface(wavelength, em, ed)
    k0 = 2 * math.pi / wavelength
    t = float(gap_thickness)

    seeds = [n_spp]
    # thin gap: kappa_m ~ kappa_d, tanh(kappa t/2) = -eps_d/eps_m
    kap = 2 / t * np.arctanh(-ed / em)
    seeds.append(np.sqrt(ed + (kap / k0) ** 2))
    nd = math.sqrt(ed.real)
    seeds += [
        complex(re, im)
        for re in np.linspace(nd * 1.01, max(6 * nd, 3 * abs(seeds[1])), 12)
        for im in (0.005, 0.05, 0.3)
    ]
    best = (None, math.inf)
    for seed in seeds:
        n, res = _newton(seed, k0, t, em, ed, tol)
        if not np.isfinite(res):
            continue
        if _is_bound(n, ed, em) or em.imag == 0 and n.real > nd:
            if res < tol * 100:
                return GapPlasmonMode(complex(n), float(wavelength), t, residual=res)
            if res < best[1]:
                best = (n, res)
    raise RootFindingError(
        f"gap-mode Newton iteration did not converge (best residual {best[1]:.3g})",
        best_root=best[0],
        best_residual=best[1],
    )


def patch_gap_mode(geom: AntennaGeometry) -> GapPlasmonMode:
    """Gap plasmon under the actual disk (finite thickness, air above).

    The thin top disk raises the index above the thick-metal symmetric
    solution; the root is refined on the planar stack's reflection poles.
    """
    from .layered import stack_gap_mode_index

    n = stack_gap_mode_index(build_patch_stack(geom))
    return GapPlasmonMode(complex(n), geom.emission_wavelength, geom.spacer_thickness)


@dataclass(frozen=True)
class FabryPerotParams:
    """Edge constants of the radial round-trip model.

    ``edge_reflectivity`` and ``edge_phase`` are surrogate constants, not
    measured values. ``planar_baseline`` defaults to the infinite-patch
    Purcell factor of the perpendicular dipole.
    """

    edge_reflectivity: float = 0.9
    edge_phase: float = -math.pi / 2
    planar_baseline: float | None = None
    parallel_value: float = 4.5

    def __post_init__(self):
        if not 0 <= self.edge_reflectivity < 1:
            raise ValidationError("edge_reflectivity must lie in [0, 1)")
        if self.parallel_value <= 0:
            raise ValidationError("parallel_value must be > 0")
        if self.planar_baseline is not None and self.planar_baseline <= 0:
            raise ValidationError("planar_baseline must be > 0")


@dataclass(frozen=True)
class PurcellCurve:
    diameters: np.ndarray
    F_perp: np.ndarray
    F_par: np.ndarray


def round_trip_factor(diameters, wavelength, n_eff, reflectivity, phase):
    """Period-averaged-normalized cavity factor ``(1 - a^2) / |1 - a e^{i psi}|^2``.

    ``a = r exp(-D / 2L)`` carries the round-trip propagation loss, so the
    mean over one resonance period is one for every diameter.
    """
    D = np.asarray(diameters, dtype=float)
    k0 = 2 * math.pi / wavelength
    rt = reflectivity * np.exp(1j * (k0 * n_eff * D + phase))
    a = np.abs(rt)
    return (1 - a * a) / np.abs(1 - rt) ** 2


def purcell_vs_diameter(geom: AntennaGeometry, diameters, params: FabryPerotParams = None, mode=None):
    """Oscillating Purcell factor of the perpendicular dipole versus disk diameter."""
    params = params or FabryPerotParams()
    D = np.asarray(diameters, dtype=float)
    if D.ndim != 1 or np.any(D <= 0) or np.any(np.diff(D) <= 0):
        raise ValidationError("diameters must be a positive increasing 1-D grid")
    if mode is None:
        mode = patch_gap_mode(geom)
    F_inf = params.planar_baseline
    if F_inf is None:
        from .layered import purcell_planar

        F_inf = purcell_planar(build_patch_stack(geom), "perp")
    S = round_trip_factor(D, geom.emission_wavelength, mode.n_eff, params.edge_reflectivity, params.edge_phase)
    return PurcellCurve(D, F_inf * S, np.full_like(D, params.parallel_value))
