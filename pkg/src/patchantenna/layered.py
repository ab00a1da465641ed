"""Dipole emission between two planar multilayer mirrors.

The emitter sits in a homogeneous gap, ``d_lower`` above the lower
half-stack and ``d_upper`` below the upper one. Power is decomposed over the
in-plane wavevector ``u = k_par / (k0 n_gap)``: ``u < 1`` are propagating
waves in the gap, ``u > 1`` evanescent ones (guided plasmons, then
quenching into the metal at large ``u``). Densities are normalized to the
emitter in an unbounded gap medium, so the integral over ``u`` is the
Purcell factor with respect to bulk gap material.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .exceptions import AccuracyError, NoBoundModeError, NumericalError, ValidationError
from .gap_plasmon import solve_gap_mode, spp_single_interface
from .materials import HalfStack, PlanarStack, permittivity_at

PERP = "perp"
PARALLEL = "parallel"
_TAIL = 1e-12


def _check_orientation(orientation):
    if orientation not in (PERP, PARALLEL):
        raise ValidationError(f"orientation must be 'perp' or 'parallel', got {orientation!r}")


def _kz(eps, eps_gap, u, k0):
    kz = k0 * np.sqrt(eps - eps_gap * u * u + 0j)
    return np.where(kz.imag < 0, -kz, kz)


def half_stack_reflection(halfstack: HalfStack, polarization, u, wavelength):
    """Amplitude reflection of a half-stack seen from the gap medium.

    ``u`` may be an array. The p coefficient uses the convention
    ``r_p = r_s`` at normal incidence, i.e. ``(n1 - n2) / (n1 + n2)`` for a
    single interface. Layers are combined with the recursive Airy formula,
    which stays bounded for strongly evanescent waves.
    """
    if polarization not in ("s", "p"):
        raise ValidationError(f"polarization must be 's' or 'p', got {polarization!r}")
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValidationError("u must be >= 0")
    return _reflection(halfstack, polarization, u, wavelength)


def _reflection(halfstack, polarization, u, wavelength):
    # also valid for complex u near the real axis (pole search)
    k0 = 2 * math.pi / wavelength
    eps_gap = permittivity_at(halfstack.incident, wavelength)
    media = [halfstack.incident] + [l.material for l in halfstack.layers] + [halfstack.substrate]
    eps = [permittivity_at(m, wavelength) for m in media]
    kz = [_kz(e, eps_gap, u, k0) for e in eps]

    def interface(i):
        if polarization == "s":
            a, b = kz[i], kz[i + 1]
        else:
            a, b = eps[i] * kz[i + 1], eps[i + 1] * kz[i]
        # identical media at grazing incidence give 0/0; no interface, no reflection
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(a == b, 0.0, (a - b) / (a + b))

    # fold from the substrate inward
    r = interface(len(media) - 2)
    for j in range(len(halfstack.layers), 0, -1):
        phase = np.exp(2j * kz[j] * halfstack.layers[j - 1].thickness)
        rij = interface(j - 1)
        r = (rij + r * phase) / (1 + rij * r * phase)
    return r


@dataclass(frozen=True)
class DissipationSpectrum:
    u_grid: np.ndarray
    density: np.ndarray
    orientation: str


@dataclass(frozen=True)
class ChannelSplit:
    photon_fraction: float
    plasmon_fraction: float
    quench_fraction: float
    total_purcell: float


def _mirror(stack, half, polarization, u):
    """Round-trip amplitude ``r exp(2 i kz d)`` toward one mirror."""
    eps_gap = permittivity_at(stack.emitter_gap_material, stack.wavelength)
    k0 = 2 * math.pi / stack.wavelength
    h = stack.lower if half == "lower" else stack.upper
    d = stack.d_lower if half == "lower" else stack.d_upper
    if h.is_trivial:
        return np.zeros_like(u, dtype=complex)
    r = half_stack_reflection(h, polarization, u, stack.wavelength)
    if polarization == "p":
        r = -r  # magnetic-field convention for the dipole formulas
    return r * np.exp(2j * _kz(eps_gap, eps_gap, u, k0) * d)


def _spectrum(stack, orientation, u, l):
    """``dF/du`` given ``u`` and ``l = sqrt(1 - u^2)`` (Im l >= 0)."""
    au = _mirror(stack, "upper", "p", u)
    ad = _mirror(stack, "lower", "p", u)
    if orientation == PERP:
        g = (1 + au) * (1 + ad) / (1 - au * ad)
        return 1.5 * (u**3 / l * g).real
    su = _mirror(stack, "upper", "s", u)
    sd = _mirror(stack, "lower", "s", u)
    gs = (1 + su) * (1 + sd) / (1 - su * sd)
    gp = (1 - au) * (1 - ad) / (1 - au * ad)
    return 0.75 * (u / l * (gs + l * l * gp)).real


def dissipation_spectrum(stack: PlanarStack, orientation, u_grid) -> DissipationSpectrum:
    """Power density per unit ``u`` on a grid.

    Exactly at ``u = 1`` the ``1/sqrt(1 - u^2)`` factor is evaluated a hair
    away from the branch point so the result stays finite.
    """
    _check_orientation(orientation)
    u = np.asarray(u_grid, dtype=float)
    if u.ndim != 1 or u.size == 0 or u[0] < 0 or np.any(np.diff(u) <= 0):
        raise ValidationError("u_grid must be a non-negative, strictly increasing 1-D grid")
    uu = np.where(np.abs(u - 1) < 1e-12, 1 - 1e-12, u)
    l = np.sqrt(1 - uu * uu + 0j)
    return DissipationSpectrum(u, _spectrum(stack, orientation, uu, l), orientation)


def _reflecting_distances(stack):
    out = []
    if not stack.lower.is_trivial:
        out.append(stack.d_lower)
    if not stack.upper.is_trivial:
        out.append(stack.d_upper)
    return out


def default_u_max(stack: PlanarStack):
    """Cut-off where the nearest mirror's evanescent tail drops below 1e-12."""
    ds = _reflecting_distances(stack)
    if not ds:
        return 1.0
    k1 = 2 * math.pi / stack.wavelength * stack.n_gap.real
    x = -math.log(_TAIL) / (2 * k1 * min(ds))
    return math.sqrt(1 + x * x)


def _is_metal(material, stack):
    eps = permittivity_at(material, stack.wavelength)
    return eps.real < -permittivity_at(stack.emitter_gap_material, stack.wavelength).real


def _stack_pole(stack, seed, tol=1e-12, maxiter=60):
    """Zero of ``1 - r_u r_d exp(2 i kz (d_l + d_u))`` (p waves) near ``seed``."""
    k1 = 2 * math.pi / stack.wavelength * stack.n_gap.real
    t = stack.d_lower + stack.d_upper

    def f(u):
        u = np.array([u])
        ru = _reflection(stack.upper, "p", u, stack.wavelength)[0]
        rd = _reflection(stack.lower, "p", u, stack.wavelength)[0]
        kz = k1 * np.sqrt(1 - u[0] * u[0] + 0j)
        kz = -kz if kz.imag < 0 else kz
        return 1 - ru * rd * np.exp(2j * kz * t)

    u = complex(seed)
    fu = f(u)
    for _ in range(maxiter):
        h = 1e-7 * max(1.0, abs(u))
        df = (f(u + h) - f(u - h)) / (2 * h)
        if df == 0:
            break
        step = fu / df
        lam = 1.0
        while lam > 1e-4:
            trial = u - lam * step
            ft = f(trial)
            if abs(ft) < abs(fu):
                break
            lam /= 2
        else:
            break
        u, fu = trial, ft
        if abs(fu) < tol:
            return u
    raise NumericalError(f"stack pole search stalled at u={u} (|f|={abs(fu):.3g})")


def stack_gap_mode_index(stack: PlanarStack):
    """Effective index of the gap plasmon of the actual (finite-layer) stack.

    Seeded from the symmetric thick-metal gap mode and refined on the
    multiple-reflection denominator, so thin cladding layers (the 20 nm disk)
    are accounted for. Returns ``None`` when the gap is not metal-bounded.
    """
    facing = [h.facing_material for h in (stack.lower, stack.upper) if not h.is_trivial]
    metals = [m for m in facing if _is_metal(m, stack)]
    if len(metals) != 2:
        return None
    n_gap = stack.n_gap.real
    mode = solve_gap_mode(stack.wavelength, stack.d_lower + stack.d_upper, metals[0], stack.emitter_gap_material)
    return _stack_pole(stack, mode.n_eff / n_gap) * n_gap


def guided_poles(stack: PlanarStack):
    """Complex ``u`` of the bound plasmons the integrand has to resolve."""
    poles = []
    gap = stack.emitter_gap_material
    n_gap = stack.n_gap.real
    facing = [h.facing_material for h in (stack.lower, stack.upper) if not h.is_trivial]
    metals = [m for m in facing if _is_metal(m, stack)]
    for m in metals:
        try:
            poles.append(spp_single_interface(stack.wavelength, m, gap) / n_gap)
        except NoBoundModeError:
            pass
    if len(metals) == 2:
        try:
            poles.append(stack_gap_mode_index(stack) / n_gap)
        except NumericalError:
            pass
    return poles


def _breakpoints(stack, u_max):
    n_gap = stack.n_gap.real
    pts = {1.0}
    for h in (stack.lower, stack.upper):
        for m in [l.material for l in h.layers] + [h.substrate]:
            n = np.sqrt(permittivity_at(m, stack.wavelength)).real
            pts.add(n / n_gap)
    for p in guided_poles(stack):
        w = max(abs(p.imag), 1e-4)
        pts.update((p.real - 5 * w, p.real - w, p.real, p.real + w, p.real + 5 * w))
    return sorted(p for p in pts if 0 < p < u_max)


def _integrate(stack, orientation, a, b, epsabs, epsrel):
    """Integral of dF/du over [a, b] with the branch-point substitutions."""
    total = err = 0.0
    if a < 1:
        hi = min(b, 1.0)

        def f_below(s):
            u = math.sin(s)
            l = complex(math.cos(s))
            # du = l ds cancels the 1/l factor
            return float(_spectrum(stack, orientation, np.array([u]), np.array([l]))[0]) * l.real

        val, e = integrate.quad(
            f_below, math.asin(a), math.asin(hi) if hi < 1 else math.pi / 2,
            epsabs=epsabs, epsrel=epsrel, limit=500,
        )
        total += val
        err += e
    if b > 1:
        lo = max(a, 1.0)

        def f_above(s):
            u = math.cosh(s)
            q = math.sinh(s)
            if q == 0.0:
                q = 1e-300
            return float(_spectrum(stack, orientation, np.array([u]), np.array([1j * q]))[0]) * q

        val, e = integrate.quad(
            f_above, math.acosh(lo), math.acosh(b), epsabs=epsabs, epsrel=epsrel, limit=500
        )
        total += val
        err += e
    return total, err


def _integrate_range(stack, orientation, a, b, epsabs, epsrel):
    pts = [a] + [p for p in _breakpoints(stack, b) if a < p < b] + [b]
    total = err = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        v, e = _integrate(stack, orientation, lo, hi, epsabs, epsrel)
        total += v
        err += e
    return total, err


def purcell_planar(stack: PlanarStack, orientation, u_max=None, epsrel=1e-9, full_output=False):
    """Purcell factor of a dipole in the planar stack, relative to bulk gap medium.

    Returns ``F`` or, with ``full_output``, ``(F, error_estimate)``.
    Raises :class:`AccuracyError` when the quadrature error estimate exceeds
    ``max(1e-6, 1e3 * epsrel) * F``.
    """
    _check_orientation(orientation)
    u_max = default_u_max(stack) if u_max is None else float(u_max)
    F, err = _integrate_range(stack, orientation, 0.0, u_max, epsabs=0.0, epsrel=epsrel)
    if not np.isfinite(F) or err > max(1e-6, 1e3 * epsrel) * abs(F):
        raise AccuracyError(
            f"Purcell quadrature did not converge: F={F:.6g} +- {err:.3g}", estimate=F, error=err
        )
    return (F, err) if full_output else F


def default_partition(stack: PlanarStack):
    """Photon/plasmon boundaries in ``u``.

    Photons: waves that can still propagate in the top half-space (capped at
    the gap light line). Plasmons: up to half a unit past the gap-mode index
    (or the single-interface plasmon when only one side is metallic).
    """
    n_gap = stack.n_gap.real
    n_top = np.sqrt(permittivity_at(stack.upper_halfspace, stack.wavelength)).real
    u_photon = min(1.0, n_top / n_gap)
    poles = guided_poles(stack)
    u_plasmon = (max(p.real for p in poles) if poles else max(1.0, u_photon)) + 0.5
    return u_photon, u_plasmon


def decay_channels(stack: PlanarStack, orientation, partition=None, u_max=None, epsrel=1e-9) -> ChannelSplit:
    """Split the total decay into photon, plasmon and quenching fractions."""
    _check_orientation(orientation)
    u_max = default_u_max(stack) if u_max is None else float(u_max)
    u_ph, u_pl = default_partition(stack) if partition is None else partition
    if not 0 < u_ph < u_pl:
        raise ValidationError(f"partition must satisfy 0 < u_photon < u_plasmon, got {u_ph}, {u_pl}")
    u_max = max(u_max, u_pl)
    photon, _ = _integrate_range(stack, orientation, 0.0, u_ph, 0.0, epsrel)
    plasmon, _ = _integrate_range(stack, orientation, u_ph, u_pl, 0.0, epsrel)
    quench, _ = _integrate_range(stack, orientation, u_pl, u_max, 0.0, epsrel)
    total = photon + plasmon + quench
    if not total > 0:
        raise AccuracyError("non-positive total decay rate", estimate=total)
    return ChannelSplit(photon / total, plasmon / total, quench / total, total)
