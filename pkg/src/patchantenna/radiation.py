"""Far-field patterns of the patch from a rim-scattering ring model.

The emitter launches the gap plasmon, which spreads cylindrically to the disk
edge and scatters there. The rim therefore acts as a ring source whose
complex amplitude at rim angle ``phi'`` is

    exp(i k0 n_eff rho) / sqrt(rho),    rho = |rim(phi') - emitter|,

with ``n_eff`` complex, so propagation loss is included. Only the vertical
dipole component feeds the ring.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .exceptions import ValidationError
from .gap_plasmon import GapPlasmonMode, patch_gap_mode
from .materials import AntennaGeometry, SILICA, permittivity_at

UNIT_INTEGRAL = "unit-integral"
UNIT_PEAK = "unit-peak"


@dataclass(frozen=True)
class RadiationPattern:
    theta: np.ndarray  # deg, [0, 90]
    phi: np.ndarray  # deg, uniform on [0, 360)
    intensity: np.ndarray  # shape (len(theta), len(phi))
    normalization: str = UNIT_INTEGRAL

    def solid_angle_integral(self):
        return _solid_angle_integral(self.theta, self.phi, self.intensity)


@dataclass(frozen=True)
class ClusterSpec:
    radius: float  # nm
    height: float  # nm
    center_offset: float = 0.0  # nm, along phi = 0
    sample_counts: tuple = (6, 16, 3)

    def __post_init__(self):
        if self.radius < 0 or self.height < 0 or self.center_offset < 0:
            raise ValidationError("cluster radius, height and offset must be >= 0")
        if len(self.sample_counts) != 3 or min(self.sample_counts) < 1:
            raise ValidationError("sample_counts must be three positive integers")


@dataclass(frozen=True)
class LobeMetrics:
    peak_direction: tuple  # (theta, phi) deg
    null_to_null_width: float  # deg
    peak_to_sidelobe_ratio: float
    no_lobe: bool = False


def angle_grid(theta_step=0.5, phi_step=2.0):
    theta = np.linspace(0.0, 90.0, int(round(90.0 / theta_step)) + 1)
    nphi = int(round(360.0 / phi_step))
    phi = np.arange(nphi) * (360.0 / nphi)
    return theta, phi


def _solid_angle_integral(theta, phi, intensity):
    th = np.radians(theta)
    per_theta = intensity.sum(axis=1) * (2 * math.pi / len(phi))
    return float(integrate.trapezoid(per_theta * np.sin(th), th))


def _normalize(theta, phi, intensity, normalization):
    if normalization == UNIT_INTEGRAL:
        total = _solid_angle_integral(theta, phi, intensity)
    elif normalization == UNIT_PEAK:
        total = float(intensity.max())
    else:
        raise ValidationError(f"unknown normalization {normalization!r}")
    if not total > 0:
        raise ValidationError("pattern carries no power")
    return intensity / total


def rim_sample_count(geom: AntennaGeometry, mode: GapPlasmonMode, per_wavelength=16):
    """Uniform rim samples giving at least ``per_wavelength`` per plasmon wavelength."""
    rim = 2 * math.pi * geom.disk_radius / mode.plasmon_wavelength
    n = max(64, int(math.ceil(per_wavelength * rim)))
    return n + (n % 2)


def _ring_amplitude(geom, mode, position, n_rim):
    R = geom.disk_radius
    k0 = 2 * math.pi / geom.emission_wavelength
    phi_rim = 2 * math.pi * np.arange(n_rim) / n_rim
    dx = R * np.cos(phi_rim) - position[0]
    dy = R * np.sin(phi_rim) - position[1]
    rho = np.hypot(dx, dy)
    return np.exp(1j * k0 * mode.n_eff * rho) / np.sqrt(rho)


def _ring_field(geom, mode, position, theta, phi, n_rim):
    """Far field of the ring source, ``E(theta, phi) = <A(phi') exp(i x cos(phi' - phi))>``.

    The rim average uses ``n_rim`` uniform samples; the angular kernel is
    expanded in Bessel harmonics, which is exact for the sampled source.
    """
    A = _ring_amplitude(geom, mode, position, n_rim)
    m = np.fft.fftfreq(n_rim, d=1.0 / n_rim).astype(int)
    # c_m = <A e^{i m phi'}>
    c = np.fft.ifft(A)
    x = 2 * math.pi / geom.emission_wavelength * geom.disk_radius * np.sin(np.radians(theta))
    J = special.jv(m[None, :], x[:, None]) * (1j ** (m % 4))[None, :]
    harmonics = np.exp(-1j * np.outer(m, np.radians(phi)))
    return (J * c[None, :]) @ harmonics


def _element(theta, element_factor):
    if element_factor in (None, "1", 1):
        return 1.0
    if element_factor == "cos":
        return np.cos(np.radians(theta))[:, None]
    raise ValidationError(f"element_factor must be 1 or 'cos', got {element_factor!r}")


def rim_far_field(
    geom: AntennaGeometry,
    offset: float = 0.0,
    mode: GapPlasmonMode = None,
    theta=None,
    phi=None,
    normalization=UNIT_INTEGRAL,
    element_factor=1,
) -> RadiationPattern:
    """Pattern of a point emitter displaced ``offset`` nm from the disk center along phi = 0."""
    if not 0 <= offset < geom.disk_radius:
        raise ValidationError(f"offset must satisfy 0 <= s < R={geom.disk_radius}, got {offset}")
    mode = mode or patch_gap_mode(geom)
    if theta is None or phi is None:
        theta, phi = angle_grid()
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    E = _ring_field(geom, mode, (offset, 0.0), theta, phi, rim_sample_count(geom, mode))
    I = np.abs(E) ** 2 * _element(theta, element_factor)
    return RadiationPattern(theta, phi, _normalize(theta, phi, I, normalization), normalization)


def cluster_positions(cluster: ClusterSpec, geom: AntennaGeometry):
    """Equal-weight lattice filling the cluster cylinder; returns (xy, z)."""
    nr, na, nz = cluster.sample_counts
    xy = []
    for i in range(nr):
        r = cluster.radius * math.sqrt((i + 0.5) / nr)
        for k in range(na):
            a = 2 * math.pi * (k + 0.5 * (i % 2)) / na
            xy.append((cluster.center_offset + r * math.cos(a), r * math.sin(a)))
    z = geom.emitter_height + cluster.height * ((np.arange(nz) + 0.5) / nz - 0.5)
    return np.array(xy), z


def _launch_weights(z, geom, mode):
    """|E_z|^2 of the symmetric gap mode across the spacer."""
    k0 = 2 * math.pi / geom.emission_wavelength
    kd = k0 * np.sqrt(mode.n_eff**2 - permittivity_at(SILICA, geom.emission_wavelength))
    return np.abs(np.cosh(kd * (z - geom.spacer_thickness / 2))) ** 2


def cluster_pattern(
    geom: AntennaGeometry,
    cluster: ClusterSpec,
    mode: GapPlasmonMode = None,
    theta=None,
    phi=None,
    element_factor=1,
) -> RadiationPattern:
    """Incoherent average of point patterns over a uniformly filled cylinder."""
    if cluster.center_offset + cluster.radius >= geom.disk_radius:
        raise ValidationError("cluster does not fit under the disk")
    half = cluster.height / 2
    if geom.emitter_height - half <= 0 or geom.emitter_height + half >= geom.spacer_thickness:
        raise ValidationError("cluster height exceeds the spacer")
    xy, z = cluster_positions(cluster, geom)
    mode = mode or patch_gap_mode(geom)
    if theta is None or phi is None:
        theta, phi = angle_grid()
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    n_rim = rim_sample_count(geom, mode)
    lateral = np.zeros((theta.size, phi.size))
    for p in xy:
        lateral += np.abs(_ring_field(geom, mode, p, theta, phi, n_rim)) ** 2
    # launch efficiency varies with height only, so the vertical average factorizes
    I = lateral * _launch_weights(z, geom, mode).sum() * _element(theta, element_factor)
    return RadiationPattern(theta, phi, _normalize(theta, phi, I, UNIT_INTEGRAL), UNIT_INTEGRAL)


def _local_extremum_offset(y, i):
    """Parabolic vertex offset (in samples) around interior index ``i``."""
    denom = y[i - 1] - 2 * y[i] + y[i + 1]
    if denom == 0:
        return 0.0
    return float(np.clip(0.5 * (y[i - 1] - y[i + 1]) / denom, -0.5, 0.5))


def lobe_metrics(pattern: RadiationPattern) -> LobeMetrics:
    """Main-lobe direction, null-to-null width and side-lobe ratio.

    The width is measured along the great-circle cut through the peak and the
    zenith (the peak's phi half-plane joined with the opposite one). Minima
    and the peak are refined by parabolic interpolation.
    """
    theta, phi, I = pattern.theta, pattern.phi, pattern.intensity
    step = np.diff(theta)
    if np.any(step > 1.0 + 1e-12):
        raise ValidationError("lobe metrics need theta resolution <= 1 deg")
    it, ip = np.unravel_index(np.argmax(I), I.shape)
    opp = int(np.argmin(np.minimum((phi - phi[ip] - 180.0) % 360.0, (phi[ip] + 180.0 - phi) % 360.0)))
    angle = np.concatenate([-theta[:0:-1], theta])
    cut = np.concatenate([I[:0:-1, opp], I[:, ip]])
    k = len(theta) - 1 + it
    if it == 0:
        k = int(np.argmax(cut))

    left = k
    while left > 0 and cut[left - 1] <= cut[left]:
        left -= 1
    right = k
    while right < len(cut) - 1 and cut[right + 1] <= cut[right]:
        right += 1
    no_lobe = left == 0 or right == len(cut) - 1 or np.ptp(cut) <= 1e-12 * abs(cut).max()
    d_ang = angle[1] - angle[0]
    if no_lobe:
        width = float(angle[-1] - angle[0])
    else:
        lo = angle[left] + _local_extremum_offset(cut, left) * d_ang
        hi = angle[right] + _local_extremum_offset(cut, right) * d_ang
        width = float(hi - lo)

    peak_theta = theta[it]
    if 0 < it < len(theta) - 1:
        peak_theta = theta[it] + _local_extremum_offset(I[:, ip], it) * (theta[1] - theta[0])
    side = [
        cut[j]
        for j in range(1, len(cut) - 1)
        if (j < left or j > right) and cut[j - 1] < cut[j] >= cut[j + 1]
    ]
    ratio = float(cut[k] / max(side)) if side and max(side) > 0 else math.inf
    return LobeMetrics((float(peak_theta), float(phi[ip])), width, ratio, bool(no_lobe))
