"""Optical constants and geometry of the gold / silica / gold patch stack.

Time convention: fields vary as ``exp(-i omega t)``, so passive media have
``Im(eps) >= 0``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ValidationError, WavelengthRangeError

SPEED_OF_LIGHT = 299_792_458.0  # m/s

CONSTANT_INDEX = "constant-index"
TABULATED_METAL = "tabulated-metal"
DRUDE_METAL = "drude-metal"


@dataclass(frozen=True, eq=False)
class Material:
    """A dispersive (or not) isotropic medium.

    Build instances with :meth:`constant`, :meth:`tabulated`, :meth:`drude` or
    :meth:`from_csv` rather than calling the constructor directly.
    """

    kind: str
    name: str = ""
    index: complex = 1.0
    wavelengths: np.ndarray = field(default=None, repr=False)
    eps_table: np.ndarray = field(default=None, repr=False)
    eps_inf: float = 1.0
    plasma_wavelength: float = 0.0
    damping: float = 0.0

    def __post_init__(self):
        if self.kind == TABULATED_METAL:
            wl = np.asarray(self.wavelengths, dtype=float)
            eps = np.asarray(self.eps_table, dtype=complex)
            if wl.ndim != 1 or wl.shape != eps.shape or wl.size < 2:
                raise ValidationError("table needs matching 1-D wavelength/permittivity columns")
            if np.any(np.diff(wl) <= 0):
                raise ValidationError("tabulated wavelengths must be strictly increasing")
            wl.flags.writeable = False
            eps.flags.writeable = False
            object.__setattr__(self, "wavelengths", wl)
            object.__setattr__(self, "eps_table", eps)
        elif self.kind == DRUDE_METAL:
            if self.plasma_wavelength <= 0 or self.damping < 0:
                raise ValidationError("Drude metal needs plasma_wavelength > 0 and damping >= 0")
        elif self.kind != CONSTANT_INDEX:
            raise ValidationError(f"unknown material kind {self.kind!r}")

    @classmethod
    def constant(cls, index, name=""):
        return cls(CONSTANT_INDEX, name=name, index=complex(index))

    @classmethod
    def tabulated(cls, wavelengths, eps, name=""):
        return cls(TABULATED_METAL, name=name, wavelengths=wavelengths, eps_table=eps)

    @classmethod
    def drude(cls, eps_inf, plasma_wavelength, damping, name=""):
        """Drude metal; ``plasma_wavelength`` in nm, ``damping`` in s^-1."""
        return cls(
            DRUDE_METAL,
            name=name,
            eps_inf=float(eps_inf),
            plasma_wavelength=float(plasma_wavelength),
            damping=float(damping),
        )

    @classmethod
    def from_csv(cls, path, name=None):
        """Read a ``wavelength_nm, eps_re, eps_im`` table (header row required)."""
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["wavelength_nm", "eps_re", "eps_im"]:
            raise ValidationError(f"{path}: expected header 'wavelength_nm,eps_re,eps_im'")
        data = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                data.append([float(c) for c in row])
            except ValueError:
                raise ValidationError(f"{path}: line {lineno}: not numeric: {row!r}") from None
            if len(data[-1]) != 3:
                raise ValidationError(f"{path}: line {lineno}: expected 3 columns")
        arr = np.array(data)
        return cls.tabulated(arr[:, 0], arr[:, 1] + 1j * arr[:, 2], name=name or path.stem)

    @property
    def wavelength_range(self):
        if self.kind == TABULATED_METAL:
            return float(self.wavelengths[0]), float(self.wavelengths[-1])
        return 0.0, math.inf

    def __eq__(self, other):
        if not isinstance(other, Material) or self.kind != other.kind:
            return NotImplemented if not isinstance(other, Material) else False
        if self.kind == CONSTANT_INDEX:
            return self.index == other.index
        if self.kind == DRUDE_METAL:
            return (self.eps_inf, self.plasma_wavelength, self.damping) == (
                other.eps_inf,
                other.plasma_wavelength,
                other.damping,
            )
        return np.array_equal(self.wavelengths, other.wavelengths) and np.array_equal(
            self.eps_table, other.eps_table
        )

    def __hash__(self):
        return hash((self.kind, self.name))


def permittivity_at(material: Material, wavelength: float) -> complex:
    """Relative permittivity of ``material`` at vacuum ``wavelength`` (nm).

    Tabulated materials are interpolated linearly in wavelength, real and
    imaginary parts separately; queries outside the table raise
    :class:`WavelengthRangeError`.
    """
    if material.kind == CONSTANT_INDEX:
        return complex(material.index) ** 2
    if material.kind == DRUDE_METAL:
        omega = 2 * math.pi * SPEED_OF_LIGHT / (wavelength * 1e-9)
        omega_p = 2 * math.pi * SPEED_OF_LIGHT / (material.plasma_wavelength * 1e-9)
        return material.eps_inf - omega_p**2 / (omega * (omega + 1j * material.damping))
    lo, hi = material.wavelength_range
    if not lo <= wavelength <= hi:
        raise WavelengthRangeError(wavelength, lo, hi)
    wl = material.wavelengths
    re = np.interp(wavelength, wl, material.eps_table.real)
    im = np.interp(wavelength, wl, material.eps_table.imag)
    return complex(re, im)


def _bundled(filename, name):
    with resources.as_file(resources.files("patchantenna") / "data" / filename) as p:
        return Material.from_csv(p, name=name)


# Johnson & Christy (1972) evaporated-film gold
GOLD = _bundled("gold_johnson_christy.csv", "gold")
# rounded room-temperature crystalline silicon; only ever seen through 200 nm of gold
SILICON = _bundled("silicon.csv", "silicon")
SILICA = Material.constant(1.5, name="silica")
AIR = Material.constant(1.0, name="air")
# fallback when the table does not cover the query range
GOLD_DRUDE = Material.drude(eps_inf=9.84, plasma_wavelength=137.0, damping=1.0e14, name="gold-drude")


@dataclass(frozen=True)
class Layer:
    material: Material
    thickness: float  # nm

    def __post_init__(self):
        if not (math.isfinite(self.thickness) and self.thickness > 0):
            raise ValidationError(f"layer thickness must be finite and > 0, got {self.thickness}")


@dataclass(frozen=True)
class HalfStack:
    """Multilayer seen from the emitter gap looking outward.

    ``layers`` are ordered from the gap outward and terminated by the
    semi-infinite ``substrate``.
    """

    incident: Material
    layers: tuple = ()
    substrate: Material = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.substrate is None:
            object.__setattr__(self, "substrate", self.incident)

    @property
    def is_trivial(self):
        """True when there is no interface at all (gap material all the way)."""
        return all(l.material == self.incident for l in self.layers) and self.substrate == self.incident

    @property
    def facing_material(self):
        """The first medium met when leaving the gap."""
        return self.layers[0].material if self.layers else self.substrate


@dataclass(frozen=True)
class PlanarStack:
    lower_halfspace: Material
    lower_layers: tuple
    emitter_gap_material: Material
    d_lower: float
    d_upper: float
    upper_layers: tuple
    upper_halfspace: Material
    wavelength: float = 630.0

    def __post_init__(self):
        object.__setattr__(self, "lower_layers", tuple(self.lower_layers))
        object.__setattr__(self, "upper_layers", tuple(self.upper_layers))
        for name in ("d_lower", "d_upper", "wavelength"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be finite and > 0, got {v}")

    @property
    def lower(self) -> HalfStack:
        """Half-stack below the emitter; ``lower_layers`` are listed gap-outward."""
        return HalfStack(self.emitter_gap_material, self.lower_layers, self.lower_halfspace)

    @property
    def upper(self) -> HalfStack:
        return HalfStack(self.emitter_gap_material, self.upper_layers, self.upper_halfspace)

    @property
    def n_gap(self) -> complex:
        return np.sqrt(permittivity_at(self.emitter_gap_material, self.wavelength))

    def flipped(self) -> "PlanarStack":
        """The same structure turned upside down."""
        return PlanarStack(
            self.upper_halfspace,
            self.upper_layers,
            self.emitter_gap_material,
            self.d_upper,
            self.d_lower,
            self.lower_layers,
            self.lower_halfspace,
            self.wavelength,
        )

    @classmethod
    def homogeneous(cls, material, wavelength=630.0, d=15.0):
        return cls(material, (), material, d, d, (), material, wavelength)

    @classmethod
    def single_interface(cls, metal, gap, distance, wavelength=630.0):
        """Emitter in ``gap`` at ``distance`` above a semi-infinite ``metal``."""
        return cls(metal, (), gap, distance, distance, (), gap, wavelength)


@dataclass(frozen=True)
class AntennaGeometry:
    """Patch-antenna dimensions in nm."""

    disk_diameter: float = 1600.0
    disk_thickness: float = 20.0
    spacer_thickness: float = 30.0
    bottom_gold_thickness: float = 200.0
    emitter_height: float = 15.0
    emission_wavelength: float = 630.0

    def __post_init__(self):
        for name in (
            "disk_diameter",
            "disk_thickness",
            "spacer_thickness",
            "bottom_gold_thickness",
            "emission_wavelength",
        ):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be finite and > 0, got {v}")
        if not 0 < self.emitter_height < self.spacer_thickness:
            raise ValidationError(
                f"emitter_height must lie strictly inside the spacer (0, {self.spacer_thickness}), "
                f"got {self.emitter_height}"
            )

    @property
    def disk_radius(self):
        return self.disk_diameter / 2


def build_patch_stack(
    geom: AntennaGeometry,
    metal: Material = GOLD,
    spacer: Material = SILICA,
    substrate: Material = SILICON,
    superstrate: Material = AIR,
) -> PlanarStack:
    """Infinite-disk limit of the patch: substrate / gold / spacer / gold disk / air."""
    if not isinstance(geom, AntennaGeometry):
        raise ValidationError("geom must be an AntennaGeometry")
    return PlanarStack(
        lower_halfspace=substrate,
        lower_layers=(Layer(metal, geom.bottom_gold_thickness),),
        emitter_gap_material=spacer,
        d_lower=geom.emitter_height,
        d_upper=geom.spacer_thickness - geom.emitter_height,
        upper_layers=(Layer(metal, geom.disk_thickness),),
        upper_halfspace=superstrate,
        wavelength=geom.emission_wavelength,
    )


def bundled_materials() -> Sequence[Material]:
    return (GOLD, SILICON, SILICA, AIR)
