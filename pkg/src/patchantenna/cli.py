"""Command-line front end.

Every command reads one flat JSON config, writes CSV/JSON artifacts to the
output directory and finishes with ``manifest.json`` (content digests, wall
time, version). Exit codes: 0 success, 2 invalid input, 3 numerical failure
or a fit that did not converge.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .decay_stats import PurcellPair, RateEnsemble
from .exceptions import NumericalError, PatchAntennaError, ValidationError
from .histogram import DecayHistogram, format_float, histogram_to_csv, read_histogram

COMMANDS = (
    "purcell-planar",
    "quench-sweep",
    "gap-mode",
    "purcell-vs-diameter",
    "pattern",
    "synth-decay",
    "fit-decay",
    "sweep",
)
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
MANIFEST = "manifest.json"

# command-specific options and their defaults
OPTION_DEFAULTS = {
    "orientation": "perp",
    "u_points": 2001,
    "u_max": None,
    "u_plot_max": 5.0,
    "distances": [1, 2, 3, 4, 5, 6, 7, 8, 10, 12, 15],
    "wavelengths": [630.0],
    "gaps": [30.0],
    "diameters": None,
    "fabry_perot": {},
    "offset": 0.0,
    "cluster": None,
    "element_factor": 1,
    "theta_step": 0.5,
    "phi_step": 2.0,
    "total_counts": 1_000_000,
    "bin_width": 0.25,
    "window": 400.0,
    "irf_fwhm": 0.5,
    "background": 0.0,
    "fit": None,
    "input": None,
    "fit_background": True,
    "workers": 1,
}
DEFAULT_DIAMETERS = {
    "purcell-vs-diameter": list(np.arange(500.0, 2500.0 + 1e-9, 5.0)),
    "sweep": [1400.0, 1500.0, 1600.0, 1700.0, 1800.0, 1900.0, 2000.0, 2100.0],
}


def _from_mapping(cls, data, name):
    if data is None:
        return None
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ValidationError(f"{name}: expected an object, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"{name}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ValidationError(f"{name}: {exc}") from None


@dataclass
class RunConfig:
    command: str
    geometry: object = None
    ensemble: RateEnsemble = field(default_factory=RateEnsemble)
    fp: PurcellPair | None = None
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    output_dir: str = "out"
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        from .materials import AntennaGeometry

        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        data = dict(data)
        command = data.pop("command", None)
        if command not in COMMANDS:
            raise ValidationError(f"command: unknown command {command!r}")
        seed = data.pop("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ValidationError(f"seed: must be a non-negative integer, got {seed!r}")
        tolerances = data.pop("tolerances", {}) or {}
        if not isinstance(tolerances, dict) or not all(
            isinstance(v, (int, float)) for v in tolerances.values()
        ):
            raise ValidationError("tolerances: must map names to numbers")
        cfg = cls(
            command=command,
            geometry=_from_mapping(AntennaGeometry, data.pop("geometry", {}), "geometry"),
            ensemble=_from_mapping(RateEnsemble, data.pop("ensemble", {}), "ensemble"),
            fp=_from_mapping(PurcellPair, data.pop("fp", None), "fp"),
            seed=seed,
            tolerances=dict(tolerances),
            output_dir=str(data.pop("output_dir", "out")),
        )
        unknown = sorted(set(data) - set(OPTION_DEFAULTS))
        if unknown:
            raise ValidationError(f"unknown config field(s): {', '.join(unknown)}")
        cfg.options = data
        return cfg

    def option(self, name):
        if name in self.options:
            return self.options[name]
        if name == "diameters":
            return DEFAULT_DIAMETERS.get(self.command)
        return OPTION_DEFAULTS[name]

    def to_dict(self, with_output=False):
        """Config echo; the output directory is left out unless asked for."""
        doc = {
            "command": self.command,
            "geometry": dataclasses.asdict(self.geometry),
            "ensemble": dataclasses.asdict(self.ensemble),
            "fp": None if self.fp is None else dataclasses.asdict(self.fp),
            "seed": self.seed,
            "tolerances": dict(self.tolerances),
            **{k: self.options[k] for k in sorted(self.options)},
        }
        if with_output:
            doc["output_dir"] = self.output_dir
        return doc


def load_histogram(path, window=400.0) -> DecayHistogram:
    """Read a ``time_ns,counts`` CSV (uniform bins, integer counts)."""
    return read_histogram(path, window)


# ----------------------------------------------------------------- writers

def _json_default(obj):
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True) + "\n"


def _csv_text(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else format_float(v) for v in row))
    return "\n".join(lines) + "\n"


class _Writer:
    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def text(self, name, content):
        (self.dir / name).write_text(content)
        self.files.append(name)

    def csv(self, name, header, rows):
        self.text(name, _csv_text(header, rows))

    def json(self, name, obj):
        self.text(name, _json_text(obj))

    def manifest(self, config, wall_time, exit_code):
        files = [
            {"name": n, "sha256": hashlib.sha256((self.dir / n).read_bytes()).hexdigest()}
            for n in self.files
        ]
        doc = {
            "config": config,
            "files": files,
            "wall_time_s": wall_time,
            "version": __version__,
            "exit_code": exit_code,
        }
        (self.dir / MANIFEST).write_text(_json_text(doc))


def verify_manifest(out_dir) -> bool:
    """True when every digest in ``manifest.json`` matches the file on disk."""
    out_dir = Path(out_dir)
    doc = json.loads((out_dir / MANIFEST).read_text())
    return all(
        hashlib.sha256((out_dir / f["name"]).read_bytes()).hexdigest() == f["sha256"]
        for f in doc["files"]
    )


# ----------------------------------------------------------------- commands

def _epsrel(cfg):
    return float(cfg.tolerances.get("epsrel", 1e-9))


def _cmd_purcell_planar(cfg, w):
    from .layered import decay_channels, dissipation_spectrum
    from .materials import build_patch_stack

    stack = build_patch_stack(cfg.geometry)
    orientation = cfg.option("orientation")
    split = decay_channels(stack, orientation, u_max=cfg.option("u_max"), epsrel=_epsrel(cfg))
    u = np.linspace(0.0, float(cfg.option("u_plot_max")), int(cfg.option("u_points")))
    spec = dissipation_spectrum(stack, orientation, u)
    w.csv("spectrum.csv", ("u", "dFdu"), zip(spec.u_grid, spec.density))
    w.json("purcell.json", {"orientation": orientation, **dataclasses.asdict(split)})
    return EXIT_OK


def _cmd_quench_sweep(cfg, w):
    from .layered import decay_channels
    from .materials import build_patch_stack

    rows = []
    for d in cfg.option("distances"):
        geom = dataclasses.replace(cfg.geometry, emitter_height=float(d))
        s = decay_channels(build_patch_stack(geom), cfg.option("orientation"), epsrel=_epsrel(cfg))
        rows.append((float(d), s.total_purcell, s.photon_fraction, s.plasmon_fraction, s.quench_fraction))
    w.csv("quench_sweep.csv", ("distance_nm", "F", "photon", "plasmon", "quench"), rows)
    return EXIT_OK


def _cmd_gap_mode(cfg, w):
    from .gap_plasmon import solve_gap_mode

    rows, modes = [], []
    for lam in cfg.option("wavelengths"):
        for t in cfg.option("gaps"):
            m = solve_gap_mode(float(lam), float(t))
            rows.append((float(lam), float(t), m.n_eff.real, m.n_eff.imag, m.propagation_length, m.residual))
            modes.append({
                "wavelength_nm": m.wavelength,
                "gap_nm": m.gap_thickness,
                "n_eff": m.n_eff,
                "propagation_length_nm": m.propagation_length,
                "residual": m.residual,
            })
    w.json("gap_mode.json", {"modes": modes})
    w.csv(
        "gap_mode.csv",
        ("wavelength_nm", "gap_nm", "n_eff_re", "n_eff_im", "propagation_length_nm", "residual"),
        rows,
    )
    return EXIT_OK


def _fp_params(cfg):
    from .gap_plasmon import FabryPerotParams

    return _from_mapping(FabryPerotParams, cfg.option("fabry_perot"), "fabry_perot")


def _cmd_purcell_vs_diameter(cfg, w):
    from .gap_plasmon import purcell_vs_diameter

    curve = purcell_vs_diameter(cfg.geometry, cfg.option("diameters"), _fp_params(cfg))
    w.csv("purcell_vs_diameter.csv", ("D_nm", "F_perp", "F_par"),
          zip(curve.diameters, curve.F_perp, curve.F_par))
    return EXIT_OK


def _pattern(geom, cfg, mode=None):
    from .radiation import ClusterSpec, angle_grid, cluster_pattern, rim_far_field

    theta, phi = angle_grid(cfg.option("theta_step"), cfg.option("phi_step"))
    ef = cfg.option("element_factor")
    cluster = cfg.option("cluster")
    if cluster is not None:
        spec = dict(cluster)
        if "sample_counts" in spec:
            spec["sample_counts"] = tuple(spec["sample_counts"])
        return cluster_pattern(geom, _from_mapping(ClusterSpec, spec, "cluster"), mode, theta, phi, ef)
    return rim_far_field(geom, float(cfg.option("offset")), mode, theta, phi, element_factor=ef)


def _metrics_dict(m):
    return {
        "peak_theta_deg": m.peak_direction[0],
        "peak_phi_deg": m.peak_direction[1],
        "null_to_null_width_deg": m.null_to_null_width,
        "peak_to_sidelobe_ratio": m.peak_to_sidelobe_ratio,
        "no_lobe": m.no_lobe,
    }


def _cmd_pattern(cfg, w):
    from .radiation import lobe_metrics

    pat = _pattern(cfg.geometry, cfg)
    T, P = np.meshgrid(pat.theta, pat.phi, indexing="ij")
    w.csv("pattern.csv", ("theta_deg", "phi_deg", "intensity"),
          zip(T.ravel(), P.ravel(), pat.intensity.ravel()))
    w.json("pattern_metrics.json", _metrics_dict(lobe_metrics(pat)))
    return EXIT_OK


def _cmd_synth_decay(cfg, w):
    from .fitting import synthesize_histogram

    hist = synthesize_histogram(
        cfg.fp,
        cfg.ensemble,
        total_counts=float(cfg.option("total_counts")),
        seed=cfg.seed,
        bin_width=float(cfg.option("bin_width")),
        window=float(cfg.option("window")),
        irf_fwhm=float(cfg.option("irf_fwhm")),
        background=float(cfg.option("background")),
    )
    w.text("decay.csv", histogram_to_csv(hist))
    w.json("decay.json", {"kind": "reference" if cfg.fp is None else "antenna", "config": cfg.to_dict()})
    return EXIT_OK


def _cmd_fit_decay(cfg, w):
    from .fitting import fit_antenna, fit_reference

    kind = cfg.option("fit")
    if kind not in ("reference", "antenna"):
        raise ValidationError("fit: choose --reference or --antenna")
    path = cfg.option("input")
    if path is None:
        raise ValidationError("input: histogram CSV path is required")
    hist = load_histogram(path, float(cfg.option("window")))
    irf = float(cfg.option("irf_fwhm"))
    bg = bool(cfg.option("fit_background"))
    if kind == "reference":
        res = fit_reference(hist, irf, bg)
    else:
        res = fit_antenna(hist, cfg.ensemble, irf, bg)
    w.json("fit.json", {**res.to_dict(), "kind": kind, "seed": cfg.seed, "config": cfg.to_dict()})
    return EXIT_OK if res.converged else EXIT_NUMERIC


def _sweep_item(args):
    geom, diameter, fp_params, mode, cfg = args
    from .gap_plasmon import purcell_vs_diameter
    from .radiation import lobe_metrics

    g = dataclasses.replace(geom, disk_diameter=float(diameter))
    curve = purcell_vs_diameter(g, [float(diameter)], fp_params, mode)
    m = lobe_metrics(_pattern(g, cfg, mode))
    return (float(diameter), float(curve.F_perp[0]), float(curve.F_par[0]),
            m.null_to_null_width, m.peak_to_sidelobe_ratio, m.peak_direction[0])


def _cmd_sweep(cfg, w):
    from .gap_plasmon import patch_gap_mode
    from .layered import purcell_planar
    from .materials import build_patch_stack

    params = _fp_params(cfg)
    if params.planar_baseline is None:
        base = purcell_planar(build_patch_stack(cfg.geometry), "perp", epsrel=_epsrel(cfg))
        params = dataclasses.replace(params, planar_baseline=base)
    # the gap mode does not depend on the diameter
    mode = patch_gap_mode(cfg.geometry)
    items = [(cfg.geometry, d, params, mode, cfg) for d in cfg.option("diameters")]
    workers = int(cfg.option("workers"))
    if workers < 1:
        raise ValidationError("workers: must be >= 1")
    if workers == 1:
        rows = [_sweep_item(it) for it in items]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_item, items))
    w.csv(
        "sweep.csv",
        ("diameter_nm", "F_perp", "F_par", "width_deg", "peak_to_sidelobe", "peak_theta_deg"),
        rows,
    )
    return EXIT_OK


HANDLERS = {
    "purcell-planar": _cmd_purcell_planar,
    "quench-sweep": _cmd_quench_sweep,
    "gap-mode": _cmd_gap_mode,
    "purcell-vs-diameter": _cmd_purcell_vs_diameter,
    "pattern": _cmd_pattern,
    "synth-decay": _cmd_synth_decay,
    "fit-decay": _cmd_fit_decay,
    "sweep": _cmd_sweep,
}


def run(config) -> int:
    """Execute one command; returns the exit code. Errors go to stderr."""
    t0 = time.perf_counter()
    try:
        cfg = config if isinstance(config, RunConfig) else RunConfig.from_dict(config)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    w = _Writer(cfg.output_dir)
    try:
        code = HANDLERS[cfg.command](cfg, w)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except (PatchAntennaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INVALID
    w.manifest(cfg.to_dict(with_output=True), time.perf_counter() - t0, code)
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="patchantenna", description="Patch-antenna emission toolkit.")
    p.add_argument("command", nargs="?", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--workers", type=int, help="worker processes for sweep")
    p.add_argument("--input", help="histogram CSV for fit-decay")
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--reference", dest="fit", action="store_const", const="reference",
                      help="fit-decay: fit (gamma_c, w_c) to a silica reference decay")
    kind.add_argument("--antenna", dest="fit", action="store_const", const="antenna",
                      help="fit-decay: fit (F_perp, F_par) to an antenna decay")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: config: {exc}", file=sys.stderr)
            return EXIT_INVALID
        if not isinstance(data, dict):
            print("error: config must be a JSON object", file=sys.stderr)
            return EXIT_INVALID
    if args.command:
        data["command"] = args.command
    if data.get("command") not in COMMANDS:
        print(f"error: unknown command {data.get('command')!r}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    for key in ("seed", "workers", "input", "fit"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.out is not None:
        data["output_dir"] = args.out
    return run(data)


if __name__ == "__main__":
    sys.exit(main())
