"""Config-driven command line front end.

Usage: spinforge <spectrum|optimize|pseudopure|dephasing|sequence>
           --config cfg.json [--seed N] [--out DIR]

Every command is deterministic given (config, seed); reruns produce
byte-identical files.  CSV outputs carry a header row and the comment
line ``# spinforge <version> <command> <config-hash>``.  Exit codes:
0 success, 1 success with a numerical warning (for example a lineshape
fit above its residual threshold or a fidelity below target), 2 input
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys as _sys
import tempfile
from pathlib import Path

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import __version__, dephasing, lattice, protocol, spectra, targets
from .pulse import (
    EnsembleDistribution,
    GateTarget,
    OptimizerConfig,
    ShapedPulse,
    ensemble_fidelity,
    gate_fidelity,
    optimize_pulse,
    pulse_propagator,
    robustness_scan,
)
from .spincore import product_operator
from .spinsys import SpinSystem, malonic_system

EXIT_OK = 0
EXIT_WARN = 1
EXIT_INPUT = 2


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------- schemas

_RANGE = {
    "type": "object",
    "properties": {
        "min": {"type": "number"},
        "max": {"type": "number"},
        "points": {"type": "integer", "minimum": 1},
    },
    "required": ["min", "max", "points"],
    "additionalProperties": False,
}

_SYSTEM = {
    "oneOf": [
        {"const": "malonic"},
        {
            "type": "object",
            "properties": {"file": {"type": "string"}},
            "required": ["file"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"inline": {"type": "object"}},
            "required": ["inline"],
            "additionalProperties": False,
        },
    ]
}

_OUTPUTS = lambda keys: {
    "type": "object",
    "properties": {k: {"type": "string"} for k in keys},
    "additionalProperties": False,
}

SCHEMAS = {
    "spectrum": {
        "type": "object",
        "properties": {
            "schema": {"const": 1},
            "seed": {"type": "integer"},
            "system": _SYSTEM,
            "t2star_ms": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            "natural_abundance_eta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "grid_khz": _RANGE,
            "observed_file": {"type": "string"},
            "fit": {
                "type": "object",
                "properties": {
                    "frozen": {"type": "array", "items": {"type": "boolean"}},
                    "max_evaluations": {"type": "integer", "minimum": 1},
                    "residual_threshold": {"type": "number", "exclusiveMinimum": 0},
                },
                "additionalProperties": False,
            },
            "outputs": _OUTPUTS(["lines", "spectrum", "fit_report"]),
        },
        "required": ["schema", "system", "grid_khz"],
        "additionalProperties": False,
    },
    "optimize": {
        "type": "object",
        "properties": {
            "schema": {"const": 1},
            "seed": {"type": "integer"},
            "system": _SYSTEM,
            "target": {"type": "object"},
            "distribution": {"type": "object"},
            "optimizer": {
                "type": "object",
                "properties": {
                    "n_segments": {"type": "integer", "minimum": 1},
                    "total_duration_ms": {"type": "number", "exclusiveMinimum": 0},
                    "max_evaluations": {"type": "integer", "minimum": 0},
                    "restarts": {"type": "integer", "minimum": 1},
                    "convergence_tol": {"type": "number", "exclusiveMinimum": 0},
                    "target_fidelity": {"type": "number"},
                    "min_fidelity": {"type": "number"},
                },
                "required": ["n_segments", "total_duration_ms"],
                "additionalProperties": False,
            },
            "scan": {
                "type": "object",
                "properties": {"rf_scales": _RANGE, "offsets_khz": _RANGE},
                "additionalProperties": False,
            },
            "outputs": _OUTPUTS(["pulse", "trace", "scan", "summary"]),
        },
        "required": ["schema", "system", "target", "optimizer"],
        "additionalProperties": False,
    },
    "pseudopure": {
        "type": "object",
        "properties": {
            "schema": {"const": 1},
            "seed": {"type": "integer"},
            "system": _SYSTEM,
            "pulses": {
                "type": "object",
                "properties": {
                    "iiz_to_zzz": {},
                    "tqpp": {},
                },
                "required": ["iiz_to_zzz", "tqpp"],
                "additionalProperties": False,
            },
            "rf_scale": {"type": "number"},
            "zeeman_offset_khz": {"type": "number"},
            "cycle_steps": {"enum": [1, 6]},
            "t2star_ms": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            "grid_khz": _RANGE,
            "outputs": _OUTPUTS(["state", "report", "readout"]),
        },
        "required": ["schema", "system", "pulses"],
        "additionalProperties": False,
    },
    "dephasing": {
        "type": "object",
        "properties": {
            "schema": {"const": 1},
            "seed": {"type": "integer"},
            "source": {"type": "object"},
            "model": {"enum": ["exact", "literal"]},
            "times": {
                "type": "object",
                "properties": {
                    "points": {"type": "integer", "minimum": 16},
                    "span_ms": {"type": "number", "exclusiveMinimum": 0},
                },
                "additionalProperties": False,
            },
            "histogram": {
                "type": "object",
                "properties": {
                    "mode": {"enum": ["fig7_literal", "both_families"]},
                    "bins": {"type": "integer", "minimum": 8},
                },
                "additionalProperties": False,
            },
            "eta": {"type": "number"},
            "additivity": {
                "type": "object",
                "properties": {
                    "rates_1q_per_ms": {
                        "type": "array",
                        "items": {"type": "number", "exclusiveMinimum": 0},
                        "minItems": 3,
                        "maxItems": 3,
                    },
                    "n_samples": {"type": "integer", "minimum": 100},
                    "max_time_ms": {"type": "number", "exclusiveMinimum": 0},
                    "points": {"type": "integer", "minimum": 8},
                },
                "required": ["rates_1q_per_ms"],
                "additionalProperties": False,
            },
            "outputs": _OUTPUTS([
                "trace", "spectrum", "fit", "kraus_report", "additivity",
                "histogram_prefix", "summary",
            ]),
        },
        "required": ["schema", "source"],
        "additionalProperties": False,
    },
    "sequence": {
        "type": "object",
        "properties": {
            "schema": {"const": 1},
            "seed": {"type": "integer"},
            "system": _SYSTEM,
            "sequence": {"type": "object"},
            "initial": {"type": "object"},
            "observable": {"type": "object"},
            "coupling_form": {"enum": ["full", "heteronuclear"]},
            "total_times_ms": {
                "oneOf": [_RANGE, {"type": "array", "items": {"type": "number", "minimum": 0}}]
            },
            "outputs": _OUTPUTS(["decay", "fit"]),
        },
        "required": ["schema", "system", "sequence", "total_times_ms"],
        "additionalProperties": False,
    },
}


# ----------------------------------------------------------------- helpers

def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def _config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(canon).hexdigest()[:12]


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: Path, comment: str, header: list[str], rows) -> None:
    lines = [comment, ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (int, float, np.floating)) else str(v)
                              for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _load_config(path: str, command: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    schema = SCHEMAS[command]
    if jsonschema is not None:
        try:
            jsonschema.validate(doc, schema)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"{path}: schema violation at {where}: {exc.message}") from exc
    if doc.get("schema") != 1:
        raise ConfigError(f"{path}: unsupported schema version {doc.get('schema')!r}")
    return doc


def _threads_cap() -> int:
    raw = os.environ.get("SPINFORGE_THREADS")
    if raw is None:
        return 1
    try:
        val = int(raw)
    except ValueError:
        raise ConfigError(f"SPINFORGE_THREADS must be an integer, got {raw!r}")
    if val < 1:
        raise ConfigError(f"SPINFORGE_THREADS must be >= 1, got {val}")
    return val


def _build_system(spec) -> SpinSystem:
    if spec == "malonic":
        return malonic_system()
    if isinstance(spec, dict) and "file" in spec:
        try:
            with open(spec["file"], "r", encoding="utf-8") as fh:
                return SpinSystem.from_json(fh.read())
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load spin system from {spec['file']}: {exc}") from exc
    if isinstance(spec, dict) and "inline" in spec:
        try:
            return SpinSystem.from_json(json.dumps(spec["inline"]))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad inline spin system: {exc}") from exc
    raise ConfigError(f"unrecognized system spec {spec!r}")


def _range_grid(spec) -> np.ndarray:
    return np.linspace(spec["min"], spec["max"], int(spec["points"]))


def _lineshape_for(sys: SpinSystem, cfg: dict) -> spectra.LineshapeParams:
    if "t2star_ms" in cfg:
        vals = cfg["t2star_ms"]
        if len(vals) != sys.n_spins:
            raise ConfigError(f"t2star_ms needs {sys.n_spins} entries, got {len(vals)}")
        return spectra.LineshapeParams(tuple(vals))
    if sys.labels == ("C1", "C2", "Cm"):
        return spectra.malonic_lineshape()
    raise ConfigError("t2star_ms is required for non-builtin systems")


def _product_state(spec: dict, n_spins: int) -> np.ndarray:
    if "product" in spec:
        s = spec["product"]
        if len(s) != n_spins:
            raise ConfigError(f"product string {s!r} needs {n_spins} symbols")
        return product_operator(s)
    if spec.get("three_quantum"):
        return targets.three_quantum_operator(n_spins)
    raise ConfigError(f"unrecognized state spec {spec!r}")


def _build_target(spec: dict, sys: SpinSystem) -> GateTarget:
    if "unitary_file" in spec:
        try:
            with open(spec["unitary_file"], "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            u = np.array(doc["re"], dtype=float) + 1j * np.array(doc["im"], dtype=float)
            return GateTarget(u, name=doc.get("name", "custom"))
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load unitary from {spec['unitary_file']}: {exc}") from exc
    name = spec.get("name")
    n = sys.n_spins
    try:
        if name == "X90_all":
            return targets.x90_all(n)
        if name == "CNN":
            control = int(spec.get("control", 3))
            tgt = tuple(spec.get("targets", [1, 2]))
            return targets.cnn(control, tgt, n)
        if name == "SWAP":
            i, j = spec["spins"]
            return targets.swap(int(i), int(j), n)
        if name == "selective_90":
            return targets.selective_90(int(spec["spin"]), n)
        if name == "TQPP_completion":
            if n != 3:
                raise ConfigError("TQPP_completion is a 3-spin target")
            return targets.tqpp_completion()
        if name == "IIZ_to_ZZZ":
            if n != 3:
                raise ConfigError("IIZ_to_ZZZ is a 3-spin target")
            return targets.iiz_to_zzz()
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad target spec {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown target {name!r}")


# ----------------------------------------------------------------- commands

def cmd_spectrum(cfg: dict, out_dir: Path, comment: str) -> int:
    sysm = _build_system(cfg["system"])
    lineshape = _lineshape_for(sysm, cfg)
    lines = spectra.transition_spectrum(sysm)
    if "natural_abundance_eta" in cfg:
        lines = spectra.natural_abundance_overlay(sysm, cfg["natural_abundance_eta"], lines)
    grid = _range_grid(cfg["grid_khz"])
    amp = spectra.broaden(lines, lineshape, grid)

    outputs = cfg.get("outputs", {})
    _write_csv(out_dir / outputs.get("lines", "lines.csv"), comment,
               ["freq_khz", "intensity", "assignment"],
               [(ln.frequency, ln.intensity, ln.assignment) for ln in lines.lines])
    _write_csv(out_dir / outputs.get("spectrum", "spectrum.csv"), comment,
               ["freq_khz", "amplitude"], zip(grid, amp))

    status = EXIT_OK
    if "observed_file" in cfg:
        obs_grid, obs_amp = _read_xy_csv(Path(cfg["observed_file"]))
        fit_cfg = cfg.get("fit", {})
        frozen = fit_cfg.get("frozen")
        result = spectra.fit_spectrum(
            obs_grid, obs_amp, sysm, lineshape, frozen=frozen,
            max_evaluations=int(fit_cfg.get("max_evaluations", 20000)),
            residual_threshold=float(fit_cfg.get("residual_threshold", 0.1)),
        )
        report = {
            "params": {
                "nu_khz": [float(x) for x in result.system.nu],
                "d_khz": [[float(x) for x in row] for row in result.system.d],
                "t2star_ms": list(result.lineshape.t2star),
            },
            "frozen_mask": list(frozen) if frozen else None,
            "residual": result.residual,
            "n_evaluations": result.n_evaluations,
            "converged": result.converged,
        }
        _write_json(out_dir / outputs.get("fit_report", "fit_report.json"), report)
        if not result.converged:
            status = EXIT_WARN
    return status


def _read_xy_csv(path: Path):
    xs, ys = [], []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#") or line[0].isalpha():
                    continue
                parts = line.split(",")
                xs.append(float(parts[0]))
                ys.append(float(parts[1]))
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read spectrum file {path}: {exc}") from exc
    if len(xs) < 8:
        raise ConfigError(f"spectrum file {path} has too few rows")
    return np.array(xs), np.array(ys)


def cmd_optimize(cfg: dict, out_dir: Path, comment: str, seed: int | None) -> int:
    sysm = _build_system(cfg["system"])
    target = _build_target(cfg["target"], sysm)
    dist_cfg = cfg.get("distribution", {"type": "rf_binomial", "sigma": 0.06})
    if dist_cfg.get("type") == "rf_binomial":
        dist = EnsembleDistribution.rf_binomial(float(dist_cfg.get("sigma", 0.06)))
    elif dist_cfg.get("type") == "points":
        dist = EnsembleDistribution(tuple(tuple(p) for p in dist_cfg["points"]))
    elif dist_cfg.get("type") == "single":
        dist = EnsembleDistribution.single_point()
    else:
        raise ConfigError(f"unknown distribution {dist_cfg!r}")

    opt = cfg["optimizer"]
    config = OptimizerConfig(
        n_segments=int(opt["n_segments"]),
        total_duration_ms=float(opt["total_duration_ms"]),
        max_evaluations=int(opt.get("max_evaluations", 60000)),
        convergence_tol=float(opt.get("convergence_tol", 1e-5)),
        restarts=int(opt.get("restarts", 3)),
        seed=int(seed if seed is not None else cfg.get("seed", 0)),
        target_fidelity=opt.get("target_fidelity"),
    )
    pulse, trace = optimize_pulse(sysm, target, dist, config)
    nominal = gate_fidelity(target, pulse_propagator(sysm, pulse))
    ens = ensemble_fidelity(sysm, pulse, target, dist)

    outputs = cfg.get("outputs", {})
    _atomic_write(out_dir / outputs.get("pulse", "pulse.json"), pulse.to_json() + "\n")
    _write_csv(out_dir / outputs.get("trace", "trace.csv"), comment,
               ["evaluation", "best_fidelity"],
               [(i + 1, f) for i, f in enumerate(trace)])

    scan_summary = None
    if "scan" in cfg:
        scales = _range_grid(cfg["scan"].get("rf_scales", {"min": 1.0, "max": 1.0, "points": 1}))
        offsets = _range_grid(cfg["scan"].get("offsets_khz", {"min": 0.0, "max": 0.0, "points": 1}))
        grid = robustness_scan(sysm, pulse, target, scales, offsets)
        rows = [
            (scales[i], offsets[j], grid[i, j])
            for i in range(len(scales))
            for j in range(len(offsets))
        ]
        _write_csv(out_dir / outputs.get("scan", "scan.csv"), comment,
                   ["rf_scale", "offset_khz", "fidelity"], rows)
        scan_summary = {"min_fidelity": float(grid.min()), "max_fidelity": float(grid.max())}

    min_fid = opt.get("min_fidelity")
    warned = min_fid is not None and ens < float(min_fid)
    summary = {
        "target": target.name,
        "ensemble_fidelity": ens,
        "nominal_fidelity": nominal,
        "n_evaluations": len(trace),
        "n_segments": config.n_segments,
        "total_duration_ms": pulse.total_duration,
        "seed": config.seed,
        "scan": scan_summary,
        "status": "warning: fidelity below requested minimum" if warned else "ok",
    }
    _write_json(out_dir / outputs.get("summary", "summary.json"), summary)
    return EXIT_WARN if warned else EXIT_OK


def cmd_pseudopure(cfg: dict, out_dir: Path, comment: str) -> int:
    sysm = _build_system(cfg["system"])

    def gate_of(spec, ideal: GateTarget):
        if spec == "ideal":
            return ideal.unitary
        if isinstance(spec, dict) and "file" in spec:
            try:
                with open(spec["file"], "r", encoding="utf-8") as fh:
                    return ShapedPulse.from_json(fh.read())
            except (OSError, KeyError, ValueError) as exc:
                raise ConfigError(f"cannot load pulse from {spec['file']}: {exc}") from exc
        raise ConfigError(f"pulse spec must be 'ideal' or {{'file': ...}}, got {spec!r}")

    g1 = gate_of(cfg["pulses"]["iiz_to_zzz"], targets.iiz_to_zzz())
    g2 = gate_of(cfg["pulses"]["tqpp"], targets.tqpp_completion())
    rf_scale = float(cfg.get("rf_scale", 1.0))
    offset = float(cfg.get("zeeman_offset_khz", 0.0))

    if cfg.get("cycle_steps", 6) == 6:
        result = protocol.pseudopure_protocol(sysm, g1, g2, rf_scale, offset)
        rho = result.state
        corr = result.correlation
    else:
        # filtering disabled: single unfiltered scan of the same chain
        rho = product_operator("IIZ")
        u1 = g1 if isinstance(g1, np.ndarray) else pulse_propagator(sysm, g1, rf_scale, offset)
        rho = u1 @ rho @ u1.conj().T
        y90 = targets.y90_all(3).unitary
        rho = y90 @ rho @ y90.conj().T
        u2 = g2 if isinstance(g2, np.ndarray) else pulse_propagator(sysm, g2, rf_scale, offset)
        rho = u2 @ rho @ u2.conj().T
        corr = protocol.state_correlation(rho, targets.pseudopure_ideal_state())

    outputs = cfg.get("outputs", {})
    _write_json(out_dir / outputs.get("state", "state.json"), {
        "dim": rho.shape[0],
        "re": [[float(v) for v in row] for row in rho.real],
        "im": [[float(v) for v in row] for row in rho.imag],
    })

    lines = spectra.transition_spectrum(sysm, initial=rho)
    lineshape = _lineshape_for(sysm, cfg)
    grid = _range_grid(cfg.get("grid_khz", {"min": -8.0, "max": 8.0, "points": 2001}))
    amp = spectra.broaden(lines, lineshape, grid)
    _write_csv(out_dir / outputs.get("readout", "readout.csv"), comment,
               ["freq_khz", "amplitude"], zip(grid, amp))

    orders = protocol.coherence_decompose(rho)
    order_weights = {
        str(n): float(np.real(np.trace(c @ c.conj().T))) for n, c in orders.items()
    }
    _write_json(out_dir / outputs.get("report", "report.json"), {
        "state_correlation": corr,
        "cycle_steps": cfg.get("cycle_steps", 6),
        "coherence_order_weights": order_weights,
    })
    return EXIT_OK


def _dephasing_envs(cfg: dict):
    src = cfg["source"]
    kind = src.get("type")
    if kind == "explicit":
        envs = [dephasing.DipolarEnvironment(*map(float, e)) for e in src["environments"]]
        return envs, None
    if kind == "structure":
        required = {"type", "file", "reference_molecule", "reference_label"}
        unknown = set(src) - required - {"shells", "assignment", "reference_labels"}
        if unknown:
            raise ConfigError(f"unknown source keys {sorted(unknown)}")
        try:
            structure = lattice.load_structure(src["file"])
        except lattice.StructureFormatError as exc:
            raise ConfigError(str(exc)) from exc
        return None, structure
    raise ConfigError(f"source type must be 'explicit' or 'structure', got {kind!r}")


def cmd_dephasing(cfg: dict, out_dir: Path, comment: str, seed: int | None) -> int:
    outputs = cfg.get("outputs", {})
    model = cfg.get("model", "exact")
    status = EXIT_OK
    summary: dict = {"model": model}

    envs, structure = _dephasing_envs(cfg)
    if envs is not None:
        times_cfg = cfg.get("times", {})
        n_pts = int(times_cfg.get("points", 512))
        if "span_ms" in times_cfg:
            times = np.arange(n_pts) * (float(times_cfg["span_ms"]) / n_pts)
        else:
            times = dephasing.default_times(envs, n_pts)
        trace = dephasing.correlation_trace(envs, times, model=model)
        _write_csv(out_dir / outputs.get("trace", "fx_trace.csv"), comment,
                   ["t_ms", "re_fx", "im_fx"],
                   zip(trace.times, trace.values.real, trace.values.imag))
        freqs, dens = dephasing.spectrum_of_trace(trace)
        _write_csv(out_dir / outputs.get("spectrum", "fx_spectrum.csv"), comment,
                   ["freq_hz", "density"], zip(freqs * 1e3, dens))
        try:
            fit = dephasing.fit_lorentzian(freqs * 1e3, dens)
            fit_doc = {"fwhm_hz": fit.fwhm, "center_hz": fit.center,
                       "residual": fit.residual, "diverged": False}
        except dephasing.FitDivergence as exc:
            fit_doc = {"fwhm_hz": exc.fit.fwhm, "center_hz": exc.fit.center,
                       "residual": exc.fit.residual, "diverged": True}
            status = EXIT_WARN
        _write_json(out_dir / outputs.get("fit", "fx_fit.json"), fit_doc)

        report = dephasing.paper_vs_exact_report(envs, times[:: max(1, len(times) // 32)])
        _write_json(out_dir / outputs.get("kraus_report", "kraus_report.json"), report)
        summary["n_environments"] = len(envs)
        summary["kraus_report"] = report

    if structure is not None:
        src = cfg["source"]
        shells = int(src.get("shells", 1))
        hist_cfg = cfg.get("histogram", {})
        mode = hist_cfg.get("mode", lattice.FIG7_LITERAL)
        bins = int(hist_cfg.get("bins", 256))
        ref_mol = src["reference_molecule"]
        labels = src.get("reference_labels")
        if labels is None:
            labels = [src["reference_label"]]
        per_ref = {}
        prefix = outputs.get("histogram_prefix", "hist")
        for ref_label in labels:
            sites = lattice.enumerate_sites(structure, ref_mol, ref_label, shells=shells)
            mol_labels = sorted({s.label for s in sites})
            others = [l for l in mol_labels if l != ref_label]
            if len(others) != 2:
                raise ConfigError(
                    f"reference {ref_label!r} needs exactly two unlike site labels, found {others}")
            assignment = {others[0]: "alpha", others[1]: "beta", ref_label: "gamma"}
            if "assignment" in src and ref_label == src["reference_label"]:
                assignment = src["assignment"]
            hist2 = lattice.frequency_histogram(sites, assignment, mode=mode, bins=bins)
            hist1 = lattice.simulation_one_mode(sites, assignment, bins=bins, mode=mode)
            _write_csv(out_dir / f"{prefix}_{ref_label}.csv", comment,
                       ["freq_hz", "weight"], zip(hist2.centers, hist2.weights))
            entry = {"n_sites": len(sites),
                     "n_molecules": lattice.molecule_count(sites),
                     "mode": mode}
            for name, hist in (("simulation_2", hist2), ("simulation_1", hist1)):
                try:
                    fwhm, resid = lattice.histogram_fwhm(hist)
                    entry[name] = {"fwhm_hz": fwhm, "residual": resid, "diverged": False}
                except dephasing.FitDivergence as exc:
                    entry[name] = {"fwhm_hz": exc.fit.fwhm, "residual": exc.fit.residual,
                                   "diverged": True}
                    status = EXIT_WARN
            corrections = {"shell": lattice.shell_factor()}
            if "eta" in cfg:
                corrections["concentration"] = lattice.concentration_factor(float(cfg["eta"]))
            factor = corrections["shell"] * corrections.get("concentration", 1.0)
            for name in ("simulation_2", "simulation_1"):
                entry[name]["adjusted_fwhm_hz"] = entry[name]["fwhm_hz"] * factor
            entry["corrections"] = corrections
            per_ref[ref_label] = entry
        summary["references"] = per_ref

    if "additivity" in cfg:
        add = cfg["additivity"]
        rates = tuple(float(r) for r in add["rates_1q_per_ms"])
        max_t = float(add.get("max_time_ms", 0.8 / sum(rates)))
        pts = int(add.get("points", 64))
        times = np.linspace(0.0, max_t, pts)
        result = dephasing.tq_rate_additivity(
            rates, times, n_samples=int(add.get("n_samples", 10000)),
            seed=int(seed if seed is not None else cfg.get("seed", 0)))
        predicted_time = 1.0 / sum(rates)
        doc = {
            "input_rates_1q_per_ms": list(rates),
            "fitted_rates_1q_per_ms": list(result.rates_1q),
            "rate_3q_per_ms": result.rate_3q,
            "ratio_3q_over_sum_1q": result.ratio,
            "predicted_3q_time_ms": predicted_time,
        }
        _write_json(out_dir / outputs.get("additivity", "additivity.json"), doc)
        summary["additivity"] = doc

    _write_json(out_dir / outputs.get("summary", "dephasing_summary.json"), summary)
    return status


def _parse_elements(spec_list, n_spins: int):
    elements = []
    for i, el in enumerate(spec_list):
        kind = el.get("type")
        if kind == "delay":
            elements.append(protocol.Delay(float(el["duration_ms"])))
        elif kind == "pulse":
            spins = tuple(int(s) for s in el["spins"]) if "spins" in el else None
            angle = float(el.get("angle_deg", 90.0)) * np.pi / 180.0
            elements.append(protocol.IdealPulse(str(el["axis"]).upper(), angle, spins))
        elif kind == "shaped":
            try:
                with open(el["file"], "r", encoding="utf-8") as fh:
                    pulse = ShapedPulse.from_json(fh.read())
            except (OSError, KeyError, ValueError) as exc:
                raise ConfigError(f"element {i}: cannot load pulse: {exc}") from exc
            elements.append(protocol.ShapedPulseRef(
                pulse, float(el.get("rf_scale", 1.0)), float(el.get("offset_khz", 0.0))))
        else:
            raise ConfigError(f"element {i}: unknown type {kind!r}")
    return elements


def cmd_sequence(cfg: dict, out_dir: Path, comment: str) -> int:
    sysm = _build_system(cfg["system"])
    form = cfg.get("coupling_form", "full")
    rho0 = _product_state(cfg.get("initial", {"product": "X" + "I" * (sysm.n_spins - 1)}),
                          sysm.n_spins)
    obs = _product_state(cfg["observable"], sysm.n_spins) if "observable" in cfg else rho0
    norm0 = float(np.real(np.trace(rho0 @ obs)))
    if norm0 == 0:
        raise ConfigError("initial state has no overlap with the observable")

    times_spec = cfg["total_times_ms"]
    times = (_range_grid(times_spec) if isinstance(times_spec, dict)
             else np.array([float(t) for t in times_spec]))

    seq = cfg["sequence"]
    kind = seq.get("type")

    def elements_for(total: float):
        if kind == "hahn":
            return protocol.hahn_echo_elements(total)
        if kind == "mrev8_hahn":
            tau = float(seq["tau_ms"])
            cycle = 12.0 * tau
            n_cycles = max(2, 2 * int(round(total / (2 * cycle))))
            half = [e for _ in range(n_cycles // 2)
                    for e in protocol.mrev8_cycle_elements(tau)]
            return half + [protocol.IdealPulse("Y", np.pi)] + half
        if kind == "mrev8":
            tau = float(seq["tau_ms"])
            cycle = 12.0 * tau
            n_cycles = max(1, int(round(total / cycle)))
            return [e for _ in range(n_cycles)
                    for e in protocol.mrev8_cycle_elements(tau)]
        if kind == "free":
            return [protocol.Delay(total)]
        if kind == "custom":
            base = _parse_elements(seq["elements"], sysm.n_spins)
            repeats = max(1, int(round(total)))
            return [e for _ in range(repeats) for e in base]
        raise ConfigError(f"unknown sequence type {kind!r}")

    def actual_time(elements):
        return sum(e.duration for e in elements if isinstance(e, protocol.Delay))

    rows = []
    signals = []
    tvals = []
    for total in times:
        els = elements_for(float(total))
        rho_t = protocol.run_sequence(sysm, els, rho0, coupling_form=form)
        signal = float(np.real(np.trace(rho_t @ obs))) / norm0
        t_act = actual_time(els)
        rows.append((t_act, signal))
        tvals.append(t_act)
        signals.append(signal)

    outputs = cfg.get("outputs", {})
    _write_csv(out_dir / outputs.get("decay", "decay.csv"), comment,
               ["t_ms", "signal"], rows)

    tarr = np.array(tvals)
    sarr = np.array(signals)
    try:
        rate = dephasing.fit_exponential_rate(tarr, sarr.astype(complex), floor=0.05)
        fit_doc = {"rate_per_ms": rate,
                   "time_constant_ms": (1.0 / rate) if rate > 0 else None,
                   "diverged": False}
    except ValueError as exc:
        fit_doc = {"rate_per_ms": None, "time_constant_ms": None, "diverged": True,
                   "reason": str(exc)}
    _write_json(out_dir / outputs.get("fit", "decay_fit.json"), fit_doc)
    return EXIT_OK


# ----------------------------------------------------------------- entry

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spinforge",
        description="Spin-system simulation and pulse optimization workflows.")
    parser.add_argument("command",
                        choices=["spectrum", "optimize", "pseudopure", "dephasing", "sequence"])
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=".", help="output directory")
    args = parser.parse_args(argv)

    try:
        _threads_cap()
        cfg = _load_config(args.config, args.command)
        out_dir = Path(args.out)
        comment = f"# spinforge {__version__} {args.command} {_config_hash(cfg)}"
        if args.command == "spectrum":
            return cmd_spectrum(cfg, out_dir, comment)
        if args.command == "optimize":
            return cmd_optimize(cfg, out_dir, comment, args.seed)
        if args.command == "pseudopure":
            return cmd_pseudopure(cfg, out_dir, comment)
        if args.command == "dephasing":
            return cmd_dephasing(cfg, out_dir, comment, args.seed)
        if args.command == "sequence":
            return cmd_sequence(cfg, out_dir, comment)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"spinforge: error: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"spinforge: error: {exc}", file=_sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
