"""Command-line front end: ``hyperspin synth | fit | solutions | branching | map | ellipsoid``.

Options come from flags and, optionally, a JSON config (``--config``) with
the same names; flags win. Exit codes: 0 success, 2 configuration or input
error, 3 model evaluation error, 4 fit failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .branching import (
    BranchingTable,
    quenching_alphas,
    ranking_text,
    select_solution,
    subsite_averaged_table,
    transition_map,
)
from .exceptions import FitStageError, HyperspinError, ModelEvaluationFailed, SingularNormalMatrix
from .fitting import AnnealSchedule, _round_floats, bootstrap_fit, direct_fit, random_params
from .models import STATES, SiteModel
from .observations import ObservationFormatError, ObservationSet
from .perturb import ellipsoid_coefficients, sphere_grid, splitting_surface, surface_csv
from .reference import BRANCHING_EXP, BRANCHING_EXP_ERR
from .spectra import (
    SpiralScan,
    fid_trace,
    observe_spiral,
    scan_lines_csv,
    site_lines,
    subsite_splittings,
    synth_profile,
)
from .spinops import DOUBLETS
from .symmetry import enumerate_solutions

EXIT_CONFIG = 2
EXIT_MODEL = 3
EXIT_FIT = 4

COMMANDS = ("synth", "fit", "solutions", "branching", "map", "ellipsoid")

_STATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["D_MHz", "E_MHz", "g_MHz_per_T", "q_euler_deg", "m_euler_deg"],
    "properties": {
        "D_MHz": {"type": "number"},
        "E_MHz": {"type": "number"},
        "g_MHz_per_T": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
        "q_euler_deg": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
        "m_euler_deg": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
    },
}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["ground", "excited", "c2_axis_deg"],
    "properties": {
        "ground": _STATE_SCHEMA,
        "excited": _STATE_SCHEMA,
        "c2_axis_deg": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "gamma_deg": {"type": "number"},
        "description": {"type": "string"},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "version": {"type": "string"},
        "model": {"type": "string"},
        "out": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "scan": {
            "type": "object",
            "additionalProperties": False,
            "required": ["Bx", "By", "Bz", "N"],
            "properties": {
                "Bx": {"type": "number"}, "By": {"type": "number"}, "Bz": {"type": "number"},
                "N": {"type": "integer", "minimum": 2},
            },
        },
        "width_khz": {"type": "number", "exclusiveMinimum": 0},
        "transition": {"type": "array", "items": {"enum": [1, 3, 5]}, "minItems": 2, "maxItems": 2},
        "frame": {"enum": ["lab", "crystal"]},
        "state": {"enum": list(STATES) + ["both"]},
        "noise_khz": {"type": "number", "minimum": 0},
        "fid_every": {"type": "integer", "minimum": 0},
        "lo_detune_mhz": {"type": "number", "exclusiveMinimum": 0},
        "observations": {"type": "string"},
        "method": {"enum": ["bootstrap", "anneal"]},
        "gate_khz": {"type": "number", "exclusiveMinimum": 0},
        "chains": {"type": "integer", "minimum": 1},
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t0": {"type": "number", "exclusiveMinimum": 0},
                "t_min": {"type": "number", "exclusiveMinimum": 0},
                "t_min_ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "cooling": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "steps": {"type": "integer", "minimum": 1},
                "max_evals": {"type": "integer", "minimum": 1},
                "angle_width": {"type": "number", "exclusiveMinimum": 0},
                "g_width": {"type": "number", "exclusiveMinimum": 0},
                "width_floor": {"type": "number", "exclusiveMinimum": 0},
                "jump_rate": {"type": "number", "minimum": 0, "maximum": 1},
                "polish": {"type": "boolean"},
            },
        },
        "measured": {"type": "string"},
        "positive_excited": {"type": "boolean"},
        "grid": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 2, "maxItems": 2},
    },
}

DEFAULTS = {
    "seed": 0,
    "scan": {"Bx": 10.0, "By": 10.0, "Bz": 5.0, "N": 200},
    "width_khz": 10.0,
    "transition": [1, 1],
    "frame": "lab",
    "state": "excited",
    "noise_khz": 0.0,
    "fid_every": 0,
    "lo_detune_mhz": 4.0,
    "method": "bootstrap",
    "gate_khz": 30.0,
    "chains": 1,
    "positive_excited": False,
    "grid": [20, 40],
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def bundled_model_path() -> Path:
    return Path(str(resources.files("hyperspin") / "data" / "eu151_site1.json"))


def bundled_observations_path() -> Path:
    return Path(str(resources.files("hyperspin") / "data" / "spiral_n200_noise1khz.csv"))


def _validation_message(err: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return f"{where}: {err.message}"


def load_model(path) -> SiteModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"model: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"model: invalid JSON in {path}: {exc}") from None
    try:
        jsonschema.validate(data, MODEL_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise CliError(EXIT_CONFIG, f"model {path}: {_validation_message(exc)}") from None
    try:
        return SiteModel.from_dict(data)
    except ValueError as exc:
        raise CliError(EXIT_MODEL, f"model {path}: {exc}") from None


def _parse_floats(text: str, n: int, name: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != n:
        raise CliError(EXIT_CONFIG, f"--{name}: expected {n} comma-separated values, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"--{name}: not numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperspin", description="Hyperfine spin Hamiltonian toolkit")
    p.add_argument("--version", action="version", version=f"hyperspin {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--model", help="site model JSON (default: bundled reference model)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--scan", help="Bx,By,Bz,N spiral amplitudes (mT) and point count")
        s.add_argument("--width-khz", type=float, dest="width_khz")
        s.add_argument("--transition", help="k,l burn transition labels (1, 3 or 5)")
        s.add_argument("--frame", choices=["lab", "crystal"])
        s.add_argument("--state", choices=list(STATES) + ["both"])
        if name == "synth":
            s.add_argument("--noise-khz", type=float, dest="noise_khz")
            s.add_argument("--fid-every", type=int, dest="fid_every", help="write an FID trace every K points")
        if name == "fit":
            s.add_argument("--observations", help="observation CSV (default: bundled synthetic set)")
            s.add_argument("--method", choices=["bootstrap", "anneal"])
            s.add_argument("--chains", type=int)
        if name == "branching":
            s.add_argument("--measured", help="measured table JSON, or 'reference' for the bundled values")
            s.add_argument("--positive-excited", action="store_true", default=None, dest="positive_excited")
        if name == "ellipsoid":
            s.add_argument("--grid", help="n_theta,n_phi")
    return p


def resolve_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise CliError(EXIT_CONFIG, f"config: file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config: invalid JSON: {exc}") from None
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command")}
    if "scan" in flags:
        bx, by, bz, n = _parse_floats(flags["scan"], 4, "scan")
        if n != int(n):
            raise CliError(EXIT_CONFIG, "--scan: N must be an integer")
        flags["scan"] = {"Bx": bx, "By": by, "Bz": bz, "N": int(n)}
    if "transition" in flags:
        flags["transition"] = [int(x) for x in _parse_floats(flags["transition"], 2, "transition")]
    if "grid" in flags:
        flags["grid"] = [int(x) for x in _parse_floats(flags["grid"], 2, "grid")]
    merged = {**cfg, **flags}
    try:
        jsonschema.validate(merged, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise CliError(EXIT_CONFIG, f"config: {_validation_message(exc)}") from None
    if merged.get("version") not in (None, __version__):
        raise CliError(EXIT_CONFIG, f"config: version {merged['version']!r} does not match {__version__}")
    return {**DEFAULTS, **merged}


def _states(cfg) -> tuple[str, ...]:
    return STATES if cfg["state"] == "both" else (cfg["state"],)


def _fmt(x) -> str:
    # adding 0.0 turns -0.0 into 0.0
    return f"{x + 0.0:.9g}"


# commands build {relative path: text}; nothing touches the disk until all succeed

def _scan_csv(model: SiteModel, scan: SpiralScan) -> str:
    """One row per scan point: field and every doublet splitting (kHz) of both subsites."""
    split = {st: subsite_splittings(model, scan.fields, st) for st in STATES}
    cols = [f"{st}_{int(2 * k)}_subsite{sub}_kHz" for st in STATES for k in DOUBLETS for sub in (1, 2)]
    rows = [",".join(["n", "t", "Bx_mT", "By_mT", "Bz_mT"] + cols)]
    for i, (t, b) in enumerate(zip(scan.t, scan.fields)):
        vals = [split[st][i, sub, j] for st in STATES for j in range(3) for sub in (0, 1)]
        rows.append(",".join([str(i + 1)] + [_fmt(x) for x in (t, *b, *vals)]))
    return "\n".join(rows) + "\n"


def cmd_synth(cfg, model: SiteModel) -> dict:
    s = cfg["scan"]
    scan = SpiralScan(s["N"], s["Bx"], s["By"], s["Bz"])
    tr = tuple(cfg["transition"])
    files = {"scan.csv": _scan_csv(model, scan), "lines.csv": scan_lines_csv(model, scan, tr)}
    files["observations.csv"] = observe_spiral(model, scan, noise=cfg["noise_khz"], seed=cfg["seed"]).to_csv()
    rng = np.random.default_rng(cfg["seed"])
    phases = rng.uniform(0.0, 2 * np.pi, scan.N)
    width = cfg["width_khz"]
    profiles = []
    reach = 0.0
    lines_per_point = [site_lines(model, b, tr) for b in scan.fields]
    for lines in lines_per_point:
        reach = max(reach, float(np.max(np.abs(lines.offsets))))
    span = 2 * (reach + 20 * width)
    for n, lines in enumerate(lines_per_point, start=1):
        prof = synth_profile(lines, width, span=span, step=width / 20)
        profiles.append(prof)
        files[f"profiles/profile_{n:04d}.csv"] = prof.to_csv()
    every = cfg["fid_every"]
    if every:
        for n in range(1, scan.N + 1, every):
            trace = fid_trace(profiles[n - 1], cfg["lo_detune_mhz"], 0.0, float(phases[n - 1]))
            files[f"fid/fid_{n:04d}.csv"] = trace.to_csv()
    files["metadata.json"] = json.dumps({
        "version": __version__,
        "created_unix": time.time(),
        "seed": cfg["seed"],
        "lo_phase_rad": [float(_fmt(p)) for p in phases],
    }, indent=2) + "\n"
    return files


def _schedule(cfg) -> AnnealSchedule | None:
    return AnnealSchedule(**cfg["schedule"]) if "schedule" in cfg else None


def cmd_fit(cfg, model: SiteModel) -> dict:
    path = cfg.get("observations") or bundled_observations_path()
    try:
        obs = ObservationSet.from_csv(str(path))
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"observations: file not found: {path}") from None
    except ObservationFormatError as exc:
        raise CliError(EXIT_CONFIG, f"observations {path}: {exc}") from None
    files = {}
    timing = {}
    for state in _states(cfg):
        quad = model.state(state).quadrupole
        try:
            if cfg["method"] == "bootstrap":
                res = bootstrap_fit(obs, quad, state, seed=cfg["seed"], schedule=_schedule(cfg), gate=cfg["gate_khz"])
            else:
                init = random_params(np.random.default_rng(cfg["seed"]))
                try:
                    res = direct_fit(obs, quad, init, state, seed=cfg["seed"], schedule=_schedule(cfg),
                                     gate=cfg["gate_khz"], n_chains=cfg["chains"])
                except (SingularNormalMatrix, ValueError) as exc:
                    raise FitStageError("anneal", str(exc)) from exc
        except FitStageError as exc:
            raise CliError(EXIT_FIT, f"fit ({state}) failed in stage '{exc.stage}': {exc}") from None
        files[f"fit_{state}.json"] = res.to_json()
        files[f"fit_{state}.txt"] = res.summary()
        timing[state] = res.elapsed_s
    # wall-clock data lives only in the metadata file
    files["fit_metadata.json"] = json.dumps({
        "version": __version__, "created_unix": time.time(), "elapsed_s": timing,
    }, indent=2) + "\n"
    return files


def _tensor_text(name, t) -> list[str]:
    m = np.asarray(t)
    return [f"{name} = "] + ["  [" + ", ".join(f"{x:11.4f}" for x in row) + "]" for row in m]


def cmd_solutions(cfg, model: SiteModel) -> dict:
    out_json = {}
    text = []
    for state in _states(cfg):
        fam = enumerate_solutions(model.state(state))
        text.append(f"{state} state")
        text.append(f"{'#':>2} {'signs':>5} {'g1':>9}{'g2':>9}{'g3':>9} {'alpha_Q':>10}{'beta_Q':>10}{'gamma_Q':>10}")
        rows = []
        for i, (pat, m) in enumerate(fam, start=1):
            q = m.q_angles.degrees
            g = m.zeeman.values
            text.append(f"{i:>2} {str(pat):>5} {g[0]:>9.4f}{g[1]:>9.4f}{g[2]:>9.4f} {q[0]:>10.4f}{q[1]:>10.4f}{q[2]:>10.4f}")
            rows.append({"index": i, "signs": str(pat), **_round_floats(m.to_dict())})
        out_json[state] = rows
        q, mm = model.tensors(state, 1, cfg["frame"])
        text.append("")
        text += _tensor_text(f"Q ({cfg['frame']} frame, MHz)", q.matrix)
        text += _tensor_text(f"M ({cfg['frame']} frame, MHz/T)", mm.matrix)
        text.append("")
    return {"solutions.txt": "\n".join(text), "solutions.json": json.dumps(out_json, indent=2) + "\n"}


def _measured_table(source: str) -> BranchingTable:
    if source == "reference":
        return BranchingTable(BRANCHING_EXP, BRANCHING_EXP_ERR)
    try:
        data = json.loads(Path(source).read_text())
        return BranchingTable(data["values"], data.get("errors", BRANCHING_EXP_ERR))
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"measured: file not found: {source}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"measured {source}: {exc}") from None


def cmd_branching(cfg, model: SiteModel) -> dict:
    table = subsite_averaged_table(model)
    alphas = {s: [float(_fmt(a)) for a in quenching_alphas(model.state(s).zeeman)] for s in STATES}
    text = "relative oscillator strengths (subsite average)\n" + table.to_text(3)
    text += "\nquenching alpha = 1 - g/g_N\n"
    for s in STATES:
        text += f"{s:<8}" + "".join(f"{a:>8.2f}" for a in alphas[s]) + "\n"
    files = {
        "branching.txt": text,
        "branching.json": json.dumps({"table": table.to_dict(), "quenching_alpha": alphas}, indent=2) + "\n",
    }
    if cfg.get("measured"):
        meas = _measured_table(cfg["measured"])
        ranked = select_solution(enumerate_solutions(model.ground), enumerate_solutions(model.excited), meas,
                                 excited_positive_only=cfg["positive_excited"])
        files["ranking.txt"] = ranking_text(ranked)
        files["ranking.json"] = json.dumps([p.to_dict() for p in ranked], indent=2) + "\n"
    return files


def cmd_map(cfg, model: SiteModel) -> dict:
    s = cfg["scan"]
    scan = SpiralScan(s["N"], s["Bx"], s["By"], s["Bz"])
    rows = ["n,Bx_mT,By_mT,Bz_mT,subsite,ground_level,excited_level,strength"]
    for n, b in enumerate(scan.fields, start=1):
        for sub in (1, 2):
            m = transition_map(model, b, sub)
            for i in range(6):
                for j in range(6):
                    rows.append(f"{n},{_fmt(b[0])},{_fmt(b[1])},{_fmt(b[2])},{sub},{i + 1},{j + 1},{_fmt(m.values[i, j])}")
    return {"map.csv": "\n".join(rows) + "\n"}


def cmd_ellipsoid(cfg, model: SiteModel) -> dict:
    files = {}
    nt, nph = cfg["grid"]
    grid = sphere_grid(nt, nph)
    for state in _states(cfg):
        st = model.state(state)
        q, m = model.tensors(state, 1, cfg["frame"])
        iso = np.eye(3) * float(np.mean(np.abs(st.zeeman.values)))
        for k in DOUBLETS:
            label = int(2 * k)
            files[f"ellipsoid_{state}_k{label}.csv"] = surface_csv(splitting_surface(q, m, k, grid))
            files[f"ellipsoid_{state}_k{label}_isotropic.csv"] = surface_csv(splitting_surface(q, iso, k, grid))
        coeffs = {str(int(2 * k)): [float(_fmt(c)) for c in ellipsoid_coefficients(st.quadrupole, k)] for k in DOUBLETS}
        files[f"ellipsoid_{state}_coefficients.json"] = json.dumps(coeffs, indent=2) + "\n"
    return files


HANDLERS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "solutions": cmd_solutions,
    "branching": cmd_branching,
    "map": cmd_map,
    "ellipsoid": cmd_ellipsoid,
}


def write_outputs(out: Path, files: dict) -> list[Path]:
    """Write every file via a temporary sibling and an atomic rename."""
    written = []
    for rel, text in sorted(files.items()):
        target = out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, target)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        written.append(target)
    return written


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    try:
        cfg = resolve_config(args)
        model = load_model(cfg.get("model") or bundled_model_path())
        out = Path(cfg.get("out") or ".")
        try:
            files = HANDLERS[args.command](cfg, model)
        except CliError:
            raise
        except ModelEvaluationFailed as exc:
            raise CliError(EXIT_MODEL, f"model evaluation failed: {exc}") from None
        except HyperspinError as exc:
            raise CliError(EXIT_MODEL, str(exc)) from None
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, str(exc)) from None
        for path in write_outputs(out, files):
            print(path)
    except CliError as exc:
        print(f"hyperspin {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
