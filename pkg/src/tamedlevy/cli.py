"""Command-line front end.

Commands: simulate, convergence, stability, heatmap, timeshift,
check-assumptions, pstar. Parameters come from an optional YAML/JSON config
file plus inline flags (flags override the file; the TAMEDLEVY_OUTDIR
environment variable overrides the output directory). Each run writes its
CSV outputs plus a JSON manifest that echoes the resolved config and can be
passed back via --config to reproduce the run byte-for-byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np
import yaml

from . import __version__, experiments, model as model_mod
from .grid import build_uniform_grid
from .levy import truncate
from .scheme import NoiseRealization, SchemeConfig, simulate_path
from .streams import DEFAULT_SEED, stream

log = logging.getLogger("tamedlevy")


class ConfigError(ValueError):
    """Invalid configuration; reported with the offending field path."""


# -- value parsing -------------------------------------------------------------

def parse_mesh_token(tok) -> float:
    """A mesh value: either a float literal or dyadic shorthand '2^-k'."""
    if isinstance(tok, (int, float)):
        return float(tok)
    t = str(tok).strip()
    if t.startswith("2^"):
        try:
            return float(2.0 ** int(t[2:]))
        except ValueError as e:
            raise ConfigError(f"bad dyadic mesh token {t!r}") from e
    try:
        return float(t)
    except ValueError as e:
        raise ConfigError(f"bad mesh token {t!r}") from e


def parse_mesh_list(spec) -> list[float]:
    """Mesh family: list, comma list, or inclusive range '2^-a..2^-b'."""
    if isinstance(spec, (list, tuple)):
        return [parse_mesh_token(t) for t in spec]
    s = str(spec).strip()
    if ".." in s:
        lo_s, hi_s = s.split("..", 1)
        for part in (lo_s, hi_s):
            if not part.strip().startswith("2^"):
                raise ConfigError(f"mesh ranges must be dyadic: {s!r}")
        a = int(lo_s.strip()[2:])
        b = int(hi_s.strip()[2:])
        step = 1 if b >= a else -1
        return [float(2.0 ** k) for k in range(a, b + step, step)]
    return [parse_mesh_token(t) for t in s.split(",") if t.strip()]


def parse_float_list(spec, field: str) -> list[float]:
    if isinstance(spec, (list, tuple)):
        vals = [float(v) for v in spec]
    else:
        try:
            vals = [float(t) for t in str(spec).split(",") if t.strip()]
        except ValueError as e:
            raise ConfigError(f"{field}: expected comma-separated numbers") from e
    if not vals:
        raise ConfigError(f"{field}: empty list")
    return vals


# -- config assembly -----------------------------------------------------------

_RUN_DEFAULTS = {
    "T": 1.0, "x0": 2.0, "eps": 0.05, "mc": 1000, "p": 2.0,
    "seed": DEFAULT_SEED, "threads": 1, "out": "out",
}


def load_config_file(path: str) -> dict:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    if path.endswith(".json"):
        doc = json.loads(text)
    else:
        doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} is not a mapping")
    if "config" in doc and "version" in doc:  # a run manifest; unwrap
        doc = doc["config"]
    return doc


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config file, and flags into one nested document."""
    doc = {"model": {}, "run": dict(_RUN_DEFAULTS)}
    if args.config:
        base = load_config_file(args.config)
        for section, vals in base.items():
            if section == "command":
                continue
            if not isinstance(vals, dict):
                raise ConfigError(f"{section}: expected a mapping")
            doc.setdefault(section, {}).update(vals)
    doc["command"] = args.command
    cmd_section = doc.setdefault(_section_for(args.command), {})

    flag_map = {
        "model": ("model", "kind"), "lam": ("model", "lambda"),
        "a": ("model", "a"), "b": ("model", "b"), "c": ("model", "c"),
        "T": ("run", "T"), "x0": ("run", "x0"), "eps": ("run", "eps"),
        "mc": ("run", "mc"), "p": ("run", "p"), "seed": ("run", "seed"),
        "threads": ("run", "threads"), "out": ("run", "out"),
    }
    for attr, (section, key) in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            doc.setdefault(section, {})[key] = val
    for attr in ("meshes", "ref", "paths", "gaps", "mesh", "s_values", "s",
                 "record", "p0", "chi", "zeta", "n_probe", "radius"):
        val = getattr(args, attr, None)
        if val is not None:
            cmd_section[attr] = val
    if "TAMEDLEVY_OUTDIR" in os.environ:
        doc["run"]["out"] = os.environ["TAMEDLEVY_OUTDIR"]
    return doc


def _section_for(command: str) -> str:
    return command.replace("-", "_")


def _need(section: dict, field: str, path: str):
    if field not in section or section[field] is None:
        raise ConfigError(f"{path}.{field}: required value missing")
    return section[field]


def build_model(doc: dict) -> model_mod.SdeModel:
    spec = doc.get("model", {})
    kind = spec.get("kind", "model1")
    lam = float(spec.get("lambda", 3.0))
    if lam < 0:
        raise ConfigError("model.lambda: must be >= 0")
    jump = spec.get("jump", {})
    if jump.get("kind", "gaussian") != "gaussian":
        raise ConfigError("model.jump.kind: only 'gaussian' size laws are "
                          "configurable; others go through the library API")
    jump_kw = {"jump_mean": float(jump.get("mean", 0.05)),
               "jump_std": float(jump.get("std", 0.15))}
    if "lambda" in jump:
        lam = float(jump["lambda"])
    try:
        if kind == "model1":
            return model_mod.make_model1(lam, **jump_kw)
        if kind == "model2":
            return model_mod.make_model2(float(spec.get("a", 1.0)),
                                         float(spec.get("b", 2.0)),
                                         float(spec.get("c", 1.0)), lam,
                                         **jump_kw)
    except ValueError as e:
        raise ConfigError(f"model: {e}") from e
    raise ConfigError(f"model.kind: unknown model {kind!r} "
                      "(custom models are registered via the library API)")


def _run_params(doc: dict) -> dict:
    run = doc["run"]
    out = {
        "T": float(run["T"]), "x0": float(run["x0"]), "eps": float(run["eps"]),
        "mc": int(run["mc"]), "p": float(run["p"]), "seed": int(run["seed"]),
        "threads": int(run["threads"]), "out": str(run["out"]),
    }
    if not 0.0 < out["eps"] < 1.0:
        raise ConfigError("run.eps: must lie in (0, 1)")
    if out["mc"] < 1:
        raise ConfigError("run.mc: must be >= 1")
    if out["T"] <= 0:
        raise ConfigError("run.T: must be positive")
    if out["p"] < 1:
        raise ConfigError("run.p: must be >= 1")
    return out


# -- commands -------------------------------------------------------------------

def _write_manifest(outdir: str, command: str, doc: dict, wall: float,
                    n_diverged: int, outputs: list[str]):
    manifest = {
        "command": command,
        "config": doc,
        "version": __version__,
        "wall_time_s": wall,
        "n_diverged": n_diverged,
        "outputs": outputs,
    }
    path = os.path.join(outdir, f"{_section_for(command)}_manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _cmd_pstar(doc: dict) -> int:
    sec = doc.get("pstar", {})
    p0 = float(_need(sec, "p0", "pstar"))
    chi = float(_need(sec, "chi", "pstar"))
    zeta = float(sec.get("zeta", 0.01))
    try:
        val = model_mod.pstar(p0, chi, zeta)
    except ValueError as e:
        raise ConfigError(f"pstar: {e}") from e
    print(f"{val:.5f}")
    return 0


def _cmd_check_assumptions(doc: dict) -> int:
    t0 = time.perf_counter()
    run = _run_params(doc)
    sec = doc.get("check_assumptions", {})
    sde = build_model(doc)
    n_probe = int(sec.get("n_probe", 400))
    radius = float(sec.get("radius", 3.0))
    rng = stream(run["seed"], 0xA55, 0)
    report = model_mod.probe_assumptions(sde, n_probe, radius, rng, p=run["p"])
    print(report.summary())
    os.makedirs(run["out"], exist_ok=True)
    payload = {
        "model": sde.name,
        "pstar": report.pstar,
        "constants": sde.constants,
        "verdicts": {k: {"passed": v.passed, "constant": v.constant,
                         "witness": v.witness, "detail": v.detail}
                     for k, v in report.verdicts.items()},
    }
    path = os.path.join(run["out"], "assumptions.json")
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(run["out"], "check-assumptions", doc,
                    time.perf_counter() - t0, 0, ["assumptions.json"])
    return 0


def _cmd_simulate(doc: dict) -> int:
    t0 = time.perf_counter()
    run = _run_params(doc)
    sec = doc.get("simulate", {})
    sde = build_model(doc)
    mesh = parse_mesh_token(_need(sec, "mesh", "simulate"))
    n_paths = int(sec.get("paths", 1))
    s = float(sec.get("s", 0.0))
    n_cells = experiments._cells_for(run["T"], mesh, dyadic=False)
    dmap = build_uniform_grid(n_cells, run["T"])
    tlaw = truncate(sde.jump_law, run["eps"])
    cfg = SchemeConfig(s, run["x0"], dmap, run["eps"], run["mc"],
                       record_full_path=True)
    os.makedirs(run["out"], exist_ok=True)
    n_div = 0
    lines = ["path_id,t,x_1"]
    for k in range(n_paths):
        noise = NoiseRealization.generate(run["seed"], "simulate", k, dmap, tlaw)
        res = simulate_path(sde, cfg, noise)
        n_div += int(res.diagnostics["diverged"])
        times, states = res.trajectory
        for t, x in zip(times, states):
            lines.append(f"{k},{t:.17g},{x:.17g}")
    path = os.path.join(run["out"], "trajectories.csv")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    _write_manifest(run["out"], "simulate", doc, time.perf_counter() - t0,
                    n_div, ["trajectories.csv"])
    print(f"wrote {path} ({n_paths} paths, {n_div} diverged)")
    return 0


def _experiment_command(command: str, doc: dict) -> int:
    t0 = time.perf_counter()
    run = _run_params(doc)
    sec = doc.get(_section_for(command), {})
    sde = build_model(doc)
    common = dict(epsilon=run["eps"], mc_samples=run["mc"], T=run["T"],
                  x0=run["x0"], p=run["p"], seed=run["seed"],
                  threads=run["threads"])
    fits: list[tuple[str, experiments.SlopeFit]] = []
    if command == "convergence":
        meshes = parse_mesh_list(_need(sec, "meshes", "convergence"))
        ref = parse_mesh_token(_need(sec, "ref", "convergence"))
        n_paths = int(_need(sec, "paths", "convergence"))
        try:
            table, fit = experiments.strong_convergence(
                sde, meshes, ref, n_paths=n_paths, **common)
        except ValueError as e:
            raise ConfigError(f"convergence: {e}") from e
        fits.append(("convergence", fit))
    elif command == "stability":
        gaps = parse_float_list(_need(sec, "gaps", "stability"), "stability.gaps")
        if any(g <= 0 for g in gaps):
            raise ConfigError("stability.gaps: gaps must be positive")
        mesh = parse_mesh_token(_need(sec, "mesh", "stability"))
        n_paths = int(_need(sec, "paths", "stability"))
        try:
            table, fit = experiments.stability_initial_value(
                sde, gaps, mesh, n_paths=n_paths, **common)
        except ValueError as e:
            raise ConfigError(f"stability: {e}") from e
        fits.append(("stability", fit))
    elif command == "heatmap":
        gaps = parse_float_list(_need(sec, "gaps", "heatmap"), "heatmap.gaps")
        if any(g <= 0 for g in gaps):
            raise ConfigError("heatmap.gaps: gaps must be positive")
        meshes = parse_mesh_list(_need(sec, "meshes", "heatmap"))
        n_paths = int(_need(sec, "paths", "heatmap"))
        try:
            table = experiments.heatmap_joint(
                sde, gaps, meshes, n_paths=n_paths, **common)
        except ValueError as e:
            raise ConfigError(f"heatmap: {e}") from e
    elif command == "timeshift":
        s_values = parse_float_list(_need(sec, "s_values", "timeshift"),
                                    "timeshift.s_values")
        mesh = parse_mesh_token(_need(sec, "mesh", "timeshift"))
        n_paths = int(_need(sec, "paths", "timeshift"))
        try:
            table = experiments.initial_time_perturbation(
                sde, s_values, mesh, n_paths=n_paths, **common)
        except ValueError as e:
            raise ConfigError(f"timeshift: {e}") from e
    else:  # pragma: no cover
        raise ConfigError(f"unknown command {command}")

    os.makedirs(run["out"], exist_ok=True)
    csv_name = f"{command}.csv"
    experiments.write_error_csv(table, os.path.join(run["out"], csv_name))
    outputs = [csv_name]
    if fits:
        experiments.write_slopes_csv(fits, os.path.join(run["out"], "slopes.csv"))
        outputs.append("slopes.csv")
        for name, fit in fits:
            print(f"{name}: slope={fit.slope:.4f} intercept={fit.intercept:.4f} "
                  f"r2={fit.r_squared:.4f}")
    n_div = int(sum(row["n_diverged"] for row in table.rows))
    _write_manifest(run["out"], command, doc, time.perf_counter() - t0,
                    n_div, outputs)
    print(f"wrote {os.path.join(run['out'], csv_name)}")
    return 0


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tamedlevy",
        description="Tamed Euler scheme for Levy-driven SDEs: simulation and "
                    "benchmark experiments")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="YAML/JSON config file (or a manifest)")
        p.add_argument("--model", choices=["model1", "model2"])
        p.add_argument("--lambda", dest="lam", type=float,
                       help="jump intensity")
        p.add_argument("--a", type=float)
        p.add_argument("--b", type=float)
        p.add_argument("--c", type=float)
        p.add_argument("--T", type=float)
        p.add_argument("--x0", type=float)
        p.add_argument("--eps", type=float, help="jump truncation level")
        p.add_argument("--mc", type=int, help="compensator sample count M")
        p.add_argument("--p", type=float, help="L^p error exponent")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker count (0 = auto)")
        p.add_argument("-o", "--out", help="output directory")

    p = sub.add_parser("simulate", help="run paths and dump trajectories")
    add_common(p)
    p.add_argument("--mesh", help="step size (float or 2^-k)")
    p.add_argument("--paths", type=int)
    p.add_argument("--s", type=float, help="start time")

    p = sub.add_parser("convergence", help="strong error vs mesh")
    add_common(p)
    p.add_argument("--meshes", help="e.g. 2^-10..2^-14 or comma list")
    p.add_argument("--ref", help="reference mesh (finer than all meshes)")
    p.add_argument("--paths", type=int)

    p = sub.add_parser("stability", help="error vs initial-value gap")
    add_common(p)
    p.add_argument("--gaps", "--gap", dest="gaps", help="comma list of gaps")
    p.add_argument("--mesh")
    p.add_argument("--paths", type=int)

    p = sub.add_parser("heatmap", help="error over the (gap, mesh) grid")
    add_common(p)
    p.add_argument("--gaps", "--gap", dest="gaps")
    p.add_argument("--meshes")
    p.add_argument("--paths", type=int)

    p = sub.add_parser("timeshift", help="error vs initial-time perturbation")
    add_common(p)
    p.add_argument("--s-values", dest="s_values",
                   help="comma list; first value is the base start time")
    p.add_argument("--mesh")
    p.add_argument("--paths", type=int)

    p = sub.add_parser("check-assumptions",
                       help="probe the coefficient assumptions")
    add_common(p)
    p.add_argument("--n-probe", dest="n_probe", type=int)
    p.add_argument("--radius", type=float)

    p = sub.add_parser("pstar", help="maximal admissible error exponent")
    p.add_argument("--config", help="YAML/JSON config file")
    p.add_argument("--p0", type=float)
    p.add_argument("--chi", type=float)
    p.add_argument("--zeta", type=float)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        doc = resolve_config(args)
        command = args.command
        if command == "pstar":
            return _cmd_pstar(doc)
        if command == "check-assumptions":
            return _cmd_check_assumptions(doc)
        if command == "simulate":
            return _cmd_simulate(doc)
        return _experiment_command(command, doc)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure
        log.error("run failed: %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
