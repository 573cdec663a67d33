"""Command-line entry point.

Values are resolved as: command-line flag, then ``--config`` file, then
the built-in default. Every run writes ``manifest.json`` with the
resolved configuration next to its outputs.

Exit status: 0 on success (and, for ``verify``, when every bound holds),
1 when a checked bound fails, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, harness, localtime, order, potential, sampler
from .gauss import SelfIntersectionSpec

COMMANDS = ("sample", "capacity", "localtime", "verify", "dimension", "selfintersect")
FORMATS = ("csv", "json", "binary")


class UsageError(Exception):
    pass


def _seed(text) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return v


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).replace(",", " ").split())


# name -> (type, default, help); one table shared by flags and config files
PARAMS = {
    "N": (int, 2, "number of time parameters"),
    "d": (int, 1, "number of spatial coordinates"),
    "points": (int, 33, "grid points per axis"),
    "seed": (_seed, 0, "64-bit seed"),
    "workers": (int, 1, "worker processes for replicate loops"),
    "tol": (float, 1e-8, "Frank-Wolfe duality-gap tolerance"),
    "alpha": (float, 0.5, "Riesz exponent"),
    "set": (str, "translated_cube", "interval, translated_cube, cantor, cantor_product or a set file"),
    "level": (int, 5, "Cantor construction level"),
    "ratio": (float, 1 / 3, "Cantor piece ratio"),
    "eps": (float, 0.02, "smoothing radius of the occupation density"),
    "voxel": (float, 0.01, "spatial cell size"),
    "replicates": (int, 10, "Monte Carlo replicates"),
    "format": (str, "json", "csv, json or binary"),
    "lower": (float, 1.0, "lower end of the parameter box"),
    "upper": (float, 2.0, "upper end of the parameter box"),
    "experiment": (str, "bridge_suite", "experiment name for verify (see `list`)"),
    "weights": (_floats, (1.0, 1.0), "self-intersection weights, comma separated"),
    "blocks": (_floats, (1.0, 2.0, 3.0, 4.0), "self-intersection block ends a1,b1,a2,b2,..."),
}

# parameters each command consumes (others are ignored and not echoed)
USES = {
    "sample": ("N", "d", "points", "seed", "format", "lower", "upper"),
    "capacity": ("N", "points", "set", "level", "ratio", "alpha", "tol", "lower", "upper"),
    "localtime": ("N", "d", "points", "seed", "eps", "voxel", "replicates", "lower", "upper", "format"),
    "verify": ("experiment", "N", "d", "seed", "replicates", "workers"),
    "dimension": ("N", "points", "set", "level", "ratio", "lower", "upper"),
    "selfintersect": ("d", "seed", "points", "eps", "voxel", "replicates", "weights", "blocks", "workers"),
}


@dataclass
class RunConfig:
    command: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: Path = Path("out")
    format: str = "json"
    explicit: frozenset = frozenset()

    def manifest(self) -> dict:
        out = {"command": self.command, "parameters": self.parameters, "seed": self.seed,
               "output_dir": str(self.output_dir), "format": self.format, "version": __version__}
        if self.command == "verify":
            out["experiment_arguments"] = verify_arguments(self)
        return out


def read_config(path: str | Path) -> dict:
    """``key = value`` lines; blank lines and '#' comments are skipped."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, val = (x.strip() for x in line.split("=", 1))
        out[key.lstrip("-")] = val
    return out


def _coerce(key: str, value):
    typ = PARAMS[key][0]
    try:
        return typ(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid value {value!r} for {key}: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sheetlab",
        description="Brownian sheet numerical lab. Precedence: flags > --config file > defaults.",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd, help=f"run {cmd}")
        for key in USES[cmd]:
            typ, default, text = PARAMS[key]
            # defaults are applied after merging with the config file
            sp.add_argument(f"--{key}", type=str, default=None, help=f"{text} (default {default!r})")
        sp.add_argument("--output", default=None, help="output directory (default out)")
        sp.add_argument("--config", default=None, help="key = value file")
        sp.add_argument("--json", action="store_true", help="print the result record as JSON")
    lp = sub.add_parser("list", help="list experiments")
    lp.add_argument("--json", action="store_true", help="machine-readable listing")
    return p


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    params = {}
    explicit = set()
    for key in USES[args.command]:
        flag = getattr(args, key, None)
        if flag is not None:
            params[key] = _coerce(key, flag)
        elif key in cfg:
            params[key] = _coerce(key, cfg[key])
        else:
            params[key] = PARAMS[key][1]
            continue
        explicit.add(key)
    unknown = set(cfg) - set(PARAMS) - {"output"}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = args.output if args.output is not None else cfg.get("output", "out")
    fmt = params.get("format", "json")
    if fmt not in FORMATS:
        raise UsageError(f"format must be one of {FORMATS}")
    for key in ("N", "d", "points", "replicates", "workers"):
        if key in params and params[key] < 1:
            raise UsageError(f"{key} must be >= 1")
    return RunConfig(args.command, params, params.get("seed", 0), Path(out), fmt, frozenset(explicit))


# ------------------------------------------------------------------- commands


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def _set_from(params: dict):
    kind = params["set"]
    if Path(kind).is_file():
        return order.read_set_file(kind), None
    try:
        F = potential.make_test_set(kind, N=params["N"], lower=params["lower"], upper=params["upper"],
                                    points=params["points"], level=params["level"], ratio=params["ratio"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        dim = harness.set_dimension(kind, F.N, params["ratio"])
    except ValueError:
        dim = None
    return F, dim


def cmd_sample(cfg: RunConfig) -> tuple[dict, int]:
    p = cfg.parameters
    grid = sampler.GridSpec.cube(p["lower"], p["upper"], p["points"], p["N"])
    smp = sampler.sample_sheet(grid, p["d"], cfg.seed)
    if cfg.format == "binary":
        path = cfg.output_dir / "sample.bin"
        sampler.write_binary(smp, path)
    elif cfg.format == "csv":
        path = cfg.output_dir / "sample.csv"
        sampler.write_csv(smp, path)
    else:
        path = cfg.output_dir / "sample.json"
        _write(path, harness.dumps17({"axes": [ax.tolist() for ax in grid.axes],
                                      "values": smp.values.tolist(), "seed": cfg.seed}) + "\n")
    return {"file": path.name, "shape": [p["d"], *grid.shape]}, 0


def cmd_capacity(cfg: RunConfig) -> tuple[dict, int]:
    p = cfg.parameters
    F, _ = _set_from(p)
    res = potential.capacity(F, potential.KernelSpec.riesz(p["alpha"], "cell_average"), tol=p["tol"])
    rec = res.record()
    _write(cfg.output_dir / "capacity.json", harness.dumps17(rec) + "\n")
    _write(cfg.output_dir / "equilibrium.csv", res.equilibrium.to_csv())
    return rec, 0


def cmd_localtime(cfg: RunConfig) -> tuple[dict, int]:
    p = cfg.parameters
    F = potential.make_test_set("translated_cube", N=p["N"], lower=p["lower"], upper=p["upper"],
                                points=p["points"])
    mu = potential.DiscreteMeasure.uniform(F)
    grid = sampler.GridSpec.for_set(F)
    samples = [sampler.sample_sheet(grid, p["d"], cfg.seed, stream=r) for r in range(p["replicates"])]
    allv = np.vstack([s.on_set(F) for s in samples])
    xg = localtime.SpatialGrid.covering(allv, p["voxel"], p["eps"] + p["voxel"])
    est = localtime.local_time_field(samples, mu, xg, p["eps"])
    files = []
    for r in range(p["replicates"]):
        stem = f"localtime_r{r:04d}"
        _write(cfg.output_dir / f"{stem}.csv", est.to_csv(r))
        _write(cfg.output_dir / f"{stem}.json",
               harness.dumps17({**est.sidecar(r), "grid": xg.to_dict()}) + "\n")
        files.append(stem)
    masses = est.mass()
    return {"files": files, "mass_min": float(masses.min()), "mass_max": float(masses.max())}, 0


def _write_report(cfg: RunConfig, rep: harness.ExperimentReport) -> tuple[dict, int]:
    _write(cfg.output_dir / "report.json", rep.to_json())
    _write(cfg.output_dir / "estimates.csv", rep.to_csv())
    # wall-clock time is kept out of the report so reruns are byte-identical
    _write(cfg.output_dir / "timing.json", harness.dumps17({"runtime_seconds": rep.runtime_seconds}) + "\n")
    return rep.to_dict(), 0 if rep.passed else 1


def verify_arguments(cfg: RunConfig) -> dict:
    """Keyword arguments passed to the experiment.

    The seed always goes through; other flags only when set explicitly
    and accepted by the experiment, so each experiment keeps its own
    defaults otherwise.
    """
    p = cfg.parameters
    fn = harness.EXPERIMENTS[p["experiment"]].run.__wrapped__
    names = fn.__code__.co_varnames[: fn.__code__.co_argcount]
    kw = {"seed": p["seed"]}
    for key in ("N", "d", "replicates", "workers"):
        if key in names and key in cfg.explicit:
            kw[key] = p[key]
    return kw


def cmd_verify(cfg: RunConfig) -> tuple[dict, int]:
    rep = harness.run_experiment(cfg.parameters["experiment"], **verify_arguments(cfg))
    return _write_report(cfg, rep)


def cmd_dimension(cfg: RunConfig) -> tuple[dict, int]:
    p = cfg.parameters
    F, dim = _set_from(p)
    span = F.points.max() - F.points.min()
    base = span if span > 0 else 1.0
    scales = base * 2.0 ** -np.arange(1, 7)
    cell = F.scale()
    scales = scales[scales > 2 * cell]
    if scales.size < 3 or scales[0] / scales[-1] < 10:
        raise UsageError("set too coarse for a box-counting fit (need 3 scales over a decade)")
    slope, resid = potential.box_dimension(F, scales)
    rec = {"box_dimension": slope, "residual": resid, "analytic_dimension": dim,
           "scales": scales.tolist(), "size": len(F)}
    _write(cfg.output_dir / "dimension.json", harness.dumps17(rec) + "\n")
    return rec, 0


def cmd_selfintersect(cfg: RunConfig) -> tuple[dict, int]:
    p = cfg.parameters
    ends = p["blocks"]
    if len(ends) % 2 or len(ends) // 2 != len(p["weights"]):
        raise UsageError("blocks must list a start and an end for each weight")
    try:
        spec = SelfIntersectionSpec(p["weights"], tuple(zip(ends[::2], ends[1::2])))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rep = harness.exp_mountford(spec, d=p["d"], replicates=p["replicates"], seed=cfg.seed,
                                points=p["points"], eps=p["eps"], h=p["voxel"], workers=p["workers"])
    return _write_report(cfg, rep)


HANDLERS = {
    "sample": cmd_sample,
    "capacity": cmd_capacity,
    "localtime": cmd_localtime,
    "verify": cmd_verify,
    "dimension": cmd_dimension,
    "selfintersect": cmd_selfintersect,
}


def list_experiments(as_json: bool = False) -> str:
    rows = [{"name": e.name, "citation": e.citation} for e in harness.EXPERIMENTS.values()]
    if as_json:
        return json.dumps(rows, indent=2) + "\n"
    width = max(len(r["name"]) for r in rows)
    return "".join(f"{r['name']:<{width}}  {r['citation']}\n" for r in rows)


def run(cfg: RunConfig, echo_json: bool = False) -> int:
    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        probe = cfg.output_dir / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {cfg.output_dir} is not writable: {exc}") from None
    if cfg.command == "verify" and cfg.parameters["experiment"] not in harness.EXPERIMENTS:
        raise UsageError(f"unknown experiment {cfg.parameters['experiment']!r}; run `list`")
    manifest = cfg.manifest()
    _write(cfg.output_dir / "manifest.json", harness.dumps17(manifest) + "\n")
    record, status = HANDLERS[cfg.command](cfg)
    if echo_json:
        sys.stdout.write(harness.dumps17(record) + "\n")
    return status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if args.command == "list":
        sys.stdout.write(list_experiments(args.json))
        return 0
    try:
        cfg = resolve(args)
        return run(cfg, args.json)
    except UsageError as exc:
        sys.stderr.write(f"sheetlab: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
