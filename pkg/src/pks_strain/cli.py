"""Command-line entry point and the plain-text config and manifest formats.

Config files are line oriented::

    preset = strained_supercritical     # optional, must precede sections
    [initial]
    kind = two_bump                     # two_bump | gaussian | snapshot
    M = 12*pi
    [numerics]
    N = 512

Numbers may be arithmetic in ``pi`` and ``e``.  Keys are listed in
``SECTIONS`` together with the ScenarioConfig field each one sets; anything
not mentioned keeps the preset (or ScenarioConfig) default.
"""

from __future__ import annotations

import argparse
import ast
import json
import math
import operator
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from . import diagnostics as dg
from .dynamics import BLOWN_UP
from .experiments import ALL_CHECKS, PRESETS, ScenarioConfig, preset, run
from .grid import write_snapshot

EXIT_OK, EXIT_ERROR, EXIT_BLOWN_UP = 0, 1, 2
MANIFEST_MAGIC = "PKS-MANIFEST v1"


class ConfigError(ValueError):
    pass


# section -> key -> (target, converter); target "thresholds.x" edits BlowupThresholds,
# "output.x" edits OutputOptions
def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_NAMES = {"pi": math.pi, "e": math.e, "inf": math.inf}


def number(text: str) -> float:
    """Evaluate a numeric literal or arithmetic in pi and e, nothing else."""
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        raise ValueError(f"not a number: {text!r}")
    try:
        return ev(ast.parse(text, mode="eval"))
    except SyntaxError:
        raise ValueError(f"not a number: {text!r}") from None


def integer(text: str) -> int:
    v = number(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _optional(conv):
    return lambda text: None if text.lower() in ("auto", "none") else conv(text)


def checks_list(text: str) -> tuple:
    low = text.strip().lower()
    if low == "all":
        return ALL_CHECKS
    if low == "none":
        return ()
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [n for n in names if n not in ALL_CHECKS]
    if bad:
        raise ValueError(f"unknown checks {bad}; choose from {', '.join(ALL_CHECKS)}")
    return names


SECTIONS = {
    "": {"preset": ("preset", str), "name": ("name", str)},
    "initial": {"kind": ("initial", str), "M": ("mass", number), "sigma": ("sigma", number),
                "y0": ("y0", number), "snapshot": ("snapshot", str)},
    "numerics": {"N": ("cells", integer), "L": ("half_width", number),
                 "epsilon": ("epsilon", _optional(number)), "epsilon_cells": ("epsilon_cells", number),
                 "bridge": ("bridge", str), "cfl": ("cfl", number), "transport": ("transport", str),
                 "limiter": ("limiter", str),
                 "chemotaxis": ("chemotaxis", _bool), "diffusion": ("diffusion", _bool),
                 "T_max": ("t_max", number), "output_interval": ("output_interval", _optional(number)),
                 "stop_at_box": ("stop_at_box", _bool)},
    "strain": {"A_mode": ("a_mode", str), "A": ("amplitude", number), "delta": ("delta", number),
               "eta": ("eta", number), "coverage": ("coverage", str)},
    "checks": {"enabled": ("checks", checks_list), "ratio": ("thresholds.ratio", number),
               "block_fraction": ("thresholds.block_fraction", number),
               "block_ratio": ("thresholds.block_ratio", number),
               "window": ("thresholds.window", integer), "expected": ("expected", str)},
    "output": {"snapshot_every": ("output.snapshot_every", integer), "dir": ("output.directory", str)},
}


@dataclass
class OutputOptions:
    directory: str | None = None
    snapshot_every: int = 0


@dataclass
class ConfigFile:
    scenario: ScenarioConfig
    output: OutputOptions = field(default_factory=OutputOptions)


def load_config(path) -> ConfigFile:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    section = ""
    values: dict[str, tuple[int, object]] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or line[1:-1].strip() not in SECTIONS or not line[1:-1].strip():
                raise ConfigError(f"{path}:{lineno}: unknown section {line}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, text = (s.strip() for s in line.split("=", 1))
        if key not in SECTIONS[section]:
            where = f"[{section}]" if section else "top level"
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} in {where}")
        target, conv = SECTIONS[section][key]
        if target in values:
            raise ConfigError(f"{path}:{lineno}: {key!r} given twice")
        try:
            values[target] = (lineno, conv(text))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {key}: {exc}") from None

    try:
        base = preset(values.pop("preset")[1]) if "preset" in values else ScenarioConfig()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    plain = {k: v for k, (_, v) in values.items() if "." not in k}
    thresholds = {k.split(".")[1]: v for k, (_, v) in values.items() if k.startswith("thresholds.")}
    output = {k.split(".")[1]: v for k, (_, v) in values.items() if k.startswith("output.")}
    if "mass" in plain and "name" not in plain and base.name != "custom":
        plain.setdefault("name", base.name)
    try:
        cfg = replace(base, thresholds=replace(base.thresholds, **thresholds), **plain)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ConfigFile(cfg, OutputOptions(**output))


def parse_config(path) -> ScenarioConfig:
    return load_config(path).scenario


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    config: dict
    version: str
    started: float
    finished: float | None = None
    verdict: str | None = None
    t_detect: float | None = None
    resolved: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    error: str | None = None

    def write(self, path) -> None:
        lines = [MANIFEST_MAGIC]
        flat = {"version": self.version,
                "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.started)),
                "finished": (time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.finished))
                             if self.finished else "none"),
                "wall_seconds": f"{(self.finished or time.time()) - self.started:.3f}",
                "verdict": self.verdict or "none",
                "t_detect": "none" if self.t_detect is None else repr(self.t_detect),
                "error": self.error or "none"}
        flat.update({f"config.{k}": _fmt(v) for k, v in self.config.items()})
        flat.update({f"resolved.{k}": _fmt(v) for k, v in self.resolved.items()})
        flat.update({f"check.{k}": "pass" if v else "fail" for k, v in self.checks.items()})
        flat.update({f"file.{i}": name for i, name in enumerate(sorted(self.files))})
        lines += [f"{k} = {v}" for k, v in flat.items()]
        Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MANIFEST_MAGIC:
        raise ValueError(f"{path}: not a {MANIFEST_MAGIC} file")
    return dict((s.strip() for s in ln.split("=", 1)) for ln in lines[1:])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(map(str, v)) or "none"
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True)
    return str(v)


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pks-strain", description="Run a chemotaxis-with-strain scenario.")
    p.add_argument("--config", help="key = value scenario file")
    p.add_argument("--scenario", choices=PRESETS, help="named preset")
    p.add_argument("--out", help="output directory (default runs/<name>)")
    p.add_argument("--resolution", type=int, help="cells per side N")
    p.add_argument("--tmax", type=float, help="final time")
    p.add_argument("--snapshot-every", type=int, help="write a field snapshot every k outputs")
    p.add_argument("--checks", help="comma list, 'all' or 'none'")
    p.add_argument("--quiet", action="store_true")
    return p


def _resolve(args) -> tuple[ScenarioConfig, OutputOptions]:
    if args.config and args.scenario:
        raise ConfigError("give only one of --config and --scenario (use 'preset =' in the file)")
    if args.config:
        loaded = load_config(args.config)
        cfg, out = loaded.scenario, loaded.output
    elif args.scenario:
        cfg, out = preset(args.scenario), OutputOptions()
    else:
        raise ConfigError("give --config or --scenario")
    over = {}
    if args.resolution is not None:
        over["cells"] = args.resolution
    if args.tmax is not None:
        over["t_max"] = args.tmax
    if args.checks is not None:
        over["checks"] = checks_list(args.checks)
    cfg = replace(cfg, **over)
    if args.snapshot_every is not None:
        out.snapshot_every = args.snapshot_every
    if args.out:
        out.directory = args.out
    if out.directory is None:
        out.directory = str(Path("runs") / cfg.name)
    return cfg, out


def _error_line(exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc)})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    manifest = None
    out_dir = None
    try:
        cfg, opts = _resolve(args)
        out_dir = Path(opts.directory)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(config=_config_echo(cfg), version=__version__, started=started)
        snap_dir = out_dir / "snapshots"
        count = [0]

        def observer(rec, state):
            if not args.quiet:
                print(f"t={rec.t:.6g} M={rec.M:.6g} max_n={rec.max_n:.4g} E={rec.E:.6g}",
                      file=sys.stderr)
            if opts.snapshot_every and count[0] % opts.snapshot_every == 0:
                snap_dir.mkdir(exist_ok=True)
                name = f"snapshots/field_{count[0]:05d}.txt"
                write_snapshot(out_dir / name, state.n, rec.t)
                manifest.files.append(name)
            count[0] += 1

        result = run(cfg, observer=observer)
        dg.write_records(out_dir / "diagnostics.csv", result.history)
        manifest.files.append("diagnostics.csv")
        for name, reps in result.reports.items():
            if reps and isinstance(reps[0], dg.InequalityReport):
                fname = f"check_{name}.csv"
                dg.write_reports(out_dir / fname, reps)
                manifest.files.append(fname)
        manifest.verdict = result.verdict
        manifest.t_detect = result.t_detect
        manifest.checks = result.checks
        manifest.resolved = {"A": result.amplitude, "epsilon": result.epsilon,
                             "R2": result.hypotheses.r2, "T_box": result.t_box,
                             "t_end": result.t_end, "steps": result.ledger.steps,
                             "dt_policy": f"cfl={cfg.cfl} (l1 speed), halve on breach above 0.5",
                             "hypotheses": {k: bool(v) for k, v in result.hypotheses.flags.items()}}
        manifest.finished = time.time()
        manifest.files.append("manifest.txt")
        manifest.write(out_dir / "manifest.txt")
        if not args.quiet:
            print(f"{cfg.name}: {result.verdict} at t={result.t_end:.6g}; "
                  f"checks {'passed' if result.checks_passed else 'FAILED'}", file=sys.stderr)
        return EXIT_BLOWN_UP if result.verdict == BLOWN_UP else EXIT_OK
    except Exception as exc:
        print(_error_line(exc), file=sys.stderr)
        if out_dir is None and args.out:
            out_dir = Path(args.out)
        if out_dir is not None:
            manifest = manifest or RunManifest(config={}, version=__version__, started=started)
            manifest.error = _error_line(exc)
            manifest.finished = time.time()
            manifest.files.append("manifest.txt")
            try:
                out_dir.mkdir(parents=True, exist_ok=True)
                manifest.write(out_dir / "manifest.txt")
            except OSError:
                pass
        return EXIT_ERROR


def _config_echo(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    d["thresholds"] = asdict(cfg.thresholds)
    d["epsilon_resolved"] = cfg.resolved_epsilon
    d["h"] = cfg.grid.h
    return d


if __name__ == "__main__":
    sys.exit(main())
