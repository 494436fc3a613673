"""Command line front end: configs, sweeps, seeds and CSV output.

Every subcommand runs the Cartesian product of its sweep axes times the list
of seeds and writes one CSV row per (cell, seed) -- per user for ``alloc``.
Columns are fixed per subcommand: ``schema``, the config fields in
declaration order, ``seed``, then the result columns (see ``COLUMNS``).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import enum
import itertools
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from .allocator import (
    AllocMethod,
    AllocationProblem,
    allocate,
    kkt_certificate,
    objective,
)
from .game import GameParams, enumerate_pure_nash, solve_equilibrium_theorem
from .reliability import (
    RetransParams,
    failure_prob_exact_tau3,
    failure_prob_light_traffic,
    failure_prob_monte_carlo,
)
from .simulator import ConfigError, MetricsReport, SimConfig, run_batch

MAX_CELLS = 10**6
SCHEMA_VERSION = 1
# runs handed to one worker at a time; fixed so output never depends on --workers
SIM_CHUNK = 128


# ---------------------------------------------------------------- per-command configs


@dataclass
class ReliabilityConfig:
    rho_tilde: float = 0.01
    p: float = 0.3
    tau: int = 3
    trials: int = 10**6

    def __post_init__(self) -> None:
        try:
            RetransParams(self.rho_tilde, self.p, self.tau)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError(f"trials must be an integer >= 1, got {self.trials!r}")
        self.tau = int(self.tau)
        self.trials = int(self.trials)


@dataclass
class GameConfig:
    rho: float = 6.5e-4
    p: float = 0.3
    tau: int = 8
    N: int = 60
    epsilon: float = 1e-5
    b: float = 0.8
    a: float = 0.5
    c: float = 3.2e4
    r: float = 1.2e6

    def __post_init__(self) -> None:
        try:
            self.params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.N = int(self.N)
        self.tau = int(self.tau)

    def params(self) -> GameParams:
        return GameParams(**dataclasses.asdict(self))


@dataclass
class AllocConfig:
    """``input`` names an instance file: one ``L <budget>`` line and one ``<id> <z> <r>`` line per user."""

    input: str = ""
    method: AllocMethod = AllocMethod.WATER_FILLING

    def __post_init__(self) -> None:
        try:
            self.method = AllocMethod(self.method)
        except ValueError as exc:
            raise ConfigError(f"method: {exc}") from exc
        if not self.input:
            raise ConfigError("input: an instance file is required for alloc")


def read_alloc_instance(path: str | os.PathLike) -> tuple[list[str], AllocationProblem]:
    """Parse an allocation instance file. ``#`` starts a comment."""
    ids, z, r = [], [], []
    L = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "L":
                    if len(parts) != 2 or L is not None:
                        raise ValueError("expected exactly one 'L <budget>' line")
                    L = float(parts[1])
                elif len(parts) == 3:
                    ids.append(parts[0])
                    z.append(float(parts[1]))
                    r.append(float(parts[2]))
                else:
                    raise ValueError("expected '<id> <z> <r>'")
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    if L is None:
        raise ConfigError(f"{path}: missing 'L <budget>' line")
    if not ids:
        raise ConfigError(f"{path}: no users")
    try:
        problem = AllocationProblem(np.array(z), np.array(r), L)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not problem.feasible:
        raise ConfigError(f"{path}: L={L} exceeds the total request {float(problem.r.sum())}")
    return ids, problem


# ---------------------------------------------------------------- runners


def _run_reliability(cells: list[tuple[Any, int]], workers: int, trace) -> list[list[dict]]:
    out = []
    for cfg, seed in cells:
        params = RetransParams(cfg.rho_tilde, cfg.p, cfg.tau)
        mc = failure_prob_monte_carlo(params, cfg.trials, seed, workers=workers)
        out.append([{
            "exact_tau3": failure_prob_exact_tau3(params) if cfg.tau == 3 else None,
            "light_traffic": failure_prob_light_traffic(params),
            "monte_carlo": mc.estimate,
            "std_error": mc.std_error,
            "failures": mc.failures,
        }])
    return out


def _fmt_profiles(profiles) -> str:
    return ";".join(f"{p.n1}:{p.n2}" for p in profiles)


def _run_game(cells, workers, trace) -> list[list[dict]]:
    out = []
    for cfg, _seed in cells:
        params = cfg.params()
        res = solve_equilibrium_theorem(params)
        brute = enumerate_pure_nash(params) if params.N <= 200 else None
        out.append([{
            "case": res.case.value,
            "n1_star": res.n1_star,
            "n2_star_zero": res.n2_star_zero,
            "n2_star_n1": res.n2_star_n1,
            "equilibria": _fmt_profiles(sorted(res.equilibria)),
            "socially_optimal": _fmt_profiles(res.socially_optimal),
            "social_payoff": res.social_payoffs[res.chosen.as_tuple()],
            "brute_force": None if brute is None else _fmt_profiles(sorted(brute)),
            "agrees": None if brute is None else sorted(brute) == sorted(res.equilibria),
        }])
    return out


def _run_alloc(cells, workers, trace) -> list[list[dict]]:
    out = []
    for cfg, seed in cells:
        ids, problem = read_alloc_instance(cfg.input)
        x = allocate(cfg.method, problem, np.random.default_rng(seed)).x
        cert = kkt_certificate(problem, x)
        obj = objective(problem, x)
        out.append([
            {"user": uid, "z": float(problem.z[j]), "r": float(problem.r[j]), "L": problem.L,
             "x": float(x[j]), "objective": obj, "kkt_certified": cert.certifies()}
            for j, uid in enumerate(ids)
        ])
    return out


def _run_simulate(cells, workers, trace) -> list[list[dict]]:
    configs = [dataclasses.replace(cfg, seed=seed) for cfg, seed in cells]
    if trace is not None:
        reports = run_batch(configs, trace)
    else:
        chunks = [configs[i : i + SIM_CHUNK] for i in range(0, len(configs), SIM_CHUNK)]
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(run_batch, chunks))
        else:
            parts = [run_batch(c) for c in chunks]
        reports = [rep for part in parts for rep in part]
    return [[rep.metrics()] for rep in reports]


@dataclass(frozen=True)
class Command:
    name: str
    config_cls: type
    result_columns: tuple[str, ...]
    run: Callable[[list, int, Any], list[list[dict]]]
    help: str

    @property
    def config_fields(self) -> list[str]:
        return [f.name for f in dataclasses.fields(self.config_cls) if f.name != "seed"]

    @property
    def columns(self) -> list[str]:
        return ["schema", *self.config_fields, "seed", *self.result_columns]


COMMANDS = {
    "reliability": Command(
        "reliability", ReliabilityConfig,
        ("exact_tau3", "light_traffic", "monte_carlo", "std_error", "failures"),
        _run_reliability, "URLLC failure probability: closed form, light traffic and Monte Carlo",
    ),
    "game": Command(
        "game", GameConfig,
        ("case", "n1_star", "n2_star_zero", "n2_star_n1", "equilibria", "socially_optimal",
         "social_payoff", "brute_force", "agrees"),
        _run_game, "region-sizing game: equilibrium case and profiles",
    ),
    "alloc": Command(
        "alloc", AllocConfig,
        ("user", "z", "r", "L", "x", "objective", "kkt_certified"),
        _run_alloc, "grant allocation for one instance file",
    ),
    "simulate": Command(
        "simulate", SimConfig, MetricsReport.METRIC_COLUMNS,
        _run_simulate, "frame-by-frame simulation",
    ),
}

COLUMNS = {name: cmd.columns for name, cmd in COMMANDS.items()}


# ---------------------------------------------------------------- experiment spec


@dataclass
class ExperimentSpec:
    subcommand: str
    base: Any
    sweep: dict[str, list] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str | None = None

    @property
    def command(self) -> Command:
        return COMMANDS[self.subcommand]

    def cell_count(self) -> int:
        return math.prod(len(v) for v in self.sweep.values()) * len(self.seeds)

    def cells(self) -> list[tuple[Any, int]]:
        """(config, seed) pairs: sweep axes in declaration order, last axis fastest, seeds innermost."""
        names = list(self.sweep)
        out = []
        for combo in itertools.product(*(self.sweep[n] for n in names)):
            cfg = _build(self.command, {**_as_plain(self.base), **dict(zip(names, combo))})
            for seed in self.seeds:
                out.append((cfg, seed))
        return out

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "base": {k: v for k, v in _as_plain(self.base).items() if k != "seed"},
            "sweep": {k: [_plain_value(v) for v in vals] for k, vals in self.sweep.items()},
            "seeds": list(self.seeds),
            "out": self.out,
        }


def _plain_value(v):
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, np.generic):
        return v.item()
    return v


def _as_plain(cfg) -> dict:
    return {f.name: _plain_value(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def _build(command: Command, values: dict):
    known = {f.name for f in dataclasses.fields(command.config_cls)}
    for k in values:
        if k not in known:
            raise ConfigError(f"unknown field {k!r} for {command.name}; known fields: {', '.join(sorted(known))}")
    values = dict(values)
    defaults = {f.name: f.default for f in dataclasses.fields(command.config_cls)}
    for k, v in values.items():
        d = defaults[k]
        numeric = isinstance(d, (int, float)) and not isinstance(d, (bool, enum.Enum))
        if numeric and isinstance(v, str):
            parsed = parse_scalar(v)
            if not isinstance(parsed, (int, float)) or isinstance(parsed, bool):
                raise ConfigError(f"{k} must be a number, got {v!r}")
            values[k] = parsed
    try:
        return command.config_cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _check_seed(s) -> int:
    if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {s!r}")
    return s


def spec_from_dict(data: dict, subcommand: str | None = None) -> ExperimentSpec:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(data) - {"subcommand", "base", "sweep", "seeds", "out"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    name = subcommand or data.get("subcommand")
    if data.get("subcommand") not in (None, name):
        raise ConfigError(f"config is for {data['subcommand']!r}, not {name!r}")
    if name not in COMMANDS:
        raise ConfigError(f"subcommand must be one of {', '.join(COMMANDS)}, got {name!r}")
    cmd = COMMANDS[name]
    base = data.get("base") or {}
    if not isinstance(base, dict):
        raise ConfigError("base must be a mapping of field: value")
    sweep = data.get("sweep") or {}
    if not isinstance(sweep, dict):
        raise ConfigError("sweep must be a mapping of field: [values]")
    known = set(cmd.config_fields)
    clean_sweep = {}
    for k, vals in sweep.items():
        if k not in known:
            raise ConfigError(f"sweep axis {k!r} is not a {name} field" + ("; use --seed" if k == "seed" else ""))
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"sweep axis {k!r} needs a non-empty list of values")
        clean_sweep[k] = list(vals)
    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds must be a non-empty list")
    spec = ExperimentSpec(
        subcommand=name,
        base=_build(cmd, base),
        sweep=clean_sweep,
        seeds=[_check_seed(s) for s in seeds],
        out=data.get("out"),
    )
    if spec.cell_count() > MAX_CELLS:
        raise ConfigError(f"sweep has {spec.cell_count()} cells, limit is {MAX_CELLS}")
    return spec


def load_spec(path: str | os.PathLike, subcommand: str | None = None) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return spec_from_dict(data, subcommand)


def dump_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False)


def parse_scalar(text: str):
    """int, then float (so ``1e5`` is a number), then any YAML scalar such as ``null`` or a name."""
    text = text.strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return yaml.safe_load(text)


def parse_sweep(text: str) -> tuple[str, list]:
    """``FIELD=v1,v2,...`` with each value read as a YAML scalar (numbers, null, strings)."""
    name, sep, rest = text.partition("=")
    name = name.strip()
    if not sep or not name or not rest.strip():
        raise ConfigError(f"--sweep expects FIELD=v1,v2,..., got {text!r}")
    values = []
    for tok in rest.split(","):
        tok = tok.strip()
        if not tok:
            raise ConfigError(f"--sweep {name}: empty value in {text!r}")
        values.append(parse_scalar(tok))
    return name, values


# ---------------------------------------------------------------- output


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.generic):
        return format_value(v.item())
    if isinstance(v, enum.Enum):
        return str(v.value)
    return str(v)


def build_rows(spec: ExperimentSpec, cells, results) -> list[list[str]]:
    cmd = spec.command
    schema = f"{cmd.name}/{SCHEMA_VERSION}"
    rows = []
    for (cfg, seed), res_rows in zip(cells, results):
        plain = _as_plain(cfg)
        prefix = [schema, *(format_value(plain[k]) for k in cmd.config_fields), str(seed)]
        for res in res_rows:
            rows.append(prefix + [format_value(res.get(k)) for k in cmd.result_columns])
    return rows


def write_csv_atomic(path: str | os.PathLike, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    """Write the whole file or nothing: rows go to a temporary file that replaces ``path`` at the end."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def summary_table(header: Sequence[str], rows: Sequence[Sequence[str]], keep: Sequence[str], limit: int = 40) -> str:
    idx = [header.index(k) for k in keep if k in header]
    cols = [header[i] for i in idx]
    body = [[row[i] for i in idx] for row in rows[:limit]]
    widths = [max(len(c), *(len(r[j]) for r in body)) if body else len(c) for j, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in body]
    if len(rows) > limit:
        lines.append(f"... {len(rows) - limit} more rows")
    return "\n".join(lines)


SUMMARY_KEYS = {
    "reliability": ("rho_tilde", "p", "tau", "seed", "exact_tau3", "light_traffic", "monte_carlo", "std_error"),
    "game": ("N", "a", "r", "case", "n1_star", "equilibria", "socially_optimal", "agrees"),
    "alloc": ("method", "seed", "user", "z", "r", "x", "kkt_certified"),
    "simulate": ("allocator", "split_strategy", "m", "a", "seed", "urllc_loss_prob", "embb_loss_prob",
                 "jain_index", "social_payoff"),
}


def run_experiment(spec: ExperimentSpec, workers: int = 1, trace_path: str | None = None,
                   stdout=None) -> int:
    """Run every (cell, seed), write the CSV (if ``spec.out``) and print a summary. Returns the exit status."""
    stdout = stdout or sys.stdout
    cmd = spec.command
    cells = spec.cells()
    trace = None
    try:
        if trace_path is not None:
            if cmd.name != "simulate":
                raise ConfigError("--trace only applies to simulate")
            trace = open(trace_path, "w", encoding="utf-8")
        results = cmd.run(cells, workers, trace)
    finally:
        if trace is not None:
            trace.close()
    rows = build_rows(spec, cells, results)
    header = cmd.columns
    if spec.out:
        write_csv_atomic(spec.out, header, rows)
    else:
        w = csv.writer(stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return 0
    print(summary_table(header, rows, SUMMARY_KEYS[cmd.name]), file=stdout)
    print(f"wrote {len(rows)} rows to {spec.out}", file=stdout)
    return 0


# ---------------------------------------------------------------- argv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uplinkslice", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, cmd in COMMANDS.items():
        p = sub.add_parser(name, help=cmd.help, description=cmd.help)
        p.add_argument("--config", metavar="PATH", help="YAML experiment spec (base / sweep / seeds / out)")
        p.add_argument("--seed", metavar="U64", type=int, action="append",
                       help="seed; repeat for several (replaces the config's seeds)")
        p.add_argument("--out", metavar="PATH", help="CSV output path (default: CSV to stdout)")
        p.add_argument("--sweep", metavar="FIELD=v1,v2,...", action="append", default=[],
                       help="add or replace a sweep axis; repeatable")
        p.add_argument("--set", metavar="FIELD=VALUE", action="append", default=[],
                       help="override one base field; repeatable")
        p.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on this)")
        p.add_argument("--dump-config", action="store_true", help="print the resolved spec as YAML and exit")
        if name == "simulate":
            p.add_argument("--frames", type=int, metavar="N", help="override the number of frames")
            p.add_argument("--trace", metavar="PATH", help="write one JSON line per run per frame")
        if name == "alloc":
            p.add_argument("--input", metavar="PATH", help="instance file (sets base field 'input')")
    return parser


def resolve_spec(args: argparse.Namespace) -> ExperimentSpec:
    data: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: config must be a mapping")
    data = dict(data)
    base = dict(data.get("base") or {})
    for item in args.set:
        k, sep, v = item.partition("=")
        if not sep or not k.strip():
            raise ConfigError(f"--set expects FIELD=VALUE, got {item!r}")
        base[k.strip()] = parse_scalar(v)
    if getattr(args, "frames", None) is not None:
        base["frames"] = args.frames
    if getattr(args, "input", None) is not None:
        base["input"] = args.input
    data["base"] = base
    sweep = dict(data.get("sweep") or {})
    for s in args.sweep:
        k, vals = parse_sweep(s)
        sweep[k] = vals
    data["sweep"] = sweep
    if args.seed:
        data["seeds"] = args.seed
    if args.out:
        data["out"] = args.out
    return spec_from_dict(data, args.subcommand)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        spec = resolve_spec(args)
        if args.dump_config:
            sys.stdout.write(dump_spec(spec))
            return 0
        return run_experiment(spec, workers=args.workers, trace_path=getattr(args, "trace", None))
    except ConfigError as exc:
        print(f"uplinkslice {args.subcommand}: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"uplinkslice {args.subcommand}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
