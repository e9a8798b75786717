"""Experiment runner: configs, single runs, sweeps, profiles and the self test.

Config files are flat ``key = value`` text::

    # comment lines and blank lines are ignored
    problem = example1
    k = 2
    N = 10
    dt = 0.05
    backend = dbdp
    seed = 0

Keys are the :class:`RunConfig` field names. Values are parsed by field
type: integers, floats, ``true``/``false`` for flags, ``none`` for optional
fields, bare text for strings. Unknown keys and repeated keys are errors.
Every key may also be given as a command-line flag (``--N 20``); flags win
over the file. ``seed`` is mandatory.

Verbs::

    ldgbspde run      --config FILE [--KEY VALUE ...] [--out-dir DIR]
    ldgbspde sweep    [--config FILE ...] [--preset table1|table2] [--grid KEY=V1,V2 ...]
                      [--where KEY=VALUE ...] [--jobs J] --csv FILE
    ldgbspde profile  (--report FILE | --config FILE ...) --points P --out FILE
    ldgbspde selftest [--all]

Sweep output is a CSV with the fixed header
``problem,k,N,dt,backend,seed,R_E,wall_seconds`` and a JSON sidecar
(``<csv>.json``) holding the full reports. Failed runs appear as rows with
``R_E = nan``; their status and message are in the sidecar. ``--no-timing``
writes zero wall times so that reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import itertools
import json
import math
import os
import shutil
import sys
import time
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__
from .ldg import LdgOperator
from .marchers import DbdpConfig, LsmcConfig, solve_dbdp, solve_lsmc, uniform_grid
from .meshspace import CoefField, make_space
from .problems import PROBLEMS, get_problem, relative_error

CSV_HEADER = "problem,k,N,dt,backend,seed,R_E,wall_seconds"

# fields that choose where results go, not what is computed
NON_SEMANTIC = ("out_dir", "checkpoint_dir", "record_timing")


class ConfigError(ValueError):
    pass


class RunError(RuntimeError):
    """A backend failure, carrying the config that produced it."""

    def __init__(self, message, config, cause=None):
        super().__init__(message)
        self.config = config
        self.cause = cause


@dataclass
class RunConfig:
    problem: str = "example1"
    k: int = 2
    N: int = 10
    dt: float = 0.05
    T: float = 0.5
    backend: str = "dbdp"
    basis: str = "legendre"
    quad_order: typing.Optional[int] = None
    flux: str = "u-minus"
    seed: typing.Optional[int] = None
    # lsmc
    lsmc_paths: int = 200_000
    lsmc_degree: int = 6
    lsmc_chord_iterations: int = 2
    # dbdp
    dbdp_batch: int = 256
    dbdp_steps: int = 400
    dbdp_terminal_steps: typing.Optional[int] = None
    dbdp_init_fit_steps: int = 1000
    dbdp_lr: float = 1e-2
    dbdp_decay: float = 0.5
    dbdp_decay_every: int = 200
    dbdp_beta1: float = 0.9
    dbdp_beta2: float = 0.99
    dbdp_eps: float = 1e-8
    dbdp_warm_start: bool = True
    # outputs
    out_dir: typing.Optional[str] = None
    checkpoint_dir: typing.Optional[str] = None
    record_timing: bool = True

    def validate(self) -> RunConfig:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.problem in PROBLEMS, f"unknown problem {self.problem!r}; available: {', '.join(PROBLEMS)}")
        need(self.seed is not None, "seed is mandatory")
        need(isinstance(self.seed, int) and 0 <= self.seed < 2**63, "seed must be a non-negative integer")
        need(1 <= self.k <= 8, "k must be in 1..8")
        need(2 <= self.N <= 10_000, "N must be in 2..10000")
        need(math.isfinite(self.T) and self.T > 0, "T must be positive")
        need(math.isfinite(self.dt) and 0 < self.dt <= self.T, "dt must be in (0, T]")
        need(self.backend in ("dbdp", "lsmc"), "backend must be dbdp or lsmc")
        need(self.basis in ("legendre", "lagrange"), "basis must be legendre or lagrange")
        need(self.quad_order is None or self.k + 1 <= self.quad_order <= 32, "quad_order must be in k+1..32")
        need(self.flux in ("u-minus", "u-plus"), "flux must be u-minus or u-plus")
        need(self.lsmc_paths >= 1 and self.lsmc_degree >= 0 and self.lsmc_chord_iterations >= 1,
             "lsmc settings out of range")
        need(self.dbdp_batch >= 2 and self.dbdp_steps >= 1 and self.dbdp_init_fit_steps >= 0,
             "dbdp batch must be >= 2 and steps >= 1")
        need(self.dbdp_terminal_steps is None or self.dbdp_terminal_steps >= 1, "dbdp_terminal_steps must be >= 1")
        need(self.dbdp_lr > 0 and 0 < self.dbdp_decay <= 1 and self.dbdp_eps > 0, "dbdp optimizer settings out of range")
        need(0 <= self.dbdp_beta1 < 1 and 0 <= self.dbdp_beta2 < 1, "Adam betas must be in [0, 1)")
        return self

    # --- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: RunConfig | None = None) -> RunConfig:
        cfg = dataclasses.replace(base) if base is not None else cls()
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in seen:
                raise ConfigError(f"line {lineno}: repeated key {key!r}")
            seen.add(key)
            cfg = cfg.with_value(key, value)
        return cfg

    def with_value(self, key: str, text) -> RunConfig:
        types = _field_types()
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        value = _parse_value(types[key], text) if isinstance(text, str) else text
        return dataclasses.replace(self, **{key: value})

    def semantic_text(self) -> str:
        return "".join(line + "\n" for line in self.to_text().splitlines()
                       if line.split(" = ", 1)[0] not in NON_SEMANTIC)

    def config_hash(self) -> str:
        """git-style blob hash of the semantic fields."""
        body = self.semantic_text().encode("utf-8")
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def _field_types() -> dict:
    hints = typing.get_type_hints(RunConfig)
    return {f.name: hints[f.name] for f in fields(RunConfig)}


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(tp, text: str):
    opt = typing.get_origin(tp) is typing.Union and type(None) in typing.get_args(tp)
    if opt:
        if text.lower() == "none":
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    try:
        if tp is bool:
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {tp.__name__}") from None


# --- runs ------------------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    config_hash: str
    status: str
    R_E: float
    wall_seconds: float
    version: str = __version__
    error: str | None = None
    history: list = field(default_factory=list)
    energy: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    u0_coef: list | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2, allow_nan=True) + "\n"

    def csv_row(self) -> str:
        c = self.config
        return ",".join([c["problem"], str(c["k"]), str(c["N"]), repr(float(c["dt"])), c["backend"],
                         str(c["seed"]), repr(float(self.R_E)), f"{self.wall_seconds:.3f}"])

    def u0_field(self) -> CoefField:
        if self.u0_coef is None:
            raise ValueError("report carries no solution coefficients")
        cfg = RunConfig(**self.config)
        space = _build_space(cfg, get_problem(cfg.problem, cfg.T))
        return CoefField(space, np.array(self.u0_coef))


def _build_space(cfg: RunConfig, problem):
    return make_space(problem.b, cfg.N, cfg.k, cfg.basis, cfg.quad_order)


def _history_summary(history):
    out = []
    for h in history:
        out.append({k: v for k, v in h.items() if k != "losses"})
    return out


def solve(cfg: RunConfig):
    """Build the discretization and run the backend; returns ``(problem, SolveResult)``."""
    cfg.validate()
    problem = get_problem(cfg.problem, cfg.T)
    space = _build_space(cfg, problem)
    op = LdgOperator(space, problem.coefs, cfg.flux)
    grid = uniform_grid(cfg.T, cfg.dt)
    if cfg.backend == "lsmc":
        lc = LsmcConfig(paths=cfg.lsmc_paths, degree=cfg.lsmc_degree, seed=cfg.seed,
                        chord_iterations=cfg.lsmc_chord_iterations)
        res = solve_lsmc(op, grid, lc, gamma0=problem.gamma0)
    else:
        dc = DbdpConfig(batch=cfg.dbdp_batch, steps=cfg.dbdp_steps, terminal_steps=cfg.dbdp_terminal_steps,
                        init_fit_steps=cfg.dbdp_init_fit_steps, lr=cfg.dbdp_lr, decay=cfg.dbdp_decay,
                        decay_every=cfg.dbdp_decay_every, beta1=cfg.dbdp_beta1, beta2=cfg.dbdp_beta2,
                        eps=cfg.dbdp_eps, warm_start=cfg.dbdp_warm_start, seed=cfg.seed,
                        checkpoint_dir=cfg.checkpoint_dir)
        res = solve_dbdp(op, grid, dc)
    return problem, res


def run(cfg: RunConfig) -> RunReport:
    """One configured solve; writes ``report.json`` and ``result.csv`` into ``out_dir`` if set.

    Backend failures raise :class:`RunError` and leave no partial outputs.
    """
    cfg.validate()
    created = [p for p in (cfg.out_dir, cfg.checkpoint_dir) if p and not os.path.exists(p)]
    start = time.perf_counter()
    try:
        problem, res = solve(cfg)
        R_E = relative_error(res.u0_field, problem.u0)
        wall = time.perf_counter() - start if cfg.record_timing else 0.0
        settings = dict(res.settings)
        settings["time_steps"] = int(round(cfg.T / cfg.dt))
        report = RunReport(config=cfg.to_dict(), config_hash=cfg.config_hash(), status="ok", R_E=float(R_E),
                           wall_seconds=wall, history=_history_summary(res.history), energy=res.energy,
                           settings=settings, u0_coef=res.u0_field.coef.tolist())
        if cfg.out_dir:
            write_outputs(cfg.out_dir, [report])
        return report
    except Exception as exc:
        for p in created:
            shutil.rmtree(p, ignore_errors=True)
        raise RunError(f"{type(exc).__name__}: {exc} [config {cfg.config_hash()[:12]}: "
                       f"{cfg.semantic_text().strip().replace(chr(10), '; ')}]", cfg, exc) from exc


def failed_report(cfg: RunConfig, exc: BaseException, wall: float) -> RunReport:
    cause = getattr(exc, "cause", None) or exc
    return RunReport(config=cfg.to_dict(), config_hash=cfg.config_hash(), status="failed", R_E=float("nan"),
                     wall_seconds=wall if cfg.record_timing else 0.0, error=f"{type(cause).__name__}: {cause}")


def _run_or_record(cfg: RunConfig) -> RunReport:
    start = time.perf_counter()
    try:
        return run(dataclasses.replace(cfg, out_dir=None))
    except Exception as exc:  # recorded, never aborts the sweep
        return failed_report(cfg, exc, time.perf_counter() - start)


def write_outputs(out_dir: str, reports: list) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "result.csv"), reports)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(reports[0].to_json() if len(reports) == 1 else _reports_json(reports))


def _reports_json(reports) -> str:
    return json.dumps([dataclasses.asdict(r) for r in reports], sort_keys=True, indent=2) + "\n"


def write_csv(path: str, reports: list) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in reports:
            fh.write(r.csv_row() + "\n")


def sweep(configs: list, csv_path: str, jobs: int = 1) -> list:
    """Run every config; one CSV row each plus ``<csv_path>.json`` with the full reports."""
    if not configs:
        raise ConfigError("no runnable configs")
    for c in configs:
        c.validate()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_or_record, configs))
    else:
        reports = [_run_or_record(c) for c in configs]
    write_csv(csv_path, reports)
    with open(csv_path + ".json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_reports_json(reports))
    return reports


# the published accuracy grids: dt = 0.05 with N = 10, 15, 20, 50 and dt = 0.0167 with N = 30, 50
TABLE_GRID = [(0.05, 10), (0.05, 15), (0.05, 20), (0.05, 50), (0.0167, 30), (0.0167, 50)]
PRESETS = {"table1": "example1", "table2": "example2"}


def preset_configs(name: str, base: RunConfig, ks=(2, 3)) -> list:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return [dataclasses.replace(base, problem=PRESETS[name], k=k, dt=dt, N=N)
            for k in ks for dt, N in TABLE_GRID]


def expand_grid(configs: list, grid: list) -> list:
    """Cartesian product of ``KEY=V1,V2,...`` axes over each base config."""
    axes = []
    for item in grid:
        key, _, vals = item.partition("=")
        if not vals:
            raise ConfigError(f"grid axis must be KEY=V1,V2,..., got {item!r}")
        axes.append((key.strip(), [v.strip() for v in vals.split(",")]))
    out = []
    for base in configs:
        for combo in itertools.product(*[vals for _, vals in axes]):
            c = base
            for (key, _), v in zip(axes, combo):
                c = c.with_value(key, v)
            out.append(c)
    return out


def filter_configs(configs: list, where: list) -> list:
    out = configs
    for item in where:
        key, _, val = item.partition("=")
        key = key.strip()
        probe = RunConfig().with_value(key, val.strip())
        out = [c for c in out if getattr(c, key) == getattr(probe, key)]
    return out


# --- profiles ------------------------------------------------------------------------


def emit_profile(report: RunReport, grid_points: int, path: str) -> None:
    """Write ``x,u_h,u0`` at ``grid_points`` uniform points of ``[0, b]``."""
    if not isinstance(grid_points, (int, np.integer)) or grid_points < 1:
        raise ValueError("grid_points must be a positive integer")
    u_h = report.u0_field()
    cfg = RunConfig(**report.config)
    problem = get_problem(cfg.problem, cfg.T)
    x = np.linspace(0.0, problem.b, grid_points) if grid_points > 1 else np.zeros(1)
    uh = np.asarray(u_h(x), dtype=float).reshape(-1)
    u0 = np.asarray(problem.u0(x), dtype=float).reshape(-1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,u_h,u0\n")
        for a, b, c in zip(x, uh, u0):
            fh.write(f"{float(a)!r},{float(b)!r},{float(c)!r}\n")


def load_report(path: str) -> RunReport:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, list):
        if len(data) != 1:
            raise ValueError("profile needs a single report; the file holds several")
        data = data[0]
    return RunReport(**data)


# --- command line ------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", action="append", default=[], help="flat key = value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest="set_" + f.name, default=None, metavar="VALUE")
    p.add_argument("--no-timing", action="store_true", help="write zero wall times (byte-stable outputs)")


def _configs_from_args(args) -> list:
    base = RunConfig()
    files = args.config or [None]
    out = []
    for path in files:
        cfg = base
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                cfg = RunConfig.from_text(fh.read(), base)
        for f in fields(RunConfig):
            val = getattr(args, "set_" + f.name)
            if val is not None:
                cfg = cfg.with_value(f.name, val)
        if args.no_timing:
            cfg = dataclasses.replace(cfg, record_timing=False)
        out.append(cfg)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ldgbspde", description="LDG + backward solvers for 1-D backward SPDEs")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="one configured solve")
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="many solves into one CSV")
    _add_config_flags(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--ks", default="2,3", help="k values for --preset")
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2")
    p.add_argument("--where", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", required=True)

    p = sub.add_parser("profile", help="solution profile data")
    _add_config_flags(p)
    p.add_argument("--report", help="report JSON from an earlier run")
    p.add_argument("--points", type=int, default=512)
    p.add_argument("--out", required=True)

    p = sub.add_parser("selftest", help="run the oracle and property test suite")
    p.add_argument("--all", action="store_true", help="include the slow acceptance suite")
    return ap


def _selftest(include_all: bool) -> int:
    try:
        import pytest
    except ImportError:
        print("selftest needs pytest (pip install 'artifact[test]')", file=sys.stderr)
        return 2
    here = os.path.dirname(os.path.abspath(__file__))
    tests = os.path.normpath(os.path.join(here, "..", "..", "tests"))
    if not os.path.isdir(tests):
        print(f"test suite not found at {tests}", file=sys.stderr)
        return 2
    argv = [tests, "-q"]
    if not include_all:
        argv += ["--ignore", os.path.join(tests, "test_acceptance.py")]
    return int(pytest.main(argv))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "selftest":
            return _selftest(args.all)
        configs = _configs_from_args(args)
        if args.verb == "run":
            code = 0
            for cfg in configs:
                rep = run(cfg)
                print(rep.csv_row())
            return code
        if args.verb == "sweep":
            if args.preset:
                ks = [int(s) for s in args.ks.split(",")]
                configs = [c for base in configs for c in preset_configs(args.preset, base, ks)]
            configs = filter_configs(expand_grid(configs, args.grid), args.where)
            reports = sweep(configs, args.csv, args.jobs)
            for r in reports:
                print(r.csv_row() + ("" if r.status == "ok" else f"  # {r.error}"))
            return 0 if all(r.status == "ok" for r in reports) else 1
        if args.verb == "profile":
            rep = load_report(args.report) if args.report else run(configs[0])
            emit_profile(rep, args.points, args.out)
            return 0
    except (ConfigError, RunError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
