"""Command-line front end.

Configs are INI-style ``key = value`` files with sections ``[params]``,
``[wage]``, ``[solver]``, ``[oracle]`` and ``[output]``. Every key except
``family`` in ``[wage]`` has a default; unknown keys are rejected.

Exit codes: 0 success, 2 solver failure, 3 invalid config, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import fit_growth_rate, sweep_horizon
from .direct_oracle import InfeasibleError, OracleConfig, direct_optimize, sample_controls, simulate
from .dynamics import verify_necessary_conditions
from .model import ModelParams, ParameterError, WageProfile, classify_regime
from .shooting import NoRootError, NonConvergenceError, ShootConfig, count_extremals, g_alpha, solve_extremal

log = logging.getLogger("relocopt")

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG, EXIT_IO = 0, 2, 3, 4
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
FMT = "%.17g"

_WAGE_KEYS = {
    "quadratic": ("h", "delta"),
    "constant": ("W",),
    "tabulated": ("knots", "values", "delta"),
}


class ConfigError(ValueError):
    """Invalid configuration text or values."""


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    profile: WageProfile = field(default_factory=WageProfile.quadratic)
    solver: ShootConfig = field(default_factory=ShootConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    output_dir: str = "out"


def _number(raw: str, kind, section: str, key: str):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from None


def _fields(cls):
    return {f.name: f for f in dataclasses.fields(cls) if f.init}


def _kind(f):
    t = str(f.type)
    if "int" in t and "float" not in t:
        return int
    if "float" in t:
        return float
    return str


def _section(cp, name, cls, optional_none=()):
    """Build ``cls`` from a config section; unknown keys raise ConfigError."""
    if not cp.has_section(name):
        return cls()
    known = _fields(cls)
    kwargs = {}
    for key, raw in cp.items(name):
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        if key in optional_none and raw.strip().lower() == "none":
            kwargs[key] = None
            continue
        kwargs[key] = _number(raw.strip(), _kind(known[key]), name, key)
    try:
        return cls(**kwargs)
    except (ParameterError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def _floats(raw, key):
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"[wage] {key}: expected comma-separated numbers") from None


def _wage(cp) -> WageProfile:
    items = dict(cp.items("wage")) if cp.has_section("wage") else {}
    if "family" not in items:
        raise ConfigError("[wage] requires key 'family' (one of quadratic, constant, tabulated)")
    family = items.pop("family").strip()
    if family not in _WAGE_KEYS:
        raise ConfigError(f"[wage] family must be one of {tuple(_WAGE_KEYS)}, got {family!r}")
    allowed = _WAGE_KEYS[family]
    for key in items:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [wage] for family {family}")
    try:
        delta = float(items.get("delta", WageProfile.__dataclass_fields__["delta"].default))
        if family == "quadratic":
            return WageProfile.quadratic(float(items.get("h", 1.0)), delta)
        if family == "constant":
            if "W" not in items:
                raise ConfigError("[wage] constant family requires key 'W'")
            return WageProfile.constant(float(items["W"]))
        if "knots" not in items or "values" not in items:
            raise ConfigError("[wage] tabulated family requires keys 'knots' and 'values'")
        return WageProfile.tabulated(_floats(items["knots"], "knots"), _floats(items["values"], "values"), delta)
    except ParameterError as exc:
        raise ConfigError(f"[wage] {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[wage] {exc}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run config; errors carry line numbers where known."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    for name in cp.sections():
        if name not in ("params", "wage", "solver", "oracle", "output"):
            raise ConfigError(f"unknown section [{name}]")
    params = _section(cp, "params", ModelParams)
    profile = _wage(cp)
    solver = _section(cp, "solver", ShootConfig, optional_none=("n_steps",))
    oracle = _section(cp, "oracle", OracleConfig)
    out = "out"
    if cp.has_section("output"):
        for key, raw in cp.items("output"):
            if key != "dir":
                raise ConfigError(f"unknown key {key!r} in [output]")
            out = raw.strip()
    return RunConfig(params, profile, solver, oracle, out)


def _render_value(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_config(cfg: RunConfig) -> str:
    """Text that parses back to ``cfg``."""
    lines = ["[params]"]
    lines += [f"{k} = {_render_value(getattr(cfg.params, k))}" for k in _fields(ModelParams)]
    prof = cfg.profile
    lines += ["", "[wage]", f"family = {prof.family}"]
    if prof.family == "quadratic":
        lines += [f"h = {prof.coefficients[0]!r}", f"delta = {prof.delta!r}"]
    elif prof.family == "constant":
        lines += [f"W = {prof.coefficients[0]!r}"]
    else:
        knots, values = prof.knots
        lines += ["knots = " + ", ".join(repr(float(v)) for v in knots),
                  "values = " + ", ".join(repr(float(v)) for v in values),
                  f"delta = {prof.delta!r}"]
    lines += ["", "[solver]"]
    lines += [f"{k} = {_render_value(getattr(cfg.solver, k))}" for k in _fields(ShootConfig)]
    lines += ["", "[oracle]"]
    lines += [f"{k} = {_render_value(getattr(cfg.oracle, k))}" for k in _fields(OracleConfig)]
    lines += ["", "[output]", f"dir = {cfg.output_dir}", ""]
    return "\n".join(lines)


# ----------------------------------------------------------------------
# output helpers


def _write_csv(path: Path, header, columns):
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(FMT % v for v in row) + "\n")


def _write_kv(path: Path, pairs):
    with open(path, "w", newline="\n") as fh:
        fh.write(_kv_text(pairs))


def _kv_text(pairs):
    out = []
    for k, v in pairs:
        if isinstance(v, float):
            v = FMT % v
        out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"


# ----------------------------------------------------------------------
# subcommands


def _cmd_solve(cfg: RunConfig, args, out: Path):
    ext = solve_extremal(cfg.params, cfg.profile, cfg.solver)
    _write_csv(out / "trajectory.csv", ["t", "x", "y", "c", "z", "a"],
               [ext.t, ext.x, ext.y, ext.c, ext.z, ext.a])
    _write_kv(out / "summary.txt", [
        ("alpha", ext.alpha), ("lambda1", ext.lambda1), ("aT", ext.aT), ("XT", ext.XT), ("J", ext.J),
        ("regime", str(classify_regime(cfg.params))), ("mirrored", ext.mirrored),
        ("flags", ",".join(ext.flags) or "none"), ("outer_iterations", len(ext.trace))])
    if log.isEnabledFor(logging.DEBUG):
        _write_csv(out / "trace.csv", ["outer", "lambda1", "alpha", "aT"],
                   [[r[k] for r in ext.trace] for k in ("outer", "lambda1", "alpha", "aT")])
    return EXIT_OK


def _t_list(args):
    return np.linspace(args.t_min, args.t_max, args.t_steps)


def _cmd_sweep(cfg: RunConfig, args, out: Path):
    records = sweep_horizon(cfg.params, cfg.profile, _t_list(args), cfg.solver, jobs=args.jobs)
    with open(out / "sweep.csv", "w", newline="\n") as fh:
        fh.write("T,aT,lambda1,XT,J,regime,converged\n")
        for r in records:
            nums = ",".join(FMT % v for v in (r.T, r.aT, r.lambda1, r.XT, r.J))
            fh.write(f"{nums},{r.regime},{str(r.converged).lower()}\n")
    pairs = [("points", len(records)), ("converged", sum(r.converged for r in records))]
    try:
        fit = fit_growth_rate(records, "aT", theta=cfg.params.theta)
        pairs += [("aT_slope", fit.slope), ("aT_fit_residual", fit.residual)]
    except ValueError as exc:
        pairs.append(("aT_slope", f"unavailable ({exc})"))
    _write_kv(out / "sweep_summary.txt", pairs)
    return EXIT_OK


def _cmd_verify(cfg: RunConfig, args, out: Path):
    ext = solve_extremal(cfg.params, cfg.profile, cfg.solver)
    rep = verify_necessary_conditions(ext, cfg.params, cfg.profile)
    text = rep.as_text() + f"passes = {rep.passes()}\n"
    with open(out / "verify.txt", "w", newline="\n") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_oracle(cfg: RunConfig, args, out: Path):
    ext = solve_extremal(cfg.params, cfg.profile, cfg.solver)
    N = args.n if args.n is not None else cfg.oracle.N
    sol = direct_optimize(cfg.params, cfg.profile, N, cfg.oracle, warm=ext)
    _write_csv(out / "oracle.csv", ["interval", "c", "z"], [np.arange(N), sol.c, sol.z])
    cs, zs = sample_controls(ext, N)
    J_sampled, _, _ = simulate(cfg.params, cfg.profile, cs, zs, cfg.oracle.resolution)
    xs = sol.x_nodes(cfg.params.x0)
    dist = float(np.max(np.abs(xs - np.interp(sol.t, ext.t, ext.x))))
    _write_kv(out / "oracle_summary.txt", [
        ("N", N), ("seed", cfg.oracle.seed), ("best_start", sol.start),
        ("J_direct", sol.J), ("J_indirect", ext.J), ("J_indirect_sampled", J_sampled),
        ("rel_gap_indirect", (sol.J - ext.J) / abs(ext.J)),
        ("rel_gap_sampled", (sol.J - J_sampled) / abs(J_sampled)),
        ("x_sup_distance", dist), ("aT_direct", sol.aT), ("iterations", sol.iterations),
        ("converged", sol.converged)])
    return EXIT_OK


def _cmd_extremals(cfg: RunConfig, args, out: Path):
    ext = solve_extremal(cfg.params, cfg.profile, cfg.solver)
    n = cfg.solver.n_steps
    scan = count_extremals(ext.lambda1, cfg.params, cfg.profile, args.alpha_grid, n)
    rows = [(a, g, 0) for a, g in zip(scan.alphas, scan.g)]
    rows += [(a, g_alpha(a, ext.lambda1, cfg.params, cfg.profile, n), 1) for a in scan.roots]
    rows.sort(key=lambda r: (r[0], r[2]))
    _write_csv(out / "extremals.csv", ["alpha", "g_alpha", "root"], list(zip(*rows)))
    _write_kv(out / "extremals_summary.txt", [("lambda1", ext.lambda1), ("count", scan.count)])
    return EXIT_OK


COMMANDS = {
    "solve": _cmd_solve,
    "sweep": _cmd_sweep,
    "verify": _cmd_verify,
    "oracle": _cmd_oracle,
    "extremals": _cmd_extremals,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relocopt", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="config file")
    ap.add_argument("--out", help="output directory (overrides [output] dir)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--t-min", type=float, default=5.0)
    ap.add_argument("--t-max", type=float, default=60.0)
    ap.add_argument("--t-steps", type=int, default=12, help="number of horizons in the sweep")
    ap.add_argument("--n", type=int, default=None, help="oracle control intervals")
    ap.add_argument("--alpha-grid", type=int, default=64, help="alpha scan points")
    return ap


def _setup_logging():
    level = os.environ.get("RELOC_OPT_LOG", "quiet").strip().lower()
    if level not in LOG_LEVELS:
        level = "quiet"
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(LOG_LEVELS[level])
    logging.getLogger("numba").setLevel(logging.WARNING)


def run_command(argv) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        sys.stderr.write(f"cannot read config: {exc}\n")
        return EXIT_IO
    try:
        cfg = parse_config(text)
        if args.jobs < 1 or args.t_steps < 3 or not 0 < args.t_min < args.t_max or args.alpha_grid < 16:
            raise ConfigError("invalid command-line values (jobs ≥ 1, t-steps ≥ 3, 0 < t-min < t-max, alpha-grid ≥ 16)")
        if args.n is not None and not 8 <= args.n <= 512:
            raise ConfigError("--n must lie in [8, 512]")
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    out = Path(args.out if args.out else cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        sys.stderr.write(f"cannot create output directory: {exc}\n")
        return EXIT_IO
    try:
        return COMMANDS[args.command](cfg, args, out)
    except (NonConvergenceError, NoRootError, InfeasibleError, ArithmeticError) as exc:
        sys.stderr.write(f"solver failure: {exc}\n")
        return EXIT_SOLVER
    except OSError as exc:
        sys.stderr.write(f"I/O failure: {exc}\n")
        return EXIT_IO


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
