"""Command-line entry point: one subcommand per capability, JSON configs in,
CSV/JSON results out.

Exit codes separate "the math says no" from misuse: 0 on success or a
passing check, 2 when a certified check fails (a Lyapunov condition is
violated, a certificate is inconclusive, an experiment bound is broken),
and 1 on usage or config errors.  Diagnostics go to stderr; results go to
--out or stdout.  Outputs embed the config hash and seed, and identical
argv + config bytes produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import (
    CheckRegion,
    ConstantPolicy,
    LinearGSystem,
    LyapunovSpec,
    PiecewiseConstantPolicy,
    PolicyFamily,
    SigmaBand,
    SpaceTimeGrid,
    TimeGrid,
    TruncationSchedule,
    __version__,
    check_growth_condition,
    check_stability_conditions,
    estimate_upper,
    find_cly_detailed,
    lmi_stable,
    lmi_unstable,
    load_system,
    load_uncertainty,
    search_p,
    simulate_batch,
    solve_localized,
    threshold_bangbang,
)
from . import experiments as exp_mod
from . import expr as expr_mod
from . import gheat as gheat_mod
from . import gsde as gsde_mod
from .runio import config_hash, standard_comments, write_json, write_table

SUBCOMMANDS = ("simulate", "upper", "gheat", "gsde", "lyapunov", "linstab", "experiment")


class UsageError(Exception):
    """Bad flags, unreadable config, or a schema violation (exit 1)."""


class CheckFailed(Exception):
    """The requested certification did not hold (exit 2)."""


def _fetch(cfg, pointer: str, kind, required=True, default=None):
    """Walk a '/a/b' JSON pointer; type errors name the full pointer."""
    node = cfg
    for part in [p for p in pointer.split("/") if p]:
        if not isinstance(node, dict) or part not in node:
            if required:
                raise UsageError(f"missing config field at {pointer}")
            return default
        node = node[part]
    if kind is float and isinstance(node, (int, float)) and not isinstance(node, bool):
        return float(node)
    if kind is int and isinstance(node, int) and not isinstance(node, bool):
        return int(node)
    if kind is not None and not isinstance(node, kind):
        raise UsageError(f"config field {pointer} must be {getattr(kind, '__name__', kind)}")
    return node


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise UsageError("config root must be a JSON object")
    return cfg


def _uncertainty(cfg):
    try:
        keys = {k: cfg[k] for k in ("band", "dim", "members") if k in cfg}
        if not keys:
            raise UsageError("config needs /band or /dim + /members")
        return load_uncertainty(keys)
    except (ValueError, KeyError) as e:
        raise UsageError(f"bad uncertainty config at /band|/members: {e}")


def _time_grid(cfg) -> TimeGrid:
    return TimeGrid(_fetch(cfg, "/grid/t_end", float), _fetch(cfg, "/grid/n_steps", int))


def _policy(cfg, unc, pointer="/policy"):
    spec = _fetch(cfg, pointer, dict)
    kind = _fetch(spec, "/kind", str)
    if kind == "constant":
        if "value" in spec:
            return ConstantPolicy(value=_fetch(spec, "/value", float))
        return ConstantPolicy(index=_fetch(spec, "/index", int))
    if kind == "piecewise":
        sched = _fetch(spec, "/schedule", list)
        return PiecewiseConstantPolicy([(int(k), v) for k, v in sched])
    if kind == "bangbang_threshold":
        if not isinstance(unc, SigmaBand):
            raise UsageError(f"{pointer}/kind=bangbang_threshold needs a band")
        return threshold_bangbang(unc, _fetch(spec, "/theta", float),
                                  hi_above=bool(spec.get("hi_above", True)))
    raise UsageError(f"unknown policy kind at {pointer}/kind: {kind!r}")


def _family(cfg, pointer="/family") -> PolicyFamily:
    spec = _fetch(cfg, pointer, dict)
    kind = _fetch(spec, "/kind", str)
    if kind == "extreme_constants":
        return PolicyFamily.extreme_constants()
    if kind == "constants_only":
        return PolicyFamily.constants_only(int(spec.get("n", 5)))
    if kind == "bangbang_threshold":
        return PolicyFamily.bangbang_threshold(_fetch(spec, "/thresholds", list))
    raise UsageError(f"unknown family kind at {pointer}/kind: {kind!r}")


def _open_out(args):
    if args.out is None:
        return sys.stdout, False
    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"output path {out} exists; pass --force to overwrite")
    return open(out, "w", newline=""), True


def _emit(args, comments, writer):
    fh, close = _open_out(args)
    try:
        writer(fh, comments)
    finally:
        if close:
            fh.close()


def _long_rows(header, rows):
    out = []
    for i, row in enumerate(rows):
        for name, value in zip(header, row):
            out.append((i, name, value))
    return out


def _maybe_long(args, fh, comments, header, rows):
    if args.format == "json":
        write_json(fh, {"header": list(header), "rows": [list(r) for r in rows]},
                   comments=comments)
    elif args.emit_plot_data:
        write_table(fh, ["row", "variable", "value"], _long_rows(header, rows), comments)
    else:
        write_table(fh, header, rows, comments)


def _report_out(args, fh, comments, doc):
    """JSON report, or a key,value CSV when --format csv is forced."""
    if args.format == "csv":
        rows = [(k, json.dumps(v) if isinstance(v, (dict, list)) else v)
                for k, v in doc.items()]
        write_table(fh, ["key", "value"], rows, comments)
    else:
        write_json(fh, doc, comments=comments)


def cmd_simulate(args, cfg, comments):
    unc = _uncertainty(cfg)
    grid = _time_grid(cfg)
    policy = _policy(cfg, unc)
    n_paths = int(cfg.get("n_paths", 1))
    batch = simulate_batch(policy, unc, grid, args.seed, n_paths)
    d = batch.d
    header = (["path", "t"] + [f"b_{i + 1}" for i in range(d)]
              + [f"qvar_{i + 1}{j + 1}" for i in range(d) for j in range(d)] + ["policy_choice"])
    rows = []
    for p in range(n_paths):
        gp = batch.path(p)
        choices = np.append(gp.choices, np.nan)
        for k in range(grid.n_steps + 1):
            rows.append((p, gp.t[k], *gp.b[k], *gp.qvar[k].ravel(), choices[k]))
    _emit(args, comments, lambda fh, c: _maybe_long(args, fh, c, header, rows))
    return 0


def cmd_upper(args, cfg, comments):
    unc = _uncertainty(cfg)
    grid = _time_grid(cfg)
    family = _family(cfg)
    n_paths = _fetch(cfg, "/n_paths", int)
    d = 1 if isinstance(unc, SigmaBand) else unc.dim
    payoff_src = _fetch(cfg, "/payoff", str)
    variables = ["t"] + [f"b{i + 1}" for i in range(d)] + ["qv"]
    payoff_expr = expr_mod.parse(payoff_src, variables, cfg.get("constants"))

    def payoff(batch):
        # qv is the terminal quadratic-variation trace (the scalar qvar at d=1)
        env = {"t": batch.grid.t_end,
               "qv": np.einsum("pii->p", batch.qvar[:, -1])}
        for i in range(d):
            env[f"b{i + 1}"] = batch.b[:, -1, i]
        return np.broadcast_to(np.asarray(payoff_expr.eval(env), dtype=float), (len(batch),))

    report = estimate_upper(payoff, family, unc, grid, n_paths, args.seed, threads=args.threads)

    _emit(args, comments, lambda fh, c: _report_out(args, fh, c, report.to_json_dict()))
    return 0


def cmd_gheat(args, cfg, comments):
    unc = _uncertainty(cfg)
    if not isinstance(unc, SigmaBand):
        raise UsageError("/band: the PDE solver is one-dimensional")
    payoff_expr = expr_mod.parse(_fetch(cfg, "/payoff", str), ["x"], cfg.get("constants"))
    x_lo = _fetch(cfg, "/grid/x_lo", float)
    x_hi = _fetch(cfg, "/grid/x_hi", float)
    nx = _fetch(cfg, "/grid/nx", int)
    T = _fetch(cfg, "/grid/T", float)
    nt = _fetch(cfg, "/grid/nt", int, required=False)
    grid = (SpaceTimeGrid(x_lo, x_hi, nx, T, nt) if nt
            else SpaceTimeGrid.with_cfl(x_lo, x_hi, nx, T, unc))
    try:
        sol = gheat_mod.solve_terminal(unc, lambda x: payoff_expr.eval({"x": x}), grid)
    except gheat_mod.CFLError as e:
        raise UsageError(f"/grid/nt: {e}")
    print(f"u(0, 0) = {sol.value_at(0.0):.6g}", file=sys.stderr)
    rows = list(zip(sol.x, sol.u))
    _emit(args, comments, lambda fh, c: _maybe_long(args, fh, c, ["x", "u"], rows))
    return 0


def cmd_gsde(args, cfg, comments):
    try:
        coeffs, unc = load_system(cfg)
    except (KeyError, ValueError, expr_mod.ExprError) as e:
        raise UsageError(f"bad system config: {e}")
    grid = _time_grid(cfg)
    policy = _policy(cfg, unc)
    x0 = np.asarray(_fetch(cfg, "/x0", list), dtype=float)
    path = simulate_batch(policy, unc, grid, args.seed, 1).path(0)
    if "schedule" in cfg or coeffs.lipschitz_tag == "local":
        radii = cfg.get("schedule")
        schedule = TruncationSchedule(tuple(radii)) if radii else TruncationSchedule.doubling()
        try:
            sol = solve_localized(coeffs, x0, path, schedule)
        except gsde_mod.ExplosionSuspectedError as e:
            raise CheckFailed(str(e))
        print(f"localization settled at radius {sol.n0_used:g}", file=sys.stderr)
    else:
        sol = gsde_mod.integrate(coeffs, x0, path)
    header = ["t"] + expr_mod.state_variables(coeffs.n)
    rows = [(sol.t[k], *sol.x[k]) for k in range(grid.n_steps + 1)]
    _emit(args, comments, lambda fh, c: _maybe_long(args, fh, c, header, rows))
    return 0


def cmd_lyapunov(args, cfg, comments):
    try:
        coeffs, unc = load_system(_fetch(cfg, "/system", dict))
    except (KeyError, ValueError, expr_mod.ExprError) as e:
        raise UsageError(f"bad config at /system: {e}")
    mode = cfg.get("mode", "finite_difference")
    spec_kwargs = {}
    if mode == "analytic":
        spec_kwargs = {
            "dt": _fetch(cfg, "/dV/dt", str, required=False, default="0"),
            "grad": _fetch(cfg, "/dV/grad", list),
            "hess": _fetch(cfg, "/dV/hess", list),
        }
    try:
        spec = LyapunovSpec(coeffs.n, _fetch(cfg, "/V", str), mode=mode,
                            constants=cfg.get("constants"),
                            nonneg=bool(cfg.get("nonneg", True)), **spec_kwargs)
    except expr_mod.ExprError as e:
        raise UsageError(f"bad expression at /V: {e}")
    reg = _fetch(cfg, "/region", dict)
    region = CheckRegion(
        t_end=float(_fetch(reg, "/t", list)[1]),
        box=[tuple(axis) for axis in _fetch(reg, "/box", list)],
        exclude_r0=float(reg.get("exclude_r0", 0.0)),
        nt=int(reg.get("nt", 2)),
    )
    condition = _fetch(cfg, "/condition", str)
    params = cfg.get("params", {})
    if condition == "growth":
        report = check_growth_condition(spec, coeffs, unc, region, float(params.get("c_ly", 0.0)))
    elif condition == "find_cly":
        report = find_cly_detailed(spec, coeffs, unc, region)
    elif condition in ("sandwich", "nonpositive", "exp_stable", "exp_unstable"):
        report = check_stability_conditions(spec, coeffs, unc, region, params, condition)
    else:
        raise UsageError(f"unknown value at /condition: {condition!r}")
    _emit(args, comments, lambda fh, c: _report_out(args, fh, c, report.to_json_dict()))
    if condition != "find_cly" and not report.passed:
        raise CheckFailed(f"{report.condition}: max violation {report.max_violation:.3e} "
                          f"> tolerance {report.tolerance:.3e}")
    return 0


def cmd_linstab(args, cfg, comments):
    unc = _uncertainty(cfg)
    if not isinstance(unc, SigmaBand):
        raise UsageError("/band: linear certificates are for scalar-noise systems")
    n = _fetch(cfg, "/n", int)

    def matrix(name):
        flat = _fetch(cfg, f"/{name}", list)
        arr = np.asarray(flat, dtype=float)
        if arr.size != n * n:
            raise UsageError(f"/{name} must hold {n * n} row-major entries")
        return arr.reshape(n, n)

    sys_ = LinearGSystem(matrix("F"), matrix("H"), matrix("C"), unc)
    mode = cfg.get("mode", "stable")
    if mode == "search":
        cert = search_p(sys_, seed=args.seed)
        conclusive = cert.kind == "ms_stable"
    else:
        P = matrix("P") if "P" in cfg else np.eye(n)
        if mode == "stable":
            cert = lmi_stable(sys_, P)
            conclusive = cert.kind == "ms_stable"
        elif mode == "unstable":
            cert = lmi_unstable(sys_, P)
            conclusive = cert.kind == "q_unstable"
        else:
            raise UsageError(f"unknown value at /mode: {mode!r}")
    _emit(args, comments, lambda fh, c: _report_out(args, fh, c, cert.to_json_dict()))
    if not conclusive:
        raise CheckFailed(f"certificate inconclusive (margin {cert.margin:.3e})")
    return 0


def cmd_experiment(args, cfg, comments):
    kind = _fetch(cfg, "/kind", str)
    unc = _uncertainty(cfg)
    family = _family(cfg)
    if kind == "bt_over_t":
        result = exp_mod.bt_over_t(unc, family, _fetch(cfg, "/t_values", list),
                                   _fetch(cfg, "/n_paths", int), args.seed)
    elif kind in ("moment_decay", "lyapunov_exponent"):
        m = _fetch(cfg, "/model", dict)
        model = exp_mod.GeometricModel(_fetch(m, "/alpha", float), _fetch(m, "/beta", float),
                                       _fetch(m, "/gamma", float), _fetch(m, "/x0", float))
        try:
            ecfg = exp_mod.ExperimentConfig(
                system=model, unc=unc, p=_fetch(cfg, "/p", float), T=_fetch(cfg, "/T", float),
                dt=_fetch(cfg, "/dt", float), family=family,
                n_paths=_fetch(cfg, "/n_paths", int), seed=args.seed,
                lam=cfg.get("lambda"), times=tuple(cfg.get("times", ())),
            )
            runner = exp_mod.moment_decay_curve if kind == "moment_decay" else exp_mod.lyapunov_exponent
            result = runner(ecfg)
        except exp_mod.ConfigError as e:
            raise UsageError(str(e))
    else:
        raise UsageError(f"unknown value at /kind: {kind!r}")
    _emit(args, comments, lambda fh, c: _maybe_long(args, fh, c, result.header, result.rows))
    if not result.passed:
        raise CheckFailed(f"experiment {result.name} bound violated")
    return 0


_HANDLERS = {
    "simulate": cmd_simulate,
    "upper": cmd_upper,
    "gheat": cmd_gheat,
    "gsde": cmd_gsde,
    "lyapunov": cmd_lyapunov,
    "linstab": cmd_linstab,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcalc", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"gcalc {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="|".join(SUBCOMMANDS))
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output path (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--force", action="store_true", help="allow overwriting --out")
        p.add_argument("--emit-plot-data", action="store_true",
                       help="tidy long-format CSV instead of the wide table")
    return parser


_DEFAULT_FORMAT = {"simulate": "csv", "gheat": "csv", "gsde": "csv", "experiment": "csv",
                   "upper": "json", "lyapunov": "json", "linstab": "json"}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return 1
    if args.format is None:
        args.format = _DEFAULT_FORMAT[args.subcommand]
    try:
        cfg = _load_config(args.config)
        comments = standard_comments(config_hash(cfg), args.seed)
        return _HANDLERS[args.subcommand](args, cfg, comments)
    except UsageError as e:
        print(f"gcalc {args.subcommand}: error: {e}", file=sys.stderr)
        return 1
    except CheckFailed as e:
        print(f"gcalc {args.subcommand}: check failed: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
