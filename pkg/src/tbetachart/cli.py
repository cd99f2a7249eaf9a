"""Command-line interface.

Subcommands: ``fit``, ``limits``, ``monitor``, ``arl`` and ``datasets``.
Exit codes are 0 on success, 1 for usage or configuration errors, 2 for
unusable data and 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import datasets
from .chart import (BOOT_MODES, CENTER_MODES, QUANTILE_METHODS, ChartConfig, ControlLimits,
                    build_limits, monitor_stream)
from .dist import TbetaParams, quantile
from .errors import ConfigError, ConvergenceError, DataError, DomainError, TbetaError
from .estimate import SubgroupData, fit_mle, ks_pvalue, ks_statistic
from .runlength import DEFAULT_RUN_CAP, LIMIT_MODES, PRESETS, ShiftSpec, shift_grid

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _g(v) -> str:
    """17 significant digits: enough to round-trip a float exactly."""
    return format(float(v), ".17g")


# ---------------------------------------------------------------- input

def read_observations(path: str) -> np.ndarray:
    """One value per line; a non-numeric first line is taken as a header."""
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    values = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        fields = [f.strip() for f in row]
        if not fields or fields == [""]:
            continue
        if len(fields) != 1:
            raise DataError(f"{path}:{lineno}: expected one value per line, got {len(fields)}")
        try:
            v = float(fields[0])
        except ValueError:
            if lineno == 1:
                continue
            raise DataError(f"{path}:{lineno}: cannot parse {fields[0]!r} as a number") from None
        if not math.isfinite(v):
            raise DataError(f"{path}:{lineno}: non-finite value {fields[0]!r}")
        values.append(v)
    if not values:
        raise DataError(f"{path}: no observations")
    return np.array(values)


@dataclass(frozen=True)
class DatasetSpec:
    source: str
    subgroup_size: int | None
    drop_first: bool
    support: tuple[float, float]

    @property
    def embedded(self) -> bool:
        return self.source in datasets.EMBEDDED

    def values(self) -> np.ndarray:
        if self.embedded:
            return datasets.load(self.source, self.drop_first)
        x = read_observations(self.source)
        return x[1:] if self.drop_first else x

    def subgroups(self) -> SubgroupData:
        if self.subgroup_size is None:
            raise UsageError("--subgroup-size is required for file input")
        x = self.values()
        if x.size % self.subgroup_size:
            raise DataError(f"{x.size} observations cannot be split into subgroups of "
                            f"{self.subgroup_size}")
        return SubgroupData.from_flat(x, self.subgroup_size)


def _parse_pair(text: str, what: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be two comma-separated numbers, got {text!r}")
    return lo, hi


def _support(text):
    return _parse_pair(text, "support")


def _shift(text):
    return _parse_pair(text, "shift")


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _dataset(args, support_default=None) -> DatasetSpec:
    emb = args.data in datasets.EMBEDDED
    defaults = datasets.EMBEDDED_DEFAULTS if emb else {}
    support = args.support or support_default or defaults.get("support", (0.0, 1.0))
    n = args.subgroup_size or defaults.get("subgroup_size")
    drop = args.drop_first if args.drop_first is not None else defaults.get("drop_first", False)
    TbetaParams(1.0, 1.0, *support)
    return DatasetSpec(args.data, n, drop, tuple(support))


# ---------------------------------------------------------------- output

def _emit(args, text: str):
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v))


def _clean(obj):
    # JSON has no NaN; write null instead
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, default=_json_default)


def write_limits(path: str, limits: ControlLimits):
    with open(path, "w") as fh:
        fh.write(_dumps(limits.to_dict()) + "\n")


def read_limits(path: str) -> ControlLimits:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read limits file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: limits must be a JSON object")
    d = {k: (math.nan if v is None and k not in ("p", "far", "a", "b") else v) for k, v in d.items()}
    return ControlLimits.from_dict(d)


# ---------------------------------------------------------------- commands

def cmd_fit(args) -> int:
    ds = _dataset(args)
    x = ds.values()
    a, b = ds.support
    fit = fit_mle(x, a, b)
    if not fit.converged:
        raise ConvergenceError("maximum likelihood fit did not converge")
    ps = args.percentile or [0.5, 0.9]
    xi = [float(quantile(p, fit.params)) for p in ps]
    ks = ks_statistic(x, fit.params)
    pval = ks_pvalue(ks, x.size, fit.params, reps=args.ks_reps, seed=args.seed,
                     refit=args.ks_refit)
    report = {
        "data": ds.source, "observations": int(x.size), "support": [a, b],
        "theta1": fit.params.theta1, "theta2": fit.params.theta2, "loglik": fit.loglik,
        "percentiles": {repr(float(p)): v for p, v in zip(ps, xi)},
        "ks_statistic": ks, "ks_pvalue": pval, "ks_reps": args.ks_reps, "ks_refit": args.ks_refit,
        "seed": args.seed,
    }
    if args.json:
        _emit(args, _dumps(report))
        return EXIT_OK
    lines = [f"data         {ds.source} ({x.size} observations, support [{a:g}, {b:g}])",
             f"theta1       {fit.params.theta1:.6f}",
             f"theta2       {fit.params.theta2:.6f}",
             f"loglik       {fit.loglik:.6f}"]
    lines += [f"xi_{p:<9g} {v:.6f}" for p, v in zip(ps, xi)]
    lines += [f"K-S          {ks:.6f}",
              f"K-S p-value  {pval:.4f} (parametric bootstrap, {args.ks_reps} reps, "
              f"{'refit' if args.ks_refit else 'known shapes'})"]
    _emit(args, "\n".join(lines))
    return EXIT_OK


def _chart_config(args) -> ChartConfig:
    kw = {"p": args.percentile, "far": args.far, "boot_reps": args.boot_reps,
          "boot_mode": args.boot_mode, "center_mode": args.center_mode,
          "quantile_method": args.quantile_method, "seed": args.seed}
    return ChartConfig(**{k: v for k, v in kw.items() if v is not None})


def _frame_csv(path: str, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "statistic", "lcl", "cl", "ucl", "breach"])
        for r in rows:
            w.writerow([r[0]] + [_g(v) for v in r[1:5]] + [r[5]])


def cmd_limits(args) -> int:
    ds = _dataset(args)
    phase1 = ds.subgroups()
    config = _chart_config(args)
    a, b = ds.support
    lim = build_limits(phase1, a, b, config)
    if args.limits_out:
        write_limits(args.limits_out, lim)
    if args.out:
        _frame_csv(args.out, [(j + 1, math.nan, lim.lcl, lim.cl, lim.ucl, "")
                              for j in range(phase1.k)])
    if args.json:
        _emit(args, _dumps({"config": asdict(config), "limits": lim.to_dict()}))
        return EXIT_OK
    lines = [f"data          {ds.source} (k={phase1.k}, n={phase1.n}, support [{a:g}, {b:g}])",
             f"chart         p={config.p:g} far={config.far:g} B={config.boot_reps} "
             f"mode={config.boot_mode} center={config.center_mode} seed={config.seed}",
             f"LCL           {lim.lcl:.6f}",
             f"CL            {lim.cl:.6f}",
             f"UCL           {lim.ucl:.6f}",
             f"xi_hat        {lim.phase1_estimate:.6f}",
             f"boot mean     {lim.boot_mean:.6f}",
             f"boot SE       {lim.boot_se:.6f}",
             f"t quantiles   {lim.t_lower:.4f}, {lim.t_upper:.4f}",
             f"fit failures  {lim.failures}"]
    if lim.outside_support():
        lines.append("note: a limit lies outside the support")
    _emit(args, "\n".join(lines))
    return EXIT_OK


def _monitor_limits(args) -> ControlLimits:
    if args.limits and (args.lcl is not None or args.ucl is not None):
        raise UsageError("give either --limits or --lcl/--ucl, not both")
    if args.limits:
        return read_limits(args.limits)
    if args.lcl is None or args.ucl is None:
        raise UsageError("monitor needs --limits FILE or both --lcl and --ucl")
    return ControlLimits.fixed(args.lcl, args.ucl, args.cl)


def cmd_monitor(args) -> int:
    lim = _monitor_limits(args)
    support_default = (lim.a, lim.b) if lim.a is not None and lim.b is not None else None
    ds = _dataset(args, support_default)
    p = args.percentile if args.percentile is not None else lim.p
    if p is None:
        raise UsageError("--percentile is required when the limits do not record one")
    a, b = ds.support
    groups = ds.subgroups()
    verdicts = monitor_stream(groups.observations, lim, a, b, p)
    signals = [v.subgroup_index for v in verdicts if v.in_control is False]
    indeterminate = sum(v.indeterminate for v in verdicts)
    if args.out:
        _frame_csv(args.out, [(v.subgroup_index, v.statistic, lim.lcl, lim.cl, lim.ucl, v.breach)
                              for v in verdicts])
    if args.json:
        _emit(args, _dumps({
            "limits": lim.to_dict(), "p": p,
            "subgroups": [{"index": v.subgroup_index, "statistic": v.statistic,
                           "in_control": v.in_control, "breach": v.breach} for v in verdicts],
            "first_signal": signals[0] if signals else None, "signals": len(signals),
            "indeterminate": indeterminate,
        }))
        return EXIT_OK
    lines = [f"limits  LCL={lim.lcl:.6f}  CL={lim.cl:.6f}  UCL={lim.ucl:.6f}  (p={p:g})",
             f"{'index':>5}  {'statistic':>10}  verdict"]
    for v in verdicts:
        stat = "       n/a" if v.indeterminate else f"{v.statistic:10.6f}"
        tag = {"none": "in control", "below-lcl": "OUT (below LCL)",
               "above-ucl": "OUT (above UCL)", "indeterminate": "INDETERMINATE (fit failed)"}
        lines.append(f"{v.subgroup_index:>5}  {stat}  {tag[v.breach]}")
    first = signals[0] if signals else "none"
    lines.append(f"first signal: {first}; signals: {len(signals)} of {len(verdicts)}"
                 + (f"; indeterminate: {indeterminate}" if indeterminate else ""))
    _emit(args, "\n".join(lines))
    return EXIT_OK


def cmd_arl(args) -> int:
    preset = PRESETS["paper" if args.paper_scale else "desk"]
    boot_reps = args.boot_reps or preset["boot_reps"]
    reps = args.replications or preset["replications"]
    ps = args.percentile or [0.5]
    fars = args.far or [0.0027]
    config = ChartConfig(p=ps[0], far=fars[0], boot_reps=boot_reps, boot_mode=args.boot_mode,
                         center_mode=args.center_mode, quantile_method=args.quantile_method)
    a, b = args.support or (0.0, 0.5)
    ic = TbetaParams(args.theta1, args.theta2, a, b)
    shifts = [ShiftSpec(d1, d2, args.relative_shifts) for d1, d2 in (args.shift or [(0.0, 0.0)])]
    limits = None
    if args.limits or args.lcl is not None or args.ucl is not None:
        limits = _monitor_limits(args)
    grid = shift_grid(ic, shifts, args.subgroup_size, args.phase1_subgroups, config, reps,
                      args.run_cap, args.seed, percentiles=ps, fars=fars, limits=limits,
                      limits_mode=args.limits_mode, workers=args.workers)
    text = grid.to_csv()
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    if args.json:
        _emit(args, _dumps({"rows": grid.rows(),
                            "errors": [{"d_theta1": c.shift.d_theta1, "d_theta2": c.shift.d_theta2,
                                        "p": c.p, "nu": c.far, "error": c.error}
                                       for c in grid.cells if c.error]}))
    else:
        _emit(args, text)
        for c in grid.cells:
            if c.error:
                sys.stderr.write(f"cell ({c.shift.d_theta1:g}, {c.shift.d_theta2:g}, p={c.p:g}, "
                                 f"nu={c.far:g}) failed: {c.error}\n")
    return EXIT_OK


def cmd_datasets(args) -> int:
    if args.action == "list":
        for name, vals in datasets.EMBEDDED.items():
            _emit(args, f"{name}  {len(vals)} values (first dropped by default)")
        return EXIT_OK
    if args.name not in datasets.EMBEDDED:
        raise UsageError(f"unknown dataset {args.name!r}; choose from {sorted(datasets.EMBEDDED)}")
    drop = True if args.drop_first is None else args.drop_first
    x = datasets.load(args.name, drop)
    text = "value\n" + "".join(_g(v) + "\n" for v in x)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_data(sp, required=True):
    sp.add_argument("--data", required=required,
                    help=f"observation CSV or an embedded name ({', '.join(datasets.EMBEDDED)})")
    sp.add_argument("--support", type=_support, metavar="A,B",
                    help="support [a, b]; defaults to 0.3,1 for embedded data, else 0,1")
    sp.add_argument("--subgroup-size", type=int, metavar="N")
    sp.add_argument("--drop-first", action=argparse.BooleanOptionalAction, default=None,
                    help="drop the first observation (default: on for embedded data)")


def _add_chart(sp, multi=False):
    if multi:
        sp.add_argument("--percentile", type=_floats, metavar="P[,P...]")
        sp.add_argument("--far", type=_floats, metavar="NU[,NU...]")
    else:
        sp.add_argument("--percentile", type=float, metavar="P")
        sp.add_argument("--far", type=float, metavar="NU")
    sp.add_argument("--boot-reps", type=int, metavar="B")
    sp.add_argument("--boot-mode", choices=BOOT_MODES, default=None if not multi else "parametric")
    sp.add_argument("--center-mode", choices=CENTER_MODES,
                    default=None if not multi else "phase1-estimate")
    sp.add_argument("--quantile-method", choices=QUANTILE_METHODS,
                    default=None if not multi else "weibull")


def _add_inline_limits(sp):
    sp.add_argument("--limits", metavar="JSON", help="limits file written by `limits --limits-out`")
    sp.add_argument("--lcl", type=float)
    sp.add_argument("--cl", type=float)
    sp.add_argument("--ucl", type=float)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--out", metavar="PATH", help="write the command's CSV here")

    parser = _Parser(prog="tbetachart",
                     description="Bootstrap percentile control charts for truncated-beta data.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("fit", parents=[common], help="maximum likelihood fit and K-S test")
    _add_data(sp)
    sp.add_argument("--percentile", type=float, action="append", metavar="P",
                    help="percentile to report (repeatable; default 0.5 and 0.9)")
    sp.add_argument("--ks-reps", type=int, default=2000)
    sp.add_argument("--ks-refit", action=argparse.BooleanOptionalAction, default=True,
                    help="refit the shapes in each K-S bootstrap replicate (default on)")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("limits", parents=[common], help="Phase-I bootstrap control limits")
    _add_data(sp)
    _add_chart(sp)
    sp.add_argument("--limits-out", metavar="JSON", help="write the limits as JSON")
    sp.set_defaults(func=cmd_limits)

    sp = sub.add_parser("monitor", parents=[common], help="test Phase-II subgroups")
    _add_data(sp)
    sp.add_argument("--percentile", type=float, metavar="P")
    _add_inline_limits(sp)
    sp.set_defaults(func=cmd_monitor)

    sp = sub.add_parser("arl", parents=[common], help="Monte Carlo run-length study")
    sp.add_argument("--theta1", type=float, default=2.0)
    sp.add_argument("--theta2", type=float, default=15.0)
    sp.add_argument("--support", type=_support, metavar="A,B", help="default 0,0.5")
    sp.add_argument("--subgroup-size", type=int, default=10, metavar="N")
    sp.add_argument("--phase1-subgroups", type=int, default=20, metavar="K")
    _add_chart(sp, multi=True)
    sp.add_argument("--shift", type=_shift, action="append", metavar="D1,D2",
                    help="parameter shift (repeatable; default 0,0)")
    sp.add_argument("--relative-shifts", action="store_true",
                    help="read shifts as fractions: theta * (1 + d)")
    sp.add_argument("--replications", type=int)
    sp.add_argument("--run-cap", type=int, default=DEFAULT_RUN_CAP)
    sp.add_argument("--limits-mode", choices=LIMIT_MODES, default="averaged")
    scale = sp.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", action="store_true",
                       help=f"B={PRESETS['desk']['boot_reps']}, "
                            f"{PRESETS['desk']['replications']} replications (default)")
    scale.add_argument("--paper-scale", action="store_true",
                       help=f"B={PRESETS['paper']['boot_reps']}, "
                            f"{PRESETS['paper']['replications']} replications")
    sp.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    _add_inline_limits(sp)
    sp.set_defaults(func=cmd_arl)

    sp = sub.add_parser("datasets", parents=[common], help="list or dump embedded data")
    sp.add_argument("action", choices=("list", "dump"))
    sp.add_argument("name", nargs="?")
    sp.add_argument("--drop-first", action=argparse.BooleanOptionalAction, default=None)
    sp.set_defaults(func=cmd_datasets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "datasets" and args.action == "dump" and not args.name:
        parser.error("datasets dump needs a dataset name")
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (ConfigError, DomainError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except (ConvergenceError, TbetaError) as exc:
        sys.stderr.write(f"numerical error: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
