"""Monte Carlo run-length performance of the percentile chart.

Each replication draws fresh Phase-I data (``k`` subgroups of ``n``) and
bootstraps control limits. Phase-II subgroups then stream from a (possibly
shifted) process until the first signal. Three limit protocols exist:

``averaged``
    Limits are averaged over all replications' Phase-I runs, and every
    run length is measured against the averaged pair. This is the default.
``per-replication``
    Each replication is monitored with its own limits.
``fixed``
    Replication 0's limits are reused everywhere.

Seeds come from cell identity, never position: Phase I and the bootstrap
use ``(seed, replication)``, and the Phase-II stream uses
``(seed, replication, shift)``. Grid cells therefore share limits (common
random numbers), reordering a grid changes nothing, and a singleton grid
reproduces a direct call.
"""
from __future__ import annotations

import csv
import io
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .chart import ChartConfig, ControlLimits, bootstrap_percentiles, limits_from_bootstrap
from .dist import TbetaParams, sample
from .errors import ConfigError, TbetaError
from .estimate import SubgroupData, fit_percentiles

DEFAULT_RUN_CAP = 20_000
PRESETS = {
    "desk": {"boot_reps": 1000, "replications": 500},
    "paper": {"boot_reps": 5000, "replications": 5000},
}
CSV_COLUMNS = ("d_theta1", "d_theta2", "p", "nu", "arl", "sdrl", "replications", "truncated_runs")
LIMIT_MODES = ("averaged", "per-replication", "fixed")

_MAX_CHUNK = 32


@dataclass(frozen=True)
class ShiftSpec:
    """Parameter shift of the monitored process.

    Additive by default (``theta + d``); with ``relative=True`` the shift is
    a fraction of the in-control value (``theta * (1 + d)``).
    """

    d_theta1: float = 0.0
    d_theta2: float = 0.0
    relative: bool = False

    def apply(self, params: TbetaParams) -> TbetaParams:
        if self.relative:
            t1 = params.theta1 * (1.0 + self.d_theta1)
            t2 = params.theta2 * (1.0 + self.d_theta2)
        else:
            t1 = params.theta1 + self.d_theta1
            t2 = params.theta2 + self.d_theta2
        if not (t1 > 0 and t2 > 0):
            raise ConfigError(f"shift {self} makes a shape non-positive ({t1:g}, {t2:g})")
        return TbetaParams(t1, t2, params.a, params.b)

    def seed_words(self) -> list[int]:
        # adding 0.0 folds -0.0 into 0.0
        words = [int(np.float64(v + 0.0).view(np.uint64)) for v in (self.d_theta1, self.d_theta2)]
        return words + [1] if self.relative else words


@dataclass(frozen=True)
class RunLengthSummary:
    arl: float
    sdrl: float
    replications: int
    truncated_runs: int
    failed_replications: int = 0
    run_lengths: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def from_run_lengths(cls, rl, truncated, failed: int = 0) -> "RunLengthSummary":
        rl = np.asarray(rl, dtype=float)
        if rl.size == 0:
            raise TbetaError("no successful replications")
        sdrl = float(np.std(rl, ddof=1)) if rl.size > 1 else 0.0
        return cls(arl=float(np.mean(rl)), sdrl=sdrl, replications=int(rl.size),
                   truncated_runs=int(np.sum(truncated)), failed_replications=failed,
                   run_lengths=rl.astype(np.int64))


@dataclass(frozen=True)
class GridCell:
    shift: ShiftSpec
    p: float
    far: float
    summary: RunLengthSummary | None
    error: str | None = None
    lcl: float = math.nan
    ucl: float = math.nan


@dataclass
class GridResult:
    cells: list[GridCell]

    def cell(self, shift: ShiftSpec, p: float | None = None, far: float | None = None) -> GridCell:
        for c in self.cells:
            if c.shift == shift and (p is None or c.p == p) and (far is None or c.far == far):
                return c
        raise KeyError((shift, p, far))

    def rows(self) -> list[dict]:
        out = []
        for c in self.cells:
            s = c.summary
            out.append({
                "d_theta1": c.shift.d_theta1, "d_theta2": c.shift.d_theta2, "p": c.p, "nu": c.far,
                "arl": s.arl if s else math.nan, "sdrl": s.sdrl if s else math.nan,
                "replications": s.replications if s else 0,
                "truncated_runs": s.truncated_runs if s else 0,
            })
        return out

    def to_csv(self, fh=None) -> str | None:
        """Write the run-length CSV; returns the text when no handle is given."""
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows():
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue() if fh is None else None

    def format_table(self, far: float) -> str:
        """Shift rows by percentile columns, ``ARL(SDRL)`` per cell."""
        ps = sorted({c.p for c in self.cells if c.far == far})
        shifts = list(dict.fromkeys(c.shift for c in self.cells if c.far == far))
        lines = ["dtheta1  dtheta2  " + "  ".join(f"p={p:<18g}" for p in ps)]
        for s in shifts:
            parts = []
            for p in ps:
                c = self.cell(s, p, far)
                parts.append(f"{c.summary.arl:.3f}({c.summary.sdrl:.3f})" if c.summary else "failed")
            lines.append(f"{s.d_theta1:<8g} {s.d_theta2:<8g} " + "  ".join(f"{x:<20}" for x in parts))
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


@dataclass(frozen=True)
class _Study:
    ic: TbetaParams
    shifts: tuple
    stream_params: tuple          # TbetaParams, or None for an invalid shift
    n: int
    k: int
    ps: np.ndarray
    fars: np.ndarray
    boot_reps: int
    boot_mode: str
    center_mode: str
    quantile_method: str
    run_cap: int
    seed: int
    lcl: np.ndarray | None = None  # shared limits, shape (P, V)
    ucl: np.ndarray | None = None


def _limit_arrays(study: _Study, rep: int):
    rng = np.random.default_rng([study.seed, rep])
    phase1 = SubgroupData(sample(study.ic, study.k * study.n, rng).reshape(study.k, study.n))
    run = bootstrap_percentiles(phase1, study.ic.a, study.ic.b, study.ps, study.boot_reps,
                                study.boot_mode, rng)
    lcl = np.empty((study.ps.size, study.fars.size))
    ucl = np.empty_like(lcl)
    for i in range(study.ps.size):
        for j, far in enumerate(study.fars):
            lim = limits_from_bootstrap(run.estimates[:, i], float(run.phase1_estimates[i]), far,
                                        study.center_mode, study.quantile_method)
            lcl[i, j] = lim.lcl
            ucl[i, j] = lim.ucl
    return lcl, ucl


def _limits_job(study: _Study, rep: int):
    try:
        return _limit_arrays(study, rep)
    except TbetaError:
        return None


def _stream(study: _Study, params: TbetaParams, lcl, ucl, rng):
    """Run lengths for every (p, far) cell on one Phase-II stream."""
    shape = lcl.shape
    rl = np.full(shape, study.run_cap, dtype=np.int64)
    done = np.zeros(shape, dtype=bool)
    seen = 0
    chunk = 16
    while seen < study.run_cap and not done.all():
        c = min(chunk, study.run_cap - seen)
        x = sample(params, c * study.n, rng).reshape(c, study.n)
        xi, _ = fit_percentiles(x, params.a, params.b, study.ps)
        # NaN (failed fit) never signals
        out = (xi[:, :, None] < lcl[None]) | (xi[:, :, None] > ucl[None])
        hit = out.any(axis=0) & ~done
        if hit.any():
            first = out.argmax(axis=0)
            rl[hit] = seen + first[hit] + 1
            done |= hit
        seen += c
        chunk = min(2 * chunk, _MAX_CHUNK)
    return rl, ~done


def _replicate(study: _Study, rep: int):
    """Run lengths ``(S, P, V)`` and truncation flags for one replication, or None."""
    if study.lcl is None:
        limits = _limits_job(study, rep)
        if limits is None:
            return None
        lcl, ucl = limits
    else:
        lcl, ucl = study.lcl, study.ucl
    S = len(study.shifts)
    rl = np.zeros((S,) + lcl.shape, dtype=np.int64)
    trunc = np.zeros(rl.shape, dtype=bool)
    for s, (shift, params) in enumerate(zip(study.shifts, study.stream_params)):
        if params is None:
            continue
        rng = np.random.default_rng([study.seed, rep] + shift.seed_words())
        rl[s], trunc[s] = _stream(study, params, lcl, ucl, rng)
    return rl, trunc


def _map(fn, study: _Study, reps, workers: int):
    reps = list(reps)
    if workers <= 1:
        return [fn(study, r) for r in reps]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(fn, [study] * len(reps), reps,
                             chunksize=max(1, len(reps) // (4 * workers))))


def shift_grid(ic_params: TbetaParams, shifts, n: int, k: int, config: ChartConfig,
               replications: int, run_cap: int = DEFAULT_RUN_CAP, seed: int = 0, *,
               percentiles=None, fars=None, limits: ControlLimits | None = None,
               limits_mode: str = "averaged", workers: int = 1) -> GridResult:
    """Run-length summaries for every (shift, percentile, false alarm rate) cell.

    ``percentiles`` and ``fars`` default to ``config.p`` and ``config.far``.
    Explicit ``limits`` replace Phase I entirely and then allow exactly one
    percentile and rate. Cells with an invalid shift carry an error, and the
    rest of the grid still completes.
    """
    shifts = tuple(shifts)
    if not shifts:
        raise ConfigError("shift grid is empty")
    if replications < 1:
        raise ConfigError(f"replications must be positive, got {replications}")
    if run_cap < 100:
        raise ConfigError(f"run_cap must be at least 100, got {run_cap}")
    if n < 2 or k < 1:
        raise ConfigError(f"need n >= 2 and k >= 1, got n={n}, k={k}")
    if limits_mode not in LIMIT_MODES:
        raise ConfigError(f"limits_mode must be one of {LIMIT_MODES}, got {limits_mode!r}")
    ps = np.atleast_1d(np.asarray(config.p if percentiles is None else percentiles, dtype=float))
    fs = np.atleast_1d(np.asarray(config.far if fars is None else fars, dtype=float))
    for p in ps:
        replace(config, p=float(p))
    for f in fs:
        replace(config, far=float(f))

    stream_params, errors = [], []
    for s in shifts:
        try:
            stream_params.append(s.apply(ic_params))
            errors.append(None)
        except ConfigError as exc:
            stream_params.append(None)
            errors.append(str(exc))

    study = _Study(ic=ic_params, shifts=shifts, stream_params=tuple(stream_params), n=n, k=k,
                   ps=ps, fars=fs, boot_reps=config.boot_reps, boot_mode=config.boot_mode,
                   center_mode=config.center_mode, quantile_method=config.quantile_method,
                   run_cap=run_cap, seed=seed)
    failed = 0
    if limits is not None:
        if ps.size != 1 or fs.size != 1:
            raise ConfigError("explicit limits cover exactly one percentile and false alarm rate")
        study = replace(study, lcl=np.array([[limits.lcl]]), ucl=np.array([[limits.ucl]]))
    elif limits_mode == "fixed":
        study = replace(study, **dict(zip(("lcl", "ucl"), _limit_arrays(study, 0))))
    elif limits_mode == "averaged":
        per_rep = _map(_limits_job, study, range(replications), workers)
        good = [r for r in per_rep if r is not None]
        failed = len(per_rep) - len(good)
        if not good:
            raise TbetaError("limits could not be built in any replication")
        study = replace(study, lcl=np.mean([g[0] for g in good], axis=0),
                        ucl=np.mean([g[1] for g in good], axis=0))

    results = _map(_replicate, study, range(replications), workers)
    good = [r for r in results if r is not None]
    failed += len(results) - len(good)
    cells = []
    for s, shift in enumerate(shifts):
        for i, p in enumerate(ps):
            for j, far in enumerate(fs):
                lim = {}
                if study.lcl is not None:
                    lim = {"lcl": float(study.lcl[i, j]), "ucl": float(study.ucl[i, j])}
                if errors[s] is not None:
                    cells.append(GridCell(shift, float(p), float(far), None, errors[s], **lim))
                    continue
                if not good:
                    cells.append(GridCell(shift, float(p), float(far), None,
                                          "all replications failed", **lim))
                    continue
                rl = [g[0][s, i, j] for g in good]
                tr = [g[1][s, i, j] for g in good]
                cells.append(GridCell(shift, float(p), float(far),
                                      RunLengthSummary.from_run_lengths(rl, tr, failed), **lim))
    return GridResult(cells)


def simulate_run_length(ic_params: TbetaParams, shift: ShiftSpec, n: int, k: int,
                        config: ChartConfig, replications: int, run_cap: int = DEFAULT_RUN_CAP,
                        seed: int = 0, **kw) -> RunLengthSummary:
    """ARL and SDRL for one shifted process; a singleton ``shift_grid``."""
    cell = shift_grid(ic_params, [shift], n, k, config, replications, run_cap, seed, **kw).cells[0]
    if cell.summary is None:
        raise TbetaError(cell.error)
    return cell.summary


@dataclass(frozen=True)
class ConsistencyReport:
    arl: float
    sdrl: float
    arl_target: float
    sdrl_target: float
    arl_z: float
    sdrl_z: float

    @property
    def consistent(self) -> bool:
        return abs(self.arl_z) < 3 and abs(self.sdrl_z) < 3


def sdrl_consistency_check(summary: RunLengthSummary, far: float) -> ConsistencyReport:
    """Compare an in-control summary with the geometric run-length law.

    The ARL z-score uses the geometric standard deviation. The SDRL z-score
    uses the large-sample variance of a sample standard deviation,
    ``(mu4 - sigma**4) / (4 sigma**2 R)``, with the geometric fourth moment.
    """
    q = far
    arl_t = 1.0 / q
    sd_t = math.sqrt(1.0 - q) / q
    r = summary.replications
    arl_z = (summary.arl - arl_t) / (sd_t / math.sqrt(r))
    excess_kurtosis = 6.0 + q * q / (1.0 - q)
    se_sd = sd_t * math.sqrt((excess_kurtosis + 2.0) / (4.0 * r))
    sdrl_z = (summary.sdrl - sd_t) / se_sd
    return ConsistencyReport(summary.arl, summary.sdrl, arl_t, sd_t, arl_z, sdrl_z)


def sampling_quantile_limits(params: TbetaParams, n: int, p: float, far: float, draws: int,
                             seed=0) -> ControlLimits:
    """Limits at simulated quantiles of the percentile estimate.

    Draws ``draws`` size-``n`` samples from a known process, fits each, and
    cuts the estimates at ``far/2`` and ``1 - far/2``.
    """
    rng = np.random.default_rng(seed)
    x = sample(params, draws * n, rng).reshape(draws, n)
    xi, ok = fit_percentiles(x, params.a, params.b, [p])
    lo, hi = np.quantile(xi[ok, 0], [far / 2.0, 1.0 - far / 2.0])
    return ControlLimits.fixed(float(lo), float(hi), p=p, far=far, a=params.a, b=params.b)
