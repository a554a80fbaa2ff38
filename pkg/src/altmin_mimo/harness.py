"""Monte-Carlo experiment runners.

Every trial is one fading block drawn from ``RngStream(cfg.seed, trial_id)``;
all detectors of a trial see the same channel, symbols and noise.  Trials run
in fixed batches (the first batch has ``cfg.trials`` trials, later ones
``cfg.batch_trials``) and the stopping rule is evaluated only at batch
boundaries, so results do not depend on the number of worker processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
import json
import math
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import altmin as am
from .baselines import (
    LinearDetectorKind,
    box_lsq_projected_gradient,
    linear_detect,
    ml_bruteforce,
)
from .metrics import BerStat, count_scope
from .model import (
    SNR_CONVENTIONS,
    SUPPORTED_ORDERS,
    RngStream,
    build_constellation,
    demodulate,
    realize_system,
    slice_symbols,
)

__all__ = [
    "DETECTORS",
    "CSV_HEADER",
    "ConfigError",
    "Experiment",
    "ExperimentConfig",
    "TrialRecord",
    "PointSummary",
    "BerSnrResult",
    "IterationSweepResult",
    "ComplexityRow",
    "OracleRow",
    "OracleReport",
    "run_trial",
    "run_ber_vs_snr",
    "run_ber_vs_iterations",
    "parity_iteration",
    "run_complexity_table",
    "run_oracle_check",
    "write_records_csv",
    "write_json",
]

DETECTORS = ("altmin", "mmse", "zf", "ml")
CSV_HEADER = (
    "trial_id", "snr_db", "detector", "iterations", "bit_errors", "bits",
    "real_mults", "converged",
)


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class Experiment(str, Enum):
    BER_VS_SNR = "ber_vs_snr"
    BER_VS_ITERATIONS = "ber_vs_iterations"
    COMPLEXITY_TABLE = "complexity_table"
    ORACLE_CHECK = "oracle_check"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment = Experiment.BER_VS_SNR
    n_t: int = 16
    n_r: int = 128
    modulation: int = 4
    snr_db_list: tuple[float, ...] = (12.0,)
    detectors: tuple[str, ...] = ("altmin", "mmse")
    altmin: am.AltMinConfig = field(default_factory=am.AltMinConfig)
    trials: int = 100
    min_bit_errors: int = 200
    max_bits: int = 20_000_000
    seed: int = 0
    snr_convention: str = "per_user"
    noiseless: bool = False
    workers: int = 1
    batch_trials: int = 512
    # BerVsIterations
    iter_cap: int = 24
    iter_step: int = 2
    # ComplexityTable
    n_t_values: tuple[int, ...] = (16, 32, 64, 128)
    parity_iterations: dict[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "experiment", Experiment(self.experiment))
        object.__setattr__(self, "snr_db_list", tuple(float(s) for s in self.snr_db_list))
        object.__setattr__(self, "detectors", tuple(self.detectors))
        object.__setattr__(self, "n_t_values", tuple(int(n) for n in self.n_t_values))
        for name in ("n_t", "n_r", "trials", "workers", "batch_trials", "iter_cap", "iter_step"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.min_bit_errors < 0:
            raise ConfigError("min_bit_errors", "must be >= 0")
        if self.max_bits < 1:
            raise ConfigError("max_bits", "must be >= 1")
        if self.modulation not in SUPPORTED_ORDERS:
            raise ConfigError(
                "modulation", f"unsupported order {self.modulation}; supported: {SUPPORTED_ORDERS}"
            )
        if not self.snr_db_list:
            raise ConfigError("snr_db_list", "must be nonempty")
        if self.snr_convention not in SNR_CONVENTIONS:
            raise ConfigError(
                "snr_convention", f"{self.snr_convention!r} not in {SNR_CONVENTIONS}"
            )
        unknown = [d for d in self.detectors if d not in DETECTORS]
        if unknown or not self.detectors:
            raise ConfigError("detectors", f"unknown or empty: {unknown}; choose from {DETECTORS}")
        if self.experiment is Experiment.COMPLEXITY_TABLE:
            if not {"altmin", "mmse"} <= set(self.detectors):
                raise ConfigError("detectors", "complexity table needs both altmin and mmse")
            if any(n < 1 for n in self.n_t_values):
                raise ConfigError("n_t_values", "antenna counts must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["experiment"] = self.experiment.value
        if self.parity_iterations is not None:
            d["parity_iterations"] = {str(k): v for k, v in self.parity_iterations.items()}
        return d


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    snr_db: float
    detector: str
    iterations: int
    bit_errors: int
    bits: int
    real_mults: int
    converged: bool

    def row(self) -> list:
        return [
            self.trial_id, repr(float(self.snr_db)), self.detector, self.iterations,
            self.bit_errors, self.bits, self.real_mults, int(self.converged),
        ]


@dataclass(frozen=True)
class PointSummary:
    snr_db: float
    detector: str
    stat: BerStat
    mean_mults: float
    trials: int

    def to_dict(self) -> dict:
        return {
            "snr_db": self.snr_db,
            "detector": self.detector,
            "bit_errors": self.stat.bit_errors,
            "bits": self.stat.bits_total,
            "ber": self.stat.ber,
            "ci95_half_width": self.stat.ci95_half_width,
            "mean_real_mults": self.mean_mults,
            "trials": self.trials,
        }


@dataclass
class BerSnrResult:
    records: list[TrialRecord]
    summary: list[PointSummary]

    def point(self, snr_db: float, detector: str) -> PointSummary:
        for p in self.summary:
            if p.snr_db == snr_db and p.detector == detector:
                return p
        raise KeyError((snr_db, detector))


# -- trial execution ---------------------------------------------------------


def _detect(name: str, sys, c, cfg: ExperimentConfig):
    ops = count_scope(name)
    if name == "altmin":
        return am.run(sys, cfg.altmin, c, ops)
    if name == "ml":
        return ml_bruteforce(sys, c, ops)
    return linear_detect(sys, LinearDetectorKind(name), c, ops)


def _realize(cfg: ExperimentConfig, c, snr_db: float, trial_id: int, n_t=None):
    return realize_system(
        n_t or cfg.n_t, cfg.n_r, c, snr_db, RngStream(cfg.seed, trial_id),
        convention=cfg.snr_convention, noiseless=cfg.noiseless,
    )


def run_trial(cfg: ExperimentConfig, snr_db: float, trial_id: int) -> list[TrialRecord]:
    """One fading block, every configured detector, one record each."""
    c = build_constellation(cfg.modulation)
    sys = _realize(cfg, c, snr_db, trial_id)
    out = []
    for name in cfg.detectors:
        res = _detect(name, sys, c, cfg)
        rx_bits = demodulate(res.x_hat_sliced, c)
        out.append(
            TrialRecord(
                trial_id=trial_id,
                snr_db=snr_db,
                detector=name,
                iterations=res.iterations,
                bit_errors=int(np.count_nonzero(rx_bits != sys.bits)),
                bits=int(sys.bits.size),
                real_mults=res.multiply_count,
                converged=res.converged,
            )
        )
    return out


def _trial_block(args) -> list:
    fn, cfg, snr_db, ids = args
    out = []
    for t in ids:
        out.extend(fn(cfg, snr_db, t))
    return out


class _Runner:
    """Maps trial ids to records, in-process or over a process pool."""

    def __init__(self, workers: int):
        self.workers = workers
        self.pool = ProcessPoolExecutor(workers) if workers > 1 else None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self.pool is not None:
            self.pool.shutdown()

    def map(self, fn, cfg, snr_db, ids: range) -> list:
        if self.pool is None:
            return _trial_block((fn, cfg, snr_db, ids))
        chunks = np.array_split(np.asarray(ids), self.workers)
        jobs = [(fn, cfg, snr_db, [int(i) for i in ch]) for ch in chunks if len(ch)]
        out = []
        for part in self.pool.map(_trial_block, jobs):
            out.extend(part)
        return out


def _batches(cfg: ExperimentConfig):
    start = 0
    size = cfg.trials
    while True:
        yield range(start, start + size)
        start += size
        size = cfg.batch_trials


def _run_point(
    runner: _Runner,
    fn: Callable,
    cfg: ExperimentConfig,
    snr_db: float,
    done: Callable[[dict[str, BerStat], int], bool],
    bits_per_trial: int,
) -> list:
    records = []
    stats: dict[str, BerStat] = {}
    n_trials = 0
    for ids in _batches(cfg):
        batch = runner.map(fn, cfg, snr_db, ids)
        records.extend(batch)
        for r in batch:
            stats[r.detector] = stats.get(r.detector, BerStat()) + BerStat(r.bit_errors, r.bits)
        n_trials += len(ids)
        if n_trials >= cfg.trials and done(stats, n_trials):
            break
        if n_trials * bits_per_trial >= cfg.max_bits:
            break
    return records


def _summarize(records: Iterable[TrialRecord]) -> list[PointSummary]:
    acc: dict[tuple[float, str], list] = {}
    for r in records:
        a = acc.setdefault((r.snr_db, r.detector), [0, 0, 0, 0])
        a[0] += r.bit_errors
        a[1] += r.bits
        a[2] += r.real_mults
        a[3] += 1
    return [
        PointSummary(snr, det, BerStat(e, b), m / n, n)
        for (snr, det), (e, b, m, n) in acc.items()
    ]


def _bits_per_trial(cfg: ExperimentConfig, n_t: int | None = None) -> int:
    return 2 * (n_t or cfg.n_t) * build_constellation(cfg.modulation).bits_per_real_dim


def run_ber_vs_snr(cfg: ExperimentConfig) -> BerSnrResult:
    """BER per (SNR, detector), each point run until ``cfg.trials`` trials and
    ``cfg.min_bit_errors`` errors for every detector, or the bit budget."""

    def done(stats, _n):
        return all(s.bit_errors >= cfg.min_bit_errors for s in stats.values())

    records: list[TrialRecord] = []
    with _Runner(cfg.workers) as runner:
        for snr in cfg.snr_db_list:
            records.extend(
                _run_point(runner, run_trial, cfg, snr, done, _bits_per_trial(cfg))
            )
    return BerSnrResult(records, _summarize(records))


# -- iteration sweep ---------------------------------------------------------


def _altmin_label(t: int) -> str:
    return f"altmin_T{t}"


def _iteration_trial(cfg: ExperimentConfig, snr_db: float, trial_id: int) -> list[TrialRecord]:
    """MMSE plus AltMin at every cap T = 1..iter_cap from a single run.

    A run capped at T follows the same trajectory as the run capped at
    ``iter_cap`` and stops at ``min(T, t_stop)``, so one traced run yields
    every cap's output and multiply count.
    """
    c = build_constellation(cfg.modulation)
    sys = _realize(cfg, c, snr_db, trial_id)
    out = []
    mm = linear_detect(sys, LinearDetectorKind.MMSE, c)
    rx = demodulate(mm.x_hat_sliced, c)
    nbits = int(sys.bits.size)
    out.append(TrialRecord(trial_id, snr_db, "mmse", 0,
                           int(np.count_nonzero(rx != sys.bits)), nbits,
                           mm.multiply_count, True))
    acfg = replace(cfg.altmin, max_iter=cfg.iter_cap, record_trace=True)
    res = am.run(sys, acfg, c)
    for t in range(1, cfg.iter_cap + 1):
        row = res.trace[min(t, res.iterations)]
        rx = demodulate(slice_symbols(row.x, c), c)
        out.append(TrialRecord(
            trial_id, snr_db, _altmin_label(t), row.iteration,
            int(np.count_nonzero(rx != sys.bits)), nbits, row.real_mults,
            res.converged and res.iterations <= t,
        ))
    return out


@dataclass
class IterationSweepResult:
    snr_db: float
    mmse: PointSummary
    altmin: dict[int, PointSummary]  # every cap 1..iter_cap
    grid: tuple[int, ...]  # the coarse grid reported as the sweep
    parity_t: int | None
    records: list[TrialRecord]

    def table(self) -> list[dict]:
        return [
            {"T": t, "ber": self.altmin[t].stat.ber,
             "ci95_half_width": self.altmin[t].stat.ci95_half_width,
             "mmse_ber": self.mmse.stat.ber,
             "mmse_ci95_half_width": self.mmse.stat.ci95_half_width}
            for t in self.grid
        ]


def parity_iteration(
    altmin_stats: dict[int, BerStat], mmse: BerStat, step: int = 2
) -> int | None:
    """Smallest cap T at which AltMin's BER reaches the MMSE 95% interval.

    The coarse grid ``step, 2*step, ...`` is scanned first; the caps between
    the first hit and the previous grid point are then checked one by one.
    """
    hi = mmse.ci95[1]
    caps = sorted(altmin_stats)
    hit = next((t for t in caps if t % step == 0 and altmin_stats[t].ber <= hi), None)
    if hit is None:
        return None
    for t in range(max(1, hit - step + 1), hit):
        if t in altmin_stats and altmin_stats[t].ber <= hi:
            return t
    return hit


def run_ber_vs_iterations(cfg: ExperimentConfig) -> IterationSweepResult:
    """BER of AltMin versus its iteration cap at one SNR, against exact MMSE.

    The point runs until ``cfg.trials`` trials and ``cfg.min_bit_errors``
    MMSE bit errors (or the bit budget).
    """
    snr = cfg.snr_db_list[0]

    def done(stats, _n):
        return stats["mmse"].bit_errors >= cfg.min_bit_errors

    with _Runner(cfg.workers) as runner:
        records = _run_point(runner, _iteration_trial, cfg, snr, done, _bits_per_trial(cfg))
    summ = {p.detector: p for p in _summarize(records)}
    alt = {t: summ[_altmin_label(t)] for t in range(1, cfg.iter_cap + 1)}
    parity = parity_iteration({t: p.stat for t, p in alt.items()}, summ["mmse"].stat, cfg.iter_step)
    grid = tuple(range(cfg.iter_step, cfg.iter_cap + 1, cfg.iter_step))
    return IterationSweepResult(snr, summ["mmse"], alt, grid, parity, records)


# -- complexity table ------------------------------------------------------------


@dataclass(frozen=True)
class ComplexityRow:
    n_t: int
    n_r: int
    altmin_iterations: int
    mults_mmse: float
    mults_altmin: float

    @property
    def ratio(self) -> float:
        return self.mults_altmin / self.mults_mmse

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratio"] = self.ratio
        return d


def run_complexity_table(cfg: ExperimentConfig) -> list[ComplexityRow]:
    """Mean instrumented multiplications per detection for MMSE and for AltMin
    capped at each configuration's parity iteration count."""
    if not cfg.parity_iterations:
        raise ConfigError("parity_iterations", "needed for the complexity table")
    c = build_constellation(cfg.modulation)
    snr = cfg.snr_db_list[0]
    rows = []
    for n_t in cfg.n_t_values:
        if n_t not in cfg.parity_iterations:
            raise ConfigError("parity_iterations", f"no entry for n_t={n_t}")
        t_cap = int(cfg.parity_iterations[n_t])
        acfg = replace(cfg.altmin, max_iter=t_cap, record_trace=False)
        mm_total = alt_total = 0
        for trial in range(cfg.trials):
            sys = _realize(cfg, c, snr, trial, n_t=n_t)
            mm_total += linear_detect(sys, LinearDetectorKind.MMSE, c).multiply_count
            alt_total += am.run(sys, acfg, c).multiply_count
        rows.append(ComplexityRow(n_t, cfg.n_r, t_cap, mm_total / cfg.trials, alt_total / cfg.trials))
    return rows


# -- oracle check -----------------------------------------------------------------


@dataclass(frozen=True)
class OracleRow:
    trial_id: int
    iterations: int
    box_feasible: bool
    monotone: bool | None
    consistent: bool | None
    objective_match: bool | None
    kkt_ok: bool | None
    v_altmin: float
    v_oracle: float
    max_consistency: float
    max_ascent: float
    stationarity: float
    comp_slack: float
    joint_stationarity: float

    @property
    def passed(self) -> bool:
        checks = (self.box_feasible, self.monotone, self.consistent,
                  self.objective_match, self.kkt_ok)
        return all(c is not False for c in checks)


@dataclass
class OracleReport:
    rows: list[OracleRow]
    c_scale: float | None

    @property
    def n_pass(self) -> int:
        return sum(r.passed for r in self.rows)

    @property
    def all_passed(self) -> bool:
        return self.n_pass == len(self.rows)


ORACLE_REL_TOL = 1e-6
KKT_TOL = 1e-6
CONSISTENCY_TOL = 1e-10
DESCENT_SLACK = 1e-12


def run_oracle_check(cfg: ExperimentConfig) -> OracleReport:
    """Property suite per seed: monotone descent, constraint consistency,
    objective agreement with a projected-gradient box-LS oracle, KKT residuals.

    Only box feasibility (and the iteration cap) is asserted unless
    ``cfg.altmin.c_scale == 1``; the other checks are reported as ``None``.
    """
    if cfg.n_t > 8 or cfg.n_r > 16:
        raise ConfigError("n_t", "oracle check is limited to n_t <= 8, n_r <= 16")
    c = build_constellation(cfg.modulation)
    acfg = replace(cfg.altmin, record_trace=True)
    exact = acfg.c_scale is not None and acfg.c_scale == 1.0
    snr = cfg.snr_db_list[0]
    rows = []
    for trial in range(cfg.trials):
        sys = _realize(cfg, c, snr, trial)
        res = am.run(sys, acfg, c)
        xs = np.array([r.x for r in res.trace])
        feasible = bool(np.all(np.abs(xs) <= c.l)) and res.iterations <= acfg.max_iter
        v = np.array(res.v_trace)
        ascent = float(np.max(np.diff(v), initial=-np.inf))
        cons = max(r.consistency for r in res.trace[1:]) if len(res.trace) > 1 else 0.0
        _, f_orc = box_lsq_projected_gradient(sys.h_real, sys.y_real, c.l)
        # the relaxation's value at x after the Y-update is ||y - Hx||^2 / (2 N_t)
        v_orc = f_orc / (2 * sys.n_t)
        kkt = am.kkt_residuals(res.state, sys, c)
        rows.append(OracleRow(
            trial_id=trial,
            iterations=res.iterations,
            box_feasible=feasible,
            monotone=bool(ascent <= DESCENT_SLACK) if exact else None,
            consistent=bool(cons <= CONSISTENCY_TOL) if exact else None,
            objective_match=(
                bool(math.isclose(res.state.v_obj, v_orc, rel_tol=ORACLE_REL_TOL))
                if exact else None
            ),
            kkt_ok=(
                bool(kkt.stationarity_residual <= KKT_TOL and kkt.comp_slack_residual <= KKT_TOL)
                if exact else None
            ),
            v_altmin=res.state.v_obj,
            v_oracle=v_orc,
            max_consistency=cons,
            max_ascent=ascent,
            stationarity=kkt.stationarity_residual,
            comp_slack=kkt.comp_slack_residual,
            joint_stationarity=kkt.joint_stationarity,
        ))
    return OracleReport(rows, acfg.c_scale)


# -- output ---------------------------------------------------------------------


def write_records_csv(records: Iterable[TrialRecord], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.row())
    return path


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return _jsonable(float(obj))
    return obj


def write_json(payload: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path
