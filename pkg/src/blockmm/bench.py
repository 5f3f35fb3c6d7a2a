"""Benchmark harness: sweep one knob, run the methods, collect error/time.

A run fixes a synthetic instance (from the config seed), sweeps exactly one
of {c, K, c0} over a list while holding the others fixed, and executes every
requested method for ``reps`` independent replications per sweep point.
Each replication records the Frobenius-relative error and the process CPU
time split into a plan phase (probabilities + sizes; for OPL this includes
the exact block products, for ONC it does not — that asymmetry is the whole
cost argument) and a sample phase (drawing + combining).

Output is a raw CSV (one row per replication) and a summary CSV (per-method
aggregates, plot-ready).  With ``record_timing`` off the time columns are
written as 0.0, making the raw CSV byte-reproducible from (config, seed).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .analysis import relative_error
from .datagen import gen_heavy_tail_instance, gen_normal_instance
from .estimators import (
    estimate_product,
    estimate_product_block_sampling,
)
from .matrix import BlockPartition, multiply_exact
from .plan import (
    METHOD_TAGS,
    allocate_by_score_sums,
    allocate_optimal,
    allocate_two_step,
    allocate_uniform,
    block_norm_probabilities,
    optimal_probabilities,
    uniform_probabilities,
)

SWEEPABLE = ("K", "c", "c0")

IntOrSweep = Union[int, tuple]


class ResourceCapError(RuntimeError):
    """Estimated memory footprint exceeds the configured cap."""


def _normalize_knob(name: str, value) -> IntOrSweep:
    if isinstance(value, (list, tuple, np.ndarray)):
        vals = tuple(int(v) for v in value)
        if len(vals) == 0:
            raise ValueError(f"{name}: sweep list is empty")
        return vals
    return int(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark run.  Exactly one of K, c, c0 must be a sweep list."""

    case: str = "II"
    methods: tuple[str, ...] = METHOD_TAGS
    m: int = 26
    n: int = 20000
    p: int = 28
    K: IntOrSweep = 10
    c: IntOrSweep = (2000, 4000, 8000)
    c0: IntOrSweep = 200
    reps: int = 20
    seed: int = 12345
    out: str = "bench_results"
    record_timing: bool = True
    location: str = "ones"
    max_bytes: int = 2**31

    def __post_init__(self):
        if self.case not in ("I", "II"):
            raise ValueError(f"case must be 'I' or 'II', got {self.case!r}")
        methods = tuple(self.methods)
        if not methods:
            raise ValueError("methods must be a nonempty subset of " + ", ".join(METHOD_TAGS))
        for tag in methods:
            if tag not in METHOD_TAGS:
                raise ValueError(f"unknown method {tag!r}; valid: {', '.join(METHOD_TAGS)}")
        if len(set(methods)) != len(methods):
            raise ValueError("duplicate method names")
        object.__setattr__(self, "methods", methods)
        for name in ("m", "n", "p", "reps"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "seed", int(self.seed))
        for name in SWEEPABLE:
            object.__setattr__(self, name, _normalize_knob(name, getattr(self, name)))
        swept = [name for name in SWEEPABLE if isinstance(getattr(self, name), tuple)]
        if len(swept) != 1:
            raise ValueError(
                f"exactly one of {SWEEPABLE} must be a sweep list, got {swept or 'none'}"
            )
        if self.location not in ("ones", "zero"):
            raise ValueError("location must be 'ones' or 'zero'")
        for K in self._values("K"):
            if K < 1 or self.n % K != 0:
                raise ValueError(f"n={self.n} must be divisible by K={K} (equal blocks)")
        for c in self._values("c"):
            if not 1 <= c <= self.n:
                raise ValueError(f"c={c} must lie in [1, n={self.n}]")
        two_step = {"ONU", "ONMCNR"} & set(self.methods)
        if two_step:
            for c0 in self._values("c0"):
                for K in self._values("K"):
                    if c0 < K:
                        raise ValueError(
                            f"c0={c0} below K={K}: no pilot draws for {sorted(two_step)}"
                        )

    def _values(self, name: str) -> tuple[int, ...]:
        v = getattr(self, name)
        return v if isinstance(v, tuple) else (v,)

    @property
    def sweep_var(self) -> str:
        for name in SWEEPABLE:
            if isinstance(getattr(self, name), tuple):
                return name
        raise AssertionError("config validated without a sweep")

    @property
    def sweep_values(self) -> tuple[int, ...]:
        return getattr(self, self.sweep_var)

    def resolved(self, value: int) -> tuple[int, int, int]:
        """(K, c, c0) at one sweep point."""
        knobs = {name: getattr(self, name) for name in SWEEPABLE}
        knobs[self.sweep_var] = value
        return knobs["K"], knobs["c"], knobs["c0"]


def config_from_dict(doc: dict) -> ExperimentConfig:
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "methods" in doc and isinstance(doc["methods"], str):
        doc = dict(doc)
        doc["methods"] = tuple(t.strip() for t in doc["methods"].split(",") if t.strip())
    return ExperimentConfig(**doc)


def estimate_bytes(config: ExperimentConfig) -> int:
    """Rough peak footprint: instance + exact product + largest sketch."""
    c_max = max(config._values("c"))
    floats = (
        config.m * config.n
        + config.n * config.p
        + 3 * config.m * config.p
        + c_max * (config.m + config.p)
        + 4 * config.n  # norms, probabilities, cumulative sums
    )
    return 8 * floats


@dataclass(frozen=True)
class RawRecord:
    case: str
    method: str
    sweep_var: str
    sweep_value: int
    rep: int
    rel_error: float
    plan_time_s: float
    sample_time_s: float


@dataclass(frozen=True)
class SummaryRecord:
    case: str
    method: str
    sweep_var: str
    sweep_value: int
    reps: int
    rel_error_mean: float
    rel_error_median: float
    rel_error_std: float
    plan_time_mean_s: float
    sample_time_mean_s: float


def make_instance(config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """The run's fixed instance; replications only re-randomize sampling."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
    if config.case == "I":
        return gen_normal_instance(config.m, config.n, config.p, rng)
    return gen_heavy_tail_instance(config.m, config.n, config.p, rng, location=config.location)


def replication_rng(seed: int, sweep_index: int, method: str, rep: int) -> np.random.Generator:
    """Independent stream per (sweep point, method, replication); indexing by
    the full method table keeps streams stable across method subsets."""
    key = (1, sweep_index, METHOD_TAGS.index(method), rep)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def run_method_once(
    M: np.ndarray,
    N: np.ndarray,
    part: BlockPartition,
    method: str,
    c: int,
    c0: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float, float]:
    """One replication of one method: (estimate, plan seconds, sample seconds)."""
    t0 = time.process_time()
    if method == "OPL":
        plan = allocate_optimal(M, N, part, c)
    elif method == "ONC":
        plan = allocate_by_score_sums(M, N, part, c)
    elif method == "UU":
        plan = allocate_uniform(part, c)
    elif method in ("ONU", "ONMCNR"):
        p0 = uniform_probabilities(part) if method == "ONU" else optimal_probabilities(M, N, part)
        pilot_rng, main_rng = rng.spawn(2)
        plan = allocate_two_step(M, N, part, c, c0, p0, pilot_rng)
        t1 = time.process_time()
        estimate = estimate_product(M, N, plan, main_rng)[1]
        return estimate, t1 - t0, time.process_time() - t1
    elif method == "SSM":
        q = block_norm_probabilities(M, N, part)
        t1 = time.process_time()
        # Budget parity with the column samplers: b blocks of n/K columns
        # each cost about as much as c column draws.
        draws = max(1, round(c * part.num_blocks / part.total))
        _, estimate, _ = estimate_product_block_sampling(M, N, part, draws, rng, probs=q)
        return estimate, t1 - t0, time.process_time() - t1
    else:
        raise ValueError(f"unknown method {method!r}")
    t1 = time.process_time()
    estimate = estimate_product(M, N, plan, rng)[1]
    return estimate, t1 - t0, time.process_time() - t1


def run(config: ExperimentConfig) -> tuple[list[RawRecord], list[SummaryRecord]]:
    """Execute the configured sweep; deterministic given (config, seed)."""
    need = estimate_bytes(config)
    if need > config.max_bytes:
        raise ResourceCapError(
            f"estimated {need} bytes exceeds the cap of {config.max_bytes}"
        )
    M, N = make_instance(config)
    exact = multiply_exact(M, N)
    raw: list[RawRecord] = []
    for si, value in enumerate(config.sweep_values):
        K, c, c0 = config.resolved(value)
        part = BlockPartition.equal(config.n, K)
        for method in config.methods:
            for rep in range(config.reps):
                rng = replication_rng(config.seed, si, method, rep)
                estimate, plan_t, sample_t = run_method_once(M, N, part, method, c, c0, rng)
                if not config.record_timing:
                    plan_t = sample_t = 0.0
                raw.append(
                    RawRecord(
                        case=config.case,
                        method=method,
                        sweep_var=config.sweep_var,
                        sweep_value=value,
                        rep=rep,
                        rel_error=relative_error(estimate, exact),
                        plan_time_s=plan_t,
                        sample_time_s=sample_t,
                    )
                )
    return raw, summarize(raw)


def summarize(raw: Sequence[RawRecord]) -> list[SummaryRecord]:
    """Per (sweep point, method) aggregates, in first-appearance order."""
    if not raw:
        raise ValueError("no results to summarize")
    groups: dict[tuple, list[RawRecord]] = {}
    for r in raw:
        groups.setdefault((r.sweep_value, r.method), []).append(r)
    out = []
    for (value, method), rows in groups.items():
        errs = np.array([r.rel_error for r in rows])
        out.append(
            SummaryRecord(
                case=rows[0].case,
                method=method,
                sweep_var=rows[0].sweep_var,
                sweep_value=value,
                reps=len(rows),
                rel_error_mean=float(errs.mean()),
                rel_error_median=float(np.median(errs)),
                rel_error_std=float(errs.std(ddof=1)) if len(rows) > 1 else 0.0,
                plan_time_mean_s=float(np.mean([r.plan_time_s for r in rows])),
                sample_time_mean_s=float(np.mean([r.sample_time_s for r in rows])),
            )
        )
    return out


RAW_HEADER = [
    "case",
    "method",
    "sweep_var",
    "sweep_value",
    "rep",
    "rel_error",
    "plan_time_s",
    "sample_time_s",
]

SUMMARY_HEADER = [
    "case",
    "method",
    "sweep_var",
    "sweep_value",
    "reps",
    "rel_error_mean",
    "rel_error_median",
    "rel_error_std",
    "plan_time_mean_s",
    "sample_time_mean_s",
]


def write_raw_csv(path, records: Sequence[RawRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_HEADER)
        for r in records:
            w.writerow(
                [
                    r.case,
                    r.method,
                    r.sweep_var,
                    r.sweep_value,
                    r.rep,
                    f"{r.rel_error:.17g}",
                    f"{r.plan_time_s:.17g}",
                    f"{r.sample_time_s:.17g}",
                ]
            )


def write_summary_csv(path, records: Sequence[SummaryRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in records:
            w.writerow(
                [
                    r.case,
                    r.method,
                    r.sweep_var,
                    r.sweep_value,
                    r.reps,
                    f"{r.rel_error_mean:.17g}",
                    f"{r.rel_error_median:.17g}",
                    f"{r.rel_error_std:.17g}",
                    f"{r.plan_time_mean_s:.17g}",
                    f"{r.sample_time_mean_s:.17g}",
                ]
            )


def write_results(out_dir, raw: Sequence[RawRecord], summary: Sequence[SummaryRecord]) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw_path = out / "raw.csv"
    summary_path = out / "summary.csv"
    write_raw_csv(raw_path, raw)
    write_summary_csv(summary_path, summary)
    return raw_path, summary_path
