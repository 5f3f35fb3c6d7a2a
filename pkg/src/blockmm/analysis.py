"""Exact variance analytics and high-probability error bounds.

Everything here is closed-form except the Monte Carlo validation helpers at
the bottom (coverage counting and a CLT diagnostic).  The three bound
functions share a ``BoundInputs`` record built from per-block cancellation
statistics:

* ``ratio``      -- per block, exact-product norm over score sum (in [0,1]
                    for exact inputs; pilot estimates may exceed 1),
* ``cancel``     -- 1 - ratio^2 (absolute value for pilot estimates); the
                    fraction of a block's score mass that sampling variance
                    actually sees,
* ``prob_floor`` -- largest factor by which the plan's probabilities
                    dominate the variance-minimizing ones.

Blocks where cancellation is numerically total (ratio = 1 to rounding) are
excluded from the lower cancellation statistic, else every bound would
degenerate to infinity on instances containing a variance-free block.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import beta as _beta_dist

from .estimators import estimate_product
from .matrix import BlockPartition, block_view, column_norms, frobenius_norm, multiply_exact, row_norms
from .plan import (
    BlockProbabilities,
    SamplingPlan,
    _check_instance,
    block_scores,
    optimal_probabilities,
    optimal_size_weights,
    prob_floor_ratio,
    score_sums,
)

DEGENERATE_TOL = 1e-12


def _block_budgets(plan: SamplingPlan, budgets) -> np.ndarray:
    if budgets is None:
        return plan.budgets.astype(np.float64)
    b = np.asarray(budgets, dtype=np.float64)
    if b.shape != (plan.partition.num_blocks,) or (b < 0).any():
        raise ValueError("budget override must be one nonnegative value per block")
    return b


def elementwise_variance(
    M: np.ndarray, N: np.ndarray, plan: SamplingPlan, budgets=None
) -> np.ndarray:
    """Exact per-entry variance of the blocked estimate under ``plan``.

    For entry (h, f): sum over blocks of
    (1/c_k) * [ sum_i M_hi^2 N_if^2 / p_i  -  (block product)_hf^2 ].

    ``budgets`` optionally overrides the plan's integer sizes with real
    values (the pre-integerization optimum).  Entries are exact up to
    rounding and may dip to -1e-12 * scale below zero.
    """
    part = plan.partition
    _check_instance(M, N, part)
    b = _block_budgets(plan, budgets)
    var = np.zeros((M.shape[0], N.shape[1]))
    for k in range(part.num_blocks):
        Mk = block_view(M, part, k)
        Nk = block_view(N, part, k, "rows")
        p = plan.probs[k]
        contrib = column_norms(Mk) * row_norms(Nk)
        pos = p > 0
        if (contrib[~pos] > 0).any():
            raise ValueError(f"block {k}: zero probability at a contributing column")
        exact_sq = (Mk @ Nk) ** 2
        term1 = (Mk[:, pos] ** 2 / p[pos]) @ (Nk[pos, :] ** 2)
        numerator = term1 - exact_sq
        if b[k] == 0:
            scale = max(1.0, float(term1.max(initial=0.0)))
            if np.abs(numerator).max(initial=0.0) > 1e-12 * scale:
                raise ValueError(f"block {k}: zero budget on a block with sampling variance")
            continue
        var += numerator / b[k]
    return var


def expected_sq_error(M: np.ndarray, N: np.ndarray, plan: SamplingPlan, budgets=None) -> float:
    """E || exact product - estimate ||_F^2 under ``plan`` (the estimator is
    unbiased, so this is the summed entry variance), in closed form."""
    part = plan.partition
    _check_instance(M, N, part)
    b = _block_budgets(plan, budgets)
    total = 0.0
    for k in range(part.num_blocks):
        Mk = block_view(M, part, k)
        Nk = block_view(N, part, k, "rows")
        p = plan.probs[k]
        contrib = column_norms(Mk) * row_norms(Nk)
        pos = p > 0
        if (contrib[~pos] > 0).any():
            raise ValueError(f"block {k}: zero probability at a contributing column")
        term1 = float((contrib[pos] ** 2 / p[pos]).sum())
        g_sq = float(((Mk @ Nk) ** 2).sum())
        numerator = term1 - g_sq
        if b[k] == 0:
            if abs(numerator) > 1e-12 * max(1.0, term1):
                raise ValueError(f"block {k}: zero budget on a block with sampling variance")
            continue
        total += numerator / b[k]
    return total


def minimum_expected_sq_error(M: np.ndarray, N: np.ndarray, part: BlockPartition, c: int) -> float:
    """Closed-form minimum of ``expected_sq_error`` over probabilities and
    real-valued sizes at total budget c: (sum_k sqrt(s_k^2 - g_k^2))^2 / c."""
    if c <= 0:
        raise ValueError("budget must be positive")
    w = optimal_size_weights(M, N, part)
    return float(w.sum() ** 2) / c


@dataclass(frozen=True, eq=False)
class CancellationStats:
    """Per-block cancellation of score mass by the exact (or pilot) product.

    ``ratios``/``cancel`` are NaN at zero-score blocks.  ``cancel_lo`` is the
    minimum over non-degenerate blocks and is meaningful only when
    ``lo_available``; ``cancel_hi`` is the maximum over all scored blocks.
    """

    ratios: np.ndarray
    cancel: np.ndarray
    cancel_lo: float
    cancel_hi: float
    lo_available: bool
    exact: bool
    zero_score_blocks: tuple[int, ...]
    degenerate_blocks: tuple[int, ...]


def cancellation_stats(
    M: np.ndarray,
    N: np.ndarray,
    part: BlockPartition,
    pilot_norms: Optional[np.ndarray] = None,
    degenerate_tol: float = DEGENERATE_TOL,
) -> CancellationStats:
    """Ratios g_k / s_k and the low/high cancellation statistics.

    With ``pilot_norms`` the ratios use the pilot product norms instead of
    the exact ones; those may exceed 1, so the cancellation takes an
    absolute value there.
    """
    s = score_sums(M, N, part)
    if (s == 0).all():
        raise ValueError("all blocks have zero score")
    if pilot_norms is not None:
        g = np.asarray(pilot_norms, dtype=np.float64)
        if g.shape != s.shape:
            raise ValueError("need one pilot norm per block")
        exact = False
    else:
        g = block_scores(M, N, part).product_norms
        exact = True
    ratios = np.full(part.num_blocks, np.nan)
    included = s > 0
    ratios[included] = g[included] / s[included]
    cancel = 1.0 - ratios**2
    if not exact:
        cancel = np.abs(cancel)
    if exact:
        degenerate = included & (ratios >= 1.0 - degenerate_tol)
    else:
        degenerate = included & (cancel <= degenerate_tol)
    usable = included & ~degenerate
    hi = float(np.nanmax(cancel[included])) if included.any() else 0.0
    if usable.any():
        lo = float(cancel[usable].min())
        lo_available = True
    else:
        lo, lo_available = 0.0, False
    return CancellationStats(
        ratios=ratios,
        cancel=cancel,
        cancel_lo=lo,
        cancel_hi=max(hi, 0.0),
        lo_available=lo_available,
        exact=exact,
        zero_score_blocks=tuple(np.where(~included)[0]),
        degenerate_blocks=tuple(np.where(degenerate)[0]),
    )


@dataclass(frozen=True, eq=False)
class BoundInputs:
    """Everything the closed-form bounds consume.

    ``cancel_lo``/``cancel_hi`` come from exact cancellation stats, or from
    pilot stats for the pilot-allocation bound, which additionally needs the
    exact high statistic in ``cancel_hi_exact``.
    """

    c: int
    fail_prob: float
    prob_floor: float
    cancel_lo: float
    cancel_hi: float
    frob_m: float
    frob_n: float
    ratios: Optional[np.ndarray] = None
    cancel_hi_exact: Optional[float] = None

    def __post_init__(self):
        if self.c < 1:
            raise ValueError("c must be >= 1")
        if not 0.0 < self.fail_prob < 1.0:
            raise ValueError("fail_prob must lie in (0, 1)")
        if not 0.0 <= self.prob_floor <= 1.0 + 1e-12:
            raise ValueError("prob_floor must lie in [0, 1]")
        if self.cancel_lo < 0 or self.cancel_hi < self.cancel_lo - 1e-15:
            raise ValueError("need 0 <= cancel_lo <= cancel_hi")
        if self.frob_m < 0 or self.frob_n < 0:
            raise ValueError("norms must be >= 0")


class BoundPair(NamedTuple):
    variance_bound: float  # bounds the summed entry variances
    sq_error_bound: float  # bounds ||exact - estimate||_F^2 w.p. >= 1 - fail_prob


def _bound_base(inp: BoundInputs) -> float:
    return inp.frob_m**2 * inp.frob_n**2 / (inp.prob_floor * inp.c)


def bounds_optimal_allocation(inp: BoundInputs) -> BoundPair:
    """Bound pair for the variance-minimizing allocation.

    Infinite when the probability floor or the low cancellation statistic
    vanishes (the bound's premises fail, e.g. a variance-free block).
    """
    lo, hi, floor = inp.cancel_lo, inp.cancel_hi, inp.prob_floor
    if floor <= 0.0 or lo <= 0.0:
        return BoundPair(math.inf, math.inf)
    phi = math.sqrt(hi - lo * floor + hi * lo * floor) / (hi * lo) ** 0.25
    eta = phi + math.sqrt(hi / lo) * math.sqrt((8.0 / floor) * math.log(1.0 / inp.fail_prob))
    base = _bound_base(inp)
    return BoundPair(phi**2 * base, eta**2 * base)


def bounds_score_allocation(inp: BoundInputs) -> BoundPair:
    """Bound pair for the score-sum allocation; needs only the exact high
    cancellation statistic."""
    hi, floor = inp.cancel_hi, inp.prob_floor
    if not 0.0 <= hi <= 1.0 + 1e-12:
        raise ValueError("score-allocation bound needs an exact high statistic in [0, 1]")
    if floor <= 0.0:
        return BoundPair(math.inf, math.inf)
    phi = math.sqrt(max(1.0 - floor * (1.0 - hi), 0.0))
    eta = phi + math.sqrt((8.0 / floor) * math.log(1.0 / inp.fail_prob))
    base = _bound_base(inp)
    return BoundPair(phi**2 * base, eta**2 * base)


def bounds_pilot_allocation(inp: BoundInputs) -> BoundPair:
    """Bound pair for the pilot-estimated allocation: pilot low/high
    statistics, with the exact high statistic entering the numerator."""
    if inp.cancel_hi_exact is None:
        raise ValueError("pilot bound needs cancel_hi_exact")
    lo, hi, hi_exact, floor = inp.cancel_lo, inp.cancel_hi, inp.cancel_hi_exact, inp.prob_floor
    if floor <= 0.0 or lo <= 0.0:
        return BoundPair(math.inf, math.inf)
    phi = math.sqrt(hi - lo * floor + hi_exact * lo * floor) / (hi * lo) ** 0.25
    eta = phi + math.sqrt(hi / lo) * math.sqrt((8.0 / floor) * math.log(1.0 / inp.fail_prob))
    base = _bound_base(inp)
    return BoundPair(phi**2 * base, eta**2 * base)


def bound_inputs_for_plan(
    M: np.ndarray,
    N: np.ndarray,
    plan: SamplingPlan,
    fail_prob: float,
    degenerate_tol: float = DEGENERATE_TOL,
) -> BoundInputs:
    """Assemble ``BoundInputs`` for a plan: probability floor against the
    variance-minimizing probabilities plus cancellation statistics (pilot
    statistics when the plan carries pilot norms)."""
    part = plan.partition
    exact_stats = cancellation_stats(M, N, part, degenerate_tol=degenerate_tol)
    floor = prob_floor_ratio(plan.probs, optimal_probabilities(M, N, part))
    if plan.pilot_norms is not None:
        stats = cancellation_stats(
            M, N, part, pilot_norms=plan.pilot_norms, degenerate_tol=degenerate_tol
        )
        hi_exact = exact_stats.cancel_hi
    else:
        stats = exact_stats
        hi_exact = None
    return BoundInputs(
        c=plan.total,
        fail_prob=fail_prob,
        prob_floor=0.0 if floor.support_mismatch else floor.ratio,
        cancel_lo=stats.cancel_lo if stats.lo_available else 0.0,
        cancel_hi=stats.cancel_hi,
        frob_m=frobenius_norm(M),
        frob_n=frobenius_norm(N),
        ratios=stats.ratios,
        cancel_hi_exact=hi_exact,
    )


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    """Frobenius-relative error ||exact - approx||_F / ||exact||_F."""
    if approx.shape != exact.shape:
        raise ValueError(f"shapes differ: {approx.shape} vs {exact.shape}")
    denom = frobenius_norm(exact)
    if denom == 0.0:
        raise ValueError("exact matrix has zero norm")
    return frobenius_norm(exact - approx) / denom


class CoverageResult(NamedTuple):
    reps: int
    violations: int
    frequency: float
    ci_low: float
    ci_high: float


def _clopper_pearson(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    alpha = 1.0 - confidence
    lo = 0.0 if k == 0 else float(_beta_dist.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(_beta_dist.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def coverage_check(
    M: np.ndarray,
    N: np.ndarray,
    reps: int,
    rng: np.random.Generator,
    runner: Callable[[np.random.Generator], tuple[np.ndarray, float]],
) -> CoverageResult:
    """Count how often the squared Frobenius error exceeds its bound.

    ``runner(stream)`` produces one replication: (estimate, squared-error
    bound).  Returning the bound per replication lets pilot-based bounds
    vary with the pilot draw.  Reports the violation frequency with a 95%
    Clopper-Pearson interval.
    """
    if reps < 100:
        raise ValueError("need at least 100 replications for a meaningful frequency")
    exact = multiply_exact(M, N)
    violations = 0
    for stream in rng.spawn(reps):
        estimate, sq_bound = runner(stream)
        if frobenius_norm(estimate - exact) ** 2 > sq_bound:
            violations += 1
    lo, hi = _clopper_pearson(violations, reps)
    return CoverageResult(reps, violations, violations / reps, lo, hi)


def coverage_check_plan(
    M: np.ndarray,
    N: np.ndarray,
    plan: SamplingPlan,
    sq_error_bound: float,
    reps: int,
    rng: np.random.Generator,
) -> CoverageResult:
    def runner(stream):
        return estimate_product(M, N, plan, stream)[1], sq_error_bound

    return coverage_check(M, N, reps, rng, runner)


class NormalityResult(NamedTuple):
    samples: np.ndarray  # standardized errors at the chosen entry
    mean: float
    variance: float
    ks_distance: float


def normality_diagnostic(
    M: np.ndarray,
    N: np.ndarray,
    plan: SamplingPlan,
    entry: tuple[int, int],
    reps: int,
    rng: np.random.Generator,
) -> NormalityResult:
    """Standardize one entry's estimation error by its exact standard
    deviation over ``reps`` replications and measure the sup-distance of the
    empirical CDF from the standard normal."""
    if reps < 1000:
        raise ValueError("need at least 1000 replications for the diagnostic")
    h, f = entry
    sigma_sq = elementwise_variance(M, N, plan)[h, f]
    if sigma_sq <= 0.0:
        raise ValueError(f"entry {entry} has zero variance under this plan")
    exact = multiply_exact(M, N)[h, f]
    scale = math.sqrt(sigma_sq)
    samples = np.empty(reps)
    for r, stream in enumerate(rng.spawn(reps)):
        samples[r] = (estimate_product(M, N, plan, stream)[1][h, f] - exact) / scale
    z = np.sort(samples)
    cdf = ndtr(z)
    grid = np.arange(1, reps + 1) / reps
    ks = float(max((grid - cdf).max(), (cdf - (grid - 1.0 / reps)).max()))
    return NormalityResult(samples, float(samples.mean()), float(samples.var(ddof=1)), ks)


@dataclass(frozen=True)
class AnalyticsRow:
    """One analytics CSV line: closed-form quantities next to observed ones."""

    instance: str
    method: str
    c: int
    num_blocks: int
    objective: float
    sq_bound_optimal: float
    sq_bound_score: float
    sq_bound_pilot: float
    empirical_mse: float
    coverage: float


ANALYTICS_HEADER = [
    "instance",
    "method",
    "c",
    "num_blocks",
    "objective",
    "sq_bound_optimal",
    "sq_bound_score",
    "sq_bound_pilot",
    "empirical_mse",
    "coverage",
]


def write_analytics_csv(path, rows: Sequence[AnalyticsRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANALYTICS_HEADER)
        for r in rows:
            w.writerow(
                [
                    r.instance,
                    r.method,
                    r.c,
                    r.num_blocks,
                    f"{r.objective:.17g}",
                    f"{r.sq_bound_optimal:.17g}",
                    f"{r.sq_bound_score:.17g}",
                    f"{r.sq_bound_pilot:.17g}",
                    f"{r.empirical_mse:.17g}",
                    f"{r.coverage:.17g}",
                ]
            )
