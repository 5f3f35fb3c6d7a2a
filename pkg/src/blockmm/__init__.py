"""Randomized block matrix multiplication by importance sampling.

Partition the inner dimension into blocks, sample column/row outer products
within each block with variance-aware probabilities and per-block budgets,
and combine the rescaled draws into an unbiased product estimate.  The
package also ships the exact variance analytics, high-probability error
bounds, synthetic instance generators, and a benchmark CLI.
"""

from .matrix import (
    BlockPartition,
    as_matrix,
    block_view,
    column_norms,
    frobenius_norm,
    load_matrix,
    load_matrix_csv,
    multiply_exact,
    row_norms,
    save_matrix,
    save_matrix_csv,
)
from .plan import (
    METHOD_TAGS,
    BlockProbabilities,
    BlockScores,
    FloorRatio,
    SamplingPlan,
    allocate_by_score_sums,
    allocate_optimal,
    allocate_two_step,
    allocate_uniform,
    block_norm_probabilities,
    block_scores,
    integerize,
    optimal_probabilities,
    optimal_size_weights,
    plan_from_dict,
    plan_from_json,
    plan_to_dict,
    plan_to_json,
    prob_floor_ratio,
    real_optimal_budgets,
    score_sums,
    uniform_probabilities,
)
from .estimators import (
    BlockDrawRecord,
    DrawRecord,
    SampleLog,
    SketchPair,
    TwoStepResult,
    estimate_product,
    estimate_product_block_sampling,
    estimate_product_two_step,
    sketch_columns,
)
from .analysis import (
    AnalyticsRow,
    BoundInputs,
    BoundPair,
    CancellationStats,
    CoverageResult,
    NormalityResult,
    bound_inputs_for_plan,
    bounds_optimal_allocation,
    bounds_pilot_allocation,
    bounds_score_allocation,
    cancellation_stats,
    coverage_check,
    coverage_check_plan,
    elementwise_variance,
    expected_sq_error,
    minimum_expected_sq_error,
    normality_diagnostic,
    relative_error,
    write_analytics_csv,
)
from .datagen import (
    CovarianceSpec,
    ar_covariance,
    gen_heavy_tail_instance,
    gen_normal_instance,
    load_instance,
    save_instance,
)
from .bench import (
    ExperimentConfig,
    RawRecord,
    ResourceCapError,
    SummaryRecord,
    config_from_dict,
    estimate_bytes,
    run,
    summarize,
    write_raw_csv,
    write_results,
    write_summary_csv,
)

__version__ = "0.1.0"
