"""Metrics, the ideal-speedup cost model, kernel benchmarks and (W, N) exploration."""

from .dse import (
    ERROR_FLOOR,
    FULL_GRID,
    DseCell,
    DseError,
    DseReport,
    dse_grid,
    dse_score,
    make_report,
    min_max,
    parse_grid,
    score_cells,
    select,
)
from .enhance import (
    EnhancementReport,
    FileScore,
    enhancement_eval,
    identity_predictor,
    model_predictor,
    oracle_predictor,
    resynthesize,
)
from .evaluators import enhancement_evaluator, vad_evaluator
from .metrics import PERFECT, MetricError, decisions, frame_error, snr_db
from .speedup import BenchResult, SpeedupModel, bench_gemm, ideal_speedup, quantized_layer_fn, time_features

