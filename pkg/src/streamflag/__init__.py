"""streamflag: ranked outlier flagging for daily geographic count streams.

A small engine that ingests daily count series (cases, visits, deaths, ...)
for a geographic hierarchy, builds per-stream null models that are robust to
the usual public-data pathologies (negative corrections, day-of-week cycles,
regime shifts, short histories), and emits a ranked list of the recent points
most worth a human reviewer's attention.
"""

from streamflag.core import (
    OutlierCategory,
    ProcessedSeries,
    RegionId,
    RegionLevel,
    RegionRegistry,
    StreamSeries,
    sibling_group,
    weekday_of,
)
from streamflag.changepoint import RegimeSegmentation, gaussian_cost, pelt_segment
from streamflag.preprocess import (
    WeekdayModel,
    ZScoreConfig,
    apply_weekday_correction,
    fit_weekday_model,
    process_stream,
    short_series_outliers,
)
from streamflag.predictor import ARModel, fit_ar, predict, training_split
from streamflag.scoring import (
    FlagRecord,
    PooledNull,
    TestStatRecord,
    binom_stat,
    build_pooled_null,
    empirical_p,
    rank_flags,
    rank_score,
)
from streamflag.monitor import MonitorState, RetrainDecision, ks_statistic, should_retrain
from streamflag.pipeline import PipelineConfig, StateSnapshot, ingest_csv, score_day, train

__version__ = "0.1.0"

__all__ = [
    "ARModel",
    "FlagRecord",
    "MonitorState",
    "OutlierCategory",
    "PipelineConfig",
    "PooledNull",
    "ProcessedSeries",
    "RegimeSegmentation",
    "RegionId",
    "RegionLevel",
    "RegionRegistry",
    "RetrainDecision",
    "StateSnapshot",
    "StreamSeries",
    "TestStatRecord",
    "WeekdayModel",
    "ZScoreConfig",
    "apply_weekday_correction",
    "binom_stat",
    "build_pooled_null",
    "empirical_p",
    "fit_ar",
    "fit_weekday_model",
    "gaussian_cost",
    "ingest_csv",
    "ks_statistic",
    "pelt_segment",
    "predict",
    "process_stream",
    "rank_flags",
    "rank_score",
    "score_day",
    "short_series_outliers",
    "should_retrain",
    "sibling_group",
    "train",
    "training_split",
    "weekday_of",
]
