"""End-to-end orchestration: ingest, train, daily scoring, persistence.

State layout on disk (one directory per deployment):

    snapshot.json   immutable training snapshot (models, stats, pooled nulls)
    runtime.json    evolving continuation: appended days, monitor p-values
    flags.csv       append-only ranked flag output, one block per scored day
    reviews.jsonl   append-only review actions; last write wins on read

Training is deterministic given config plus data: identical inputs produce
byte-identical snapshot and flag files, regardless of worker count.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from streamflag.changepoint import RegimeSegmentation, default_penalty, pelt_segment
from streamflag.core import (
    OutlierCategory,
    RegionId,
    RegionLevel,
    RegionRegistry,
    StreamSeries,
    weekday_of,
)
from streamflag.monitor import MonitorState, RetrainDecision, should_retrain
from streamflag.predictor import fit_ar, predict_all, training_split
from streamflag.preprocess import (
    ZScoreConfig,
    clamp_out_of_range,
    process_stream,
    short_series_outliers,
)
from streamflag.scoring import (
    FlagRecord,
    PooledNull,
    binom_stat,
    binom_stat_many,
    build_pooled_null,
    empirical_p,
    rank_flags,
    rank_score,
)

__all__ = [
    "PipelineConfig",
    "StreamState",
    "GroupState",
    "StateSnapshot",
    "ScoreResult",
    "ingest_csv",
    "parse_observations",
    "train",
    "score_day",
    "save_state",
    "save_runtime",
    "load_state",
    "append_flags",
    "read_flags",
    "append_review",
    "read_reviews",
]

SNAPSHOT_VERSION = 1

DATA_HEADER = ["date", "region_code", "region_level", "value"]
REGIONS_HEADER = ["region_code", "region_level", "parent_code", "population"]
FLAGS_HEADER = [
    "date",
    "region_code",
    "region_level",
    "rank",
    "rank_score",
    "p_value",
    "k",
    "observed",
    "observed_corrected",
    "predicted",
    "residual_per_capita",
    "annotations",
]

STATE_GROUP = "states"


@dataclass(frozen=True)
class PipelineConfig:
    """All tunable constants, with the deployment defaults."""

    z_threshold: float = 3.0
    pelt_penalty: Optional[float] = None  # None -> 2 * n_streams * log(T)
    min_spacing: int = 28
    ar_lag: int = 7
    ridge: float = 1e-6
    ks_alpha: float = 0.01
    retrain_max_age_days: int = 90
    short_series_cutoff: int = 60
    iqr_multiplier: float = 1.5
    workers: int = 1
    data_csv: Optional[str] = None
    regions_csv: Optional[str] = None
    state_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if self.z_threshold <= 0:
            raise ValueError("z_threshold must be positive")
        if self.pelt_penalty is not None and self.pelt_penalty <= 0:
            raise ValueError("pelt_penalty must be positive when set")
        if self.min_spacing < 2:
            raise ValueError("min_spacing must be >= 2")
        if self.ar_lag < 1:
            raise ValueError("ar_lag must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if not 0 < self.ks_alpha < 1:
            raise ValueError("ks_alpha must be in (0, 1)")
        if self.retrain_max_age_days < 1:
            raise ValueError("retrain_max_age_days must be >= 1")
        if self.short_series_cutoff < 2 * self.ar_lag + 1 + 30:
            raise ValueError(
                "short_series_cutoff too small for the AR training split"
            )
        if self.iqr_multiplier <= 0:
            raise ValueError("iqr_multiplier must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        """Load config from a JSON object file; unknown keys are errors."""
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StreamState:
    """Everything the scorer needs about one stream."""

    code: str
    level: str
    parent: Optional[str]
    population: int
    start_date: dt.date
    raw: np.ndarray
    imputed: np.ndarray
    corrected: np.ndarray
    labels: dict[int, str]
    changepoints: list[int]
    short_series: bool
    trained_len: int
    weekday_factors: Optional[np.ndarray] = None
    ar_weights: Optional[np.ndarray] = None
    train_size: int = 0
    holdout_stats: np.ndarray = field(default_factory=lambda: np.empty(0))
    dow_mean: Optional[np.ndarray] = None
    dow_sd: Optional[np.ndarray] = None
    glob_mean: float = 0.0
    glob_sd: float = 0.0
    rt_annotations: dict[str, list[str]] = field(default_factory=dict)

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=len(self.raw) - 1)

    def weekday_on(self, day: dt.date) -> int:
        return weekday_of(day)

    def append_day(self, raw: float, imputed: float, corrected: float) -> None:
        self.raw = np.append(self.raw, raw)
        self.imputed = np.append(self.imputed, imputed)
        self.corrected = np.append(self.corrected, corrected)


@dataclass
class GroupState:
    """Pooling unit: shared null distribution plus the drift monitor."""

    key: str
    members: list[str]
    null: PooledNull
    monitor: MonitorState


@dataclass
class StateSnapshot:
    """Full engine state: per-stream models and per-group nulls/monitors."""

    version: int
    built_at: dt.date
    config: PipelineConfig
    regions: dict[str, dict]
    streams: dict[str, StreamState]
    groups: dict[str, GroupState]
    last_scored: Optional[dt.date] = None

    def group_key_of(self, code: str) -> str:
        return _group_key(self.streams[code].level, self.streams[code].parent, code)


@dataclass(frozen=True)
class ScoreResult:
    """Output of one scored date."""

    date: dt.date
    flags: tuple[FlagRecord, ...]
    decisions: dict[str, RetrainDecision]
    warnings: tuple[str, ...] = ()


def _group_key(level: str, parent: Optional[str], code: str) -> str:
    if level == RegionLevel.COUNTY.value:
        return f"county:{parent}"
    if level in (RegionLevel.STATE.value, RegionLevel.TERRITORY.value):
        return STATE_GROUP
    return f"nation:{code}"


# ---------------------------------------------------------------------------
# Ingestion


def _read_regions(path: str | Path) -> tuple[RegionRegistry, dict[str, int]]:
    registry = RegionRegistry()
    populations: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REGIONS_HEADER:
            raise ValueError(
                f"region metadata header must be {','.join(REGIONS_HEADER)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"regions line {lineno}: expected 4 fields")
            code, level_s, parent, pop_s = [f.strip() for f in row]
            try:
                level = RegionLevel(level_s)
            except ValueError as exc:
                raise ValueError(f"regions line {lineno}: bad level {level_s!r}") from exc
            try:
                population = int(pop_s)
            except ValueError as exc:
                raise ValueError(f"regions line {lineno}: bad population {pop_s!r}") from exc
            if population < 1:
                raise ValueError(f"regions line {lineno}: population must be >= 1")
            registry.add(RegionId(code, level, parent or None))
            populations[code] = population
    registry.validate()
    return registry, populations


def ingest_csv(
    data_path: str | Path, regions_path: str | Path
) -> tuple[list[StreamSeries], RegionRegistry]:
    """Read the daily data table into dense per-region series.

    Dates inside each region's observed range that have no row become
    missing sentinels. Malformed rows, unknown regions, and duplicate
    (region, date) pairs are errors carrying the offending line number.
    """
    registry, populations = _read_regions(regions_path)
    observed: dict[str, dict[dt.date, float]] = {}
    with open(data_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DATA_HEADER:
            raise ValueError(f"data header must be {','.join(DATA_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"data line {lineno}: expected 4 fields")
            date_s, code, level_s, value_s = [f.strip() for f in row]
            try:
                day = dt.date.fromisoformat(date_s)
            except ValueError as exc:
                raise ValueError(f"data line {lineno}: bad date {date_s!r}") from exc
            if code not in registry:
                raise ValueError(f"data line {lineno}: unknown region {code!r}")
            region = registry.get(code)
            if region.level.value != level_s:
                raise ValueError(
                    f"data line {lineno}: level {level_s!r} does not match "
                    f"registry ({region.level.value!r})"
                )
            try:
                value = float(value_s)
            except ValueError as exc:
                raise ValueError(f"data line {lineno}: bad value {value_s!r}") from exc
            per_region = observed.setdefault(code, {})
            if day in per_region:
                raise ValueError(f"data line {lineno}: duplicate ({code}, {day})")
            per_region[day] = value

    streams = []
    for code in sorted(observed):
        days = observed[code]
        start, end = min(days), max(days)
        length = (end - start).days + 1
        values = np.full(length, np.nan)
        for day, value in days.items():
            values[(day - start).days] = value
        streams.append(
            StreamSeries(
                region=registry.get(code),
                population=populations[code],
                start_date=start,
                values=values,
            )
        )
    return streams, registry


def parse_observations(path: str | Path, registry: RegionRegistry) -> dict[dt.date, dict[str, float]]:
    """Read an observations file (same schema as the data table) into
    per-date maps. Unknown regions are errors here; scoring itself degrades
    them to warnings when fed a raw mapping."""
    by_date: dict[dt.date, dict[str, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DATA_HEADER:
            raise ValueError(f"observations header must be {','.join(DATA_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"observations line {lineno}: expected 4 fields")
            date_s, code, level_s, value_s = [f.strip() for f in row]
            try:
                day = dt.date.fromisoformat(date_s)
            except ValueError as exc:
                raise ValueError(f"observations line {lineno}: bad date {date_s!r}") from exc
            if code not in registry:
                raise ValueError(f"observations line {lineno}: unknown region {code!r}")
            try:
                value = float(value_s)
            except ValueError as exc:
                raise ValueError(f"observations line {lineno}: bad value {value_s!r}") from exc
            day_map = by_date.setdefault(day, {})
            if code in day_map:
                raise ValueError(f"observations line {lineno}: duplicate ({code}, {day})")
            day_map[code] = value
    return by_date


# ---------------------------------------------------------------------------
# Training


def _aligned_window(streams: Sequence[StreamSeries]) -> Optional[tuple[dt.date, dt.date]]:
    start = max(s.date_at(s.start_index) for s in streams)
    end = min(s.end_date for s in streams)
    return (start, end) if start <= end else None


def _segment_group(
    streams: Sequence[StreamSeries],
    clamped: Mapping[str, np.ndarray],
    config: PipelineConfig,
) -> dict[str, RegimeSegmentation]:
    """Joint changepoints on the group's common window, mapped per stream."""
    window = _aligned_window(streams)
    spacing = config.min_spacing
    out: dict[str, RegimeSegmentation] = {}
    shared: list[int] = []
    if window is not None:
        start, end = window
        length = (end - start).days + 1
        if length >= 2 * spacing:
            mat = []
            for s in streams:
                offset = s.index_of(start)
                mat.append(clamped[s.region.code][offset : offset + length])
            penalty = (
                config.pelt_penalty
                if config.pelt_penalty is not None
                else default_penalty(len(streams), length)
            )
            seg = pelt_segment(mat, penalty=penalty, min_spacing=spacing)
            shared = list(seg.changepoints)

    for s in streams:
        local: list[int] = []
        if shared:
            offset = s.index_of(window[0])
            for cp in shared:
                cp_local = cp + offset
                if spacing <= cp_local <= len(s) - spacing:
                    if not local or cp_local - local[-1] >= spacing:
                        local.append(cp_local)
        penalty = (
            config.pelt_penalty
            if config.pelt_penalty is not None
            else default_penalty(len(streams), len(s))
        )
        out[s.region.code] = RegimeSegmentation(
            tuple(local), min_spacing=spacing, penalty=penalty, length=len(s)
        )
    return out


def _train_modeled_stream(
    series: StreamSeries, seg: RegimeSegmentation, config: PipelineConfig
) -> tuple[StreamState, np.ndarray]:
    processed = process_stream(series, seg, ZScoreConfig(config.z_threshold))
    corrected = processed.weekday_corrected
    train_range, holdout_range = training_split(len(series), lag=config.ar_lag)
    model = fit_ar(
        corrected[train_range.start : train_range.stop],
        ridge=config.ridge,
        lag=config.ar_lag,
    )
    predictions = predict_all(model, corrected, start=holdout_range.start)
    stats = binom_stat_many(
        corrected[holdout_range.start :], predictions, series.population
    )

    last_start, last_end = seg.regimes(len(series))[-1]
    weekdays = series.weekdays()
    reg_imputed = processed.imputed_values[last_start:last_end]
    reg_weekdays = weekdays[last_start:last_end]
    dow_mean = np.zeros(7)
    dow_sd = np.zeros(7)
    for d in range(7):
        bucket = reg_imputed[reg_weekdays == d]
        if bucket.size:
            dow_mean[d] = float(bucket.mean())
            dow_sd[d] = float(np.std(bucket))
    reg_corrected = corrected[last_start:last_end]

    state = StreamState(
        code=series.region.code,
        level=series.region.level.value,
        parent=series.region.parent,
        population=series.population,
        start_date=series.start_date,
        raw=np.array(series.values),
        imputed=np.array(processed.imputed_values),
        corrected=np.array(corrected),
        labels={i: lab.value for i, lab in processed.label_indices().items()},
        changepoints=list(seg.changepoints),
        short_series=False,
        trained_len=len(series),
        weekday_factors=processed.weekday_models[-1].array(),
        ar_weights=model.array(),
        train_size=train_range.stop,
        holdout_stats=stats,
        dow_mean=dow_mean,
        dow_sd=dow_sd,
        glob_mean=float(reg_corrected.mean()),
        glob_sd=float(np.std(reg_corrected)),
    )
    return state, stats


def _train_short_stream(series: StreamSeries, config: PipelineConfig) -> StreamState:
    imputed, labels = clamp_out_of_range(series)
    iqr_labels = short_series_outliers(
        StreamSeries(series.region, series.population, series.start_date, imputed),
        multiplier=config.iqr_multiplier,
    )
    for i, lab in enumerate(iqr_labels):
        if lab is not None and labels[i] is None:
            labels[i] = lab
    return StreamState(
        code=series.region.code,
        level=series.region.level.value,
        parent=series.region.parent,
        population=series.population,
        start_date=series.start_date,
        raw=np.array(series.values),
        imputed=imputed,
        corrected=np.array(imputed),
        labels={i: lab.value for i, lab in enumerate(labels) if lab is not None},
        changepoints=[],
        short_series=True,
        trained_len=len(series),
    )


def _train_group(
    args: tuple[str, list[StreamSeries], PipelineConfig, dt.date]
) -> tuple[str, list[StreamState], dict[str, np.ndarray]]:
    key, streams, config, built_at = args
    streams = sorted(streams, key=lambda s: s.region.code)
    clamped = {s.region.code: clamp_out_of_range(s)[0] for s in streams}
    segs = _segment_group(streams, clamped, config)
    states: list[StreamState] = []
    stats_by_code: dict[str, np.ndarray] = {}
    for series in streams:
        state, stats = _train_modeled_stream(series, segs[series.region.code], config)
        states.append(state)
        stats_by_code[series.region.code] = stats
    return key, states, stats_by_code


def train(
    config: PipelineConfig,
    streams: Sequence[StreamSeries],
    registry: RegionRegistry,
    built_at: Optional[dt.date] = None,
    workers: Optional[int] = None,
) -> StateSnapshot:
    """Fit the full engine: segmentation, processing, AR models, pooled nulls.

    Deterministic given (config, streams): the snapshot does not depend on
    wall-clock time (built_at defaults to the latest date in the data) or on
    the worker count.
    """
    if not streams:
        raise ValueError("no streams to train on")
    registry.validate()
    codes = [s.region.code for s in streams]
    if len(set(codes)) != len(codes):
        raise ValueError("duplicate stream codes")
    if built_at is None:
        built_at = max(s.end_date for s in streams)
    workers = config.workers if workers is None else workers

    modeled: dict[str, list[StreamSeries]] = {}
    shorts: list[StreamSeries] = []
    for series in streams:
        usable = len(series) - series.start_index
        if usable < config.short_series_cutoff:
            shorts.append(series)
        else:
            key = _group_key(
                series.region.level.value, series.region.parent, series.region.code
            )
            modeled.setdefault(key, []).append(series)

    tasks = [
        (key, modeled[key], config, built_at) for key in sorted(modeled)
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_group, tasks))
    else:
        results = [_train_group(task) for task in tasks]
    results.sort(key=lambda r: r[0])

    stream_states: dict[str, StreamState] = {}
    groups: dict[str, GroupState] = {}
    for key, states, stats_by_code in results:
        members = sorted(stats_by_code)
        null = build_pooled_null(stats_by_code, members, built_at)
        monitor = MonitorState(
            last_retrain=built_at,
            alpha=config.ks_alpha,
            max_age_days=config.retrain_max_age_days,
        )
        groups[key] = GroupState(key=key, members=members, null=null, monitor=monitor)
        for state in states:
            stream_states[state.code] = state
    for series in shorts:
        stream_states[series.region.code] = _train_short_stream(series, config)

    populations = {s.region.code: s.population for s in streams}
    regions = {
        r.code: {
            "level": r.level.value,
            "parent": r.parent,
            "population": populations.get(r.code),
        }
        for r in registry
    }
    return StateSnapshot(
        version=SNAPSHOT_VERSION,
        built_at=built_at,
        config=config,
        regions=regions,
        streams=dict(sorted(stream_states.items())),
        groups=dict(sorted(groups.items())),
    )


# ---------------------------------------------------------------------------
# Daily scoring


def score_day(
    snapshot: StateSnapshot,
    date: dt.date,
    observations: Mapping[str, float],
) -> ScoreResult:
    """Score one date's observations against the trained nulls.

    Every modeled stream yields a flag: out-of-range clamping, weekday
    correction with the current regime's factors, AR prediction, binomial
    tail statistic, empirical p-value against the group's pooled null, and
    the |2p - 1| rank score. Real-time day-of-week and global z checks ride
    along as annotations. Streams with no observation for the date are
    imputed from the previous day and annotated out_of_range; unknown codes
    produce warnings. Short-series streams are not scored.
    """
    if snapshot.last_scored is not None and date <= snapshot.last_scored:
        raise ValueError(
            f"date {date} does not follow last scored date {snapshot.last_scored}"
        )
    warnings = [
        f"unknown region {code!r} skipped"
        for code in sorted(observations)
        if code not in snapshot.streams
    ]
    cfg = snapshot.config
    flags: list[FlagRecord] = []
    group_pvalues: dict[str, list[float]] = {key: [] for key in snapshot.groups}

    for code in sorted(snapshot.streams):
        stream = snapshot.streams[code]
        if stream.short_series:
            continue
        if date <= stream.end_date:
            warnings.append(f"stream {code} already covers {date}; skipped")
            continue
        # Close any gap days (treated as missing, not scored).
        while stream.end_date < date - dt.timedelta(days=1):
            gap_day = stream.end_date + dt.timedelta(days=1)
            _append_observation(stream, gap_day, math.nan, cfg)
            stream.rt_annotations.setdefault(gap_day.isoformat(), []).append(
                OutlierCategory.OUT_OF_RANGE.value
            )
        raw = float(observations.get(code, math.nan))
        imputed, corrected, annotations = _append_observation(stream, date, raw, cfg)

        weights = stream.ar_weights
        lag = len(weights)
        # The new day is already appended; lags are the lag values before it.
        window = stream.corrected[-lag - 1 : -1][::-1]
        predicted = float(window @ weights)
        k = binom_stat(corrected, predicted, stream.population)
        group = snapshot.groups[snapshot.group_key_of(code)]
        p = empirical_p(k, group.null)
        score = rank_score(p)
        group_pvalues[group.key].append(p)
        if annotations:
            stream.rt_annotations[date.isoformat()] = [a.value for a in annotations]
        flags.append(
            FlagRecord(
                region_code=code,
                region_level=stream.level,
                date=date,
                p_value=p,
                rank_score=score,
                k=k,
                observed=raw,
                observed_corrected=corrected,
                predicted=predicted,
                residual_per_capita=abs(corrected - predicted) / stream.population,
                annotations=tuple(annotations),
            )
        )

    decisions: dict[str, RetrainDecision] = {}
    for key in sorted(snapshot.groups):
        group = snapshot.groups[key]
        group.monitor.record(group_pvalues[key])
        decisions[key] = should_retrain(group.monitor, date)
    snapshot.last_scored = date
    return ScoreResult(
        date=date,
        flags=tuple(rank_flags(flags)),
        decisions=decisions,
        warnings=tuple(warnings),
    )


def _append_observation(
    stream: StreamState, date: dt.date, raw: float, cfg: PipelineConfig
) -> tuple[float, float, list[OutlierCategory]]:
    """Clamp, correct, and annotate one new observation; append to the tail."""
    pop = float(stream.population)
    annotations: list[OutlierCategory] = []
    if math.isnan(raw):
        imputed = float(stream.imputed[-1]) if len(stream.imputed) else 0.0
        annotations.append(OutlierCategory.OUT_OF_RANGE)
    elif raw < 0.0:
        imputed = 0.0
        annotations.append(OutlierCategory.OUT_OF_RANGE)
    elif raw > pop:
        imputed = pop
        annotations.append(OutlierCategory.OUT_OF_RANGE)
    else:
        imputed = raw

    d = weekday_of(date)
    factors = stream.weekday_factors
    corrected = max(imputed / float(factors[d]), 0.0)

    if not annotations and stream.dow_sd is not None and stream.dow_sd[d] > 0:
        z = (imputed - stream.dow_mean[d]) / stream.dow_sd[d]
        if abs(z) >= cfg.z_threshold:
            annotations.append(OutlierCategory.DAY_OF_WEEK)
    if not annotations and stream.glob_sd > 0:
        z = (corrected - stream.glob_mean) / stream.glob_sd
        if abs(z) >= cfg.z_threshold:
            annotations.append(OutlierCategory.GLOBAL)

    stream.append_day(raw, imputed, corrected)
    return imputed, corrected, annotations


# ---------------------------------------------------------------------------
# Persistence

_FLOAT_NONE = None


def _array_to_list(arr: Optional[np.ndarray]) -> Optional[list]:
    if arr is None:
        return None
    return [None if (isinstance(v, float) and math.isnan(v)) else float(v) for v in arr.tolist()]


def _list_to_array(lst: Optional[Sequence]) -> Optional[np.ndarray]:
    if lst is None:
        return None
    return np.asarray(
        [math.nan if v is None else float(v) for v in lst], dtype=float
    )


def _stream_to_dict(s: StreamState) -> dict:
    base = s.trained_len
    return {
        "code": s.code,
        "level": s.level,
        "parent": s.parent,
        "population": s.population,
        "start_date": s.start_date.isoformat(),
        "raw": _array_to_list(s.raw[:base]),
        "imputed": _array_to_list(s.imputed[:base]),
        "corrected": _array_to_list(s.corrected[:base]),
        "labels": {str(i): lab for i, lab in sorted(s.labels.items())},
        "changepoints": s.changepoints,
        "short_series": s.short_series,
        "trained_len": s.trained_len,
        "weekday_factors": _array_to_list(s.weekday_factors),
        "ar_weights": _array_to_list(s.ar_weights),
        "train_size": s.train_size,
        "holdout_stats": _array_to_list(s.holdout_stats),
        "dow_mean": _array_to_list(s.dow_mean),
        "dow_sd": _array_to_list(s.dow_sd),
        "glob_mean": s.glob_mean,
        "glob_sd": s.glob_sd,
    }


def _stream_from_dict(d: dict) -> StreamState:
    return StreamState(
        code=d["code"],
        level=d["level"],
        parent=d["parent"],
        population=d["population"],
        start_date=dt.date.fromisoformat(d["start_date"]),
        raw=_list_to_array(d["raw"]),
        imputed=_list_to_array(d["imputed"]),
        corrected=_list_to_array(d["corrected"]),
        labels={int(i): lab for i, lab in d["labels"].items()},
        changepoints=list(d["changepoints"]),
        short_series=d["short_series"],
        trained_len=d["trained_len"],
        weekday_factors=_list_to_array(d["weekday_factors"]),
        ar_weights=_list_to_array(d["ar_weights"]),
        train_size=d["train_size"],
        holdout_stats=_list_to_array(d["holdout_stats"]),
        dow_mean=_list_to_array(d["dow_mean"]),
        dow_sd=_list_to_array(d["dow_sd"]),
        glob_mean=d["glob_mean"],
        glob_sd=d["glob_sd"],
    )


def snapshot_to_dict(snapshot: StateSnapshot) -> dict:
    return {
        "version": snapshot.version,
        "built_at": snapshot.built_at.isoformat(),
        "config": snapshot.config.to_dict(),
        "regions": snapshot.regions,
        "streams": {code: _stream_to_dict(s) for code, s in sorted(snapshot.streams.items())},
        "groups": {
            key: {
                "members": g.members,
                "null": _array_to_list(g.null.stats),
                "alpha": g.monitor.alpha,
                "max_age_days": g.monitor.max_age_days,
            }
            for key, g in sorted(snapshot.groups.items())
        },
    }


def snapshot_from_dict(data: dict) -> StateSnapshot:
    if data.get("version") != SNAPSHOT_VERSION:
        raise ValueError(
            f"snapshot schema version {data.get('version')!r} unsupported "
            f"(expected {SNAPSHOT_VERSION})"
        )
    built_at = dt.date.fromisoformat(data["built_at"])
    config = PipelineConfig(**data["config"])
    streams = {
        code: _stream_from_dict(d) for code, d in sorted(data["streams"].items())
    }
    groups = {}
    for key, g in sorted(data["groups"].items()):
        null = PooledNull(frozenset(g["members"]), _list_to_array(g["null"]), built_at)
        monitor = MonitorState(
            last_retrain=built_at,
            alpha=g["alpha"],
            max_age_days=g["max_age_days"],
        )
        groups[key] = GroupState(
            key=key, members=list(g["members"]), null=null, monitor=monitor
        )
    return StateSnapshot(
        version=data["version"],
        built_at=built_at,
        config=config,
        regions=data["regions"],
        streams=streams,
        groups=groups,
    )


def _dump_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def save_state(snapshot: StateSnapshot, state_dir: str | Path) -> None:
    """Write the immutable training snapshot (not the runtime continuation)."""
    out = Path(state_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(snapshot_to_dict(snapshot), out / "snapshot.json")


def save_runtime(snapshot: StateSnapshot, state_dir: str | Path) -> None:
    """Write the evolving continuation: appended days and monitor state."""
    out = Path(state_dir)
    appended = {}
    for code, s in sorted(snapshot.streams.items()):
        if len(s.raw) > s.trained_len or s.rt_annotations:
            appended[code] = {
                "raw": _array_to_list(s.raw[s.trained_len :]),
                "imputed": _array_to_list(s.imputed[s.trained_len :]),
                "corrected": _array_to_list(s.corrected[s.trained_len :]),
                "annotations": {
                    k: v for k, v in sorted(s.rt_annotations.items())
                },
            }
    runtime = {
        "version": SNAPSHOT_VERSION,
        "last_scored": snapshot.last_scored.isoformat() if snapshot.last_scored else None,
        "appended": appended,
        "monitors": {
            key: {
                "pvalues": list(g.monitor.pvalues),
                "last_retrain": g.monitor.last_retrain.isoformat(),
            }
            for key, g in sorted(snapshot.groups.items())
        },
    }
    _dump_json(runtime, out / "runtime.json")


def load_state(state_dir: str | Path) -> StateSnapshot:
    """Load snapshot plus any runtime continuation from a state directory."""
    root = Path(state_dir)
    with open(root / "snapshot.json") as fh:
        snapshot = snapshot_from_dict(json.load(fh))
    runtime_path = root / "runtime.json"
    if runtime_path.exists():
        with open(runtime_path) as fh:
            runtime = json.load(fh)
        if runtime.get("last_scored"):
            snapshot.last_scored = dt.date.fromisoformat(runtime["last_scored"])
        for code, delta in runtime.get("appended", {}).items():
            s = snapshot.streams[code]
            s.raw = np.concatenate([s.raw, _list_to_array(delta["raw"])])
            s.imputed = np.concatenate([s.imputed, _list_to_array(delta["imputed"])])
            s.corrected = np.concatenate([s.corrected, _list_to_array(delta["corrected"])])
            s.rt_annotations = {k: list(v) for k, v in delta["annotations"].items()}
        for key, m in runtime.get("monitors", {}).items():
            snapshot.groups[key].monitor.pvalues = [float(p) for p in m["pvalues"]]
            snapshot.groups[key].monitor.last_retrain = dt.date.fromisoformat(
                m["last_retrain"]
            )
    return snapshot


# ---------------------------------------------------------------------------
# Flag store and reviews


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isnan(value):
        return ""
    return repr(float(value))


def append_flags(state_dir: str | Path, result: ScoreResult) -> Path:
    """Append one scored day's ranked flags to the delimited flag store."""
    path = Path(state_dir) / "flags.csv"
    fresh = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(FLAGS_HEADER)
        for rank, flag in enumerate(result.flags, start=1):
            writer.writerow(
                [
                    flag.date.isoformat(),
                    flag.region_code,
                    flag.region_level,
                    rank,
                    _fmt(flag.rank_score),
                    _fmt(flag.p_value),
                    _fmt(flag.k),
                    _fmt(flag.observed),
                    _fmt(flag.observed_corrected),
                    _fmt(flag.predicted),
                    _fmt(flag.residual_per_capita),
                    "|".join(a.value for a in flag.annotations),
                ]
            )
    return path


def read_flags(
    state_dir: str | Path, date: Optional[dt.date] = None
) -> list[FlagRecord]:
    """Read stored flags (optionally one date), in stored rank order."""
    path = Path(state_dir) / "flags.csv"
    if not path.exists():
        return []
    flags: list[FlagRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FLAGS_HEADER:
            raise ValueError("flag store header mismatch")
        for row in reader:
            day = dt.date.fromisoformat(row[0])
            if date is not None and day != date:
                continue
            annotations = tuple(
                OutlierCategory(a) for a in row[11].split("|") if a
            )
            flags.append(
                FlagRecord(
                    region_code=row[1],
                    region_level=row[2],
                    date=day,
                    rank_score=float(row[4]),
                    p_value=float(row[5]),
                    k=float(row[6]),
                    observed=float(row[7]) if row[7] else math.nan,
                    observed_corrected=float(row[8]),
                    predicted=float(row[9]),
                    residual_per_capita=float(row[10]),
                    annotations=annotations,
                )
            )
    return flags


def append_review(
    state_dir: str | Path,
    region_code: str,
    date: dt.date,
    reviewed: bool,
    note: Optional[str],
) -> dict:
    """Append one review action; the newest action per (region, date) wins."""
    entry = {
        "region_code": region_code,
        "date": date.isoformat(),
        "reviewed": bool(reviewed),
        "note": note,
        "ts": dt.datetime.now(dt.timezone.utc).isoformat(),
    }
    path = Path(state_dir) / "reviews.jsonl"
    with open(path, "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return entry


def read_reviews(state_dir: str | Path) -> dict[tuple[str, str], dict]:
    """Effective review state: last write per (region_code, iso date)."""
    path = Path(state_dir) / "reviews.jsonl"
    effective: dict[tuple[str, str], dict] = {}
    if not path.exists():
        return effective
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            effective[(entry["region_code"], entry["date"])] = entry
    return effective
