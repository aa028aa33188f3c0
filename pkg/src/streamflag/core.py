"""Shared domain types: regions, streams, outlier categories, calendar helpers.

Everything here is immutable after construction and safe to share across
workers. Dates are civil dates (no timezones); a stream's date axis is stored
as a start date plus a dense value vector, so gaplessness holds by
construction and lag arithmetic stays positional.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "RegionLevel",
    "RegionId",
    "RegionRegistry",
    "StreamSeries",
    "OutlierCategory",
    "ProcessedSeries",
    "weekday_of",
    "sibling_group",
]


class RegionLevel(str, Enum):
    """Level of a region in the geographic hierarchy."""

    COUNTY = "county"
    STATE = "state"
    TERRITORY = "territory"
    NATION = "nation"


class OutlierCategory(str, Enum):
    """Categories of non-model outliers a processed point can carry.

    A processed point carries at most one of the first three; TRENDLINE is
    reserved for real-time flags driven by the model-based test statistic.
    """

    OUT_OF_RANGE = "out_of_range"
    GLOBAL = "global"
    DAY_OF_WEEK = "day_of_week"
    TRENDLINE = "trendline"


@dataclass(frozen=True)
class RegionId:
    """A node of the geographic hierarchy.

    Attributes:
        code: unique key, e.g. a 5-digit county FIPS, 2-letter state code,
            or a national code like "US".
        level: hierarchy level.
        parent: code of the parent region; None for the nation.
    """

    code: str
    level: RegionLevel
    parent: Optional[str] = None

    def __post_init__(self) -> None:
        if self.level is RegionLevel.NATION:
            if self.parent is not None:
                raise ValueError(f"nation {self.code!r} must not have a parent")
        elif self.parent is None:
            raise ValueError(f"{self.level.value} region {self.code!r} requires a parent")


class RegionRegistry:
    """Index of all regions in a dataset, keyed by code.

    Validates the hierarchy invariants on insertion: counties hang off
    state-level parents (states or territories), states and territories hang
    off the nation, and codes are unique.
    """

    def __init__(self, regions: Iterable[RegionId] = ()) -> None:
        self._by_code: dict[str, RegionId] = {}
        for region in regions:
            self.add(region)

    def add(self, region: RegionId) -> None:
        if region.code in self._by_code:
            raise ValueError(f"duplicate region code {region.code!r}")
        self._by_code[region.code] = region

    def __contains__(self, code: str) -> bool:
        return code in self._by_code

    def __len__(self) -> int:
        return len(self._by_code)

    def __iter__(self):
        return iter(self._by_code.values())

    def get(self, code: str) -> RegionId:
        try:
            return self._by_code[code]
        except KeyError:
            raise KeyError(f"unknown region code {code!r}") from None

    def validate(self) -> None:
        """Check parent links resolve and levels nest correctly."""
        for region in self._by_code.values():
            if region.level is RegionLevel.NATION:
                continue
            if region.parent not in self._by_code:
                raise ValueError(
                    f"region {region.code!r} references unknown parent {region.parent!r}"
                )
            parent = self._by_code[region.parent]
            if region.level is RegionLevel.COUNTY:
                if parent.level not in (RegionLevel.STATE, RegionLevel.TERRITORY):
                    raise ValueError(
                        f"county {region.code!r} must have a state-level parent, "
                        f"got {parent.level.value!r}"
                    )
            elif parent.level is not RegionLevel.NATION:
                raise ValueError(
                    f"{region.level.value} {region.code!r} must hang off the nation"
                )

    def codes(self) -> list[str]:
        return sorted(self._by_code)


def weekday_of(day: dt.date) -> int:
    """Weekday of a civil date, Monday=0 .. Sunday=6."""
    return day.weekday()


def sibling_group(region: RegionId, index: RegionRegistry) -> set[RegionId]:
    """Regions pooled with ``region`` for joint segmentation and null sharing.

    Counties group with all counties under the same state-level parent;
    states and territories group together nationwide; the nation stands
    alone. ``region`` is always a member of its own group.
    """
    if region.code not in index:
        raise KeyError(f"unknown region code {region.code!r}")
    if region.level is RegionLevel.COUNTY:
        return {
            r
            for r in index
            if r.level is RegionLevel.COUNTY and r.parent == region.parent
        }
    if region.level in (RegionLevel.STATE, RegionLevel.TERRITORY):
        return {
            r for r in index if r.level in (RegionLevel.STATE, RegionLevel.TERRITORY)
        }
    return {region}


MISSING = math.nan
"""Sentinel stored in a value vector for days with no report."""


def is_missing(values: np.ndarray) -> np.ndarray:
    """Boolean mask of missing-day sentinels."""
    return np.isnan(values)


@dataclass(frozen=True)
class StreamSeries:
    """One region's daily count series.

    The date axis is ``start_date + i days`` for ``i`` in
    ``range(len(values))``, so it is contiguous by construction. Days with no
    report hold the NaN missing sentinel; raw values may be negative or
    exceed the population until preprocessing clamps them.
    """

    region: RegionId
    population: int
    start_date: dt.date
    values: np.ndarray
    start_index: int = 0

    def __post_init__(self) -> None:
        if self.population < 1:
            raise ValueError(f"population must be >= 1, got {self.population}")
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        vals.setflags(write=False)
        if not 0 <= self.start_index <= len(vals):
            raise ValueError(f"start_index {self.start_index} outside series")

    @classmethod
    def from_dates(
        cls,
        region: RegionId,
        population: int,
        dates: Sequence[dt.date],
        values: Sequence[float],
        start_index: int = 0,
    ) -> "StreamSeries":
        """Build from an explicit date vector, checking contiguity."""
        if len(dates) != len(values):
            raise ValueError("dates and values must align")
        if not dates:
            raise ValueError("empty series")
        for prev, cur in zip(dates, dates[1:]):
            if (cur - prev).days != 1:
                raise ValueError(f"dates must advance by exactly one day at {cur}")
        return cls(region, population, dates[0], np.asarray(values, dtype=float), start_index)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=len(self.values) - 1)

    def date_at(self, i: int) -> dt.date:
        return self.start_date + dt.timedelta(days=i)

    def index_of(self, day: dt.date) -> int:
        return (day - self.start_date).days

    @property
    def dates(self) -> list[dt.date]:
        return [self.date_at(i) for i in range(len(self.values))]

    def weekdays(self) -> np.ndarray:
        """Weekday code (Mon=0) for every position, vectorized off start_date."""
        first = weekday_of(self.start_date)
        return (first + np.arange(len(self.values))) % 7


@dataclass(frozen=True)
class ProcessedSeries:
    """A stream after outlier detection, imputation, and weekday correction.

    ``imputed_values`` equals the raw values wherever no label was assigned
    and stays inside [0, population]; ``weekday_corrected`` is derived from
    the imputed values (never the raw ones) and may be fractional.
    """

    source: StreamSeries
    imputed_values: np.ndarray
    labels: tuple[Optional[OutlierCategory], ...]
    weekday_corrected: np.ndarray
    segmentation: "RegimeSegmentation" = field(repr=False, default=None)  # type: ignore[assignment]
    weekday_models: tuple = field(repr=False, default=())

    def __post_init__(self) -> None:
        n = len(self.source)
        if len(self.imputed_values) != n or len(self.weekday_corrected) != n:
            raise ValueError("processed vectors must align with the source series")
        if len(self.labels) != n:
            raise ValueError("labels must align with the source series")
        for arr in (self.imputed_values, self.weekday_corrected):
            np.asarray(arr).setflags(write=False)

    def label_indices(self) -> dict[int, OutlierCategory]:
        """Sparse view of the per-point labels."""
        return {i: lab for i, lab in enumerate(self.labels) if lab is not None}
