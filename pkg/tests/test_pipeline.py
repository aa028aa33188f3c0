import datetime as dt
import json
import math

import numpy as np
import pytest

from streamflag import pipeline as pl
from streamflag.core import OutlierCategory, RegionId, RegionLevel, StreamSeries
from streamflag.monitor import RetrainDecision
from synthdata import (
    START,
    WEEKEND_DIP,
    build_world,
    make_stream,
    write_data_csv,
    write_obs_csv,
    write_regions_csv,
)


@pytest.fixture(scope="module")
def world():
    rng = np.random.default_rng(777)
    return build_world(rng, n_states=2, counties_per_state=3, territories=1, n_days=90)


@pytest.fixture(scope="module")
def snapshot(world):
    streams, registry, _ = world
    return pl.train(pl.PipelineConfig(), streams, registry)


def next_day_obs(world, factor=1.0, date=None):
    """Observations one day past training, scaled by ``factor``."""
    streams, _, _ = world
    rng = np.random.default_rng(4242)
    date = date or max(s.end_date for s in streams) + dt.timedelta(days=1)
    obs = {}
    for s in streams:
        base = np.nanmean(s.values[-14:])
        obs[s.region.code] = float(rng.binomial(s.population, min(factor * base / s.population, 1)))
    return date, obs


class TestConfig:
    def test_defaults_valid(self):
        cfg = pl.PipelineConfig()
        assert cfg.z_threshold == 3.0
        assert cfg.min_spacing == 28
        assert cfg.short_series_cutoff == 60

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"z_threshold": 2.5, "zz_top": 1}))
        with pytest.raises(ValueError, match="unknown config keys: zz_top"):
            pl.PipelineConfig.from_file(path)

    def test_range_validation(self):
        with pytest.raises(ValueError):
            pl.PipelineConfig(ks_alpha=2.0)
        with pytest.raises(ValueError):
            pl.PipelineConfig(min_spacing=1)
        with pytest.raises(ValueError):
            pl.PipelineConfig(short_series_cutoff=10)

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"z_threshold": 2.5, "ks_alpha": 0.05}))
        cfg = pl.PipelineConfig.from_file(path)
        assert cfg.z_threshold == 2.5
        assert cfg.ks_alpha == 0.05


class TestIngest:
    def write_world(self, tmp_path, streams, registry, populations):
        data = tmp_path / "data.csv"
        regions = tmp_path / "regions.csv"
        write_data_csv(data, streams)
        write_regions_csv(regions, registry, populations)
        return data, regions

    def test_round_trip(self, tmp_path, world):
        streams, registry, populations = world
        data, regions = self.write_world(tmp_path, streams, registry, populations)
        loaded, reg2 = pl.ingest_csv(data, regions)
        assert len(loaded) == len(streams)
        by_code = {s.region.code: s for s in loaded}
        for original in streams:
            mirror = by_code[original.region.code]
            assert mirror.start_date == original.start_date
            assert np.allclose(mirror.values, original.values)
            assert mirror.population == original.population

    def test_three_rows_one_series(self, tmp_path):
        (tmp_path / "regions.csv").write_text(
            "region_code,region_level,parent_code,population\nUS,nation,,1000\n"
        )
        (tmp_path / "data.csv").write_text(
            "date,region_code,region_level,value\n"
            "2022-01-01,US,nation,5\n2022-01-02,US,nation,6\n2022-01-03,US,nation,7\n"
        )
        streams, _ = pl.ingest_csv(tmp_path / "data.csv", tmp_path / "regions.csv")
        assert len(streams) == 1 and len(streams[0]) == 3

    def test_gap_densified_with_sentinels(self, tmp_path):
        (tmp_path / "regions.csv").write_text(
            "region_code,region_level,parent_code,population\nUS,nation,,1000\n"
        )
        (tmp_path / "data.csv").write_text(
            "date,region_code,region_level,value\n"
            "2022-01-01,US,nation,5\n2022-01-04,US,nation,6\n2022-01-05,US,nation,7\n"
        )
        streams, _ = pl.ingest_csv(tmp_path / "data.csv", tmp_path / "regions.csv")
        values = streams[0].values
        assert len(values) == 5
        assert math.isnan(values[1]) and math.isnan(values[2])

    def test_duplicate_row_rejected_with_line(self, tmp_path):
        (tmp_path / "regions.csv").write_text(
            "region_code,region_level,parent_code,population\nUS,nation,,1000\n"
        )
        (tmp_path / "data.csv").write_text(
            "date,region_code,region_level,value\n"
            "2022-01-01,US,nation,5\n2022-01-01,US,nation,6\n"
        )
        with pytest.raises(ValueError, match="line 3: duplicate"):
            pl.ingest_csv(tmp_path / "data.csv", tmp_path / "regions.csv")

    def test_unknown_region_rejected(self, tmp_path):
        (tmp_path / "regions.csv").write_text(
            "region_code,region_level,parent_code,population\nUS,nation,,1000\n"
        )
        (tmp_path / "data.csv").write_text(
            "date,region_code,region_level,value\n2022-01-01,XX,nation,5\n"
        )
        with pytest.raises(ValueError, match="unknown region 'XX'"):
            pl.ingest_csv(tmp_path / "data.csv", tmp_path / "regions.csv")

    def test_malformed_value_rejected(self, tmp_path):
        (tmp_path / "regions.csv").write_text(
            "region_code,region_level,parent_code,population\nUS,nation,,1000\n"
        )
        (tmp_path / "data.csv").write_text(
            "date,region_code,region_level,value\n2022-01-01,US,nation,banana\n"
        )
        with pytest.raises(ValueError, match="line 2: bad value"):
            pl.ingest_csv(tmp_path / "data.csv", tmp_path / "regions.csv")

    def test_header_must_match(self, tmp_path):
        (tmp_path / "regions.csv").write_text(
            "region_code,region_level,parent_code,population\nUS,nation,,1000\n"
        )
        (tmp_path / "data.csv").write_text("when,where,level,count\n")
        with pytest.raises(ValueError, match="header"):
            pl.ingest_csv(tmp_path / "data.csv", tmp_path / "regions.csv")


class TestTrain:
    def test_group_structure(self, snapshot):
        assert set(snapshot.groups) == {
            "county:S00",
            "county:S01",
            pl.STATE_GROUP,
            "nation:US",
        }
        assert snapshot.groups["county:S00"].members == ["00000", "00001", "00002"]
        assert snapshot.groups[pl.STATE_GROUP].members == ["S00", "S01", "T00"]

    def test_pooled_null_sizes(self, snapshot):
        # 90-day histories: train 30, holdout 60 stats per stream
        null = snapshot.groups["county:S00"].null
        assert len(null) == 3 * 60

    def test_short_stream_excluded_from_modeling(self, world):
        streams, registry, populations = world
        region = RegionId("00999", RegionLevel.COUNTY, "S00")
        registry.add(region)
        short = make_stream(np.random.default_rng(5), region, 1_000_000, 45, 2000.0)
        try:
            snapshot = pl.train(pl.PipelineConfig(), list(streams) + [short], registry)
        finally:
            registry._by_code.pop("00999")
        state = snapshot.streams["00999"]
        assert state.short_series
        assert state.ar_weights is None
        assert "00999" not in snapshot.groups["county:S00"].members

    def test_deterministic_bytes(self, world, tmp_path):
        streams, registry, _ = world
        cfg = pl.PipelineConfig()
        a = pl.train(cfg, streams, registry)
        b = pl.train(cfg, streams, registry)
        pl.save_state(a, tmp_path / "a")
        pl.save_state(b, tmp_path / "b")
        assert (tmp_path / "a/snapshot.json").read_bytes() == (
            tmp_path / "b/snapshot.json"
        ).read_bytes()

    def test_worker_count_invariance(self, world, tmp_path):
        streams, registry, _ = world
        cfg = pl.PipelineConfig()
        seq = pl.train(cfg, streams, registry, workers=1)
        par = pl.train(cfg, streams, registry, workers=2)
        pl.save_state(seq, tmp_path / "seq")
        pl.save_state(par, tmp_path / "par")
        assert (tmp_path / "seq/snapshot.json").read_bytes() == (
            tmp_path / "par/snapshot.json"
        ).read_bytes()

    def test_built_at_from_data(self, world, snapshot):
        streams, _, _ = world
        assert snapshot.built_at == max(s.end_date for s in streams)


class TestScoreDay:
    def fresh_snapshot(self, world):
        streams, registry, _ = world
        return pl.train(pl.PipelineConfig(), streams, registry)

    def test_calibrated_observation_scores_low(self, world):
        snapshot = self.fresh_snapshot(world)
        code = "00000"
        stream = snapshot.streams[code]
        date = snapshot.built_at + dt.timedelta(days=1)
        # feed exactly the AR prediction, mapped back to raw scale
        window = stream.corrected[-7:][::-1]
        predicted = float(window @ stream.ar_weights)
        raw = predicted * stream.weekday_factors[date.weekday()]
        result = pl.score_day(snapshot, date, {code: raw})
        flag = next(f for f in result.flags if f.region_code == code)
        assert flag.rank_score < 0.5

    def test_spike_ranks_first(self, world):
        snapshot = self.fresh_snapshot(world)
        date, obs = next_day_obs(world)
        obs["00001"] *= 10
        result = pl.score_day(snapshot, date, obs)
        assert result.flags[0].region_code == "00001"
        assert result.flags[0].rank_score == max(f.rank_score for f in result.flags)

    def test_negative_annotated_but_listed(self, world):
        snapshot = self.fresh_snapshot(world)
        date, obs = next_day_obs(world)
        obs["00002"] = -50.0
        result = pl.score_day(snapshot, date, obs)
        flag = next(f for f in result.flags if f.region_code == "00002")
        assert OutlierCategory.OUT_OF_RANGE in flag.annotations
        assert math.isnan(flag.observed) is False

    def test_missing_observation_annotated_out_of_range(self, world):
        snapshot = self.fresh_snapshot(world)
        date, obs = next_day_obs(world)
        obs.pop("00000")
        result = pl.score_day(snapshot, date, obs)
        flag = next(f for f in result.flags if f.region_code == "00000")
        assert OutlierCategory.OUT_OF_RANGE in flag.annotations
        assert math.isnan(flag.observed)

    def test_unknown_region_warned(self, world):
        snapshot = self.fresh_snapshot(world)
        date, obs = next_day_obs(world)
        obs["99ZZZ"] = 10.0
        result = pl.score_day(snapshot, date, obs)
        assert any("99ZZZ" in w for w in result.warnings)

    def test_date_must_advance(self, world):
        snapshot = self.fresh_snapshot(world)
        date, obs = next_day_obs(world)
        pl.score_day(snapshot, date, obs)
        with pytest.raises(ValueError, match="does not follow"):
            pl.score_day(snapshot, date, obs)

    def test_pvalues_accumulate_per_group(self, world):
        snapshot = self.fresh_snapshot(world)
        date, obs = next_day_obs(world)
        pl.score_day(snapshot, date, obs)
        assert len(snapshot.groups["county:S00"].monitor.pvalues) == 3
        assert len(snapshot.groups[pl.STATE_GROUP].monitor.pvalues) == 3

    def test_doubling_eventually_triggers_drift(self, world):
        snapshot = self.fresh_snapshot(world)
        date = snapshot.built_at
        fired = None
        for step in range(1, 22):
            date = date + dt.timedelta(days=1)
            _, obs = next_day_obs(world, factor=2.0, date=date)
            result = pl.score_day(snapshot, date, obs)
            if result.decisions["county:S00"] is RetrainDecision.DRIFT:
                fired = step
                break
        assert fired is not None and fired <= 21

    def test_gap_days_filled_as_missing(self, world):
        snapshot = self.fresh_snapshot(world)
        date, obs = next_day_obs(world)
        jumped = date + dt.timedelta(days=3)
        result = pl.score_day(snapshot, jumped, obs)
        stream = snapshot.streams["00000"]
        assert stream.end_date == jumped
        assert math.isnan(stream.raw[-2])  # gap day stored as missing


class TestPersistence:
    def test_snapshot_round_trip_bit_exact(self, snapshot, tmp_path):
        pl.save_state(snapshot, tmp_path)
        loaded = pl.load_state(tmp_path)
        pl.save_state(loaded, tmp_path / "again")
        assert (tmp_path / "snapshot.json").read_bytes() == (
            tmp_path / "again/snapshot.json"
        ).read_bytes()

    def test_loaded_snapshot_scores_identically(self, world, tmp_path):
        streams, registry, _ = world
        cfg = pl.PipelineConfig()
        mem = pl.train(cfg, streams, registry)
        pl.save_state(mem, tmp_path)
        disk = pl.load_state(tmp_path)
        date, obs = next_day_obs(world)
        res_mem = pl.score_day(mem, date, obs)
        res_disk = pl.score_day(disk, date, obs)
        assert res_mem.flags == res_disk.flags
        assert res_mem.decisions == res_disk.decisions

    def test_runtime_continuation_round_trip(self, world, tmp_path):
        streams, registry, _ = world
        cfg = pl.PipelineConfig()
        live = pl.train(cfg, streams, registry)
        pl.save_state(live, tmp_path)
        date, obs = next_day_obs(world)
        pl.score_day(live, date, obs)
        pl.save_runtime(live, tmp_path)

        resumed = pl.load_state(tmp_path)
        assert resumed.last_scored == date
        date2 = date + dt.timedelta(days=1)
        _, obs2 = next_day_obs(world, date=date2)
        res_live = pl.score_day(live, date2, obs2)
        res_resumed = pl.score_day(resumed, date2, obs2)
        assert res_live.flags == res_resumed.flags

    def test_flag_store_round_trip(self, world, tmp_path):
        streams, registry, _ = world
        snapshot = pl.train(pl.PipelineConfig(), streams, registry)
        date, obs = next_day_obs(world)
        result = pl.score_day(snapshot, date, obs)
        pl.append_flags(tmp_path, result)
        loaded = pl.read_flags(tmp_path, date)
        assert tuple(loaded) == result.flags

    def test_reviews_last_write_wins(self, tmp_path):
        day = dt.date(2022, 3, 1)
        pl.append_review(tmp_path, "00000", day, True, "first")
        pl.append_review(tmp_path, "00000", day, False, "second")
        effective = pl.read_reviews(tmp_path)
        assert effective[("00000", day.isoformat())]["note"] == "second"
        assert effective[("00000", day.isoformat())]["reviewed"] is False

    def test_version_checked_on_load(self, snapshot, tmp_path):
        pl.save_state(snapshot, tmp_path)
        blob = json.loads((tmp_path / "snapshot.json").read_text())
        blob["version"] = 99
        (tmp_path / "snapshot.json").write_text(json.dumps(blob))
        with pytest.raises(ValueError, match="version"):
            pl.load_state(tmp_path)
