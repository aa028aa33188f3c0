"""HTTP review API over a trained state directory.

Read endpoints serve the ranked flag list and per-stream calculation
details; mutations (review actions, manual retrain) are serialized behind a
single lock and persist through the append-only stores. The dashboard is a
pure consumer of this API.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import threading
from pathlib import Path
from typing import Optional

from fastapi import BackgroundTasks, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from streamflag import pipeline as pl
from streamflag.report import stream_detail_payload
from streamflag.scoring import FlagRecord

__all__ = ["create_app"]


class ReviewBody(BaseModel):
    reviewed: bool
    note: Optional[str] = None


def _flag_json(flag: FlagRecord, rank: int, review: Optional[dict]) -> dict:
    def _num(v: float) -> Optional[float]:
        return None if (isinstance(v, float) and math.isnan(v)) else v

    return {
        "rank": rank,
        "region_code": flag.region_code,
        "region_level": flag.region_level,
        "date": flag.date.isoformat(),
        "rank_score": flag.rank_score,
        "p_value": flag.p_value,
        "k": flag.k,
        "observed": _num(flag.observed),
        "observed_corrected": flag.observed_corrected,
        "predicted": flag.predicted,
        "residual_per_capita": flag.residual_per_capita,
        "annotations": [a.value for a in flag.annotations],
        "reviewed": bool(review["reviewed"]) if review else flag.reviewed,
        "reviewer_note": review["note"] if review else flag.reviewer_note,
    }


def create_app(state_dir: str | Path, static_dir: Optional[str | Path] = None) -> FastAPI:
    """Build the review API for one state directory."""
    state_dir = Path(state_dir)
    app = FastAPI(title="streamflag review API")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    lock = threading.Lock()
    holder = {"snapshot": pl.load_state(state_dir)}

    @app.get("/health")
    def health() -> dict:
        snapshot = holder["snapshot"]
        return {
            "status": "ok",
            "built_at": snapshot.built_at.isoformat(),
            "streams": len(snapshot.streams),
            "last_scored": snapshot.last_scored.isoformat()
            if snapshot.last_scored
            else None,
        }

    @app.get("/flags")
    def flags(date: str) -> dict:
        try:
            day = dt.date.fromisoformat(date)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"bad date {date!r}")
        stored = pl.read_flags(state_dir, day)
        if not stored:
            raise HTTPException(status_code=404, detail=f"no flags for {date}")
        reviews = pl.read_reviews(state_dir)
        return {
            "date": day.isoformat(),
            "flags": [
                _flag_json(f, rank, reviews.get((f.region_code, f.date.isoformat())))
                for rank, f in enumerate(stored, start=1)
            ],
        }

    @app.get("/streams/{region}/detail")
    def detail(region: str, date: Optional[str] = None, window: int = 120) -> dict:
        snapshot = holder["snapshot"]
        if region not in snapshot.streams:
            raise HTTPException(status_code=404, detail=f"unknown region {region!r}")
        day = None
        if date is not None:
            try:
                day = dt.date.fromisoformat(date)
            except ValueError:
                raise HTTPException(status_code=422, detail=f"bad date {date!r}")
        payload = stream_detail_payload(snapshot, region, day, window)
        payload["flag"] = None
        if day is not None:
            reviews = pl.read_reviews(state_dir)
            for rank, flag in enumerate(pl.read_flags(state_dir, day), start=1):
                if flag.region_code == region:
                    payload["flag"] = _flag_json(
                        flag, rank, reviews.get((region, day.isoformat()))
                    )
                    break
        return payload

    @app.post("/flags/{region}/{date}/review")
    def review(region: str, date: str, body: ReviewBody) -> dict:
        try:
            day = dt.date.fromisoformat(date)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"bad date {date!r}")
        with lock:
            stored = pl.read_flags(state_dir, day)
            rank = next(
                (i for i, f in enumerate(stored, start=1) if f.region_code == region),
                None,
            )
            if rank is None:
                raise HTTPException(
                    status_code=404, detail=f"no flag for {region} on {date}"
                )
            entry = pl.append_review(state_dir, region, day, body.reviewed, body.note)
            flag = stored[rank - 1]
        return {"status": "ok", "flag": _flag_json(flag, rank, entry)}

    def _run_retrain() -> None:
        snapshot = holder["snapshot"]
        config = snapshot.config
        if not (config.data_csv and config.regions_csv):
            return
        streams, registry = pl.ingest_csv(config.data_csv, config.regions_csv)
        fresh = pl.train(config, streams, registry)
        with lock:
            pl.save_state(fresh, state_dir)
            runtime = state_dir / "runtime.json"
            if runtime.exists():
                runtime.unlink()
            holder["snapshot"] = fresh

    @app.post("/retrain")
    def retrain(background: BackgroundTasks) -> dict:
        snapshot = holder["snapshot"]
        entry = {
            "requested_at": dt.datetime.now(dt.timezone.utc).isoformat(),
        }
        with lock:
            with open(state_dir / "retrain_requests.jsonl", "a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        runnable = bool(snapshot.config.data_csv and snapshot.config.regions_csv)
        if runnable:
            background.add_task(_run_retrain)
        return {"status": "queued" if runnable else "recorded"}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
