"""Figure rendering for score and evaluation reports.

Figures land next to the delimited output: an overview of the day's top
rank scores, per-stream detail charts for the leading flags, and metric
bars for evaluation runs. Everything renders off-screen (Agg).
"""

from __future__ import annotations

import datetime as dt
import math
from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.dates as mdates
import matplotlib.pyplot as plt
import numpy as np

from streamflag.pipeline import ScoreResult, StateSnapshot, StreamState

__all__ = ["stream_detail_payload", "render_score_report", "render_eval_report"]


def stream_detail_payload(
    snapshot: StateSnapshot,
    code: str,
    date: Optional[dt.date] = None,
    window: int = 120,
) -> dict:
    """Everything a reviewer needs to audit one stream around one date."""
    stream = snapshot.streams[code]
    end_idx = len(stream.raw) if date is None else (date - stream.start_date).days + 1
    end_idx = max(1, min(end_idx, len(stream.raw)))
    start_idx = max(0, end_idx - window)

    def _clean(arr: np.ndarray) -> list:
        return [None if math.isnan(v) else float(v) for v in arr[start_idx:end_idx]]

    dates = [
        (stream.start_date + dt.timedelta(days=i)).isoformat()
        for i in range(start_idx, end_idx)
    ]
    payload = {
        "region_code": stream.code,
        "region_level": stream.level,
        "population": stream.population,
        "dates": dates,
        "raw": _clean(stream.raw),
        "imputed": _clean(stream.imputed),
        "corrected": _clean(stream.corrected),
        "labels": {
            (stream.start_date + dt.timedelta(days=i)).isoformat(): lab
            for i, lab in sorted(stream.labels.items())
            if start_idx <= i < end_idx
        },
        "annotations": stream.rt_annotations,
        "regime_starts": [
            (stream.start_date + dt.timedelta(days=cp)).isoformat()
            for cp in stream.changepoints
        ],
        "weekday_factors": None
        if stream.weekday_factors is None
        else [float(f) for f in stream.weekday_factors],
        "ar_weights": None
        if stream.ar_weights is None
        else [float(w) for w in stream.ar_weights],
        "short_series": stream.short_series,
    }
    return payload


def _plot_series(ax, dates: Sequence[dt.date], payload: dict) -> None:
    xs = list(dates)
    for name, style in (("raw", "o-"), ("imputed", "-"), ("corrected", "--")):
        ys = [math.nan if v is None else v for v in payload[name]]
        ax.plot(xs, ys, style, markersize=2.5, linewidth=1.0, label=name)
    for iso in payload["regime_starts"]:
        day = dt.date.fromisoformat(iso)
        if xs[0] <= day <= xs[-1]:
            ax.axvline(day, color="gray", linestyle=":", linewidth=0.8)
    ax.legend(fontsize=7, loc="upper left")
    ax.xaxis.set_major_formatter(mdates.DateFormatter("%m-%d"))
    ax.tick_params(labelsize=7)


def render_score_report(
    snapshot: StateSnapshot,
    result: ScoreResult,
    out_dir: str | Path,
    top: int = 5,
) -> list[Path]:
    """Render the day's overview figure plus detail charts for top flags."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    head = list(result.flags[: max(top * 4, 20)])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    codes = [f.region_code for f in head][::-1]
    scores = [f.rank_score for f in head][::-1]
    ax.barh(range(len(head)), scores, color="#a33")
    ax.set_yticks(range(len(head)))
    ax.set_yticklabels(codes, fontsize=6)
    ax.set_xlabel("|2p - 1|")
    ax.set_title(f"Top flags for {result.date.isoformat()}")
    fig.tight_layout()
    overview = out / f"flags_{result.date.isoformat()}.png"
    fig.savefig(overview, dpi=120)
    plt.close(fig)
    written.append(overview)

    for flag in result.flags[:top]:
        payload = stream_detail_payload(snapshot, flag.region_code, flag.date)
        days = [dt.date.fromisoformat(s) for s in payload["dates"]]
        fig, ax = plt.subplots(figsize=(7, 3.5))
        _plot_series(ax, days, payload)
        ax.axvline(flag.date, color="#a33", linewidth=1.2)
        ax.set_title(
            f"{flag.region_code} {flag.date.isoformat()}  "
            f"score={flag.rank_score:.4f} p={flag.p_value:.4f} k={flag.k:.4g}",
            fontsize=8,
        )
        fig.tight_layout()
        path = out / f"detail_{flag.region_code}_{flag.date.isoformat()}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def render_eval_report(rows: Sequence[Mapping], out_dir: str | Path) -> list[Path]:
    """Bar charts of the per-stream evaluation metrics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    metrics = ["accuracy", "balanced_accuracy", "f1", "roc_auc", "hamming", "rbo", "swap_corr"]
    regions = [r["region_code"] for r in rows]
    fig, axes = plt.subplots(
        nrows=math.ceil(len(metrics) / 2), ncols=2, figsize=(9, 7), squeeze=False
    )
    for ax, metric in zip(axes.flat, metrics):
        vals = [r.get(metric) for r in rows]
        xs = np.arange(len(regions))
        ys = [float("nan") if v is None else v for v in vals]
        ax.bar(xs, ys, color="#367")
        ax.set_xticks(xs)
        ax.set_xticklabels(regions, fontsize=6, rotation=45)
        ax.set_title(metric, fontsize=8)
        ax.tick_params(labelsize=7)
    for ax in axes.flat[len(metrics) :]:
        ax.axis("off")
    fig.tight_layout()
    path = out / "evaluation_metrics.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
