"""Command-line entry points: train, score, evaluate, retrain, serve."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import sys
from pathlib import Path

from streamflag import pipeline as pl
from streamflag.evalkit import evaluation_report, load_labels

__all__ = ["main"]


def _load_config(args: argparse.Namespace) -> pl.PipelineConfig:
    if getattr(args, "config", None):
        config = pl.PipelineConfig.from_file(args.config)
    else:
        config = pl.PipelineConfig()
    overrides = {}
    if getattr(args, "data", None):
        overrides["data_csv"] = args.data
    if getattr(args, "regions", None):
        overrides["regions_csv"] = args.regions
    if getattr(args, "out", None) and args.command == "train":
        overrides["state_dir"] = args.out
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    if overrides:
        config = pl.PipelineConfig(**{**config.to_dict(), **overrides})
    return config


def _cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    if not (config.data_csv and config.regions_csv and config.state_dir):
        print("train: need --data, --regions, and --out (or config entries)", file=sys.stderr)
        return 2
    streams, registry = pl.ingest_csv(config.data_csv, config.regions_csv)
    snapshot = pl.train(config, streams, registry)
    pl.save_state(snapshot, config.state_dir)
    modeled = sum(1 for s in snapshot.streams.values() if not s.short_series)
    short = len(snapshot.streams) - modeled
    print(
        f"trained {modeled} modeled streams ({short} short-series) in "
        f"{len(snapshot.groups)} groups; state -> {config.state_dir}"
    )
    return 0


def _cmd_score(args: argparse.Namespace) -> int:
    snapshot = pl.load_state(args.state)
    registry = _registry_from_snapshot(snapshot)
    by_date = pl.parse_observations(args.obs, registry)
    target = dt.date.fromisoformat(args.date)
    days = [target - dt.timedelta(days=i) for i in range(args.window - 1, -1, -1)]
    last_result = None
    for day in days:
        observations = by_date.get(day, {})
        result = pl.score_day(snapshot, day, observations)
        pl.append_flags(args.state, result)
        last_result = result
        for warning in result.warnings:
            print(f"warning: {warning}", file=sys.stderr)
        decisions = {k: d.value for k, d in result.decisions.items() if d.value != "none"}
        print(
            f"{day.isoformat()}: scored {len(result.flags)} streams"
            + (f"; retrain decisions: {decisions}" if decisions else "")
        )
    pl.save_runtime(snapshot, args.state)
    if args.out and last_result is not None:
        _write_day_csv(last_result, args.out)
        print(f"flag list -> {args.out}")
    if args.report_dir and last_result is not None:
        from streamflag.report import render_score_report

        written = render_score_report(snapshot, last_result, args.report_dir)
        print(f"report figures -> {', '.join(str(p) for p in written)}")
    return 0


def _write_day_csv(result: pl.ScoreResult, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(pl.FLAGS_HEADER)
        for rank, flag in enumerate(result.flags, start=1):
            writer.writerow(
                [
                    flag.date.isoformat(),
                    flag.region_code,
                    flag.region_level,
                    rank,
                    pl._fmt(flag.rank_score),
                    pl._fmt(flag.p_value),
                    pl._fmt(flag.k),
                    pl._fmt(flag.observed),
                    pl._fmt(flag.observed_corrected),
                    pl._fmt(flag.predicted),
                    pl._fmt(flag.residual_per_capita),
                    "|".join(a.value for a in flag.annotations),
                ]
            )


def _registry_from_snapshot(snapshot: pl.StateSnapshot):
    from streamflag.core import RegionId, RegionLevel, RegionRegistry

    registry = RegionRegistry()
    for code, meta in snapshot.regions.items():
        registry.add(RegionId(code, RegionLevel(meta["level"]), meta["parent"]))
    return registry


def _cmd_evaluate(args: argparse.Namespace) -> int:
    labels = load_labels(args.labels)
    flags = pl.read_flags(args.state)
    scores = {(f.region_code, f.date.isoformat()): f.rank_score for f in flags}
    rows = evaluation_report(scores, labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "metrics.csv"
    fields = [
        "region_code",
        "n_points",
        "n_truth",
        "accuracy",
        "balanced_accuracy",
        "f1",
        "roc_auc",
        "hamming",
        "rbo",
        "swap_corr",
        "assistive_rank",
    ]
    with open(report_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in fields})
    from streamflag.report import render_eval_report

    figures = render_eval_report([r for r in rows if r["region_code"] != "OVERALL"], out)
    print(f"metrics -> {report_path}")
    print(f"figures -> {', '.join(str(p) for p in figures)}")
    overall = rows[-1]
    print(
        "overall: "
        + ", ".join(
            f"{k}={overall[k]:.4g}" if isinstance(overall[k], float) else f"{k}={overall[k]}"
            for k in fields[1:]
            if overall[k] is not None
        )
    )
    return 0


def _cmd_retrain(args: argparse.Namespace) -> int:
    snapshot = pl.load_state(args.state)
    config = snapshot.config
    if not (config.data_csv and config.regions_csv):
        print("retrain: snapshot config has no data/regions paths", file=sys.stderr)
        return 2
    streams, registry = pl.ingest_csv(config.data_csv, config.regions_csv)
    fresh = pl.train(config, streams, registry, workers=args.workers)
    pl.save_state(fresh, args.state)
    runtime = Path(args.state) / "runtime.json"
    if runtime.exists():
        runtime.unlink()
    print(f"retrained {len(fresh.streams)} streams; state -> {args.state}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from streamflag.service import create_app

    app = create_app(args.state, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamflag",
        description="Flag the most outlying recent points across daily count streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit models and build the state directory")
    p_train.add_argument("--config", help="JSON config file")
    p_train.add_argument("--data", help="daily data CSV")
    p_train.add_argument("--regions", help="region metadata CSV")
    p_train.add_argument("--out", help="state directory to write")
    p_train.add_argument("--workers", type=int, help="parallel workers over groups")
    p_train.set_defaults(func=_cmd_train)

    p_score = sub.add_parser("score", help="score one date's observations")
    p_score.add_argument("--state", required=True)
    p_score.add_argument("--date", required=True, help="ISO date to score")
    p_score.add_argument("--obs", required=True, help="observations CSV")
    p_score.add_argument("--window", type=int, default=1, help="trailing dates to score")
    p_score.add_argument("--out", help="write the newest date's ranked flags here")
    p_score.add_argument("--report-dir", help="render figures into this directory")
    p_score.set_defaults(func=_cmd_score)

    p_eval = sub.add_parser("evaluate", help="compare stored flags with expert labels")
    p_eval.add_argument("--state", required=True)
    p_eval.add_argument("--labels", required=True)
    p_eval.add_argument("--out", required=True, help="report directory")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_retrain = sub.add_parser("retrain", help="retrain from the configured data paths")
    p_retrain.add_argument("--state", required=True)
    p_retrain.add_argument("--workers", type=int, default=None)
    p_retrain.set_defaults(func=_cmd_retrain)

    p_serve = sub.add_parser("serve", help="run the review API")
    p_serve.add_argument("--state", required=True)
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--static", help="serve a built dashboard from this directory")
    p_serve.set_defaults(func=_cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
