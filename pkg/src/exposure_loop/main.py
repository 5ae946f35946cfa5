"""命令行入口：synth / ingest / train / analyze / loop / report"""
from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from exposure_loop.config import RunConfig, apply_overrides, get_config, load_config, set_config
from exposure_loop.errors import ConfigError, ExposureLoopError
from exposure_loop.factorize import objective, recommend_all, save_model, train
from exposure_loop.ingest import (
    Catalog,
    EntityIndex,
    Interaction,
    filter_by_activity,
    index_entities,
    read_catalog,
    read_triplets,
    restrict_catalog,
    to_indexed,
    write_triplets,
)
from exposure_loop.logging_config import generate_run_id, get_logger, run_id_var, set_logger, setup_logging
from exposure_loop.matrix import SparseInteractionMatrix, from_triplets, save_matrix, to_triplets
from exposure_loop.reports import analyze_distribution, read_trace, summarize_trace, write_analysis
from exposure_loop.simulate import resume_loop, run_loop, write_trace
from exposure_loop.synth import generate, write_dataset


@dataclass
class Dataset:
    matrix: SparseInteractionMatrix
    catalog: Catalog
    users: EntityIndex
    items: EntityIndex
    n_raw: int


def _require(path: str | None, key: str) -> str:
    if not path:
        raise ConfigError(f"data.{key} is required for this command")
    return path


def load_dataset(config: RunConfig) -> Dataset:
    """读取、过滤、编号并构建矩阵，曲库限制到留下的曲目"""
    raw = read_triplets(_require(config.data.triplets, "triplets"))
    catalog = read_catalog(_require(config.data.artists, "artists"), config.data.tags)
    kept = filter_by_activity(raw, config.filter.min_user, config.filter.min_item)
    if not kept:
        raise ExposureLoopError(
            f"no interactions survive filtering (min_user={config.filter.min_user}, "
            f"min_item={config.filter.min_item})"
        )
    users, items = index_entities(kept)
    matrix = from_triplets(to_indexed(kept, users, items), len(users), len(items))
    get_logger().ingest_summary(len(users), len(items), len(kept), dropped=len(raw) - len(kept))
    return Dataset(matrix, restrict_catalog(catalog, items), users, items, len(raw))


def _emit(**fields: object) -> None:
    # 汇总只写标准输出
    for key, value in fields.items():
        print(f"{key}={value}")


def cmd_synth(config: RunConfig) -> int:
    interactions, catalog = generate(config.synth)
    paths = write_dataset(interactions, catalog, config.data.out_dir)
    _emit(
        users=config.synth.n_users,
        items=len(catalog.artist_of),
        artists=len(catalog.artists()),
        tags=len({t for tags in catalog.tags_of.values() for t in tags}),
        interactions=len(interactions),
        triplets=paths["triplets"],
    )
    return 0


def cmd_ingest(config: RunConfig) -> int:
    ds = load_dataset(config)
    out = Path(config.data.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "interactions.tsv", "w", encoding="utf-8", newline="\n") as f:
        write_triplets(
            (
                Interaction(ds.users.backward[u], ds.items.backward[i], c)
                for u, i, c in to_triplets(ds.matrix).tolist()
            ),
            f,
        )
    save_matrix(ds.matrix, out / "matrix.bin")
    _emit(users=len(ds.users), items=len(ds.items), interactions=ds.matrix.nnz, dropped=ds.n_raw - ds.matrix.nnz)
    return 0


def cmd_train(config: RunConfig) -> int:
    ds = load_dataset(config)
    model = train(ds.matrix, config.model, threads=config.threads)
    out = Path(config.data.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.bin")
    _emit(objective=f"{objective(ds.matrix, model):.6f}", model=out / "model.bin")
    return 0


def cmd_analyze(config: RunConfig) -> int:
    ds = load_dataset(config)
    model = train(ds.matrix, config.model, threads=config.threads)
    log = recommend_all(model, ds.matrix, config.loop.n_recs, config.loop.include_seen, config.threads)
    report = analyze_distribution(
        ds.matrix,
        log,
        ds.catalog,
        listen_weight=config.metrics.listen_weight,
        tag_buckets=config.metrics.tag_buckets,
        artist_buckets=config.metrics.artist_buckets,
        head_cutoff=config.metrics.head_cutoff,
        n_top_tags=config.metrics.top_tags,
    )
    write_analysis(report, config.data.out_dir)
    _emit(
        gini_artists=f"{report.gini_artists:.6f}",
        coverage_artists=f"{report.coverage_artists:.6f}",
        coverage_items=f"{report.coverage_items:.6f}",
        tag_tail_delta=f"{report.tag_tail_delta:.6f}",
    )
    return 0


def cmd_loop(config: RunConfig, resume: str | None = None) -> int:
    ds = load_dataset(config)
    out = Path(config.data.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    loop = config.loop_config()
    if resume is not None:
        trace = resume_loop(resume, ds.catalog, loop)
    else:
        trace = run_loop(ds.matrix, ds.catalog, loop, checkpoint_dir=out / "checkpoints")
    write_trace(trace, out / "trace.csv")
    get_logger().report_written("trace", str(out / "trace.csv"), len(trace.records))
    last = trace.records[-1]
    _emit(iterations=len(trace.records), gini_artists=f"{last.gini_artists:.6f}",
          coverage_items=f"{last.coverage_items:.6f}", total_plays=last.total_plays)
    return 0


def cmd_report(config: RunConfig, trace_path: str | None = None) -> int:
    path = Path(trace_path) if trace_path else Path(config.data.out_dir) / "trace.csv"
    summary = summarize_trace(read_trace(path))
    summary.to_csv(sys.stdout, index=False, float_format="%.6f", lineterminator="\n")
    return 0


def _one_line(e: Exception) -> str:
    return " ".join(str(e).split())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--out", dest="out_dir", help="output directory")
    common.add_argument("--seed", type=int, help="root random seed")
    common.add_argument("--threads", type=int, help="worker thread cap")
    common.add_argument("--include-seen", action="store_true", default=None,
                        help="allow recommending already-listened items")
    common.add_argument("--listen-weight", choices=["binary", "plays"],
                        help="weight of listening pairs in distributions")

    parser = argparse.ArgumentParser(prog="exposure-loop", description="Artist exposure and feedback-loop analysis")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    sub.add_parser("ingest", parents=[common], help="filter and index interactions")
    sub.add_parser("train", parents=[common], help="train the factor model")
    sub.add_parser("analyze", parents=[common], help="recommendation vs listening distributions")
    loop = sub.add_parser("loop", parents=[common], help="simulate the feedback loop")
    loop.add_argument("--resume", help="checkpoint directory to continue from")
    loop.add_argument("--iterations", type=int, dest="n_iterations", help="number of loop iterations")
    report = sub.add_parser("report", parents=[common], help="summarize a trace.csv")
    report.add_argument("--trace", help="trace file (default <out>/trace.csv)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    set_logger(setup_logging())
    run_id_var.set(generate_run_id())
    logger = get_logger()

    try:
        set_config(apply_overrides(
            load_config(args.config),
            out_dir=args.out_dir,
            seed=args.seed,
            threads=args.threads,
            include_seen=args.include_seen,
            listen_weight=args.listen_weight,
            n_iterations=getattr(args, "n_iterations", None),
        ))
        config = get_config()
        match args.command:
            case "synth":
                return cmd_synth(config)
            case "ingest":
                return cmd_ingest(config)
            case "train":
                return cmd_train(config)
            case "analyze":
                return cmd_analyze(config)
            case "loop":
                return cmd_loop(config, args.resume)
            case "report":
                return cmd_report(config, args.trace)
    except ExposureLoopError as e:
        logger.error("command_failed", command=args.command, kind=e.kind, error=str(e))
        print(f"error={e.kind} msg={_one_line(e)}", file=sys.stderr)
        return 1
    except OSError as e:
        logger.error("command_failed", command=args.command, kind="io", error=str(e))
        print(f"error=io msg={_one_line(e)}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
