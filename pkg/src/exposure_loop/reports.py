"""单轮推荐分布分析与 CSV 报表"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from exposure_loop.errors import SimulationError, SnapshotError
from exposure_loop.ingest import Catalog
from exposure_loop.logging_config import get_logger
from exposure_loop.matrix import ListenWeight, SparseInteractionMatrix
from exposure_loop.metrics import (
    BucketTable,
    RecommendationLog,
    ShareDistribution,
    artist_distribution,
    bucket_table,
    coverage_artists,
    coverage_items,
    exposure_stats,
    gini,
    gini_artists,
    listening_pairs,
    long_tail_delta,
    tag_distribution,
    top_entities,
)
from exposure_loop.simulate import TRACE_COLUMNS

FLOAT_FORMAT = "%.6f"


@dataclass
class AnalysisReport:
    gini_artists: float
    gini_items: float
    coverage_artists: float
    coverage_items: float
    tags_recommended: ShareDistribution
    tags_listened: ShareDistribution
    artists_recommended: ShareDistribution
    artists_listened: ShareDistribution
    tag_buckets: BucketTable
    artist_buckets: BucketTable
    tag_tail_delta: float
    artist_tail_delta: float
    head_cutoff: int
    top_tags: pd.DataFrame


def analyze_distribution(
    matrix: SparseInteractionMatrix,
    log: RecommendationLog,
    catalog: Catalog,
    listen_weight: ListenWeight = "binary",
    tag_buckets: list[int] | None = None,
    artist_buckets: list[int] | None = None,
    head_cutoff: int = 5,
    n_top_tags: int = 20,
) -> AnalysisReport:
    """推荐对与初始收听行为在标签、艺人上的分布对比

    分桶和长尾的排名始终按原始播放次数，与 listen_weight 无关。
    """
    stats = exposure_stats(log, catalog)
    listen, weights = listening_pairs(matrix, listen_weight)
    _, plays = listening_pairs(matrix, "plays")

    tags_rec = tag_distribution(log.pairs, catalog)
    tags_lis = tag_distribution(listen, catalog, weights)
    artists_rec = artist_distribution(log.pairs, catalog)
    artists_lis = artist_distribution(listen, catalog, weights)
    tags_pop = tag_distribution(listen, catalog, plays)
    artists_pop = artist_distribution(listen, catalog, plays)

    return AnalysisReport(
        gini_artists=gini_artists(stats),
        gini_items=gini(stats.item_reach.values()),
        coverage_artists=coverage_artists(stats),
        coverage_items=coverage_items(stats),
        tags_recommended=tags_rec,
        tags_listened=tags_lis,
        artists_recommended=artists_rec,
        artists_listened=artists_lis,
        tag_buckets=bucket_table(tags_rec, tags_lis, tag_buckets or [], tags_pop),
        artist_buckets=bucket_table(artists_rec, artists_lis, artist_buckets or [], artists_pop),
        tag_tail_delta=long_tail_delta(tags_rec, tags_lis, head_cutoff, tags_pop),
        artist_tail_delta=long_tail_delta(artists_rec, artists_lis, head_cutoff, artists_pop),
        head_cutoff=head_cutoff,
        top_tags=top_entities(tags_rec, tags_lis, n_top_tags, tags_pop).rename(columns={"entity": "tag"}),
    )


def _distribution_frame(rec: ShareDistribution, lis: ShareDistribution, name: str) -> pd.DataFrame:
    frame = top_entities(rec, lis, n=len(set(rec.share_of) | set(lis.share_of)))
    return frame.drop(columns="rank").rename(columns={"entity": name})


def _write(frame: pd.DataFrame, path: Path, name: str) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    get_logger().report_written(name, str(path), len(frame))
    return path


def write_analysis(report: AnalysisReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = {
        "gini": pd.DataFrame({
            "scope": ["artists", "items"],
            "gini": [report.gini_artists, report.gini_items],
        }),
        "coverage": pd.DataFrame({
            "scope": ["coverage_artists", "coverage_items"],
            "coverage": [report.coverage_artists, report.coverage_items],
        }),
        "tag_distribution": _distribution_frame(report.tags_recommended, report.tags_listened, "tag"),
        "bucket_table": pd.concat(
            [report.tag_buckets.to_frame("tags"), report.artist_buckets.to_frame("artists")],
            ignore_index=True,
        ),
        "long_tail": pd.DataFrame({
            "entity": ["tags", "artists"],
            "head_cutoff": [report.head_cutoff, report.head_cutoff],
            "delta": [report.tag_tail_delta, report.artist_tail_delta],
        }),
        "top_tags": report.top_tags,
    }
    return {name: _write(frame, out / f"{name}.csv", name) for name, frame in frames.items()}


def summarize_trace(trace: pd.DataFrame) -> pd.DataFrame:
    """trace.csv 的首末轮对比：每个指标一行"""
    if trace.empty:
        raise SimulationError("trace has no iterations")
    first, last = trace.iloc[0], trace.iloc[-1]
    metrics = [c for c in trace.columns if c != "iteration"]
    return pd.DataFrame({
        "metric": metrics,
        "first": [first[c] for c in metrics],
        "last": [last[c] for c in metrics],
        "change": [last[c] - first[c] for c in metrics],
    })


def read_trace(path: str | Path) -> pd.DataFrame:
    """读取 trace.csv；空文件、格式错误、缺列或非数值列都报 SnapshotError"""
    try:
        frame = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise SnapshotError(f"unreadable trace {path}: {e}") from None
    missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
    if missing:
        raise SnapshotError(f"trace {path} lacks columns: {', '.join(missing)}")
    text = [c for c in frame.columns if not pd.api.types.is_numeric_dtype(frame[c])]
    if text:
        raise SnapshotError(f"trace {path} has non-numeric columns: {', '.join(map(str, text))}")
    return frame
