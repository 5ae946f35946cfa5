"""闭环反馈模拟：推荐 → 作为收听注入矩阵 → 重新训练 → 再度量

检查点目录结构：
    initial/matrix.bin          初始矩阵
    iter_<t>/matrix.bin         第 t 轮注入之后的矩阵
    iter_<t>/model.bin          第 t 轮训练出的模型
    iter_<t>/recs.csv           第 t 轮的推荐对
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import os
import re
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from exposure_loop.errors import ConfigError, MetricError, SimulationError, SnapshotError
from exposure_loop.factorize import FactorModel, Hyperparams, load_model, recommend_all, save_model, train
from exposure_loop.ingest import Catalog
from exposure_loop.logging_config import get_logger
from exposure_loop.matrix import (
    SparseInteractionMatrix,
    increment,
    item_popularity,
    load_matrix,
    save_matrix,
)
from exposure_loop.metrics import (
    RecommendationLog,
    coverage_artists,
    coverage_items,
    exposure_stats,
    gini_artists,
)

TRACE_COLUMNS = ["iteration", "gini_artists", "coverage_artists", "coverage_items", "total_plays"]
_ITER_DIR = re.compile(r"^iter_(\d+)$")


@dataclass(frozen=True)
class LoopConfig:
    n_iterations: int = 30
    n_recs: int = 10
    hyper: Hyperparams = field(default_factory=Hyperparams)
    warm_start: bool = True
    warm_sweeps: int = 5
    increment_delta: int = 1
    tracked_items: list[int] = field(default_factory=list)
    n_tracked: int = 4
    include_seen: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        if self.n_iterations < 1:
            raise ConfigError(f"loop.n_iterations must be >= 1, got {self.n_iterations}")
        if self.n_recs < 1:
            raise ConfigError(f"loop.n_recs must be >= 1, got {self.n_recs}")
        if self.warm_sweeps < 1:
            raise ConfigError(f"loop.warm_sweeps must be >= 1, got {self.warm_sweeps}")
        if self.increment_delta < 1:
            raise ConfigError(f"loop.increment_delta must be >= 1, got {self.increment_delta}")
        if self.n_tracked < 0:
            raise ConfigError(f"loop.n_tracked must be >= 0, got {self.n_tracked}")


@dataclass
class IterationRecord:
    iteration: int
    gini_artists: float
    coverage_artists: float
    coverage_items: float
    tracked_reach: dict[int, int]
    total_plays: int
    n_pairs: int
    digest: str


@dataclass
class LoopTrace:
    tracked_items: list[int]
    initial_total: int
    initial_reach: dict[int, int]
    records: list[IterationRecord] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.records:
            row = {
                "iteration": r.iteration,
                "gini_artists": r.gini_artists,
                "coverage_artists": r.coverage_artists,
                "coverage_items": r.coverage_items,
                "total_plays": r.total_plays,
            }
            row.update({f"reach_{i}": r.tracked_reach[i] for i in self.tracked_items})
            rows.append(row)
        columns = TRACE_COLUMNS + [f"reach_{i}" for i in self.tracked_items]
        return pd.DataFrame(rows, columns=columns)


def write_trace(trace: LoopTrace, path: str | Path) -> None:
    trace.to_frame().to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def exposure_series(trace: LoopTrace, item_ids: list[int]) -> dict[int, list[int]]:
    """每首跟踪曲目在各轮被推荐给的不同用户数"""
    untracked = [i for i in item_ids if i not in trace.tracked_items]
    if untracked:
        raise SimulationError(f"items not tracked during the run: {untracked}")
    return {i: [r.tracked_reach[i] for r in trace.records] for i in item_ids}


def default_tracked_items(m: SparseInteractionMatrix, n: int) -> list[int]:
    """初始矩阵中播放次数最多的 n 首曲目，并列时下标小者优先"""
    plays = item_popularity(m, "plays")
    order = np.lexsort((np.arange(m.n_cols), -plays))
    return [int(i) for i in order[:n]]


def _digest(pairs: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(pairs, dtype="<i8").tobytes()).hexdigest()[:16]


def _measure(
    iteration: int,
    log: RecommendationLog,
    catalog: Catalog,
    tracked: list[int],
    total_plays: int,
) -> IterationRecord:
    stats = exposure_stats(log, catalog)
    try:
        g = gini_artists(stats)
    except MetricError:
        # 本轮没有任何推荐
        g = math.nan
    return IterationRecord(
        iteration=iteration,
        gini_artists=g,
        coverage_artists=coverage_artists(stats),
        coverage_items=coverage_items(stats),
        tracked_reach={i: stats.item_reach.get(i, 0) for i in tracked},
        total_plays=total_plays,
        n_pairs=len(log),
        digest=_digest(log.pairs),
    )


def _train_round(
    matrix: SparseInteractionMatrix,
    model: FactorModel | None,
    config: LoopConfig,
) -> FactorModel:
    if model is None or not config.warm_start:
        return train(matrix, config.hyper, threads=config.threads)
    return train(matrix, config.hyper, init=model, sweeps=config.warm_sweeps, threads=config.threads)


def _write_recs(log: RecommendationLog, path: Path) -> None:
    pd.DataFrame(log.pairs, columns=["user", "item"]).to_csv(path, index=False, lineterminator="\n")


def _read_recs(path: Path, n_users: int, n_items: int) -> RecommendationLog:
    try:
        frame = pd.read_csv(path, dtype="int64")
    except (ValueError, pd.errors.ParserError) as e:
        raise SnapshotError(f"{path}: {e}") from e
    if list(frame.columns) != ["user", "item"]:
        raise SnapshotError(f"{path}: unexpected columns {list(frame.columns)}")
    log = RecommendationLog(frame.to_numpy(), n_users, n_items)
    try:
        log.validate()
    except MetricError as e:
        raise SnapshotError(f"{path}: {e}") from e
    return log


def _save_checkpoint(
    root: Path,
    iteration: int,
    matrix: SparseInteractionMatrix,
    model: FactorModel,
    log: RecommendationLog,
) -> None:
    final = root / f"iter_{iteration}"
    tmp = root / f"iter_{iteration}.tmp"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    save_matrix(matrix, tmp / "matrix.bin")
    save_model(model, tmp / "model.bin")
    _write_recs(log, tmp / "recs.csv")
    if final.exists():
        shutil.rmtree(final)
    # 目录改名是原子的，中断时不会留下半个检查点
    os.replace(tmp, final)
    get_logger().checkpoint_saved(iteration, str(final))


def _loop(
    matrix: SparseInteractionMatrix,
    model: FactorModel | None,
    catalog: Catalog,
    config: LoopConfig,
    trace: LoopTrace,
    checkpoint_dir: Path | None,
) -> LoopTrace:
    logger = get_logger()
    for t in range(len(trace.records) + 1, config.n_iterations + 1):
        start = time.perf_counter()
        model = _train_round(matrix, model, config)
        log = recommend_all(model, matrix, config.n_recs, config.include_seen, config.threads)
        total_after = matrix.total() + config.increment_delta * len(log)
        # 先度量再注入：记录反映的是注入之前的推荐
        record = _measure(t, log, catalog, trace.tracked_items, total_after)
        matrix = increment(matrix, log.pairs, config.increment_delta)
        trace.records.append(record)
        if checkpoint_dir is not None:
            _save_checkpoint(checkpoint_dir, t, matrix, model, log)
        logger.iteration_done(
            t, record.gini_artists, record.coverage_items, record.n_pairs,
            (time.perf_counter() - start) * 1000,
        )
    return trace


def _new_trace(matrix: SparseInteractionMatrix, config: LoopConfig) -> LoopTrace:
    tracked = list(config.tracked_items) or default_tracked_items(matrix, config.n_tracked)
    bad = [i for i in tracked if not 0 <= i < matrix.n_cols]
    if bad:
        raise SimulationError(f"tracked items out of range: {bad}")
    reach = item_popularity(matrix, "binary")
    return LoopTrace(
        tracked_items=tracked,
        initial_total=matrix.total(),
        initial_reach={i: int(reach[i]) for i in tracked},
    )


def run_loop(
    matrix: SparseInteractionMatrix,
    catalog: Catalog,
    config: LoopConfig,
    checkpoint_dir: str | Path | None = None,
) -> LoopTrace:
    """运行 n_iterations 轮反馈回路

    每轮依次：训练（热启动或冷启动）→ 每个用户取 top-n_recs → 在本轮推荐上计算指标
    → 每个推荐对的计数加 increment_delta。
    """
    trace = _new_trace(matrix, config)
    ckpt: Path | None = None
    if checkpoint_dir is not None:
        ckpt = Path(checkpoint_dir)
        (ckpt / "initial").mkdir(parents=True, exist_ok=True)
        save_matrix(matrix, ckpt / "initial" / "matrix.bin")
    return _loop(matrix, None, catalog, config, trace, ckpt)


def latest_checkpoint(checkpoint_dir: str | Path) -> int:
    """已完成的最大轮次，没有时为 0"""
    root = Path(checkpoint_dir)
    done = [
        int(match.group(1))
        for p in root.iterdir() if p.is_dir() and (match := _ITER_DIR.match(p.name))
    ] if root.exists() else []
    return max(done, default=0)


def resume_loop(
    checkpoint_dir: str | Path,
    catalog: Catalog,
    config: LoopConfig,
) -> LoopTrace:
    """从最近的完整检查点继续

    已完成轮次的记录由各轮 recs.csv 重新计算，与不中断运行逐位一致。
    """
    root = Path(checkpoint_dir)
    initial_path = root / "initial" / "matrix.bin"
    if not initial_path.exists():
        raise SnapshotError(f"{root}: missing initial/matrix.bin")
    initial = load_matrix(initial_path)
    trace = _new_trace(initial, config)

    last = latest_checkpoint(root)
    if last > config.n_iterations:
        raise SimulationError(f"checkpoint at iteration {last} exceeds n_iterations={config.n_iterations}")
    total = trace.initial_total
    for t in range(1, last + 1):
        recs = root / f"iter_{t}" / "recs.csv"
        if not recs.exists():
            raise SnapshotError(f"{root}: missing iter_{t}/recs.csv")
        log = _read_recs(recs, initial.n_rows, initial.n_cols)
        total += config.increment_delta * len(log)
        trace.records.append(_measure(t, log, catalog, trace.tracked_items, total))

    if last == 0:
        return _loop(initial, None, catalog, config, trace, root)

    matrix = load_matrix(root / f"iter_{last}" / "matrix.bin")
    if matrix.total() != total:
        raise SnapshotError(
            f"iter_{last}/matrix.bin holds {matrix.total()} plays, expected {total}"
        )
    model = load_model(root / f"iter_{last}" / "model.bin")
    if model.hyper != config.hyper:
        get_logger().warning("resume_hyper_mismatch", saved=str(model.hyper), configured=str(config.hyper))
        model = dataclasses.replace(model, hyper=config.hyper)
    get_logger().info("resume", iteration=last, path=str(root))
    return _loop(matrix, model, catalog, config, trace, root)
