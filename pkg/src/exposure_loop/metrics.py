"""曝光度量：艺人覆盖的 Gini 指数、覆盖率、标签分布和流行度分桶"""
from __future__ import annotations

from collections.abc import Hashable, Iterable, Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd

from exposure_loop.errors import CatalogError, MetricError
from exposure_loop.ingest import Catalog
from exposure_loop.matrix import ListenWeight, SparseInteractionMatrix, to_triplets


@dataclass
class RecommendationLog:
    """一轮推荐的 (user, item) 对，形状 (n, 2)"""

    pairs: np.ndarray
    n_users: int
    n_items: int

    def __post_init__(self) -> None:
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.pairs)

    def validate(self, max_per_user: int | None = None) -> None:
        users, items = self.pairs[:, 0], self.pairs[:, 1]
        if ((users < 0) | (users >= self.n_users) | (items < 0) | (items >= self.n_items)).any():
            raise MetricError("recommendation pair out of range")
        if len(np.unique(self.pairs, axis=0)) != len(self.pairs):
            raise MetricError("duplicate recommendation pair")
        if max_per_user is not None and len(users):
            if np.bincount(users).max() > max_per_user:
                raise MetricError(f"more than {max_per_user} recommendations for a user")


@dataclass
class ExposureStats:
    artist_user_reach: dict[str, int]
    item_reach: dict[int, int]


@dataclass
class ShareDistribution:
    """实体 → 百分比份额，取值 [0, 100]"""

    share_of: dict[Hashable, float]

    def get(self, key: Hashable) -> float:
        return self.share_of.get(key, 0.0)


TagDistribution = ShareDistribution


@dataclass
class BucketTable:
    labels: list[str]
    recommended: list[float]
    listened: list[float]

    def to_frame(self, entity: str = "") -> pd.DataFrame:
        return pd.DataFrame({
            "entity": entity,
            "bucket": self.labels,
            "recommended": self.recommended,
            "listened": self.listened,
        })


def gini(values: Iterable[float]) -> float:
    """总体 Gini 指数，0 值也计入"""
    x = np.sort(np.asarray(list(values), dtype=np.float64))
    n = len(x)
    if n == 0:
        raise MetricError("gini of an empty sequence")
    if (x < 0).any():
        raise MetricError("gini requires non-negative values")
    total = x.sum()
    if total == 0:
        raise MetricError("gini undefined when all values are zero")
    i = np.arange(1, n + 1)
    return float(np.sum((2 * i - n - 1) * x) / (n * total))


def coverage(reached: Iterable[Hashable], catalog_size: int) -> float:
    if catalog_size < 1:
        raise MetricError(f"catalog_size must be >= 1, got {catalog_size}")
    reached = set(reached)
    if len(reached) > catalog_size:
        raise MetricError("reached set larger than the catalog")
    return 100.0 * len(reached) / catalog_size


def exposure_stats(log: RecommendationLog, catalog: Catalog) -> ExposureStats:
    """每位艺人/每首曲目被推荐给多少个不同用户

    同一用户被推荐同一艺人的两首歌，只为该艺人计一次。
    """
    codes, artists = catalog.artist_codes(log.n_items)
    item_counts = np.zeros(log.n_items, dtype=np.int64)
    artist_counts = np.zeros(len(artists), dtype=np.int64)
    if len(log):
        pairs = np.unique(log.pairs, axis=0)
        users, items = pairs[:, 0], pairs[:, 1]
        missing = items[codes[items] < 0]
        if len(missing):
            raise CatalogError(int(missing[0]), "recommended but absent from catalog")
        item_counts = np.bincount(items, minlength=log.n_items)
        artist_pairs = np.unique(np.column_stack([users, codes[items]]), axis=0)
        artist_counts = np.bincount(artist_pairs[:, 1], minlength=len(artists))

    known_items = sorted(k for k in catalog.artist_of if isinstance(k, (int, np.integer)))
    return ExposureStats(
        artist_user_reach={a: int(artist_counts[c]) for c, a in enumerate(artists)},
        item_reach={int(i): int(item_counts[i]) for i in known_items if i < log.n_items},
    )


def gini_artists(stats: ExposureStats) -> float:
    return gini(stats.artist_user_reach.values())


def coverage_artists(stats: ExposureStats) -> float:
    reached = [a for a, n in stats.artist_user_reach.items() if n > 0]
    return coverage(reached, len(stats.artist_user_reach))


def coverage_items(stats: ExposureStats) -> float:
    reached = [i for i, n in stats.item_reach.items() if n > 0]
    return coverage(reached, len(stats.item_reach))


def _item_weights(
    pairs: np.ndarray,
    weights: Sequence[float] | np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if weights is None:
        w = np.ones(len(pairs), dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if len(w) != len(pairs):
            raise MetricError("weights and pairs differ in length")
        if (w < 0).any():
            raise MetricError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise MetricError("total weight is zero")
    items = pairs[:, 1]
    if len(items) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    per_item = np.bincount(items, weights=w)
    idx = np.flatnonzero(per_item)
    return idx, per_item[idx] / total


def tag_distribution(
    pairs: np.ndarray | Sequence[tuple[int, int]],
    catalog: Catalog,
    weights: Sequence[float] | np.ndarray | None = None,
) -> TagDistribution:
    """每个标签占推荐（或收听）对的百分比

    带多个标签的曲目给每个标签都记全额权重，所以份额之和可能超过 100。
    """
    items, fractions = _item_weights(np.asarray(pairs), weights)
    share: dict[Hashable, float] = {}
    for item, frac in zip(items.tolist(), fractions.tolist()):
        if item not in catalog.artist_of:
            raise CatalogError(item, "absent from catalog")
        for tag in catalog.tags(item):
            share[tag] = share.get(tag, 0.0) + 100.0 * frac
    return ShareDistribution(share)


def artist_distribution(
    pairs: np.ndarray | Sequence[tuple[int, int]],
    catalog: Catalog,
    weights: Sequence[float] | np.ndarray | None = None,
) -> ShareDistribution:
    items, fractions = _item_weights(np.asarray(pairs), weights)
    share: dict[Hashable, float] = {}
    for item, frac in zip(items.tolist(), fractions.tolist()):
        artist = catalog.artist_of.get(item)
        if artist is None:
            raise CatalogError(item, "absent from catalog")
        share[artist] = share.get(artist, 0.0) + 100.0 * frac
    return ShareDistribution(share)


def listening_pairs(
    m: SparseInteractionMatrix, weight: ListenWeight = "binary"
) -> tuple[np.ndarray, np.ndarray]:
    """收听侧的 (user, item) 对及权重：binary 每对记 1，plays 记播放次数"""
    triplets = to_triplets(m)
    if weight == "binary":
        w = np.ones(len(triplets), dtype=np.float64)
    elif weight == "plays":
        w = triplets[:, 2].astype(np.float64)
    else:
        raise MetricError(f"unknown listen weight {weight!r}")
    return triplets[:, :2], w


def rank_by_popularity(
    dist_listened: ShareDistribution,
    dist_recommended: ShareDistribution | None = None,
    popularity: ShareDistribution | None = None,
) -> list[Hashable]:
    """按流行度降序排名，并列时按名称；只在推荐侧出现的实体排在最后

    popularity 缺省时用收听份额本身排名。
    """
    order = dist_listened if popularity is None else popularity
    universe = set(dist_listened.share_of) | set(order.share_of)
    if dist_recommended is not None:
        universe |= set(dist_recommended.share_of)
    return sorted(universe, key=lambda e: (-order.get(e), str(e)))


def bucket_table(
    dist_recommended: ShareDistribution,
    dist_listened: ShareDistribution,
    boundaries: Sequence[int],
    popularity: ShareDistribution | None = None,
) -> BucketTable:
    """按流行度排名分桶，两列使用同一组实体，格子里是份额均值"""
    ranked = rank_by_popularity(dist_listened, dist_recommended, popularity)
    n = len(ranked)
    cuts = list(boundaries)
    if any(b < 1 for b in cuts) or any(b2 <= b1 for b1, b2 in zip(cuts, cuts[1:])):
        raise MetricError(f"boundaries must be positive and strictly increasing: {cuts}")
    if cuts and cuts[-1] > n:
        raise MetricError(f"boundary {cuts[-1]} exceeds universe size {n}")

    edges = [0, *cuts, n]
    labels, rec, lis = [], [], []
    for lo, hi in zip(edges, edges[1:]):
        members = ranked[lo:hi]
        labels.append(f"{max(lo, 1)}-{hi}")
        if members:
            rec.append(float(np.mean([dist_recommended.get(e) for e in members])))
            lis.append(float(np.mean([dist_listened.get(e) for e in members])))
        else:
            rec.append(float("nan"))
            lis.append(float("nan"))
    return BucketTable(labels, rec, lis)


def long_tail_delta(
    dist_recommended: ShareDistribution,
    dist_listened: ShareDistribution,
    head_cutoff: int,
    popularity: ShareDistribution | None = None,
) -> float:
    """长尾部分推荐份额相对收听份额的变化（百分比，负值表示推荐得更少）"""
    if head_cutoff < 1:
        raise MetricError(f"head_cutoff must be >= 1, got {head_cutoff}")
    tail = rank_by_popularity(dist_listened, dist_recommended, popularity)[head_cutoff:]
    rec_tail = sum(dist_recommended.get(e) for e in tail)
    lis_tail = sum(dist_listened.get(e) for e in tail)
    if lis_tail == 0:
        raise MetricError("listened tail mass is zero")
    return (rec_tail - lis_tail) / lis_tail * 100.0


def top_entities(
    dist_recommended: ShareDistribution,
    dist_listened: ShareDistribution,
    n: int = 20,
    popularity: ShareDistribution | None = None,
) -> pd.DataFrame:
    """流行度最高的 n 个实体及两侧份额"""
    ranked = rank_by_popularity(dist_listened, dist_recommended, popularity)[:n]
    return pd.DataFrame({
        "rank": range(1, len(ranked) + 1),
        "entity": ranked,
        "recommended": [dist_recommended.get(e) for e in ranked],
        "listened": [dist_listened.get(e) for e in ranked],
    })
