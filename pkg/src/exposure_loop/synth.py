"""幂律流行度的合成数据生成器，输出与 ingest 读取的文本格式一致"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from exposure_loop.errors import ConfigError
from exposure_loop.ingest import Catalog, Interaction, write_triplets

TRIPLETS_FILE = "triplets.tsv"
ARTISTS_FILE = "artists.tsv"
TAGS_FILE = "tags.tsv"
MAX_REJECTION_ROUNDS = 64


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 2000
    n_items: int = 500
    n_artists: int = 50
    zipf_s: float = 1.0
    interactions_per_user: int = 20
    max_count: int = 10
    tags_per_artist: int = 3
    n_tags: int = 100
    seed: int = 42

    def __post_init__(self) -> None:
        for name in ("n_users", "n_items", "n_artists", "interactions_per_user",
                     "max_count", "tags_per_artist", "n_tags"):
            if getattr(self, name) < 1:
                raise ConfigError(f"synth.{name} must be >= 1, got {getattr(self, name)}")
        if not self.zipf_s > 0:
            raise ConfigError(f"synth.zipf_s must be > 0, got {self.zipf_s}")
        if self.n_artists > self.n_items:
            raise ConfigError("synth.n_artists must not exceed synth.n_items")
        if self.tags_per_artist > self.n_tags:
            raise ConfigError("synth.tags_per_artist must not exceed synth.n_tags")
        if self.interactions_per_user > self.n_items:
            raise ConfigError("synth.interactions_per_user must not exceed synth.n_items")


def zipf_cdf(n: int, s: float) -> np.ndarray:
    """有限秩 1..n 上按 r^-s 归一化的累积分布"""
    weights = np.arange(1, n + 1, dtype=np.float64) ** -s
    cdf = np.cumsum(weights)
    return cdf / cdf[-1]


def draw_distinct(rng: np.random.Generator, cdf: np.ndarray, m: int) -> list[int]:
    """逆 CDF 抽样，重复的直接拒绝，直到得到 m 个不同的秩

    拒绝超过 MAX_REJECTION_ROUNDS 轮后，剩余的秩改为按概率无放回抽取
    （Gumbel top-k），概率下溢为 0 的秩按最小正数计权。
    """
    chosen: list[int] = []
    seen: set[int] = set()
    for _ in range(MAX_REJECTION_ROUNDS):
        if len(chosen) == m:
            return chosen
        draws = np.searchsorted(cdf, rng.random(2 * m), side="right")
        for r in np.minimum(draws, len(cdf) - 1).tolist():
            if r not in seen:
                seen.add(r)
                chosen.append(r)
                if len(chosen) == m:
                    break
    if len(chosen) < m:
        chosen.extend(_draw_remaining(rng, cdf, seen, m - len(chosen)))
    return chosen


def _draw_remaining(rng: np.random.Generator, cdf: np.ndarray, seen: set[int], need: int) -> list[int]:
    rest = np.setdiff1d(np.arange(len(cdf)), np.fromiter(seen, dtype=np.int64, count=len(seen)))
    pmf = np.diff(cdf, prepend=0.0)[rest]
    keys = np.log(np.maximum(pmf, np.finfo(np.float64).tiny)) + rng.gumbel(size=len(rest))
    picked = np.argsort(-keys, kind="stable")[:need]
    return [int(r) for r in rest[picked]]


def generate(config: SynthConfig) -> tuple[list[Interaction], Catalog]:
    """同一 seed 得到完全相同的播放记录和曲库

    曲目秩 0 最热门；艺人按连续区块占有曲目，前几位艺人拥有头部曲目。
    """
    rng = np.random.default_rng(config.seed)
    item_cdf = zipf_cdf(config.n_items, config.zipf_s)

    interactions: list[Interaction] = []
    for u in range(config.n_users):
        items = draw_distinct(rng, item_cdf, config.interactions_per_user)
        counts = rng.integers(1, config.max_count + 1, size=len(items))
        interactions.extend(
            Interaction(f"user{u}", f"item{i}", int(c)) for i, c in zip(items, counts.tolist())
        )

    owner = (np.arange(config.n_items) * config.n_artists) // config.n_items
    tag_cdf = zipf_cdf(config.n_tags, config.zipf_s)
    artist_tags = [
        frozenset(f"tag{t}" for t in draw_distinct(rng, tag_cdf, config.tags_per_artist))
        for _ in range(config.n_artists)
    ]
    catalog = Catalog(
        artist_of={f"item{i}": f"artist{int(a)}" for i, a in enumerate(owner)},
        tags_of={f"item{i}": artist_tags[int(a)] for i, a in enumerate(owner)},
    )
    return interactions, catalog


def write_dataset(
    interactions: list[Interaction],
    catalog: Catalog,
    out_dir: str | Path,
) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "triplets": out / TRIPLETS_FILE,
        "artists": out / ARTISTS_FILE,
        "tags": out / TAGS_FILE,
    }
    with open(paths["triplets"], "w", encoding="utf-8", newline="\n") as f:
        write_triplets(interactions, f)
    with open(paths["artists"], "w", encoding="utf-8", newline="\n") as f:
        for item, artist in catalog.artist_of.items():
            f.write(f"{item}\t{artist}\n")
    with open(paths["tags"], "w", encoding="utf-8", newline="\n") as f:
        for item, tags in catalog.tags_of.items():
            if tags:
                f.write("\t".join([str(item), *sorted(tags)]) + "\n")
    return paths
