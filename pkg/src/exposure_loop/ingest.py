"""播放记录与曲库文件的读取、活跃度过滤和稠密编号"""
from __future__ import annotations

from collections import Counter
from collections.abc import Hashable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np

from exposure_loop.errors import CatalogError, ExposureLoopError, ParseError


@dataclass(frozen=True, slots=True)
class Interaction:
    user: str
    item: str
    count: int


@dataclass
class Catalog:
    """曲目 → 艺人、曲目 → 标签集合

    读入时以外部曲目标识为键；restrict_catalog 之后以稠密曲目下标为键。
    """

    artist_of: dict[Hashable, str]
    tags_of: dict[Hashable, frozenset[str]] = field(default_factory=dict)

    def tags(self, item: Hashable) -> frozenset[str]:
        return self.tags_of.get(item, frozenset())

    def artists(self) -> list[str]:
        """全部艺人，按名称排序"""
        return sorted(set(self.artist_of.values()))

    def artist_codes(self, n_items: int) -> tuple[np.ndarray, list[str]]:
        """稠密曲目下标 → 艺人编号数组，未登记的曲目为 -1"""
        artists = self.artists()
        code_of = {a: c for c, a in enumerate(artists)}
        codes = np.full(n_items, -1, dtype=np.int64)
        for item, artist in self.artist_of.items():
            if isinstance(item, (int, np.integer)) and 0 <= item < n_items:
                codes[item] = code_of[artist]
        return codes, artists


@dataclass
class EntityIndex:
    forward: dict[str, int]
    backward: list[str]

    @classmethod
    def from_ids(cls, ids: Iterable[str]) -> EntityIndex:
        """按首次出现顺序编号"""
        forward: dict[str, int] = {}
        for x in ids:
            if x not in forward:
                forward[x] = len(forward)
        return cls(forward, list(forward))

    def __len__(self) -> int:
        return len(self.backward)


def _split(line: str) -> list[str]:
    return line.rstrip("\r\n").split("\t")


def parse_triplets(stream: Iterable[str]) -> list[Interaction]:
    """解析 user<TAB>item<TAB>count 三元组，重复的 (user, item) 合并求和"""
    merged: dict[tuple[str, str], int] = {}
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        fields = _split(line)
        if len(fields) != 3:
            raise ParseError(line_no, f"expected 3 tab-separated fields, got {len(fields)}")
        user, item, raw = fields
        if not user or not item:
            raise ParseError(line_no, "empty user or item identifier")
        if not (raw.isascii() and raw.isdigit()):
            raise ParseError(line_no, f"count is not an integer: {raw!r}")
        count = int(raw)
        if count < 1:
            raise ParseError(line_no, f"count must be >= 1, got {count}")
        key = (user, item)
        merged[key] = merged.get(key, 0) + count
    return [Interaction(u, i, c) for (u, i), c in merged.items()]


def write_triplets(interactions: Iterable[Interaction], stream: TextIO) -> int:
    n = 0
    for x in interactions:
        stream.write(f"{x.user}\t{x.item}\t{x.count}\n")
        n += 1
    return n


def read_triplets(path: str | Path) -> list[Interaction]:
    with open(path, encoding="utf-8") as f:
        return parse_triplets(f)


def _single_pass(
    interactions: Sequence[Interaction], min_user: int, min_item: int
) -> list[Interaction]:
    # 度数按不同的 (user, item) 对计，而不是播放次数
    pairs = {(x.user, x.item) for x in interactions}
    user_deg = Counter(u for u, _ in pairs)
    item_deg = Counter(i for _, i in pairs)
    return [
        x for x in interactions
        if user_deg[x.user] >= min_user and item_deg[x.item] >= min_item
    ]


def filter_by_activity(
    interactions: Sequence[Interaction],
    min_user: int = 30,
    min_item: int = 30,
) -> list[Interaction]:
    """反复过滤低活跃用户和冷门曲目，直到不动点

    结果里每个用户至少有 min_user 首不同曲目，每首曲目至少有 min_item 个不同用户。
    """
    if min_user < 1 or min_item < 1:
        raise ExposureLoopError(f"thresholds must be >= 1, got {min_user}, {min_item}")
    current = list(interactions)
    while True:
        kept = _single_pass(current, min_user, min_item)
        if len(kept) == len(current):
            return kept
        current = kept


def _parse_artist_map(stream: Iterable[str]) -> dict[str, str]:
    artist_of: dict[str, str] = {}
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        fields = _split(line)
        if len(fields) != 2:
            raise ParseError(line_no, f"expected item<TAB>artist, got {len(fields)} fields")
        item, artist = fields[0], fields[1].strip()
        if not item or not artist:
            raise ParseError(line_no, "empty item or artist")
        previous = artist_of.setdefault(item, artist)
        if previous != artist:
            raise CatalogError(item, f"conflicting artists {previous!r} and {artist!r} (line {line_no})")
    return artist_of


def _parse_tag_map(stream: Iterable[str]) -> dict[str, set[str]]:
    tags_of: dict[str, set[str]] = {}
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        fields = _split(line)
        item = fields[0]
        if not item:
            raise ParseError(line_no, "empty item identifier")
        # Last.fm 标签大小写混杂
        tags = {t.strip().lower() for t in fields[1:]}
        tags.discard("")
        tags_of.setdefault(item, set()).update(tags)
    return tags_of


def build_catalog(artist_map: Iterable[str], tag_map: Iterable[str]) -> Catalog:
    artist_of = _parse_artist_map(artist_map)
    raw_tags = _parse_tag_map(tag_map)
    tags_of: dict[Hashable, frozenset[str]] = {item: frozenset() for item in artist_of}
    for item, tags in raw_tags.items():
        tags_of[item] = frozenset(tags)
    return Catalog(dict(artist_of), tags_of)


def read_catalog(artist_path: str | Path, tag_path: str | Path | None) -> Catalog:
    with open(artist_path, encoding="utf-8") as fa:
        if tag_path is None:
            return build_catalog(fa, [])
        with open(tag_path, encoding="utf-8") as ft:
            return build_catalog(fa, ft)


def index_entities(interactions: Sequence[Interaction]) -> tuple[EntityIndex, EntityIndex]:
    if not interactions:
        raise ExposureLoopError("cannot index an empty interaction list")
    users = EntityIndex.from_ids(x.user for x in interactions)
    items = EntityIndex.from_ids(x.item for x in interactions)
    return users, items


def to_indexed(
    interactions: Iterable[Interaction],
    user_index: EntityIndex,
    item_index: EntityIndex,
) -> list[tuple[int, int, int]]:
    return [
        (user_index.forward[x.user], item_index.forward[x.item], x.count)
        for x in interactions
    ]


def restrict_catalog(catalog: Catalog, item_index: EntityIndex) -> Catalog:
    """把曲库限制到已编号的曲目上，键换成稠密下标"""
    artist_of: dict[Hashable, str] = {}
    tags_of: dict[Hashable, frozenset[str]] = {}
    for idx, item in enumerate(item_index.backward):
        artist = catalog.artist_of.get(item)
        if artist is None:
            raise CatalogError(item, "has interactions but no artist")
        artist_of[idx] = artist
        tags_of[idx] = catalog.tags(item)
    return Catalog(artist_of, tags_of)
