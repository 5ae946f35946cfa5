"""Shared test fixtures for exposure-loop tests."""
import io
import logging
from pathlib import Path

import numpy as np
import pytest

from exposure_loop.config import reset_config
from exposure_loop.factorize import Hyperparams
from exposure_loop.ingest import Catalog, build_catalog
from exposure_loop.logging_config import LoopLogger, reset_logger, set_logger
from exposure_loop.matrix import SparseInteractionMatrix, from_triplets
from exposure_loop.synth import SynthConfig


def random_triplets(
    rng: np.random.Generator, n_rows: int, n_cols: int, density: float = 0.4, max_count: int = 5
) -> list[tuple[int, int, int]]:
    """Random unique (row, col, count) triplets."""
    mask = rng.random((n_rows, n_cols)) < density
    rows, cols = np.nonzero(mask)
    counts = rng.integers(1, max_count + 1, size=len(rows))
    return [(int(r), int(c), int(v)) for r, c, v in zip(rows, cols, counts)]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def small_hyper() -> Hyperparams:
    """Small model for fast tests."""
    return Hyperparams(k=3, alpha=2.0, reg=0.5, sweeps=4, seed=7)


@pytest.fixture
def tiny_matrix() -> SparseInteractionMatrix:
    """3 users x 4 items."""
    return from_triplets(
        [(0, 0, 3), (0, 1, 1), (1, 1, 2), (1, 2, 5), (2, 0, 1), (2, 3, 4)],
        n_rows=3,
        n_cols=4,
    )


@pytest.fixture
def tiny_catalog() -> Catalog:
    """Dense-indexed catalog for the 4 items of tiny_matrix."""
    return Catalog(
        artist_of={0: "queen", 1: "queen", 2: "abba", 3: "bowie"},
        tags_of={
            0: frozenset({"rock"}),
            1: frozenset({"rock", "pop"}),
            2: frozenset({"pop"}),
            3: frozenset(),
        },
    )


@pytest.fixture
def text_catalog() -> Catalog:
    artists = io.StringIO("s1\tQueen\ns2\tAbba\n")
    tags = io.StringIO("s1\tRock\tPOP\n")
    return build_catalog(artists, tags)


@pytest.fixture
def small_synth() -> SynthConfig:
    return SynthConfig(
        n_users=60,
        n_items=40,
        n_artists=8,
        zipf_s=1.0,
        interactions_per_user=6,
        max_count=5,
        tags_per_artist=2,
        n_tags=10,
        seed=3,
    )


@pytest.fixture
def mock_logger() -> LoopLogger:
    """Logger without handlers."""
    logger = logging.getLogger("test_exposure_loop")
    logger.handlers.clear()
    logger.setLevel(logging.INFO)
    return LoopLogger(logger)


@pytest.fixture(autouse=True)
def reset_globals(mock_logger: LoopLogger):
    """Reset all global state before each test."""
    reset_config()
    reset_logger()
    set_logger(mock_logger)
    yield
    reset_config()
    reset_logger()


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    """Temporary YAML config with small settings."""
    path = tmp_path / "config.yaml"
    path.write_text(
        """
seed: 5
threads: 2
data:
  triplets: data/triplets.tsv
  artists: data/artists.tsv
  out_dir: results
filter:
  min_user: 3
  min_item: 2
model:
  k: 4
  alpha: 10.0
  sweeps: 3
loop:
  n_iterations: 4
  n_recs: 5
  tracked_items: [1, 2]
metrics:
  listen_weight: plays
  tag_buckets: [2, 4]
""",
        encoding="utf-8",
    )
    return path
