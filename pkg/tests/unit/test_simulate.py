"""Tests for simulate.py module."""
import dataclasses
import math
import shutil
from pathlib import Path

import pandas as pd
import pytest

from exposure_loop.errors import SimulationError, SnapshotError
from exposure_loop.factorize import Hyperparams
from exposure_loop.ingest import Catalog, index_entities, restrict_catalog, to_indexed
from exposure_loop.matrix import SparseInteractionMatrix, from_triplets, load_matrix, save_matrix, to_dense
from exposure_loop.simulate import (
    TRACE_COLUMNS,
    LoopConfig,
    default_tracked_items,
    exposure_series,
    latest_checkpoint,
    resume_loop,
    run_loop,
    write_trace,
)
from exposure_loop.synth import SynthConfig, generate


def synth_dataset(config: SynthConfig) -> tuple[SparseInteractionMatrix, Catalog]:
    interactions, catalog = generate(config)
    users, items = index_entities(interactions)
    matrix = from_triplets(to_indexed(interactions, users, items), len(users), len(items))
    return matrix, restrict_catalog(catalog, items)


@pytest.fixture
def dataset(small_synth: SynthConfig) -> tuple[SparseInteractionMatrix, Catalog]:
    return synth_dataset(small_synth)


@pytest.fixture
def loop_config(small_hyper: Hyperparams) -> LoopConfig:
    return LoopConfig(n_iterations=3, n_recs=3, hyper=small_hyper, warm_sweeps=2, n_tracked=2)


class TestRunLoop:
    """Tests for run_loop."""

    def test_single_iteration_conservation(self, dataset, loop_config: LoopConfig) -> None:
        """One iteration adds delta times the pair count."""
        matrix, catalog = dataset
        config = dataclasses.replace(loop_config, n_iterations=1, increment_delta=2)
        trace = run_loop(matrix, catalog, config)
        record = trace.records[0]
        assert record.n_pairs == matrix.n_rows * config.n_recs
        assert record.total_plays == matrix.total() + 2 * record.n_pairs
        assert trace.initial_total == matrix.total()
        assert 0.0 <= record.gini_artists < 1.0
        assert 0.0 < record.coverage_items <= 100.0

    def test_totals_grow_each_iteration(self, dataset, loop_config: LoopConfig) -> None:
        """Total plays grow by the pair count each iteration."""
        matrix, catalog = dataset
        trace = run_loop(matrix, catalog, loop_config)
        assert [r.iteration for r in trace.records] == [1, 2, 3]
        expected = matrix.total()
        for r in trace.records:
            expected += r.n_pairs
            assert r.total_plays == expected

    def test_input_matrix_untouched(self, dataset, loop_config: LoopConfig) -> None:
        """The caller's matrix is not modified."""
        matrix, catalog = dataset
        before = to_dense(matrix).copy()
        run_loop(matrix, catalog, loop_config)
        assert (to_dense(matrix) == before).all()

    def test_deterministic(self, dataset, loop_config: LoopConfig) -> None:
        """Two runs give equal records."""
        matrix, catalog = dataset
        a = run_loop(matrix, catalog, loop_config)
        b = run_loop(matrix, catalog, loop_config)
        assert a.records == b.records

    def test_cold_restart_mode(self, dataset, loop_config: LoopConfig) -> None:
        """Cold retraining runs every iteration."""
        matrix, catalog = dataset
        trace = run_loop(matrix, catalog, dataclasses.replace(loop_config, warm_start=False, n_iterations=2))
        assert len(trace.records) == 2

    def test_everything_seen(self) -> None:
        """With one item that every user heard, exclusion leaves nothing to recommend."""
        matrix = from_triplets([(0, 0, 1), (1, 0, 2), (2, 0, 1)], 3, 1)
        catalog = Catalog(artist_of={0: "solo"}, tags_of={0: frozenset({"rock"})})
        hyper = Hyperparams(k=2, alpha=1.0, reg=0.5, sweeps=2, seed=1)

        excluded = run_loop(matrix, catalog, LoopConfig(n_iterations=2, n_recs=1, hyper=hyper))
        assert all(r.n_pairs == 0 for r in excluded.records)
        assert all(math.isnan(r.gini_artists) for r in excluded.records)
        assert [r.total_plays for r in excluded.records] == [4, 4]

        included = run_loop(matrix, catalog, LoopConfig(n_iterations=2, n_recs=1, hyper=hyper, include_seen=True))
        assert [r.n_pairs for r in included.records] == [3, 3]
        assert [r.total_plays for r in included.records] == [7, 10]
        assert included.records[0].gini_artists == 0.0
        assert included.records[0].coverage_items == 100.0

    def test_checkpoint_layout(self, tmp_path: Path, dataset, loop_config: LoopConfig) -> None:
        """Each iteration leaves a complete directory and no temp dirs."""
        matrix, catalog = dataset
        trace = run_loop(matrix, catalog, loop_config, checkpoint_dir=tmp_path)
        assert load_matrix(tmp_path / "initial" / "matrix.bin") == matrix
        for t in (1, 2, 3):
            for name in ("matrix.bin", "model.bin", "recs.csv"):
                assert (tmp_path / f"iter_{t}" / name).exists()
        assert load_matrix(tmp_path / "iter_3" / "matrix.bin").total() == trace.records[-1].total_plays
        assert latest_checkpoint(tmp_path) == 3
        assert not list(tmp_path.glob("*.tmp"))


class TestTracking:
    """Tests for tracked-item exposure."""

    def test_default_tracked_items(self, tiny_matrix: SparseInteractionMatrix) -> None:
        """Most played items first, ties by index; listener counts would give 0, 1, 2."""
        assert default_tracked_items(tiny_matrix, 2) == [2, 0]
        assert default_tracked_items(tiny_matrix, 3) == [2, 0, 3]

    def test_heavy_listener_outranks_many_light_ones(self) -> None:
        """One user playing item 1 fifty times beats three single plays of item 0."""
        matrix = from_triplets([(0, 0, 1), (1, 0, 1), (2, 0, 1), (0, 1, 50)], 3, 2)
        assert default_tracked_items(matrix, 1) == [1]

    def test_explicit_tracked_items(self, dataset, loop_config: LoopConfig) -> None:
        """Configured items are tracked in the requested order."""
        matrix, catalog = dataset
        trace = run_loop(matrix, catalog, dataclasses.replace(loop_config, tracked_items=[5, 7]))
        series = exposure_series(trace, [7, 5])
        assert list(series) == [7, 5]
        assert all(len(v) == 3 for v in series.values())
        assert trace.initial_reach.keys() == {5, 7}

    def test_untracked_item(self, dataset, loop_config: LoopConfig) -> None:
        """Asking for an untracked item is an error."""
        matrix, catalog = dataset
        trace = run_loop(matrix, catalog, dataclasses.replace(loop_config, tracked_items=[1], n_iterations=1))
        with pytest.raises(SimulationError):
            exposure_series(trace, [2])

    def test_tracked_out_of_range(self, dataset, loop_config: LoopConfig) -> None:
        """A tracked item outside the matrix is an error."""
        matrix, catalog = dataset
        with pytest.raises(SimulationError):
            run_loop(matrix, catalog, dataclasses.replace(loop_config, tracked_items=[matrix.n_cols]))

    def test_trace_file(self, tmp_path: Path, dataset, loop_config: LoopConfig) -> None:
        """trace.csv has the fixed columns plus one reach column per tracked item."""
        matrix, catalog = dataset
        trace = run_loop(matrix, catalog, loop_config)
        write_trace(trace, tmp_path / "trace.csv")
        frame = pd.read_csv(tmp_path / "trace.csv")
        assert list(frame.columns) == TRACE_COLUMNS + [f"reach_{i}" for i in trace.tracked_items]
        assert frame["iteration"].tolist() == [1, 2, 3]
        assert frame["total_plays"].tolist() == [r.total_plays for r in trace.records]


class TestResume:
    """Tests for resume_loop."""

    def test_interrupted_run_matches_uninterrupted(self, tmp_path: Path, dataset, loop_config: LoopConfig) -> None:
        """Resuming after two of three iterations matches the full run."""
        matrix, catalog = dataset
        full = run_loop(matrix, catalog, loop_config, checkpoint_dir=tmp_path / "full")

        partial_dir = tmp_path / "partial"
        run_loop(matrix, catalog, dataclasses.replace(loop_config, n_iterations=2), checkpoint_dir=partial_dir)
        resumed = resume_loop(partial_dir, catalog, loop_config)

        assert resumed.records == full.records
        assert load_matrix(partial_dir / "iter_3" / "matrix.bin") == load_matrix(tmp_path / "full" / "iter_3" / "matrix.bin")

    def test_half_written_checkpoint_ignored(self, tmp_path: Path, dataset, loop_config: LoopConfig) -> None:
        """A leftover temp directory is ignored on resume."""
        matrix, catalog = dataset
        full = run_loop(matrix, catalog, loop_config, checkpoint_dir=tmp_path)
        # Iteration 3 interrupted mid-write
        shutil.rmtree(tmp_path / "iter_3")
        (tmp_path / "iter_3.tmp").mkdir()
        resumed = resume_loop(tmp_path, catalog, loop_config)
        assert resumed.records == full.records

    def test_resume_complete_run(self, tmp_path: Path, dataset, loop_config: LoopConfig) -> None:
        """Resuming a finished run returns its records."""
        matrix, catalog = dataset
        full = run_loop(matrix, catalog, loop_config, checkpoint_dir=tmp_path)
        assert resume_loop(tmp_path, catalog, loop_config).records == full.records

    def test_resume_from_initial_only(self, tmp_path: Path, dataset, loop_config: LoopConfig) -> None:
        """Resume starts from the initial matrix when no iteration completed."""
        matrix, catalog = dataset
        full = run_loop(matrix, catalog, loop_config)
        (tmp_path / "initial").mkdir()
        save_matrix(matrix, tmp_path / "initial" / "matrix.bin")
        assert resume_loop(tmp_path, catalog, loop_config).records == full.records

    def test_missing_initial(self, tmp_path: Path, dataset, loop_config: LoopConfig) -> None:
        """A checkpoint dir without the initial matrix is an error."""
        _, catalog = dataset
        with pytest.raises(SnapshotError):
            resume_loop(tmp_path, catalog, loop_config)

    def test_total_mismatch(self, tmp_path: Path, dataset, loop_config: LoopConfig) -> None:
        """A saved matrix whose total disagrees with the records is rejected."""
        matrix, catalog = dataset
        run_loop(matrix, catalog, loop_config, checkpoint_dir=tmp_path)
        save_matrix(matrix, tmp_path / "iter_3" / "matrix.bin")
        with pytest.raises(SnapshotError, match="expected"):
            resume_loop(tmp_path, catalog, loop_config)

    def test_checkpoint_beyond_iterations(self, tmp_path: Path, dataset, loop_config: LoopConfig) -> None:
        """More completed iterations than configured is an error."""
        matrix, catalog = dataset
        run_loop(matrix, catalog, loop_config, checkpoint_dir=tmp_path)
        with pytest.raises(SimulationError):
            resume_loop(tmp_path, catalog, dataclasses.replace(loop_config, n_iterations=2))
