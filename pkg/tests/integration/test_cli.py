"""Integration tests for the command-line pipeline."""
from pathlib import Path

import pandas as pd
import pytest

from exposure_loop.config import get_config
from exposure_loop.main import main
from exposure_loop.matrix import load_matrix
from exposure_loop.factorize import load_model
from exposure_loop.simulate import TRACE_COLUMNS


def parse_summary(text: str) -> dict[str, str]:
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


@pytest.fixture
def workspace(tmp_path: Path) -> tuple[Path, Path]:
    """Config pointing at a small synthetic dataset; returns (config, data_dir)."""
    data = tmp_path / "data"
    config = tmp_path / "config.yaml"
    config.write_text(
        f"""
seed: 3
data:
  triplets: {data / 'triplets.tsv'}
  artists: {data / 'artists.tsv'}
  tags: {data / 'tags.tsv'}
  out_dir: {data}
filter:
  min_user: 2
  min_item: 2
model:
  k: 3
  alpha: 2.0
  reg: 0.5
  sweeps: 3
loop:
  n_iterations: 2
  n_recs: 3
  warm_sweeps: 2
synth:
  n_users: 60
  n_items: 40
  n_artists: 8
  interactions_per_user: 6
  max_count: 5
  tags_per_artist: 2
  n_tags: 10
metrics:
  tag_buckets: [2]
  artist_buckets: [2, 4]
  head_cutoff: 2
  top_tags: 5
""",
        encoding="utf-8",
    )
    assert main(["synth", "--config", str(config)]) == 0
    return config, data


class TestPipeline:
    """End-to-end runs through main()."""

    def test_synth(self, workspace, capsys) -> None:
        """synth writes the three files and is reproducible."""
        config, data = workspace
        for name in ("triplets.tsv", "artists.tsv", "tags.tsv"):
            assert (data / name).exists()
        assert main(["synth", "--config", str(config), "--out", str(data / "again")]) == 0
        summary = parse_summary(capsys.readouterr().out)
        assert summary["users"] == "60"
        assert summary["interactions"] == "360"
        assert (data / "again" / "triplets.tsv").read_text() == (data / "triplets.tsv").read_text()

    def test_ingest(self, workspace, tmp_path: Path, capsys) -> None:
        """ingest writes the filtered triplets and matrix."""
        config, _ = workspace
        capsys.readouterr()
        out = tmp_path / "ingest"
        assert main(["ingest", "--config", str(config), "--out", str(out)]) == 0
        summary = parse_summary(capsys.readouterr().out)
        matrix = load_matrix(out / "matrix.bin")
        assert int(summary["interactions"]) == matrix.nnz
        assert len((out / "interactions.tsv").read_text().splitlines()) == matrix.nnz

    def test_train(self, workspace, tmp_path: Path, capsys) -> None:
        """train writes a model and prints a positive objective."""
        config, _ = workspace
        capsys.readouterr()
        out = tmp_path / "train"
        assert main(["train", "--config", str(config), "--out", str(out)]) == 0
        summary = parse_summary(capsys.readouterr().out)
        assert float(summary["objective"]) > 0
        assert load_model(out / "model.bin").hyper.k == 3

    def test_analyze(self, workspace, tmp_path: Path, capsys) -> None:
        """analyze writes all report files."""
        config, _ = workspace
        capsys.readouterr()
        out = tmp_path / "analyze"
        assert main(["analyze", "--config", str(config), "--out", str(out)]) == 0
        summary = parse_summary(capsys.readouterr().out)
        assert 0.0 <= float(summary["gini_artists"]) < 1.0
        for name in ("gini", "coverage", "tag_distribution", "bucket_table", "long_tail", "top_tags"):
            assert (out / f"{name}.csv").exists()
        buckets = pd.read_csv(out / "bucket_table.csv")
        assert buckets["entity"].tolist() == ["tags", "tags", "artists", "artists", "artists"]
        tags = pd.read_csv(out / "top_tags.csv")
        assert list(tags.columns) == ["rank", "tag", "recommended", "listened"]
        assert len(tags) <= 5

    def test_loop_and_report(self, workspace, tmp_path: Path, capsys) -> None:
        """loop writes trace and checkpoints; report summarizes them."""
        config, _ = workspace
        out = tmp_path / "loop"
        assert main(["loop", "--config", str(config), "--out", str(out)]) == 0
        trace = pd.read_csv(out / "trace.csv")
        assert list(trace.columns)[: len(TRACE_COLUMNS)] == TRACE_COLUMNS
        assert len([c for c in trace.columns if c.startswith("reach_")]) == 4
        assert trace["iteration"].tolist() == [1, 2]
        assert (out / "checkpoints" / "iter_2" / "model.bin").exists()

        capsys.readouterr()
        assert main(["report", "--config", str(config), "--out", str(out)]) == 0
        report = capsys.readouterr().out.splitlines()
        assert report[0] == "metric,first,last,change"
        assert any(line.startswith("gini_artists,") for line in report)

    def test_iterations_override_and_resume(self, workspace, tmp_path: Path) -> None:
        """--iterations with --resume reproduces an uninterrupted run."""
        config, _ = workspace
        full, part = tmp_path / "full", tmp_path / "part"
        assert main(["loop", "--config", str(config), "--out", str(full), "--iterations", "3"]) == 0
        assert main(["loop", "--config", str(config), "--out", str(part), "--iterations", "1"]) == 0
        assert main([
            "loop", "--config", str(config), "--out", str(part),
            "--iterations", "3", "--resume", str(part / "checkpoints"),
        ]) == 0
        assert (part / "trace.csv").read_text() == (full / "trace.csv").read_text()

    def test_same_seed_same_trace(self, workspace, tmp_path: Path) -> None:
        """Thread count does not change the trace."""
        config, _ = workspace
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["loop", "--config", str(config), "--out", str(a), "--threads", "2"]) == 0
        assert main(["loop", "--config", str(config), "--out", str(b)]) == 0
        assert (a / "trace.csv").read_text() == (b / "trace.csv").read_text()


class TestErrors:
    """Failures exit 1 with a one-line error on stderr."""

    def test_missing_config_file(self, tmp_path: Path, capsys) -> None:
        """A missing config file is an io error."""
        assert main(["ingest", "--config", str(tmp_path / "nope.yaml")]) == 1
        assert "error=io" in capsys.readouterr().err

    def test_missing_data_path(self, tmp_path: Path, capsys, monkeypatch) -> None:
        """A missing data path is a config error."""
        monkeypatch.delenv("EXPOSURE_LOOP_CONFIG", raising=False)
        assert main(["ingest", "--out", str(tmp_path)]) == 1
        assert "error=config" in capsys.readouterr().err

    def test_malformed_triplets(self, workspace, capsys) -> None:
        """A bad count is a parse error."""
        config, data = workspace
        with open(data / "triplets.tsv", "a", encoding="utf-8") as f:
            f.write("user1\titem1\tmany\n")
        assert main(["ingest", "--config", str(config)]) == 1
        assert "error=parse" in capsys.readouterr().err

    def test_filter_removes_everything(self, workspace, tmp_path: Path, capsys) -> None:
        """A filter that removes everything fails cleanly."""
        config, _ = workspace
        strict = tmp_path / "strict.yaml"
        strict.write_text(config.read_text().replace("min_user: 2", "min_user: 500"))
        assert main(["ingest", "--config", str(strict)]) == 1
        assert "error=" in capsys.readouterr().err

    def test_unknown_command(self) -> None:
        """Unknown subcommands exit through argparse."""
        with pytest.raises(SystemExit):
            main(["serve"])

    def test_malformed_yaml(self, tmp_path: Path, capsys) -> None:
        """A YAML syntax error is reported as a config error."""
        bad = tmp_path / "bad.yaml"
        bad.write_text("model:\n  k: [4,\n", encoding="utf-8")
        assert main(["synth", "--config", str(bad)]) == 1
        errors = [line for line in capsys.readouterr().err.splitlines() if line.startswith("error=")]
        assert len(errors) == 1
        assert errors[0].startswith("error=config")

    def test_non_integer_seed(self, tmp_path: Path, capsys) -> None:
        """A non-integer seed is a config error."""
        bad = tmp_path / "bad.yaml"
        bad.write_text("seed: forty-two\n", encoding="utf-8")
        assert main(["synth", "--config", str(bad)]) == 1
        assert "error=config" in capsys.readouterr().err

    @pytest.mark.parametrize("content", ["", "iteration,gini_artists\n1,oops\n", "a,b\n1,2,3,4\n\"x\n"])
    def test_unreadable_trace(self, tmp_path: Path, capsys, content: str) -> None:
        """Empty or garbled trace files give a single integrity error line."""
        trace = tmp_path / "trace.csv"
        trace.write_text(content, encoding="utf-8")
        assert main(["report", "--trace", str(trace), "--out", str(tmp_path)]) == 1
        errors = [line for line in capsys.readouterr().err.splitlines() if line.startswith("error=")]
        assert len(errors) == 1
        assert errors[0].startswith("error=integrity")


class TestGlobalConfig:
    """Tests for the process-wide config set by main()."""

    def test_command_installs_config(self, workspace) -> None:
        """The resolved config, overrides included, becomes the process-wide config."""
        config, _ = workspace
        assert main(["synth", "--config", str(config), "--seed", "8"]) == 0
        assert get_config().synth.n_users == 60
        assert get_config().model.seed == 8
