import dataclasses
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from exposure_loop.errors import ConfigError
from exposure_loop.factorize import Hyperparams
from exposure_loop.simulate import LoopConfig
from exposure_loop.synth import SynthConfig

CONFIG_ENV = "EXPOSURE_LOOP_CONFIG"


@dataclass
class DataConfig:
    triplets: str | None = None
    artists: str | None = None
    tags: str | None = None
    out_dir: str = "out"


@dataclass
class FilterConfig:
    min_user: int = 30
    min_item: int = 30


@dataclass
class MetricsConfig:
    listen_weight: str = "binary"
    tag_buckets: list[int] = field(default_factory=lambda: [5, 20])
    artist_buckets: list[int] = field(default_factory=lambda: [5, 20])
    head_cutoff: int = 5
    top_tags: int = 20


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    model: Hyperparams = field(default_factory=Hyperparams)
    loop: LoopConfig = field(default_factory=LoopConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    threads: int = 1

    def loop_config(self) -> LoopConfig:
        """模型段的超参数注入到回路配置里"""
        return dataclasses.replace(self.loop, hyper=self.model, threads=self.threads)


def _section(cls: type, raw: Any, name: str, **extra: Any) -> Any:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(sorted(unknown))}")
    try:
        return cls(**{**raw, **extra})
    except TypeError as e:
        raise ConfigError(f"section {name!r}: {e}") from None


def _integer(value: object, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return value


def _validate(config: RunConfig) -> RunConfig:
    if config.metrics.listen_weight not in ("binary", "plays"):
        raise ConfigError(f"metrics.listen_weight must be binary or plays, got {config.metrics.listen_weight!r}")
    if config.filter.min_user < 1 or config.filter.min_item < 1:
        raise ConfigError("filter thresholds must be >= 1")
    if config.metrics.head_cutoff < 1:
        raise ConfigError("metrics.head_cutoff must be >= 1")
    if config.threads < 1:
        raise ConfigError("threads must be >= 1")
    return config


def load_config(config_path: str | None = None) -> RunConfig:
    """读取 YAML 配置；未给路径且未设置 EXPOSURE_LOOP_CONFIG 时返回默认配置

    顶层 seed 是唯一的根随机种子，覆盖 model.seed 和 synth.seed。
    """
    if config_path is None:
        config_path = os.getenv(CONFIG_ENV)
        if config_path is None:
            return RunConfig()

    path = Path(config_path)
    if not path.exists():
        raise FileNotFoundError(f"Config not found: {config_path}")

    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed YAML in {config_path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")

    top = {"data", "filter", "model", "loop", "synth", "metrics", "threads", "seed"}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")

    seed = data.get("seed")
    seeded = {} if seed is None else {"seed": _integer(seed, "seed")}
    model = _section(Hyperparams, data.get("model"), "model", **seeded)

    config = RunConfig(
        data=_section(DataConfig, data.get("data"), "data"),
        filter=_section(FilterConfig, data.get("filter"), "filter"),
        model=model,
        loop=_section(LoopConfig, data.get("loop"), "loop", hyper=model),
        synth=_section(SynthConfig, data.get("synth"), "synth", **seeded),
        metrics=_section(MetricsConfig, data.get("metrics"), "metrics"),
        threads=_integer(data.get("threads", 1), "threads"),
    )
    return _validate(config)


def apply_overrides(
    config: RunConfig,
    *,
    out_dir: str | None = None,
    seed: int | None = None,
    threads: int | None = None,
    include_seen: bool | None = None,
    listen_weight: str | None = None,
    n_iterations: int | None = None,
) -> RunConfig:
    """命令行参数覆盖配置文件中的值"""
    data, model, loop, synth, metrics = config.data, config.model, config.loop, config.synth, config.metrics
    if out_dir is not None:
        data = dataclasses.replace(data, out_dir=out_dir)
    if seed is not None:
        model = dataclasses.replace(model, seed=seed)
        synth = dataclasses.replace(synth, seed=seed)
    if include_seen is not None:
        loop = dataclasses.replace(loop, include_seen=include_seen)
    if n_iterations is not None:
        loop = dataclasses.replace(loop, n_iterations=n_iterations)
    if listen_weight is not None:
        metrics = dataclasses.replace(metrics, listen_weight=listen_weight)
    loop = dataclasses.replace(loop, hyper=model)
    return _validate(dataclasses.replace(
        config,
        data=data,
        model=model,
        loop=loop,
        synth=synth,
        metrics=metrics,
        threads=config.threads if threads is None else threads,
    ))


_config: RunConfig | None = None
_config_lock = threading.Lock()


def get_config() -> RunConfig:
    """获取全局配置（线程安全的单例）"""
    global _config
    if _config is None:
        with _config_lock:
            if _config is None:
                _config = load_config()
    return _config


def reset_config() -> None:
    """重置全局配置（仅用于测试）"""
    global _config
    with _config_lock:
        _config = None


def set_config(config: RunConfig) -> None:
    """设置全局配置"""
    global _config
    with _config_lock:
        _config = config
