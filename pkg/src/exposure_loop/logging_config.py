import json
import logging
import os
import sys
import threading
import uuid
from contextvars import ContextVar
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any

LOG_ENV = "EXPOSURE_LOOP_LOG"

# 运行上下文，用于串联同一次命令产生的日志
run_id_var: ContextVar[str] = ContextVar("run_id", default="")


def generate_run_id() -> str:
    """生成运行 ID"""
    return uuid.uuid4().hex[:8]


class StructuredFormatter(logging.Formatter):
    """结构化 JSON 日志格式化器"""

    def format(self, record: logging.LogRecord) -> str:
        log_data = {
            "ts": datetime.now(timezone.utc).isoformat(timespec="milliseconds"),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }

        run_id = run_id_var.get()
        if run_id:
            log_data["run_id"] = run_id

        # 额外字段（通过 extra 参数传入）
        if hasattr(record, "extra_fields"):
            log_data.update(record.extra_fields)

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_data, ensure_ascii=False)


class LoopLogger:
    """分析流水线日志记录器，提供结构化日志方法"""

    def __init__(self, logger: logging.Logger):
        self._logger = logger

    def _log(self, level: int, msg: str, **fields: Any) -> None:
        extra = {"extra_fields": fields} if fields else {}
        self._logger.log(level, msg, extra=extra)

    def info(self, msg: str, **fields: Any) -> None:
        self._log(logging.INFO, msg, **fields)

    def error(self, msg: str, **fields: Any) -> None:
        self._log(logging.ERROR, msg, **fields)

    def warning(self, msg: str, **fields: Any) -> None:
        self._log(logging.WARNING, msg, **fields)

    def debug(self, msg: str, **fields: Any) -> None:
        self._log(logging.DEBUG, msg, **fields)

    def is_debug(self) -> bool:
        return self._logger.isEnabledFor(logging.DEBUG)

    # 业务日志方法
    def ingest_summary(
        self,
        n_users: int,
        n_items: int,
        n_interactions: int,
        dropped: int = 0,
    ) -> None:
        """记录数据读入与过滤结果"""
        self.info(
            "ingest_summary",
            users=n_users,
            items=n_items,
            interactions=n_interactions,
            dropped=dropped,
        )

    def sweep_done(
        self,
        sweep: int,
        duration_ms: float,
        objective: float | None = None,
    ) -> None:
        """记录一次完整 ALS 迭代"""
        fields: dict[str, Any] = {"sweep": sweep, "duration_ms": round(duration_ms, 2)}
        if objective is not None:
            fields["objective"] = objective
        self.debug("sweep_done", **fields)

    def iteration_done(
        self,
        iteration: int,
        gini_artists: float,
        coverage_items: float,
        n_pairs: int,
        duration_ms: float,
    ) -> None:
        """记录反馈回路的一轮"""
        self.info(
            "iteration_done",
            iteration=iteration,
            gini_artists=round(gini_artists, 6),
            coverage_items=round(coverage_items, 6),
            pairs=n_pairs,
            duration_ms=round(duration_ms, 2),
        )

    def checkpoint_saved(self, iteration: int, path: str) -> None:
        self.debug("checkpoint_saved", iteration=iteration, path=path)

    def report_written(self, name: str, path: str, rows: int) -> None:
        self.info("report_written", report=name, path=path, rows=rows)


def _level_from_env() -> str:
    value = os.getenv(LOG_ENV, "info").strip().lower()
    if value not in ("error", "info", "debug"):
        value = "info"
    return value


def setup_logging(
    log_level: str | None = None,
    log_dir: str | None = None,
    max_bytes: int = 10 * 1024 * 1024,  # 10MB
    backup_count: int = 5,
    console_output: bool = True,
) -> LoopLogger:
    """
    配置日志系统

    Args:
        log_level: 日志级别，默认读取 EXPOSURE_LOOP_LOG 环境变量
        log_dir: 日志目录，None 表示不写文件
        max_bytes: 单个日志文件最大大小（默认 10MB）
        backup_count: 保留的历史日志文件数量（默认 5 个）
        console_output: 是否输出到标准错误

    Returns:
        LoopLogger 实例
    """
    level = (log_level or _level_from_env()).upper()

    logger = logging.getLogger("exposure_loop")
    logger.setLevel(getattr(logging, level))
    logger.handlers.clear()
    logger.propagate = False

    json_formatter = StructuredFormatter()

    if log_dir is not None:
        log_path = Path(log_dir)
        log_path.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            filename=log_path / "exposure_loop.log",
            maxBytes=max_bytes,
            backupCount=backup_count,
            encoding="utf-8",
        )
        file_handler.setFormatter(json_formatter)
        logger.addHandler(file_handler)

    # 数据输出只走标准输出，日志只走标准错误
    if console_output:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(json_formatter)
        logger.addHandler(console_handler)

    return LoopLogger(logger)


_loop_logger: LoopLogger | None = None
_loop_logger_lock = threading.Lock()


def get_logger() -> LoopLogger:
    """获取全局日志实例（线程安全的单例）"""
    global _loop_logger
    if _loop_logger is None:
        with _loop_logger_lock:
            if _loop_logger is None:
                _loop_logger = setup_logging()
    return _loop_logger


def reset_logger() -> None:
    """重置全局日志实例（仅用于测试）"""
    global _loop_logger
    with _loop_logger_lock:
        _loop_logger = None


def set_logger(logger: LoopLogger) -> None:
    """设置全局日志实例"""
    global _loop_logger
    with _loop_logger_lock:
        _loop_logger = logger
