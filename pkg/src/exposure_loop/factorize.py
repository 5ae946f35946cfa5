"""隐式反馈的置信度加权矩阵分解（ALS 训练）与 top-N 推荐

c_ui = 1 + alpha * r_ui，p_ui = 1 当且仅当 r_ui > 0；未观测的位置 c = 1，p = 0。
"""
from __future__ import annotations

import struct
import time
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.linalg

from exposure_loop.errors import ConfigError, SnapshotError, SolverError
from exposure_loop.logging_config import get_logger
from exposure_loop.matrix import SparseInteractionMatrix, to_triplets, transpose
from exposure_loop.metrics import RecommendationLog
from exposure_loop.snapshot import SnapshotReader, header

MODEL_MAGIC = b"EXFM"
INIT_SCALE = 0.01

Side = Literal["users", "items"]


@dataclass(frozen=True)
class Hyperparams:
    k: int = 64
    alpha: float = 40.0
    reg: float = 1.0
    sweeps: int = 15
    seed: int = 42

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.reg < 0:
            raise ConfigError(f"reg must be >= 0, got {self.reg}")
        if self.sweeps < 1:
            raise ConfigError(f"sweeps must be >= 1, got {self.sweeps}")


@dataclass
class FactorModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    hyper: Hyperparams

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    def copy(self) -> FactorModel:
        return FactorModel(self.user_factors.copy(), self.item_factors.copy(), self.hyper)


def init_model(n_users: int, n_items: int, hyper: Hyperparams) -> FactorModel:
    """因子独立同分布地取自 [-0.01, 0.01] 上的均匀分布，同一 seed 结果逐位相同"""
    if n_users < 1 or n_items < 1:
        raise SolverError(f"model dimensions must be >= 1, got {n_users}x{n_items}")
    rng = np.random.default_rng(hyper.seed)
    x = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_users, hyper.k))
    y = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_items, hyper.k))
    return FactorModel(x, y, hyper)


def solve_side(
    fixed_factors: np.ndarray,
    indices: np.ndarray,
    counts: np.ndarray,
    hyper: Hyperparams,
    gram: np.ndarray | None = None,
) -> np.ndarray:
    """固定另一侧因子时，单个用户（或曲目）的加权岭回归闭式解

    f = (YᵀY + alpha·Y_sᵀ diag(r_s) Y_s + reg·I)⁻¹ · Y_sᵀ (1 + alpha·r_s)

    gram 可传入预先算好的 YᵀY。
    """
    k = fixed_factors.shape[1]
    if gram is None:
        gram = fixed_factors.T @ fixed_factors
    ys = fixed_factors[indices]
    r = np.asarray(counts, dtype=np.float64)
    a = gram + hyper.alpha * (ys.T * r) @ ys
    a[np.diag_indices(k)] += hyper.reg
    b = ys.T @ (1.0 + hyper.alpha * r)
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        if hyper.reg == 0:
            raise SolverError("normal matrix is singular; use reg > 0") from None
        raise SolverError("normal matrix is not positive definite") from None
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def _solve_rows(
    m: SparseInteractionMatrix,
    fixed: np.ndarray,
    target: np.ndarray,
    hyper: Hyperparams,
    gram: np.ndarray,
    rows: range,
) -> None:
    for u in rows:
        cols, counts = m.row(u)
        target[u] = solve_side(fixed, cols, counts, hyper, gram)


def half_sweep(
    m: SparseInteractionMatrix,
    fixed: np.ndarray,
    target: np.ndarray,
    hyper: Hyperparams,
    threads: int = 1,
) -> None:
    """固定 fixed，逐行求解 target；各行只写自己那一行，可以并行"""
    gram = fixed.T @ fixed
    if threads <= 1 or m.n_rows < 2 * threads:
        _solve_rows(m, fixed, target, hyper, gram, range(m.n_rows))
        return
    bounds = np.linspace(0, m.n_rows, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(_solve_rows, m, fixed, target, hyper, gram, range(lo, hi))
            for lo, hi in zip(bounds, bounds[1:])
        ]
        for f in futures:
            f.result()


def train(
    m: SparseInteractionMatrix,
    hyper: Hyperparams,
    init: FactorModel | None = None,
    sweeps: int | None = None,
    threads: int = 1,
    on_half_sweep: Callable[[int, Side, FactorModel], None] | None = None,
) -> FactorModel:
    """ALS 训练：每轮先解用户侧（曲目固定），再在转置矩阵上解曲目侧

    init 不为空时从其因子热启动；sweeps 默认取 hyper.sweeps。
    """
    if m.nnz == 0:
        raise SolverError("cannot train on an empty matrix")
    logger = get_logger()
    if init is None:
        model = init_model(m.n_rows, m.n_cols, hyper)
    else:
        if (init.n_users, init.n_items) != m.shape or init.user_factors.shape[1] != hyper.k:
            raise SolverError(
                f"warm-start model {init.n_users}x{init.n_items} (k={init.user_factors.shape[1]}) "
                f"does not match matrix {m.n_rows}x{m.n_cols} (k={hyper.k})"
            )
        model = FactorModel(init.user_factors.copy(), init.item_factors.copy(), hyper)
    n_sweeps = hyper.sweeps if sweeps is None else sweeps
    if n_sweeps < 1:
        raise SolverError(f"sweeps must be >= 1, got {n_sweeps}")

    mt = transpose(m)
    for sweep in range(1, n_sweeps + 1):
        start = time.perf_counter()
        half_sweep(m, model.item_factors, model.user_factors, hyper, threads)
        if on_half_sweep is not None:
            on_half_sweep(sweep, "users", model)
        half_sweep(mt, model.user_factors, model.item_factors, hyper, threads)
        if on_half_sweep is not None:
            on_half_sweep(sweep, "items", model)
        loss = objective(m, model) if logger.is_debug() else None
        logger.sweep_done(sweep, (time.perf_counter() - start) * 1000, loss)

    if not (np.isfinite(model.user_factors).all() and np.isfinite(model.item_factors).all()):
        raise SolverError("training produced non-finite factors")
    return model


def objective(m: SparseInteractionMatrix, model: FactorModel) -> float:
    """Σ_{u,i} c_ui (p_ui − x_uᵀy_i)² + reg(Σ‖x_u‖² + Σ‖y_i‖²)，对全部用户-曲目对求和

    未观测部分用 (XᵀX)(YᵀY) 展开，只在观测位置上做修正。
    """
    x, y = model.user_factors, model.item_factors
    hyper = model.hyper
    # Σ_{u,i} (x_uᵀy_i)² = tr(XᵀX · YᵀY)
    loss = float(np.sum((x.T @ x) * (y.T @ y)))
    if m.nnz:
        t = to_triplets(m)
        pred = np.einsum("ij,ij->i", x[t[:, 0]], y[t[:, 1]])
        c = 1.0 + hyper.alpha * t[:, 2]
        loss += float(np.sum(c * (1.0 - pred) ** 2 - pred**2))
    loss += hyper.reg * (float(np.sum(x * x)) + float(np.sum(y * y)))
    return max(loss, 0.0)


def score(model: FactorModel, u: int, i: int) -> float:
    if not (0 <= u < model.n_users and 0 <= i < model.n_items):
        raise IndexError(f"({u}, {i}) out of range for {model.n_users}x{model.n_items} model")
    return float(model.user_factors[u] @ model.item_factors[i])


def _rank(
    scores: np.ndarray,
    seen: np.ndarray,
    n: int,
    include_seen: bool,
) -> list[tuple[int, float]]:
    candidates = np.arange(len(scores))
    if not include_seen and len(seen):
        mask = np.ones(len(scores), dtype=bool)
        mask[seen] = False
        candidates = candidates[mask]
    cand_scores = scores[candidates]
    # 分数降序，并列时下标升序
    order = np.lexsort((candidates, -cand_scores))[:n]
    return [(int(candidates[j]), float(cand_scores[j])) for j in order]


def recommend_top_n(
    model: FactorModel,
    m: SparseInteractionMatrix,
    u: int,
    n: int,
    include_seen: bool = False,
) -> list[tuple[int, float]]:
    """用户 u 未听过的曲目中分数最高的 n 首"""
    if n < 1:
        raise SolverError(f"n must be >= 1, got {n}")
    if not 0 <= u < model.n_users:
        raise IndexError(f"user {u} out of range")
    seen, _ = m.row(u)
    scores = model.item_factors @ model.user_factors[u]
    return _rank(scores, seen, n, include_seen)


def recommend_all(
    model: FactorModel,
    m: SparseInteractionMatrix,
    n: int,
    include_seen: bool = False,
    threads: int = 1,
    batch_size: int = 1024,
) -> RecommendationLog:
    """为所有用户生成 top-n，按用户升序、名次顺序排列"""
    if n < 1:
        raise SolverError(f"n must be >= 1, got {n}")

    def run(lo: int, hi: int) -> list[tuple[int, int]]:
        out: list[tuple[int, int]] = []
        for u in range(lo, hi):
            seen, _ = m.row(u)
            # 与 recommend_top_n 同样逐用户打分，保证两者逐位一致
            scores = model.item_factors @ model.user_factors[u]
            out.extend((u, i) for i, _ in _rank(scores, seen, n, include_seen))
        return out

    batches = [(lo, min(lo + batch_size, m.n_rows)) for lo in range(0, m.n_rows, batch_size)]
    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda b: run(*b), batches))
    else:
        chunks = [run(lo, hi) for lo, hi in batches]
    pairs = [p for chunk in chunks for p in chunk]
    return RecommendationLog(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), m.n_rows, m.n_cols)


def save_model(model: FactorModel, path: str | Path) -> None:
    h = model.hyper
    blob = b"".join([
        header(MODEL_MAGIC),
        struct.pack("<qqq", model.n_users, model.n_items, h.k),
        np.ascontiguousarray(model.user_factors, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.item_factors, dtype="<f8").tobytes(),
        struct.pack("<ddqq", h.alpha, h.reg, h.sweeps, h.seed),
    ])
    Path(path).write_bytes(blob)


def load_model(path: str | Path) -> FactorModel:
    reader = SnapshotReader(Path(path).read_bytes(), MODEL_MAGIC, str(path))
    n_users, n_items, k = reader.unpack("<qqq")
    if n_users < 1 or n_items < 1 or k < 1:
        raise SnapshotError(f"{path}: invalid dimensions {n_users}x{n_items}, k={k}")
    x = reader.array("<f8", n_users * k).astype(np.float64).reshape(n_users, k)
    y = reader.array("<f8", n_items * k).astype(np.float64).reshape(n_items, k)
    alpha, reg, sweeps, seed = reader.unpack("<ddqq")
    reader.finish()
    try:
        hyper = Hyperparams(k=k, alpha=alpha, reg=reg, sweeps=sweeps, seed=seed)
    except ConfigError as e:
        raise SnapshotError(f"{path}: {e}") from e
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise SnapshotError(f"{path}: non-finite factors")
    return FactorModel(x, y, hyper)
