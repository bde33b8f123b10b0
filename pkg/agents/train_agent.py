# /agents/train_agent.py

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from clients.checkpoint_client import CheckpointClient
from core import autodiff as ad
from core.config import TrainConfig
from core.errors import TrainingDivergedError, UsageError
from core.prednet import (NetConfig, NetWeights, TrainingSample, build_forward, init_weights, loss_graph,
                          prepare_sample)

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    weights: NetWeights
    history: list[float] = field(default_factory=list)
    breakdown: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


@dataclass
class _Batch:
    batch_id: int
    indices: np.ndarray
    dynamic: np.ndarray
    static: np.ndarray
    targets: list


class TrainAgent:
    """
    PredictionNet 지도 학습을 수행하는 에이전트.
    배치 준비(래스터화)는 스레드 풀에서 미리 수행하고, 가중치 갱신은 이 스레드에서만 합니다.
    """
    def __init__(self, checkpoint_client: CheckpointClient):
        self.checkpoint_client = checkpoint_client

    def _prepare(self, samples: list[TrainingSample], config: NetConfig, seed: int, batch_id: int,
                 indices: np.ndarray) -> _Batch:
        inputs, targets = [], []
        for slot, i in enumerate(indices):
            # 배치 안의 위치마다 고정된 난수원 → 준비 순서와 무관하게 결정적
            rng = np.random.default_rng([seed, batch_id, slot])
            net_input, target = prepare_sample(samples[int(i)], config, rng)
            inputs.append(net_input)
            targets.append(target)
        dynamic = np.stack([x.dynamic for x in inputs])
        static = np.stack([x.static for x in inputs])
        return _Batch(batch_id, indices, dynamic, static, targets)

    def _dump(self, batch: _Batch, out_dir: Path | None) -> str | None:
        if out_dir is None:
            return None
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"diverged_batch_{batch.batch_id:06d}.npz"
        np.savez(path, indices=batch.indices, dynamic=batch.dynamic, static=batch.static)
        return str(path)

    def train(self, samples: list[TrainingSample], config: NetConfig, settings: TrainConfig | None = None,
              seed: int = 0, out_dir: str | Path | None = None, weights: NetWeights | None = None,
              dtype=np.float32, progress: bool = True) -> TrainResult:
        """
        미니배치 Adam으로 네트워크를 학습합니다.

        Args:
            samples (list[TrainingSample]): 학습 샘플.
            settings (TrainConfig): 반복 수, 배치 크기, 학습률, 체크포인트 주기 등.
            out_dir (str | Path | None): 체크포인트와 발산 덤프를 저장할 디렉토리.
            weights (NetWeights | None): 이어서 학습할 가중치. 없으면 seed로 초기화합니다.

        Returns:
            TrainResult: 학습된 가중치와 반복별 손실 기록.

        Raises:
            TrainingDivergedError: 손실이 유한하지 않은 경우. 문제 배치 id와 덤프 경로를 담습니다.
        """
        if not samples:
            raise UsageError("training needs a nonempty dataset")
        settings = settings or TrainConfig()
        out_dir = Path(out_dir) if out_dir is not None else None
        rng = np.random.default_rng(seed)
        weights = weights.copy() if weights is not None else init_weights(config, rng, dtype=dtype)
        optimizer = ad.Adam(settings.lr)
        result = TrainResult(weights)

        n = len(samples)
        replace = n < settings.batch_size
        plan = [rng.choice(n, size=settings.batch_size, replace=replace) for _ in range(settings.iterations)]

        bar = tqdm(range(settings.iterations), desc="Training", disable=not progress)
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            pending = deque()
            ahead = 0
            for _ in range(min(settings.prefetch, settings.iterations)):
                pending.append(pool.submit(self._prepare, samples, config, seed, ahead, plan[ahead]))
                ahead += 1

            for it in bar:
                batch = pending.popleft().result()
                if ahead < settings.iterations:
                    pending.append(pool.submit(self._prepare, samples, config, seed, ahead, plan[ahead]))
                    ahead += 1

                fg = build_forward(weights, batch.dynamic, batch.static, mode="train")
                loss, parts = loss_graph(fg, batch.targets, config)
                value = float(loss.data)
                if not np.isfinite(value):
                    path = self._dump(batch, out_dir)
                    raise TrainingDivergedError(f"non-finite loss at iteration {it}", batch.batch_id, path)

                grads = ad.backward(fg.graph, loss)
                optimizer.step(weights.params, grads)
                result.history.append(value)
                result.breakdown.append({k: float(v.data) for k, v in parts.items()})

                if it % settings.log_every == 0:
                    logger.info("iter %d: loss %.5f (focal %.5f, velocity %.5f, backtrace %.5f)", it, value,
                                *(result.breakdown[-1][k] for k in ("focal", "velocity", "backtrace")))
                bar.set_postfix(loss=f"{value:.4f}")

                if out_dir is not None and (it + 1) % settings.checkpoint_every == 0:
                    path = out_dir / "checkpoints" / f"weights_{it + 1:06d}.pnet"
                    self.checkpoint_client.save_weights(weights, path, meta={"iteration": it + 1, "loss": value})
                    result.checkpoints.append(path)

        return result
