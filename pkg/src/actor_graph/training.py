"""Two-stage training, evaluation metrics, and model checkpoints."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import TrainConfig, build_config, parse_config_text
from .data import ClipSample, Dataset
from .model import EMBEDDER, HEADS, ModelParams, init_params, loss_and_grads, predict, regraft
from .relation import RelationMode

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


# optimizers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            params[k] = params[k] - self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(k, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] = params[k] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    return Adam(cfg.lr) if cfg.optimizer == "adam" else SGD(cfg.lr)


# sampling


def sample_frame(clip: ClipSample, rng: np.random.Generator) -> ClipSample:
    """Restrict a clip to the actors of one randomly chosen annotated frame."""
    frames = sorted({a.frame_index for a in clip.actors})
    if len(frames) == 1:
        return clip
    f = frames[int(rng.integers(len(frames)))]
    return clip.subset(i for i, a in enumerate(clip.actors) if a.frame_index == f)


def drop_frames(clip: ClipSample, p: float, rng: np.random.Generator) -> ClipSample:
    """Drop each annotated frame with probability ``p``, keeping at least one."""
    frames = sorted({a.frame_index for a in clip.actors})
    if p <= 0 or len(frames) == 1:
        return clip
    keep = {f for f in frames if rng.random() >= p}
    if not keep:
        keep = {frames[int(rng.integers(len(frames)))]}
    return clip.subset(i for i, a in enumerate(clip.actors) if a.frame_index in keep)


def _check_dataset(ds: Dataset) -> None:
    if not ds.clips:
        raise TrainingError("empty dataset")
    if not any(c.activity_label is not None for c in ds.clips):
        raise TrainingError("dataset has no clips with an activity label")


def _run(m: ModelParams, ds: Dataset, cfg: TrainConfig, trainable: Sequence[str], use_graph: bool,
         rng: np.random.Generator, transform, history: Optional[list]) -> ModelParams:
    m = m.copy()
    opt = make_optimizer(cfg)
    n = len(ds.clips)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [transform(ds.clips[i], rng) for i in order[start:start + cfg.batch_size]]
            value, grads = loss_and_grads(m, batch, cfg, use_graph, trainable)
            if not math.isfinite(value):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            total += value * len(batch)
            opt.step(m.tensors, grads)
        if history is not None:
            history.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, total / n)
    return m


def train_stage1(ds: Dataset, cfg: TrainConfig, history: Optional[list] = None,
                 init: Optional[ModelParams] = None) -> ModelParams:
    """Embedder and heads with the identity graph (no GCN)."""
    if cfg.stage != 1:
        raise TrainingError("train_stage1 needs cfg.stage == 1")
    _check_dataset(ds)
    m = init or init_params(ds.feature_dim, ds.n_actions, ds.n_activities, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    transform = sample_frame if cfg.stage1_frame_sample else (lambda c, r: c)
    return _run(m, ds, cfg, list(EMBEDDER + HEADS), False, rng, transform, history)


def train_stage2(ds: Dataset, m: Optional[ModelParams], cfg: TrainConfig,
                 history: Optional[list] = None) -> ModelParams:
    """Relation, GCN and head parameters with the embedder frozen."""
    if cfg.stage != 2:
        raise TrainingError("train_stage2 needs cfg.stage == 2")
    _check_dataset(ds)
    if m is None:
        if not cfg.stage2_from_scratch:
            raise TrainingError("stage 2 needs a stage-1 model unless stage2_from_scratch is set")
        m = init_params(ds.feature_dim, ds.n_actions, ds.n_activities, cfg)
    m = regraft(m, cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    p = cfg.frame_dropout
    return _run(m, ds, cfg, m.stage2_names(), True, rng, lambda c, r: drop_frames(c, p, r), history)


def train(ds: Dataset, cfg: TrainConfig) -> tuple[ModelParams, dict[str, list[float]]]:
    """Stage 1, then stage 2 when ``cfg.stage == 2``."""
    curves: dict[str, list[float]] = {"stage1": []}
    m = None
    if not (cfg.stage == 2 and cfg.stage2_from_scratch):
        m = train_stage1(ds, cfg.replace(stage=1), curves["stage1"])
    if cfg.stage == 2:
        curves["stage2"] = []
        m = train_stage2(ds, m, cfg, curves["stage2"])
    return m, curves


# metrics


@dataclass
class Metrics:
    activity_accuracy: float
    action_accuracy: float
    per_class_action_accuracy: list[float]
    confusion: np.ndarray
    n_clips: int
    loss: float
    loss_curve: dict[str, list[float]] = field(default_factory=dict)


def evaluate(ds: Dataset, m: ModelParams, cfg: TrainConfig) -> Metrics:
    """Activity accuracy is the fraction of labeled clips predicted correctly."""
    if not ds.clips:
        raise TrainingError("empty dataset")
    C, A = ds.n_activities, ds.n_actions
    confusion = np.zeros((C, C), dtype=np.int64)
    act_hit = np.zeros(A, dtype=np.int64)
    act_n = np.zeros(A, dtype=np.int64)
    for clip in ds.clips:
        pred = predict(clip, m, cfg)
        if clip.activity_label is not None:
            confusion[clip.activity_label, pred.activity_class] += 1
        for a, p in zip(clip.actors, pred.action_classes):
            if a.action_label is not None:
                act_n[a.action_label] += 1
                act_hit[a.action_label] += int(p == a.action_label)
    labeled = [c for c in ds.clips if c.activity_label is not None or any(a.action_label is not None for a in c.actors)]
    if not labeled:
        raise TrainingError("evaluation set has no labels")
    loss = math.fsum(loss_and_grads(m, [c], cfg, cfg.stage == 2, [])[0] for c in labeled) / len(labeled)
    total = int(confusion.sum())
    per_class = [float(h / n) if n else float("nan") for h, n in zip(act_hit, act_n)]
    return Metrics(
        activity_accuracy=float(np.trace(confusion) / total) if total else float("nan"),
        action_accuracy=float(act_hit.sum() / act_n.sum()) if act_n.sum() else float("nan"),
        per_class_action_accuracy=per_class,
        confusion=confusion,
        n_clips=len(ds.clips),
        loss=loss,
    )


def metrics_report(metrics: Metrics, cfg: TrainConfig, ds: Dataset) -> str:
    """Line-oriented ``key<TAB>value`` report followed by the confusion block."""
    lines = [f"config.{k}\t{v}" for k, v in cfg.items()]
    lines += [
        f"clips\t{metrics.n_clips}",
        f"activity_accuracy\t{metrics.activity_accuracy!r}",
        f"action_accuracy\t{metrics.action_accuracy!r}",
    ]
    lines += [f"action_accuracy.{name}\t{v!r}" for name, v in zip(ds.action_names, metrics.per_class_action_accuracy)]
    lines.append(f"loss\t{metrics.loss!r}")
    for stage, curve in metrics.loss_curve.items():
        lines += [f"loss_curve.{stage}.{i}\t{v!r}" for i, v in enumerate(curve)]
    lines.append(f"confusion\t{len(ds.activity_names)}\t" + "\t".join(ds.activity_names))
    lines += ["\t".join(str(int(v)) for v in row) for row in metrics.confusion]
    return "\n".join(lines) + "\n"


# checkpoints

MAGIC = b"ACTRGRPH"
VERSION = 1
_DIGEST = hashlib.sha256().digest_size


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _blob(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def dump_checkpoint(m: ModelParams, cfg: TrainConfig, version: int = VERSION) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", version))
    buf.write(_blob(cfg.to_text().encode()))
    meta = dict(in_dim=m.in_dim, hidden_dim=m.hidden_dim, n_actions=m.n_actions, n_activities=m.n_activities,
                n_graphs=m.n_graphs, gcn_layers=m.gcn_layers, mode=m.mode.value)
    buf.write(_blob(json.dumps(meta, sort_keys=True).encode()))
    buf.write(struct.pack("<I", len(m.tensors)))
    for name, arr in m.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf.write(_blob(name.encode()))
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint body ends early")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)


def parse_checkpoint(data: bytes) -> tuple[ModelParams, TrainConfig]:
    if not data.startswith(MAGIC) and not MAGIC.startswith(data):
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(data) < len(MAGIC) + 4 + _DIGEST:
        raise CheckpointError("checksum mismatch: checkpoint is truncated")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: checkpoint is truncated or corrupted")
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads version {VERSION}")
    cfg = build_config(parse_config_text(r.blob().decode()))
    meta = json.loads(r.blob().decode())
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        name = r.blob().decode()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after tensors")
    m = ModelParams(tensors, meta["in_dim"], meta["hidden_dim"], meta["n_actions"], meta["n_activities"],
                    meta["n_graphs"], meta["gcn_layers"], RelationMode.parse(meta["mode"]))
    return m, cfg


def save_checkpoint(m: ModelParams, cfg: TrainConfig, path) -> None:
    Path(path).write_bytes(dump_checkpoint(m, cfg))


def load_checkpoint(path) -> tuple[ModelParams, TrainConfig]:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    return parse_checkpoint(p.read_bytes())
