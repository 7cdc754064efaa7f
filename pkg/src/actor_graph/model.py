"""Graph convolution over actor features with action and activity heads."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import numeric
from .config import TrainConfig
from .data import ClipSample
from .numeric import ShapeError, Tape, Var
from .relation import RelationMode, RelationParams, build_relation_graph, clip_mask

EMBEDDER = ("embed.w", "embed.b")
HEADS = ("action.w", "action.b", "activity.w", "activity.b")


@dataclass(eq=False)
class ModelParams:
    """Named float64 tensors plus the dimensions they were built for."""

    tensors: dict[str, np.ndarray]
    in_dim: int
    hidden_dim: int
    n_actions: int
    n_activities: int
    n_graphs: int
    gcn_layers: int
    mode: RelationMode

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.in_dim, self.hidden_dim,
                           self.n_actions, self.n_activities, self.n_graphs, self.gcn_layers, self.mode)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def relation_names(self, g: int) -> list[str]:
        if self.mode is not RelationMode.DOT:
            return []
        return [f"graph{g}.{m}.{p}" for m in ("theta", "phi") for p in ("w", "b")]

    def gcn_names(self, g: int) -> list[str]:
        return [f"graph{g}.gcn{l}.w" for l in range(self.gcn_layers)]

    def stage2_names(self) -> list[str]:
        names = []
        for g in range(self.n_graphs):
            names += self.relation_names(g) + self.gcn_names(g)
        return names + list(HEADS)

    def relation_params(self, g: int, cfg: TrainConfig) -> RelationParams:
        if self.mode is not RelationMode.DOT:
            return cfg.relation_params()
        t = self.tensors
        pre = f"graph{g}"
        return cfg.relation_params(w_theta=t[f"{pre}.theta.w"], b_theta=t[f"{pre}.theta.b"],
                                   w_phi=t[f"{pre}.phi.w"], b_phi=t[f"{pre}.phi.b"])

    def equals(self, other: "ModelParams") -> bool:
        """Bit-level equality of every tensor."""
        if self.tensors.keys() != other.tensors.keys():
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in ((self.tensors[k], other.tensors[k]) for k in self.tensors)
        )


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(in_dim: int, n_actions: int, n_activities: int, cfg: TrainConfig,
                seed: Optional[int] = None) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization of every tensor."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    h = cfg.hidden_dim or in_dim
    # embedder and heads first so they do not depend on the relation settings
    t: dict[str, np.ndarray] = {
        "embed.w": _uniform(rng, (h, in_dim), in_dim),
        "embed.b": _uniform(rng, (h,), in_dim),
        "action.w": _uniform(rng, (n_actions, h), h),
        "action.b": _uniform(rng, (n_actions,), h),
        "activity.w": _uniform(rng, (n_activities, h), h),
        "activity.b": _uniform(rng, (n_activities,), h),
    }
    for g in range(cfg.n_graphs):
        if cfg.mode is RelationMode.DOT:
            for m in ("theta", "phi"):
                t[f"graph{g}.{m}.w"] = _uniform(rng, (cfg.d_k, h), h)
                t[f"graph{g}.{m}.b"] = _uniform(rng, (cfg.d_k,), h)
        for l in range(cfg.gcn_layers):
            t[f"graph{g}.gcn{l}.w"] = _uniform(rng, (h, h), h)
    return ModelParams(t, in_dim, h, n_actions, n_activities, cfg.n_graphs, cfg.gcn_layers, cfg.mode)


def regraft(m: ModelParams, cfg: TrainConfig) -> ModelParams:
    """Keep ``m``'s embedder and heads; take relation and GCN tensors for ``cfg``.

    Tensors are reused when ``m`` was built with the same graph settings,
    otherwise freshly initialized from ``cfg.seed``.
    """
    same = (m.mode is cfg.mode and m.n_graphs == cfg.n_graphs and m.gcn_layers == cfg.gcn_layers
            and all(m[k].shape[0] == cfg.d_k for k in m.names() if ".theta." in k or ".phi." in k))
    if same:
        return m.copy()
    fresh = init_params(m.in_dim, m.n_actions, m.n_activities, cfg.replace(hidden_dim=m.hidden_dim))
    for k in EMBEDDER + HEADS:
        fresh.tensors[k] = m[k].copy()
    return fresh


# plain forward pieces


def gcn_layer(G, X, W) -> np.ndarray:
    """One graph convolution ``ReLU(G @ X @ W)``."""
    G = G.G if hasattr(G, "G") else G
    return numeric.relu(numeric.matmul(numeric.matmul(G, X), W))


def fuse_features(X, Z_list: Sequence) -> np.ndarray:
    X = numeric.as_matrix(X)
    out = X.copy()
    for Z in Z_list:
        Z = numeric.as_matrix(Z)
        if Z.shape != X.shape:
            raise ShapeError(f"cannot fuse {Z.shape} into {X.shape}")
        out = out + Z
    return out


def _head(x: np.ndarray, w, b) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"head expects {w.shape[1]} features, got {x.shape[-1]}")
    return x @ w.T + np.asarray(b, dtype=np.float64)


def activity_logits(Xf, w, b) -> np.ndarray:
    Xf = numeric.as_matrix(Xf)
    if Xf.shape[0] == 0:
        raise ValueError("activity logits need at least one actor")
    return _head(Xf.max(axis=0), w, b)


def action_logits(Xf, w, b) -> np.ndarray:
    return _head(numeric.as_matrix(Xf), w, b)


# taped forward



def taped_loss(tape: Tape, act_logits: Var, action_labels: Sequence[Optional[int]], grp_logits: Var,
               activity_label: Optional[int], lam: float) -> Var:
    """CE(activity) + lam * mean CE(action) over labeled actors."""
    rows = [i for i, l in enumerate(action_labels) if l is not None]
    terms, weights = [], []
    if activity_label is not None:
        terms.append(tape.cross_entropy(grp_logits, [activity_label]))
        weights.append(1.0)
    if rows and lam != 0:
        picked = act_logits
        if len(rows) != act_logits.shape[0]:
            sel = np.zeros((len(rows), act_logits.shape[0]))
            sel[np.arange(len(rows)), rows] = 1.0
            picked = tape.matmul(tape.leaf(sel), act_logits)
        terms.append(tape.cross_entropy(picked, [action_labels[i] for i in rows]))
        weights.append(lam)
    if not terms:
        if activity_label is None and not rows:
            raise ValueError("no labels: nothing to train on")
        # lam == 0 with only action labels: loss is identically zero
        return tape.leaf(np.asarray(0.0))
    return tape.weighted_sum(terms, weights)


def loss(action_logits, action_labels, activity_logits, activity_label, lam: float = 1.0) -> float:
    tape = Tape()
    out = taped_loss(tape, tape.leaf(numeric.as_matrix(action_logits)), list(action_labels),
                     tape.leaf(np.asarray(activity_logits, dtype=np.float64)), activity_label, lam)
    return float(out.value)


def forward(tape: Tape, leaves: dict[str, Var], m: ModelParams, clip: ClipSample, cfg: TrainConfig,
            use_graph: bool) -> tuple[Var, Var]:
    """Taped forward pass; returns (action logits N x A, activity logits 1 x C)."""
    feats = clip.features
    if feats.shape[1] != m.in_dim:
        raise ShapeError(f"clip {clip.clip_id}: feature dimension d={feats.shape[1]}, model expects d={m.in_dim}")
    X = tape.linear(tape.leaf(feats), leaves["embed.w"], leaves["embed.b"])
    Xf = X
    if use_graph:
        mask = clip_mask(clip, cfg.relation_params())
        zs = []
        for g in range(m.n_graphs):
            if m.mode is RelationMode.DOT:
                pre = f"graph{g}"
                th = tape.linear(X, leaves[f"{pre}.theta.w"], leaves[f"{pre}.theta.b"])
                ph = tape.linear(X, leaves[f"{pre}.phi.w"], leaves[f"{pre}.phi.b"])
                s = tape.scale(tape.matmul(th, tape.transpose(ph)), 1.0 / math.sqrt(cfg.d_k))
                G = tape.masked_row_softmax(s, mask)
            else:
                # kernel graphs are constants for back-propagation
                G = tape.leaf(build_relation_graph(clip, m.mode, m.relation_params(g, cfg), features=X.value).G)
            H = X
            for name in m.gcn_names(g):
                H = tape.relu(tape.matmul(tape.matmul(G, H), leaves[name]))
            zs.append(H)
        Xf = tape.add_many([X] + zs)
    act = tape.linear(Xf, leaves["action.w"], leaves["action.b"])
    grp = tape.linear(tape.max_pool(Xf), leaves["activity.w"], leaves["activity.b"])
    return act, grp


def loss_and_grads(m: ModelParams, clips: Sequence[ClipSample], cfg: TrainConfig, use_graph: bool,
                   trainable: Optional[Iterable[str]] = None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over ``clips`` and its gradient for each trainable tensor."""
    trainable = set(m.names() if trainable is None else trainable)
    tape = Tape()
    leaves = {k: tape.leaf(v, k in trainable) for k, v in m.tensors.items()}
    losses = []
    for clip in clips:
        act, grp = forward(tape, leaves, m, clip, cfg, use_graph)
        losses.append(taped_loss(tape, act, clip.action_labels, grp, clip.activity_label, cfg.action_loss_weight))
    total = tape.weighted_sum(losses, [1.0 / len(losses)] * len(losses))
    tape.backward(total)
    grads = {k: (leaves[k].grad if leaves[k].grad is not None else np.zeros_like(v))
             for k, v in m.tensors.items() if k in trainable}
    return float(total.value), grads


@dataclass(frozen=True, eq=False)
class Prediction:
    action_classes: np.ndarray
    action_probs: np.ndarray
    activity_class: int
    activity_probs: np.ndarray


def predict(clip: ClipSample, m: ModelParams, cfg: TrainConfig) -> Prediction:
    tape = Tape()
    leaves = {k: tape.leaf(v) for k, v in m.tensors.items()}
    act, grp = forward(tape, leaves, m, clip, cfg, use_graph=cfg.stage == 2)
    pa = numeric.softmax(act.value)
    pg = numeric.softmax(grp.value.reshape(-1))
    return Prediction(pa.argmax(axis=1), pa, int(pg.argmax()), pg)
