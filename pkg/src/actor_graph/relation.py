"""Actor relation graphs: appearance kernels, the distance mask, and row softmax."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import ClipSample
from .numeric import ShapeError, masked_row_softmax

DEFAULT_MU_FRACTION = 0.2


class RelationMode(str, enum.Enum):
    DOT = "dot"
    NCC = "ncc"
    SAD = "sad"

    @classmethod
    def parse(cls, s: "str | RelationMode") -> "RelationMode":
        try:
            return cls(s.lower() if isinstance(s, str) else s)
        except ValueError:
            raise ValueError(f"unknown relation mode {s!r}; expected one of dot, ncc, sad") from None


@dataclass(frozen=True, eq=False)
class RelationParams:
    """Settings for one relation graph.

    ``w_theta``/``w_phi`` are d_k x d and only used by the embedded
    dot-product mode.  Exactly one of ``mu_fraction`` (of frame width) and
    ``mu_pixels`` sets the distance threshold.
    """

    d_k: int = 256
    w_theta: Optional[np.ndarray] = None
    b_theta: Optional[np.ndarray] = None
    w_phi: Optional[np.ndarray] = None
    b_phi: Optional[np.ndarray] = None
    mu_fraction: Optional[float] = DEFAULT_MU_FRACTION
    mu_pixels: Optional[float] = None
    same_frame_only: bool = False
    ncc_centered: bool = True

    def __post_init__(self):
        if self.d_k < 1:
            raise ValueError("d_k must be >= 1")
        if (self.mu_fraction is None) == (self.mu_pixels is None):
            raise ValueError("set exactly one of mu_fraction and mu_pixels")
        if self.mu_fraction is not None and not 0 < self.mu_fraction <= 1:
            raise ValueError(f"mu_fraction must lie in (0, 1], got {self.mu_fraction}")
        if self.mu_pixels is not None and not self.mu_pixels > 0:
            raise ValueError(f"mu_pixels must be positive, got {self.mu_pixels}")
        for name in ("w_theta", "b_theta", "w_phi", "b_phi"):
            v = getattr(self, name)
            if v is not None and not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")

    def mu(self, frame_width: float) -> float:
        if self.mu_pixels is not None:
            return float(self.mu_pixels)
        return float(self.mu_fraction) * float(frame_width)

    def has_embedding(self) -> bool:
        return self.w_theta is not None and self.w_phi is not None


@dataclass(frozen=True, eq=False)
class RelationGraph:
    G: np.ndarray
    mode: RelationMode
    mask: np.ndarray


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _embed(w, b, x):
    w = np.asarray(w, dtype=np.float64)
    y = w @ x
    return y if b is None else y + b


def appearance_dot(x_i, x_j, p: RelationParams) -> float:
    x_i, x_j = _vec(x_i), _vec(x_j)
    if not p.has_embedding():
        raise ValueError("dot-product relation needs w_theta and w_phi")
    d = p.w_theta.shape[1]
    if x_i.size != d or x_j.size != d:
        raise ShapeError(f"feature length {x_i.size}/{x_j.size} vs embedding input {d}")
    th = _embed(p.w_theta, p.b_theta, x_i)
    ph = _embed(p.w_phi, p.b_phi, x_j)
    return float(np.dot(th, ph) / math.sqrt(p.d_k))


def _flat(x: np.ndarray, centered: bool) -> bool:
    # tested on raw values: centering a constant vector can leave rounding residue
    return bool(x.max() == x.min()) if centered else not np.any(x)


def appearance_ncc(x_i, x_j, centered: bool = True) -> float:
    """Zero-lag normalized correlation; 0 if either vector has zero energy."""
    x_i, x_j = _vec(x_i), _vec(x_j)
    if x_i.size != x_j.size:
        raise ShapeError(f"length {x_i.size} vs {x_j.size}")
    if x_i.size < 2:
        raise ValueError("NCC needs at least 2 feature entries")
    if _flat(x_i, centered) or _flat(x_j, centered):
        return 0.0
    if centered:
        x_i = x_i - x_i.mean()
        x_j = x_j - x_j.mean()
    ni = math.sqrt(float(np.dot(x_i, x_i)))
    nj = math.sqrt(float(np.dot(x_j, x_j)))
    r = float(np.dot(x_i, x_j)) / (ni * nj)
    return min(1.0, max(-1.0, r))


def sad(x_i, x_j) -> float:
    x_i, x_j = _vec(x_i), _vec(x_j)
    if x_i.size != x_j.size:
        raise ShapeError(f"length {x_i.size} vs {x_j.size}")
    return float(np.abs(x_i - x_j).sum())


def appearance_sad(x_i, x_j) -> float:
    """Negated mean absolute difference, so identical actors score highest."""
    d = _vec(x_i).size
    return -sad(x_i, x_j) / d


def position_mask(centers, mu: float, frames: Optional[Sequence[int]] = None) -> np.ndarray:
    """1 where box centers are within ``mu`` (inclusive).

    With ``frames`` given, pairs from different frames are masked out.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    c = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    diff = c[:, None, :] - c[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    m = (dist <= mu).astype(np.float64)
    if frames is not None:
        f = np.asarray(frames)
        m *= f[:, None] == f[None, :]
    np.fill_diagonal(m, 1.0)
    return m


def _ncc_matrix(x: np.ndarray, centered: bool) -> np.ndarray:
    if x.shape[1] < 2:
        raise ValueError("NCC needs at least 2 feature entries")
    live = np.array([not _flat(row, centered) for row in x])
    if centered:
        x = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((x * x).sum(axis=1))
    num = (x[:, None, :] * x[None, :, :]).sum(axis=-1)
    den = norms[:, None] * norms[None, :]
    ok = live[:, None] & live[None, :]
    out = np.divide(num, den, out=np.zeros_like(num), where=ok)
    return np.clip(out, -1.0, 1.0)


def embed_pairs(x: np.ndarray, p: RelationParams) -> tuple[np.ndarray, np.ndarray]:
    th = np.stack([_embed(p.w_theta, p.b_theta, row) for row in x])
    ph = np.stack([_embed(p.w_phi, p.b_phi, row) for row in x])
    return th, ph


def appearance_scores(x, mode: RelationMode, p: RelationParams) -> np.ndarray:
    """N x N matrix of pairwise appearance relations.

    Every entry depends only on the two feature rows involved, so permuting
    actors permutes the matrix exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    mode = RelationMode.parse(mode)
    if mode is RelationMode.DOT:
        if not p.has_embedding():
            raise ValueError("dot-product relation needs w_theta and w_phi")
        if p.w_theta.shape[1] != x.shape[1]:
            raise ShapeError(f"feature length {x.shape[1]} vs embedding input {p.w_theta.shape[1]}")
        th, ph = embed_pairs(x, p)
        return (th[:, None, :] * ph[None, :, :]).sum(axis=-1) / math.sqrt(p.d_k)
    if mode is RelationMode.NCC:
        return _ncc_matrix(x, p.ncc_centered)
    return -np.abs(x[:, None, :] - x[None, :, :]).sum(axis=-1) / x.shape[1]


def clip_mask(clip: ClipSample, p: RelationParams) -> np.ndarray:
    frames = clip.frame_indices if p.same_frame_only else None
    return position_mask(clip.centers, p.mu(clip.frame_width), frames)


def build_relation_graph(
    clip: ClipSample,
    mode: RelationMode,
    p: RelationParams,
    features: Optional[np.ndarray] = None,
    scores: Optional[np.ndarray] = None,
) -> RelationGraph:
    """Relation graph over the clip's actors.

    ``features`` overrides the clip's own feature rows (e.g. embedded
    features); ``scores`` injects precomputed appearance relations.
    """
    mode = RelationMode.parse(mode)
    mask = clip_mask(clip, p)
    if scores is None:
        x = clip.features if features is None else features
        scores = appearance_scores(x, mode, p)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != mask.shape:
        raise ShapeError(f"scores {scores.shape} vs {clip.n_actors} actors")
    return RelationGraph(masked_row_softmax(scores, mask), mode, mask)


def build_multi_graph(
    clip: ClipSample,
    graphs: Sequence[tuple[RelationMode, RelationParams]],
    features: Optional[np.ndarray] = None,
) -> list[RelationGraph]:
    if not graphs:
        raise ValueError("need at least one (mode, params) pair")
    return [build_relation_graph(clip, m, p, features) for m, p in graphs]
