"""Clip annotations, the line-oriented clip file format, and synthetic data.

File format (UTF-8)::

    HEADER d A C
    ACTION_NAMES name_0 ... name_{A-1}          # optional
    ACTIVITY_NAMES name_0 ... name_{C-1}        # optional
    CLIP clip_id frame_width frame_height T activity_label
    ACTOR frame_index x_min y_min x_max y_max action_label f_1 ... f_d

Labels may be ``-`` for unlabeled.  Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np

UNLABELED = "-"


class ParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinate in {coords}")
        if not self.x_max > self.x_min:
            raise ValueError(f"invalid box: x_max {self.x_max} must exceed x_min {self.x_min}")
        if not self.y_max > self.y_min:
            raise ValueError(f"invalid box: y_max {self.y_max} must exceed y_min {self.y_min}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min


def box_center(b: BoundingBox) -> tuple[float, float]:
    return ((b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2)


@dataclass(frozen=True)
class ActorInstance:
    frame_index: int
    box: BoundingBox
    feature: tuple[float, ...]
    action_label: Optional[int] = None


@dataclass(frozen=True)
class ClipSample:
    clip_id: str
    frame_width: float
    frame_height: float
    frame_count: int
    actors: tuple[ActorInstance, ...]
    activity_label: Optional[int] = None

    @property
    def n_actors(self) -> int:
        return len(self.actors)

    @cached_property
    def features(self) -> np.ndarray:
        """N x d feature matrix (read-only)."""
        x = np.array([a.feature for a in self.actors], dtype=np.float64)
        x.setflags(write=False)
        return x

    @cached_property
    def centers(self) -> np.ndarray:
        c = np.array([box_center(a.box) for a in self.actors], dtype=np.float64).reshape(-1, 2)
        c.setflags(write=False)
        return c

    @property
    def frame_indices(self) -> np.ndarray:
        return np.array([a.frame_index for a in self.actors], dtype=np.int64)

    @property
    def action_labels(self) -> list[Optional[int]]:
        return [a.action_label for a in self.actors]

    def permuted(self, order: Iterable[int]) -> "ClipSample":
        return ClipSample(
            self.clip_id,
            self.frame_width,
            self.frame_height,
            self.frame_count,
            tuple(self.actors[i] for i in order),
            self.activity_label,
        )

    def subset(self, keep: Iterable[int]) -> "ClipSample":
        return self.permuted(keep)


def _default_names(prefix: str, n: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{i}" for i in range(n))


@dataclass(frozen=True)
class Dataset:
    clips: tuple[ClipSample, ...]
    action_names: tuple[str, ...]
    activity_names: tuple[str, ...]
    feature_dim: int

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    @property
    def n_activities(self) -> int:
        return len(self.activity_names)

    def __len__(self) -> int:
        return len(self.clips)

    def with_clips(self, clips: Iterable[ClipSample]) -> "Dataset":
        return Dataset(tuple(clips), self.action_names, self.activity_names, self.feature_dim)

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return self.with_clips(self.clips[:n_first]), self.with_clips(self.clips[n_first:])


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_dataset(ds: Dataset) -> ValidationReport:
    report = ValidationReport()
    bad = report.violations.append
    if ds.feature_dim < 1:
        bad(f"feature_dim {ds.feature_dim} < 1")
    for clip in ds.clips:
        cid = clip.clip_id
        if not (clip.frame_width > 0 and clip.frame_height > 0):
            bad(f"clip {cid}: non-positive frame size {clip.frame_width}x{clip.frame_height}")
        if clip.frame_count < 1:
            bad(f"clip {cid}: frame count {clip.frame_count} < 1")
        if not clip.actors:
            bad(f"clip {cid}: no actors")
        if clip.activity_label is not None and not 0 <= clip.activity_label < ds.n_activities:
            bad(f"clip {cid}: activity label {clip.activity_label} out of range [0, {ds.n_activities})")
        for k, actor in enumerate(clip.actors):
            if not 0 <= actor.frame_index < clip.frame_count:
                bad(f"clip {cid} actor {k}: frame index {actor.frame_index} outside [0, {clip.frame_count})")
            if len(actor.feature) != ds.feature_dim:
                bad(f"clip {cid} actor {k}: feature length {len(actor.feature)} != d={ds.feature_dim}")
            if not all(math.isfinite(v) for v in actor.feature):
                bad(f"clip {cid} actor {k}: non-finite feature entry")
            if actor.action_label is not None and not 0 <= actor.action_label < ds.n_actions:
                bad(f"clip {cid} actor {k}: action label {actor.action_label} out of range [0, {ds.n_actions})")
    return report


# parsing / serialization


def _float(tok: str, lineno: int, what: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(lineno, f"bad number {tok!r} for {what}") from None
    if not math.isfinite(v):
        raise ParseError(lineno, f"non-finite {what}: {tok}")
    return v


def _int(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(lineno, f"bad integer {tok!r} for {what}") from None


def _label(tok: str, lineno: int, what: str, n: int) -> Optional[int]:
    if tok == UNLABELED:
        return None
    v = _int(tok, lineno, what)
    if not 0 <= v < n:
        raise ParseError(lineno, f"{what} {v} out of range [0, {n})")
    return v


def parse_clip_file(data: bytes | str) -> Dataset:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    header = None
    action_names = activity_names = None
    clips: list[ClipSample] = []
    cur: Optional[dict] = None

    def close():
        if cur is not None:
            if not cur["actors"]:
                raise ParseError(cur["lineno"], f"clip {cur['id']} has no actors")
            clips.append(
                ClipSample(cur["id"], cur["w"], cur["h"], cur["T"], tuple(cur["actors"]), cur["label"])
            )

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind = tok[0]
        if kind == "HEADER":
            if header is not None:
                raise ParseError(lineno, "duplicate HEADER")
            if len(tok) != 4:
                raise ParseError(lineno, "HEADER needs d A C")
            header = tuple(_int(t, lineno, n) for t, n in zip(tok[1:], ("d", "A", "C")))
            if min(header) < 1:
                raise ParseError(lineno, f"HEADER counts must be positive, got {header}")
            continue
        if header is None:
            raise ParseError(lineno, "expected HEADER first")
        d, n_act, n_grp = header
        if kind in ("ACTION_NAMES", "ACTIVITY_NAMES"):
            want = n_act if kind == "ACTION_NAMES" else n_grp
            if len(tok) - 1 != want:
                raise ParseError(lineno, f"{kind} needs {want} names, got {len(tok) - 1}")
            if kind == "ACTION_NAMES":
                action_names = tuple(tok[1:])
            else:
                activity_names = tuple(tok[1:])
        elif kind == "CLIP":
            if len(tok) != 6:
                raise ParseError(lineno, "CLIP needs clip_id frame_width frame_height T activity_label")
            close()
            w = _float(tok[2], lineno, "frame_width")
            h = _float(tok[3], lineno, "frame_height")
            if w <= 0 or h <= 0:
                raise ParseError(lineno, f"frame size must be positive, got {w}x{h}")
            t = _int(tok[4], lineno, "T")
            if t < 1:
                raise ParseError(lineno, f"T must be >= 1, got {t}")
            cur = dict(id=tok[1], w=w, h=h, T=t, label=_label(tok[5], lineno, "activity label", n_grp),
                       actors=[], lineno=lineno)
        elif kind == "ACTOR":
            if cur is None:
                raise ParseError(lineno, "ACTOR before any CLIP")
            if len(tok) != 7 + d:
                raise ParseError(lineno, f"feature length {len(tok) - 7} != d={d}")
            fi = _int(tok[1], lineno, "frame_index")
            if not 0 <= fi < cur["T"]:
                raise ParseError(lineno, f"frame_index {fi} outside [0, {cur['T']})")
            coords = [_float(t, lineno, "box coordinate") for t in tok[2:6]]
            try:
                box = BoundingBox(*coords)
            except ValueError as e:
                raise ParseError(lineno, str(e)) from None
            label = _label(tok[6], lineno, "action label", n_act)
            feat = tuple(_float(t, lineno, "feature") for t in tok[7:])
            cur["actors"].append(ActorInstance(fi, box, feat, label))
        else:
            raise ParseError(lineno, f"unknown record type {kind!r}")
    if header is None:
        raise ParseError(0, "missing HEADER")
    close()
    d, n_act, n_grp = header
    return Dataset(
        tuple(clips),
        action_names or _default_names("action", n_act),
        activity_names or _default_names("activity", n_grp),
        d,
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def _fmt_label(v: Optional[int]) -> str:
    return UNLABELED if v is None else str(v)


def serialize_dataset(ds: Dataset) -> bytes:
    out = [
        f"HEADER {ds.feature_dim} {ds.n_actions} {ds.n_activities}",
        "ACTION_NAMES " + " ".join(ds.action_names),
        "ACTIVITY_NAMES " + " ".join(ds.activity_names),
    ]
    for c in ds.clips:
        out.append(f"CLIP {c.clip_id} {_fmt(c.frame_width)} {_fmt(c.frame_height)} {c.frame_count} "
                   f"{_fmt_label(c.activity_label)}")
        for a in c.actors:
            b = a.box
            out.append(" ".join(
                ["ACTOR", str(a.frame_index), _fmt(b.x_min), _fmt(b.y_min), _fmt(b.x_max), _fmt(b.y_max),
                 _fmt_label(a.action_label)] + [_fmt(v) for v in a.feature]
            ))
    return ("\n".join(out) + "\n").encode("utf-8")


# patch extraction (bilinear crop-resize)


def extract_patch(frame, b: BoundingBox, out_h: int, out_w: int) -> np.ndarray:
    """Resample the box region of ``frame`` onto an ``out_h`` x ``out_w`` grid.

    Pixel ``(r, c)`` covers ``[c, c+1) x [r, r+1)``; sample points sit at the
    centers of the output cells.  The box is clamped to the frame first.
    Returns an array with the same number of dimensions as ``frame``.
    """
    img = np.asarray(frame, dtype=np.float64)
    if img.size == 0 or img.ndim not in (2, 3):
        raise ValueError("frame must be a non-empty 2-D or 3-D array")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    x0, x1 = np.clip([b.x_min, b.x_max], 0.0, w)
    y0, y1 = np.clip([b.y_min, b.y_max], 0.0, h)

    xs = x0 + (np.arange(out_w) + 0.5) * (x1 - x0) / out_w - 0.5
    ys = y0 + (np.arange(out_h) + 0.5) * (y1 - y0) / out_h - 0.5
    xs = np.clip(xs, 0.0, w - 1)
    ys = np.clip(ys, 0.0, h - 1)
    xl = np.floor(xs).astype(int)
    yl = np.floor(ys).astype(int)
    xh = np.minimum(xl + 1, w - 1)
    yh = np.minimum(yl + 1, h - 1)
    fx = (xs - xl)[None, :, None]
    fy = (ys - yl)[:, None, None]

    top = img[yl][:, xl] * (1 - fx) + img[yl][:, xh] * fx
    bot = img[yh][:, xl] * (1 - fx) + img[yh][:, xh] * fx
    patch = top * (1 - fy) + bot * fy
    return patch[:, :, 0] if squeeze else patch


# synthetic data


@dataclass(frozen=True)
class SynthConfig:
    n_actions: int = 3
    n_activities: int = 3
    feature_dim: int = 16
    n_clips: int = 10
    min_actors: int = 4
    max_actors: int = 8
    sigma_between: float = 5.0
    sigma_within: float = 1.0
    frame_count: int = 1
    frame_width: float = 1280.0
    frame_height: float = 720.0
    dominant_prob: float = 0.6
    group_spread: float = 40.0

    def check(self) -> None:
        counts = dict(n_actions=self.n_actions, n_activities=self.n_activities, feature_dim=self.feature_dim,
                      n_clips=self.n_clips, min_actors=self.min_actors, frame_count=self.frame_count)
        for k, v in counts.items():
            if v < 1:
                raise ValueError(f"{k} must be positive, got {v}")
        if self.max_actors < self.min_actors:
            raise ValueError("max_actors < min_actors")
        if not self.sigma_between > self.sigma_within > 0:
            raise ValueError("need sigma_between > sigma_within > 0")
        if not (self.frame_width > 0 and self.frame_height > 0 and self.group_spread >= 0):
            raise ValueError("frame size must be positive and group_spread non-negative")
        if not 0 <= self.dominant_prob <= 1:
            raise ValueError("dominant_prob must lie in [0, 1]")


def majority_label(actions: Iterable[int]) -> int:
    """Most frequent id; ties go to the lowest id."""
    counts = Counter(actions)
    if not counts:
        raise ValueError("empty action multiset")
    top = max(counts.values())
    return min(k for k, v in counts.items() if v == top)


def generate_synthetic_dataset(cfg: SynthConfig, seed: int) -> Dataset:
    """Clustered actor features with activity = majority action (mod C).

    Each clip draws a dominant action; every actor takes it with probability
    ``dominant_prob`` and a uniformly random action otherwise.  Actors stand
    around a random group center so the whole group usually falls inside the
    default distance mask.
    """
    cfg.check()
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, cfg.sigma_between, size=(cfg.n_actions, cfg.feature_dim))
    clips = []
    for c in range(cfg.n_clips):
        n = int(rng.integers(cfg.min_actors, cfg.max_actors + 1))
        dominant = int(rng.integers(cfg.n_actions))
        random_action = rng.integers(cfg.n_actions, size=n)
        take = rng.random(n) < cfg.dominant_prob
        actions = np.where(take, dominant, random_action)
        feats = centers[actions] + rng.normal(0.0, cfg.sigma_within, size=(n, cfg.feature_dim))
        gx = rng.uniform(0.2, 0.8) * cfg.frame_width
        gy = rng.uniform(0.3, 0.7) * cfg.frame_height
        pos = rng.normal(0.0, cfg.group_spread, size=(n, 2)) + (gx, gy)
        wh = rng.uniform((30.0, 80.0), (50.0, 120.0), size=(n, 2))
        frames = rng.integers(cfg.frame_count, size=n)
        actors = tuple(
            ActorInstance(
                int(frames[k]),
                BoundingBox(float(pos[k, 0] - wh[k, 0] / 2), float(pos[k, 1] - wh[k, 1] / 2),
                            float(pos[k, 0] + wh[k, 0] / 2), float(pos[k, 1] + wh[k, 1] / 2)),
                tuple(float(v) for v in feats[k]),
                int(actions[k]),
            )
            for k in range(n)
        )
        label = majority_label(int(a) for a in actions) % cfg.n_activities
        clips.append(ClipSample(f"clip{c:04d}", cfg.frame_width, cfg.frame_height, cfg.frame_count,
                                actors, label))
    return Dataset(
        tuple(clips),
        _default_names("action", cfg.n_actions),
        _default_names("activity", cfg.n_activities),
        cfg.feature_dim,
    )
