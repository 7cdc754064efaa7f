"""Static SVG overlays of predicted actions and group activity."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

from .data import ClipSample
from .model import Prediction

PALETTE = (
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
    "#42d4f4", "#f032e6", "#9a6324", "#800000", "#000075",
)


def _num(v: float) -> str:
    return repr(float(v))


def render_svg(clip: ClipSample, pred: Prediction, action_names: Sequence[str] | None = None,
               activity_names: Sequence[str] | None = None) -> str:
    """One rectangle and label per actor plus an activity caption at the top."""
    n = clip.n_actors
    if len(pred.action_classes) != n:
        raise ValueError(f"prediction has {len(pred.action_classes)} actors, clip {clip.clip_id} has {n}")

    def act_name(k: int) -> str:
        return action_names[k] if action_names else f"action{k}"

    grp = pred.activity_class
    caption = activity_names[grp] if activity_names else f"activity{grp}"
    w, h = clip.frame_width, clip.frame_height
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_num(w)}" height="{_num(h)}" '
        f'viewBox="0 0 {_num(w)} {_num(h)}">',
        f"<title>{escape(clip.clip_id)}</title>",
    ]
    for actor, k in zip(clip.actors, pred.action_classes):
        b = actor.box
        color = PALETTE[int(k) % len(PALETTE)]
        out.append(
            f'<rect x="{_num(b.x_min)}" y="{_num(b.y_min)}" width="{_num(b.width)}" height="{_num(b.height)}" '
            f'fill="none" stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{_num(b.x_min)}" y="{_num(b.y_min)}" fill="{color}" font-size="14" '
            f'font-family="sans-serif">{escape(act_name(int(k)))}</text>'
        )
    out.append(
        f'<text x="{_num(w / 2)}" y="20" text-anchor="middle" font-size="18" font-family="sans-serif" '
        f'fill="black" class="activity">{escape(caption)}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
