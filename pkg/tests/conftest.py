import numpy as np
import pytest

from actor_graph.data import ActorInstance, BoundingBox, ClipSample


def random_clip(rng, n, d, width=200.0, height=150.0, frames=1, labels=True, n_actions=3, n_activities=2):
    actors = []
    for _ in range(n):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        w, h = rng.uniform(5, 30, size=2)
        actors.append(ActorInstance(
            int(rng.integers(frames)),
            BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
            tuple(float(v) for v in rng.normal(size=d)),
            int(rng.integers(n_actions)) if labels else None,
        ))
    return ClipSample("c", width, height, frames, tuple(actors),
                      int(rng.integers(n_activities)) if labels else None)


def clip_from(centers, feats, width=100.0, frames=None):
    actors = []
    for k, ((cx, cy), f) in enumerate(zip(centers, feats)):
        fi = 0 if frames is None else frames[k]
        actors.append(ActorInstance(fi, BoundingBox(cx - 1, cy - 1, cx + 1, cy + 1), tuple(map(float, f)), 0))
    t = 1 if frames is None else max(frames) + 1
    return ClipSample("c", width, width, t, tuple(actors), 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
