import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from actor_graph.relation import (
    RelationMode,
    RelationParams,
    appearance_dot,
    appearance_ncc,
    appearance_sad,
    appearance_scores,
    build_multi_graph,
    build_relation_graph,
    position_mask,
    sad,
)
from conftest import clip_from, random_clip


def dot_params(rng, d, d_k, **kw):
    return RelationParams(d_k=d_k, w_theta=rng.normal(size=(d_k, d)), b_theta=rng.normal(size=d_k),
                          w_phi=rng.normal(size=(d_k, d)), b_phi=rng.normal(size=d_k), **kw)


def test_dot_identity_maps():
    p = RelationParams(d_k=2, w_theta=np.eye(2), b_theta=np.zeros(2), w_phi=np.eye(2), b_phi=np.zeros(2))
    assert appearance_dot([1, 0], [1, 0], p) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert appearance_dot([0, 0], [3, 4], p) == 0.0


def test_dot_padded_embedding():
    pad = np.vstack([np.eye(2), np.zeros((2, 2))])
    p = RelationParams(d_k=4, w_theta=pad, b_theta=np.zeros(4), w_phi=pad, b_phi=np.zeros(4))
    want = oracle.dot([1, 0], [1, 0], pad.tolist(), [0] * 4, pad.tolist(), [0] * 4, 4)
    assert want == 0.5
    assert appearance_dot([1, 0], [1, 0], p) == pytest.approx(want, abs=1e-15)


def test_dot_shape_error(rng):
    with pytest.raises(ValueError):
        appearance_dot([1, 2, 3], [1, 2, 3], dot_params(rng, 2, 3))


def test_ncc_examples():
    assert appearance_ncc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert appearance_ncc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert appearance_ncc([1, 2, 3], [5, 5, 5]) == 0.0
    assert appearance_ncc([0.1, 0.1, 0.1], [1, 2, 3]) == 0.0
    with pytest.raises(ValueError):
        appearance_ncc([1], [2])


def test_ncc_uncentered_is_cosine():
    assert appearance_ncc([1, 0], [1, 1], centered=False) == pytest.approx(1 / math.sqrt(2))
    assert appearance_ncc([1, 1], [2, 2], centered=False) == pytest.approx(1.0)


def test_sad_examples(rng):
    assert appearance_sad([1, 2, 3], [1, 2, 3]) == 0.0
    assert appearance_sad([1, 2, 3], [2, 2, 5]) == -1.0
    for _ in range(20):
        a, b = rng.normal(size=(2, 6))
        assert appearance_sad(a, b) == appearance_sad(b, a)
        assert appearance_sad(a, b) < 0
    with pytest.raises(ValueError):
        sad([1, 2], [1, 2, 3])


def test_position_mask_examples():
    m = position_mask([(0, 0), (3, 4)], 6)
    assert m.tolist() == [[1, 1], [1, 1]]
    assert position_mask([(0, 0), (3, 4)], 4).tolist() == [[1, 0], [0, 1]]
    assert position_mask([(0, 0), (3, 4)], 5).tolist() == [[1, 1], [1, 1]]  # inclusive
    assert position_mask([(7, 7)], 1).tolist() == [[1]]
    assert position_mask([(0, 0), (1, 0)], 5, frames=[0, 1]).tolist() == [[1, 0], [0, 1]]
    with pytest.raises(ValueError):
        position_mask([(0, 0)], 0)


@pytest.mark.parametrize("mode", list(RelationMode))
def test_two_identical_actors(mode, rng):
    clip = clip_from([(10, 10), (12, 10)], [[1.0, 2.0, 0.5]] * 2)
    p = dot_params(rng, 3, 4) if mode is RelationMode.DOT else RelationParams()
    g = build_relation_graph(clip, mode, p).G
    np.testing.assert_allclose(g, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


@pytest.mark.parametrize("mode", list(RelationMode))
def test_far_apart_gives_identity(mode, rng):
    clip = clip_from([(0, 0), (90, 0)], rng.normal(size=(2, 3)))
    p = dot_params(rng, 3, 4) if mode is RelationMode.DOT else RelationParams()
    assert np.array_equal(build_relation_graph(clip, mode, p).G, np.eye(2))


def test_injected_scores_match_oracle():
    clip = clip_from([(0, 0), (1, 0), (0, 1)], np.zeros((3, 2)))
    scores = np.array([[0, math.log(2), math.log(3)]] * 3)
    g = build_relation_graph(clip, RelationMode.SAD, RelationParams(), scores=scores).G
    want = oracle.graph([[0], [1], [2]], [(0, 0), (1, 0), (0, 1)], 20.0, lambda a, b: math.log(b[0] + 1))
    np.testing.assert_allclose(g, want, atol=1e-15)
    np.testing.assert_allclose(g[0], [1 / 6, 2 / 6, 3 / 6], atol=1e-15)


def test_mu_rules():
    assert RelationParams().mu(500) == 100
    assert RelationParams(mu_fraction=None, mu_pixels=30).mu(500) == 30
    with pytest.raises(ValueError):
        RelationParams(mu_fraction=0)
    with pytest.raises(ValueError):
        RelationParams(mu_fraction=0.2, mu_pixels=3)
    with pytest.raises(ValueError):
        RelationParams(d_k=0)


def test_same_frame_switch(rng):
    clip = clip_from([(0, 0), (1, 1), (2, 0)], rng.normal(size=(3, 3)), frames=[0, 1, 0])
    g = build_relation_graph(clip, RelationMode.SAD, RelationParams(same_frame_only=True)).G
    assert g[0, 1] == 0 and g[1, 0] == 0 and g[1, 1] == 1 and g[0, 2] > 0
    g_all = build_relation_graph(clip, RelationMode.SAD, RelationParams()).G
    assert g_all[0, 1] > 0


def test_multi_graph(rng):
    clip = random_clip(rng, 6, 5)
    p = dot_params(rng, 5, 4, mu_fraction=1.0)
    single = build_multi_graph(clip, [(RelationMode.DOT, p)])
    assert len(single) == 1 and np.array_equal(single[0].G, build_relation_graph(clip, "dot", p).G)
    a, b = build_multi_graph(clip, [(RelationMode.DOT, p), (RelationMode.DOT, p)])
    assert np.array_equal(a.G, b.G)
    a, b = build_multi_graph(clip, [(RelationMode.DOT, p), (RelationMode.DOT, dot_params(rng, 5, 4, mu_fraction=1.0))])
    assert np.abs(a.G - b.G).max() > 0
    with pytest.raises(ValueError):
        build_multi_graph(clip, [])


@given(st.floats(0.01, 100), st.floats(-100, 100), st.integers(0, 10_000))
@settings(max_examples=200)
def test_ncc_affine_invariance(alpha, beta, seed):
    x, y = np.random.default_rng(seed).normal(size=(2, 8))
    r = appearance_ncc(x, y)
    assert -1 <= r <= 1
    assert appearance_ncc(alpha * x + beta, y) == pytest.approx(r, abs=1e-7)
    assert appearance_ncc(-alpha * x + beta, y) == pytest.approx(-r, abs=1e-7)


def test_scores_match_scalar_kernels(rng):
    x = rng.normal(size=(5, 4))
    p = dot_params(rng, 4, 3)
    s = {m: appearance_scores(x, m, p) for m in RelationMode}
    for i in range(5):
        for j in range(5):
            assert s[RelationMode.DOT][i, j] == pytest.approx(appearance_dot(x[i], x[j], p), abs=1e-12)
            assert s[RelationMode.NCC][i, j] == pytest.approx(appearance_ncc(x[i], x[j]), abs=1e-12)
            assert s[RelationMode.SAD][i, j] == pytest.approx(appearance_sad(x[i], x[j]), abs=1e-12)


@pytest.mark.parametrize("mode", list(RelationMode))
def test_row_shift_of_scores_leaves_graph(mode, rng):
    clip = random_clip(rng, 6, 4)
    p = RelationParams(mu_fraction=0.5)
    s = rng.normal(size=(6, 6))
    g = build_relation_graph(clip, mode, p, scores=s).G
    shifted = build_relation_graph(clip, mode, p, scores=s + rng.normal(size=(6, 1)) * 10).G
    np.testing.assert_allclose(g, shifted, atol=1e-12)
