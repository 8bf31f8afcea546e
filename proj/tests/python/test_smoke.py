import os
import pathlib

import numpy as np
import pytest

import rrf

FIXTURES = pathlib.Path(os.environ.get("RRF_FIXTURE_DIR", pathlib.Path(__file__).parents[1] / "fixtures"))


def test_layouts():
    assert len(rrf.layout_patches(corner_exclusion=False)) == 49
    l33 = rrf.layout_patches(corner_exclusion=True)
    assert len(l33) == 33
    assert l33.fingerprint == 0xA7CA560E8C6794EB
    five = rrf.layout_patches(112, 112, 56, 56, 28, True)
    assert five.positions == [(28, 0), (0, 28), (28, 28), (56, 28), (28, 56)]
    assert rrf.mirror_map(rrf.layout_patches())[1] == 28
    plan = rrf.shape_plan("rrfnet", 1, l33)
    assert plan["blocks"][-1] == (33, 4, 4, 512)
    assert plan["mean"] == (1, 512)


def test_similarity_matches_numpy():
    rng = np.random.default_rng(0)
    fa, fb = rng.normal(size=(33, 16)), rng.normal(size=(33, 16))
    a, b = rrf.EmbeddingSet(fa, 1, "a"), rrf.EmbeddingSet(fb, 1, "b")
    ma, mb = fa.mean(axis=0), fb.mean(axis=0)
    expected = ma @ mb / np.linalg.norm(ma) / np.linalg.norm(mb)
    assert rrf.rrfnet_similarity(a, b) == pytest.approx(expected, rel=1e-12)
    score, contributions = rrf.rrfnet_breakdown(a, b)
    assert contributions.shape == (33, 33)
    assert score == pytest.approx(expected, rel=1e-12)
    assert contributions.sum() == pytest.approx(score, rel=1e-12)
    assert rrf.heatmap(a, b, "a") == pytest.approx(contributions.sum(axis=1))

    model = rrf.FusionModel(np.full(33, 1 / 33), 0.5)
    logit, local, terms = rrf.region_similarity(a, b, model)
    cos = (fa * fb).sum(axis=1) / np.linalg.norm(fa, axis=1) / np.linalg.norm(fb, axis=1)
    assert local == pytest.approx(cos, rel=1e-12)
    assert logit == pytest.approx(cos.mean() + 0.5, rel=1e-12)


def test_threshold_and_cross_validation():
    t, acc = rrf.best_threshold([0.1, 0.1, 0.9, 0.9], [0, 0, 1, 1])
    assert acc == 1.0 and 0.1 < t < 0.9
    labels = [i % 2 for i in range(100)]
    folds = [(i // 2) % 10 for i in range(100)]
    report = rrf.cross_validate([float(y) for y in labels], labels, folds)
    assert report["mean_accuracy"] == 1.0
    assert len(report["folds"]) == 10


def test_fit_fusion_prefers_the_informative_column():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 2, size=400)
    features = np.column_stack([labels + 0.3 * rng.normal(size=400), rng.normal(size=400)])
    model = rrf.fit_fusion(features, labels.tolist())
    assert model.converged
    assert model.weights[0] > 5 * abs(model.weights[1])


def test_rrfe_fixtures_and_round_trip(tmp_path):
    s = rrf.read_embeddings(FIXTURES / "k33_d4.rrfe")
    assert s.image_id == "k33_d4"
    assert s.values.shape == (33, 4)
    np.testing.assert_array_equal(s.values[:, 0], np.arange(33))
    data = (FIXTURES / "k1_d2.rrfe").read_bytes()
    assert data[24:] == bytes([0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x80, 0xBF])
    one = rrf.decode_embeddings(data)
    assert rrf.encode_embeddings(one) == data

    rng = np.random.default_rng(2)
    values = rng.normal(size=(5, 7)).astype(np.float32).astype(np.float64)
    written = rrf.EmbeddingSet(values, 123, "x")
    rrf.write_embeddings(written, tmp_path / "x.rrfe")
    assert rrf.read_embeddings(tmp_path / "x.rrfe", 123) == written


def test_errors_carry_their_kind():
    with pytest.raises(rrf.RRFError) as err:
        rrf.EmbeddingSet(np.zeros((2, 3)), 0)
    assert err.value.kind == "degenerate_embedding"
    l33 = rrf.layout_patches(corner_exclusion=True)
    with pytest.raises(rrf.RRFError) as err:
        rrf.read_embeddings(FIXTURES / "k33_d4.rrfe", rrf.layout_patches().fingerprint)
    assert err.value.kind == "layout_incompatible"
    assert l33.fingerprint != rrf.layout_patches().fingerprint
    with pytest.raises(rrf.RRFError):
        rrf.layout_patches(112, 112, 30, 30, 14)
