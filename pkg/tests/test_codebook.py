import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxsift.codebook import (
    BowHistogram,
    Codebook,
    histogram_distance,
    kmeans,
    match_keypoints,
    nearest_centroids,
    quantize,
    read_codebook_csv,
    read_index_json,
    write_codebook_csv,
    write_index_json,
)


def brute_nearest(x, c):
    labels, dists = [], []
    for row in x:
        best, bi = np.inf, -1
        for j, cen in enumerate(c):
            d = float(np.sum((row - cen) ** 2))
            if d < best:
                best, bi = d, j
        labels.append(bi)
        dists.append(best)
    return np.array(labels), np.array(dists)


def brute_match(a, b, ratio):
    out = []
    for i, row in enumerate(a):
        d = [float(np.sqrt(np.sum((row - v) ** 2))) for v in b]
        j1 = min(range(len(b)), key=lambda j: (d[j], j))
        j2 = min((j for j in range(len(b)) if j != j1), key=lambda j: (d[j], j))
        if d[j2] > 0 and d[j1] / d[j2] < ratio:
            out.append((i, j1, d[j1], d[j2]))
    return out


def test_k_one_is_mean(rng):
    x = rng.normal(size=(200, 5))
    cb = kmeans(x, 1, 20, seed=3)
    assert np.allclose(cb.centroids[0], x.mean(axis=0), atol=1e-12)


def test_two_clouds(rng):
    x = np.vstack([rng.normal(size=(100, 3)) * 0.1, rng.normal(size=(100, 3)) * 0.1 + 10])
    cb = kmeans(x, 2, 20, seed=0)
    centers = sorted(cb.centroids.tolist(), key=lambda c: c[0])
    assert np.allclose(centers[0], x[:100].mean(axis=0))
    assert np.allclose(centers[1], x[100:].mean(axis=0))


def test_sse_nonincreasing(rng):
    x = rng.normal(size=(2000, 16))
    cb = kmeans(x, 20, 20, seed=1)
    h = cb.sse_history
    assert len(h) == cb.iterations_run >= 2
    assert all(b <= a for a, b in zip(h, h[1:]))


def test_deterministic_across_threads(rng):
    x = rng.normal(size=(5000, 24))
    ref = kmeans(x, 30, 10, seed=5, threads=1).centroids
    for t in (2, 4):
        assert np.array_equal(kmeans(x, 30, 10, seed=5, threads=t).centroids, ref)
    assert not np.array_equal(kmeans(x, 30, 10, seed=6).centroids, ref)


def test_duplicate_points_do_not_crash():
    x = np.repeat(np.eye(3), 10, axis=0)
    cb = kmeans(x, 5, 10, seed=0)
    assert cb.k == 5
    assert np.all(np.isfinite(cb.centroids))


@pytest.mark.parametrize("k", [0, 11])
def test_k_out_of_range(k):
    with pytest.raises(ValueError):
        kmeans(np.zeros((10, 2)), k)


def test_kmeans_rejects_ragged():
    with pytest.raises(ValueError):
        kmeans([np.zeros(3), np.zeros(4)], 1)


def test_nearest_matches_brute_force(rng):
    x = rng.normal(size=(300, 8))
    c = rng.normal(size=(40, 8))
    labels, dist = nearest_centroids(x, c)
    bl, bd = brute_nearest(x, c)
    assert np.array_equal(labels, bl)
    assert np.allclose(dist, bd, rtol=1e-12, atol=1e-12)


def test_nearest_tie_goes_low():
    c = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    labels, _ = nearest_centroids(np.array([[0.0, 0.0], [2.0, 0.0]]), c)
    assert labels.tolist() == [0, 0]


def test_quantize_matches_oracle(rng):
    c = rng.normal(size=(12, 6))
    x = rng.normal(size=(70, 6))
    cb = Codebook(c, 0, 0)
    bl, _ = brute_nearest(x, c)
    raw = quantize(x, cb, "m", "raw")
    assert raw.counts.tolist() == np.bincount(bl, minlength=12).tolist()
    assert raw.counts.sum() == 70
    l1 = quantize(x, cb, "m", "L1")
    assert abs(l1.counts.sum() - 1) < 1e-12


def test_quantize_empty_and_mismatch():
    cb = Codebook(np.zeros((4, 3)), 0, 0)
    h = quantize(np.zeros((0, 3)), cb, "e")
    assert h.empty and not h.counts.any() and len(h) == 4
    with pytest.raises(ValueError):
        quantize(np.zeros((2, 5)), cb)
    with pytest.raises(ValueError):
        quantize(np.zeros((2, 3)), cb, normalization="L2")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_histogram_distance_is_a_metric(seed):
    g = np.random.default_rng(seed)
    a, b, c = (BowHistogram(str(i), g.random(9)) for i in range(3))
    assert histogram_distance(a, a) == 0
    assert histogram_distance(a, b) == histogram_distance(b, a)
    assert histogram_distance(a, c) <= histogram_distance(a, b) + histogram_distance(b, c) + 1e-12


def test_histogram_distance_errors():
    with pytest.raises(ValueError):
        histogram_distance(BowHistogram("a", np.zeros(3)), BowHistogram("b", np.zeros(4)))
    with pytest.raises(ValueError):
        histogram_distance(BowHistogram("a", np.zeros(3)), BowHistogram("b", np.zeros(3), "raw"))


def test_self_match_returns_every_keypoint(rng):
    a = rng.normal(size=(40, 10))
    m = match_keypoints(a, a)
    assert [(x.a, x.b) for x in m] == [(i, i) for i in range(40)]
    assert all(x.d1 == 0 for x in m)


def test_match_agrees_with_brute_force(rng):
    for _ in range(5):
        a = rng.normal(size=(30, 6))
        b = np.vstack([a[:10] + rng.normal(size=(10, 6)) * 0.05, rng.normal(size=(25, 6))])
        got = [(m.a, m.b, m.d1, m.d2) for m in match_keypoints(a, b, 0.8)]
        want = brute_match(a, b, 0.8)
        assert [g[:2] for g in got] == [w[:2] for w in want]
        assert np.allclose([g[2:] for g in got], [w[2:] for w in want], rtol=1e-12)
        assert len(got) >= 10


def test_match_errors():
    with pytest.raises(ValueError):
        match_keypoints(np.zeros((0, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        match_keypoints(np.zeros((2, 3)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        match_keypoints(np.zeros((2, 3)), np.zeros((3, 4)))
    # two identical nearest neighbors: d2 = 0, no match
    assert match_keypoints(np.zeros((1, 2)), np.zeros((2, 2))) == []


def test_codebook_csv_roundtrip(tmp_path, rng):
    cb = kmeans(rng.normal(size=(100, 4)), 7, 5, seed=2)
    write_codebook_csv(tmp_path / "c.csv", cb)
    back = read_codebook_csv(tmp_path / "c.csv")
    assert np.array_equal(back.centroids, cb.centroids)
    assert (back.seed, back.iterations_run) == (2, cb.iterations_run)
    (tmp_path / "bad.csv").write_text("k,D,seed,iterations\n2,2,0,1\n1,2\n")
    with pytest.raises(ValueError):
        read_codebook_csv(tmp_path / "bad.csv")


def test_index_json_roundtrip(tmp_path):
    hists = [BowHistogram("b", np.array([0.5, 0.5])), BowHistogram("a", np.array([1.0, 0.0]))]
    write_index_json(tmp_path / "i.json", hists, {"a": "x", "b": "y"}, {"digest": "abc"})
    back, labels = read_index_json(tmp_path / "i.json")
    assert [h.model_id for h in back] == ["a", "b"]
    assert labels == {"a": "x", "b": "y"}
    assert back[1].counts.tolist() == [0.5, 0.5]
