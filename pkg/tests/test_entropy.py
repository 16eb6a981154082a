import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from luq.entropy import (
    GridTooSmallError,
    assign,
    empirical_distribution,
    entropy_order,
    kendall_distance,
    kmeans_fit,
    kneedle_elbow,
    layer_entropy,
    layer_entropy_profile,
    pool_tokens,
    rank_stability_curve,
    shannon_entropy,
)


def pair_count_distance(a, b):
    """Discordant pairs by direct enumeration over item pairs."""
    pa = {v: i for i, v in enumerate(a)}
    pb = {v: i for i, v in enumerate(b)}
    bad = sum((pa[x] - pa[y]) * (pb[x] - pb[y]) < 0 for x, y in itertools.combinations(a, 2))
    return bad / math.comb(len(a), 2)


def test_pool_tokens():
    acts = [np.arange(2 * 8 * 16, dtype=np.float32).reshape(2, 8, 16)]
    X = pool_tokens(acts, 0)
    assert X.shape == (16, 16)
    np.testing.assert_array_equal(X.reshape(2, 8, 16), acts[0])


def test_kmeans_k1_is_mean():
    X = np.random.default_rng(0).standard_normal((50, 3))
    m = kmeans_fit(X, 1, seed=0)
    np.testing.assert_allclose(m.centroids[0], X.mean(axis=0), atol=1e-6)


def test_kmeans_two_blobs():
    rng = np.random.default_rng(1)
    e1 = np.zeros(4)
    e1[0] = 10
    X = np.concatenate([e1 + 0.1 * rng.standard_normal((100, 4)), -e1 + 0.1 * rng.standard_normal((100, 4))])
    m = kmeans_fit(X, 2, seed=0)
    means = np.stack([X[:100].mean(0), X[100:].mean(0)])
    C = m.centroids[np.argsort(-m.centroids[:, 0])]
    np.testing.assert_allclose(C, means, atol=0.1)


def test_kmeans_k_equals_m():
    X = np.random.default_rng(2).standard_normal((12, 3))
    assert kmeans_fit(X, 12, seed=0).inertia == pytest.approx(0.0, abs=1e-12)


def test_kmeans_needs_enough_tokens():
    with pytest.raises(ValueError):
        kmeans_fit(np.zeros((3, 2)), 4)


def test_kmeans_inertia_non_increasing_and_deterministic():
    X = np.random.default_rng(3).standard_normal((300, 5))
    m = kmeans_fit(X, 8, seed=4)
    assert all(b <= a + 1e-9 for a, b in zip(m.inertia_trace, m.inertia_trace[1:]))
    assert np.array_equal(m.centroids, kmeans_fit(X, 8, seed=4).centroids)


def test_assign_exact_and_ties():
    C = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [3.0, 3.0], [-1.0, 0.0]])
    assert assign(C, C[3:4])[0] == 3
    # (0,0) sits at distance 1 from centroids 1 and 4, but centroid 0 is closer
    assert assign(C[[1, 4]], np.array([[0.0, 0.0]]))[0] == 0


def test_assign_matches_brute_force():
    rng = np.random.default_rng(5)
    X, C = rng.standard_normal((200, 6)), rng.standard_normal((17, 6))
    brute = [min(range(17), key=lambda k: float(np.sum((x - C[k]) ** 2))) for x in X]
    assert assign(C, X).tolist() == brute


def test_empirical_distribution():
    np.testing.assert_array_equal(empirical_distribution([0, 0, 1, 1], 2), [0.5, 0.5])
    np.testing.assert_array_equal(empirical_distribution([2] * 4, 5), [0, 0, 1, 0, 0])
    ids = np.random.default_rng(0).integers(0, 9, 1000)
    hist = np.array([sum(1 for i in ids if i == k) for k in range(9)]) / 1000
    np.testing.assert_array_equal(empirical_distribution(ids, 9), hist)
    with pytest.raises(ValueError):
        empirical_distribution([], 3)


def test_shannon_entropy_values():
    assert shannon_entropy([1.0]) == 0.0
    assert abs(shannon_entropy([0.5, 0.5]) - math.log(2)) < 1e-12
    assert abs(shannon_entropy(np.full(100, 0.01)) - math.log(100)) < 1e-9
    with pytest.raises(ValueError):
        shannon_entropy([1.2, -0.2])
    with pytest.raises(ValueError):
        shannon_entropy([0.5, 0.6])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=30).filter(lambda v: sum(v) > 0.1))
def test_entropy_bounds_and_permutation(v):
    P = np.array(v) / sum(v)
    H = shannon_entropy(P)
    assert -1e-12 <= H <= math.log(len(P)) + 1e-12
    assert shannon_entropy(P[::-1]) == pytest.approx(H, abs=1e-12)


def test_merging_clusters_never_raises_entropy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        P = rng.dirichlet(np.ones(10))
        a, b = np.argsort(P)[:2]
        merged = np.delete(P, b)
        merged[a if a < b else a - 1] += P[b]
        assert shannon_entropy(merged) <= shannon_entropy(P) + 1e-12


def test_entropy_order():
    assert entropy_order([3.0, 1.0, 2.0]) == [2, 3, 1]
    assert entropy_order([1.0] * 4) == [1, 2, 3, 4]
    H = np.random.default_rng(0).standard_normal(12)
    assert entropy_order(H) == [i + 1 for i in sorted(range(12), key=lambda i: (H[i], i))]
    assert entropy_order(np.exp(H)) == entropy_order(H)


def test_identical_layers_tie_break():
    X = np.random.default_rng(0).standard_normal((4, 10, 3)).astype(np.float32)
    prof = layer_entropy_profile([X, X, X], 5, seed=0)
    assert len(set(prof.H.tolist())) == 1 and prof.pi == [1, 2, 3]


def histogram_entropy(ids, K):
    counts = [0] * K
    for i in ids:
        counts[i] += 1
    p = np.array([c / len(ids) for c in counts if c])
    return float(-np.sum(p * np.log(p)))


def test_layer_entropy_matches_counting_oracle():
    X = np.random.default_rng(1).standard_normal((400, 4))
    ids = assign(kmeans_fit(X, 7, seed=0), X).tolist()
    assert layer_entropy(X, 7, seed=0) == histogram_entropy(ids, 7)


def test_kendall_examples():
    assert kendall_distance([1, 2, 3, 4], [1, 2, 3, 4]) == 0.0
    assert kendall_distance([1, 2, 3, 4], [4, 3, 2, 1]) == 1.0
    assert kendall_distance([1, 2, 3, 4], [2, 1, 3, 4]) == pytest.approx(1 / 6)
    with pytest.raises(ValueError):
        kendall_distance([1, 2, 3], [1, 2])


def test_kendall_metric_properties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 8))
        a, b, c = (rng.permutation(n) + 1 for _ in range(3))
        dab, dba = kendall_distance(a, b), kendall_distance(b, a)
        assert dab == dba == pair_count_distance(list(a), list(b))
        assert (dab == 0) == np.array_equal(a, b)
        assert dab <= kendall_distance(a, c) + kendall_distance(c, b) + 1e-12


def test_kneedle_examples():
    xs = [10, 20, 30, 40, 50, 60]
    assert kneedle_elbow(xs, [1.0, 0.45, 0.20, 0.12, 0.10, 0.09]) == (30, True)
    assert kneedle_elbow(xs, [6, 5, 4, 3, 2, 1]) == (60, False)
    assert kneedle_elbow(xs, [2.0] * 6) == (60, False)
    with pytest.raises(GridTooSmallError):
        kneedle_elbow([1, 2], [1, 0])


def test_stability_two_distinct_tokens():
    a = np.array([[0.0, 1.0]] * 5 + [[3.0, -1.0]] * 7)
    acts = [a.reshape(1, 12, 2), (2 * a).reshape(1, 12, 2), a[::-1].copy().reshape(1, 12, 2)]
    curve = rank_stability_curve(acts, [2, 4, 8], seed=0)
    assert curve.distances == [0.0, 0.0]
    assert not curve.knee_found and curve.selected_K in (2, 4, 8)


def test_stability_grid_too_small():
    acts = [np.random.default_rng(0).standard_normal((1, 20, 2))] * 2
    with pytest.raises(GridTooSmallError, match="grid too small"):
        rank_stability_curve(acts, [4], seed=0)


def test_stability_selects_a_grid_member(small_stack):
    from luq.net import capture_activations
    from luq.synth import gaussian_inputs
    acts = capture_activations(small_stack, gaussian_inputs(8, 16, 16, seed=0))
    grid = [10, 20, 30, 40, 50]
    curve = rank_stability_curve(acts, grid, seed=0)
    assert curve.selected_K in grid
    assert all(0.0 <= d <= 1.0 for d in curve.distances)
    if curve.knee_found:
        assert kneedle_elbow(grid[1:], curve.distances)[0] == curve.selected_K
