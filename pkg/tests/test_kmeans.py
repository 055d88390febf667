import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import lloyd, loop_squared_distance
from seisfacies.errors import DimensionMismatch, InvalidConfig, TooFewDistinctRows
from seisfacies.kmeans import (
    KMeansConfig,
    KMeansModel,
    assign_chunk,
    fit,
    init_centroids,
    load_model,
    predict,
    reduce_partials,
    save_model,
    squared_distance,
)
from seisfacies.store import FeatureMatrix


def f32_data(n, d, seed, spread=1.0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((n, d)) * spread).astype(np.float32).astype(np.float64)


def distinct_rows(x, k, seed):
    idx = np.random.default_rng(seed).choice(len(x), size=k, replace=False)
    return x[idx].copy()


def blobs(seed, per=60):
    rng = np.random.default_rng(seed)
    centres = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]])
    x = np.concatenate([c + rng.uniform(-1, 1, size=(per, 2)) for c in centres])
    return x.astype(np.float32).astype(np.float64), centres


def concat(labels):
    return np.concatenate(list(labels))


# --- config / distance ----------------------------------------------------


def test_config_validation():
    for bad in (dict(k=0), dict(k=2, max_iters=0), dict(k=2, tol=-1.0), dict(k=2, init_method="grid")):
        with pytest.raises(InvalidConfig):
            KMeansConfig(**bad)


def test_squared_distance_examples():
    x = np.zeros(9)
    m = np.array([3.0, 4.0] + [0.0] * 7)
    assert squared_distance(x, m) == 25.0
    assert squared_distance(m, m) == 0.0
    with pytest.raises(DimensionMismatch):
        squared_distance(np.zeros(3), np.zeros(4))


def test_squared_distance_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x, m = rng.standard_normal(9) * 10, rng.standard_normal(9) * 10
        ref = loop_squared_distance(x, m)
        assert abs(squared_distance(x, m) - ref) <= 1e-12 * ref


# --- assign / reduce ------------------------------------------------------


def test_assign_rows_on_a_centroid():
    m = np.arange(27, dtype=float).reshape(3, 9)
    p = assign_chunk(np.repeat(m[2:], 5, axis=0), m)
    assert list(p.labels) == [2] * 5
    assert p.objective == 0.0
    assert list(p.counts) == [0, 0, 5]


def test_assign_tie_goes_to_lowest_index():
    m = np.array([[-1.0, 0.0], [1.0, 0.0]])
    assert assign_chunk(np.zeros((1, 2)), m).labels[0] == 0
    assert assign_chunk(np.zeros((1, 2)), m[::-1]).labels[0] == 0


def test_assign_matches_brute_force():
    x = f32_data(300, 9, 1)
    m = distinct_rows(x, 6, 2)
    p = assign_chunk(x, m)
    dists = np.array([[loop_squared_distance(r, c) for c in m] for r in x])
    labels = np.argmin(dists, axis=1)
    assert np.array_equal(p.labels, labels)
    assert np.array_equal(p.counts, np.bincount(labels, minlength=6))
    best = dists[np.arange(300), labels]
    assert abs(p.objective - best.sum()) <= 1e-12 * best.sum()
    for j in range(6):
        ref = x[labels == j].sum(axis=0)
        assert np.allclose(p.sums[j], ref, rtol=1e-12, atol=1e-12)
    assert p.counts.sum() == 300 and p.objective >= 0


def test_reduce_k1_is_the_mean():
    x = f32_data(101, 9, 3)
    red = reduce_partials([assign_chunk(x, np.zeros((1, 9)))])
    assert np.allclose(red.centroids[0], x.mean(axis=0), rtol=1e-12, atol=1e-15)


def test_reduce_split_equals_whole():
    x = f32_data(97, 9, 4)
    m = distinct_rows(x, 4, 5)
    whole = reduce_partials([assign_chunk(x, m)])
    split = reduce_partials([assign_chunk(x[:40], m, 0), assign_chunk(x[40:], m, 40)])
    assert np.array_equal(whole.centroids, split.centroids)
    assert np.array_equal(whole.counts, split.counts)
    assert abs(whole.objective - split.objective) <= 1e-12 * whole.objective


def test_reduce_repairs_empty_cluster():
    x = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0]])
    m = np.array([[0.0, 0.0], [100.0, 100.0], [10.0, 0.0]])
    red = reduce_partials([assign_chunk(x, m)], previous=m)
    assert red.repaired == [1]
    # the farthest row from its own centroid is (0.1, 0) at distance 0.01
    assert np.array_equal(red.centroids[1], [np.float32(0.1), 0.0])
    assert list(red.counts) == [2, 0, 1]


# --- init -----------------------------------------------------------------


@pytest.mark.parametrize("method", ["kmeanspp", "random"])
def test_init_with_k_equal_to_distinct_rows(method):
    x = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0], [0.0, 1.0], [2.0, 3.0]])
    c = init_centroids(FeatureMatrix.from_array(x), KMeansConfig(k=3, init_method=method, seed=9))
    assert sorted(map(tuple, c)) == [(0.0, 1.0), (2.0, 3.0), (4.0, 5.0)]
    with pytest.raises(TooFewDistinctRows):
        init_centroids(FeatureMatrix.from_array(x), KMeansConfig(k=4, init_method=method))


@pytest.mark.parametrize("method", ["kmeanspp", "random"])
def test_init_is_seed_deterministic(method):
    m = FeatureMatrix.from_array(f32_data(500, 9, 6), chunk_rows=64)
    cfg = KMeansConfig(k=5, seed=123, init_method=method)
    assert np.array_equal(init_centroids(m, cfg), init_centroids(m, cfg))
    assert not np.array_equal(init_centroids(m, cfg), init_centroids(m, KMeansConfig(k=5, seed=124, init_method=method)))


def test_kmeanspp_covers_separated_blobs():
    for seed in range(20):
        x, centres = blobs(seed)
        c = init_centroids(FeatureMatrix.from_array(x), KMeansConfig(k=3, seed=seed))
        hit = sorted(int(np.argmin(((centres - row) ** 2).sum(axis=1))) for row in c)
        assert hit == [0, 1, 2], seed
        assert np.all(np.abs(c - centres[[int(np.argmin(((centres - r) ** 2).sum(axis=1))) for r in c]]) <= 1.0)


# --- fit ------------------------------------------------------------------


def test_k1_converges_to_mean():
    x = f32_data(400, 9, 7)
    model = fit(FeatureMatrix.from_array(x, chunk_rows=64), KMeansConfig(k=1))
    assert model.iterations_run <= 2 and model.converged
    mean = x.mean(axis=0)
    assert np.allclose(model.centroids[0], mean, rtol=1e-12, atol=1e-15)
    assert model.objective_history[-1] == pytest.approx(((x - mean) ** 2).sum(), rel=1e-9)


def test_k_equal_n_reaches_zero():
    x = f32_data(12, 3, 8)
    model = fit(FeatureMatrix.from_array(x), KMeansConfig(k=12, tol=0.0))
    assert model.objective_history[-1] == 0.0


def test_two_feature_oracle():
    x = f32_data(200, 2, 9, spread=5.0)
    init = distinct_rows(x, 3, 10)
    model = fit(FeatureMatrix.from_array(x, chunk_rows=33), KMeansConfig(k=3, tol=0.0, max_iters=50),
                initial_centroids=init, record_centroids=True)
    objectives, trail, labels = lloyd(x, init, 50)
    assert model.iterations_run == len(objectives)
    assert np.allclose(model.objective_history, objectives, rtol=1e-9, atol=0)
    assert np.array_equal(concat(predict(FeatureMatrix.from_array(x), model.centroids)), labels)
    for ours, ref in zip(model.centroid_history[1:], trail):
        assert np.max(np.abs(ours - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_max_iters_cap_and_counter():
    x = f32_data(300, 9, 11)
    model = fit(FeatureMatrix.from_array(x, chunk_rows=50), KMeansConfig(k=4, tol=0.0, max_iters=1))
    assert model.iterations_run == 1 and len(model.objective_history) == 1
    assert model.distance_evals == 300 * 4


def test_worker_count_and_chunking_are_invisible():
    x = f32_data(2000, 9, 12)
    cfg = KMeansConfig(k=6, tol=0.0, max_iters=30)
    runs = [
        fit(FeatureMatrix.from_array(x, chunk_rows=cr), cfg, workers=w, record_centroids=True)
        for cr, w in ((2000, 1), (64, 1), (64, 4), (333, 3))
    ]
    for r in runs[1:]:
        assert r.objective_history == runs[0].objective_history or np.allclose(
            r.objective_history, runs[0].objective_history, rtol=1e-12)
        assert all(np.array_equal(a, b) for a, b in zip(r.centroid_history, runs[0].centroid_history))


def test_row_permutation_leaves_objective_unchanged():
    x = f32_data(600, 9, 13)
    init = distinct_rows(x, 5, 14)
    cfg = KMeansConfig(k=5, tol=0.0, max_iters=20)
    a = fit(FeatureMatrix.from_array(x, chunk_rows=100), cfg, initial_centroids=init)
    perm = np.random.default_rng(15).permutation(600)
    b = fit(FeatureMatrix.from_array(x[perm], chunk_rows=77), cfg, initial_centroids=init)
    assert np.allclose(a.objective_history, b.objective_history, rtol=1e-9, atol=0)
    assert np.array_equal(a.centroids, b.centroids)


def test_predict_contracts():
    x = f32_data(500, 9, 16)
    store = FeatureMatrix.from_array(x, chunk_rows=70)
    model = fit(store, KMeansConfig(k=5, tol=0.0, max_iters=300))
    assert model.converged
    labels = concat(predict(store, model.centroids))
    final = concat(p.labels for p in [assign_chunk(x, model.centroids)])
    assert np.array_equal(labels, final)
    assert labels.min() >= 0 and labels.max() < 5
    assert np.array_equal(concat(predict(store, model, workers=4)), labels)
    # relabelling rows by their own centroid is the identity
    relabel = concat(predict(FeatureMatrix.from_array(model.centroids[labels]), model.centroids))
    assert np.array_equal(relabel, labels)
    single = concat(predict(FeatureMatrix.from_array(model.centroids[3:4]), model.centroids))
    assert list(single) == [3]
    with pytest.raises(DimensionMismatch):
        next(predict(store, np.zeros((5, 4))))


def test_initial_centroid_shape_checked():
    with pytest.raises(DimensionMismatch):
        fit(FeatureMatrix.from_array(np.zeros((5, 3))), KMeansConfig(k=2), initial_centroids=np.zeros((2, 4)))


@settings(max_examples=25, deadline=None)
@given(st.integers(20, 300), st.integers(1, 8), st.integers(0, 2**32 - 1), st.sampled_from(["kmeanspp", "random"]))
def test_fit_properties(n, k, seed, method):
    x = f32_data(n, 4, seed)
    if np.unique(x, axis=0).shape[0] < k:
        return
    model = fit(FeatureMatrix.from_array(x, chunk_rows=37), KMeansConfig(k=k, tol=1e-6, seed=seed, init_method=method))
    e = np.array(model.objective_history)
    assert np.all(e[1:] <= e[:-1] * (1 + 1e-9))
    assert model.distance_evals == n * k * model.iterations_run
    assert model.iterations_run <= model.config.max_iters
    assert np.isfinite(model.centroids).all()


def test_model_file_round_trip(tmp_path):
    x = f32_data(200, 9, 17)
    model = fit(FeatureMatrix.from_array(x), KMeansConfig(k=3, seed=5))
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.centroids, model.centroids)
    assert back.objective_history == model.objective_history
    assert back.config == model.config
    assert (back.iterations_run, back.distance_evals, back.converged) == (
        model.iterations_run, model.distance_evals, model.converged)
    assert KMeansModel.from_dict(model.to_dict()).n_clusters == 3
