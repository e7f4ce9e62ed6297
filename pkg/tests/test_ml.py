import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.cluster import KMeans
from sklearn.metrics import confusion_matrix, f1_score, precision_score, recall_score
from sklearn.tree import DecisionTreeRegressor

from cellopt.ml import (
    CartModel, ClusterModel, DegenerateClusterError, DivergenceError, InsufficientDataError,
    MlpConfig, MlpModel, assign, best_split, cart_fit, cart_predict, classification_metrics,
    exploratory_stats, kmeans_fit, label_clusters, minmax_scale, mlp_train, nearest_neighbors,
    smote_oversample, softmax, superior_clusters, train_test_split,
)


def blobs(seed=0, n=60):
    rng = np.random.default_rng(seed)
    a = rng.normal([0.2, 0.2], 0.03, (n, 2))
    b = rng.normal([0.8, 0.7], 0.03, (n, 2))
    return np.vstack([a, b])


# -- k-means ----------------------------------------------------------------

def test_kmeans_two_blobs_centroids_at_means():
    pts = blobs()
    m = kmeans_fit(pts, 2, seed=1)
    order = np.argsort(m.centroids[:, 0])
    assert np.allclose(m.centroids[order[0]], pts[:60].mean(axis=0))
    assert np.allclose(m.centroids[order[1]], pts[60:].mean(axis=0))


def test_kmeans_single_cluster_is_global_mean():
    pts = blobs(3)
    assert np.allclose(kmeans_fit(pts, 1).centroids[0], pts.mean(axis=0))


def test_kmeans_assignments_match_brute_force():
    rng = np.random.default_rng(5)
    pts = rng.random((300, 2))
    m = kmeans_fit(pts, 10, seed=42)
    brute = np.array([np.argmin([np.sum((p - c) ** 2) for c in m.centroids]) for p in pts])
    assert np.array_equal(m.predict(pts), brute)
    labels, d2 = assign(pts, m.centroids)
    assert np.array_equal(labels, brute)
    assert m.inertia == pytest.approx(d2.sum())


def test_kmeans_inertia_close_to_sklearn():
    rng = np.random.default_rng(11)
    pts = rng.random((500, 2))
    ours = kmeans_fit(pts, 10, seed=42).inertia
    ref = KMeans(10, n_init=10, random_state=0).fit(pts).inertia_
    # Lloyd from one k-means++ draw lands within a few percent of the best of ten
    assert ours <= ref * 1.05


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_kmeans_inertia_never_increases(seed, k):
    pts = np.random.default_rng(seed).random((80, 2))
    hist = kmeans_fit(pts, k, seed=seed).history
    assert all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))


def test_kmeans_degenerate():
    with pytest.raises(DegenerateClusterError):
        kmeans_fit(np.zeros((10, 2)), 2)


def test_kmeans_is_deterministic_and_serializable():
    pts = blobs(7)
    a, b = kmeans_fit(pts, 4, seed=9), kmeans_fit(pts, 4, seed=9)
    assert np.array_equal(a.centroids, b.centroids)
    back = ClusterModel.from_dict(json.loads(json.dumps(a.to_dict())))
    assert np.array_equal(back.predict(pts), a.predict(pts))


def test_superior_rule_uses_centroid_medians():
    m = ClusterModel(np.array([[0.9, 0.1], [0.9, 0.9], [0.1, 0.1], [0.1, 0.9], [0.5, 0.5]]), 0, 0.0, 0)
    assert superior_clusters(m).tolist() == [True, False, False, False, False]
    pts = np.array([[0.95, 0.05], [0.1, 0.85]])
    assert label_clusters(pts, m).tolist() == [1, 0]


def test_identical_points_label_all_inferior():
    m = kmeans_fit(np.full((5, 2), 0.5), 1)
    assert label_clusters(np.full((5, 2), 0.5), m).tolist() == [0] * 5


def test_superior_rows_dominate_in_centroid_order():
    rng = np.random.default_rng(2)
    pts = rng.random((400, 2))
    m = kmeans_fit(pts, 10, seed=42)
    lab = label_clusters(pts, m)
    sup = m.centroids[superior_clusters(m)]
    inf = m.centroids[~superior_clusters(m)]
    # every superior centroid beats the weakest inferior centroid on both targets
    assert np.all(sup[:, 0] > inf[:, 0].min()) and np.all(sup[:, 1] < inf[:, 1].max())
    assert 0 < lab.sum() < len(lab)


def test_minmax_scale_range_and_constant_column():
    a = np.array([[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]])
    s = minmax_scale(a)
    assert s[:, 0].tolist() == [0.0, 1.0, 0.5]
    assert np.all(s[:, 1] == 0.0)


# -- SMOTE ------------------------------------------------------------------

def imbalanced(seed=0, n_major=40, n_minor=9):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.random((n_major, 3)), rng.random((n_minor, 3)) * [1e3, 1, 1e17]])
    y = np.r_[np.zeros(n_major, int), np.ones(n_minor, int)]
    return X, y


def _on_segment(p, a, b, tol=1e-9):
    d = b - a
    scale = np.where(np.abs(d) > 0, np.abs(d), 1.0)
    t = np.where(np.abs(d) > 0, (p - a) / np.where(d == 0, 1.0, d), np.nan)
    ts = t[~np.isnan(t)]
    if ts.size == 0:
        return np.allclose(p, a)
    t0 = ts[0]
    return -tol <= t0 <= 1 + tol and np.allclose(a + t0 * d, p, rtol=0, atol=tol * scale.max())


def test_smote_balances_and_preserves_originals():
    X, y = imbalanced()
    Xo, yo, syn = smote_oversample(X, y, seed=3)
    assert np.array_equal(Xo[:len(X)], X) and np.array_equal(yo[:len(y)], y)
    counts = np.bincount(yo)
    assert abs(counts[0] - counts[1]) <= 1
    assert syn.sum() == len(Xo) - len(X) and not syn[:len(X)].any()
    assert np.all(yo[syn] == 1)


def test_smote_rows_lie_between_minority_neighbours():
    X, y = imbalanced(4)
    Xo, yo, syn = smote_oversample(X, y, seed=8)
    minority = X[y == 1]
    for p in Xo[syn]:
        assert any(_on_segment(p, minority[i], minority[j])
                   for i in range(len(minority)) for j in range(len(minority)) if i != j)


def test_smote_interpolates_extra_with_same_fraction():
    X, y = imbalanced(5)
    extra = X[:, :1] * 2 + 1  # affine in a feature, so must follow it exactly
    Xo, _, syn, Eo = smote_oversample(X, y, seed=1, extra=extra)
    assert np.allclose(Eo[syn, 0], Xo[syn, 0] * 2 + 1)


def test_smote_balanced_input_unchanged_and_errors():
    X = np.random.default_rng(0).random((10, 2))
    y = np.r_[np.zeros(5, int), np.ones(5, int)]
    Xo, yo, syn = smote_oversample(X, y)
    assert np.array_equal(Xo, X) and not syn.any()
    with pytest.raises(InsufficientDataError):
        smote_oversample(X, np.r_[np.zeros(9, int), 1])
    with pytest.raises(InsufficientDataError):
        smote_oversample(X, np.zeros(10, int))


def test_nearest_neighbors_brute_force():
    pts = np.random.default_rng(1).random((30, 2))
    nn = nearest_neighbors(pts, 3)
    for i, row in enumerate(nn):
        d = np.sum((pts - pts[i]) ** 2, axis=1)
        d[i] = np.inf
        assert set(row) == set(np.argsort(d)[:3])


# -- CART -------------------------------------------------------------------

def test_cart_constant_target_single_leaf():
    X = np.random.default_rng(0).random((20, 3))
    m = cart_fit(X, np.full(20, 4.2))
    assert m.n_leaves == 1 and np.all(m.predict(X) == 4.2)


def test_cart_step_threshold_between_adjacent_values():
    x = np.array([0.1, 0.4, 0.9, 1.3, 2.0, 2.2])
    y = np.where(x < 1.0, -1.0, 3.0)
    feature, threshold, _ = best_split(x[:, None], y)
    assert feature == 0 and 0.9 < threshold < 1.3
    m = cart_fit(x[:, None], y)
    assert m.n_leaves == 2


def test_cart_pure_leaves_on_unique_grid():
    g = np.array(np.meshgrid(np.arange(5.0), np.arange(4.0), np.arange(3.0))).reshape(3, -1).T
    y = np.sin(g[:, 0]) + g[:, 1] ** 2 - g[:, 2]
    m = cart_fit(g, y)
    assert np.array_equal(cart_predict(m, g), y)


def test_cart_training_predictions_match_sklearn():
    rng = np.random.default_rng(3)
    X = rng.random((200, 4))
    y = X[:, 0] * 3 + np.sin(5 * X[:, 1]) + rng.normal(0, 0.1, 200)
    ours = cart_fit(X, y, min_samples_leaf=5, max_depth=6)
    ref = DecisionTreeRegressor(min_samples_leaf=5, max_depth=6, random_state=0).fit(X, y)
    assert np.allclose(ours.predict(X), ref.predict(X))


def test_cart_min_samples_leaf_respected_and_json(tmp_path):
    rng = np.random.default_rng(4)
    X = rng.random((100, 2))
    y = rng.random(100)
    m = cart_fit(X, y, min_samples_leaf=7)
    leaves = m.feature < 0
    assert np.all(m.n_samples[leaves] >= 7)
    path = tmp_path / "tree.json"
    m.save(path)
    back = CartModel.load(path)
    assert np.array_equal(back.predict(X), m.predict(X))
    root = json.loads(path.read_text())["tree"]
    assert {"feature", "threshold", "left", "right"} <= set(root)


# -- MLP --------------------------------------------------------------------

def separable(seed=0, n=200):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 4))
    w = np.array([1.0, -2.0, 0.5, 1.5])
    score = (X - 0.5) @ w
    keep = np.abs(score) > 0.1  # margin
    return X[keep], (score[keep] > 0).astype(int)


def test_mlp_separable_reaches_full_train_accuracy():
    X, y = separable()
    m = mlp_train(X, y, config=MlpConfig(epochs=100), seed=42)
    assert np.mean(m.predict(X) == y) == 1.0


def test_mlp_softmax_rows_sum_to_one_and_shapes_chain():
    X, y = separable(1)
    m = mlp_train(X, y, config=MlpConfig(epochs=3), seed=1)
    out = m.forward(X)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)
    assert m.layer_sizes == [4, 64, 32, 16, 2]
    for w, nxt in zip(m.weights, m.weights[1:]):
        assert w.shape[1] == nxt.shape[0]


def test_softmax_stable_for_large_logits():
    z = np.array([[1000.0, 0.0], [-1000.0, 1000.0]])
    s = softmax(z)
    assert np.all(np.isfinite(s)) and np.allclose(s.sum(axis=1), 1.0)


def test_mlp_zero_epochs_is_initialization():
    X, y = separable(2)
    m0 = mlp_train(X, y, config=MlpConfig(epochs=0), seed=5)
    m1 = mlp_train(X, y, config=MlpConfig(epochs=0), seed=5)
    assert m0.loss_history == []
    assert all(np.array_equal(a, b) for a, b in zip(m0.weights, m1.weights))
    # He-uniform bounds per layer
    for w in m0.weights:
        assert np.max(np.abs(w)) <= np.sqrt(6.0 / w.shape[0])


def test_mlp_is_deterministic_and_round_trips(tmp_path):
    X, y = separable(3)
    cfg = MlpConfig(epochs=5)
    a, b = mlp_train(X, y, config=cfg, seed=9), mlp_train(X, y, config=cfg, seed=9)
    assert a.loss_history == b.loss_history
    path = tmp_path / "mlp.json"
    a.save(path)
    back = MlpModel.load(path)
    assert np.allclose(back.forward(X), a.forward(X), rtol=0, atol=1e-15)


def test_mlp_regression_learns_linear_map():
    rng = np.random.default_rng(0)
    X = rng.random((400, 4))
    y = X @ [1.0, 2.0, -1.0, 0.5]
    m = mlp_train(X, y, task="regress", config=MlpConfig(epochs=60), seed=0)
    assert np.sqrt(np.mean((m.predict(X).ravel() - y) ** 2)) < 0.05 * np.std(y)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_mlp_divergence_reports_epoch():
    X, y = separable(4)
    with pytest.raises(DivergenceError) as err:
        mlp_train(X, y * 1e200, task="regress", config=MlpConfig(epochs=3), seed=0)
    assert err.value.epoch == 0


def test_train_test_split_keeps_synthetic_in_train():
    syn = np.zeros(100, bool)
    syn[60:] = True
    labels = np.r_[np.zeros(45, int), np.ones(55, int)]
    train, test = train_test_split(100, 0.2, seed=1, synthetic=syn, stratify=labels)
    assert not syn[test].any()
    assert set(train) | set(test) == set(range(100)) and not set(train) & set(test)
    assert len(test) == round(0.2 * 45) + round(0.2 * 15)


# -- metrics ----------------------------------------------------------------

def test_metrics_all_correct_and_all_negative():
    t = np.array([1, 0, 1, 1, 0])
    r = classification_metrics(t, t)
    assert (r.precision, r.recall, r.f1, r.accuracy) == (1.0, 1.0, 1.0, 1.0)
    assert r.confusion[0, 1] == 0 and r.confusion[1, 0] == 0
    assert classification_metrics(np.zeros(5, int), t).recall == 0.0


def test_metrics_hand_tally_and_sklearn():
    rng = np.random.default_rng(6)
    pred, truth = rng.integers(0, 2, 20), rng.integers(0, 2, 20)
    tp = sum(1 for p, t in zip(pred, truth) if p == 1 and t == 1)
    tn = sum(1 for p, t in zip(pred, truth) if p == 0 and t == 0)
    fp = sum(1 for p, t in zip(pred, truth) if p == 1 and t == 0)
    fn = sum(1 for p, t in zip(pred, truth) if p == 0 and t == 1)
    r = classification_metrics(pred, truth)
    assert r.confusion.tolist() == [[tn, fp], [fn, tp]]
    assert np.array_equal(r.confusion, confusion_matrix(truth, pred))
    assert r.accuracy == (tp + tn) / 20
    assert r.precision == pytest.approx(precision_score(truth, pred))
    assert r.recall == pytest.approx(recall_score(truth, pred))
    assert r.f1 == pytest.approx(f1_score(truth, pred))
    assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))


def test_metrics_reject_empty():
    with pytest.raises(ValueError):
        classification_metrics([], [])


def test_exploratory_stats_identities():
    rng = np.random.default_rng(0)
    F = rng.random((50, 3))
    T = np.column_stack([F[:, 0] * 2 + rng.normal(0, 0.01, 50), np.full(50, 1.0)])
    s = exploratory_stats(F, T, ["a", "b", "c"], ["t", "flat"])
    assert np.allclose(np.diag(s.correlation)[:4], 1.0)
    assert s.undefined == ["flat"]
    assert np.isnan(s.correlation[4]).all()
    assert s.pca_ratio.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.diff(s.pca_ratio) <= 0)
    assert np.allclose(s.correlation[:4, :4], np.corrcoef(np.column_stack([F, T[:, 0]]).T))
    q = s.boxplot["t"]
    assert q["median"] == pytest.approx(np.median(T[:, 0]))
    json.dumps(s.to_dict())
