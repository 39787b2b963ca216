import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from omicsmkl.data import (DataError, OmicsView, anova_f_scores, anova_f_select,
                           complementary_views, load_views, planted_biomarker, save_dataset,
                           stratified_kfold, stratified_split, synthetic_multiview,
                           write_label_csv, write_view_csv)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def _view_csv(tmp_path, name, ids, ncol=2, seed=0):
    rng = np.random.default_rng(seed)
    rows = ["sample_id," + ",".join(f"g{j}" for j in range(ncol))]
    for s in ids:
        rows.append(s + "," + ",".join(f"{v:.6f}" for v in rng.standard_normal(ncol)))
    return _write(tmp_path / f"{name}.csv", "\n".join(rows) + "\n")


def _labels_csv(tmp_path, mapping):
    rows = ["sample_id,label"] + [f"{k},{v}" for k, v in mapping.items()]
    return _write(tmp_path / "labels.csv", "\n".join(rows) + "\n")


class TestLoadViews:
    def test_identity_alignment(self, tmp_path):
        ids = ["a", "b", "c", "d"]
        paths = [_view_csv(tmp_path, f"v{m}", ids, seed=m) for m in range(3)]
        lab = _labels_csv(tmp_path, dict(zip(ids, ["x", "y", "x", "y"])))
        ds = load_views(paths, lab)
        assert ds.n_samples == 4
        assert len(ds.views) == 3
        assert ds.class_names == ("x", "y")
        np.testing.assert_array_equal(ds.labels, [0, 1, 0, 1])

    def test_intersection(self, tmp_path):
        p1 = _view_csv(tmp_path, "v1", ["s3", "s1", "s2"])
        p2 = _view_csv(tmp_path, "v2", ["s2", "s1"])
        lab = _labels_csv(tmp_path, {"s1": "a", "s2": "b", "s3": "a"})
        ds = load_views([p1, p2], lab)
        assert ds.samples == ("s1", "s2")
        # rows follow the aligned order in every view
        raw = np.loadtxt(p1, delimiter=",", skiprows=1, usecols=(1, 2))
        np.testing.assert_array_equal(ds.views[0].values, raw[[1, 2]])

    def test_unlabeled_sample(self, tmp_path):
        p = _view_csv(tmp_path, "v1", ["s1", "s2"])
        lab = _labels_csv(tmp_path, {"s2": "a"})
        with pytest.raises(DataError, match="unlabeled sample"):
            load_views([p], lab)

    def test_crlf_and_label_order(self, tmp_path):
        p = _write(tmp_path / "v.csv", "sample_id,f1\r\nb,1.5\r\na,2\r\n")
        lab = _labels_csv(tmp_path, {"a": "late", "b": "early"})
        ds = load_views([p], lab)
        assert ds.samples == ("a", "b")
        assert ds.class_names == ("late", "early")
        np.testing.assert_array_equal(ds.views[0].values[:, 0], [2.0, 1.5])

    @pytest.mark.parametrize("body,msg", [
        ("sample_id,f1\na,1\na,2\n", "duplicate"),
        ("sample_id,f1\na,x\n", "non-numeric"),
        ("sample_id,f1\na,nan\n", "non-finite"),
        ("sample_id,f1\na,inf\n", "non-finite"),
        ("sample_id,f1\na,1,2\n", "expected 2 cells"),
        ("id,f1\na,1\n", "header"),
        ("sample_id,f1\na,1_000\n", "non-numeric"),
    ])
    def test_malformed(self, tmp_path, body, msg):
        p = _write(tmp_path / "v.csv", body)
        lab = _labels_csv(tmp_path, {"a": "x"})
        with pytest.raises(DataError, match=msg):
            load_views([p], lab)

    def test_empty_intersection(self, tmp_path):
        p1 = _view_csv(tmp_path, "v1", ["a", "b"])
        p2 = _view_csv(tmp_path, "v2", ["c", "d"])
        lab = _labels_csv(tmp_path, {k: "x" for k in "abcd"})
        with pytest.raises(DataError, match="empty intersection"):
            load_views([p1, p2], lab)

    def test_round_trip(self, tmp_path):
        ids = [f"s{i}" for i in range(7)]
        paths = [_view_csv(tmp_path, f"v{m}", ids[::-1], ncol=3, seed=m) for m in range(2)]
        lab = _labels_csv(tmp_path, dict(zip(ids, "bbaacab")))
        ds = load_views(paths, lab)
        out = tmp_path / "again"
        p2, l2 = save_dataset(ds, out)
        again = load_views(p2, l2)
        assert ds.equals(again)


class TestSplit:
    def test_forced_balance(self):
        for seed in range(5):
            plan = stratified_split([0, 0, 1, 1], seed, 0.5)
            labels = np.array([0, 0, 1, 1])
            assert sorted(labels[plan.train_indices].tolist()) == [0, 1]

    def test_counts(self):
        labels = np.array([0] * 10 + [1] * 20)
        plan = stratified_split(labels, 3, 0.7)
        assert np.bincount(labels[plan.train_indices]).tolist() == [7, 14]

    def test_deterministic(self):
        labels = np.arange(40) % 3
        a = stratified_split(labels, 11, 0.7)
        b = stratified_split(labels, 11, 0.7)
        np.testing.assert_array_equal(a.train_indices, b.train_indices)
        np.testing.assert_array_equal(a.test_indices, b.test_indices)
        c = stratified_split(labels, 12, 0.7)
        assert not np.array_equal(a.train_indices, c.train_indices)

    def test_errors(self):
        with pytest.raises(DataError):
            stratified_split([0, 1, 1], 0, 0.5)
        with pytest.raises(DataError):
            stratified_split([0, 0, 1, 1], 0, 1.0)
        with pytest.raises(DataError, match="empty side"):
            stratified_split([0, 0, 1, 1], 0, 0.1)

    @settings(max_examples=100, deadline=None)
    @given(counts=st.lists(st.integers(2, 30), min_size=2, max_size=5),
           seed=st.integers(0, 2**31), frac=st.floats(0.2, 0.8))
    def test_partition_and_stratification(self, counts, seed, frac):
        labels = np.repeat(np.arange(len(counts)), counts)
        k = np.floor(frac * np.array(counts) + 0.5)
        if k.sum() == 0 or k.sum() == labels.size:
            with pytest.raises(DataError, match="empty side"):
                stratified_split(labels, seed, frac)
            return
        plan = stratified_split(labels, seed, frac)
        both = np.concatenate([plan.train_indices, plan.test_indices])
        assert np.array_equal(np.sort(both), np.arange(labels.size))
        assert np.intersect1d(plan.train_indices, plan.test_indices).size == 0
        train_counts = np.bincount(labels[plan.train_indices], minlength=len(counts))
        assert np.all(np.abs(train_counts - frac * np.array(counts)) <= 1)

    def test_kfold(self):
        labels = np.array([0] * 12 + [1] * 8)
        folds = stratified_kfold(labels, 4, seed=2)
        seen = np.concatenate([va for _, va in folds])
        assert np.array_equal(np.sort(seen), np.arange(20))
        for tr, va in folds:
            assert np.intersect1d(tr, va).size == 0
            assert np.bincount(labels[va]).tolist() == [3, 2]
        with pytest.raises(DataError):
            stratified_kfold(labels, 9, 0)


def _f_oracle(x, labels):
    """Textbook one-way ANOVA, one column at a time."""
    out = []
    classes = sorted(set(labels.tolist()))
    n, k = len(x), len(classes)
    for col in x.T:
        grand = sum(col) / n
        ssb = ssw = 0.0
        for c in classes:
            grp = [v for v, l in zip(col, labels) if l == c]
            m = sum(grp) / len(grp)
            ssb += len(grp) * (m - grand) ** 2
            ssw += sum((v - m) ** 2 for v in grp)
        out.append((ssb / (k - 1)) / (ssw / (n - k)))
    return np.array(out)


class TestAnova:
    def _view(self, x):
        n, p = x.shape
        return OmicsView("v", [f"s{i}" for i in range(n)], [f"f{j}" for j in range(p)], x)

    def test_constant_feature_last(self):
        x = np.column_stack([np.ones(6), [0, 1, 0, 1, 2, 3], [5, 4, 3, 2, 1, 1.5]])
        labels = np.array([0, 0, 0, 1, 1, 1])
        f = anova_f_scores(x, labels)
        assert f[0] == 0
        sel = anova_f_select(self._view(x), labels, 3)
        assert sel.features[-1] == "f0"

    def test_infinite_f_first(self):
        x = np.column_stack([[0.3, 1.2, 0.1, 0.9], [0, 0, 1, 1]])
        labels = np.array([0, 0, 1, 1])
        f = anova_f_scores(x, labels)
        assert np.isinf(f[1])
        assert anova_f_select(self._view(x), labels, 1).features == ("f1",)

    def test_matches_bruteforce(self, rng):
        x = rng.standard_normal((20, 5))
        labels = np.arange(20) % 3
        x[labels == 1, 2] += 1.5
        x[labels == 2, 4] -= 1.0
        np.testing.assert_allclose(anova_f_scores(x, labels), _f_oracle(x, labels), rtol=1e-12)
        expected = np.argsort(-_f_oracle(x, labels), kind="stable")[:2]
        sel = anova_f_select(self._view(x), labels, 2)
        assert sel.features == tuple(f"f{j}" for j in expected)

    def test_affine_invariance(self, rng):
        x = rng.standard_normal((15, 4))
        labels = np.arange(15) % 2
        f = anova_f_scores(x, labels)
        for a, b in [(3.0, 1.0), (-0.5, 10.0), (1e3, -7.0)]:
            np.testing.assert_allclose(anova_f_scores(a * x + b, labels), f, rtol=1e-10)

    def test_errors(self, rng):
        v = self._view(rng.standard_normal((6, 3)))
        with pytest.raises(DataError):
            anova_f_select(v, np.arange(6) % 2, 0)
        with pytest.raises(DataError):
            anova_f_select(self._view(np.ones((6, 3))), np.arange(6) % 2, 1)

    def test_tie_order(self):
        x = np.column_stack([[0, 0, 1, 1], [0, 0, 1, 1], [0, 1, 0, 1.0]])
        labels = np.array([0, 0, 1, 1])
        assert anova_f_select(self._view(x), labels, 2).features == ("f0", "f1")


class TestSynthetic:
    def test_zero_strength_has_equal_means(self):
        ds = synthetic_multiview(0, 40, 2, [3, 4, 5], [0, 0, 0])
        for v in ds.views:
            # means of the generating distribution coincide; noise is the only spread
            x0, x1 = v.values[ds.labels == 0], v.values[ds.labels == 1]
            diff = np.abs(x0.mean(0) - x1.mean(0))
            assert np.all(diff < 4 * np.sqrt(2.0 / 20))

    def test_strong_view_linearly_separable(self):
        ds = synthetic_multiview(1, 200, 2, [10], [2.0])
        x, y = ds.views[0].values, ds.labels
        # least-squares linear classifier as a baseline
        a = np.column_stack([x, np.ones(len(x))])
        w, *_ = np.linalg.lstsq(a, 2.0 * y - 1, rcond=None)
        assert np.mean((a @ w > 0) == (y == 1)) > 0.9

    def test_deterministic(self):
        a = synthetic_multiview(7, 30, 3, [4, 2], [1.0, 0.5])
        b = synthetic_multiview(7, 30, 3, [4, 2], [1.0, 0.5])
        for va, vb in zip(a.views, b.views):
            assert va.values.tobytes() == vb.values.tobytes()

    def test_errors(self):
        with pytest.raises(DataError):
            synthetic_multiview(0, 0, 2, [3], [1.0])
        with pytest.raises(DataError):
            synthetic_multiview(0, 10, 2, [3], [1.0, 2.0])

    def test_complementary_round_trip(self, tmp_path):
        ds = complementary_views(3, 40)
        paths, lab = save_dataset(ds, tmp_path)
        assert load_views(paths, lab).equals(ds)

    def test_planted(self):
        ds = planted_biomarker(0, 40, planted=2)
        x = ds.views[0].values
        gap = x[ds.labels == 1, 2].mean() - x[ds.labels == 0, 2].mean()
        assert gap > 4


def test_writers_round_trip(tmp_path):
    v = OmicsView("v", ["a", "b"], ["x", "y"], [[0.1, 1 / 3], [2.5e-17, -4.0]])
    write_view_csv(v, tmp_path / "v.csv")
    write_label_csv(v.samples, [1, 0], ["n", "p"], tmp_path / "l.csv")
    ds = load_views([tmp_path / "v.csv"], tmp_path / "l.csv")
    np.testing.assert_array_equal(ds.views[0].values, v.values)
