import json

import numpy as np
import pytest

from omicsmkl.attribution import (AttributionConfig, AttributionError, biomarker_report,
                                  component_scores, integrated_gradients, kpcaig_importance,
                                  projection_function, projection_gradients, rank_components,
                                  target_logit)
from omicsmkl.deep import DeepMklConfig, build, train
from omicsmkl.kernels import KernelSpec
from omicsmkl.kpca import fit_view

from oracles import central_difference


def linear_net(dims, seed=0):
    """Eval-mode network that is affine in its inputs (slope-1 activation)."""
    cfg = DeepMklConfig(branch_sizes=(4, 3), leaky_slope=1.0, dropout_rate=0.0, seed=seed)
    return build(cfg, dims, 2).eval()


def affine_gradient(model, target):
    """Input gradient of an affine network, read off by unit probes."""
    zero = [np.zeros((1, d)) for d in model.input_dims]
    base = model.logits(zero)[0, target]
    out = []
    for v, d in enumerate(model.input_dims):
        g = np.zeros(d)
        for i in range(d):
            probe = [z.copy() for z in zero]
            probe[v][0, i] = 1.0
            g[i] = model.logits(probe)[0, target] - base
        out.append(g)
    return out


def trained_toy(seed):
    rng = np.random.default_rng(seed)
    dims = (3, 2)
    views = [rng.standard_normal((40, d)) for d in dims]
    y = (views[0][:, 0] + views[1][:, 1] > 0).astype(int)
    cfg = DeepMklConfig(branch_sizes=(8, 4), learning_rate=1e-2, epochs=20, batch_size=8,
                        dropout_rate=0.1, seed=seed)
    model = build(cfg, dims, 2)
    train(model, views, y)
    return model, views


class TestIntegratedGradients:
    def test_zero_path(self):
        m = linear_net([3, 2])
        x = [np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.1])]
        for a in integrated_gradients(m, x, x, 1, steps=7):
            assert np.all(a == 0.0)

    def test_linear_identity(self, rng):
        m = linear_net([3, 2], seed=2)
        w = affine_gradient(m, 0)
        x = [rng.standard_normal(3), rng.standard_normal(2)]
        base = [rng.standard_normal(3), rng.standard_normal(2)]
        for steps in (1, 5, 50):
            ig = integrated_gradients(m, x, base, 0, steps)
            for a, wv, xv, bv in zip(ig, w, x, base):
                np.testing.assert_allclose(a, wv * (xv - bv), atol=1e-10)

    @pytest.mark.parametrize("seed", range(3))
    def test_completeness_converges(self, seed):
        # the network is piecewise linear, so the midpoint sum carries an
        # O(1/steps) error from each activation kink crossed by the path
        model, views = trained_toy(seed)
        x = [v[seed] for v in views]
        base = [np.zeros(v.shape[1]) for v in views]
        for target in (0, 1):
            delta = target_logit(model, x, target) - target_logit(model, base, target)
            errs = [abs(sum(a.sum() for a in integrated_gradients(model, x, base, target, s))
                        - delta) for s in (20, 200, 4000)]
            assert errs[1] < 2e-2
            assert errs[2] < 1e-3
            assert errs[2] < errs[0]

    def test_requires_eval_mode(self):
        m = linear_net([2])
        m.training = True
        with pytest.raises(AttributionError):
            integrated_gradients(m, [np.zeros(2)], [np.zeros(2)], 0)


class TestComponentRanking:
    def _single_reader(self):
        m = linear_net([3, 3])
        blk = m.branches[0][0].dense
        blk.params["W"][...] = 0.0
        blk.params["W"][0, :] = 1.0
        m.branches[1][0].dense.params["W"][...] = 0.0
        return m

    def test_constructed_dependence(self, rng):
        m = self._single_reader()
        emb = [rng.standard_normal((6, 3)), rng.standard_normal((6, 3))]
        scores = component_scores(m, emb, steps=10)
        assert scores[0][0] > 0
        assert np.all(scores[0][1:] == 0) and np.all(scores[1] == 0)
        ranks = rank_components(m, emb, steps=10, top_k=1)
        assert ranks[0].component_ids == [1]

    def test_duplicated_samples(self, rng):
        model, views = trained_toy(4)
        emb = [v[:10] for v in views]
        a = rank_components(model, emb, steps=20, top_k=2)
        b = rank_components(model, [np.vstack([e, e]) for e in emb], steps=20, top_k=2)
        for ra, rb in zip(a, b):
            assert ra.component_ids == rb.component_ids
            np.testing.assert_allclose(ra.scores, rb.scores, rtol=1e-12)

    def test_linear_hand_ranking(self, rng):
        m = linear_net([2, 2], seed=5)
        emb = [rng.standard_normal((8, 2)), rng.standard_normal((8, 2))]
        target = np.argmax(m.logits(emb), axis=1)
        w = [affine_gradient(m, c) for c in (0, 1)]
        expected = [np.mean([np.abs(w[t][v] * e[s]) for s, t in enumerate(target)], axis=0)
                    for v, e in enumerate(emb)]
        scores = component_scores(m, emb, steps=3)
        for got, exp in zip(scores, expected):
            np.testing.assert_allclose(got, exp, atol=1e-10)
        ranks = rank_components(m, emb, steps=3, top_k=2)
        for r, exp in zip(ranks, expected):
            assert r.component_ids == [int(i) + 1 for i in np.argsort(-exp)]

    def test_label_target(self, rng):
        m = linear_net([2])
        emb = [rng.standard_normal((4, 2))]
        with pytest.raises(AttributionError):
            component_scores(m, emb, target="label")
        assert len(component_scores(m, emb, labels=[0, 1, 0, 1], target="label")) == 1

    def test_top_k_bounds(self, rng):
        m = linear_net([2])
        with pytest.raises(AttributionError):
            rank_components(m, [rng.standard_normal((3, 2))], top_k=3)


class TestKpcaIg:
    def test_constant_feature_zero(self, rng):
        x = rng.standard_normal((8, 3))
        x[:, 1] = 4.2
        fit = fit_view(x, KernelSpec("rbf", 0.3), 3)
        ranked = dict(kpcaig_importance(fit, x, [1, 2], ["a", "b", "c"]))
        assert ranked["b"] == 0.0
        assert ranked["a"] > 0 and ranked["c"] > 0

    def test_linear_hand_computation(self):
        x = np.array([[1.0, 2.0], [3.0, -1.0], [0.0, 0.5]])
        fit = fit_view(x, KernelSpec("linear"), 1)
        a = fit.dual_coeffs[:, 0]
        grad = np.array([sum(a[i] * x[i, l] for i in range(3)) for l in range(2)])
        g = projection_gradients(fit, x, x, [1])
        for s in range(3):
            np.testing.assert_allclose(g[s, 0], grad, atol=1e-12)
        scores = dict(kpcaig_importance(fit, x, [1], ["f1", "f2"]))
        np.testing.assert_allclose([scores["f1"], scores["f2"]], np.abs(grad), atol=1e-12)

    @pytest.mark.parametrize("spec", [KernelSpec("rbf", 0.4), KernelSpec("linear"),
                                      KernelSpec("polynomial", degree=2, offset=1.0)])
    def test_finite_differences(self, rng, spec):
        x = rng.standard_normal((5, 3))
        fit = fit_view(x, spec, 2)
        pts = rng.standard_normal((2, 3))
        g = projection_gradients(fit, x, pts, [1, 2])
        for s in range(2):
            for j in (1, 2):
                fd = central_difference(
                    lambda p: projection_function(fit, x, p[None, :], [j])[0, 0], pts[s])
                np.testing.assert_allclose(g[s, j - 1], fd, rtol=1e-5, atol=1e-9)

    def test_projection_function_matches_scores(self, rng):
        x = rng.standard_normal((7, 2))
        fit = fit_view(x, KernelSpec("rbf", 0.5), 3)
        np.testing.assert_allclose(projection_function(fit, x, x, [1, 2, 3]),
                                   fit.train_scores, atol=1e-10)

    def test_column_permutation(self, rng):
        x = rng.standard_normal((9, 4))
        names = ["a", "b", "c", "d"]
        fit = fit_view(x, KernelSpec("rbf", 0.2), 2)
        base = dict(kpcaig_importance(fit, x, [1, 2], names))
        perm = [2, 0, 3, 1]
        fit2 = fit_view(x[:, perm], KernelSpec("rbf", 0.2), 2)
        other = dict(kpcaig_importance(fit2, x[:, perm], [1, 2], [names[p] for p in perm]))
        for k in names:
            assert other[k] == pytest.approx(base[k], rel=1e-9)

    def test_bad_components(self, rng):
        x = rng.standard_normal((5, 2))
        fit = fit_view(x, KernelSpec("rbf"), 2)
        with pytest.raises(AttributionError):
            projection_gradients(fit, x, x, [3])
        with pytest.raises(AttributionError):
            kpcaig_importance(fit, x[:4], [1])


def test_report_lengths_and_files(tmp_path, rng):
    xs = [rng.standard_normal((20, 5)), rng.standard_normal((20, 4))]
    y = np.arange(20) % 2
    fits = [fit_view(x, KernelSpec("rbf", 0.1), 3) for x in xs]
    emb = [f.train_scores for f in fits]
    model = build(DeepMklConfig(branch_sizes=(6, 4), epochs=3, learning_rate=1e-2), [3, 3], 2)
    train(model, emb, y)
    cfg = AttributionConfig(steps=10, top_k_components=2, top_k_features=[4, 2])
    rep = biomarker_report(model, fits, xs, emb, cfg, view_names=["A", "B"])
    assert [len(c.component_ids) for c in rep.components] == [2, 2]
    assert len(rep.features["A"]) == 4 and len(rep.features["B"]) == 2
    paths = rep.write(tmp_path)
    doc = json.loads(open(paths[0]).read())
    assert doc["config"]["baseline"] == "zeros"
    lines = open(paths[2]).read().splitlines()
    assert lines[0] == "view,feature,score" and len(lines) == 7
