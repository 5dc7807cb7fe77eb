import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from softhad.backbone import backbone_graph, quantize
from softhad.data import Dataset
from softhad.errors import BackboneError, ConvergenceError, HarmonicError
from softhad.graph import SimilarityGraph
from softhad.harmonic import (
    AnomalyReport,
    HarmonicConfig,
    anomaly_scores,
    apply_scaling,
    closed_form_oracle,
    fit_scaling,
    objective_value,
    score_backbone,
    score_recent,
    solve_soft_harmonic,
)
from softhad.pipeline import fit_backbone, score_dataset


def graph_from(dense, sigma=1.0):
    return SimilarityGraph(sp.csr_matrix(np.asarray(dense, dtype=float)), sigma)


def edgeless(n):
    return SimilarityGraph(sp.csr_matrix((n, n)), 1.0)


TWO = graph_from([[0, 1], [1, 0]])


class TestConfig:
    def test_defaults(self):
        cfg = HarmonicConfig()
        assert (cfg.c_l, cfg.c_u, cfg.gamma_g, cfg.graph_k) == (1.0, 1.0, 1.0, 75)

    @pytest.mark.parametrize("kw", [{"c_l": 0}, {"c_u": -1}, {"gamma_g": -0.1}, {"solver_tol": 0}])
    def test_invalid(self, kw):
        with pytest.raises(HarmonicError):
            HarmonicConfig(**kw)


class TestSolve:
    def test_isolated_node(self):
        assert solve_soft_harmonic(edgeless(1), [1.0], 1.0, HarmonicConfig()).ell[0] == 0.5

    def test_two_node(self):
        # M = [[3, -1], [-1, 3]], dense solve of M l = (1, -1)
        want = np.linalg.solve([[3.0, -1.0], [-1.0, 3.0]], [1.0, -1.0])
        np.testing.assert_allclose(want, [0.25, -0.25], atol=1e-15)
        got = solve_soft_harmonic(TWO, [1.0, -1.0], 1.0, HarmonicConfig()).ell
        np.testing.assert_allclose(got, [0.25, -0.25], atol=1e-12)
        np.testing.assert_allclose(closed_form_oracle(TWO, [1.0, -1.0], 1.0, HarmonicConfig()).ell,
                                   [0.25, -0.25], atol=1e-12)

    def test_constant_targets(self, rng):
        g = random_graph(rng, 40)
        cfg = HarmonicConfig(c_l=2.0, gamma_g=0.5)
        ell = solve_soft_harmonic(g, np.ones(40), 2.0, cfg).ell
        np.testing.assert_allclose(ell, 2.0 / 2.5, rtol=1e-10)

    def test_edgeless_oracle(self):
        y = np.array([1.0, -1.0, 0.5])
        cfg = HarmonicConfig(c_l=2.0, gamma_g=3.0)
        np.testing.assert_allclose(closed_form_oracle(edgeless(3), y, 2.0, cfg).ell, y / (1 + 3.0 / 2.0))

    def test_matches_oracle(self, rng):
        for _ in range(10):
            n = int(rng.integers(5, 80))
            g = random_graph(rng, n, isolated=int(rng.integers(0, 3)))
            y = rng.choice([-1.0, 0.0, 1.0], size=n)
            c = rng.uniform(0.1, 10, size=n)
            cfg = HarmonicConfig(gamma_g=float(rng.uniform(0, 5)))
            a = solve_soft_harmonic(g, y, c, cfg).ell
            b = closed_form_oracle(g, y, c, cfg).ell
            assert np.linalg.norm(a - b) <= 1e-8 * max(np.linalg.norm(b), 1e-300)

    def test_errors(self):
        cfg = HarmonicConfig()
        with pytest.raises(HarmonicError):
            solve_soft_harmonic(TWO, [1.0, -1.0], [1.0, 0.0], cfg)
        with pytest.raises(HarmonicError):
            solve_soft_harmonic(TWO, [1.0, -2.0], 1.0, cfg)
        with pytest.raises(HarmonicError):
            solve_soft_harmonic(TWO, [1.0], 1.0, cfg)

    def test_convergence_error_carries_residual(self, rng):
        g = random_graph(rng, 60, density=0.3)
        cfg = HarmonicConfig(gamma_g=0.0, solver_tol=1e-14, solver_max_iter=1)
        with pytest.raises(ConvergenceError) as info:
            solve_soft_harmonic(g, rng.choice([-1.0, 1.0], size=60), 0.01, cfg)
        assert info.value.residual > 1e-14
        assert info.value.iterations == 1

    def test_oracle_guard(self):
        with pytest.raises(HarmonicError):
            closed_form_oracle(edgeless(2001), np.zeros(2001), 1.0, HarmonicConfig())

    def test_harmonic_degeneration(self, rng):
        n = 12
        W = np.zeros((n, n))
        W[0, 1:] = W[1:, 0] = rng.uniform(0.1, 1, size=n - 1)
        y = np.r_[0.0, rng.choice([-1.0, 1.0], size=n - 1)]
        c = np.r_[1e-9, np.full(n - 1, 1e9)]
        ell = solve_soft_harmonic(graph_from(W), y, c, HarmonicConfig(gamma_g=0.0)).ell
        assert abs(ell[0] - W[0] @ y / W[0].sum()) <= 1e-4


class TestObjective:
    def test_examples(self):
        cfg = HarmonicConfig()
        assert objective_value(edgeless(1), [1.0], 1.0, cfg, [0.5]) == pytest.approx(0.5, abs=1e-15)
        y = np.array([1.0, -1.0])
        assert objective_value(edgeless(2), y, 1.0, HarmonicConfig(gamma_g=0.0), y) == 0.0

    def test_minimizer(self, rng):
        g = random_graph(rng, 30)
        y = rng.choice([-1.0, 1.0], size=30)
        c = rng.uniform(0.5, 2, size=30)
        cfg = HarmonicConfig(gamma_g=0.7)
        ell = solve_soft_harmonic(g, y, c, cfg).ell
        best = objective_value(g, y, c, cfg, ell)
        bumped = ell.copy()
        bumped[3] += 0.01
        assert objective_value(g, y, c, cfg, bumped) > best
        for _ in range(100):
            assert objective_value(g, y, c, cfg, ell + rng.uniform(-1e-2, 1e-2, size=30)) >= best


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 60), st.floats(0.1, 10), st.floats(0, 5))
def test_solution_properties(seed, n, c_l, gamma):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, density=0.2, isolated=int(rng.integers(0, 2)))
    y = rng.uniform(-1, 1, size=n)
    cfg = HarmonicConfig(c_l=c_l, gamma_g=gamma)
    soft = solve_soft_harmonic(g, y, c_l, cfg)
    # maximum principle
    assert np.max(np.abs(soft.ell)) <= np.max(np.abs(y)) + 1e-9
    # sign / confidence decomposition
    np.testing.assert_array_equal(soft.confidence * soft.predicted_sign, soft.ell)
    # more regularization never grows the solution
    more = solve_soft_harmonic(g, y, c_l, HarmonicConfig(c_l=c_l, gamma_g=gamma + 1.0))
    assert np.linalg.norm(more.ell) <= np.linalg.norm(soft.ell) + 1e-12


def test_sign_of_zero():
    soft = solve_soft_harmonic(edgeless(2), [0.0, 1.0], 1.0, HarmonicConfig())
    assert soft.predicted_sign.tolist() == [0.0, 1.0]
    assert soft.ell[0] == 0.0


class TestScores:
    def test_examples(self):
        rep = anomaly_scores(np.array([1.0, -1.0, 0.25]), [1, 1, -1])
        np.testing.assert_allclose(rep.raw_score, [0.0, 2.0, 1.25])

    def test_length_mismatch(self):
        with pytest.raises(HarmonicError):
            anomaly_scores(np.zeros(2), [1, 1, 1])

    def test_isolated_score_law(self):
        for c_l in (0.1, 1.0, 7.0):
            for gamma in (0.0, 0.5, 3.0):
                ell = solve_soft_harmonic(edgeless(2), [1.0, -1.0], c_l, HarmonicConfig(c_l=c_l, gamma_g=gamma)).ell
                s = anomaly_scores(ell, [1, -1]).raw_score
                np.testing.assert_allclose(s, gamma / (c_l + gamma), atol=1e-12, rtol=0)

    def test_scaling(self):
        assert fit_scaling([0.2, 0.5, 0.8]) == (0.2, 0.8)
        assert fit_scaling([0.4]) == (0.4, 0.4)
        assert fit_scaling([0.0, 0.0]) == (0.0, 0.0)
        np.testing.assert_allclose(apply_scaling([0.5, 0.9, 0.1], (0.2, 0.8)), [0.5, 1.0, 0.0])
        assert apply_scaling([0.4, 3.0], (0.4, 0.4)).tolist() == [0.0, 0.0]
        with pytest.raises(HarmonicError):
            fit_scaling([])

    def test_report_outputs(self, tmp_path):
        rep = AnomalyReport([0.5, 1.5], scaled_score=np.array([0.0, 1.0]), calibration=(0.5, 1.5),
                            node_ids=np.array([7, 9]))
        assert rep.ranking().tolist() == [9, 7]
        rep.write_csv(tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines() == [
            "node_id,raw_score,scaled_score", "7,0.5,0.0", "9,1.5,1.0"]
        rep.write_json(tmp_path / "r.json", {"seed": 1})
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["calibration"] == [0.5, 1.5] and doc["provenance"] == {"seed": 1}


class TestScoreRecent:
    def pure_backbone(self):
        d = Dataset([[0.0], [0.1], [0.2], [5.0], [5.1], [5.2]], [1, 1, 1, -1, -1, -1])
        return backbone_graph(quantize(d, 2, seed=0), 1, 1.0)

    def test_contradicting_label_scores_higher(self):
        bb = self.pure_backbone()
        c = int(np.argmax(bb.pseudo_target))
        x = bb.centroids[[c, c]]
        rep = score_recent(bb, x, [-1, 1], HarmonicConfig(graph_k=1))
        assert rep.raw_score[0] > rep.raw_score[1]
        assert np.all((rep.scaled_score >= 0) & (rep.scaled_score <= 1))

    def test_isolated_recent_withheld(self):
        bb = self.pure_backbone()
        rep = score_recent(bb, [[1e6]], [1], HarmonicConfig(graph_k=1))
        assert rep.raw_score[0] == 1.0

    def test_included_two_centroid_oracle(self):
        d = Dataset([[0.0], [1.0]], [1, -1])
        bb = backbone_graph(quantize(d, 2), 1, 1.0)
        cfg = HarmonicConfig(graph_k=1)
        rep = score_recent(bb, [[0.0]], [-1], cfg, mode="included")
        # nodes: centroid 0 (+1), centroid 1 (-1), recent at centroid 0 (-1)
        w = np.exp(-1.0)
        W = np.array([[0, w, 1], [w, 0, 0], [1, 0, 0]])
        M = np.diag(W.sum(1)) - W + 2 * np.eye(3)
        ell = np.linalg.solve(M, [1.0, -1.0, -1.0])
        assert rep.raw_score[0] == pytest.approx(abs(ell[2] + 1), abs=1e-10)
        train = np.abs(ell[:2] - [1, -1])
        assert rep.calibration == pytest.approx((train.min(), train.max()), abs=1e-10)

    def test_errors(self):
        bb = self.pure_backbone()
        cfg = HarmonicConfig(graph_k=1)
        with pytest.raises(HarmonicError):
            score_recent(bb, [[0.0]], [0], cfg)
        with pytest.raises(HarmonicError):
            score_recent(bb, [[0.0]], [1, 1], cfg)
        with pytest.raises(HarmonicError):
            score_recent(bb, [[0.0]], [1], cfg, mode="other")
        with pytest.raises(BackboneError):
            score_recent(bb, [[0.0]], [1], HarmonicConfig(graph_k=3))

    def test_training_scale_attains_bounds(self, rng):
        X = rng.normal(size=(120, 3))
        y = np.where(X[:, 0] + 0.3 * rng.normal(size=120) > 0, 1, -1)
        d = Dataset(X, y, split=90)
        rep, bb = score_dataset(d, HarmonicConfig(graph_k=10), backbone_k=40)
        scaled_train = apply_scaling(rep.train_raw_score, rep.calibration)
        assert scaled_train.min() == 0.0 and scaled_train.max() == 1.0
        assert rep.node_ids.tolist() == list(range(90, 120))

    def test_score_backbone(self, rng):
        X = rng.normal(size=(60, 2))
        d = Dataset(X, np.where(X[:, 0] > 0, 1, -1))
        bb = fit_backbone(d, HarmonicConfig(graph_k=5))
        rep = score_backbone(bb, HarmonicConfig(graph_k=5))
        assert rep.raw_score.shape == (60,)
        assert rep.scaled_score.min() == 0.0 and rep.scaled_score.max() == 1.0
