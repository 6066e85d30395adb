"""Prediction rule, model averaging, thresholding, and ROC/AUC against
counting oracles."""

import math

import numpy as np
import pytest

from bnplc.mcmc import TwoComponentState
from bnplc.model import (
    BaseMeasureHyper,
    DependenceParams,
    ModelState,
    Patient,
    TrajectoryParams,
    patient_loglik,
    stick_breaking_weights,
)
from bnplc.prediction import (
    PredictionResult,
    best_threshold,
    bma_predict,
    bma_predict_many,
    classify,
    predict_draw,
    roc_auc,
)

DEP = DependenceParams(gamma2=0.05, sigma2=0.1, rho=0.8)


def mix_state(sticks, phis, thetas, dep=DEP):
    sticks = np.asarray(sticks, dtype=float)
    return ModelState(
        assignments=np.zeros(1, dtype=np.intp),
        sticks=sticks,
        weights=stick_breaking_weights(sticks),
        phis=np.asarray(phis, dtype=float),
        thetas=np.asarray(thetas, dtype=float),
        dep=dep,
        alpha=1.0,
        base=BaseMeasureHyper(np.ones(3), np.eye(3)),
    )


class TestPredictDraw:
    def test_single_cluster_returns_phi(self):
        state = mix_state([1.0], [0.37], [[4.0, 0.2, -2.0]])
        assert predict_draw(state, [20.0, 40.0], [2.0, 3.5]) == pytest.approx(0.37, abs=1e-15)

    def test_one_hot_weights_return_that_phi(self):
        state = mix_state([1e-12, 1.0], [0.9, 0.2], [[4.0, 0.2, -2.0], [1.0, 0.1, 0.0]])
        # nearly all weight on cluster 2
        got = predict_draw(state, [], [])
        assert got == pytest.approx(0.2, abs=1e-9)

    def test_shared_trajectories_reduce_to_prior_mass(self):
        theta = [4.0, 0.2, -2.0]
        state = mix_state([0.25, 1.0], [0.1, 0.9], [theta, theta])
        expected = state.weights @ state.phis
        for y in ([1.0, 2.0], [5.0, -1.0]):
            got = predict_draw(state, [20.0, 40.0], y)
            assert got == pytest.approx(expected, abs=1e-12)

    def test_empty_observations_return_prior_mass(self):
        state = mix_state([0.25, 1.0], [0.1, 0.9],
                          [[4.0, 0.2, -2.0], [1.0, 0.1, 0.0]])
        assert predict_draw(state, [], []) == pytest.approx(state.weights @ state.phis)

    def test_matches_monte_carlo_marginalization(self):
        state = mix_state([0.4, 1.0], [0.15, 0.85],
                          [[4.0, 0.2, -2.0], [1.5, 0.1, 0.0]])
        times, values = np.array([20.0, 50.0]), np.array([2.2, 3.1])
        got = predict_draw(state, times, values)
        # oracle: sample memberships from the weight-likelihood posterior
        logw = np.log(state.weights) + np.array([
            patient_loglik(Patient("o", None, times, values),
                           TrajectoryParams(state.thetas[h]), DEP)
            for h in range(2)])
        p = np.exp(logw - logw.max())
        p /= p.sum()
        rng = np.random.default_rng(0)
        c = rng.choice(2, size=10 ** 6, p=p)
        mc = state.phis[c].mean()
        se = math.sqrt(p[0] * p[1]) * abs(state.phis[1] - state.phis[0]) / 1000.0
        assert abs(got - mc) < 4 * se

    def test_bounded_by_phi_range(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            H = rng.integers(1, 6)
            v = np.append(rng.uniform(0.05, 0.95, H - 1), 1.0)
            phis = rng.uniform(0, 1, H)
            thetas = rng.normal(0, 2, (H, 3))
            state = mix_state(v, phis, thetas)
            n = rng.integers(1, 5)
            t = np.sort(rng.uniform(10, 80, n))
            got = predict_draw(state, t, rng.normal(2, 2, n))
            nz = state.weights > 0
            assert phis[nz].min() - 1e-12 <= got <= phis[nz].max() + 1e-12

    def test_label_permutation_invariance(self):
        thetas = np.array([[4.0, 0.2, -2.0], [1.5, 0.1, 0.0]])
        phis = np.array([0.15, 0.85])
        state = mix_state([0.25, 1.0], phis, thetas)          # weights (.25, .75)
        state_perm = mix_state([0.75, 1.0], phis[::-1], thetas[::-1])
        t, y = [20.0, 60.0], [2.0, 3.0]
        assert predict_draw(state, t, y) == pytest.approx(
            predict_draw(state_perm, t, y), abs=1e-12)

    def test_two_component_bayes_formula(self):
        state = TwoComponentState(
            phi=0.3,
            thetas=np.array([[4.0, 0.2, -2.0], [1.5, 0.1, 0.0]]),
            deps=(DEP, DependenceParams(0.1, 0.2, 0.6)),
            base=BaseMeasureHyper(np.ones(3), np.eye(3)))
        t, y = np.array([20.0, 50.0]), np.array([2.0, 1.0])
        ll0 = patient_loglik(Patient("o", None, t, y),
                             TrajectoryParams(state.thetas[0]), state.deps[0])
        ll1 = patient_loglik(Patient("o", None, t, y),
                             TrajectoryParams(state.thetas[1]), state.deps[1])
        w1, w0 = 0.3 * math.exp(ll1), 0.7 * math.exp(ll0)
        assert predict_draw(state, t, y) == pytest.approx(w1 / (w0 + w1), rel=1e-10)
        assert predict_draw(state, [], []) == pytest.approx(0.3)


class TestBmaPredict:
    def _trace(self, phis):
        return [mix_state([1.0], [p], [[4.0, 0.2, -2.0]]) for p in phis]

    def test_constant_draws(self):
        res = bma_predict(self._trace([0.6] * 8), [20.0], [2.0])
        assert res.prob == pytest.approx(0.6)
        assert res.interval == (pytest.approx(0.6), pytest.approx(0.6))

    def test_hand_quantiles(self):
        res = bma_predict(self._trace([0.2, 0.4, 0.6, 0.8]), [20.0], [2.0],
                          interval_level=0.5)
        assert res.prob == pytest.approx(0.5)
        assert res.interval[0] == pytest.approx(0.35)
        assert res.interval[1] == pytest.approx(0.65)

    def test_empty_trace_raises(self):
        with pytest.raises(ValueError):
            bma_predict([], [20.0], [2.0])

    def test_many_agrees_with_single(self):
        rng = np.random.default_rng(2)
        draws = [mix_state([0.3, 1.0], rng.uniform(0, 1, 2), rng.normal(0, 1, (2, 3)))
                 for _ in range(20)]

        class FakeTrace:
            pass

        trace = FakeTrace()
        trace.draws = draws
        pats = [Patient("a", None, [20.0, 40.0], [2.0, 3.0]),
                Patient("b", None, [], []),
                Patient("c", None, [15.0, 30.0, 70.0], [1.0, 1.5, 1.2])]
        many = bma_predict_many(trace, pats, keep_per_draw=True)
        for p, res in zip(pats, many):
            single = bma_predict(draws, p.times, p.values)
            assert res.prob == pytest.approx(single.prob, abs=1e-12)
            np.testing.assert_allclose(res.per_draw, single.per_draw, atol=1e-12)

    def test_result_invariants(self):
        with pytest.raises(ValueError):
            PredictionResult(prob=0.5, interval=(0.7, 0.3))
        with pytest.raises(ValueError):
            PredictionResult(prob=1.5, interval=(0.3, 0.7))


class TestClassify:
    def test_above(self):
        assert classify(0.51, 0.5) == 1

    def test_strict_inequality_at_threshold(self):
        assert classify(0.5, 0.5) == 0

    def test_lowered_threshold(self):
        assert classify(0.3, 0.23) == 1

    def test_vectorized(self):
        np.testing.assert_array_equal(classify(np.array([0.1, 0.5, 0.9]), 0.5),
                                      [0, 0, 1])


def auc_pair_oracle(probs, labels):
    """Exhaustive concordant/discordant pair count, ties half-weighted."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    pos = probs[labels == 1]
    neg = probs[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (pos.size * neg.size)


class TestRocAuc:
    def test_perfect_separation(self):
        auc, curve = roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert auc == 1.0

    def test_three_of_four_concordant(self):
        auc, _ = roc_auc([0.9, 0.2, 0.8, 0.1], [1, 1, 0, 0])
        assert auc == pytest.approx(0.75)

    def test_all_ties(self):
        auc, _ = roc_auc([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0])
        assert auc == pytest.approx(0.5)

    def test_single_class_raises(self):
        with pytest.raises(ValueError):
            roc_auc([0.2, 0.8], [1, 1])

    def test_matches_pair_oracle_exhaustively(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            n = rng.integers(2, 13)
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # draw from a coarse grid so ties actually occur
            probs = rng.choice(np.linspace(0, 1, 5), size=n)
            auc, _ = roc_auc(probs, labels)
            assert auc == pytest.approx(auc_pair_oracle(probs, labels), abs=1e-12)

    def test_monotone_in_positive_scores(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = rng.integers(3, 12)
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            probs = rng.uniform(0, 1, n)
            auc0, _ = roc_auc(probs, labels)
            bumped = probs.copy()
            pos_idx = np.flatnonzero(labels == 1)
            j = rng.choice(pos_idx)
            bumped[j] = min(1.0, bumped[j] + rng.uniform(0, 0.5))
            auc1, _ = roc_auc(bumped, labels)
            assert auc1 >= auc0 - 1e-12

    def test_curve_reaches_corners(self):
        probs = [0.9, 0.6, 0.4, 0.1]
        _, curve = roc_auc(probs, [1, 0, 1, 0])
        fprs = [c[0] for c in curve]
        tprs = [c[1] for c in curve]
        assert (0.0, 0.0) == (fprs[0], tprs[0])    # threshold at max prob
        assert fprs[-1] <= 1.0 and tprs[-1] == 1.0


class TestBestThreshold:
    def test_perfect_separation_smallest_tie(self):
        _, curve = roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        # only t = 0.2 achieves tpr 1 / fpr 0 among the enumerated ones
        assert best_threshold(curve) == pytest.approx(0.2)

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = rng.integers(4, 30)
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            probs = rng.choice(np.linspace(0, 1, 11), size=n)
            for cost in (1.0, 2.0):
                _, curve = roc_auc(probs, labels)
                got = best_threshold(curve, cost)
                # exhaustive scan over the same candidate thresholds
                best_score, best_t = -np.inf, None
                pos = probs[labels == 1]
                neg = probs[labels == 0]
                for t in sorted(np.unique(probs)):
                    score = (pos > t).mean() - cost * (neg > t).mean()
                    if score > best_score + 1e-15:
                        best_score, best_t = score, t
                assert got == pytest.approx(best_t)

    def test_youden_definition(self):
        _, curve = roc_auc([0.9, 0.7, 0.5, 0.3, 0.1], [1, 1, 0, 1, 0])
        t = best_threshold(curve, cost_ratio=1.0)
        scores = {c[2]: c[1] - c[0] for c in curve}
        assert scores[t] == max(scores.values())
