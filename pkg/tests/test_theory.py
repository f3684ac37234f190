"""Toy-model verification of the variational bound machinery."""

import numpy as np
import pytest

from dsscc.theory import (Lemma1Result, SemanticTask, TheoryError, ToyBayesModel,
                          _dirichlet_like, conditional_bin_entropies, eval_lhs,
                          eval_rhs, induced_posterior, random_model, rate_term,
                          rate_term_via_semantics, run_campaign, segment,
                          verify_lemma1, verify_proposition1, Segmentation)

RNG = np.random.default_rng(0x7E07)


def test_random_models_satisfy_bound():
    rng = np.random.default_rng(1)
    for _ in range(200):
        model = random_model(rng, n_tasks=int(rng.integers(1, 3)))
        res = verify_proposition1(model)
        assert res.passed
        assert res.gap >= -1e-9


def test_zero_weights_reduce_to_first_kl_term():
    rng = np.random.default_rng(2)
    model = random_model(rng, n_tasks=1)
    model.tasks[0].weight = 0.0
    seg = segment(model)
    full = eval_lhs(model, seg)
    only_x = eval_lhs(ToyBayesModel(model.x_prior, model.features,
                                    model.x_posterior, []), seg)
    assert abs(full - only_x) < 1e-12
    assert verify_proposition1(model).passed


def test_bayes_optimal_posterior_zeroes_first_term():
    """With integer features (disjoint bins) and the exact bin posterior,
    the data KL term vanishes and the LHS equals the semantic part alone,
    computed both ways."""
    rng = np.random.default_rng(3)
    n = 6
    x_prior = _dirichlet_like(rng, n)
    features = np.arange(n, dtype=float) * 1.5
    x_posterior = np.eye(n) * (1 - 1e-12) + 1e-12 / n  # ~exact bin posterior
    s_given_x = _dirichlet_like(rng, (n, 3))
    prior = x_prior @ s_given_x
    task = SemanticTask(prior=prior,
                        x_given_s=(x_prior[:, None] * s_given_x).T / prior[:, None],
                        s_posterior=_dirichlet_like(rng, (n, 3)),
                        weight=1.3)
    model = ToyBayesModel(x_prior, features, x_posterior, [task])
    seg = segment(model)
    lhs = eval_lhs(model, seg)

    semantic_only = eval_lhs(model, seg) - eval_lhs(
        ToyBayesModel(x_prior, features, x_posterior, []), seg)
    data_term = lhs - semantic_only
    assert abs(data_term) < 1e-6
    assert verify_proposition1(model).passed


def test_single_point_model():
    model = ToyBayesModel(np.array([1.0]), np.array([0.0]), np.array([[1.0]]),
                          [SemanticTask(prior=np.array([1.0]),
                                        x_given_s=np.array([[1.0]]),
                                        s_posterior=np.array([[1.0]]),
                                        weight=2.0)])
    res = verify_proposition1(model)
    assert res.passed
    # deterministic everything: both sides collapse to the rate terms
    assert abs(res.lhs) < 1e-9


def test_bin_entropies_are_exactly_zero():
    model = random_model(np.random.default_rng(4))
    assert np.max(np.abs(conditional_bin_entropies(model))) == 0.0


def test_rate_identity_both_expectations():
    rng = np.random.default_rng(5)
    for _ in range(50):
        model = random_model(rng, n_tasks=2)
        seg = segment(model)
        r = rate_term(model, seg)
        for task in model.tasks:
            assert abs(r - rate_term_via_semantics(model, task, seg)) <= 1e-9 * max(1, r)


def test_grid_refinement_is_exact():
    model = random_model(np.random.default_rng(6))
    seg = segment(model)
    refined = Segmentation(np.repeat(seg.lengths / 2, 2),
                           np.repeat(seg.covers, 2, axis=1),
                           np.repeat(seg.region, 2))
    assert abs(eval_lhs(model, seg) - eval_lhs(model, refined)) < 1e-10
    assert abs(eval_rhs(model, seg) - eval_rhs(model, refined)) < 1e-10


def test_overlapping_bins_handled():
    # features closer than the bin width: boxes overlap, still exact
    model = random_model(np.random.default_rng(7))
    model.features = np.linspace(0, 0.4 * len(model.features), len(model.features))
    assert verify_proposition1(model).passed


def test_inconsistent_task_rejected():
    rng = np.random.default_rng(8)
    model = random_model(rng, n_tasks=1)
    bad = model.tasks[0]
    bad.x_given_s = _dirichlet_like(rng, bad.x_given_s.shape)  # breaks marginal
    with pytest.raises(TheoryError):
        ToyBayesModel(model.x_prior, model.features, model.x_posterior, [bad])


def test_lemma_equality_for_true_posterior():
    rng = np.random.default_rng(9)
    model = random_model(rng, n_tasks=1)
    post, _ = induced_posterior(model, model.tasks[0])
    res = verify_lemma1(model, model.tasks[0], post)
    assert res.passed
    assert abs(res.kl_term) < 1e-12
    assert abs(res.d_surrogate - res.d_true) < 1e-12


def test_lemma_uniform_surrogate_gives_log_s():
    rng = np.random.default_rng(10)
    model = random_model(rng, n_tasks=1)
    n_s = len(model.tasks[0].prior)
    res = verify_lemma1(model, model.tasks[0],
                        np.full((len(model.x_prior), n_s), 1.0 / n_s))
    assert res.passed
    assert abs(res.d_surrogate - np.log(n_s)) < 1e-9


def test_lemma_random_surrogates():
    rng = np.random.default_rng(11)
    for _ in range(100):
        model = random_model(rng, n_tasks=1)
        n_s = len(model.tasks[0].prior)
        surrogate = _dirichlet_like(rng, (len(model.x_prior), n_s))
        res = verify_lemma1(model, model.tasks[0], surrogate)
        assert res.passed
        assert res.kl_term >= -1e-12


def test_campaign_report_shape():
    report = run_campaign(40, 20, seed=5)
    assert report["passed"]
    assert report["models"] == 40 and report["surrogates"] == 20
    assert report["gap_min"] >= -1e-9
    assert len(report["gaps"]) == 40
