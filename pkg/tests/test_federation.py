import logging
from dataclasses import replace

import numpy as np
import pytest

from brifca.aggregation import AggregationRule
from brifca.core import ConfigError, ExperimentConfig, GroundTruth, ParameterSpace
from brifca.datagen import WorkerSpec, generate_population, ground_truth_for
from brifca.federation import (
    GradientReport,
    RoundState,
    assign_cluster,
    initial_params,
    run_algorithm,
    server_round,
    warm_radius,
    worker_report,
)
from brifca.model import Dataset, LinRegSquared, MeanSquared, get_model

MEAN = MeanSquared()


def mean_worker(points, index=0, cluster=0, strategy=None):
    kw = {"strategy": strategy} if strategy else {"cluster": cluster}
    return WorkerSpec(index, Dataset(np.asarray(points, dtype=float)), **kw)


def test_assign_picks_nearest_cluster():
    w = mean_worker([[1.0, 0.0], [1.1, 0.1]])
    params = np.array([[5.0, 5.0], [1.0, 0.0]])
    assert assign_cluster(w, params, MEAN) == 1


def test_assign_ties_go_to_lowest_index():
    w = mean_worker([[1.0, 0.0]])
    params = np.array([[0.0, 0.0], [0.0, 0.0], [2.0, 0.0]])
    assert assign_cluster(w, params, MEAN) == 0


def test_assign_matches_exhaustive_loss_oracle():
    rng = np.random.default_rng(0)
    for family in ("mean_squared", "linreg_squared"):
        model = get_model(family)
        for _ in range(250):
            k, d = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            data = model.sample(rng.normal(size=d), int(rng.integers(1, 20)), 0.5, rng)
            w = WorkerSpec(0, data, cluster=0)
            params = rng.normal(size=(k, d))
            losses = [model.loss(p, data) for p in params]
            assert assign_cluster(w, params, model) == int(np.argmin(losses))


def test_omniscient_byzantine_reports_target():
    w = mean_worker([[0.0]], strategy="omniscient_target_smallest")
    assert assign_cluster(w, np.zeros((3, 1)), MEAN, target=2) == 2


def test_honest_report_zero_at_erm():
    w = mean_worker([[1.0, 2.0], [3.0, 4.0]])
    params = np.array([[2.0, 3.0]])
    r = worker_report(w, params, MEAN, 0)
    assert np.array_equal(r.g, np.zeros(2)) and r.cluster == 0 and r.weight == 2.0


def test_scaled_eval_report():
    pts = np.array([[1.0, -1.0], [3.0, 1.0]])
    mu = pts.mean(axis=0)
    w = mean_worker(pts, strategy="scaled_eval")
    params = np.array([[0.5, 0.25], [9.0, 9.0]])
    r = worker_report(w, params, MEAN, 0)
    assert np.allclose(r.g, 2 * (3 * params[0] - mu), atol=1e-15)


def test_sign_flip_negates_honest_report():
    rng = np.random.default_rng(1)
    data = LinRegSquared().sample(rng.normal(size=3), 10, 0.2, rng)
    params = rng.normal(size=(2, 3))
    honest = worker_report(WorkerSpec(0, data, cluster=0), params, LinRegSquared(), 1)
    flipped = worker_report(WorkerSpec(0, data, strategy="sign_flip"), params, LinRegSquared(), 1)
    assert np.array_equal(flipped.g, -honest.g)


def test_arbitrary_vector_has_fixed_magnitude():
    w = mean_worker([[0.0, 0.0, 0.0]], strategy="arbitrary_vector")
    r = worker_report(w, np.zeros((1, 3)), MEAN, 0, rng=np.random.default_rng(2), magnitude=50.0)
    assert np.linalg.norm(r.g) == pytest.approx(50.0)


def test_server_round_zero_reports_fixed_point():
    params = np.array([[1.0, 2.0], [3.0, 4.0]])
    reports = [GradientReport(i, i % 2, np.zeros(2)) for i in range(4)]
    new = server_round(RoundState(0, params), reports, AggregationRule.median(), 0.5, ParameterSpace())
    assert np.array_equal(new.params, params) and new.t == 1
    assert [r.tolist() for r in new.rosters()] == [[0, 2], [1, 3]]


def test_server_round_quadratic_step_lands_on_target():
    rng = np.random.default_rng(3)
    workers = [mean_worker(rng.normal(size=(5, 2)), index=i) for i in range(5)]
    theta = np.array([[2.0, -1.0]])
    reports = [worker_report(w, theta, MEAN, 0) for w in workers]
    new = server_round(RoundState(0, theta), reports, AggregationRule.median(), 0.5, None)
    target = np.median(np.stack([w.data.x.mean(axis=0) for w in workers]), axis=0)
    assert np.allclose(new.params[0], target, atol=1e-12)


def test_server_round_empty_cluster_frozen():
    params = np.array([[1.0], [7.0]])
    reports = [GradientReport(0, 0, np.array([2.0]))]
    new = server_round(RoundState(0, params), reports, AggregationRule.mean(), 0.5, None)
    assert new.params.tolist() == [[0.0], [7.0]]


def test_server_round_rejects_nonfinite(caplog):
    params = np.array([[1.0]])
    reports = [GradientReport(0, 0, np.array([np.nan])), GradientReport(1, 0, np.array([2.0])),
               GradientReport(2, 0, np.array([np.inf]))]
    with caplog.at_level(logging.WARNING):
        new = server_round(RoundState(0, params), reports, AggregationRule.median(), 0.5, None)
    assert new.params.tolist() == [[0.0]]
    assert "non-finite" in caplog.text
    only_bad = server_round(RoundState(0, params), reports[:1], AggregationRule.median(), 0.5, None)
    assert only_bad.params.tolist() == [[1.0]]


def test_server_round_projects():
    params = np.array([[0.0, 0.0]])
    reports = [GradientReport(0, 0, np.array([-100.0, 0.0]))]
    new = server_round(RoundState(0, params), reports, AggregationRule.mean(), 1.0, ParameterSpace(2.0))
    assert new.params.tolist() == [[2.0, 0.0]]


def mean_config(**kw):
    base = dict(model="mean_squared", k=3, m=60, d=10, n_per_machine=50, alpha=0.0,
                sigma2=0.01, T=100, seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


def run(cfg, rule, **kw):
    truth = ground_truth_for(cfg)
    return run_algorithm(cfg, truth, generate_population(cfg, truth), rule, **kw)


def test_noiseless_warm_start_converges():
    cfg = mean_config(sigma2=0.0, T=50)
    rec = run(cfg, AggregationRule.median())
    assert len(rec.rows) == 51 and rec.rows[0].iteration == 0
    assert rec.final_dist < 1e-6


def contraction_errors(cfg):
    rec = run(cfg, AggregationRule.median())
    return rec.dists()


def assert_contracts(errs, factor=0.5):
    for before, after in zip(errs[:-1], errs[1:]):
        if before > 1e-12:
            assert after / before <= factor + 1e-12
        else:
            assert after <= 1e-12


def test_contraction_single_cluster_noiseless():
    for seed in range(5):
        cfg = mean_config(k=1, m=10, sigma2=0.0, T=50, seed=seed, radius=100.0)
        assert_contracts(contraction_errors(cfg))


def test_contraction_with_smaller_step_is_geometric():
    # step 1/4 on a 2-smooth quadratic contracts by exactly 1/2 per round
    cfg = mean_config(k=1, m=10, sigma2=0.0, T=30, gamma=0.25, seed=4)
    errs = contraction_errors(cfg)
    assert errs[0] > 0.01
    assert_contracts(errs)
    assert errs[10] / errs[0] == pytest.approx(0.5**10, rel=1e-6)


def test_option_equivalence_at_maximal_trim():
    # k=1, 5 honest machines, beta=0.4 trims 2 of 5: trimmed mean equals median
    cfg = mean_config(k=1, m=5, sigma2=0.5, T=20, beta=0.4)
    a = run(cfg, AggregationRule.median())
    b = run(cfg, AggregationRule.trimmed_mean(0.4))
    assert np.array_equal(a.final_params, b.final_params)
    assert [r.dist for r in a.rows] == [r.dist for r in b.rows]


def test_warm_init_within_radius():
    cfg = mean_config()
    truth = ground_truth_for(cfg)
    init = initial_params(cfg, truth)
    r = warm_radius(truth, cfg.space)
    assert r == pytest.approx(truth.delta / 4)
    assert np.all(np.linalg.norm(init - truth.params, axis=1) <= r + 1e-12)


def test_random_init_inside_space():
    cfg = mean_config(init_mode="random", radius=2.0)
    init = initial_params(cfg, ground_truth_for(cfg))
    assert np.all(np.linalg.norm(init, axis=1) <= 2.0 + 1e-12)


def test_setting_a_runs_full_length():
    cfg = ExperimentConfig(k=2, m=80, d=20, n_per_machine=100, alpha=0.05, beta=0.05,
                           sigma2=0.2, T=300, seed=3)
    rec = run(cfg, AggregationRule.trimmed_mean(cfg.beta))
    assert len(rec.rows) == 301
    assert [r.iteration for r in rec.rows] == list(range(301))
    assert all(r.dist >= 0 for r in rec.rows)


def test_run_is_deterministic():
    cfg = mean_config(alpha=0.1, T=20, seed=11)
    a = run(cfg, AggregationRule.trimmed_mean(0.1))
    b = run(cfg, AggregationRule.trimmed_mean(0.1))
    assert a.rows == b.rows


def test_resampling_mode_runs_and_differs():
    cfg = mean_config(n_per_machine=40, T=20, resampling=True)
    rec = run(cfg, AggregationRule.median())
    plain = run(replace(cfg, resampling=False), AggregationRule.median())
    assert len(rec.rows) == 21
    assert rec.final_dist < 0.1
    assert rec.final_dist != plain.final_dist


def test_resampling_needs_enough_samples():
    with pytest.raises(ConfigError):
        run(mean_config(n_per_machine=10, T=20, resampling=True), AggregationRule.median())


@pytest.mark.parametrize("attack", ["scaled_eval", "arbitrary_vector", "sign_flip", "omniscient_target_smallest"])
def test_every_attack_runs(attack):
    # 3 Byzantine machines can gang up on one cluster of ~23; beta=0.2 trims 4 per side
    cfg = mean_config(alpha=0.05, beta=0.2, T=15, attack=attack, attack_magnitude=1e3)
    rec = run(cfg, AggregationRule.trimmed_mean(cfg.beta))
    assert np.all(np.isfinite(rec.final_params))
    assert rec.final_dist < 0.5


def test_cluster_recovery_warm_start():
    accs = [run(mean_config(seed=s, T=30), AggregationRule.median()).final_accuracy for s in range(10)]
    assert np.mean(accs) >= 0.95


def test_fixed_assignments_freeze_clusters():
    cfg = mean_config(T=5)
    truth = ground_truth_for(cfg)
    workers = generate_population(cfg, truth)
    fixed = np.zeros(cfg.m, dtype=int)
    rec = run_algorithm(cfg, truth, workers, AggregationRule.median(), fixed_assignments=fixed)
    # every machine is pinned to cluster 0: only one honest third is credited
    assert rec.final_accuracy == pytest.approx(1 / 3)


def test_error_floor_grows_with_byzantine_fraction():
    finals = {}
    for alpha in (0.0, 0.05, 0.1):
        finals[alpha] = np.mean([
            run(mean_config(alpha=alpha, m=60, T=40, seed=s, sigma2=0.05), AggregationRule.median()).final_dist
            for s in range(20)
        ])
    assert finals[0.0] <= finals[0.05] <= finals[0.1]


def test_fedavg_fragile_against_scaled_eval():
    wins = 0
    for s in range(20):
        cfg = ExperimentConfig(k=2, m=40, d=10, n_per_machine=50, alpha=0.1, beta=0.1,
                               sigma2=0.2, T=60, seed=s)
        fed = run(cfg, AggregationRule.mean()).final_dist
        trim = run(cfg, AggregationRule.trimmed_mean(cfg.beta)).final_dist
        wins += trim < fed
    assert wins >= 15  # sign test, p < 0.025 under a fair coin


def test_run_rejects_misindexed_workers():
    cfg = mean_config(T=2)
    truth = ground_truth_for(cfg)
    workers = generate_population(cfg, truth)[::-1]
    with pytest.raises(ConfigError):
        run_algorithm(cfg, truth, workers, AggregationRule.median())
