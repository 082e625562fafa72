import math

import numpy as np

from ccgp.experiment import ExperimentConfig, SeedResult, aggregate, run_experiment


def test_small_experiment_runs_and_aggregates():
    cfg = ExperimentConfig(dims=(3, 3), k_min=2, k_max=12, seeds=(0, 1, 2), iters=30)
    X, results, rows = run_experiment(cfg)
    assert X.counts == (16, 33, 18)
    assert all(r.error is None for r in results)
    assert {r["model"] for r in rows} == {"matern", "rd"}
    for r in results:
        for model in ("matern", "rd"):
            counts = [r.metrics[model][d]["count"] for d in range(3)]
            assert counts == [16 - 5, 33 - 11, 18 - 6]
            assert r.fits[model].iterations == 30


def test_threads_match_sequential():
    base = dict(dims=(2, 2), k_min=2, k_max=8, seeds=(3, 4), iters=15)
    _, _, seq = run_experiment(ExperimentConfig(**base))
    _, _, par = run_experiment(ExperimentConfig(workers=2, **base))
    assert seq == par


def test_aggregate_standard_error():
    rs = []
    for i, v in enumerate([1.0, 2.0, 4.0]):
        r = SeedResult(i)
        r.metrics = {"matern": {0: {"mse": v, "nll": -v, "count": 1}}, "rd": {0: {"mse": v / 2, "nll": v, "count": 1}}}
        rs.append(r)
    rs.append(SeedResult(9, error="boom"))
    rows = {(r["model"], r["dim"]): r for r in aggregate(rs)}
    m = rows[("matern", 0)]
    assert m["mse_mean"] == np.mean([1, 2, 4]) and m["n_seeds"] == 3
    assert math.isclose(m["mse_se"], np.std([1, 2, 4], ddof=1) / math.sqrt(3))
