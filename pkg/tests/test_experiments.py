import math

import numpy as np
import pytest

from skspec.cli import csv_bytes
from skspec.experiments import (
    cov_experiment,
    default_steps,
    heat_limit_errors,
    oracle_experiment,
    sk_experiment,
    sk_seed,
    variance_law,
    wick_experiment,
)


def test_default_steps():
    assert default_steps(0.25, (0.2, 0.1, 0.05, 0.0)) == 100
    assert default_steps(0.1, (0.0,)) == 64


def test_heat_limit_errors_second_order_away_from_node():
    _, ratios = heat_limit_errors((1, 0), 1.0)
    assert all(3.5 < r < 4.5 for r in ratios)


def test_variance_law_checks():
    law, limit = variance_law(N=128)
    assert law.passed and limit.passed


def test_wick_experiment_small():
    res = wick_experiment([1, 2, 3], eps=(0.0,), N_list=(4, 8, 16), beta=math.sqrt(math.pi), log_law_N=0)
    seeds = res.tables["wick_cauchy_seeds"][1]
    assert len(seeds) == 9 and [r[0] for r in seeds] == sorted(r[0] for r in seeds)
    assert all(np.isfinite(r[3]) and np.isfinite(r[4]) for r in seeds)
    assert {c.name.split("[")[0] for c in res.checks} == {"wick_cauchy_decreasing", "gmc_cauchy_decreasing",
                                                          "gmc_mean"}


def test_wick_mapper_order_independent():
    a = wick_experiment([2, 1], eps=(0.0,), N_list=(4, 8), log_law_N=0)
    b = wick_experiment([1, 2], eps=(0.0,), N_list=(4, 8), log_law_N=0,
                        mapper=lambda f, xs: reversed([f(x) for x in xs]))
    assert csv_bytes(*a.tables["wick_cauchy_seeds"]) == csv_bytes(*b.tables["wick_cauchy_seeds"])


def test_cov_experiment_small():
    res = cov_experiment(eps=(0.0,), N_list=(8, 16), levels=4)
    names = [c.name for c in res.checks]
    assert any(n.startswith("cov_difference") for n in names)
    assert all(c.passed for c in res.checks)


def test_oracle_experiment_small():
    res = oracle_experiment(eps=(0.0,), K=64, K_list=(8, 16, 32), K_ref=256)
    agree = next(c for c in res.checks if c.name.startswith("oracle_agreement"))
    assert agree.passed


def test_sk_seed_and_experiment():
    out = sk_seed(5, "polynomial", (0.1, 0.0), N=4, M=32, T=0.02, K=4)
    assert out["seed"] == 5 and len(out["distances"]) == 1 and not out["blowups"]
    assert len(out["norms"]) == 2 * 5
    res = sk_experiment([1, 2, 3], eps=(0.2, 0.1, 0.05, 0.0), N=4, M=32, T=0.05)
    conv = res.tables["convergence"][1]
    assert [r[0] for r in conv] == [0.2, 0.1, 0.05]
    with pytest.raises(ValueError):
        sk_experiment([1], eps=(0.2, 0.1))
