"""Shared fixtures; the expensive artifacts (million-draw Beta samples, the
desk-scale benchmark runs) are computed once per session and reused by the
unit tests and the acceptance suite."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from protofed.config import ExperimentConfig
from protofed.federation import run_experiment
from protofed.numerics import Rng, sample_beta

# Desk-scale benchmark: K=5, D=4, 8 clients split 3/2/1/2, half the pool each.
BENCHMARK = ExperimentConfig(rounds=30, epochs=5)

# Heavily skewed variant: domain 0 holds 5 of 8 clients; more classes, lower
# capacity and strong shift keep accuracy off the ceiling so aggregator and
# component differences are visible.
SKEWED_VARIANT = ExperimentConfig(
    rounds=30,
    epochs=5,
    clients_per_domain=(5, 1, 1, 1),
    num_classes=8,
    arch=(16, 16, 8),
    per_class_count=80,
    sampling_rate=0.4,
    data_shift=3.0,
    data_noise=0.4,
    data_anchor_scale=1.0,
)


@pytest.fixture(scope="session")
def beta_draws():
    """alpha -> one million Beta(alpha, alpha) draws at a fixed seed."""
    cache: dict[float, np.ndarray] = {}

    def get(alpha: float, n: int = 1_000_000) -> np.ndarray:
        if alpha not in cache:
            rng = Rng(123, 7)
            cache[alpha] = np.array([sample_beta(rng, alpha) for _ in range(n)])
        return cache[alpha]

    return get


@pytest.fixture(scope="session")
def benchmark_runs():
    """seed -> full-method run of the default desk benchmark."""
    cache = {}

    def get(seed: int):
        if seed not in cache:
            cache[seed] = run_experiment(replace(BENCHMARK, seed=seed))
        return cache[seed]

    return get


@pytest.fixture(scope="session")
def fedavg_pair():
    """(federation degenerate-mode reports, naive FedAvg oracle reports) on
    the benchmark config, same seed."""
    from oracles import naive_fedavg_loop

    cfg = replace(
        BENCHMARK, gpcl_enabled=False, apa_enabled=False, mixup_mode="off", seed=0
    )
    fed = run_experiment(cfg)
    naive = naive_fedavg_loop(cfg)
    return fed.reports, naive
