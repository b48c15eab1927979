"""Shared fixtures and random-instance helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ttfsnet.neuron import NeuronModelConfig, Variant, solve_firing_time

settings.register_profile(
    "suite", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow,
                           HealthCheck.filter_too_much,
                           HealthCheck.data_too_large])
settings.load_profile("suite")

VARIANTS = (Variant.NON_LEAKY, Variant.CURRENT_SYNAPSE,
            Variant.ALPHA_SYNAPSE)

HORIZON = 16.0


def model_for(variant: Variant, tau: float = 1.0,
              vth: float = 1.0) -> NeuronModelConfig:
    return NeuronModelConfig(variant=variant, tau=tau, v_threshold=vth)


def random_instance(rng: np.random.Generator, n_max: int = 8,
                    absent_p: float = 0.15):
    """Weights in [-1, 2], spike times in [0, 5], a few absent inputs."""
    n = int(rng.integers(1, n_max + 1))
    w = rng.uniform(-1.0, 2.0, n)
    t = rng.uniform(0.0, 5.0, n)
    t[rng.random(n) < absent_p] = np.inf
    return w, t


def gamma_stable(model: NeuronModelConfig, w: np.ndarray, t: np.ndarray,
                 h: float, horizon: float = HORIZON) -> bool:
    """True when every FD probe keeps the verdict and causal set unchanged.

    Finite differences on the firing time are only meaningful while the
    causal index set stays fixed; near a set change the closed form is
    only one-sided differentiable.
    """
    base = solve_firing_time(model, w, t, horizon)
    if not base.fired:
        return False
    ref = set(base.causal_set)

    def same(sol) -> bool:
        return sol.fired and set(sol.causal_set) == ref

    for j in range(len(w)):
        for sign in (+1.0, -1.0):
            wp = w.copy()
            wp[j] += sign * h
            if not same(solve_firing_time(model, wp, t, horizon)):
                return False
        if np.isfinite(t[j]):
            for sign in (+1.0, -1.0):
                tp = t.copy()
                tp[j] += sign * h
                if tp[j] < 0:
                    return False
                if not same(solve_firing_time(model, w, tp, horizon)):
                    return False
    return True


@pytest.fixture(scope="session", autouse=True)
def _compile_kernels():
    """Touch the compiled paths once so JIT cost lands outside the tests."""
    m = model_for(Variant.ALPHA_SYNAPSE)
    solve_firing_time(m, np.array([3.0]), np.array([0.0]), HORIZON)
    yield
