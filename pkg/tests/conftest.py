"""Shared fixtures and oracle helpers.

Expensive trained checkpoints are cached under artifacts/ at the repository
root: a test session trains them once if they are missing, and every later
session reuses the files (training is deterministic for a fixed config, so
the cache does not change outcomes).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from liveview import tensor as T
from liveview.training import TrainConfig, train

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"

# Matched-iteration trio for the ablation direction check.
ABLATION_ITERS = 1500


def grad_check(fn, tensors, rtol=1e-5, seed=0, h=1e-6):
    """Directional finite-difference check in float64.

    `fn()` rebuilds the graph from `tensors` and returns a scalar tensor.
    Compares the analytic directional derivative <grad, v> against central
    differences along a random direction v, per input tensor.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        assert t.data.dtype == np.float64, "grad checks must run in float64"
        t.zero_grad()
    loss = fn()
    loss.backward()
    # central differences cancel to ~eps*|f|/h; derivatives below that floor
    # carry no signal and are compared absolutely instead of relatively
    noise = 100.0 * np.finfo(np.float64).eps * max(1.0, abs(loss.item())) / h
    for t in tensors:
        v = rng.standard_normal(t.data.shape)
        t.data = t.data + h * v
        f_plus = fn().item()
        t.data = t.data - 2 * h * v
        f_minus = fn().item()
        t.data = t.data + h * v
        numeric = (f_plus - f_minus) / (2 * h)
        analytic = float(np.sum(t.grad * v))
        if abs(numeric - analytic) < noise:
            continue
        scale = max(abs(numeric), abs(analytic))
        assert abs(numeric - analytic) / scale < rtol, (
            f"directional derivative mismatch: numeric {numeric}, analytic {analytic}")


def rand_t(rng, shape, scale=1.0):
    return T.Tensor(rng.standard_normal(shape) * scale, requires_grad=True,
                    dtype=np.float64)


def _cached_train(name: str, config: TrainConfig):
    ARTIFACTS.mkdir(exist_ok=True)
    path = ARTIFACTS / f"{name}.lvw"
    if not path.exists():
        train(config, checkpoint_path=path, log_path=ARTIFACTS / f"{name}_log.csv")
    from liveview.network import LiveViewNet

    return LiveViewNet.load(path)


@pytest.fixture(scope="session")
def trained_net():
    """The default full training run (5K iterations, V=5, D=16)."""
    return _cached_train("main_v5_d16", TrainConfig(seed=0, iterations=5000))


@pytest.fixture(scope="session")
def ablation_nets():
    """Three networks trained with identical budgets: target-centered
    dynamic, input-centered dynamic, and the static all-planes variant."""
    target = _cached_train("ablate_target_dyn", TrainConfig(seed=1, iterations=ABLATION_ITERS))
    inputc = _cached_train("ablate_input_dyn",
                           TrainConfig(seed=1, iterations=ABLATION_ITERS, centering="input"))
    static = _cached_train("ablate_static",
                           TrainConfig(seed=1, iterations=ABLATION_ITERS, arch="static"))
    return target, inputc, static


@pytest.fixture(scope="session")
def tiny_net():
    """A deterministic untrained network for plumbing tests."""
    from liveview.network import LiveViewNet, ModelMeta, NetworkConfig

    return LiveViewNet(NetworkConfig(num_views=5), seed=3,
                       meta=ModelMeta(centering="target", trained_planes=16,
                                      z_near=2.0, z_far=10.0))
