import numpy as np
import pytest

from phast.autodiff import ParamStore
from phast.linalg import ConstantDiagLowRank, DampingField, MLPHeads
from phast.nn import Featurizer
from phast.rng import stream


def random_field(n, rank, seed, cap=None, d0=0.2, angular=None):
    """Damping field with q-dependent perceptron heads and random weights."""
    params = ParamStore()
    ang = np.zeros(n, dtype=bool) if angular is None else np.asarray(angular, dtype=bool)
    heads = MLPHeads(params, "D", Featurizer(ang), n, rank, 8, stream(seed, "heads"), strength_offset=0.0)
    return DampingField(n, d0, heads, cap)


def random_mass(n, rank, seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.2, 3.0, n)
    U = rng.normal(size=(n, rank)) if rank else None
    return ConstantDiagLowRank(d, U), d, U


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def windy_known():
    """KNOWN-regime model trained for 20 epochs on desk-scale windy-pendulum data."""
    from phast.envs import DESK_SIZES, generate_dataset, get_env
    from phast.factory import ModelConfig, build_model, data_stats
    from phast.training import TrainConfig, train

    env = get_env("pendulum_windy")
    ds = generate_dataset(env, DESK_SIZES, seed=42)
    stats = data_stats(env, ds["train"].q)
    model, observer, canon = build_model(env, "KNOWN", ModelConfig(), 0, stats)
    trainer = train(model, observer, canon, ds["train"].q, ds["val"].q, env.dt, config=TrainConfig(epochs=20), seed=0)
    return {"env": env, "data": ds, "model": model, "observer": observer, "canon": canon, "trainer": trainer}
