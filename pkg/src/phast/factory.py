"""Build a model and observer for an environment under a knowledge regime."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .envs import EnvSpec, _diag_mass, _family, _nonseparable
from .errors import ConfigError
from .hamiltonian import KNOWN, PARTIAL, UNKNOWN, HamiltonianModel
from .linalg import ConstantDiagLowRank, ConstantHeads, DampingField, KnownAnalytic, MLPHeads, _softplus_inv
from .nn import Featurizer
from .observer import ObserverNet, fd_velocity
from .potentials import Cosine, GravityN, HeatExchange, Hybrid, LennardJones, NeuralMLP, Quadratic, RLC
from .rng import stream

__all__ = ["ModelConfig", "DataStats", "data_stats", "structured_potential", "analytic_mass", "build_model"]


@dataclass(frozen=True)
class ModelConfig:
    damping_rank: int = 2
    damping_hidden: int = 64
    damping_heads: str = "mlp"  # mlp | constant
    damping_cap: float | None = None
    d0_policy: str | None = None  # fixed | learned; None picks the regime default
    d0_fixed: float | None = None  # None uses the environment's base damping
    d0_init: float = 0.1
    mass: str = "auto"  # auto | constant | analytic (given-mass regimes)
    mass_rank: int | None = None  # learned mass; None gives min(4, n)
    potential_hidden: int = 64
    potential_layers: int = 3
    observer_hidden: int = 32
    substeps: int = 1
    learnable_dt: bool = True
    canonicalizer: str = "auto"  # auto | identity | mass_consistent
    rho_init: float = -3.0
    damping_step: str = "implicit"  # implicit | explicit

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DataStats:
    q_shift: np.ndarray
    q_scale: np.ndarray
    v_scale: np.ndarray


def data_stats(env: EnvSpec, q: np.ndarray) -> DataStats:
    """Fixed input normalization from training positions (N, T, n)."""
    ang = env.angular_mask
    flat = q.reshape(-1, q.shape[-1])
    shift = np.where(ang, 0.0, flat.mean(axis=0))
    scale = np.where(ang, 1.0, np.maximum(flat.std(axis=0), 1e-3))
    fd = fd_velocity(q, env.dt, ang)[:, 1:].reshape(-1, q.shape[-1])
    v_scale = np.maximum(np.sqrt(np.mean(fd**2, axis=0)), 1e-3)
    return DataStats(shift, scale, v_scale)


def structured_potential(env: EnvSpec):
    c, fam = env.constants, _family(env)
    if fam == "pendulum":
        return Cosine([c["m"] * c["g"] * c["l"]])
    if fam == "cartpole":
        return Cosine([0.0, c["m_p"] * c["g"] * c["l"]])
    if fam == "oscillator":
        return Quadratic(c["omega"] ** 2 * np.eye(2))
    if fam == "doublepend":
        return Cosine([(c["m1"] + c["m2"]) * c["g"] * c["l1"], c["m2"] * c["g"] * c["l2"]])
    if fam == "rlc":
        return RLC(c["C"])
    if fam == "heat":
        return HeatExchange(c["c1"], c["c2"], c["kappa"])
    if fam == "lj3":
        return LennardJones(3, 2, c["eps"], c["sigma"], c["soft"])
    if fam == "nbody3":
        return GravityN(c["masses"], 2, c["G"], c["soft"])
    raise ConfigError(f"{env.name} has no structured potential; use the UNKNOWN regime")


def analytic_mass(env: EnvSpec) -> KnownAnalytic:
    """M(q) as a closure over tape/dual operations."""
    c, fam = env.constants, _family(env)
    if fam == "cartpole":
        a, coef, d = c["m_c"] + c["m_p"], c["m_p"] * c["l"], c["m_p"] * c["l"] ** 2

        def fn(q):
            b = ad.cos(q[..., 1]) * coef
            zero = b * 0.0
            return ad.stack([ad.stack([zero + a, b], -1), ad.stack([b, zero + d], -1)], -2)

    elif fam == "doublepend":
        a, coef, d = (c["m1"] + c["m2"]) * c["l1"] ** 2, c["m2"] * c["l1"] * c["l2"], c["m2"] * c["l2"] ** 2

        def fn(q):
            b = ad.cos(q[..., 0] - q[..., 1]) * coef
            zero = b * 0.0
            return ad.stack([ad.stack([zero + a, b], -1), ad.stack([b, zero + d], -1)], -2)

    else:
        raise ConfigError(f"{env.name} has a constant mass")
    return KnownAnalytic(fn, 2, name=env.name)


def _given_constant_mass(env: EnvSpec) -> ConstantDiagLowRank:
    if _nonseparable(env):
        # average of M(q) over uniform angles: the off-diagonal cosine averages to zero
        c = env.constants
        if _family(env) == "cartpole":
            return ConstantDiagLowRank(np.array([c["m_c"] + c["m_p"], c["m_p"] * c["l"] ** 2]))
        return ConstantDiagLowRank(np.array([(c["m1"] + c["m2"]) * c["l1"] ** 2, c["m2"] * c["l2"] ** 2]))
    return ConstantDiagLowRank(_diag_mass(env))


def base_damping(env: EnvSpec) -> float:
    c = env.constants
    if env.name in ("pendulum_windy", "cartpole_windy"):
        return float(c["d0"])
    return 0.0


def build_model(env: EnvSpec, regime: str, cfg: ModelConfig | None = None, seed: int = 0,
                stats: DataStats | None = None):
    """Return (model, observer, canonicalizer mode) with regime-specific trainable flags.

    Parameter groups: ``V.*`` potential, ``M.*`` mass, ``D.*`` damping,
    ``dt.raw`` internal timestep, ``obs.*`` observer. Initial values are drawn
    from one stream per group, in that order.
    """
    cfg = cfg or ModelConfig()
    if regime not in (KNOWN, PARTIAL, UNKNOWN):
        raise ConfigError(f"unknown regime {regime!r}")
    n, ang = env.n_dof, env.angular_mask
    stats = stats or DataStats(np.zeros(n), np.ones(n), np.ones(n))
    params = ParamStore()

    # potential
    rng_v = stream(seed, "init", "V")
    if regime == UNKNOWN:
        feat = Featurizer(ang, 2, stats.q_shift, stats.q_scale)
        potential = NeuralMLP(params, "V.net", feat, rng_v, cfg.potential_hidden, cfg.potential_layers)
    else:
        base = structured_potential(env)
        if regime == PARTIAL:
            feat = Featurizer(ang, 2, stats.q_shift, stats.q_scale)
            residual = NeuralMLP(params, "V.residual", feat, rng_v, cfg.potential_hidden, cfg.potential_layers)
            rho = params.add("V.rho", np.array(cfg.rho_init), decay=False)
            potential = Hybrid(base, residual, rho)
        else:
            potential = base

    # mass
    rng_m = stream(seed, "init", "M")
    mass_choice = cfg.mass
    if regime == UNKNOWN:
        rank = min(4, n) if cfg.mass_rank is None else cfg.mass_rank
        mass = ConstantDiagLowRank.learned(params, "M", n, rank, rng_m)
    elif mass_choice == "analytic" and _nonseparable(env):
        mass = analytic_mass(env)
    elif mass_choice in ("auto", "constant", "analytic"):
        mass = _given_constant_mass(env)
    else:
        raise ConfigError(f"unknown mass option {mass_choice!r}")

    # damping
    rng_d = stream(seed, "init", "D")
    policy = cfg.d0_policy or ("fixed" if regime == PARTIAL else "learned")
    if cfg.damping_rank > 0:
        if cfg.damping_heads == "mlp":
            feat = Featurizer(ang, 2, stats.q_shift, stats.q_scale)
            offset = 0.0 if cfg.damping_cap is not None else -2.0
            heads = MLPHeads(params, "D.heads", feat, n, cfg.damping_rank, cfg.damping_hidden, rng_d, offset)
        elif cfg.damping_heads == "constant":
            heads = ConstantHeads(params, "D.heads", n, cfg.damping_rank, rng_d,
                                  0.0 if cfg.damping_cap is not None else -2.0)
        else:
            raise ConfigError(f"unknown damping head type {cfg.damping_heads!r}")
    else:
        heads = None
    if policy == "learned":
        damping = DampingField.learned_d0(params, "D.d0", n, cfg.d0_init, heads, cfg.damping_cap)
    elif policy == "fixed":
        d0 = base_damping(env) if cfg.d0_fixed is None else cfg.d0_fixed
        damping = DampingField(n, d0, heads, cfg.damping_cap)
    else:
        raise ConfigError(f"unknown d0 policy {policy!r}")

    # internal timestep
    L = int(cfg.substeps)
    if L < 1:
        raise ConfigError("substeps must be >= 1")
    h = env.dt / L
    if cfg.learnable_dt:
        dt_raw = params.add("dt.raw", np.full(L, _softplus_inv(h)), decay=False)
        dt_fixed = ()
    else:
        dt_raw, dt_fixed = None, tuple([h] * L)

    core = "leapfrog" if mass.is_constant else "midpoint"
    model = HamiltonianModel(potential, mass, damping, regime, params, ang, dt_raw, dt_fixed, core,
                             cfg.damping_step)

    observer = ObserverNet(params, "obs", ang, stream(seed, "init", "obs"), cfg.observer_hidden,
                           q_shift=stats.q_shift, q_scale=stats.q_scale, v_scale=stats.v_scale)

    if cfg.canonicalizer == "auto":
        canon = "identity" if regime == UNKNOWN else "mass_consistent"
    else:
        canon = cfg.canonicalizer

    # regime freezing: V and M are given in KNOWN; M is given in PARTIAL
    if regime == KNOWN:
        params.set_trainable("V", False)
        params.set_trainable("M", False)
    elif regime == PARTIAL:
        params.set_trainable("M", False)
    return model, observer, canon
