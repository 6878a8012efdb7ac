"""Forecasting and identifiability metrics."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .envs import EnvSpec, env_energy, true_damping
from .errors import ContractViolation
from .geometry import manifold_diff, wrap
from .observer import observer_velocity, rollout_autoregressive, rollout_takeover, canonicalize
from .integrators import model_step

__all__ = [
    "wrap",
    "manifold_kind",
    "manifold_mse",
    "one_step_predictions",
    "rollout_eval",
    "damping_recovery",
    "energy_budget_residual",
    "passivity_violations",
    "persistence_rollout",
    "METRIC_KEYS",
    "is_registered_key",
    "aggregate",
]

PASSIVITY_TOL = 1e-6


def manifold_kind(angular) -> str:
    angular = np.asarray(angular, dtype=bool)
    if angular.all():
        return "angular"
    if not angular.any():
        return "euclidean"
    return "mixed"


def manifold_mse(pred, true, angular) -> float:
    """Mean over steps of the squared (wrapped) error norm; mixed = 1/2 (MSE_x + WrapMSE_theta)."""
    pred, true = np.asarray(pred, dtype=float), np.asarray(true, dtype=float)
    if pred.shape != true.shape:
        raise ContractViolation(f"shape mismatch {pred.shape} vs {true.shape}")
    angular = np.asarray(angular, dtype=bool)
    if pred.size == 0:
        return 0.0
    sq = manifold_diff(pred, true, angular) ** 2
    steps = sq.reshape(-1, sq.shape[-1])
    kind = manifold_kind(angular)
    if kind != "mixed":
        return float(np.mean(np.sum(steps, axis=-1)))
    mse_x = np.mean(np.sum(steps[:, ~angular], axis=-1))
    mse_t = np.mean(np.sum(steps[:, angular], axis=-1))
    return float(0.5 * (mse_x + mse_t))


def _metric_name(kind: str) -> str:
    return {"angular": "theta_wrap_mse", "euclidean": "mse", "mixed": "mixed_mse"}[kind]


def one_step_predictions(model, observer, canon, q_seq, dt) -> np.ndarray:
    """Teacher-forced predictions of q[:, 1:], shape (B, T-1, n)."""
    q = np.asarray(q_seq, dtype=float)
    B, T, n = q.shape
    with ad.no_grad():
        v = observer_velocity(observer, q, dt, model.angular).value
        qt = ad.Tensor(q[:, :-1].reshape(-1, n))
        pt = canonicalize(canon, model.mass, qt, ad.Tensor(v[:, :-1].reshape(-1, n)))
        q_next, _ = model_step(model, qt, pt)
    return q_next.value.reshape(B, T - 1, n)


def persistence_rollout(q_seq, K: int, H: int) -> np.ndarray:
    q = np.asarray(q_seq, dtype=float)
    return np.repeat(q[:, K - 1:K], H, axis=1)


def damping_recovery(model, env: EnvSpec, q_samples):
    """(R2, MAE, R2 of the scalar per-sample mean) of the diagonal damping readout."""
    q = np.asarray(q_samples, dtype=float).reshape(-1, env.n_dof)
    with ad.no_grad():
        d_hat = model.damping.diagonal(ad.Tensor(q)).value
    d = true_damping(env, q)

    def r2(a, b):
        return float(1.0 - np.sum((a - b) ** 2) / (np.sum((b - b.mean()) ** 2) + 1e-12))

    mae = float(np.mean(np.abs(d_hat - d)))
    return r2(d_hat, d), mae, r2(d_hat.mean(axis=-1), d.mean(axis=-1))


def _rollout_energies(env: EnvSpec, q_roll, dt):
    """Finite-difference velocities and energies along (B, H+1, n) rollouts."""
    ang = env.angular_mask
    v = manifold_diff(q_roll[:, 1:], q_roll[:, :-1], ang) / dt
    H = env_energy(env, q_roll[:, 1:], v)
    return v, H


def energy_budget_residual(env: EnvSpec, q_roll, dt) -> float:
    """Mean |(H_{h+1} - H_h)/dt + D_env(q_h) |v_h|^2| over a rollout including its start point."""
    q_roll = np.asarray(q_roll, dtype=float)
    if q_roll.shape[1] < 3:
        return 0.0
    v, H = _rollout_energies(env, q_roll, dt)
    d = true_damping(env, q_roll[:, :-1])
    rho = (H[:, 1:] - H[:, :-1]) / dt + np.sum(d[:, :-1] * v[:, :-1] ** 2, axis=-1)
    return float(np.mean(np.abs(rho)))


def passivity_violations(energies, tol: float = PASSIVITY_TOL) -> float:
    """Fraction of steps where the energy sequence (B, L) increases by more than tol."""
    e = np.atleast_2d(np.asarray(energies, dtype=float))
    if e.shape[1] < 2:
        return 0.0
    return float(np.mean(np.diff(e, axis=1) > tol))


def rollout_passivity(env: EnvSpec, q_roll, dt, tol: float = PASSIVITY_TOL) -> float:
    _, H = _rollout_energies(env, np.asarray(q_roll, dtype=float), dt)
    return passivity_violations(H, tol)


def rollout_eval(model, observer, canon, env: EnvSpec, q_test, K: int = 10, horizons=(10, 50, 100),
                 takeover: bool = True) -> dict:
    """One-step, rollout, damping and energy metrics on a test split (B, T, n)."""
    q = np.asarray(q_test, dtype=float)
    ang = env.angular_mask
    kind = manifold_kind(ang)
    name = _metric_name(kind)
    Hmax = max(horizons)
    if K + Hmax > q.shape[1]:
        raise ContractViolation(f"trajectory length {q.shape[1]} too short for K={K}, H={Hmax}")
    report = {}
    pred1 = one_step_predictions(model, observer, canon, q, env.dt)
    report[name] = manifold_mse(pred1, q[:, 1:], ang)
    if kind == "mixed":
        report["mse"] = manifold_mse(pred1[..., ~ang], q[:, 1:, ~ang], ang[~ang])
        report["theta_wrap_mse"] = manifold_mse(pred1[..., ang], q[:, 1:, ang], ang[ang])

    truth = q[:, K:K + Hmax]
    modes = {"rollout": rollout_autoregressive(model, observer, q, K, Hmax, env.dt, canon)}
    if takeover:
        modes["rollout_takeover"] = rollout_takeover(model, observer, q, K, Hmax, env.dt, canon)
    modes["persistence"] = persistence_rollout(q, K, Hmax)
    for mode, pred in modes.items():
        for H in horizons:
            report[f"{mode}_{name}_h{H}"] = manifold_mse(pred[:, :H], truth[:, :H], ang)
    if env.has_energy:
        full = np.concatenate([q[:, K - 1:K], modes["rollout"]], axis=1)
        for H in horizons:
            report[f"rollout_energy_budget_resid_h{H}"] = energy_budget_residual(env, full[:, :H + 1], env.dt)
            report[f"rollout_passivity_violations_h{H}"] = rollout_passivity(env, full[:, :H + 1], env.dt)
    if env.has_damping_law and model.damping is not None:
        r2, mae, r2s = damping_recovery(model, env, q)
        report["damping_r2"], report["damping_mae"], report["damping_r2_scalar"] = r2, mae, r2s
    report["n_trajectories"] = int(q.shape[0])
    report["burn_in"] = int(K)
    report["max_horizon"] = int(Hmax)
    return report


_BASES = ("theta_wrap_mse", "mse", "mixed_mse")
METRIC_KEYS = (
    set(_BASES)
    | {"damping_r2", "damping_mae", "damping_r2_scalar", "n_trajectories", "burn_in", "max_horizon"}
)


def is_registered_key(key: str) -> bool:
    if key in METRIC_KEYS:
        return True
    for prefix in ("rollout_takeover_", "rollout_", "persistence_"):
        if key.startswith(prefix):
            rest = key[len(prefix):]
            base, _, h = rest.rpartition("_h")
            if h.isdigit() and (base in _BASES or (prefix == "rollout_" and base in (
                    "energy_budget_resid", "passivity_violations"))):
                return True
    return False


def aggregate(reports) -> dict:
    """Mean and population std over per-seed reports, keyed ``{key}_mean`` / ``{key}_std``."""
    keys = sorted(set().union(*[r.keys() for r in reports]))
    out = {}
    for k in keys:
        vals = np.array([r[k] for r in reports if k in r], dtype=float)
        out[f"{k}_mean"] = float(vals.mean())
        out[f"{k}_std"] = float(vals.std())
    return out
