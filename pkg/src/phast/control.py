"""Energy-Casimir stabilization of the true pendulum under q-only feedback.

The controller holds a virtual state xi with storage k_c/2 (xi - q*)^2 and
injects damping through an online port estimate y_hat (the joint velocity
for a torque-actuated pendulum). Estimators differ only in how y_hat is
formed. Trials are simulated in batches; every per-trial quantity is computed
elementwise, so a trial gives the same record alone or inside a grid.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import autodiff as ad
from .autodiff import Tensor
from .envs import EnvSpec, env_rhs, env_velocity, get_env
from .errors import ContractViolation, ControlFault, IntegrationFault
from .geometry import wrap
from .integrators import rk4_step
from .observer import ObserverNet, observer_velocity
from .rng import stream

__all__ = [
    "ControlGains",
    "ControllerState",
    "control_step",
    "casimir_drift",
    "closed_loop_energy",
    "map_smoother",
    "map_smoother_velocity",
    "OracleEstimator",
    "FiniteDifferenceEstimator",
    "MapSmootherEstimator",
    "LearnedObserverEstimator",
    "ModelBasedEstimator",
    "model_based_port",
    "IC_REGIMES",
    "sample_regime_states",
    "ControlSettings",
    "run_control_batch",
    "run_control_trial",
    "train_control_observer",
    "aggregate_trials",
]


@dataclass(frozen=True)
class ControlGains:
    k_c: float = 10.0
    d_inj: float = 2.0
    k_xi: float = 5.0
    q_star: float = 0.0

    def __post_init__(self):
        if not self.k_c >= 0 or not self.d_inj >= 0 or not self.k_xi >= 0:
            raise ContractViolation("gains must be nonnegative (k_c > 0 for stabilization)")


@dataclass
class ControllerState:
    """Virtual state xi plus gains; ``v_ext(step)`` is an optional forcing signal."""

    xi: np.ndarray
    gains: ControlGains = field(default_factory=ControlGains)
    v_ext: object = None

    def forcing(self, step: int):
        return 0.0 if self.v_ext is None else self.v_ext(step)


def control_step(ctrl: ControllerState, y_hat, q_meas, dt: float, step: int = 0):
    """u = -k_c (xi - q*) + v_ext - d_inj y_hat;  xi+ = xi + dt (y_hat + k_xi (q_meas - xi))."""
    y_hat = np.asarray(y_hat, dtype=float)
    if not np.all(np.isfinite(y_hat)):
        raise ControlFault("non-finite port estimate", where=f"control step {step}")
    g = ctrl.gains
    xi = np.asarray(ctrl.xi, dtype=float)
    u = -g.k_c * (xi - g.q_star) + ctrl.forcing(step) - g.d_inj * y_hat
    xi_next = xi + dt * (y_hat + g.k_xi * (np.asarray(q_meas, dtype=float) - xi))
    return u, xi_next


def casimir_drift(q_trace, xi_trace) -> float:
    """max |q - xi| along a closed-loop trace."""
    q, xi = np.asarray(q_trace, dtype=float), np.asarray(xi_trace, dtype=float)
    if q.shape != xi.shape:
        raise ContractViolation(f"trace shapes differ: {q.shape} vs {xi.shape}")
    return float(np.max(np.abs(q - xi))) if q.size else 0.0


def closed_loop_energy(plant: EnvSpec, q, p, xi, gains: ControlGains):
    """H_cl = H_p(q, p) + k_c/2 (xi - q*)^2 for the pendulum plant."""
    from .envs import env_hamiltonian

    q = np.asarray(q, dtype=float)
    xi = np.asarray(xi, dtype=float)
    Hp = env_hamiltonian(plant, q.reshape(-1, 1), np.asarray(p, dtype=float).reshape(-1, 1)).reshape(q.shape)
    return Hp + 0.5 * gains.k_c * (xi - gains.q_star) ** 2


# ---------------------------------------------------------------------------
# MAP smoother
# ---------------------------------------------------------------------------


def _second_difference(w: int) -> np.ndarray:
    D = np.zeros((max(w - 2, 0), w))
    for s in range(w - 2):
        D[s, s:s + 3] = (1.0, -2.0, 1.0)
    return D


def map_smoother(window, dt: float, sigma: float, sigma_a: float = 10.0, angular: bool = True) -> np.ndarray:
    """Smoothed window minimizing the Gaussian measurement + acceleration-prior objective.

    ``window`` has shape (w,) or (w, B); angles are unwrapped along the window first.
    """
    q = np.asarray(window, dtype=float)
    w = q.shape[0]
    if w < 2:
        raise ContractViolation("MAP smoother needs a window of at least 2 samples")
    if angular:
        q = np.unwrap(q, axis=0)
    if sigma <= 0.0 or w == 2:
        return q
    # objective scaled by sigma^2: ||q - m||^2 + lam ||D q||^2
    lam = sigma**2 / (dt**4 * sigma_a**2)
    D = _second_difference(w)
    A = np.eye(w) + lam * (D.T @ D)
    return cho_solve(cho_factor(A), q)


def map_smoother_velocity(window, dt: float, sigma: float, sigma_a: float = 10.0, angular: bool = True):
    """Backward difference of the last two smoothed samples."""
    s = map_smoother(window, dt, sigma, sigma_a, angular)
    return (s[-1] - s[-2]) / dt


def map_objective(q_smooth, q_meas, dt: float, sigma: float, sigma_a: float = 10.0) -> float:
    q_smooth, q_meas = np.asarray(q_smooth, dtype=float), np.asarray(q_meas, dtype=float)
    acc = q_smooth[2:] - 2.0 * q_smooth[1:-1] + q_smooth[:-2]
    return float(np.sum((q_smooth - q_meas) ** 2) / sigma**2 + np.sum(acc**2) / (dt**4 * sigma_a**2))


# ---------------------------------------------------------------------------
# Port estimators: each maps (measurement history (t+1, B), true state) -> y_hat (B,)
# ---------------------------------------------------------------------------


class OracleEstimator:
    name = "oracle"

    def __init__(self, plant: EnvSpec):
        self.plant = plant

    def __call__(self, history, q, p):
        return env_velocity(self.plant, q[:, None], p[:, None])[:, 0]


class FiniteDifferenceEstimator:
    name = "fd"

    def __init__(self, dt: float):
        self.dt = dt

    def __call__(self, history, q, p):
        if len(history) < 2:
            return np.zeros_like(q)
        return wrap(history[-1] - history[-2]) / self.dt


class MapSmootherEstimator:
    name = "map"

    def __init__(self, dt: float, sigma: float, window: int = 10, sigma_a: float = 10.0):
        if window < 2:
            raise ContractViolation("MAP smoother window must be >= 2")
        self.dt, self.sigma, self.window, self.sigma_a = dt, float(sigma), int(window), float(sigma_a)

    def __call__(self, history, q, p):
        if len(history) < 2:
            return np.zeros_like(q)
        win = np.stack(history[-self.window:], axis=0)
        return map_smoother_velocity(win, self.dt, self.sigma, self.sigma_a)


class LearnedObserverEstimator:
    name = "observer"

    def __init__(self, net: ObserverNet, dt: float):
        self.net, self.dt = net, dt

    def __call__(self, history, q, p):
        win = np.stack(history[-self.net.context:], axis=1)[..., None]  # (B, w, 1)
        with ad.no_grad():
            v = observer_velocity(self.net, win, self.dt).value
        return v[:, -1, 0]


def model_based_port(model, q, p) -> np.ndarray:
    """y_hat = dH/dp = M^{-1} p through the model's mass."""
    with ad.no_grad():
        return model.velocity(Tensor(np.asarray(q, dtype=float)), Tensor(np.asarray(p, dtype=float))).value


class ModelBasedEstimator:
    """Full-state variant: the measured position and the true momentum through a learned mass."""

    name = "model_based"

    def __init__(self, model):
        self.model = model

    def __call__(self, history, q, p):
        return model_based_port(self.model, history[-1][:, None], p[:, None])[:, 0]


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

# (|q0| band, max |omega0|); signs are random
IC_REGIMES = {
    "near_stable": ((0.0, 0.1), 0.1),
    "small": ((0.1, 0.5), 0.5),
    "moderate": ((0.5, 1.5), 1.0),
    "large": ((1.5, 2.5), 1.5),
    "inverted": ((2.5, np.pi), 0.5),
}


def sample_regime_states(plant: EnvSpec, regime: str, n: int, seed: int):
    """Initial (q0, p0) arrays of shape (n,) for one regime, one stream per trial."""
    if regime not in IC_REGIMES:
        raise ContractViolation(f"unknown initial-condition regime {regime!r}")
    (lo, hi), wmax = IC_REGIMES[regime]
    q0, p0 = np.empty(n), np.empty(n)
    for i in range(n):
        rng = stream(seed, "control", "ic", regime, i)
        mag = rng.uniform(lo, hi)
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        omega = rng.uniform(-wmax, wmax)
        q0[i] = sign * mag
        p0[i] = plant.constants["m"] * plant.constants["l"] ** 2 * omega
    return q0, p0


@dataclass(frozen=True)
class ControlSettings:
    dt: float = 0.01
    T_ctl: float = 10.0
    success_tol: float = 0.05
    tail_fraction: float = 0.1

    @property
    def steps(self) -> int:
        return int(round(self.T_ctl / self.dt))


def _plant_step(plant: EnvSpec, x, u, dt, alive):
    field_ = lambda s: env_rhs(plant, s, u[:, None])
    try:
        return rk4_step(field_, x, dt), alive
    except IntegrationFault:
        out = np.empty_like(x)
        alive = alive.copy()
        for i in range(x.shape[0]):
            try:
                out[i] = rk4_step(lambda s: env_rhs(plant, s, u[i:i + 1, None]), x[i:i + 1], dt)[0]
            except IntegrationFault:
                out[i] = 0.0
                alive[i] = False
        return out, alive


def run_control_batch(plant: EnvSpec, gains: ControlGains, estimator, sigma: float, q0, p0, noise_seeds,
                      settings: ControlSettings = ControlSettings(), v_ext=None, record_trace: bool = False):
    """Closed-loop trials from (q0, p0), each with its own measurement-noise stream.

    Returns a list of trial records (and traces of q, xi, u when requested).
    """
    q0, p0 = np.asarray(q0, dtype=float).ravel(), np.asarray(p0, dtype=float).ravel()
    B, N, dt = q0.size, settings.steps, settings.dt
    noises = [stream(int(s[0]), *s[1:]) if isinstance(s, tuple) else stream(int(s), "control", "noise")
              for s in noise_seeds]
    if len(noises) != B:
        raise ContractViolation("one noise seed per trial is required")
    noise = np.stack([r.normal(0.0, 1.0, size=N) for r in noises], axis=0) * sigma  # (B, N)

    x = np.stack([q0, p0], axis=-1)
    alive = np.ones(B, dtype=bool)
    history = []
    q_meas0 = q0 + noise[:, 0]
    ctrl = ControllerState(xi=q_meas0.copy(), gains=gains, v_ext=v_ext)
    effort = np.zeros(B)
    vel_err = np.zeros(B)
    tail_start = N - max(1, int(round(settings.tail_fraction * N)))
    tail_err = np.zeros(B)
    drift = np.zeros(B)
    traces = {"q": [], "p": [], "xi": [], "u": [], "y_hat": []} if record_trace else None

    for t in range(N):
        q, p = x[:, 0], x[:, 1]
        q_meas = q + noise[:, t]
        history.append(q_meas)
        if len(history) > 64:
            history.pop(0)
        y_true = env_velocity(plant, q[:, None], p[:, None])[:, 0]
        y_hat = np.asarray(estimator(history, q, p), dtype=float)
        bad = ~np.isfinite(y_hat)
        if bad.any():
            alive &= ~bad
            y_hat = np.where(bad, 0.0, y_hat)
        drift = np.maximum(drift, np.abs(q - ctrl.xi))
        u, xi_next = control_step(ctrl, y_hat, q_meas, dt, t)
        u = np.where(alive, u, 0.0)
        if traces is not None:
            for k, v in (("q", q), ("p", p), ("xi", ctrl.xi), ("u", u), ("y_hat", y_hat)):
                traces[k].append(np.array(v, dtype=float))
        effort += u**2
        vel_err += np.abs(y_hat - y_true)
        if t >= tail_start:
            tail_err += np.abs(wrap(q - gains.q_star))
        x, alive = _plant_step(plant, x, u, dt, alive)
        alive &= np.all(np.isfinite(x), axis=-1)
        x = np.where(alive[:, None], x, 0.0)
        ctrl.xi = np.where(alive, xi_next, 0.0)

    final_err = tail_err / (N - tail_start)
    records = []
    for i in range(B):
        ok = bool(alive[i])
        records.append({
            "success": bool(ok and final_err[i] < settings.success_tol),
            "final_error": float(final_err[i]) if ok else float("nan"),
            "effort": float(effort[i]) if ok else float("nan"),
            "velocity_error": float(vel_err[i] / N) if ok else float("nan"),
            "casimir_drift": float(drift[i]) if ok else float("nan"),
            "diverged": not ok,
            "q0": float(q0[i]),
            "p0": float(p0[i]),
        })
    if traces is not None:
        return records, {k: np.stack(v, axis=1) for k, v in traces.items()}
    return records


def run_control_trial(plant: EnvSpec, gains: ControlGains, estimator, sigma: float, q0: float, p0: float,
                      seed: int = 0, settings: ControlSettings = ControlSettings(), v_ext=None,
                      record_trace: bool = False):
    """Single trial; the measurement noise comes from stream (seed, "control", "noise")."""
    out = run_control_batch(plant, gains, estimator, sigma, [q0], [p0], [seed], settings, v_ext, record_trace)
    if record_trace:
        recs, tr = out
        return recs[0], {k: v[0] for k, v in tr.items()}
    return out[0]


def gains_hash(gains: ControlGains, settings: ControlSettings, plant: EnvSpec, seed: int) -> str:
    payload = json.dumps({"gains": asdict(gains), "settings": asdict(settings), "plant": plant.snapshot(),
                          "seed": seed}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Observer for control: supervised, noise-augmented
# ---------------------------------------------------------------------------


def train_control_observer(plant: EnvSpec, gains: ControlGains, sigma_train, seed: int = 0,
                           settings: ControlSettings = ControlSettings(), n_traj: int = 40, epochs: int = 30,
                           segment: int = 100, batch_size: int = 32, lr: float = 3e-3, hidden: int = 32):
    """FD+TCN observer fitted to true velocities on noisy closed-loop pendulum data.

    ``sigma_train`` is a float (fixed noise) or ("uniform", low, high), drawn per
    sequence and per epoch. Training trajectories come from oracle closed-loop
    trials with initial states from every regime, on a stream disjoint from the
    evaluation trials.
    """
    from .autodiff import ParamStore
    from .training import AdamW, cosine_lr

    per = max(1, n_traj // len(IC_REGIMES))
    q0s, p0s = [], []
    for regime in IC_REGIMES:
        q0, p0 = sample_regime_states(plant, regime, per, seed + 7919)
        q0s.append(q0)
        p0s.append(p0)
    q0, p0 = np.concatenate(q0s), np.concatenate(p0s)
    _, tr = run_control_batch(plant, gains, OracleEstimator(plant), 0.0, q0, p0,
                              [(seed, "control", "observer-data", i) for i in range(q0.size)], settings,
                              record_trace=True)
    q_true, v_true = tr["q"], tr["y_hat"]  # (B, N)
    B, N = q_true.shape
    starts = list(range(0, N - segment + 1, segment))
    items = [(i, s) for i in range(B) for s in starts]

    params = ParamStore()
    fd_scale = max(np.sqrt(np.mean(v_true**2)), 1e-3)
    sig_hi = sigma_train[2] if isinstance(sigma_train, tuple) else float(sigma_train)
    v_scale = np.array([np.sqrt(fd_scale**2 + 2.0 * (sig_hi / settings.dt) ** 2)])
    net = ObserverNet(params, "obs", [True], stream(seed, "init", "control-observer"), hidden, v_scale=v_scale)
    opt = AdamW(params, lr=lr, weight_decay=0.0)
    for epoch in range(epochs):
        order = stream(seed, "control", "observer-shuffle", epoch).permutation(len(items))
        rng = stream(seed, "control", "observer-noise", epoch)
        lr_e = cosine_lr(lr, epoch, epochs)
        for b in range(0, len(items), batch_size):
            chosen = [items[j] for j in order[b:b + batch_size]]
            qb = np.stack([q_true[i, s:s + segment] for i, s in chosen])
            vb = np.stack([v_true[i, s:s + segment] for i, s in chosen])
            if isinstance(sigma_train, tuple):
                sig = rng.uniform(sigma_train[1], sigma_train[2], size=len(chosen))[:, None]
            else:
                sig = float(sigma_train)
            qn = qb + sig * rng.normal(0.0, 1.0, size=qb.shape)
            v_hat = observer_velocity(net, qn[..., None], settings.dt)
            skip = net.receptive_field  # ignore the warm-up region without full context
            err = v_hat[:, skip:, 0] - Tensor(vb[:, skip:])
            loss = ad.mean(ad.square(err))
            grads = ad.param_gradients(loss, params)
            opt.step(grads, lr_e)
    return net


def aggregate_trials(records) -> dict:
    """Mean of success, final error, effort and velocity error over trial records."""
    if not records:
        return {}
    keys = ("success", "final_error", "effort", "velocity_error")
    out = {k: float(np.mean([float(r[k]) for r in records])) for k in keys}
    out["n_trials"] = len(records)
    return out
