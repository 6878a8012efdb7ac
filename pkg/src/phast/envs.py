"""Ground-truth simulators for the thirteen q-only benchmarks.

Everything here is plain numpy and independent of the learned-model code, so
the simulators can act as oracles. All physics is written elementwise over a
leading batch axis, which keeps each trajectory bit-identical no matter how
many trajectories are simulated together.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, IntegrationFault, SimulationFault
from .integrators import rk4_step
from .rng import Stream, stream

__all__ = [
    "ENV_NAMES",
    "EnvSpec",
    "Trajectory",
    "Split",
    "Dataset",
    "get_env",
    "true_damping",
    "true_mass",
    "env_potential",
    "env_energy",
    "env_rhs",
    "sample_initial_state",
    "simulate_trajectory",
    "simulate_batch",
    "generate_dataset",
]

G_EARTH = 9.81
SIM_SUBSTEPS = 10

ENV_NAMES = (
    "pendulum_cons",
    "pendulum_damped",
    "pendulum_windy",
    "cartpole_windy",
    "oscillator_cons",
    "oscillator_damped",
    "doublepend_cons",
    "doublepend_damped",
    "rlc",
    "lj3",
    "heat",
    "nbody3",
    "predprey",
)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    n_dof: int
    angular: tuple
    dt: float
    T: int = 200
    constants: dict = field(default_factory=dict)
    has_energy: bool = True
    has_damping_law: bool = True

    @property
    def angular_mask(self) -> np.ndarray:
        return np.asarray(self.angular, dtype=bool)

    def with_options(self, **constants) -> "EnvSpec":
        merged = dict(self.constants)
        for k, v in constants.items():
            if k not in merged:
                raise ContractViolation(f"{self.name} has no option {k!r}")
            merged[k] = v
        return replace(self, constants=merged)

    def snapshot(self) -> dict:
        return {
            "name": self.name,
            "n_dof": self.n_dof,
            "angular": list(self.angular),
            "dt": self.dt,
            "T": self.T,
            "constants": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.constants.items()},
        }


_PEND = dict(m=1.0, l=1.0, g=G_EARTH, d0=0.0, delta_d=0.0, p_std=3.0)

_REGISTRY = {
    "pendulum_cons": EnvSpec("pendulum_cons", 1, (True,), 0.05, constants=dict(_PEND)),
    "pendulum_damped": EnvSpec("pendulum_damped", 1, (True,), 0.05, constants=dict(_PEND, d0=0.5)),
    "pendulum_windy": EnvSpec("pendulum_windy", 1, (True,), 0.05,
                              constants=dict(_PEND, d0=0.3, delta_d=0.5, p_std=4.0)),
    "cartpole_windy": EnvSpec("cartpole_windy", 2, (False, True), 0.02,
                              constants=dict(m_c=1.0, m_p=1.0, l=1.0, g=G_EARTH, d0=0.3, delta_d=0.5,
                                             damping_mode="scalar", d_cart=0.3)),
    "oscillator_cons": EnvSpec("oscillator_cons", 2, (False, False), 0.02, constants=dict(omega=1.0, gamma=0.0)),
    "oscillator_damped": EnvSpec("oscillator_damped", 2, (False, False), 0.02,
                                 constants=dict(omega=1.0, gamma=0.1)),
    "doublepend_cons": EnvSpec("doublepend_cons", 2, (True, True), 0.01,
                               constants=dict(m1=1.0, m2=1.0, l1=1.0, l2=1.0, g=G_EARTH, b=0.0,
                                              windy_b=None, windy_delta=None)),
    "doublepend_damped": EnvSpec("doublepend_damped", 2, (True, True), 0.01,
                                 constants=dict(m1=1.0, m2=1.0, l1=1.0, l2=1.0, g=G_EARTH, b=0.2,
                                                windy_b=None, windy_delta=None)),
    "rlc": EnvSpec("rlc", 1, (False,), 0.02, constants=dict(L=1.0, C=1.0, R=0.5)),
    "lj3": EnvSpec("lj3", 6, (False,) * 6, 0.002,
                   constants=dict(eps=1.0, sigma=1.0, soft=0.1, gamma=0.1, perturb=0.05, p_std=0.1)),
    "heat": EnvSpec("heat", 2, (False, False), 0.02,
                    constants=dict(c1=1.0, c2=1.0, kappa=0.5, kappa_loss=0.1, p_std=0.3)),
    "nbody3": EnvSpec("nbody3", 6, (False,) * 6, 0.01,
                      constants=dict(G=1.0, masses=(1.0, 1.0, 1.0), soft=0.1, gamma=0.05, radius=2.0, perturb=0.3,
                                     p_std=0.5)),
    "predprey": EnvSpec("predprey", 1, (False,), 0.1,
                        constants=dict(alpha=1.0, beta=0.1, gamma=0.4, delta=0.1, K=100.0, mu=0.01),
                        has_energy=False, has_damping_law=False),
}


def get_env(name: str, **options) -> EnvSpec:
    if name not in _REGISTRY:
        raise ContractViolation(f"unknown environment {name!r}; choose from {', '.join(ENV_NAMES)}")
    env = _REGISTRY[name]
    return env.with_options(**options) if options else env


def _family(env: EnvSpec) -> str:
    return env.name.split("_")[0]


def _check_q(env: EnvSpec, q):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != env.n_dof:
        raise ContractViolation(f"{env.name} expects {env.n_dof} coordinates, got {q.shape[-1]}")
    return q


# ---------------------------------------------------------------------------
# Physics
# ---------------------------------------------------------------------------


def _pairs(P):
    return [(i, j) for i in range(P) for j in range(i + 1, P)]


def env_potential(env: EnvSpec, q) -> np.ndarray:
    q = _check_q(env, q)
    c, fam = env.constants, _family(env)
    if fam == "pendulum":
        return c["m"] * c["g"] * c["l"] * (1.0 - np.cos(q[..., 0]))
    if fam == "cartpole":
        return c["m_p"] * c["g"] * c["l"] * (1.0 - np.cos(q[..., 1]))
    if fam == "oscillator":
        return 0.5 * c["omega"] ** 2 * (q[..., 0] ** 2 + q[..., 1] ** 2)
    if fam == "doublepend":
        return -(c["m1"] + c["m2"]) * c["g"] * c["l1"] * np.cos(q[..., 0]) - c["m2"] * c["g"] * c["l2"] * np.cos(
            q[..., 1])
    if fam == "rlc":
        return q[..., 0] ** 2 / (2.0 * c["C"])
    if fam == "heat":
        t1, t2 = q[..., 0], q[..., 1]
        return 0.5 * c["c1"] * t1**2 + 0.5 * c["c2"] * t2**2 + 0.5 * c["kappa"] * (t1 - t2) ** 2
    if fam in ("lj3", "nbody3"):
        total = np.zeros(q.shape[:-1])
        for i, j in _pairs(3):
            r2 = (q[..., 2 * i] - q[..., 2 * j]) ** 2 + (q[..., 2 * i + 1] - q[..., 2 * j + 1]) ** 2 + c["soft"] ** 2
            if fam == "lj3":
                s6 = (c["sigma"] ** 2 / r2) ** 3
                total = total + 4.0 * c["eps"] * (s6 * s6 - s6)
            else:
                m = c["masses"]
                total = total - c["G"] * m[i] * m[j] / np.sqrt(r2)
        return total
    raise ContractViolation(f"{env.name} has no potential")


def _grad_potential(env: EnvSpec, q) -> np.ndarray:
    c, fam = env.constants, _family(env)
    g = np.zeros(q.shape)
    if fam == "pendulum":
        g[..., 0] = c["m"] * c["g"] * c["l"] * np.sin(q[..., 0])
    elif fam == "cartpole":
        g[..., 1] = c["m_p"] * c["g"] * c["l"] * np.sin(q[..., 1])
    elif fam == "oscillator":
        g[...] = c["omega"] ** 2 * q
    elif fam == "doublepend":
        g[..., 0] = (c["m1"] + c["m2"]) * c["g"] * c["l1"] * np.sin(q[..., 0])
        g[..., 1] = c["m2"] * c["g"] * c["l2"] * np.sin(q[..., 1])
    elif fam == "rlc":
        g[..., 0] = q[..., 0] / c["C"]
    elif fam == "heat":
        t1, t2 = q[..., 0], q[..., 1]
        g[..., 0] = c["c1"] * t1 + c["kappa"] * (t1 - t2)
        g[..., 1] = c["c2"] * t2 - c["kappa"] * (t1 - t2)
    elif fam in ("lj3", "nbody3"):
        for i, j in _pairs(3):
            dx = q[..., 2 * i] - q[..., 2 * j]
            dy = q[..., 2 * i + 1] - q[..., 2 * j + 1]
            r2 = dx * dx + dy * dy + c["soft"] ** 2
            if fam == "lj3":
                s2 = c["sigma"] ** 2
                dv = 4.0 * c["eps"] * (-6.0 * s2**6 / r2**7 + 3.0 * s2**3 / r2**4)
            else:
                m = c["masses"]
                dv = 0.5 * c["G"] * m[i] * m[j] / r2**1.5
            g[..., 2 * i] += 2.0 * dv * dx
            g[..., 2 * i + 1] += 2.0 * dv * dy
            g[..., 2 * j] -= 2.0 * dv * dx
            g[..., 2 * j + 1] -= 2.0 * dv * dy
    else:
        raise ContractViolation(f"{env.name} has no potential")
    return g


def _mass_entries(env: EnvSpec, q):
    """(a, b, d) of the symmetric 2x2 mass [[a, b], [b, d]] for the nonseparable systems."""
    c, fam = env.constants, _family(env)
    if fam == "cartpole":
        a = np.full(q.shape[:-1], c["m_c"] + c["m_p"])
        b = c["m_p"] * c["l"] * np.cos(q[..., 1])
        d = np.full(q.shape[:-1], c["m_p"] * c["l"] ** 2)
        return a, b, d
    a = np.full(q.shape[:-1], (c["m1"] + c["m2"]) * c["l1"] ** 2)
    b = c["m2"] * c["l1"] * c["l2"] * np.cos(q[..., 0] - q[..., 1])
    d = np.full(q.shape[:-1], c["m2"] * c["l2"] ** 2)
    return a, b, d


def _diag_mass(env: EnvSpec) -> np.ndarray:
    c, fam = env.constants, _family(env)
    if fam == "pendulum":
        return np.array([c["m"] * c["l"] ** 2])
    if fam == "rlc":
        return np.array([c["L"]])
    if fam == "nbody3":
        return np.repeat(np.asarray(c["masses"], dtype=float), 2)
    return np.ones(env.n_dof)


def _nonseparable(env: EnvSpec) -> bool:
    return _family(env) in ("cartpole", "doublepend")


def true_mass(env: EnvSpec, q) -> np.ndarray:
    """M(q) with shape (..., n, n)."""
    q = _check_q(env, q)
    n = env.n_dof
    if _nonseparable(env):
        a, b, d = _mass_entries(env, q)
        M = np.empty(q.shape[:-1] + (2, 2))
        M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1] = a, b, b, d
        return M
    return np.broadcast_to(np.diag(_diag_mass(env)), q.shape[:-1] + (n, n)).copy()


def _velocity(env: EnvSpec, q, p):
    if _nonseparable(env):
        a, b, d = _mass_entries(env, q)
        det = a * d - b * b
        v = np.empty(p.shape)
        v[..., 0] = (d * p[..., 0] - b * p[..., 1]) / det
        v[..., 1] = (a * p[..., 1] - b * p[..., 0]) / det
        return v
    return p / _diag_mass(env)


def _momentum(env: EnvSpec, q, v):
    if _nonseparable(env):
        a, b, d = _mass_entries(env, q)
        p = np.empty(v.shape)
        p[..., 0] = a * v[..., 0] + b * v[..., 1]
        p[..., 1] = b * v[..., 0] + d * v[..., 1]
        return p
    return v * _diag_mass(env)


def _half_vdMv(env: EnvSpec, q, v):
    """1/2 v^T (dM/dq_k) v for each k."""
    c, fam = env.constants, _family(env)
    out = np.zeros(v.shape)
    if fam == "cartpole":
        out[..., 1] = -c["m_p"] * c["l"] * np.sin(q[..., 1]) * v[..., 0] * v[..., 1]
    elif fam == "doublepend":
        s = c["m2"] * c["l1"] * c["l2"] * np.sin(q[..., 0] - q[..., 1]) * v[..., 0] * v[..., 1]
        out[..., 0] = -s
        out[..., 1] = s
    return out


def true_damping(env: EnvSpec, q) -> np.ndarray:
    """Per-DOF ground-truth damping coefficients, shape (..., n)."""
    q = _check_q(env, q)
    c, fam = env.constants, _family(env)
    shape = q.shape
    if not env.has_damping_law:
        return np.zeros(shape)
    if fam == "pendulum":
        return c["d0"] + c["delta_d"] * np.abs(np.sin(q))
    if fam == "cartpole":
        d = c["d0"] + c["delta_d"] * np.abs(np.sin(q[..., 1]))
        out = np.empty(shape)
        out[..., 1] = d
        out[..., 0] = d if c["damping_mode"] == "scalar" else c["d_cart"]
        return out
    if fam == "oscillator":
        return np.full(shape, c["gamma"])
    if fam == "doublepend":
        if c["windy_b"] is not None:
            b = np.asarray(c["windy_b"], dtype=float)
            db = np.asarray(c["windy_delta"], dtype=float)
            return b + db * np.abs(np.sin(q))
        return np.full(shape, c["b"])
    if fam == "rlc":
        return np.full(shape, c["R"])
    if fam == "lj3" or fam == "nbody3":
        return np.full(shape, c["gamma"])
    if fam == "heat":
        return np.full(shape, c["kappa_loss"])
    raise ContractViolation(f"{env.name} has no damping law")


def env_energy(env: EnvSpec, q, v) -> np.ndarray:
    """Analytic energy V(q) + 1/2 v^T M(q) v."""
    if not env.has_energy:
        raise ContractViolation(f"{env.name} has no mechanical energy")
    q = _check_q(env, q)
    v = np.asarray(v, dtype=float)
    return env_potential(env, q) + 0.5 * np.sum(v * _momentum(env, q, v), axis=-1)


def env_hamiltonian(env: EnvSpec, q, p) -> np.ndarray:
    q = _check_q(env, q)
    return env_potential(env, q) + 0.5 * np.sum(p * _velocity(env, q, p), axis=-1)


def env_velocity(env: EnvSpec, q, p) -> np.ndarray:
    return _velocity(env, _check_q(env, q), np.asarray(p, dtype=float))


def env_momentum(env: EnvSpec, q, v) -> np.ndarray:
    return _momentum(env, _check_q(env, q), np.asarray(v, dtype=float))


def env_rhs(env: EnvSpec, x, u=None) -> np.ndarray:
    """Time derivative of the stacked state x = (q, p); optional torque u on the momenta."""
    n = env.n_dof
    q, p = x[..., :n], x[..., n:]
    if env.name == "predprey":
        c = env.constants
        n1, n2 = q[..., 0], p[..., 0]
        d1 = c["alpha"] * n1 * (1.0 - n1 / c["K"]) - c["beta"] * n1 * n2 - c["mu"] * n1
        d2 = c["delta"] * n1 * n2 - c["gamma"] * n2 - c["mu"] * n2
        return np.stack([d1, d2], axis=-1)
    v = _velocity(env, q, p)
    pdot = -_grad_potential(env, q) + _half_vdMv(env, q, v) - true_damping(env, q) * v
    if u is not None:
        pdot = pdot + u
    return np.concatenate([v, pdot], axis=-1)


# ---------------------------------------------------------------------------
# Sampling and simulation
# ---------------------------------------------------------------------------


def sample_initial_state(env: EnvSpec, rng: Stream):
    """Draw (q0, p0); coordinates are drawn first, then momenta/velocities."""
    c, fam, n = env.constants, _family(env), env.n_dof
    if fam == "pendulum":
        q = rng.uniform(-np.pi, np.pi, size=1)
        p = rng.normal(0.0, c["p_std"], size=1)
    elif fam == "cartpole":
        q = np.array([rng.uniform(-1.0, 1.0), rng.uniform(-np.pi, np.pi)])
        p = rng.uniform(-2.0, 2.0, size=2)
    elif fam == "oscillator":
        q = rng.normal(0.0, 1.0, size=2)
        p = rng.normal(0.0, 1.0, size=2)
    elif fam == "doublepend":
        q = rng.uniform(-np.pi, np.pi, size=2)
        omega = rng.uniform(-2.0, 2.0, size=2)
        p = _momentum(env, q, omega)
    elif fam == "rlc":
        q = rng.uniform(-2.0, 2.0, size=1)
        p = rng.uniform(-2.0, 2.0, size=1)
    elif fam == "heat":
        q = 0.5 + 1.5 * rng.uniform(0.0, 1.0, size=2)
        p = rng.normal(0.0, c["p_std"], size=2)
    elif fam in ("lj3", "nbody3"):
        if fam == "lj3":
            side = 2.0 ** (1.0 / 6.0) * c["sigma"]
            radius = side / np.sqrt(3.0)
        else:
            radius = c["radius"]
        angles = np.pi / 2 + 2.0 * np.pi * np.arange(3) / 3.0
        base = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=-1).reshape(-1)
        q = base + rng.normal(0.0, c["perturb"], size=6)
        p = rng.normal(0.0, c["p_std"], size=6)
    elif fam == "predprey":
        q = np.array([rng.uniform(10.0, 50.0)])
        p = np.array([rng.uniform(5.0, 20.0)])
    else:
        raise ContractViolation(f"no sampler for {env.name}")
    return np.asarray(q, dtype=float).reshape(n), np.asarray(p, dtype=float).reshape(n)


@dataclass(frozen=True)
class Trajectory:
    q: np.ndarray
    p: np.ndarray
    dt: float
    env: str
    seed: int


def simulate_batch(env: EnvSpec, q0, p0, T: int | None = None, substeps: int = SIM_SUBSTEPS):
    """RK4 with ``substeps`` internal steps per recorded dt; returns q, p of shape (N, T, n)."""
    T = env.T if T is None else int(T)
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    n = env.n_dof
    x = np.concatenate([q0, p0], axis=-1)
    out = np.empty((x.shape[0], T, 2 * n))
    if T == 0:
        return out[..., :n], out[..., n:]
    out[:, 0] = x
    h = env.dt / substeps
    field_ = lambda s: env_rhs(env, s)
    for t in range(1, T):
        try:
            for _ in range(substeps):
                x = rk4_step(field_, x, h)
        except IntegrationFault as exc:
            raise SimulationFault("non-finite simulator state", where=f"{env.name} step {t}") from exc
        out[:, t] = x
    return out[..., :n], out[..., n:]


def simulate_trajectory(env: EnvSpec, q0, p0, T: int | None = None, seed: int = -1) -> Trajectory:
    q, p = simulate_batch(env, q0, p0, T)
    return Trajectory(q[0], p[0], env.dt, env.name, seed)


@dataclass
class Split:
    q: np.ndarray  # (N, T, n)
    p: np.ndarray

    def __len__(self):
        return self.q.shape[0]

    def trajectories(self, dt: float, env: str, seed: int):
        return [Trajectory(self.q[i], self.p[i], dt, env, seed) for i in range(len(self))]


@dataclass
class Dataset:
    env: EnvSpec
    seed: int
    splits: dict

    def __getitem__(self, name) -> Split:
        return self.splits[name]

    @property
    def sizes(self):
        return {k: len(v) for k, v in self.splits.items()}


DEFAULT_SIZES = {"train": 1000, "val": 200, "test": 200}
DESK_SIZES = {"train": 200, "val": 40, "test": 40}


def generate_dataset(env: EnvSpec, sizes=None, seed: int = 42, T: int | None = None) -> Dataset:
    """Each trajectory's initial state comes from its own stream (seed, env, split, index)."""
    sizes = dict(DEFAULT_SIZES if sizes is None else sizes)
    splits = {}
    for split, count in sizes.items():
        q0 = np.empty((count, env.n_dof))
        p0 = np.empty((count, env.n_dof))
        for i in range(count):
            q0[i], p0[i] = sample_initial_state(env, stream(seed, env.name, split, i))
        q, p = simulate_batch(env, q0, p0, T)
        splits[split] = Split(q, p)
    return Dataset(env, seed, splits)
