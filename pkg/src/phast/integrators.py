"""Strang-split time stepping for the learned model, plus RK4 for simulators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation, IntegrationFault

__all__ = [
    "StepConfig",
    "damping_half_step",
    "strang_leapfrog_step",
    "implicit_midpoint_step",
    "compose_substeps",
    "model_step",
    "rk4_step",
]


@dataclass(frozen=True)
class StepConfig:
    timesteps: tuple
    core: str = "leapfrog"
    tol: float = 1e-10
    max_iter: int = 50

    def __post_init__(self):
        if len(self.timesteps) < 1:
            raise ContractViolation("at least one substep required")
        if self.tol <= 0 or self.max_iter < 1:
            raise ContractViolation("midpoint tolerance must be positive and iterations >= 1")
        if self.core not in ("leapfrog", "midpoint"):
            raise ContractViolation(f"unknown core {self.core!r}")

    @classmethod
    def uniform(cls, dt: float, substeps: int = 1, **kw):
        return cls(tuple([dt / substeps] * substeps), **kw)


def _check(q, p, step):
    if not (np.all(np.isfinite(q.value)) and np.all(np.isfinite(p.value))):
        raise IntegrationFault("non-finite state", where=f"step {step}")


def damping_half_step(model, q, p, h):
    """p <- p - h D(q) v with q untouched.

    Explicit: v = M^-1 p. Implicit (midpoint rule on p' = -D M^-1 p):
    v = (M + h/2 D)^-1 p, the average of the velocities before and after.
    """
    if model.damping is None:
        return p
    if getattr(model, "damping_step", "explicit") == "explicit":
        v = model.velocity(q, p)
    else:
        q = ad.as_tensor(q)
        A = model.mass.matrix(q) + model.damping.matrix(q) * (0.5 * h)
        v = ad.solve(A, ad.expand_dims(p, -1))[..., 0]
    return p - model.damping.apply(q, v) * h


def strang_leapfrog_step(model, q, p, dt, step: int = 0):
    if not model.mass.is_constant:
        raise ContractViolation("leapfrog step requires a constant mass")
    q, p = ad.as_tensor(q), ad.as_tensor(p)
    h = dt * 0.5
    p = damping_half_step(model, q, p, h)
    p = p - model.grad_V(q) * h
    q = q + model.velocity(q, p) * dt
    p = p - model.grad_V(q) * h
    p = damping_half_step(model, q, p, h)
    _check(q, p, step)
    return q, p


def _conservative_field(model, q, p):
    return model.velocity(q, p), -model.grad_q(q, p)


def implicit_midpoint_step(model, q, p, dt, step: int = 0, tol: float = 1e-10, max_iter: int = 50):
    """Damping half-steps around an implicit-midpoint conservative core solved by fixed point."""
    q, p = ad.as_tensor(q), ad.as_tensor(p)
    h = dt * 0.5
    p = damping_half_step(model, q, p, h)
    fq, fp = _conservative_field(model, q, p)
    q_new, p_new = q + fq * dt, p + fp * dt
    for _ in range(max_iter):
        fq, fp = _conservative_field(model, (q + q_new) * 0.5, (p + p_new) * 0.5)
        q_next, p_next = q + fq * dt, p + fp * dt
        delta = max(np.abs(q_next.value - q_new.value).max(initial=0.0),
                    np.abs(p_next.value - p_new.value).max(initial=0.0))
        q_new, p_new = q_next, p_next
        if not np.isfinite(delta):
            raise IntegrationFault("non-finite midpoint iterate", where=f"step {step}")
        if delta < tol:
            break
    else:
        raise IntegrationFault(f"midpoint iteration did not converge in {max_iter} iterations", where=f"step {step}")
    p_new = damping_half_step(model, q_new, p_new, h)
    _check(q_new, p_new, step)
    return q_new, p_new


def compose_substeps(model, q, p, config: StepConfig, step: int = 0):
    for dt in config.timesteps:
        if config.core == "leapfrog":
            q, p = strang_leapfrog_step(model, q, p, dt, step)
        else:
            q, p = implicit_midpoint_step(model, q, p, dt, step, config.tol, config.max_iter)
    return q, p


def model_step(model, q, p, step: int = 0):
    """One environment-dt transition with the model's own substeps and core."""
    for dt in model.timesteps():
        if model.core == "leapfrog":
            q, p = strang_leapfrog_step(model, q, p, dt, step)
        else:
            q, p = implicit_midpoint_step(model, q, p, dt, step)
    return q, p


def rk4_step(field, x, dt):
    """Classical fourth-order Runge-Kutta on plain arrays."""
    k1 = field(x)
    k2 = field(x + 0.5 * dt * k1)
    k3 = field(x + 0.5 * dt * k2)
    k4 = field(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationFault("non-finite RK4 state")
    return out
