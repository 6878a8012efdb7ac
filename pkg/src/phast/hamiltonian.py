"""Composition of potential, mass and damping into a dissipative Hamiltonian model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ContractViolation
from .linalg import DampingField, mass_solve

__all__ = [
    "KNOWN",
    "PARTIAL",
    "UNKNOWN",
    "REGIMES",
    "HamiltonianModel",
    "hamiltonian_value",
    "ph_vector_field",
    "port_output",
    "passivity_certificate",
]

KNOWN, PARTIAL, UNKNOWN = "KNOWN", "PARTIAL", "UNKNOWN"
REGIMES = (KNOWN, PARTIAL, UNKNOWN)


@dataclass
class HamiltonianModel:
    """H(q, p) = V(q) + 1/2 p^T M(q)^-1 p with dissipation D(q) on the momenta.

    ``dt_raw`` holds one softplus-parameterized step per substep when the
    internal timestep is learnable; otherwise ``dt_fixed`` lists the steps.
    ``damping_step`` selects the dissipative half-step: "implicit" (midpoint
    rule, second order and unconditionally dissipative) or "explicit" (Euler).
    """

    potential: object
    mass: object
    damping: DampingField
    regime: str = UNKNOWN
    params: ParamStore = field(default_factory=ParamStore)
    angular: np.ndarray | None = None
    dt_raw: Tensor | None = None
    dt_fixed: tuple = ()
    core: str = "leapfrog"
    damping_step: str = "implicit"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ContractViolation(f"unknown regime {self.regime!r}")
        if self.angular is None:
            self.angular = np.zeros(self.n, dtype=bool)
        if self.core not in ("leapfrog", "midpoint"):
            raise ContractViolation(f"unknown integrator core {self.core!r}")
        if self.damping_step not in ("implicit", "explicit"):
            raise ContractViolation(f"unknown damping step {self.damping_step!r}")
        if self.core == "leapfrog" and not self.mass.is_constant:
            raise ContractViolation("leapfrog core needs a constant mass; use the midpoint core")

    @property
    def n(self) -> int:
        return self.potential.n

    @property
    def substeps(self) -> int:
        return self.dt_raw.shape[0] if self.dt_raw is not None else len(self.dt_fixed)

    def timesteps(self):
        if self.dt_raw is not None:
            steps = ad.softplus(self.dt_raw)
            return [steps[i] for i in range(steps.shape[0])]
        return [float(h) for h in self.dt_fixed]

    def timestep_sum(self) -> float:
        steps = self.timesteps()
        return float(sum(float(ad.as_tensor(h).value) for h in steps))

    def velocity(self, q, p) -> Tensor:
        return mass_solve(self.mass, q, p)

    def kinetic(self, q, p) -> Tensor:
        p = ad.as_tensor(p)
        return 0.5 * ad.tsum(p * self.velocity(q, p), axis=-1)

    def hamiltonian(self, q, p) -> Tensor:
        return self.potential.value(ad.as_tensor(q)) + self.kinetic(q, p)

    def grad_V(self, q) -> Tensor:
        return self.potential.gradient(ad.as_tensor(q))

    def kinetic_grad_q(self, q, p, v=None) -> Tensor | None:
        """d/dq of 1/2 p^T M(q)^-1 p at fixed p, i.e. -1/2 v^T (dM/dq) v."""
        if self.mass.is_constant:
            return None
        v = self.velocity(q, p) if v is None else v
        Md = self.mass.matrix(ad.seed_dual(q))
        vv = ad.expand_dims(ad.expand_dims(v, -1) * ad.expand_dims(v, -2), -1)
        return ad.tsum(vv * Md.tangent, axis=(-3, -2)) * -0.5

    def grad_q(self, q, p) -> Tensor:
        g = self.grad_V(q)
        kq = self.kinetic_grad_q(q, p)
        return g if kq is None else g + kq


def hamiltonian_value(model: HamiltonianModel, q, p) -> Tensor:
    return model.hamiltonian(q, p)


def ph_vector_field(model: HamiltonianModel, q, p, u=None, G_port=None):
    """(q_dot, p_dot) = (M^-1 p, -dH/dq - D M^-1 p + [G u]_p)."""
    q, p = ad.as_tensor(q), ad.as_tensor(p)
    n = model.n
    v = model.velocity(q, p)
    pdot = -model.grad_q(q, p) - model.damping.apply(q, v)
    if u is not None:
        if G_port is None:
            raise ContractViolation("input u given without a port matrix")
        G = np.asarray(G_port, dtype=float)
        u = ad.as_tensor(u)
        if G.ndim != 2 or G.shape[0] != 2 * n or G.shape[1] != u.shape[-1]:
            raise ContractViolation(f"port matrix must be ({2 * n}, {u.shape[-1]}), got {G.shape}")
        pdot = pdot + ad.linear(u, Tensor(G[n:]))
    return v, pdot


def port_output(model: HamiltonianModel, q, p, G_port) -> Tensor:
    """y = G^T grad H(q, p)."""
    q, p = ad.as_tensor(q), ad.as_tensor(p)
    G = np.asarray(G_port, dtype=float)
    n = model.n
    if G.ndim != 2 or G.shape[0] != 2 * n:
        raise ContractViolation(f"port matrix must have {2 * n} rows, got {G.shape}")
    grad = ad.concatenate([model.grad_q(q, p), model.velocity(q, p)], axis=-1)
    return ad.linear(grad, Tensor(G.T))


def passivity_certificate(model: HamiltonianModel, q, p) -> np.ndarray:
    """grad H^T (J - R) grad H at (q, p) with R = diag(0, D(q)), assembled densely."""
    n = model.n
    with ad.no_grad():
        q, p = ad.as_tensor(q), ad.as_tensor(p)
        g = np.concatenate([model.grad_q(q, p).value, model.velocity(q, p).value], axis=-1)
        D = model.damping.matrix(q).value
    A = np.zeros(g.shape[:-1] + (2 * n, 2 * n))
    A[..., :n, n:] = np.eye(n)
    A[..., n:, :n] = -np.eye(n)
    A[..., n:, n:] -= D
    return np.einsum("...i,...ij,...j->...", g, A, g)
