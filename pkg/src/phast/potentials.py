"""Potential energies: structured closed forms, a neural field, and a hybrid of the two.

``value`` accepts a tensor or a dual of shape (..., n) and returns shape
(...,). Structured variants also provide a closed-form ``gradient``; every
variant can be differentiated through ``autodiff_gradient``.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ContractViolation
from .nn import MLP, Featurizer
from .rng import Stream

__all__ = [
    "Potential",
    "Zero",
    "Cosine",
    "Quadratic",
    "LennardJones",
    "GravityN",
    "RLC",
    "HeatExchange",
    "NeuralMLP",
    "Hybrid",
    "potential_value",
    "potential_gradient",
]


def _check_dim(q, n):
    shape = q.value.shape if isinstance(q, ad.Dual) else ad.as_tensor(q).shape
    if shape[-1] != n:
        raise ContractViolation(f"potential expects dimension {n}, got {shape[-1]}")


class Potential:
    n: int
    structured = True

    def value(self, q):
        raise NotImplementedError

    def gradient(self, q) -> Tensor:
        return self.autodiff_gradient(q)

    def autodiff_gradient(self, q) -> Tensor:
        return ad.input_gradient(self.value, q)


class Zero(Potential):
    def __init__(self, n: int):
        self.n = n

    def value(self, q):
        _check_dim(q, self.n)
        shape = q.value.shape if isinstance(q, ad.Dual) else ad.as_tensor(q).shape
        return Tensor(np.zeros(shape[:-1]))

    def gradient(self, q):
        return Tensor(np.zeros(ad.as_tensor(q).shape))


class Cosine(Potential):
    """V = sum_i a_i (1 - cos q_i)."""

    def __init__(self, a):
        self.a = a if isinstance(a, Tensor) else Tensor(np.atleast_1d(np.asarray(a, dtype=float)))
        self.n = self.a.shape[-1]

    def value(self, q):
        _check_dim(q, self.n)
        return ad.tsum((1.0 - ad.cos(q)) * self.a, axis=-1)

    def gradient(self, q):
        q = ad.as_tensor(q)
        _check_dim(q, self.n)
        return ad.sin(q) * self.a


class Quadratic(Potential):
    """V = 1/2 q^T K q with K positive semidefinite."""

    def __init__(self, K):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        K = 0.5 * (K + K.T)
        if np.linalg.eigvalsh(K).min() < -1e-12 * max(1.0, np.abs(K).max()):
            raise ContractViolation("stiffness must be positive semidefinite")
        self.K = Tensor(K)
        self.n = K.shape[0]

    def value(self, q):
        _check_dim(q, self.n)
        return 0.5 * ad.tsum(q * ad.linear(q, self.K), axis=-1)

    def gradient(self, q):
        q = ad.as_tensor(q)
        _check_dim(q, self.n)
        return ad.linear(q, self.K)


class _PairPotential(Potential):
    """Shared machinery for softened pair potentials in ``dim`` dimensions."""

    def __init__(self, n_particles: int, dim: int, soft: float):
        if soft < 0:
            raise ContractViolation("softening must be nonnegative")
        self.P, self.dim, self.soft = int(n_particles), int(dim), float(soft)
        self.n = self.P * self.dim
        self.pairs = list(combinations(range(self.P), 2))

    def _dx(self, q, i, j):
        return [q[..., self.dim * i + c] - q[..., self.dim * j + c] for c in range(self.dim)]

    def _r2(self, dx):
        r2 = None
        for comp in dx:
            term = ad.square(comp)
            r2 = term if r2 is None else r2 + term
        r2 = r2 + self.soft**2
        v = r2.value.value if isinstance(r2, ad.Dual) else r2.value
        if np.any(v <= 0):
            raise ContractViolation("coincident particles without softening")
        return r2

    def pair_energy(self, r2, i, j):
        raise NotImplementedError

    def pair_denergy(self, r2, i, j):
        """d(pair energy)/d(r2)."""
        raise NotImplementedError

    def value(self, q):
        _check_dim(q, self.n)
        total = None
        for i, j in self.pairs:
            e = self.pair_energy(self._r2(self._dx(q, i, j)), i, j)
            total = e if total is None else total + e
        return total

    def gradient(self, q):
        q = ad.as_tensor(q)
        _check_dim(q, self.n)
        cols = [None] * self.n
        for i, j in self.pairs:
            dx = self._dx(q, i, j)
            w = 2.0 * self.pair_denergy(self._r2(dx), i, j)
            for c in range(self.dim):
                g = w * dx[c]
                a, b = self.dim * i + c, self.dim * j + c
                cols[a] = g if cols[a] is None else cols[a] + g
                cols[b] = -g if cols[b] is None else cols[b] - g
        return ad.stack(cols, axis=-1)


class LennardJones(_PairPotential):
    """V = sum_{i<j} 4 eps [(sigma/r)^12 - (sigma/r)^6] with r = sqrt(|x_i - x_j|^2 + soft^2)."""

    def __init__(self, n_particles=3, dim=2, eps=1.0, sigma=1.0, soft=0.1):
        super().__init__(n_particles, dim, soft)
        self.eps, self.sigma = float(eps), float(sigma)

    def pair_energy(self, r2, i, j):
        s6 = ad.power(r2 * (1.0 / self.sigma**2), -3.0)
        return 4.0 * self.eps * (ad.square(s6) - s6)

    def pair_denergy(self, r2, i, j):
        s2 = self.sigma**2
        return 4.0 * self.eps * (-6.0 * s2**6 * ad.power(r2, -7.0) + 3.0 * s2**3 * ad.power(r2, -4.0))


class GravityN(_PairPotential):
    """V = -sum_{i<j} G m_i m_j / r with Plummer-softened r."""

    def __init__(self, masses=(1.0, 1.0, 1.0), dim=2, G=1.0, soft=0.1):
        masses = np.asarray(masses, dtype=float)
        super().__init__(masses.size, dim, soft)
        self.masses, self.G = masses, float(G)

    def pair_energy(self, r2, i, j):
        return -self.G * self.masses[i] * self.masses[j] * ad.power(r2, -0.5)

    def pair_denergy(self, r2, i, j):
        return 0.5 * self.G * self.masses[i] * self.masses[j] * ad.power(r2, -1.5)


class RLC(Potential):
    """Capacitor energy q^2 / (2C)."""

    def __init__(self, C=1.0):
        if C <= 0:
            raise ContractViolation("capacitance must be positive")
        self.C, self.n = float(C), 1

    def value(self, q):
        _check_dim(q, 1)
        return ad.tsum(ad.square(q), axis=-1) * (0.5 / self.C)

    def gradient(self, q):
        q = ad.as_tensor(q)
        _check_dim(q, 1)
        return q * (1.0 / self.C)


class HeatExchange(Potential):
    """V = c1 T1^2/2 + c2 T2^2/2 + kappa (T1 - T2)^2 / 2."""

    def __init__(self, c1=1.0, c2=1.0, kappa=0.5):
        self.c1, self.c2, self.kappa, self.n = float(c1), float(c2), float(kappa), 2

    def value(self, q):
        _check_dim(q, 2)
        t1, t2 = q[..., 0], q[..., 1]
        return 0.5 * self.c1 * ad.square(t1) + 0.5 * self.c2 * ad.square(t2) + 0.5 * self.kappa * ad.square(t1 - t2)

    def gradient(self, q):
        q = ad.as_tensor(q)
        _check_dim(q, 2)
        t1, t2 = q[..., 0], q[..., 1]
        diff = (t1 - t2) * self.kappa
        return ad.stack([t1 * self.c1 + diff, t2 * self.c2 - diff], axis=-1)


class NeuralMLP(Potential):
    """Scalar SiLU network over (Fourier) features of q; ``layers`` counts affine maps."""

    structured = False

    def __init__(self, params: ParamStore, prefix: str, featurizer: Featurizer, rng: Stream, hidden=64, layers=3,
                 zero_last=False):
        self.n = featurizer.angular.size
        self.featurizer = featurizer
        sizes = [featurizer.width] + [hidden] * (layers - 1) + [1]
        self.net = MLP(params, prefix, sizes, rng, zero_last=zero_last)

    def value(self, q):
        _check_dim(q, self.n)
        return self.net(self.featurizer(q))[..., 0]


class Hybrid(Potential):
    """Structured base plus a small learnable multiple of a neural residual."""

    structured = False

    def __init__(self, base: Potential, residual: NeuralMLP, rho: Tensor):
        if base.n != residual.n:
            raise ContractViolation("hybrid base and residual dimensions differ")
        self.base, self.residual, self.rho, self.n = base, residual, rho, base.n
        if not float(ad.softplus(rho).value) > 0:
            raise ContractViolation("hybrid scale must be positive")

    @property
    def scale(self) -> Tensor:
        return ad.softplus(self.rho)

    def value(self, q):
        return self.base.value(q) + self.residual.value(q) * self.scale

    def gradient(self, q):
        return self.base.gradient(q) + self.residual.autodiff_gradient(q) * self.scale


def potential_value(spec: Potential, q) -> Tensor:
    return spec.value(ad.as_tensor(q))


def potential_gradient(spec: Potential, q) -> Tensor:
    return spec.gradient(ad.as_tensor(q))
