"""Position-only state inference and the two rollout modes."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ContractViolation, IntegrationFault
from .geometry import manifold_diff
from .integrators import model_step
from .nn import CausalConv1d, Featurizer
from .rng import Stream

__all__ = [
    "fd_velocity",
    "ObserverNet",
    "observer_velocity",
    "canonicalize",
    "rollout_open_loop",
    "rollout_takeover",
    "rollout_autoregressive",
]


def fd_velocity(q_seq, dt: float, angular=None) -> np.ndarray:
    """Backward differences along the time axis (-2), zero at t=0, wrapped on angles."""
    q = np.asarray(q_seq, dtype=float)
    if q.ndim < 2 or q.shape[-2] < 1:
        raise ContractViolation("fd_velocity expects (..., T, n) with T >= 1")
    angular = np.zeros(q.shape[-1], dtype=bool) if angular is None else np.asarray(angular, dtype=bool)
    v = np.zeros(q.shape)
    v[..., 1:, :] = manifold_diff(q[..., 1:, :], q[..., :-1, :], angular) / dt
    return v


class ObserverNet:
    """Causal TCN predicting an additive velocity correction from (q features, fd velocity).

    Angular coordinates enter as (sin, cos); Euclidean coordinates and fd
    velocities are divided by fixed scales. The output layer starts at zero,
    so an untrained observer returns the finite-difference velocity.
    """

    def __init__(self, params: ParamStore, prefix: str, angular, rng: Stream, hidden: int = 32, kernel: int = 3,
                 dilations=(1, 2), q_shift=None, q_scale=None, v_scale=None):
        self.angular = np.asarray(angular, dtype=bool)
        n = self.angular.size
        self.n = n
        self.featurizer = Featurizer(self.angular, harmonics=1, shift=q_shift, scale=q_scale)
        self.v_scale = np.ones(n) if v_scale is None else np.asarray(v_scale, dtype=float)
        c_in = self.featurizer.width + n
        self.layers = []
        widths = [c_in] + [hidden] * (len(dilations) - 1) + [n]
        for i, d in enumerate(dilations):
            last = i == len(dilations) - 1
            self.layers.append(
                CausalConv1d(params, f"{prefix}.conv{i}", widths[i], widths[i + 1], kernel, d, rng, zero=last)
            )

    @property
    def receptive_field(self) -> int:
        return 1 + sum(layer.reach for layer in self.layers)

    @property
    def context(self) -> int:
        """Window length that reproduces the full-sequence output at its last index."""
        return self.receptive_field + 1

    def correction(self, q_seq, fd) -> Tensor:
        x = ad.concatenate([self.featurizer(Tensor(q_seq)), Tensor(fd / self.v_scale)], axis=-1)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.silu(x)
        return x


def observer_velocity(net: ObserverNet | None, q_seq, dt: float, angular=None) -> Tensor:
    """fd velocity plus the network correction, shape (B, T, n)."""
    q = np.asarray(q_seq, dtype=float)
    if q.ndim != 3:
        raise ContractViolation(f"observer expects (B, T, n), got {q.shape}")
    if net is not None and q.shape[-1] != net.n:
        raise ContractViolation(f"observer built for {net.n} coordinates, got {q.shape[-1]}")
    ang = net.angular if net is not None else angular
    fd = fd_velocity(q, dt, ang)
    if net is None:
        return Tensor(fd)
    return Tensor(fd) + net.correction(q, fd)


def canonicalize(mode: str, mass, q, v):
    """identity: p = v; mass_consistent: p = M(q) v."""
    if mode == "identity":
        return ad.as_tensor(v)
    if mode == "mass_consistent":
        return mass.apply(q, v)
    raise ContractViolation(f"unknown canonicalizer {mode!r}")


def rollout_open_loop(model, q0, p0, H: int, start_step: int = 0):
    """Integrate H transitions from (q0, p0); returns the list of q tensors."""
    qs = []
    q, p = ad.as_tensor(q0), ad.as_tensor(p0)
    for h in range(H):
        try:
            q, p = model_step(model, q, p, step=start_step + h)
        except IntegrationFault as exc:
            raise IntegrationFault(f"rollout failed at horizon index {h}", where=exc.where) from exc
        qs.append(q)
    return qs


def _context(q_seq, K: int) -> np.ndarray:
    if K < 2:
        raise ContractViolation("burn-in context K must be at least 2")
    ctx = np.asarray(q_seq[:, :K], dtype=float)
    if ctx.shape[1] != K:
        raise ContractViolation(f"sequence shorter than context K={K}")
    return ctx


def rollout_takeover(model, net, q_seq, K: int, H: int, dt: float, canon: str = "identity", p_boundary=None):
    """Infer the boundary state at K-1 from the context, then integrate open loop.

    Only ``q_seq[:, :K]`` is read. ``p_boundary`` replaces the inferred momentum.
    Returns predictions of shape (B, H, n).
    """
    ctx = _context(q_seq, K)
    B, _, n = ctx.shape
    if H == 0:
        return np.zeros((B, 0, n))
    with ad.no_grad():
        q0 = Tensor(ctx[:, -1])
        if p_boundary is None:
            v = observer_velocity(net, ctx, dt, model.angular)[:, -1]
            p0 = canonicalize(canon, model.mass, q0, v)
        else:
            p0 = Tensor(p_boundary)
        qs = rollout_open_loop(model, q0, p0, H)
    return np.stack([q.value for q in qs], axis=1)


def rollout_autoregressive(model, net, q_seq, K: int, H: int, dt: float, canon: str = "identity"):
    """Re-apply the observer to the growing position prefix before every transition."""
    ctx = _context(q_seq, K)
    B, _, n = ctx.shape
    out = np.zeros((B, H, n))
    if H == 0:
        return out
    window = net.context if net is not None else 2
    prefix = list(np.moveaxis(ctx, 1, 0))
    with ad.no_grad():
        for h in range(H):
            recent = np.stack(prefix[-window:], axis=1)
            v = observer_velocity(net, recent, dt, model.angular)[:, -1]
            q = Tensor(prefix[-1])
            p = canonicalize(canon, model.mass, q, v)
            try:
                q_next, _ = model_step(model, q, p, step=h)
            except IntegrationFault as exc:
                raise IntegrationFault(f"rollout failed at horizon index {h}", where=exc.where) from exc
            out[:, h] = q_next.value
            prefix.append(q_next.value)
    return out
