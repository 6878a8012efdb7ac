"""Losses, AdamW with a cosine schedule, and the training loop with validation selection."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation, NumericFault
from .integrators import model_step
from .metrics import manifold_mse, one_step_predictions
from .observer import canonicalize, observer_velocity, rollout_open_loop
from .rng import stream

__all__ = [
    "LossWeights",
    "TrainConfig",
    "AdamW",
    "cosine_lr",
    "compute_losses",
    "Trainer",
    "train",
]


@dataclass(frozen=True)
class LossWeights:
    data: float = 1.0
    passivity: float = 0.0
    energy: float = 0.0
    rollout: float = 0.0
    rollout_horizon: int = 10

    def __post_init__(self):
        if min(self.data, self.passivity, self.energy, self.rollout) < 0:
            raise ContractViolation("loss weights must be nonnegative")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-5
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    eval_every: int = 10
    segment: int | None = None  # transitions per training item; None batches whole trajectories

    def to_dict(self):
        return asdict(self)


def cosine_lr(base: float, epoch: float, total: float) -> float:
    return base * 0.5 * (1.0 + math.cos(math.pi * epoch / total))


class AdamW:
    """Decoupled weight decay; parameters flagged no-decay are only moved by the gradient."""

    def __init__(self, params: ad.ParamStore, lr=1e-3, weight_decay=1e-5, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, self.wd = float(lr), float(weight_decay)
        self.b1, self.b2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = {n: np.zeros_like(params[n].value) for n in params.trainable_names()}
        self.v = {n: np.zeros_like(params[n].value) for n in params.trainable_names()}

    def step(self, grads: dict, lr: float | None = None) -> None:
        lr = self.lr if lr is None else float(lr)
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name in self.params.trainable_names():
            w = self.params[name]
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(w.value)
            if g.shape != w.value.shape:
                raise ContractViolation(f"gradient shape {g.shape} for {name} with shape {w.value.shape}")
            m = self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            v = self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            new = w.value
            if self.params.decays(name) and self.wd:
                new = new * (1.0 - lr * self.wd)
            w.value = new - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.asarray(state["m"][k], dtype=float).reshape(self.m[k].shape)
            self.v[k] = np.asarray(state["v"][k], dtype=float).reshape(self.v[k].shape)


def _manifold_sq(pred: Tensor, target: np.ndarray, angular) -> Tensor:
    diff = pred - Tensor(target)
    if np.any(angular):
        mask = np.broadcast_to(np.asarray(angular, dtype=bool), diff.shape)
        diff = ad.where(mask, ad.wrap_angle(diff), diff)
    return ad.tsum(ad.square(diff), axis=-1)


def compute_losses(model, observer, canon, q_batch, dt, weights: LossWeights, rng=None, p_batch=None,
                   rows=None) -> dict:
    """Loss terms over teacher-forced transitions of a batch (B, T, n).

    ``p_batch`` supplies true momenta when the full state is observed.
    ``rows`` optionally restricts the transitions to (trajectory, time) pairs.
    """
    q = np.asarray(q_batch, dtype=float)
    B, T, n = q.shape
    ang = model.angular
    if p_batch is None:
        vhat = observer_velocity(observer, q, dt, ang)
    else:
        vhat = None
    if rows is None:
        b_idx = np.repeat(np.arange(B), T - 1)
        t_idx = np.tile(np.arange(T - 1), B)
    else:
        b_idx, t_idx = rows
    q_t = Tensor(q[b_idx, t_idx])
    target = q[b_idx, t_idx + 1]
    if vhat is not None:
        p_t = canonicalize(canon, model.mass, q_t, vhat[b_idx, t_idx])
    else:
        p_t = Tensor(np.asarray(p_batch, dtype=float)[b_idx, t_idx])
    q_next, p_next = model_step(model, q_t, p_t)
    terms = {"data": ad.mean(_manifold_sq(q_next, target, ang))}

    need_energy = weights.passivity > 0 or weights.energy > 0
    ctx = ad.no_grad() if not need_energy else _null()
    with ctx:
        H_t = model.hamiltonian(q_t, p_t)
        H_next = model.hamiltonian(q_next, p_next)
        dH = H_next - H_t
        terms["passivity"] = ad.mean(ad.relu(dH))
        v_t = model.velocity(q_t, p_t)
        power = ad.tsum(v_t * model.damping.apply(q_t, v_t), axis=-1)
        terms["energy"] = ad.mean(ad.tabs(dH * (1.0 / dt) + power))

    Hr = int(weights.rollout_horizon)
    if weights.rollout > 0 and Hr > 0 and T - 1 - Hr >= 0:
        rng = rng or stream(0, "t0")
        t0 = rng.integers(0, T - Hr, size=B)
        bi = np.arange(B)
        q0 = Tensor(q[bi, t0])
        if vhat is not None:
            p0 = canonicalize(canon, model.mass, q0, vhat[bi, t0])
        else:
            p0 = Tensor(np.asarray(p_batch, dtype=float)[bi, t0])
        qs = rollout_open_loop(model, q0, p0, Hr)
        errs = [ad.mean(_manifold_sq(qh, q[bi, t0 + h + 1], ang)) for h, qh in enumerate(qs)]
        total = errs[0]
        for e in errs[1:]:
            total = total + e
        terms["rollout"] = total * (1.0 / Hr)
    else:
        terms["rollout"] = Tensor(0.0)

    total = terms["data"] * weights.data
    for key, w in (("passivity", weights.passivity), ("energy", weights.energy), ("rollout", weights.rollout)):
        if w > 0:
            total = total + terms[key] * w
    terms["total"] = total
    return terms


class _null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def validation_mse(model, observer, canon, q_val, dt) -> float:
    pred = one_step_predictions(model, observer, canon, q_val, dt)
    return manifold_mse(pred, np.asarray(q_val)[:, 1:], model.angular)


@dataclass
class Trainer:
    """Stateful loop so that a run can be checkpointed after any epoch and resumed."""

    model: object
    observer: object
    canon: str
    q_train: np.ndarray
    q_val: np.ndarray
    dt: float
    weights: LossWeights = field(default_factory=LossWeights)
    config: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        c = self.config
        self.params = self.model.params
        self.opt = AdamW(self.params, c.lr, c.weight_decay, c.betas, c.eps)
        self.epoch = 0
        self.history = []
        self.best = None  # (val_mse, epoch, snapshot)
        self.evaluations = []

    def _items(self):
        N, T, _ = self.q_train.shape
        seg = self.config.segment
        if seg is None:
            return [(i, 0, T - 1) for i in range(N)]
        starts = list(range(0, T - 1, seg))
        return [(i, s, min(s + seg, T - 1)) for i in range(N) for s in starts]

    def run_epoch(self) -> dict:
        c = self.config
        epoch = self.epoch
        lr = cosine_lr(c.lr, epoch, c.epochs)
        items = self._items()
        order = stream(self.seed, "shuffle", epoch).permutation(len(items))
        sums = {}
        count = 0
        gnorm_sq = 0.0
        for b, start in enumerate(range(0, len(items), c.batch_size)):
            chosen = [items[j] for j in order[start:start + c.batch_size]]
            trajs = sorted({i for i, _, _ in chosen})
            local = {i: k for k, i in enumerate(trajs)}
            b_idx = np.concatenate([np.full(e - s, local[i]) for i, s, e in chosen])
            t_idx = np.concatenate([np.arange(s, e) for _, s, e in chosen])
            rng = stream(self.seed, "rollout", epoch, b)
            try:
                terms = compute_losses(self.model, self.observer, self.canon, self.q_train[trajs], self.dt,
                                       self.weights, rng, rows=(b_idx, t_idx))
            except NumericFault as exc:
                raise NumericFault(f"numeric fault in epoch {epoch} batch {b}: {exc}") from exc
            loss = terms["total"]
            if not np.isfinite(loss.value):
                raise NumericFault("loss diverged", where=f"epoch {epoch} batch {b}")
            grads = ad.param_gradients(loss, self.params)
            gnorm_sq_b = sum(float(np.sum(g * g)) for g in grads.values())
            if not np.isfinite(gnorm_sq_b):
                raise NumericFault("non-finite gradient", where=f"epoch {epoch} batch {b}")
            gnorm_sq += gnorm_sq_b
            self.opt.step(grads, lr)
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + float(v.value)
            count += 1
        record = {"epoch": epoch + 1, "lr": lr, "grad_norm": math.sqrt(gnorm_sq / max(count, 1))}
        record.update({f"loss_{k}": v / max(count, 1) for k, v in sums.items()})
        self.epoch += 1
        if self.epoch % c.eval_every == 0 or self.epoch == c.epochs:
            val = validation_mse(self.model, self.observer, self.canon, self.q_val, self.dt)
            record["val_mse"] = val
            self.evaluations.append((self.epoch, val))
            if self.best is None or val < self.best[0]:
                self.best = (val, self.epoch, self.params.snapshot())
        self.history.append(record)
        return record

    def run(self, until: int | None = None, callback=None):
        until = self.config.epochs if until is None else until
        while self.epoch < until:
            rec = self.run_epoch()
            if callback is not None:
                callback(rec)
        return self

    def finalize(self):
        """Load the snapshot with the lowest validation MSE."""
        if self.best is not None:
            self.params.load(self.best[2])
        return self

    @property
    def best_epoch(self):
        return None if self.best is None else self.best[1]


def train(model, observer, canon, q_train, q_val, dt, weights=None, config=None, seed=0, callback=None):
    trainer = Trainer(model, observer, canon, np.asarray(q_train, dtype=float), np.asarray(q_val, dtype=float),
                      dt, weights or LossWeights(), config or TrainConfig(), seed)
    trainer.run(callback=callback)
    trainer.finalize()
    return trainer
