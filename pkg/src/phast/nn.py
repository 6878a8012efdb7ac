"""Small network building blocks on top of the tape: perceptrons, features, causal convolutions."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Dual, ParamStore, Tensor
from .rng import Stream

__all__ = ["init_uniform", "MLP", "Featurizer", "CausalConv1d"]


def init_uniform(rng: Stream, fan_in: int, shape) -> np.ndarray:
    """Uniform in +-sqrt(1/fan_in)."""
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MLP:
    """Fully connected SiLU network. ``sizes`` lists widths from input to output.

    Parameters are registered as ``{prefix}.W{i}`` then ``{prefix}.b{i}`` for
    each layer in order, and drawn from ``rng`` in that same order.
    """

    def __init__(self, params: ParamStore, prefix: str, sizes, rng: Stream, zero_last=False, trainable=True):
        self.prefix = prefix
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = []
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == len(self.sizes) - 2
            W = np.zeros((b, a)) if (last and zero_last) else init_uniform(rng, a, (b, a))
            bias = np.zeros(b) if (last and zero_last) else init_uniform(rng, a, (b,))
            self.weights.append(
                (
                    params.add(f"{prefix}.W{i}", W, trainable=trainable),
                    params.add(f"{prefix}.b{i}", bias, trainable=trainable),
                )
            )

    def __call__(self, x):
        n = len(self.weights)
        for i, (W, b) in enumerate(self.weights):
            x = ad.linear(x, W, b)
            if i < n - 1:
                x = ad.silu(x)
            ad.check_finite(x, f"{self.prefix}.layer{i}")
        return x


class Featurizer:
    """Map configurations to network inputs.

    Angular coordinates become [sin q, cos q, sin 2q, cos 2q, ...] up to
    ``harmonics``; Euclidean coordinates are standardized with fixed
    ``shift``/``scale`` (identity by default).
    """

    def __init__(self, angular, harmonics: int = 2, shift=None, scale=None):
        self.angular = np.asarray(angular, dtype=bool)
        self.harmonics = int(harmonics)
        n = self.angular.size
        self.shift = np.zeros(n) if shift is None else np.asarray(shift, dtype=float)
        self.scale = np.ones(n) if scale is None else np.asarray(scale, dtype=float)

    @property
    def width(self) -> int:
        return int(sum(2 * self.harmonics if a else 1 for a in self.angular))

    def __call__(self, q):
        cols = []
        for i, ang in enumerate(self.angular):
            qi = q[..., i]
            if ang:
                for h in range(1, self.harmonics + 1):
                    arg = qi if h == 1 else qi * float(h)
                    cols.append(ad.sin(arg))
                    cols.append(ad.cos(arg))
            else:
                cols.append((qi - self.shift[i]) * (1.0 / self.scale[i]))
        return ad.stack(cols, axis=-1)


class CausalConv1d:
    """Dilated 1-D convolution over (batch, time, channel) with left padding only."""

    def __init__(self, params: ParamStore, prefix: str, c_in: int, c_out: int, kernel: int, dilation: int,
                 rng: Stream, zero=False):
        self.kernel, self.dilation = int(kernel), int(dilation)
        self.c_in, self.c_out = int(c_in), int(c_out)
        fan_in = c_in * kernel
        W = np.zeros((kernel, c_out, c_in)) if zero else init_uniform(rng, fan_in, (kernel, c_out, c_in))
        b = np.zeros(c_out) if zero else init_uniform(rng, fan_in, (c_out,))
        self.W = params.add(f"{prefix}.W", W)
        self.b = params.add(f"{prefix}.b", b)
        self.prefix = prefix

    @property
    def reach(self) -> int:
        return (self.kernel - 1) * self.dilation

    def __call__(self, x: Tensor) -> Tensor:
        x = ad.as_tensor(x)
        B, T, _ = x.shape
        pad = self.reach
        if pad:
            x = ad.concatenate([Tensor(np.zeros((B, pad, self.c_in))), x], axis=1)
        out = None
        for j in range(self.kernel):
            start = j * self.dilation
            tap = x[:, start:start + T, :]
            term = ad.linear(tap, self.W[j])
            out = term if out is None else out + term
        return ad.check_finite(out + self.b, self.prefix)
