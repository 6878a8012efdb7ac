"""Angle wrapping and manifold-aware differences."""

from __future__ import annotations

import numpy as np

__all__ = ["wrap", "manifold_diff"]


def wrap(delta):
    """Map to the half-open interval [-pi, pi); pi itself maps to -pi."""
    delta = np.asarray(delta, dtype=float)
    out = delta - 2.0 * np.pi * np.floor((delta + np.pi) / (2.0 * np.pi))
    # guard the upper boundary against rounding in the floor
    out = np.where(out >= np.pi, out - 2.0 * np.pi, out)
    return out if out.ndim else float(out)


def manifold_diff(a, b, angular):
    """a - b with angular coordinates wrapped."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    angular = np.asarray(angular, dtype=bool)
    if angular.any():
        d = np.where(angular, wrap(d), d)
    return d
