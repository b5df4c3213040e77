from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_to_pi(angle: float) -> float:
    """Wrap an angle into the half-open interval (-pi, pi]."""
    if not math.isfinite(angle):
        raise ValueError(f"cannot wrap non-finite angle {angle!r}")
    r = math.pi - (math.pi - angle) % TWO_PI
    # float modulo can round up to exactly 2*pi for tiny negative inputs
    if r <= -math.pi:
        r += TWO_PI
    return r


def wrap_to_pi_array(angles: np.ndarray) -> np.ndarray:
    a = np.asarray(angles, dtype=float)
    r = math.pi - np.mod(math.pi - a, TWO_PI)
    return np.where(r <= -math.pi, r + TWO_PI, r)
