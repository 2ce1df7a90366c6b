"""
Random points in convex sets.

hit_and_run samples the polytope {x : G x <= h, E x = e} from a strictly
interior start; ball_in_box draws leader perturbations inside a ball
intersected with a box.
"""

from typing import Optional

import numpy as np
from scipy.linalg import null_space

# Chord length used when a direction is not bounded by any row
MAX_CHORD = 1e6


def hit_and_run(
    G: np.ndarray,
    h: np.ndarray,
    start: np.ndarray,
    count: int,
    rng: np.random.Generator,
    E: Optional[np.ndarray] = None,
    thin: int = 5,
) -> np.ndarray:
    """Hit-and-run walk; returns an array of shape (count, n).

    Directions are drawn in the null space of E so every point keeps E x = E start.
    """
    x = np.asarray(start, dtype=float).copy()
    n = x.size
    basis = np.eye(n) if E is None or E.shape[0] == 0 else null_space(E)
    if basis.shape[1] == 0:
        return np.tile(x, (count, 1))
    GB = G @ basis
    out = np.empty((count, n))
    for k in range(count * thin):
        xi = rng.standard_normal(basis.shape[1])
        xi /= np.linalg.norm(xi)
        d = basis @ xi
        Gd = GB @ xi
        slack = np.maximum(h - G @ x, 0.0)
        up = Gd > 1e-14
        down = Gd < -1e-14
        t_hi = min(np.min(slack[up] / Gd[up], initial=MAX_CHORD), MAX_CHORD)
        t_lo = max(np.max(slack[down] / Gd[down], initial=-MAX_CHORD), -MAX_CHORD)
        if t_hi > t_lo:
            x = x + rng.uniform(t_lo, t_hi) * d
        if (k + 1) % thin == 0:
            out[(k + 1) // thin - 1] = x
    return out


def ball_in_box(
    center: np.ndarray,
    radius: float,
    lo: np.ndarray,
    hi: np.ndarray,
    count: int,
    rng: np.random.Generator,
    attempts: int = 20,
) -> np.ndarray:
    """Points of the radius-ball around center intersected with the box [lo, hi].

    Each point is a uniform ball draw accepted if it lies in the box; after
    `attempts` rejections the last draw is projected onto the box instead,
    which keeps it inside the ball.
    """
    center = np.asarray(center, dtype=float)
    dim = center.size
    out = np.empty((count, dim))
    for k in range(count):
        for _ in range(attempts):
            direction = rng.standard_normal(dim)
            direction /= np.linalg.norm(direction)
            point = center + radius * rng.uniform() ** (1.0 / dim) * direction
            if np.all(point >= lo) and np.all(point <= hi):
                break
        out[k] = np.clip(point, lo, hi)
    return out
