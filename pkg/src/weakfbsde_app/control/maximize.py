#!filepath: src/weakfbsde_app/control/maximize.py
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray
Objective = Callable[[Array], Array]

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
GOLDEN_ITERS = 60


@dataclass(frozen=True, slots=True)
class Maximum:
    value: Array
    argmax: Array


def maximize(objective: Objective, controls: Array, n: int) -> Maximum:
    """Node-wise sup of objective over a control interval.

    objective maps an (n, m) array of controls to (n, m) values, node i using
    its own data in row i. The uniform grid `controls` is scanned first; the
    smallest grid argmax is then refined by golden section on its neighbouring
    bracket and replaced only if the refined point is strictly better.
    """
    controls = np.asarray(controls, dtype=float)
    m = controls.size
    grid_vals = np.asarray(objective(np.broadcast_to(controls, (n, m))), dtype=float).reshape(n, m)
    j = np.argmax(grid_vals, axis=1)
    best = grid_vals[np.arange(n), j]
    best_alpha = controls[j]
    if m < 2 or controls[0] == controls[-1]:
        return Maximum(value=best, argmax=best_alpha)

    a = controls[np.maximum(j - 1, 0)]
    b = controls[np.minimum(j + 1, m - 1)]

    def at(alpha: Array) -> Array:
        return np.asarray(objective(alpha[:, None]), dtype=float).reshape(n)

    for _ in range(GOLDEN_ITERS):
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        left = at(c) >= at(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    x = 0.5 * (a + b)
    fx = at(x)
    better = fx > best
    return Maximum(value=np.where(better, fx, best), argmax=np.where(better, x, best_alpha))
