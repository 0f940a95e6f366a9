"""Central finite-difference gradient verification.

Used by the test suite as the independent oracle for every analytic backward
rule: it perturbs raw parameter arrays and re-runs the forward function, so it
never touches the tape machinery it is checking.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def finite_difference(f: Callable[[], float], arr: np.ndarray, flat_index: int,
                      eps: float = 1e-5) -> float:
    """Central difference of scalar ``f`` w.r.t. one entry of ``arr`` in place."""
    orig = arr.flat[flat_index]
    arr.flat[flat_index] = orig + eps
    hi = f()
    arr.flat[flat_index] = orig - eps
    lo = f()
    arr.flat[flat_index] = orig
    return (hi - lo) / (2.0 * eps)


def relative_error(analytic: float, numeric: float, guard: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), guard)


def max_gradient_error(
    f: Callable[[], float],
    arrays: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    eps: float = 1e-5,
    max_entries_per_array: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst per-element relative error between ``grads`` and central
    finite differences of ``f`` over the given arrays.

    With ``max_entries_per_array`` set, a seeded random subset of entries is
    checked per array (needed to keep full-model sweeps within their runtime
    budget); otherwise every entry is checked.
    """
    worst = 0.0
    for arr, grad in zip(arrays, grads):
        if grad is None:
            grad = np.zeros_like(arr)
        idx = np.arange(arr.size)
        if max_entries_per_array is not None and arr.size > max_entries_per_array:
            idx = rng.choice(arr.size, size=max_entries_per_array, replace=False)
        for i in idx:
            num = finite_difference(f, arr, int(i), eps=eps)
            worst = max(worst, relative_error(float(grad.flat[int(i)]), num))
    return worst
