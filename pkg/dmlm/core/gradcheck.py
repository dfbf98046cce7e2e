"""Central finite-difference oracle for gradients produced by the tape."""
import logging
from typing import Callable

import numpy as np

from dmlm.core.errors import NonDeterministicFunction, NonScalarLoss
from dmlm.core.numerics import Tape, Tensor, precision

logger = logging.getLogger(__name__)


def finite_difference_check(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """
    Compare reverse-mode gradients of the scalar function `f` at `point` with
    central differences, in 64-bit storage.

    returns: max over coordinates of |g_ad - g_fd| / max(1, |g_ad| + |g_fd|)
    """
    with precision(np.float64):
        x0 = np.array(point, dtype=np.float64)

        leaf = Tensor(x0, requires_grad=True)
        with Tape() as tape:
            loss = f(leaf)
        if loss.shape != ():
            raise NonScalarLoss(f"finite_difference_check needs a scalar function, got shape {loss.shape}")
        tape.backward(loss)
        g_ad = leaf.grad.copy()

        def evaluate(x: np.ndarray) -> float:
            return float(f(Tensor(x)).values)

        first, second = evaluate(x0), evaluate(x0)
        if first != second:
            raise NonDeterministicFunction(f"f returned {first!r} then {second!r} at the same point")

        g_fd = np.zeros_like(x0)
        shifted = x0.copy()
        for i in range(shifted.size):
            original = shifted.flat[i]
            shifted.flat[i] = original + eps
            f_plus = evaluate(shifted)
            shifted.flat[i] = original - eps
            f_minus = evaluate(shifted)
            shifted.flat[i] = original
            g_fd.flat[i] = (f_plus - f_minus) / (2.0 * eps)

    if g_ad.size == 0:
        return 0.0
    error = np.abs(g_ad - g_fd) / np.maximum(1.0, np.abs(g_ad) + np.abs(g_fd))
    worst = float(np.max(error))
    logger.debug(f"Finite-difference check over {g_ad.size} coordinates: max relative error {worst:.3e}")
    return worst
