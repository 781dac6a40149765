"""Banach fixed-point iteration for gamma-contractions in the sup norm."""

import dataclasses
import math
import time

import numpy as np

from ksme.errors import NonConvergenceError

DEFAULT_TOL = 1e-10


@dataclasses.dataclass(frozen=True)
class FixedPointReport:
    iterations: int
    final_residual: float
    converged: bool
    wall_time: float

    def to_dict(self):
        return dataclasses.asdict(self)


def iteration_cap(gamma, tol, initial_residual):
    """A-priori number of iterations after which the error is below `tol`.

    With modulus gamma the n-th step satisfies
    ||x_{n+1} - x_n|| <= gamma^n C, so the fixed-point error after n steps is
    at most gamma^n C / (1 - gamma). 64 extra steps absorb round-off plateaus.
    """
    if initial_residual <= 0.0 or gamma == 0.0:
        return 64
    target = tol * (1.0 - gamma) / initial_residual
    if target >= 1.0:
        return 64
    return int(math.ceil(math.log(target) / math.log(gamma))) + 64


def stopping_threshold(gamma, tol):
    """Successive-iterate gap that certifies a fixed-point error <= tol."""
    if gamma == 0.0:
        return tol
    return min(tol, tol * (1.0 - gamma) / gamma)


def iterate(operator, x0, gamma, tol=DEFAULT_TOL, max_iter=None, callback=None):
    """Iterates `operator` from `x0` until the a-posteriori error is <= tol.

    The stopping rule is ||x_{n+1} - x_n||_inf * gamma / (1 - gamma) <= tol
    (and the gap itself <= tol), which bounds the distance of x_{n+1} to the
    true fixed point by tol.

    Args:
      operator: callable mapping an array to an array of the same shape.
      x0: starting point.
      gamma: contraction modulus of `operator`.
      tol: target sup-norm distance to the fixed point.
      max_iter: iteration cap; defaults to `iteration_cap`.
      callback: optional callable invoked with (n, x_n) after each step.

    Returns:
      (fixed point estimate, FixedPointReport)

    Raises:
      NonConvergenceError: if the cap is reached first.
    """
    start = time.perf_counter()
    threshold = stopping_threshold(gamma, tol)
    x = np.asarray(x0, dtype=float)
    n = 0
    residual = math.inf
    cap = max_iter
    while True:
        x_next = operator(x)
        n += 1
        residual = float(np.max(np.abs(x_next - x))) if x.size else 0.0
        if cap is None:
            cap = iteration_cap(gamma, tol, residual)
        x = x_next
        if callback is not None:
            callback(n, x)
        if residual <= threshold:
            report = FixedPointReport(n, residual, True,
                                      time.perf_counter() - start)
            return x, report
        if n >= cap:
            report = FixedPointReport(n, residual, False,
                                      time.perf_counter() - start)
            raise NonConvergenceError(
                f"no convergence after {n} iterations "
                f"(last residual {residual:.3e})", report)
