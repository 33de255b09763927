"""Argument checks shared by the optimizers and estimators."""

import math
import numbers

import numpy as np

from .exceptions import ContractError, DivergenceError, ParameterError
from .numerics import as_vector

# relative slack when comparing a stepsize to 1/L
_STEP_SLACK = 1e-12


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_stepsize(value, name, L=None, allow_zero=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not math.isfinite(value):
        raise ParameterError(f"{name} must be a finite real, got {value!r}")
    value = float(value)
    if value < 0 or (value == 0 and not allow_zero):
        raise ParameterError(f"{name} must be {'>= 0' if allow_zero else '> 0'}, got {value}")
    if L is not None and value * L > 1.0 + _STEP_SLACK:
        raise ParameterError(f"{name}={value:.6g} exceeds 1/L={1.0 / L:.6g}")
    return value


def check_point(v, dim, name):
    try:
        return as_vector(v, dim, name).copy()
    except ContractError:
        raise
    except (TypeError, ValueError) as exc:
        raise ContractError(f"{name}: {exc}") from exc


def assert_finite(v, what, *, step=None, iteration=None):
    # the sum is non-finite iff some entry is (up to overflow of huge values)
    if not math.isfinite(float(np.sum(v))):
        where = []
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if step is not None:
            where.append(f"step {step}")
        raise DivergenceError(f"{what} became non-finite at {', '.join(where) or 'unknown step'}",
                              step=step, iteration=iteration)


def locate_divergence(step_fn, start, n_steps, what, iteration=None):
    """Replay a deterministic loop to find the first non-finite step, then raise.

    The hot loops only check finiteness once at the end; this is the slow
    path that recovers the step index for the error message.
    """
    z = start
    for t in range(1, n_steps + 1):
        z = step_fn(z)
        assert_finite(z, what, step=t, iteration=iteration)
    assert_finite(z, what, step=n_steps, iteration=iteration)
