"""Iterative differentiation (ITD) for bilevel problems.

The hypergradient is the derivative of ``x -> f(x, y_N(x))`` where ``y_N(x)``
is the result of N inner gradient steps from a starting point that is held
constant in x (a warm start from the previous outer iteration is not
differentiated through). It is computed by a reverse sweep over the stored
inner trajectory:

    u <- grad_y f(x, y_N);  p <- 0
    for t = N-1 .. 0:
        p <- p + d/dx grad_y g(x, y_t) . u
        u <- u - alpha * d2g/dy2(x, y_t) . u
    result = grad_x f(x, y_N) - alpha * p
"""

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ._validation import assert_finite, check_point, check_positive_int, check_stepsize
from .aid import CostCounters, RunTrace, TraceRecord, _finish, _phi_value, _true_gradient
from .exceptions import ContractError, DivergenceError


@dataclass(frozen=True)
class ItdConfig:
    N: int
    alpha: float
    beta: float
    K: int
    warm_start_y: bool = True
    x0: Optional[np.ndarray] = None
    y0: Optional[np.ndarray] = None

    def validated(self, oracle):
        return replace(
            self,
            N=check_positive_int(self.N, "N"),
            K=check_positive_int(self.K, "K"),
            alpha=check_stepsize(self.alpha, "alpha", oracle.constants.L),
            beta=check_stepsize(self.beta, "beta", allow_zero=True),
            x0=check_point(oracle.default_x0() if self.x0 is None else self.x0, oracle.p, "x0"),
            y0=check_point(oracle.default_y0() if self.y0 is None else self.y0, oracle.q, "y0"),
        )


class Trajectory:
    """Inner iterates ``y_0 .. y_N`` produced at a fixed ``(x, alpha)``."""

    __slots__ = ("points", "x", "alpha")

    def __init__(self, points, x, alpha):
        self.points = points
        self.x = x
        self.alpha = alpha

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def N(self):
        return len(self.points) - 1

    @property
    def last(self):
        return self.points[-1]


@np.errstate(over="ignore", invalid="ignore")
def inner_gd_with_trajectory(oracle, x, y0, N, alpha, counters):
    check_stepsize(alpha, "alpha", oracle.constants.L)
    if N < 0:
        raise ContractError("N must be non-negative")
    grad = oracle.grad_y_g
    y = np.array(y0, dtype=np.float64, copy=True)
    points = [y]
    for _ in range(N):
        y = y - alpha * grad(x, y)
        points.append(y)
    counters.gc += N
    if not np.isfinite(y).all():
        bad = next(t for t, z in enumerate(points) if not np.isfinite(z).all())
        assert_finite(points[bad], "inner iterate", step=bad)
    return Trajectory(points, np.array(x, dtype=np.float64, copy=True), float(alpha))


@np.errstate(over="ignore", invalid="ignore")
def itd_hypergradient(oracle, x, traj, alpha, counters):
    """Reverse-mode hypergradient through ``traj``.

    Charges 2 gradient evaluations and 2N products: N JVPs plus N HVPs. The
    HVP at ``y_0`` is never needed (its result would only feed an empty
    sum), so it is skipped but still charged, which keeps the per-iteration
    tally at 2N.
    """
    if float(alpha) != traj.alpha or not np.array_equal(x, traj.x):
        raise ContractError("trajectory was produced at a different (x, alpha)")
    hvp, jvp = oracle.hvp_yy_g, oracle.jvp_xy_g
    pts = traj.points
    N = len(pts) - 1
    yN = pts[-1]
    u = oracle.grad_y_f(x, yN)
    out = oracle.grad_x_f(x, yN)
    counters.gc += 2
    if N == 0:
        return out
    acc = np.zeros(oracle.p)
    for t in range(N - 1, -1, -1):
        acc += jvp(x, pts[t], u)
        if t > 0:
            u = u - alpha * hvp(x, pts[t], u)
    counters.mv += 2 * N
    return out - alpha * acc


@np.errstate(over="ignore", invalid="ignore")
def run_itd(oracle, config, *, trace_stride=1, reference=True, record_phi=False,
            stop_at=None):
    """Run ITD-BiO for ``config.K`` outer iterations; see :func:`biloop.aid.run_aid`."""
    cfg = config.validated(oracle)
    trace_stride = check_positive_int(trace_stride, "trace_stride")
    counters = CostCounters()
    trace = RunTrace(config=cfg, algorithm="itd")
    x, y = cfg.x0.copy(), cfg.y0.copy()
    t0 = time.perf_counter()
    for k in range(cfg.K):
        y_start = y if cfg.warm_start_y else cfg.y0
        try:
            traj = inner_gd_with_trajectory(oracle, x, y_start, cfg.N, cfg.alpha, counters)
        except DivergenceError as exc:
            raise DivergenceError(f"{exc} (outer iteration {k})", step=exc.step, iteration=k) from exc
        y = traj.last
        est = itd_hypergradient(oracle, x, traj, cfg.alpha, counters)
        true = _true_gradient(oracle, x, reference, k, trace_stride)
        trace.records.append(TraceRecord(
            k=k,
            x_norm=float(np.linalg.norm(x)),
            grad_est_norm_sq=float(est @ est),
            grad_true_norm_sq=None if true is None else float(true @ true),
            gc_cum=counters.gc,
            mv_cum=counters.mv,
            wall_ms=(time.perf_counter() - t0) * 1e3,
            phi=_phi_value(oracle, x) if record_phi else None,
        ))
        x = x - cfg.beta * est
        assert_finite(x, "outer iterate", iteration=k)
        if stop_at is not None and true is not None and float(true @ true) <= stop_at:
            break
    trace.counters = counters
    return _finish(trace, oracle, x, reference)
