"""Approximate implicit differentiation (AID) for bilevel problems.

Each outer iteration runs N gradient steps on the inner problem, Q gradient
steps on the linear system ``d2g/dy2 v = grad_y f``, then assembles

    grad_x f(x, y_N) - d/dx grad_y g(x, y_N) . v_Q

and takes one outer step. Both sub-loops may be warm-started from the previous
iteration's output.

Cost accounting: every call to ``grad_x_f``, ``grad_y_f`` or ``grad_y_g``
counts as one gradient evaluation (``gc``); every Hessian- or Jacobian-vector
product counts as one ``mv``. A full AID iteration therefore costs N + 2
gradients and Q + 1 products.
"""

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._validation import assert_finite, locate_divergence, check_point, check_positive_int, check_stepsize
from .exceptions import ContractError, DivergenceError


@dataclass
class CostCounters:
    gc: int = 0
    mv: int = 0

    def snapshot(self):
        return (self.gc, self.mv)


@dataclass(frozen=True)
class LoopConfig:
    N: int
    Q: int
    alpha: float
    eta: float
    beta: float
    K: int
    warm_start_y: bool = True
    warm_start_v: bool = True
    x0: Optional[np.ndarray] = None
    y0: Optional[np.ndarray] = None
    v0: Optional[np.ndarray] = None

    def validated(self, oracle):
        """Return a copy with checked values and filled-in initial points."""
        L = oracle.constants.L
        return replace(
            self,
            N=check_positive_int(self.N, "N"),
            Q=check_positive_int(self.Q, "Q"),
            K=check_positive_int(self.K, "K"),
            alpha=check_stepsize(self.alpha, "alpha", L),
            eta=check_stepsize(self.eta, "eta", L),
            beta=check_stepsize(self.beta, "beta", allow_zero=True),
            x0=check_point(oracle.default_x0() if self.x0 is None else self.x0, oracle.p, "x0"),
            y0=check_point(oracle.default_y0() if self.y0 is None else self.y0, oracle.q, "y0"),
            v0=check_point(np.zeros(oracle.q) if self.v0 is None else self.v0, oracle.q, "v0"),
        )


@dataclass
class TraceRecord:
    k: int
    x_norm: float
    grad_est_norm_sq: float
    grad_true_norm_sq: Optional[float]
    gc_cum: int
    mv_cum: int
    wall_ms: float
    phi: Optional[float] = None


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    x_final: Optional[np.ndarray] = None
    final_grad_true_norm_sq: Optional[float] = None
    final_phi: Optional[float] = None
    config: object = None
    algorithm: str = ""
    counters: Optional[CostCounters] = None

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def true_norms(self):
        """‖∇Φ(x_k)‖² per record as a float array (NaN where absent)."""
        return np.array([np.nan if r.grad_true_norm_sq is None else r.grad_true_norm_sq for r in self.records])

    def running_average(self):
        """(1/K) sum_k ‖∇Φ(x_k)‖² over the records that have a value."""
        vals = self.true_norms()
        vals = vals[~np.isnan(vals)]
        return float(vals.mean()) if vals.size else None

    def first_reaching(self, eps):
        """First record with ‖∇Φ(x_k)‖² <= eps, or None."""
        for r in self.records:
            if r.grad_true_norm_sq is not None and r.grad_true_norm_sq <= eps:
                return r
        return None


@np.errstate(over="ignore", invalid="ignore")
def inner_gd(oracle, x, y0, N, alpha, counters):
    """N gradient steps on ``g(x, .)`` from ``y0``; charges N gradient evaluations."""
    check_stepsize(alpha, "alpha", oracle.constants.L)
    if N < 0:
        raise ContractError("N must be non-negative")
    grad = oracle.grad_y_g
    y = np.array(y0, dtype=np.float64, copy=True)
    for _ in range(N):
        y = y - alpha * grad(x, y)
    counters.gc += N
    if not np.isfinite(y).all():
        locate_divergence(lambda z: z - alpha * grad(x, z), np.array(y0, dtype=np.float64), N, "inner iterate")
    return y


@np.errstate(over="ignore", invalid="ignore")
def linear_system_gd(oracle, x, yN, v0, Q, eta, counters):
    """Q gradient steps on ``1/2 v'Hv - v'b`` with ``H = d2g/dy2(x, yN)``, ``b = grad_y f(x, yN)``.

    ``b`` is evaluated once (one gradient evaluation); each step uses one HVP.
    """
    check_stepsize(eta, "eta", oracle.constants.L)
    if Q < 0:
        raise ContractError("Q must be non-negative")
    hvp = oracle.hvp_yy_g
    b = oracle.grad_y_f(x, yN)
    counters.gc += 1
    v = np.array(v0, dtype=np.float64, copy=True)
    for _ in range(Q):
        v = v - eta * (hvp(x, yN, v) - b)
    counters.mv += Q
    if not np.isfinite(v).all():
        locate_divergence(lambda z: z - eta * (hvp(x, yN, z) - b), np.array(v0, dtype=np.float64), Q,
                          "linear-system iterate")
    return v


def aid_hypergradient(oracle, x, yN, vQ, counters):
    """``grad_x f(x, yN) - d/dx grad_y g(x, yN) . vQ``; one gradient and one JVP."""
    if yN.shape != (oracle.q,) or vQ.shape != (oracle.q,) or x.shape != (oracle.p,):
        raise ContractError("aid_hypergradient: dimension mismatch")
    out = oracle.grad_x_f(x, yN) - oracle.jvp_xy_g(x, yN, vQ)
    counters.gc += 1
    counters.mv += 1
    return out


def _true_gradient(oracle, x, reference, k, stride):
    """Reference ∇Φ(x) for the trace, or None when not computed this iteration."""
    if oracle.exact is not None:
        return oracle.exact.grad_phi(x)
    if reference and k % stride == 0:
        from .analysis import exact_hypergradient

        return exact_hypergradient(oracle, x)
    return None


def _phi_value(oracle, x):
    if oracle.exact is None:
        return None
    return oracle.f(x, oracle.exact.y_star(x))


def _finish(trace, oracle, x, reference):
    trace.x_final = x
    g = _true_gradient(oracle, x, reference, 0, 1)
    trace.final_grad_true_norm_sq = None if g is None else float(g @ g)
    trace.final_phi = _phi_value(oracle, x)
    return trace


@np.errstate(over="ignore", invalid="ignore")
def run_aid(oracle, config, *, trace_stride=1, reference=True, record_phi=False,
            stop_at=None):
    """Run AID-BiO for ``config.K`` outer iterations and return a :class:`RunTrace`.

    Record ``k`` describes iterate ``x_k`` (before its update): the estimated
    and true hypergradient norms and the cumulative cost after computing the
    estimate. ``trace.x_final`` is ``x_K``.

    With ``stop_at`` set, the run ends after the first iteration whose
    reference ‖∇Φ(x_k)‖² is at most ``stop_at`` (that iteration's outer step
    is still taken, so the counter identities hold with K = len(trace)).
    """
    cfg = config.validated(oracle)
    trace_stride = check_positive_int(trace_stride, "trace_stride")
    counters = CostCounters()
    trace = RunTrace(config=cfg, algorithm="aid")
    x, y, v = cfg.x0.copy(), cfg.y0.copy(), cfg.v0.copy()
    y_init = cfg.y0
    t0 = time.perf_counter()
    for k in range(cfg.K):
        y_start = y if cfg.warm_start_y else y_init
        v_start = v if cfg.warm_start_v else np.zeros(oracle.q)
        try:
            y = inner_gd(oracle, x, y_start, cfg.N, cfg.alpha, counters)
            v = linear_system_gd(oracle, x, y, v_start, cfg.Q, cfg.eta, counters)
        except DivergenceError as exc:
            raise DivergenceError(f"{exc} (outer iteration {k})", step=exc.step, iteration=k) from exc
        est = aid_hypergradient(oracle, x, y, v, counters)
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
