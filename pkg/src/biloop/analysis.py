"""Reference hypergradients and the constants that drive the stepsize rules.

Reference computations charge their oracle calls to a caller-supplied
counter (``oracle_counters``) that is kept apart from any algorithm's tally.
"""

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .aid import CostCounters
from .exceptions import ConvergenceError, ParameterError
from .numerics import solve_spd, symmetrize


@dataclass(frozen=True)
class RateConstants:
    L: float
    mu: float
    rho: float
    M: float

    @classmethod
    def from_oracle(cls, oracle):
        c = oracle.constants
        return cls(L=c.L, mu=c.mu, rho=c.rho, M=c.M)

    @property
    def kappa(self):
        return self.L / self.mu

    @property
    def L_phi(self):
        return smoothness_constant(self.L, self.mu, self.rho, self.M)

    def C_Q(self, Q, eta):
        return cq_constant(Q, eta, self.L, self.mu, self.rho, self.M)


class SchemeId(str, enum.Enum):
    # AID-BiO implementations
    N_Q_LOOP = "N_Q_LOOP"
    N_LOOP = "N_LOOP"
    Q_LOOP = "Q_LOOP"
    NO_LOOP = "NO_LOOP"
    # ITD-BiO implementations
    NN_LOOP = "NN_LOOP"
    ITD_NO_LOOP = "ITD_NO_LOOP"

    @property
    def algorithm(self):
        return "itd" if self in (SchemeId.NN_LOOP, SchemeId.ITD_NO_LOOP) else "aid"

    @classmethod
    def parse(cls, name, algorithm="aid"):
        key = str(name).strip().upper().replace("-", "_")
        if algorithm == "itd" and key == "NO_LOOP":
            key = "ITD_NO_LOOP"
        try:
            scheme = cls(key)
        except ValueError:
            raise ParameterError(f"unknown scheme {name!r}") from None
        if scheme.algorithm != algorithm:
            raise ParameterError(f"scheme {name!r} is not an {algorithm} scheme")
        return scheme


AID_SCHEMES = (SchemeId.N_Q_LOOP, SchemeId.N_LOOP, SchemeId.Q_LOOP, SchemeId.NO_LOOP)
ITD_SCHEMES = (SchemeId.NN_LOOP, SchemeId.ITD_NO_LOOP)


def smoothness_constant(L, mu, rho, M):
    """Lipschitz constant of the hypergradient under the standing assumptions."""
    return L + (2 * L**2 + rho * M**2) / mu + (2 * rho * L * M + L**3) / mu**2 + rho * L**2 * M / mu**3


def cq_constant(Q, eta, L, mu, rho, M):
    """Sensitivity of the Q-step linear-system output to the inner error."""
    if Q < 0:
        raise ParameterError("Q must be non-negative")
    if Q == 0:
        return 0.0
    r = 1.0 - eta * mu
    return (Q * r ** (Q - 1) * rho * M * eta / mu
            + (1.0 - r**Q * (1.0 + eta * Q * mu)) / mu**2 * rho * M
            + (1.0 - r**Q) * L / mu)


def itd_floor(L, mu, M, alpha, N):
    """Lower bound on ‖∇Φ(x_K)‖² for ITD on the two-dimensional worst case.

    ``L² M² ‖(I - alpha Z)^N Z^{-1} 1‖²`` with ``Z = diag(L, mu)``.
    """
    if not 0 < alpha * mu < 1:
        raise ParameterError("need 0 < alpha*mu < 1")
    return L**2 * M**2 * ((1 - alpha * L) ** (2 * N) / L**2 + (1 - alpha * mu) ** (2 * N) / mu**2)


def _ceil(v):
    return max(1, int(math.ceil(v - 1e-12)))


def default_hyperparams(scheme, constants, eps=None, c_beta=0.5):
    """Loop sizes and stepsizes following the complexity-optimal choices.

    All Θ(·) constants in N and Q are 1. The outer stepsize is expressed
    relative to ``1/L_Φ`` (itself Θ(κ^-3)): schemes whose rule is Θ(κ^-3)
    get ``c_beta/L_Φ``, Θ(κ^-4) gets an extra ``1/κ``, Θ(κ^-6) an extra ``1/κ³``.
    Returns a dict with keys ``N, Q, alpha, eta, beta`` (``Q``/``eta`` None for ITD).
    """
    scheme = SchemeId(scheme)
    c = constants
    kappa = c.L / c.mu
    log_k = math.log(kappa) if kappa > 1 else 0.0
    base_beta = c_beta / smoothness_constant(c.L, c.mu, c.rho, c.M)

    def need_eps():
        if eps is None or not eps > 0:
            raise ParameterError(f"scheme {scheme.value} needs a target eps > 0")
        return math.log(kappa / eps)

    if scheme is SchemeId.N_LOOP:
        return dict(N=_ceil(kappa * log_k), Q=1, alpha=1 / c.L, eta=1 / c.L, beta=base_beta / kappa)
    if scheme is SchemeId.NO_LOOP:
        Q = 1
        alpha = 1 / c.L
        eta = min(alpha * c.mu**2 / (128 * Q**2 * c.L**2), alpha / 4, 1 / (c.mu * Q))
        return dict(N=1, Q=Q, alpha=alpha, eta=eta, beta=base_beta / kappa**3)
    if scheme is SchemeId.N_Q_LOOP:
        return dict(N=_ceil(kappa * log_k), Q=_ceil(kappa * need_eps()), alpha=1 / c.L, eta=1 / c.L,
                    beta=base_beta)
    if scheme is SchemeId.Q_LOOP:
        return dict(N=1, Q=_ceil(kappa * need_eps()), alpha=1 / c.L, eta=1 / c.L, beta=base_beta / kappa)
    if scheme is SchemeId.NN_LOOP:
        return dict(N=_ceil(kappa * need_eps()), Q=None, alpha=1 / (2 * c.L), eta=None, beta=base_beta)
    # ITD no-loop: N = Θ(1), alpha = 1/(2NL)
    return dict(N=1, Q=None, alpha=1 / (2 * c.L), eta=None, beta=base_beta)


# ---------------------------------------------------------------------------
# reference hypergradients


def solve_inner(oracle, x, tol=1e-12, max_iter=1_000_000, oracle_counters=None, y0=None):
    """y*(x) from the analytic oracle, else by gradient descent to ``‖grad_y g‖ <= tol``."""
    counters = oracle_counters if oracle_counters is not None else CostCounters()
    if oracle.exact is not None:
        return oracle.exact.y_star(x)
    step = 1.0 / oracle.constants.L
    y = oracle.default_y0() if y0 is None else np.array(y0, dtype=np.float64)
    for _ in range(max_iter):
        g = oracle.grad_y_g(x, y)
        counters.gc += 1
        if float(np.linalg.norm(g)) <= tol:
            return y
        y = y - step * g
    raise ConvergenceError(f"{oracle.name}: inner solve did not reach tol={tol:g} in {max_iter} steps")


def assemble_hessian(oracle, x, y, oracle_counters=None):
    """Dense inner Hessian from q unit-vector HVP probes."""
    q = oracle.q
    H = np.empty((q, q))
    eye = np.eye(q)
    for j in range(q):
        H[:, j] = oracle.hvp_yy_g(x, y, eye[j])
    if oracle_counters is not None:
        oracle_counters.mv += q
    return symmetrize(H)


def exact_hypergradient(oracle, x, tol=1e-12, oracle_counters=None, max_iter=1_000_000):
    """∇Φ(x) = grad_x f - d/dx grad_y g . v*,  with v* solving H v = grad_y f at y*(x)."""
    x = np.asarray(x, dtype=np.float64)
    y = solve_inner(oracle, x, tol=tol, max_iter=max_iter, oracle_counters=oracle_counters)
    H = assemble_hessian(oracle, x, y, oracle_counters)
    v = solve_spd(H, oracle.grad_y_f(x, y))
    out = oracle.grad_x_f(x, y) - oracle.jvp_xy_g(x, y, v)
    if oracle_counters is not None:
        oracle_counters.gc += 2
        oracle_counters.mv += 1
    return out


def phi_value(oracle, x, tol=1e-12, oracle_counters=None, y0=None):
    y = solve_inner(oracle, x, tol=tol, oracle_counters=oracle_counters, y0=y0)
    return oracle.f(x, y)


def finite_difference_hypergradient(oracle, x, h=1e-5, tol=None, oracle_counters=None):
    """Central differences of Φ(x) = f(x, y*(x)), one coordinate at a time.

    Inner problems are solved to ``tol`` (default ``min(h², 1e-12)``) when no
    analytic inner solution exists.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ParameterError(f"h must lie in [1e-7, 1e-3], got {h}")
    tol = min(h * h, 1e-12) if tol is None else min(tol, h * h)
    x = np.asarray(x, dtype=np.float64)
    y_warm = solve_inner(oracle, x, tol=tol, oracle_counters=oracle_counters)
    grad = np.empty(oracle.p)
    for i in range(oracle.p):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = phi_value(oracle, xp, tol, oracle_counters, y_warm)
        fm = phi_value(oracle, xm, tol, oracle_counters, y_warm)
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def unrolled_value(oracle, x, y0, N, alpha):
    """f(x, y_N(x)) where y_N is N gradient steps on g(x, .) from the fixed point y0."""
    y = np.array(y0, dtype=np.float64)
    for _ in range(N):
        y = y - alpha * oracle.grad_y_g(x, y)
    return oracle.f(x, y)


def finite_difference_unrolled(oracle, x, y0, N, alpha, h=1e-5):
    """Central differences of :func:`unrolled_value` in x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty(oracle.p)
    for i in range(oracle.p):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (unrolled_value(oracle, xp, y0, N, alpha) - unrolled_value(oracle, xm, y0, N, alpha)) / (2 * h)
    return grad


def assemble_jacobian(oracle, x, y):
    """Dense mixed Jacobian (p x q) whose columns are JVPs with unit vectors."""
    eye = np.eye(oracle.q)
    return np.column_stack([oracle.jvp_xy_g(x, y, eye[j]) for j in range(oracle.q)])


def itd_closed_form(oracle, x, traj, alpha):
    """ITD hypergradient assembled as an explicit sum of dense matrix products.

    grad_x f(x, y_N) - alpha * sum_t J(y_t) prod_{j=t+1}^{N-1} (I - alpha H(y_j)) grad_y f(x, y_N)
    """
    pts = traj.points if hasattr(traj, "points") else list(traj)
    N = len(pts) - 1
    yN = pts[-1]
    b = oracle.grad_y_f(x, yN)
    total = np.zeros(oracle.p)
    I = np.eye(oracle.q)
    for t in range(N):
        P = I.copy()
        for j in range(t + 1, N):
            P = P @ (I - alpha * assemble_hessian(oracle, x, pts[j]))
        total += assemble_jacobian(oracle, x, pts[t]) @ (P @ b)
    return oracle.grad_x_f(x, yN) - alpha * total


def lower_bound_fixed_point_residual(L, mu, M, alpha, N):
    """‖∇Φ‖² at the limit point of small-N ITD on the worst-case instance."""
    z = np.array([L, mu])
    r = L * M * (1 - alpha * z) ** N / z
    return float(r @ r)
