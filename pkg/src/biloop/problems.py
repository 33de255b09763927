"""Bilevel test problems.

Every problem is exposed as a :class:`BilevelOracle`: a bundle of first-order
callbacks plus the two second-order products the algorithms are allowed to
use (the inner Hessian-vector product and the mixed Jacobian-vector product).

Conventions for a problem ``min_x f(x, y*(x))`` with ``y*(x) = argmin_y g(x, y)``:

* ``x`` has dimension ``p`` and ``y`` dimension ``q``.
* ``hvp_yy_g(x, y, v)`` returns ``d2g/dy2 @ v`` (length ``q``).
* ``jvp_xy_g(x, y, v)`` returns ``d/dx <grad_y g(x, y), v>`` (length ``p``).

Synthetic data is drawn from ``numpy.random.default_rng(seed)`` (PCG64), so a
given seed reproduces the same arrays bit for bit on one platform.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import ParameterError, SingularMatrixError
from .numerics import (
    as_matrix,
    as_vector,
    extreme_eigenvalues,
    random_orthogonal,
    random_spd,
    solve_spd,
    spectral_norm,
    symmetrize,
)

Vec = np.ndarray


@dataclass(frozen=True)
class OracleConstants:
    """Smoothness/convexity parameters of a problem.

    ``L`` bounds the gradient Lipschitz constants of f and g, ``mu`` is the
    strong-convexity modulus of g in y, ``rho`` bounds the Lipschitz
    constants of the second-order derivatives of g, and ``M`` bounds
    ``||grad_y f(x, y*(x))||``.
    """

    L: float
    mu: float
    rho: float
    M: float

    def __post_init__(self):
        if not (self.L > 0 and self.mu > 0):
            raise ParameterError(f"need L > 0 and mu > 0, got L={self.L}, mu={self.mu}")
        if self.mu > self.L:
            raise ParameterError(f"mu={self.mu} exceeds L={self.L}")
        if self.rho < 0 or self.M < 0:
            raise ParameterError("rho and M must be non-negative")

    @property
    def kappa(self):
        return self.L / self.mu


@dataclass(frozen=True)
class ExactOracle:
    y_star: Callable[[Vec], Vec]
    v_star: Callable[[Vec], Vec]
    grad_phi: Callable[[Vec], Vec]


@dataclass(frozen=True)
class BilevelOracle:
    name: str
    p: int
    q: int
    f: Callable[[Vec, Vec], float]
    g: Callable[[Vec, Vec], float]
    grad_x_f: Callable[[Vec, Vec], Vec]
    grad_y_f: Callable[[Vec, Vec], Vec]
    grad_y_g: Callable[[Vec, Vec], Vec]
    hvp_yy_g: Callable[[Vec, Vec, Vec], Vec]
    jvp_xy_g: Callable[[Vec, Vec, Vec], Vec]
    constants: OracleConstants
    exact: Optional[ExactOracle] = None
    x0: Optional[Vec] = None
    y0: Optional[Vec] = None
    params: dict = field(default_factory=dict)

    def phi(self, x, y_star=None):
        """Outer objective at the inner solution; needs ``exact`` unless ``y_star`` is given."""
        if y_star is None:
            if self.exact is None:
                raise ParameterError(f"{self.name}: no exact inner solution; pass y_star")
            y_star = self.exact.y_star(x)
        return self.f(x, y_star)

    def default_x0(self):
        return np.zeros(self.p) if self.x0 is None else self.x0.copy()

    def default_y0(self):
        return np.zeros(self.q) if self.y0 is None else self.y0.copy()


def _estimate_M(grad_y_f, y_star, x_center, radius, rng, n_samples=64):
    """2x the largest ||grad_y f(x, y*(x))|| over a sampled box around ``x_center``."""
    p = x_center.shape[0]
    pts = [x_center] + [x_center + radius * rng.uniform(-1.0, 1.0, p) for _ in range(n_samples - 1)]
    return 2.0 * max(float(np.linalg.norm(grad_y_f(x, y_star(x)))) for x in pts)


# ---------------------------------------------------------------------------
# quadratic bilevel


def make_quadratic(H, B, c, A, d, *, x0=None, m_radius=10.0, name="quadratic"):
    """Quadratic bilevel problem with closed-form inner solution.

    ``g(x, y) = 1/2 y'Hy - x'B'y + c'y`` and ``f(x, y) = 1/2 x'Ax + 1/2 ||y - d||^2``.
    ``M`` is not globally bounded for this family; it is estimated over the
    box ``||x - x0||_inf <= m_radius``.
    """
    H = as_matrix(H, "H")
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    q, p = B.shape
    if H.shape != (q, q) or A.shape != (p, p):
        raise ParameterError(f"inconsistent shapes H{H.shape} B{B.shape} A{A.shape}")
    c = as_vector(c, q, "c")
    d = as_vector(d, q, "d")
    H = symmetrize(H)
    A = symmetrize(A)
    h_min, h_max = extreme_eigenvalues(H)
    a_min, a_max = extreme_eigenvalues(A)
    if h_min <= 0 or a_min <= 0:
        raise ParameterError(f"H and A must be SPD (lambda_min(H)={h_min:.3g}, lambda_min(A)={a_min:.3g})")
    L = max(h_max, a_max, spectral_norm(B), 1.0)
    mu = h_min
    Bt = np.ascontiguousarray(B.T)

    # ndarray.dot is noticeably cheaper than @ for the tiny operands used here
    def f(x, y):
        r = y - d
        return 0.5 * float(x.dot(A.dot(x))) + 0.5 * float(r.dot(r))

    def g(x, y):
        return 0.5 * float(y.dot(H.dot(y))) - float(x.dot(Bt.dot(y))) + float(c.dot(y))

    def grad_x_f(x, y):
        return A.dot(x)

    def grad_y_f(x, y):
        return y - d

    def grad_y_g(x, y):
        return H.dot(y) - B.dot(x) + c

    def hvp_yy_g(x, y, v):
        return H.dot(v)

    def jvp_xy_g(x, y, v):
        return -Bt.dot(v)

    def y_star(x):
        return solve_spd(H, B @ x - c)

    def v_star(x):
        return solve_spd(H, y_star(x) - d)

    def grad_phi(x):
        return A @ x + Bt @ v_star(x)

    x0 = np.zeros(p) if x0 is None else as_vector(x0, p, "x0")
    M = _estimate_M(grad_y_f, y_star, x0, m_radius, np.random.default_rng(0))
    return BilevelOracle(
        name=name, p=p, q=q, f=f, g=g,
        grad_x_f=grad_x_f, grad_y_f=grad_y_f, grad_y_g=grad_y_g,
        hvp_yy_g=hvp_yy_g, jvp_xy_g=jvp_xy_g,
        constants=OracleConstants(L=L, mu=mu, rho=0.0, M=max(M, 1e-12)),
        exact=ExactOracle(y_star, v_star, grad_phi),
        x0=x0,
        params={"H": H, "B": B, "c": c, "A": A, "d": d},
    )


def make_random_quadratic(p, q, kappa, seed, *, coupling="spread"):
    """Seeded quadratic instance with inner condition number ``kappa``.

    ``coupling="spread"`` draws H with eigenvalues in [1, kappa] and a
    unit-norm B. ``coupling="strong"`` uses H = I and B = kappa * (orthogonal
    columns), so the condition number comes from the x-y coupling and the
    outer function is well conditioned; that variant keeps long runs short.
    """
    if p < 1 or q < 1:
        raise ParameterError("dimensions must be positive")
    if kappa < 1:
        raise ParameterError("kappa must be >= 1")
    rng = np.random.default_rng(seed)
    if coupling == "spread":
        H = random_spd(q, rng, 1.0, float(kappa))
        B = rng.standard_normal((q, p))
        B /= spectral_norm(B)
    elif coupling == "strong":
        H = np.eye(q)
        U = random_orthogonal(max(p, q), rng)[:q, :p]
        B = float(kappa) * U / spectral_norm(U)
    else:
        raise ParameterError(f"unknown coupling {coupling!r}")
    A = random_spd(p, rng, 1.0, 1.0 + min(float(kappa), 10.0) / 10.0)
    c = rng.standard_normal(q)
    d = rng.standard_normal(q)
    oracle = make_quadratic(H, B, c, A, d, name=f"quadratic(kappa={kappa},{coupling})")
    return oracle


# ---------------------------------------------------------------------------
# lower-bound instance


def make_lower_bound_instance(L, mu, M):
    """Two-dimensional worst case for small-N iterative differentiation.

    ``f(x, y) = 1/2 x'Zx + M 1'y`` and ``g(x, y) = 1/2 y'Zy - L x'y + 1'y``
    with ``Z = diag(L, mu)``.
    """
    L, mu, M = float(L), float(mu), float(M)
    if not (L > 0 and mu > 0) or M < 0:
        raise ParameterError(f"need L > 0, mu > 0, M >= 0; got L={L}, mu={mu}, M={M}")
    if mu > L:
        raise ParameterError(f"mu={mu} exceeds L={L}")
    z = np.array([L, mu])
    ones = np.ones(2)
    m_ones = M * ones

    def f(x, y):
        return 0.5 * float(x @ (z * x)) + M * float(y.sum())

    def g(x, y):
        return 0.5 * float(y @ (z * y)) - L * float(x @ y) + float(y.sum())

    def grad_x_f(x, y):
        return z * x

    def grad_y_f(x, y):
        return m_ones.copy()

    def grad_y_g(x, y):
        return z * y - L * x + ones

    def hvp_yy_g(x, y, v):
        return z * v

    def jvp_xy_g(x, y, v):
        return -L * v

    def y_star(x):
        return (L * x - ones) / z

    def v_star(x):
        return m_ones / z

    def grad_phi(x):
        return z * x + L * M / z

    return BilevelOracle(
        name=f"lower_bound(L={L:g},mu={mu:g},M={M:g})", p=2, q=2, f=f, g=g,
        grad_x_f=grad_x_f, grad_y_f=grad_y_f, grad_y_g=grad_y_g,
        hvp_yy_g=hvp_yy_g, jvp_xy_g=jvp_xy_g,
        # ||grad_y f|| = sqrt(2) M on this instance
        constants=OracleConstants(L=L, mu=mu, rho=0.0, M=max(np.sqrt(2.0) * M, 1e-12)),
        exact=ExactOracle(y_star, v_star, grad_phi),
        x0=ones.copy(),
        params={"L": L, "mu": mu, "M": M, "Z": np.diag(z)},
    )


# ---------------------------------------------------------------------------
# hyper-representation regression


def make_hyper_representation(dims, gamma=1.0, seed=0, *, noise=0.1, target_scale=1.0, box_radius=1.0):
    """Linear hyper-representation learning on seeded Gaussian data.

    ``dims = (n_features, n_hidden, n_train, n_val)``. The outer variable is
    the row-major flattening of the ``n_features x n_hidden`` feature map
    ``W``; the inner variable is the ridge head ``w`` of length ``n_hidden``:

        g(W, w) = 1/(2 n_train) ||X_T W w - Y_T||^2 + gamma/2 ||w||^2
        f(W, w) = 1/(2 n_val)   ||X_V W w - Y_V||^2

    Inputs are i.i.d. N(0, 1); targets are ``X theta + noise * eps`` with
    ``theta ~ N(0, I/n_features)`` scaled by ``target_scale``.
    L, rho and M are bounds over the box ``||W - W0||_F <= box_radius``.
    """
    try:
        m, h, n_t, n_v = (int(v) for v in dims)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"dims must be (n_features, n_hidden, n_train, n_val), got {dims!r}") from exc
    if min(m, h, n_t, n_v) < 1:
        raise ParameterError(f"dimensions must be positive, got {dims!r}")
    gamma = float(gamma)
    if not gamma > 0:
        raise ParameterError("gamma must be positive")

    rng = np.random.default_rng(seed)
    X_T = rng.standard_normal((n_t, m))
    X_V = rng.standard_normal((n_v, m))
    theta = rng.standard_normal(m) / np.sqrt(m)
    Y_T = target_scale * (X_T @ theta + noise * rng.standard_normal(n_t))
    Y_V = target_scale * (X_V @ theta + noise * rng.standard_normal(n_v))
    W0 = rng.standard_normal((m, h)) / np.sqrt(m)

    G_T = X_T.T @ X_T / n_t
    G_V = X_V.T @ X_V / n_v
    b_T = X_T.T @ Y_T / n_t

    def mat(x):
        return x.reshape(m, h)

    def f(x, y):
        r = X_V @ (mat(x) @ y) - Y_V
        return 0.5 * float(r @ r) / n_v

    def g(x, y):
        r = X_T @ (mat(x) @ y) - Y_T
        return 0.5 * float(r @ r) / n_t + 0.5 * gamma * float(y @ y)

    def grad_x_f(x, y):
        r = X_V @ (mat(x) @ y) - Y_V
        return np.outer(X_V.T @ r, y).ravel() / n_v

    def grad_y_f(x, y):
        W = mat(x)
        return W.T @ (X_V.T @ (X_V @ (W @ y) - Y_V)) / n_v

    def grad_y_g(x, y):
        W = mat(x)
        return W.T @ (G_T @ (W @ y) - b_T) + gamma * y

    def hvp_yy_g(x, y, v):
        W = mat(x)
        return W.T @ (G_T @ (W @ v)) + gamma * v

    def jvp_xy_g(x, y, v):
        # d/dW <W'(G W y - b) + gamma y, v> = (G W y - b) v' + G W v y'
        W = mat(x)
        return (np.outer(G_T @ (W @ y) - b_T, v) + np.outer(G_T @ (W @ v), y)).ravel()

    def inner_hessian(x):
        W = mat(x)
        return symmetrize(W.T @ G_T @ W + gamma * np.eye(h))

    def y_star(x):
        W = mat(x)
        return solve_spd(inner_hessian(x), W.T @ b_T)

    def v_star(x):
        return solve_spd(inner_hessian(x), grad_y_f(x, y_star(x)))

    def grad_phi(x):
        y = y_star(x)
        return grad_x_f(x, y) - jvp_xy_g(x, y, solve_spd(inner_hessian(x), grad_y_f(x, y)))

    x0 = W0.ravel().copy()
    w_bound = np.linalg.norm(W0, 2) + box_radius
    gt_norm = max(np.linalg.eigvalsh(G_T)[-1], np.linalg.eigvalsh(G_V)[-1])
    L = gt_norm * w_bound**2 + gamma
    # crude third-derivative bound over the box: d(W'GW)/dW and d(G W v y')/dW
    rho = 2.0 * gt_norm * w_bound * (1.0 + w_bound)
    M = _estimate_M(grad_y_f, y_star, x0, box_radius / np.sqrt(m * h), np.random.default_rng(seed + 1), 32)

    return BilevelOracle(
        name=f"hyper_representation(dims={dims},gamma={gamma:g},seed={seed})",
        p=m * h, q=h, f=f, g=g,
        grad_x_f=grad_x_f, grad_y_f=grad_y_f, grad_y_g=grad_y_g,
        hvp_yy_g=hvp_yy_g, jvp_xy_g=jvp_xy_g,
        constants=OracleConstants(L=float(L), mu=gamma, rho=float(rho), M=max(M, 1e-12)),
        exact=ExactOracle(y_star, v_star, grad_phi),
        x0=x0,
        params={"X_T": X_T, "Y_T": Y_T, "X_V": X_V, "Y_V": Y_V, "gamma": gamma, "seed": seed,
                "inner_hessian": inner_hessian},
    )


# ---------------------------------------------------------------------------
# regularized logistic regression (hyperparameter optimization)


def softplus(t):
    return float(np.logaddexp(0.0, t))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def make_hyper_cleaning(dims, noise_frac=0.1, seed=0, *, split=(0.5, 0.5), reg_lambda_init=0.0,
                        lambda_box=(-4.0, 2.0)):
    """Tune an L2 penalty for logistic regression on noisy synthetic labels.

    ``dims = (n_samples, n_features)``. The outer variable is a single real
    ``lam``; the effective penalty is ``softplus(lam)`` so the inner problem
    stays strongly convex for every real ``lam``:

        g(lam, w) = mean_train log(1 + exp(-y a'w)) + softplus(lam)/2 ||w||^2
        f(lam, w) = mean_val   log(1 + exp(-y a'w))

    A fraction ``noise_frac`` of training labels is flipped. No closed-form
    inner solution exists, so ``exact`` is None. ``mu``/``L``/``M`` are
    bounds over ``lam`` in ``lambda_box``.
    """
    try:
        n, m = (int(v) for v in dims)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"dims must be (n_samples, n_features), got {dims!r}") from exc
    if n < 4 or m < 1:
        raise ParameterError(f"degenerate dimensions {dims!r}")
    if not 0.0 <= noise_frac < 0.5:
        raise ParameterError("noise_frac must lie in [0, 0.5)")
    f_tr, f_va = split
    if not (0 < f_tr and 0 < f_va and f_tr + f_va <= 1.0):
        raise ParameterError(f"bad split {split!r}")
    lo, hi = lambda_box
    if not lo < hi:
        raise ParameterError("lambda_box must be increasing")

    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((n, m))
    w_true = rng.standard_normal(m)
    labels = np.where(feats @ w_true + 0.5 * rng.standard_normal(n) >= 0.0, 1.0, -1.0)
    n_tr = max(1, int(round(f_tr * n)))
    n_va = max(1, min(n - n_tr, int(round(f_va * n))))
    if n_tr + n_va > n:
        raise ParameterError("split leaves no validation samples")
    A_tr, y_tr = feats[:n_tr], labels[:n_tr].copy()
    A_va, y_va = feats[n_tr:n_tr + n_va], labels[n_tr:n_tr + n_va]
    flip = rng.permutation(n_tr)[: int(round(noise_frac * n_tr))]
    y_tr[flip] *= -1.0
    YA_tr = y_tr[:, None] * A_tr
    YA_va = y_va[:, None] * A_va

    def _loss(YA, w):
        return float(np.mean(np.logaddexp(0.0, -(YA @ w))))

    def _grad(YA, w):
        return -(YA.T @ _sigmoid(-(YA @ w))) / YA.shape[0]

    def f(x, y):
        return _loss(YA_va, y)

    def g(x, y):
        return _loss(YA_tr, y) + 0.5 * softplus(x[0]) * float(y @ y)

    def grad_x_f(x, y):
        return np.zeros(1)

    def grad_y_f(x, y):
        return _grad(YA_va, y)

    def grad_y_g(x, y):
        return _grad(YA_tr, y) + softplus(x[0]) * y

    def hvp_yy_g(x, y, v):
        s = _sigmoid(YA_tr @ y)
        return (YA_tr.T @ (s * (1.0 - s) * (YA_tr @ v))) / n_tr + softplus(x[0]) * v

    def jvp_xy_g(x, y, v):
        # d softplus / d lam = sigmoid(lam)
        return np.array([_sigmoid(x[0]) * float(y @ v)])

    a_norm2 = max(np.linalg.eigvalsh(A_tr.T @ A_tr)[-1] / n_tr, np.linalg.eigvalsh(A_va.T @ A_va)[-1] / n_va)
    mu = softplus(lo)
    L = 0.25 * a_norm2 + softplus(hi)
    # |sigma'''| <= 1/(6 sqrt 3); rows have norm <= max_row
    max_row = float(np.max(np.linalg.norm(feats, axis=1)))
    rho = a_norm2 * max_row / (6.0 * np.sqrt(3.0)) + 0.25
    constants_L = max(L, 1.0)

    def _solve_inner(x, tol=1e-10, max_iter=200000):
        y = np.zeros(m)
        step = 1.0 / (0.25 * a_norm2 + softplus(x[0]))
        for _ in range(max_iter):
            gr = grad_y_g(x, y)
            if np.linalg.norm(gr) <= tol:
                return y
            y = y - step * gr
        return y

    M = 2.0 * max(np.linalg.norm(grad_y_f(np.array([t]), _solve_inner(np.array([t]))))
                  for t in np.linspace(lo, hi, 5))

    return BilevelOracle(
        name=f"hyper_cleaning(dims={dims},noise={noise_frac:g},seed={seed})",
        p=1, q=m, f=f, g=g,
        grad_x_f=grad_x_f, grad_y_f=grad_y_f, grad_y_g=grad_y_g,
        hvp_yy_g=hvp_yy_g, jvp_xy_g=jvp_xy_g,
        constants=OracleConstants(L=float(constants_L), mu=float(mu), rho=float(rho), M=max(float(M), 1e-12)),
        exact=None,
        x0=np.array([float(reg_lambda_init)]),
        params={"A_train": A_tr, "y_train": y_tr, "A_val": A_va, "y_val": y_va, "lambda_box": (lo, hi),
                "seed": seed},
    )


def check_oracle(oracle, n_probes=100, seed=0, scale=1.0):
    """Probe symmetry and coercivity of ``hvp_yy_g`` at random points.

    Returns a dict of the worst observed violations; raises
    :class:`SingularMatrixError` if the coercivity probe fails outright.
    """
    rng = np.random.default_rng(seed)
    mu = oracle.constants.mu
    x_c, y_c = oracle.default_x0(), oracle.default_y0()
    worst_sym = 0.0
    worst_coer = np.inf
    for _ in range(n_probes):
        x = x_c + scale * rng.standard_normal(oracle.p) / np.sqrt(oracle.p)
        y = y_c + scale * rng.standard_normal(oracle.q)
        u = rng.standard_normal(oracle.q)
        v = rng.standard_normal(oracle.q)
        hu = oracle.hvp_yy_g(x, y, u)
        hv = oracle.hvp_yy_g(x, y, v)
        worst_sym = max(worst_sym, abs(float(u @ hv) - float(v @ hu)) / (1.0 + abs(float(u @ hv))))
        worst_coer = min(worst_coer, float(v @ hv) - mu * float(v @ v))
    if worst_coer < -1e-8:
        raise SingularMatrixError(f"{oracle.name}: coercivity probe failed by {-worst_coer:.3g}")
    return {"symmetry": worst_sym, "coercivity_margin": worst_coer}
