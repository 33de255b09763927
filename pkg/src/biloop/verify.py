"""Built-in acceptance suite behind ``biloop verify``.

Each criterion returns a :class:`CriterionResult`. The printed report holds
only deterministic quantities (no timings), so two runs give identical text.
Runtime budgets are still enforced as part of each pass/fail decision.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import itd as _itd
from .aid import CostCounters, LoopConfig, aid_hypergradient, inner_gd, run_aid
from .analysis import (
    RateConstants,
    SchemeId,
    default_hyperparams,
    finite_difference_unrolled,
    itd_closed_form,
    itd_floor,
    lower_bound_fixed_point_residual,
)
from .config import parse_config
from .exceptions import DivergenceError, SingularMatrixError
from .itd import ItdConfig, inner_gd_with_trajectory
from .numerics import solve_spd
from .problems import make_hyper_representation, make_lower_bound_instance, make_random_quadratic
from .runner import run_experiment, summarize, trace_csv


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: str
    expected: str

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number} {self.name}: measured {self.measured}; expected {self.expected}"


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def _quad10():
    return make_random_quadratic(5, 5, 10.0, seed=3)


def hypergradient_exactness():
    o = _quad10()
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        x = rng.standard_normal(o.p)
        est = aid_hypergradient(o, x, o.exact.y_star(x), o.exact.v_star(x), CostCounters())
        worst = max(worst, _rel(est, o.exact.grad_phi(x)))
    ok = worst <= 1e-10 and time.perf_counter() - t0 < 1.0
    return CriterionResult(1, "hypergradient_exactness", ok, f"max rel err {worst:.3e} over 20 points",
                           "<= 1e-10 within 1 s")


def _itd_instances():
    """Small random instances: quadratics and hyper-representation, q <= 5."""
    out = []
    for s in range(8):
        rng = np.random.default_rng(100 + s)
        if s % 2 == 0:
            o = make_random_quadratic(int(rng.integers(1, 6)), int(rng.integers(1, 6)), 5.0, seed=s)
        else:
            o = make_hyper_representation((4, int(rng.integers(1, 6)), 15, 15), gamma=0.5, seed=s)
        out.append((o, rng))
    return out


def itd_correctness():
    t0 = time.perf_counter()
    closed_err = 0.0
    for o, rng in _itd_instances():
        N = int(rng.integers(1, 7))
        x = rng.standard_normal(o.p)
        alpha = 1.0 / o.constants.L
        traj = inner_gd_with_trajectory(o, x, rng.standard_normal(o.q), N, alpha, CostCounters())
        rec = _itd.itd_hypergradient(o, x, traj, alpha, CostCounters())
        closed_err = max(closed_err, _rel(rec, itd_closed_form(o, x, traj, alpha)))
    fd_err = 0.0
    for o in (_quad10(), make_hyper_representation((6, 3, 40, 40), gamma=0.5, seed=2)):
        rng = np.random.default_rng(11)
        alpha = 1.0 / o.constants.L
        for N in (1, 4, 10):
            x = 0.5 * rng.standard_normal(o.p)
            y0 = rng.standard_normal(o.q)
            traj = inner_gd_with_trajectory(o, x, y0, N, alpha, CostCounters())
            est = _itd.itd_hypergradient(o, x, traj, alpha, CostCounters())
            fd_err = max(fd_err, _rel(est, finite_difference_unrolled(o, x, y0, N, alpha, h=1e-5)))
    ok = closed_err <= 1e-12 and fd_err <= 1e-5 and time.perf_counter() - t0 < 5.0
    return CriterionResult(2, "itd_correctness", ok,
                           f"closed-form err {closed_err:.3e}, finite-difference rel err {fd_err:.3e}",
                           "<= 1e-12 and <= 1e-5 within 5 s")


def geometric_decay():
    t0 = time.perf_counter()
    o = _quad10()
    x = np.linspace(-1.0, 1.0, o.p)
    alpha = 1.0 / o.constants.L
    H = o.params["H"]
    exact = o.exact.grad_phi(x)
    errs = []
    Ns = np.arange(1, 51)
    for N in Ns:
        yN = inner_gd(o, x, np.zeros(o.q), int(N), alpha, CostCounters())
        v = solve_spd(H, o.grad_y_f(x, yN))
        errs.append(np.linalg.norm(aid_hypergradient(o, x, yN, v, CostCounters()) - exact))
    slope = float(np.polyfit(Ns, np.log(errs), 1)[0])
    target = math.log(1.0 - alpha * o.constants.mu)
    ok = abs(slope - target) <= 0.1 * abs(target) and time.perf_counter() - t0 < 5.0
    return CriterionResult(3, "geometric_decay", ok, f"slope {slope:.5f}",
                           f"ln(1 - alpha mu) = {target:.5f} +/- 10% within 5 s")


def lower_bound_floor():
    t0 = time.perf_counter()
    L, mu, M, alpha = 2.0, 1.0, 1.0, 0.25
    o = make_lower_bound_instance(L, mu, M)
    beta = 1.0 / (2.0 * RateConstants(L, mu, 0.0, M).L_phi)
    floor = itd_floor(L, mu, M, alpha, 1)
    trace = _itd.run_itd(o, ItdConfig(N=1, alpha=alpha, beta=beta, K=5000))
    norms = np.append(trace.true_norms(), trace.final_grad_true_norm_sq)
    min_norm = float(norms.min())
    residual = lower_bound_fixed_point_residual(L, mu, M, alpha, 1)
    final = trace.final_grad_true_norm_sq
    long = _itd.run_itd(o, ItdConfig(N=60, alpha=alpha, beta=beta, K=5000)).final_grad_true_norm_sq
    ok = (min_norm >= floor - 1e-9 and abs(final - 2.5) <= 1e-6 and abs(residual - 2.5) <= 1e-12
          and long <= 1e-10 and time.perf_counter() - t0 < 10.0)
    return CriterionResult(
        4, "lower_bound_floor", ok,
        f"min_k norm^2 {min_norm:.9f} vs floor {floor:.9f}, final {final:.9f}, N=60 final {long:.3e}",
        "min >= floor - 1e-9, final = 2.5 +/- 1e-6, N=60 <= 1e-10 within 10 s")


def counter_identities():
    o = _quad10()
    a = 1.0 / o.constants.L
    bad = []
    n_runs = 0
    for N, Q, K in ((1, 1, 5), (3, 7, 4), (12, 2, 6), (24, 24, 3)):
        c = run_aid(o, LoopConfig(N=N, Q=Q, alpha=a, eta=a, beta=1e-3, K=K), reference=False).counters
        n_runs += 1
        if (c.gc, c.mv) != (K * (N + 2), K * (Q + 1)):
            bad.append(f"aid N={N} Q={Q} K={K}: gc={c.gc} mv={c.mv}")
    for N, K in ((1, 7), (5, 4), (40, 2)):
        c = _itd.run_itd(o, ItdConfig(N=N, alpha=a, beta=1e-3, K=K), reference=False).counters
        n_runs += 1
        if (c.gc, c.mv) != (K * (N + 2), 2 * K * N):
            bad.append(f"itd N={N} K={K}: gc={c.gc} mv={c.mv}")
    return CriterionResult(5, "counter_identities", not bad,
                           "; ".join(bad) if bad else f"{n_runs} runs exact",
                           "aid gc=K(N+2), mv=K(Q+1); itd gc=K(N+2), mv=2KN")


def _mv_to_eps(row):
    return "not reached" if row.mv is None else str(row.mv)


def loop_scheme_ordering():
    t0 = time.perf_counter()
    eps = 1e-6
    o = make_random_quadratic(5, 5, 100.0, seed=1, coupling="strong")
    c = RateConstants.from_oracle(o)
    beta = 1.0 / c.L_phi
    n_loop = default_hyperparams(SchemeId.N_LOOP, c)
    a = n_loop["alpha"]
    runs = {
        "aid N-loop": run_aid(o, LoopConfig(N=n_loop["N"], Q=1, alpha=a, eta=a, beta=beta, K=20000), stop_at=eps),
        "aid No-loop": run_aid(o, LoopConfig(N=1, Q=1, alpha=a, eta=a, beta=beta, K=20000), stop_at=eps),
    }
    nn = default_hyperparams(SchemeId.NN_LOOP, c, eps=eps)
    runs["itd NN-loop"] = _itd.run_itd(o, ItdConfig(N=nn["N"], alpha=nn["alpha"], beta=beta, K=20000), stop_at=eps)
    rows = {k: summarize(t, eps, k) for k, t in runs.items()}
    lb = make_lower_bound_instance(2.0, 1.0, 1.0)
    nl = default_hyperparams(SchemeId.ITD_NO_LOOP, RateConstants.from_oracle(lb))
    lb_trace = _itd.run_itd(lb, ItdConfig(N=nl["N"], alpha=nl["alpha"], beta=nl["beta"], K=5000))
    lb_row = summarize(lb_trace, eps, "itd No-loop")
    ok = (rows["aid N-loop"].reached and rows["aid No-loop"].reached
          and rows["aid N-loop"].mv < rows["aid No-loop"].mv
          and rows["itd NN-loop"].reached and not lb_row.reached
          and time.perf_counter() - t0 < 60.0)
    measured = ", ".join(f"{k} MV {_mv_to_eps(r)}" for k, r in rows.items())
    measured += f", lower-bound itd No-loop min norm^2 {lb_row.min_grad_norm_sq:.6f}"
    return CriterionResult(6, "loop_scheme_ordering", ok, measured,
                           "N-loop MV < No-loop MV, both reach 1e-6; NN-loop reaches; No-loop floor stays above "
                           "1e-6; within 60 s")


BETA_GRID = (0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0)


def _best_loss(o, N, K=500):
    """Lowest Φ(x_K) over the outer-stepsize grid (diverging stepsizes are skipped)."""
    best = math.inf
    alpha = 1.0 / o.constants.L
    for beta in BETA_GRID:
        try:
            t = _itd.run_itd(o, ItdConfig(N=N, alpha=alpha, beta=beta, K=K), reference=False)
        except (DivergenceError, SingularMatrixError):
            continue
        if t.final_phi is not None and math.isfinite(t.final_phi):
            best = min(best, t.final_phi)
    return best


def unroll_depth_loss_ratio():
    t0 = time.perf_counter()
    o = make_hyper_representation((30, 5, 20, 100), gamma=0.01, seed=0, noise=0.1)
    loss1 = _best_loss(o, 1)
    loss20 = _best_loss(o, 20)
    ratio = loss20 / loss1
    ok = ratio <= 0.1 and time.perf_counter() - t0 < 30.0
    return CriterionResult(7, "unroll_depth_loss_ratio", ok,
                           f"validation loss N=1 {loss1:.6e}, N=20 {loss20:.6e}, ratio {ratio:.4f}",
                           "ratio <= 0.1 within 30 s")


_DETERMINISM_CONFIG = """\
problem.name = quadratic
problem.kappa = 10
problem.seed = 7
algorithm = aid
scheme = N_LOOP
beta = 0.01
K = 60
epsilon = 1e-8
trace_stride = 2
"""


def determinism():
    cfg = parse_config(_DETERMINISM_CONFIG)
    csvs = [trace_csv(run_experiment(cfg)[0]) for _ in range(2)]
    cfg_itd = parse_config(_DETERMINISM_CONFIG.replace("algorithm = aid", "algorithm = itd")
                           .replace("N_LOOP", "NN_LOOP"))
    csvs_itd = [trace_csv(run_experiment(cfg_itd)[0]) for _ in range(2)]
    cheap = ("hypergradient_exactness", "itd_correctness", "geometric_decay", "counter_identities")
    reports = [report(run_criteria(cheap)) for _ in range(2)]
    same = csvs[0] == csvs[1] and csvs_itd[0] == csvs_itd[1] and reports[0] == reports[1]
    return CriterionResult(8, "determinism", same,
                           "identical CSVs and reports" if same else "outputs differ between repeated runs",
                           "byte-identical CSVs and reports")


CRITERIA = (
    hypergradient_exactness,
    itd_correctness,
    geometric_decay,
    lower_bound_floor,
    counter_identities,
    loop_scheme_ordering,
    unroll_depth_loss_ratio,
    determinism,
)


def select(filter_text=None):
    if not filter_text:
        return list(CRITERIA)
    key = filter_text.strip().lower()
    return [c for i, c in enumerate(CRITERIA, 1) if key in c.__name__ or key == str(i)]


def run_criteria(names_or_filter=None):
    if isinstance(names_or_filter, (tuple, list)):
        chosen = [c for c in CRITERIA if c.__name__ in names_or_filter]
    else:
        chosen = select(names_or_filter)
    return [c() for c in chosen]


def report(results):
    lines = [r.line() for r in results]
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} criteria passed")
    return "\n".join(lines) + "\n"
