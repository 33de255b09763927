"""Execute experiment configs: single runs, sweeps, CSV traces and summary tables."""

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

from .aid import LoopConfig, run_aid
from .analysis import RateConstants, default_hyperparams
from .config import DEFAULT, PROBLEM_PARAMS, ExperimentConfig
from .exceptions import BiloopError, ConfigError, DivergenceError
from .itd import ItdConfig, run_itd
from .problems import (
    make_hyper_cleaning,
    make_hyper_representation,
    make_lower_bound_instance,
    make_random_quadratic,
)

CSV_HEADER = ("k", "grad_est_norm_sq", "grad_true_norm_sq", "gc_cum", "mv_cum", "wall_ms")
SWEEP_AXES = ("N", "Q", "scheme")
NOT_REACHED = "not reached"


def build_problem(cfg):
    """Construct the oracle named by ``cfg.problem`` with defaults filled in."""
    params = {k: default for k, (_, default) in PROBLEM_PARAMS[cfg.problem].items()}
    params.update(cfg.problem_params)
    try:
        if cfg.problem == "quadratic":
            return make_random_quadratic(params["p"], params["q"], params["kappa"], cfg.seed,
                                         coupling=params["coupling"])
        if cfg.problem == "lower_bound":
            return make_lower_bound_instance(params["L"], params["mu"], params["M"])
        if cfg.problem == "hyper_representation":
            return make_hyper_representation(params["dims"], params["gamma"], cfg.seed, noise=params["noise"])
        return make_hyper_cleaning((params["n"], params["m"]), params["noise_frac"], cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc), "problem") from exc


def resolve_hyperparams(cfg, oracle):
    """Explicit values from the config, the rest from the scheme's defaults."""
    scheme = cfg.scheme_id()
    defaults = {}
    if scheme is not None:
        defaults = default_hyperparams(scheme, RateConstants.from_oracle(oracle), eps=cfg.epsilon,
                                       c_beta=cfg.c_beta)
    out = {}
    keys = ("N", "Q", "alpha", "eta", "beta") if cfg.algorithm == "aid" else ("N", "alpha", "beta")
    for k in keys:
        v = getattr(cfg, k)
        out[k] = defaults[k] if v is None or v == DEFAULT else v
    return out


def optimizer_config(cfg, oracle):
    hp = resolve_hyperparams(cfg, oracle)
    if cfg.algorithm == "aid":
        return LoopConfig(N=hp["N"], Q=hp["Q"], alpha=hp["alpha"], eta=hp["eta"], beta=hp["beta"], K=cfg.K,
                          warm_start_y=cfg.warm_start_y, warm_start_v=cfg.warm_start_v)
    return ItdConfig(N=hp["N"], alpha=hp["alpha"], beta=hp["beta"], K=cfg.K, warm_start_y=cfg.warm_start_y)


@dataclass
class SummaryRow:
    label: str
    K_to_eps: Optional[int] = None
    final_grad_norm_sq: Optional[float] = None
    min_grad_norm_sq: Optional[float] = None
    avg_grad_norm_sq: Optional[float] = None
    gc: Optional[int] = None
    mv: Optional[int] = None
    K: int = 0
    error: Optional[str] = None

    @property
    def reached(self):
        return self.K_to_eps is not None


def summarize(trace, eps, label=""):
    """First k with ‖∇Φ(x_k)‖² <= eps, counting the final iterate x_K as k = K.

    Gc and MV are the cumulative costs spent to produce ``x_k``, i.e. those
    of the first k outer iterations.
    """
    norms = [(r.k, r.grad_true_norm_sq) for r in trace.records if r.grad_true_norm_sq is not None]
    K = len(trace)
    if trace.final_grad_true_norm_sq is not None:
        norms.append((K, trace.final_grad_true_norm_sq))
    row = SummaryRow(label=label, final_grad_norm_sq=trace.final_grad_true_norm_sq, K=K)
    if norms:
        vals = [v for _, v in norms]
        row.min_grad_norm_sq = min(vals)
        row.avg_grad_norm_sq = trace.running_average()
    for k, v in norms:
        if v <= eps:
            row.K_to_eps = k
            prev = trace.records[k - 1] if k > 0 else None
            row.gc = prev.gc_cum if prev else 0
            row.mv = prev.mv_cum if prev else 0
            break
    return row


def trace_csv(trace, wall_time=False):
    """CSV text of a trace; ``grad_true_norm_sq`` is blank where not computed."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in trace.records:
        w.writerow([
            r.k,
            repr(r.grad_est_norm_sq),
            "" if r.grad_true_norm_sq is None else repr(r.grad_true_norm_sq),
            r.gc_cum,
            r.mv_cum,
            f"{r.wall_ms:.3f}" if wall_time else "",
        ])
    return buf.getvalue()


def write_csv(trace, path, wall_time=False):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(trace_csv(trace, wall_time))


def label_for(cfg):
    if cfg.scheme is not None:
        return f"{cfg.algorithm}:{cfg.scheme}"
    return f"{cfg.algorithm}:explicit"


def run_experiment(cfg, *, label=None):
    """Run one config; write its CSV if ``cfg.output`` is set. Returns ``(trace, row)``."""
    if not isinstance(cfg, ExperimentConfig):
        raise ConfigError(f"expected an ExperimentConfig, got {type(cfg).__name__}")
    oracle = build_problem(cfg)
    opt = optimizer_config(cfg, oracle)
    run = run_aid if cfg.algorithm == "aid" else run_itd
    trace = run(oracle, opt, trace_stride=cfg.trace_stride)
    if cfg.output:
        write_csv(trace, cfg.output, cfg.wall_time)
    return trace, summarize(trace, cfg.epsilon, label or label_for(cfg))


def _fmt_float(v):
    return "-" if v is None else f"{v:.6e}"


def format_table(rows, title=None):
    """Plain-text summary table."""
    head = ("run", "K_to_eps", "final_grad_sq", "min_grad_sq", "avg_grad_sq", "Gc", "MV", "K", "status")
    body = []
    for r in rows:
        body.append((
            r.label,
            NOT_REACHED if r.K_to_eps is None else str(r.K_to_eps),
            _fmt_float(r.final_grad_norm_sq),
            _fmt_float(r.min_grad_norm_sq),
            _fmt_float(r.avg_grad_norm_sq),
            "-" if r.gc is None else str(r.gc),
            "-" if r.mv is None else str(r.mv),
            str(r.K),
            "ok" if r.error is None else f"error: {r.error}",
        ))
    widths = [max([len(h)] + [len(b[i]) for b in body]) for i, h in enumerate(head)]
    lines = [title] if title else []
    lines.append("  ".join(h.ljust(w) for h, w in zip(head, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(b, widths)).rstrip())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# sweeps


def _sweep_output(base, axis, value):
    root, ext = os.path.splitext(base)
    return f"{root}.{axis}={value}{ext or '.csv'}"


def sweep_configs(base, axis, values):
    """One config per axis value, in ascending axis order."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}, got {axis!r}", "axis")
    if axis == "scheme":
        items = sorted({str(v).strip().upper().replace("-", "_") for v in values})
    else:
        try:
            items = sorted({int(v) for v in values})
        except ValueError:
            raise ConfigError(f"sweep values for {axis} must be integers: {values}", axis) from None
    out = []
    for v in items:
        if axis == "scheme":
            # each scheme brings its own loop sizes and stepsizes
            cfg = replace(base, scheme=v, N=None, Q=None, alpha=None, eta=None, beta=None)
        else:
            cfg = base.with_value(axis, v)
        if base.output:
            cfg = replace(cfg, output=_sweep_output(base.output, axis, v))
        out.append((f"{axis}={v}", cfg))
    return out


def _run_row(label, cfg):
    try:
        return run_experiment(cfg, label=label)[1]
    except DivergenceError as exc:
        return SummaryRow(label=label, error=f"divergence: {exc}")
    except BiloopError as exc:
        return SummaryRow(label=label, error=str(exc))
    except ValueError as exc:
        return SummaryRow(label=label, error=str(exc))


def sweep_workers(n_tasks):
    cap = os.environ.get("BILOOP_THREADS")
    workers = os.cpu_count() or 1
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"BILOOP_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(workers, n_tasks))


def sweep(base, axis, values, workers=None):
    """Run ``base`` once per axis value; per-run errors land in their row."""
    jobs = sweep_configs(base, axis, values)
    if not jobs:
        return []
    workers = sweep_workers(len(jobs)) if workers is None else workers
    if workers == 1:
        return [_run_row(label, cfg) for label, cfg in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_row, label, cfg) for label, cfg in jobs]
        return [f.result() for f in futures]
