import io
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import biloop.itd
from biloop.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAILED, EXIT_OK, main
from biloop.config import DEFAULT, ExperimentConfig, parse_config
from biloop.exceptions import ConfigError
from biloop.runner import (
    CSV_HEADER,
    format_table,
    run_experiment,
    summarize,
    sweep,
    sweep_configs,
    sweep_workers,
    trace_csv,
)
from biloop import verify

LB_ITD = """\
# single-step ITD on the worst-case instance
problem.name = lower_bound
problem.L = 2
problem.mu = 1
problem.M = 1
algorithm = itd
scheme = no-loop
N = 1
alpha = 0.25
beta = 0.027777777777777776   # 1/(2 L_phi)
K = 5000
epsilon = 1e-3
"""

QUAD = """\
problem.name = quadratic
problem.kappa = 10
problem.seed = 1
problem.coupling = strong
algorithm = aid
scheme = N_LOOP
beta = 0.0008
K = 400
epsilon = 1e-6
"""


def _write(tmp_path, text, name="exp.conf"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestConfig:
    def test_parse_with_comments(self):
        cfg = parse_config(LB_ITD)
        assert cfg.problem == "lower_bound" and cfg.problem_params == {"L": 2.0, "mu": 1.0, "M": 1.0}
        assert cfg.algorithm == "itd" and cfg.scheme == "NO_LOOP"
        assert cfg.N == 1 and cfg.alpha == 0.25 and cfg.K == 5000 and cfg.epsilon == 1e-3
        assert cfg.scheme_id().value == "ITD_NO_LOOP"

    def test_defaults_and_literal(self):
        cfg = parse_config(QUAD + "alpha = corollary-default\n")
        assert cfg.alpha == DEFAULT and cfg.N is None and cfg.beta == 0.0008

    @pytest.mark.parametrize("extra, field", [
        ("bogus = 1\n", "bogus"),
        ("problem.kappa = 20\n", "problem.kappa"),
        ("problem.widgets = 3\n", "problem.widgets"),
        ("epsilon = 0\n", "epsilon"),
        ("Q = 0\n", "Q"),
        ("eta = -1\n", "eta"),
        ("K = ten\n", "K"),
        ("warm_start.y = maybe\n", "warm_start.y"),
    ])
    def test_errors_name_the_field(self, extra, field):
        text = QUAD.replace("epsilon = 1e-6\n", "") if field == "epsilon" else QUAD
        text = text.replace("K = 400\n", "") if field == "K" else text
        with pytest.raises(ConfigError) as info:
            parse_config(text + extra)
        assert info.value.field == field

    def test_unknown_problem_and_scheme(self):
        with pytest.raises(ConfigError) as info:
            parse_config(QUAD.replace("quadratic", "cubic"))
        assert info.value.field == "problem.name"
        with pytest.raises(ConfigError) as info:
            parse_config(QUAD.replace("N_LOOP", "NN_LOOP"))
        assert info.value.field == "scheme"

    def test_explicit_values_needed_without_scheme(self):
        with pytest.raises(ConfigError) as info:
            parse_config(QUAD.replace("scheme = N_LOOP\n", "N = 3\n"))
        assert info.value.field in ("Q", "alpha", "eta")

    def test_itd_rejects_linear_system_keys(self):
        with pytest.raises(ConfigError) as info:
            parse_config(LB_ITD + "Q = 3\n")
        assert info.value.field == "Q"

    def test_malformed_lines(self):
        with pytest.raises(ConfigError):
            parse_config("problem.name quadratic\n")
        with pytest.raises(ConfigError):
            parse_config("algorithm = aid\n")
        with pytest.raises(ConfigError):
            parse_config(QUAD + "scheme = N_LOOP\n")

    @pytest.mark.parametrize("text", [LB_ITD, QUAD, QUAD + "alpha = corollary-default\noutput = out/t.csv\n"])
    def test_round_trip(self, text):
        cfg = parse_config(text)
        again = parse_config(cfg.to_text())
        assert again == cfg
        assert again.to_text() == cfg.to_text()

    @settings(max_examples=60, deadline=None)
    @given(N=st.integers(1, 10**6), alpha=st.floats(1e-12, 1.0), eps=st.floats(1e-300, 1e3),
           K=st.integers(1, 10**7), stride=st.integers(1, 100), wy=st.booleans(), wv=st.booleans(),
           dims=st.tuples(*[st.integers(1, 50)] * 4), seed=st.integers(0, 2**31))
    def test_round_trip_property(self, N, alpha, eps, K, stride, wy, wv, dims, seed):
        cfg = ExperimentConfig(problem="hyper_representation", problem_params={"dims": dims, "gamma": 0.3},
                               seed=seed, N=N, Q=DEFAULT, alpha=alpha, eta=alpha, beta=0.0, K=K, epsilon=eps,
                               scheme="N_Q_LOOP", trace_stride=stride, warm_start_y=wy, warm_start_v=wv)
        assert parse_config(cfg.to_text()) == cfg


class TestRunExperiment:
    def test_csv_row_count_and_header(self, tmp_path):
        out = tmp_path / "trace.csv"
        cfg = parse_config(QUAD.replace("K = 400", "K = 3") + f"output = {out}\n")
        run_experiment(cfg)
        lines = out.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "k,grad_est_norm_sq,grad_true_norm_sq,gc_cum,mv_cum,wall_ms"
        assert ",".join(CSV_HEADER) == lines[0]
        assert len(lines) == 4

    def test_byte_identical(self, tmp_path):
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for p in paths:
            run_experiment(parse_config(QUAD.replace("K = 400", "K = 50") + f"output = {p}\n"))
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_wall_time_column_optional(self):
        cfg = parse_config(QUAD.replace("K = 400", "K = 2") + "output.wall_time = true\n")
        trace, _ = run_experiment(cfg)
        timed = trace_csv(trace, wall_time=True).splitlines()[1]
        assert timed.split(",")[-1] != ""
        assert trace_csv(trace).splitlines()[1].endswith(",")

    def test_blank_reference_column_on_strides(self):
        cfg = parse_config("problem.name = hyper_cleaning\nproblem.n = 60\nproblem.m = 3\nalgorithm = itd\n"
                           "scheme = NN_LOOP\nbeta = 0.1\nK = 4\ntrace_stride = 2\nepsilon = 1e-3\n")
        rows = [line.split(",") for line in trace_csv(run_experiment(cfg)[0]).splitlines()[1:]]
        assert [r[2] == "" for r in rows] == [False, True, False, True]
        assert all(r[1] != "" for r in rows)

    def test_lower_bound_floor_summary(self):
        trace, row = run_experiment(parse_config(LB_ITD))
        assert abs(row.final_grad_norm_sq - 2.5) <= 1e-6
        assert row.K_to_eps is None and row.gc is None
        assert "not reached" in format_table([row])
        assert trace.counters.mv == 2 * 5000

    def test_summary_costs_follow_counter_identity(self):
        trace, row = run_experiment(parse_config(QUAD))
        N = trace.config.N
        assert row.K_to_eps is not None
        assert row.gc == row.K_to_eps * (N + 2) and row.mv == row.K_to_eps * 2
        assert row.min_grad_norm_sq <= 1e-6

    def test_summary_at_start(self, lower_bound):
        from biloop import ItdConfig, run_itd

        trace = run_itd(lower_bound, ItdConfig(N=1, alpha=0.25, beta=0.0, K=2))
        row = summarize(trace, eps=100.0)
        assert (row.K_to_eps, row.gc, row.mv) == (0, 0, 0)

    def test_divergence_propagates(self):
        from biloop.exceptions import DivergenceError

        cfg = parse_config(LB_ITD.replace("beta = 0.027777777777777776", "beta = 1000"))
        with pytest.raises(DivergenceError):
            run_experiment(cfg)


class TestSweep:
    def test_axis_N(self):
        rows = sweep(parse_config(QUAD), "N", ["20", "1"], workers=1)
        assert [r.label for r in rows] == ["N=1", "N=20"]
        k1 = rows[0].K_to_eps if rows[0].reached else float("inf")
        assert rows[1].reached and rows[1].K_to_eps <= k1

    def test_axis_scheme_counters(self):
        base = parse_config(QUAD.replace("K = 400", "K = 5").replace("beta = 0.0008\n", ""))
        schemes = ["N_Q_LOOP", "N_LOOP", "Q_LOOP", "NO_LOOP"]
        rows = sweep(base, "scheme", schemes, workers=1)
        assert len(rows) == 4 and all(r.error is None for r in rows)
        for label, cfg in sweep_configs(base, "scheme", schemes):
            trace, _ = run_experiment(cfg)
            c, oc = trace.counters, trace.config
            assert (c.gc, c.mv) == (5 * (oc.N + 2), 5 * (oc.Q + 1)), label

    def test_empty(self):
        assert sweep(parse_config(QUAD), "Q", []) == []

    def test_invalid_axis_value_is_config_error(self):
        with pytest.raises(ConfigError) as info:
            sweep(parse_config(QUAD.replace("K = 400", "K = 3")), "Q", ["0", "2"], workers=1)
        assert info.value.field == "Q"

    def test_divergent_row_is_recorded(self):
        base = parse_config(LB_ITD.replace("K = 5000", "K = 500").replace("beta = 0.027777777777777776",
                                                                        "beta = 1000"))
        rows = sweep(base, "N", ["1", "2"], workers=1)
        assert all(r.error and r.error.startswith("divergence") for r in rows)

    def test_parallel_matches_serial(self):
        base = parse_config(QUAD.replace("K = 400", "K = 30"))
        serial = sweep(base, "N", ["1", "5", "9"], workers=1)
        parallel = sweep(base, "N", ["1", "5", "9"], workers=3)
        assert serial == parallel

    def test_thread_cap(self, monkeypatch):
        monkeypatch.setenv("BILOOP_THREADS", "1")
        assert sweep_workers(10) == 1
        monkeypatch.setenv("BILOOP_THREADS", "many")
        with pytest.raises(ConfigError):
            sweep_workers(3)
        monkeypatch.delenv("BILOOP_THREADS")
        assert 1 <= sweep_workers(2) <= 2

    def test_bad_axis(self):
        with pytest.raises(ConfigError):
            sweep(parse_config(QUAD), "alpha", ["0.1"])


class TestCli:
    def _main(self, *argv):
        buf = io.StringIO()
        return main(list(argv), out=buf), buf.getvalue()

    def test_run(self, tmp_path):
        path = _write(tmp_path, QUAD.replace("K = 400", "K = 3"))
        out_csv = str(tmp_path / "run.csv")
        code, text = self._main("run", "--config", path, "--output", out_csv)
        assert code == EXIT_OK and "aid:N_LOOP" in text
        assert len(open(out_csv, encoding="utf-8").read().splitlines()) == 4

    def test_exit_codes(self, tmp_path):
        bad = _write(tmp_path, QUAD + "bogus = 1\n", "bad.conf")
        assert self._main("run", "--config", bad)[0] == EXIT_CONFIG
        assert self._main("run", "--config", str(tmp_path / "missing.conf"))[0] == EXIT_CONFIG
        div = _write(tmp_path, LB_ITD.replace("beta = 0.027777777777777776", "beta = 1000"), "div.conf")
        assert self._main("run", "--config", div)[0] == EXIT_DIVERGED

    def test_sweep(self, tmp_path):
        path = _write(tmp_path, QUAD.replace("K = 400", "K = 20"))
        code, text = self._main("sweep", "--config", path, "--axis", "N", "--values", "3,1", "--workers", "1")
        assert code == EXIT_OK
        assert text.index("N=1") < text.index("N=3")
        code, text = self._main("sweep", "--config", path, "--axis", "Q", "--values", "")
        assert code == EXIT_OK and "sweep over Q" in text
        assert self._main("sweep", "--config", path, "--axis", "Q", "--values", "0")[0] == EXIT_CONFIG
        div = _write(tmp_path, LB_ITD.replace("beta = 0.027777777777777776", "beta = 1000"), "div.conf")
        code, text = self._main("sweep", "--config", div, "--axis", "N", "--values", "1,2", "--workers", "1")
        assert code == EXIT_FAILED and text.count("error: divergence") == 2

    def test_verify_filter_deterministic(self):
        a = self._main("verify", "--filter", "counter")
        b = self._main("verify", "--filter", "counter")
        assert a == b and a[0] == EXIT_OK
        assert a[1].startswith("[PASS] 5 counter_identities")
        assert self._main("verify", "--filter", "no_such_criterion")[0] == EXIT_CONFIG

    def test_module_entry_point(self, tmp_path):
        import subprocess
        import sys

        path = _write(tmp_path, QUAD.replace("K = 400", "K = 2"))
        res = subprocess.run([sys.executable, "-m", "biloop", "run", "--config", path], capture_output=True,
                             text=True, check=False)
        assert res.returncode == 0 and "K_to_eps" in res.stdout


def test_sign_mutation_breaks_itd_check(monkeypatch):
    original = biloop.itd.itd_hypergradient

    def flipped(oracle, x, traj, alpha, counters):
        g = original(oracle, x, traj, alpha, counters)
        # flip the sign of the correction term only
        yN = traj.last
        return 2 * oracle.grad_x_f(x, yN) - g

    monkeypatch.setattr(biloop.itd, "itd_hypergradient", flipped)
    assert not verify.itd_correctness().passed
