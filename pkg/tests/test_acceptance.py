"""Acceptance criteria, one test and one printed PASS/FAIL line each.

The whole suite is evaluated once per session; the determinism criterion
then runs ``biloop verify`` a second time and compares the reports.
"""

import io

import pytest

from biloop import verify
from biloop.cli import main


@pytest.fixture(scope="session")
def results():
    return {c.__name__: c() for c in verify.CRITERIA}


def _check(results, name, capsys):
    r = results[name]
    with capsys.disabled():
        print("\n" + r.line())
    assert r.passed, r.line()


def test_c1_hypergradient_exactness(results, capsys):
    _check(results, "hypergradient_exactness", capsys)


def test_c2_itd_correctness(results, capsys):
    _check(results, "itd_correctness", capsys)


def test_c3_geometric_decay(results, capsys):
    _check(results, "geometric_decay", capsys)


def test_c4_lower_bound_floor(results, capsys):
    _check(results, "lower_bound_floor", capsys)


def test_c5_counter_identities(results, capsys):
    _check(results, "counter_identities", capsys)


def test_c6_loop_scheme_ordering(results, capsys):
    _check(results, "loop_scheme_ordering", capsys)


def test_c7_unroll_depth_loss_ratio(results, capsys):
    _check(results, "unroll_depth_loss_ratio", capsys)


def test_c8_determinism(results, capsys):
    first = verify.report([results[c.__name__] for c in verify.CRITERIA])
    buf = io.StringIO()
    main(["verify"], out=buf)
    same = buf.getvalue() == first
    line = f"[{'PASS' if same and results['determinism'].passed else 'FAIL'}] 8 determinism (full verify twice): " \
           f"{'identical reports' if same else 'reports differ'}; {results['determinism'].measured}"
    with capsys.disabled():
        print("\n" + line)
    assert same and results["determinism"].passed, line
