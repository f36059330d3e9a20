import math

import pytest

import selfprobe


def test_pass_at_k():
    assert selfprobe.pass_at_k(5, 2, 3) == pytest.approx(0.9, abs=1e-12)
    assert selfprobe.pass_at_k(10, 0, 4) == 0.0
    with pytest.raises(selfprobe.Error, match="InvalidCounts"):
        selfprobe.pass_at_k(5, 6, 3)


def test_perplexity():
    assert selfprobe.perplexity([-0.1, -0.3]) == pytest.approx(math.exp(0.2))
    with pytest.raises(ValueError):
        selfprobe.perplexity([])


def test_select_prefers_the_reliable_majority():
    pool = [
        {"candidate_id": "a", "signature": "1101", "e": 1.0, "f": 1.2},
        {"candidate_id": "b", "signature": "1101", "e": 1.0, "f": 1.1},
        {"candidate_id": "c", "signature": "1111", "e": 1.0, "f": 1.0},
        {"candidate_id": "d", "signature": "1111", "e": 0.5, "f": 1.0},
    ]
    result = selfprobe.select("p", pool)
    assert result["selected"] == "b"
    assert result["cluster"]["size"] == 2

    rejected = selfprobe.select("p", [{"candidate_id": "x", "signature": "1", "e": 0.79}])
    assert rejected.get("selected") is None
    assert rejected["rejection_reason"] == "all_filtered"


def test_theory_helpers():
    assert selfprobe.min_tests_bound(100, 10, 0.1) == 1
    assert selfprobe.correctness_lower_bound(100, 6, 0.1, 0.0) == pytest.approx(0.99)
    report = selfprobe.simulate_consensus(50, 5, 0.25, 8, trials=500, seed=3)
    assert report == selfprobe.simulate_consensus(50, 5, 0.25, 8, trials=500, seed=3)
    assert report["trials"] == 500
    trace = selfprobe.simulate_dynamics(pool_size=2000, iterations=3, seed=1)
    assert [r["iteration"] for r in trace] == [0, 1, 2]


def test_analyzer_helpers():
    assert selfprobe.lexical_entropy("a a b b c c c c") == pytest.approx(1.5)
    profile = selfprobe.syntax_profile("def f(x):\n    if x:\n        return 1\n    return 0\n")
    assert profile["cyclomatic"] == 2
    assert profile["lines"] == 4
    assert len(profile["node_histogram"]) == 15
    assert profile["node_histogram"]["function_def"] == 1
    assert selfprobe.pearson_r([1, 2, 3], [2, 4, 7]) > 0.98


def test_run_cli_passk():
    code, out, _ = selfprobe.run_cli(["passk", "--n", "5", "--c", "2", "--k", "3"])
    assert (code, out) == (0, "0.9\n")
    assert selfprobe.run_cli(["bogus"])[0] == 64
