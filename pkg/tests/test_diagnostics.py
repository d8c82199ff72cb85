import math
from dataclasses import astuple

import numpy as np
import pytest
from scipy.special import gammaln

from dnsvrgda.diagnostics import (COLUMNS, SCHEMA_PREFIX, CsvSink, MetricsRecord, SchemaError, collect,
                                  consensus_error, emit, gradient_error, is_finite_record, read_csv,
                                  surrogate_norms)
from dnsvrgda.noise import NoiseSpec
from dnsvrgda.optimizer import HyperParams, run
from dnsvrgda.problems import QuadraticBilevel, random_quadratic
from dnsvrgda.topology import build_topology, metropolis_weights


def record(i=0, **over):
    vals = dict(zip(COLUMNS, [i] + [0.125 * (j + 1) for j in range(len(COLUMNS) - 1)]))
    vals.update(over)
    return MetricsRecord(**vals)


def test_consensus_examples():
    assert consensus_error([[1.0, 2.0], [1.0, 2.0]]) == 0.0
    assert consensus_error([[0.0], [2.0]]) == 1.0
    assert consensus_error([3.0, -3.0, 0.0]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        consensus_error(np.zeros((0, 2)))


def test_consensus_translation_and_scale():
    V = np.random.default_rng(0).standard_normal((5, 3))
    base = consensus_error(V)
    assert consensus_error(V + np.array([10.0, -4.0, 2.0])) == pytest.approx(base, rel=1e-12)
    assert consensus_error(-2.5 * V) == pytest.approx(2.5 * base, rel=1e-12)


def test_gradient_error_zero_for_full_batch_estimators():
    prob = random_quadratic(3, 2, 2, seed=1, noise=NoiseSpec("gaussian", 1.0), n_samples=20)
    X = np.random.default_rng(1).standard_normal((3, 2))
    Y = np.random.default_rng(2).standard_normal((3, 2))
    est = np.stack([prob.full_grad_g(k, X[k], Y[k])[1] for k in range(3)])
    assert gradient_error(est, prob, X, Y, "g2") == pytest.approx(0.0, abs=1e-14)
    assert gradient_error(est + 1.0, prob, X, Y, "g2") == pytest.approx(math.sqrt(2), rel=1e-12)


def test_gradient_error_matches_chi_mean():
    """gamma=1, B=1, unit Gaussian rows, K=4: the initial f1 error is |mean of K standard
    normal vectors|, whose expectation is sqrt(2/K) Gamma((d+1)/2) / Gamma(d/2)."""
    K, d, trials = 4, 3, 400
    m = metropolis_weights(build_topology("ring", K))
    hp = HyperParams(B=1, B0=1, T=1, gamma_x=1.0, gamma_y=1.0, gamma_z=1.0)
    errs = []
    for seed in range(trials):
        prob = random_quadratic(K, d, 2, seed=seed, noise=NoiseSpec("gaussian", 1.0), n_samples=4000)
        errs.append(run(prob, m, hp, seed=seed).records[0].grad_err_f1)
    expected = math.sqrt(2 / K) * math.exp(gammaln((d + 1) / 2) - gammaln(d / 2))
    second = d / K
    se = math.sqrt((second - expected ** 2) / trials)
    assert abs(np.mean(errs) - expected) < 4 * se


def test_surrogates_vanish_at_penalized_stationary_point():
    # one worker, decoupled: f = |x-a|^2/2 + |y-b|^2/2, g = |y - e|^2/2
    prob = QuadraticBilevel(np.zeros((1, 1)), np.array([[2.0]]), np.zeros((1, 1, 1)), np.array([[1.0]]))
    delta = 0.5
    y = np.array([(delta * 2.0 + 1.0) / (delta + 1.0)])
    sh, sgz = surrogate_norms(prob, np.zeros(1), y, np.array([1.0]), delta)
    assert sh == pytest.approx(0.0, abs=1e-15) and sgz == pytest.approx(0.0, abs=1e-15)
    sh, sgz = surrogate_norms(prob, np.zeros(1), np.zeros(1), np.zeros(1), delta)
    assert sh == pytest.approx(2.0) and sgz == pytest.approx(1.0)


def test_collect_uses_iterates_of_the_finished_step():
    prob = random_quadratic(4, 2, 2, seed=0)
    m = metropolis_weights(build_topology("ring", 4))
    res = run(prob, m, HyperParams(B=1, B0=1, T=3), seed=0, diag_every=1)
    rec = collect(res.state, prob, 0.3)
    assert rec.iteration == 2
    assert rec.hypergrad_exact == pytest.approx(
        float(np.linalg.norm(prob.hypergradient(res.state.prev_x.mean(axis=0)))))
    assert rec.test_accuracy is None


def test_csv_header_rows_and_round_trip(tmp_path):
    path = tmp_path / "sub" / "run.csv"
    recs = [record(i, test_accuracy=None if i % 2 else 0.5, upper_loss=1 / 3 + i) for i in range(101)]
    with CsvSink(path) as sink:
        for r in recs:
            emit(r, sink)
    lines = path.read_text().splitlines()
    assert len(lines) == 102
    assert lines[0] == SCHEMA_PREFIX + ",".join(COLUMNS)
    back = read_csv(path)
    assert [astuple(r) for r in back] == [astuple(r) for r in recs]


def test_hundred_emits_give_header_plus_hundred_rows(tmp_path):
    path = tmp_path / "r.csv"
    sink = CsvSink(path)
    for i in range(100):
        emit(record(i), sink)
    sink.close()
    assert len(path.read_text().splitlines()) == 101
    assert sink.rows == 100


def test_non_finite_values_round_trip(tmp_path):
    path = tmp_path / "r.csv"
    with CsvSink(path) as sink:
        emit(record(0, upper_loss=float("inf"), consensus_x=float("nan")), sink)
    back = read_csv(path)[0]
    assert back.upper_loss == float("inf") and math.isnan(back.consensus_x)
    assert not is_finite_record(back)
    assert is_finite_record(record(0, test_accuracy=None))


def test_unwritable_path_names_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    sink = CsvSink(blocker / "run.csv")
    with pytest.raises(OSError, match="file"):
        emit(record(0), sink)


@pytest.mark.parametrize("text,match", [
    ("iteration,upper_loss\n", "header"),
    (SCHEMA_PREFIX + "iteration,upper_loss\n", "column"),
    (SCHEMA_PREFIX + ",".join(COLUMNS) + "\n1,2\n", ":2:"),
])
def test_schema_errors(tmp_path, text, match):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(SchemaError, match=match):
        read_csv(path)
