from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from dnsvrgda.datasets import Dataset, split_and_shard
from dnsvrgda.noise import NoiseSpec
from dnsvrgda.optimizer import (EPS_NORM, HyperParams, NonFiniteStateError, TheoryConstants, combine,
                                dominant_rate, init, normalized_step_and_mix, run, run_iteration,
                                storm_update, theory_schedule, track_and_mix, with_ablation)
from dnsvrgda.problems import MLPHyperOpt, QuadraticBilevel, random_quadratic
from dnsvrgda.topology import build_topology, metropolis_weights


def mixing(kind, K):
    return metropolis_weights(build_topology(kind, K))


def noisy_quadratic(K=4, seed=0):
    return random_quadratic(K, 4, 3, seed=seed, noise=NoiseSpec("gaussian", 0.5), n_samples=40)


# ----------------------------------------------------------------------------- step operations

def test_storm_first_step_copies_gradient():
    g = np.array([1.0, 2.0])
    out = storm_update(None, g, None, 0.5, True)
    np.testing.assert_array_equal(out, g)
    assert out is not g


def test_storm_recursion_example():
    out = storm_update(np.array([1.0]), np.array([3.0]), np.array([2.0]), 0.25, False)
    assert out[0] == pytest.approx(0.75 * (1 - 2) + 3)


def test_storm_gamma_one_is_plain_gradient():
    out = storm_update(np.array([9.0, 9.0]), np.array([1.0, -1.0]), np.array([4.0, 4.0]), 1.0, False)
    np.testing.assert_array_equal(out, [1.0, -1.0])


def test_storm_dimension_mismatch():
    with pytest.raises(ValueError):
        storm_update(np.zeros(2), np.zeros(3), np.zeros(3), 0.5, False)


def test_combine_example():
    u, v, w = combine(np.array([1.0]), np.array([4.0]), np.array([2.0]), np.array([1.0]),
                      np.array([0.5]), np.array([3.0]), 0.5)
    assert (u[0], v[0], w[0]) == (5.0, 2.0, 6.0)
    with pytest.raises(ValueError):
        combine(*(np.zeros(1),) * 6, 0.0)


def test_track_and_mix_first_and_recursion():
    m = mixing("complete", 2)
    pre, mixed = track_and_mix(None, None, np.array([[2.0], [0.0]]), m, True)
    np.testing.assert_array_equal(pre, [[2.0], [0.0]])
    np.testing.assert_allclose(mixed, [[1.0], [1.0]])
    pre, _ = track_and_mix(mixed, np.array([[2.0], [0.0]]), np.array([[3.0], [1.0]]), m, False)
    np.testing.assert_allclose(pre, [[2.0], [2.0]])


def test_normalized_step_length_and_zero_tracker():
    m = mixing("line", 1)
    var = np.array([[1.0, 1.0]])
    new, disp = normalized_step_and_mix(var, np.array([[3.0, 4.0]]), 0.1, m)
    np.testing.assert_allclose(disp, [[-0.06, -0.08]], atol=1e-17)
    np.testing.assert_allclose(new, [[0.94, 0.92]])
    new, disp = normalized_step_and_mix(var, np.array([[EPS_NORM / 2, 0.0]]), 0.1, m)
    np.testing.assert_array_equal(new, var)


def test_raw_step_scales_with_tracker():
    m = mixing("line", 1)
    _, disp = normalized_step_and_mix(np.zeros((1, 2)), np.array([[3.0, 4.0]]), 0.1, m, normalized=False)
    np.testing.assert_allclose(disp, [[-0.3, -0.4]])


# ----------------------------------------------------------------------------- hyperparameters

@pytest.mark.parametrize("kwargs", [dict(eta_x=0.0), dict(gamma_y=0.0), dict(gamma_z=1.5), dict(delta=-1.0),
                                    dict(B=0), dict(B=8, B0=4), dict(T=0)])
def test_hyperparams_validation(kwargs):
    with pytest.raises(ValueError):
        HyperParams(**kwargs)


def test_init_rejects_initial_batch_larger_than_shard():
    prob = noisy_quadratic()
    with pytest.raises(ValueError, match="B0=41"):
        init(prob, HyperParams(B=1, B0=41))
    init(prob, HyperParams(B=1, B0=40))  # equal to the shard size is allowed


def test_init_identical_start_and_z_equals_y():
    prob = noisy_quadratic()
    st = init(prob, HyperParams(B=4, B0=4), seed=3, x0=np.ones(4), y0=np.arange(3.0))
    assert np.all(st.x == 1.0)
    np.testing.assert_array_equal(st.z, st.y)
    np.testing.assert_array_equal(st.y[2], [0.0, 1.0, 2.0])


# ----------------------------------------------------------------------------- schedule

@pytest.mark.parametrize("s", [1.5, 2.0])
def test_schedule_time_exponents(s):
    c = TheoryConstants(s=s, c=0.01, sigma=1.0)
    a, b = theory_schedule(c, 4, 1000), theory_schedule(c, 4, 10000)
    expected = 10 ** (-2 * s / (2 * s + 1))
    assert b.gamma_x / a.gamma_x == pytest.approx(expected, rel=1e-6)
    assert b.eta_x / a.eta_x == pytest.approx(expected, rel=1e-6)


def test_schedule_step_ratios():
    c = TheoryConstants(s=2.0, L_f=2.0, L_g=3.0, mu=1.5, ell_f=3.0, ell_g=3.0)
    hp = theory_schedule(c, 2, 500)
    assert hp.eta_y / hp.eta_x == pytest.approx(4 * (hp.delta * 2.0 + 3.0) / 1.5, rel=1e-12)
    assert hp.eta_z / hp.eta_x == pytest.approx(4 * 3.0 / 1.5, rel=1e-12)


def test_schedule_delta_shrinks_with_T_and_K():
    c = TheoryConstants(s=1.5)
    assert theory_schedule(c, 4, 2000).delta < theory_schedule(c, 4, 1000).delta
    assert theory_schedule(c, 8, 1000).delta < theory_schedule(c, 4, 1000).delta


def test_schedule_clamps_gamma_and_keeps_B0_at_least_B():
    hp = theory_schedule(TheoryConstants(s=2.0, c=5.0), 8, 1, B=16)
    assert hp.gamma_x == 1.0
    assert hp.B0 >= hp.B == 16


def test_schedule_lambda_scales_eta_x():
    a = theory_schedule(TheoryConstants(lam=0.0), 4, 100)
    b = theory_schedule(TheoryConstants(lam=0.5), 4, 100)
    assert b.eta_x / a.eta_x == pytest.approx(0.5, rel=1e-12)


def test_dominant_rate_exponent():
    val, expo = dominant_rate(TheoryConstants(s=2.0), 1, 1000)
    assert expo == pytest.approx(0.2, abs=1e-15)
    v2, _ = dominant_rate(TheoryConstants(s=2.0), 2, 1000)
    assert val / v2 == pytest.approx(2 ** 0.2, rel=1e-12)


@pytest.mark.parametrize("kwargs", [dict(s=1.0), dict(s=2.5), dict(lam=1.0), dict(mu=0.0),
                                    dict(mu=2.0, L_f=1.0, L_g=1.0, ell_f=1.0, ell_g=1.0)])
def test_theory_constants_validation(kwargs):
    with pytest.raises(ValueError):
        TheoryConstants(**kwargs)


# ----------------------------------------------------------------------------- runs

def _states_equal(a, b):
    for name, arr in a.arrays().items():
        other = getattr(b, name)
        if (arr is None) != (other is None):
            return False
        if arr is not None and not np.array_equal(arr, other):
            return False
    return True


def test_execution_modes_agree_bitwise():
    prob = noisy_quadratic()
    m = mixing("ring", 4)
    hp = HyperParams(B=4, B0=8, T=30, eta_x=0.05, eta_y=0.05, eta_z=0.05)
    ref = run(prob, m, hp, seed=1).state
    seq = run(prob, m, hp, seed=1, vectorized=False).state
    with ThreadPoolExecutor(4) as ex:
        thr = run(prob, m, hp, seed=1, executor=ex).state
    assert _states_equal(ref, seq)
    assert _states_equal(ref, thr)


def test_execution_modes_agree_on_mlp():
    rng = np.random.default_rng(0)
    splits = tuple(Dataset(rng.standard_normal((64, 6)), np.where(rng.random(64) < 0.5, -1.0, 1.0))
                   for _ in range(3))
    prob = MLPHyperOpt(split_and_shard(splits, 4), hidden=5)
    m = mixing("line", 4)
    hp = HyperParams(B=4, B0=4, T=10)
    a = run(prob, m, hp, seed=2).state
    b = run(prob, m, hp, seed=2, vectorized=False).state
    for name in ("x", "y", "z", "p", "q", "r"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), rtol=1e-12, atol=1e-15)


def test_same_seed_same_trajectory_and_different_seed_differs():
    prob = noisy_quadratic()
    m = mixing("ring", 4)
    hp = HyperParams(B=2, B0=2, T=20)
    assert _states_equal(run(prob, m, hp, seed=5).state, run(prob, m, hp, seed=5).state)
    assert not np.array_equal(run(prob, m, hp, seed=5).state.x, run(prob, m, hp, seed=6).state.x)


@pytest.mark.parametrize("normalized", [True, False])
def test_gamma_one_equals_plain_stochastic_gradients(normalized):
    prob = noisy_quadratic()
    m = mixing("line", 4)
    base = HyperParams(B=3, B0=3, T=40, eta_x=0.02, eta_y=0.02, eta_z=0.02, normalized=normalized)
    a = run(prob, m, replace(base, gamma_x=1.0, gamma_y=1.0, gamma_z=1.0), seed=0).state
    b = run(prob, m, replace(base, variance_reduced=False), seed=0).state
    assert _states_equal(a, b)


def test_ablation_only_changes_normalization():
    hp = HyperParams(eta_x=0.3)
    off = with_ablation(hp, False)
    assert off.normalized is False and off.eta_x == 0.3
    assert with_ablation(off, True) == hp


def test_ablation_with_unit_trackers_gives_equal_runs():
    # trackers are rescaled to unit norm, so both step rules move identically
    K = 2
    a = np.array([[1.0], [1.0]])
    prob = QuadraticBilevel(a, np.zeros((K, 1)), np.zeros((K, 1, 1)), np.zeros((K, 1)))
    m = mixing("complete", K)
    hp = HyperParams(B=1, B0=1, T=1, eta_x=0.1, eta_y=0.1, eta_z=0.1, delta=1.0)
    st_n = init(prob, hp, x0=np.zeros(1), y0=np.zeros(1))
    st_r = init(prob, replace(hp, normalized=False), x0=np.zeros(1), y0=np.zeros(1))
    # x-tracker is u1 = x - a = -1, unit norm; y and z trackers are zero
    run_iteration(st_n, prob, m, hp)
    run_iteration(st_r, prob, m, replace(hp, normalized=False))
    np.testing.assert_array_equal(st_n.x, st_r.x)
    np.testing.assert_allclose(st_n.x, 0.1)


def test_normalized_steps_have_length_eta():
    prob = noisy_quadratic()
    m = mixing("ring", 4)
    hp = HyperParams(B=4, B0=4, T=50, eta_x=0.01, eta_y=0.02, eta_z=0.03)
    seen = []

    def check(state, info):
        eta = np.array([hp.eta_x, hp.eta_y, hp.eta_z])
        moving = info.tracker_norms > EPS_NORM
        seen.append(moving.sum())
        np.testing.assert_allclose(info.step_norms[moving], np.broadcast_to(eta, moving.shape)[moving],
                                   rtol=0, atol=1e-12)
        assert np.all(info.step_norms[~moving] == 0)

    run(prob, m, hp, on_iteration=check)
    assert sum(seen) > 0


class _PoisonedQuadratic(QuadraticBilevel):
    """Returns NaN from worker ``bad`` once ``calls`` gradients have been requested."""

    def __init__(self, base, bad, after):
        super().__init__(base.a, base.b, base.C, base.e)
        self.bad, self.after, self.calls = bad, after, 0

    def grad_g(self, k, x, y, batch=None):
        g1, g2 = super().grad_g(k, x, y, batch)
        if k == self.bad and self._armed:
            g1 = g1 * np.nan
        return g1, g2

    def grad_many(self, family, ks, xs, ys, batches):
        self.calls += 1
        self._armed = self.calls > self.after
        return super().grad_many(family, ks, xs, ys, batches)


def test_nan_is_reported_with_worker_step_and_iteration():
    base = random_quadratic(4, 2, 2, seed=0)
    prob = _PoisonedQuadratic(base, bad=2, after=2 * 3)  # two grad_many calls per iteration
    hp = HyperParams(B=1, B0=1, T=10)
    res = run(prob, mixing("ring", 4), hp)
    err = res.diverged
    assert isinstance(err, NonFiniteStateError)
    assert (err.worker, err.step, err.iteration) == (2, 2, 3)
    assert "worker 2" in str(err) and "iteration 3" in str(err)
    assert len(res.records) == 1  # the t=0 record


def test_run_rejects_bad_diag_every():
    with pytest.raises(ValueError):
        run(noisy_quadratic(), mixing("ring", 4), HyperParams(B=1, B0=1, T=2), diag_every=0)


def test_run_records_every_interval_and_last():
    res = run(noisy_quadratic(), mixing("ring", 4), HyperParams(B=1, B0=1, T=25), diag_every=10)
    assert [r.iteration for r in res.records] == [0, 10, 20, 24]


def test_gradient_tracking_preserves_average():
    prob = noisy_quadratic()
    m = mixing("ring", 4)
    hp = HyperParams(B=2, B0=2, T=60)

    def check(state, info):
        for tr, est in (("p", "u"), ("q", "v"), ("r", "w")):
            diff = getattr(state, tr).mean(axis=0) - getattr(state, est).mean(axis=0)
            assert np.abs(diff).max() <= 1e-9

    run(prob, m, hp, on_iteration=check)
