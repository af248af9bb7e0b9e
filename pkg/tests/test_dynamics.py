import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasipot.dynamics import (NOISE_BLOCK, DiscretePath, SimParams, closeness_constant,
                               closeness_statistic, em_step, gd_flow, simulate_batch, simulate_sgd,
                               step_noise, trial_seeds, write_trajectory_csv)
from quasipot.errors import DivergenceError, ParameterError
from quasipot.landscape import (make_diag_diffusion, make_quadratic_bowl, make_two_well,
                                make_two_well_diffusion)

BOWL = make_quadratic_bowl()
ISO = make_diag_diffusion(1.0)


def test_simparams_validation():
    for kw in ({"eps": -0.1}, {"h": 0.0}, {"max_steps": 0}, {"seed": -1}, {"seed": 2 ** 64}):
        args = dict(eps=0.1, h=0.01, max_steps=10) | kw
        with pytest.raises(ParameterError):
            SimParams(**args)
    assert SimParams(0.1, 0.01, 10).seed == 0xC0FFEE


def test_discrete_path_validation():
    with pytest.raises(ParameterError):
        DiscretePath([[0.0, 0.0]])
    with pytest.raises(ParameterError):
        DiscretePath([[0, 0], [1, 1]], [0.0, 0.0])
    with pytest.raises(ParameterError):
        DiscretePath([[0, 0], [np.nan, 1]])
    assert len(DiscretePath([[0, 0], [1, 1], [2, 2]])) == 3


def test_gd_flow_matches_exponential():
    path = gd_flow(BOWL, [1.0, 0.0], 1e-4, 1.0)
    assert abs(path.points[-1, 0] - math.exp(-2.0)) < 1e-3
    # the explicit Euler recursion is x_k = (1 - 2h)^k x_0
    np.testing.assert_allclose(path.points[-1, 0], (1 - 2e-4) ** 10000, rtol=1e-12)
    assert path.times[-1] == pytest.approx(1.0)


def test_gd_flow_fixed_points():
    np.testing.assert_array_equal(gd_flow(BOWL, [0.0, 0.0], 0.01, 1.0).points, 0.0)
    plateau = gd_flow(make_two_well(), [0.5, 0.0], 0.01, 1.0).points
    np.testing.assert_array_equal(plateau, np.tile([0.5, 0.0], (len(plateau), 1)))


def test_gd_flow_monotone_loss():
    path = gd_flow(BOWL, [0.8, -0.6], 0.1, 5.0)
    assert np.all(np.diff(BOWL.loss(path.points)) <= 0)


def test_em_step_examples():
    p = SimParams(0.0, 0.01, 1)
    np.testing.assert_allclose(em_step(BOWL, ISO, [1.0, 0.0], p, [0.3, 0.1]), [0.98, 0.0])
    mu, eps, h = 1.5, 0.2, 0.01
    out = em_step(BOWL, make_diag_diffusion(mu), [0.0, 0.0], SimParams(eps, h, 1), [1.0, 0.0])
    np.testing.assert_allclose(out, [math.sqrt(eps * h * mu), 0.0], rtol=1e-14)
    q = SimParams(0.3, 0.01, 1)
    np.testing.assert_allclose(em_step(BOWL, ISO, [0.5, 0.5], q, [0, 0]), [0.49, 0.49])


def test_first_step_uses_counter_noise():
    p = SimParams(0.3, 0.01, 5, seed=1234)
    df = make_diag_diffusion(1.7)
    path = simulate_sgd(BOWL, df, [0.2, 0.1], p)
    x = np.array([0.2, 0.1])
    for k in range(5):
        z = step_noise(p.seed, k, 2)
        x = x - p.h * 2 * x + math.sqrt(p.eps * p.h) * np.array([math.sqrt(1.7) * z[0], math.sqrt(0.3) * z[1]])
        np.testing.assert_allclose(path.points[k + 1], x, rtol=1e-13)


def test_zero_noise_equals_gd_flow():
    p = SimParams(0.0, 0.01, 300)
    sgd = simulate_sgd(BOWL, make_diag_diffusion(1.9), [0.7, -0.4], p)
    gd = gd_flow(BOWL, [0.7, -0.4], 0.01, 3.0)
    np.testing.assert_array_equal(sgd.points, gd.points)


def test_same_seed_same_path_and_batch_equivalence():
    p = SimParams(0.5, 0.01, NOISE_BLOCK * 2 + 17, seed=99)
    df = make_two_well_diffusion(1.9, 1.1)
    lc = make_two_well()
    a = simulate_sgd(lc, df, [-2.0, 0.0], p)
    b = simulate_sgd(lc, df, [-2.0, 0.0], p)
    np.testing.assert_array_equal(a.points, b.points)
    seeds = trial_seeds(7, 3)
    batch = simulate_batch(lc, df, [[-2.0, 0.0]] * 3, seeds, p)
    for s, path in zip(seeds, batch):
        single = simulate_sgd(lc, df, [-2.0, 0.0], p.with_(seed=int(s)))
        np.testing.assert_array_equal(path.points, single.points)


def test_record_every_thins_and_keeps_last():
    p = SimParams(0.1, 0.01, 25, seed=3)
    full = simulate_sgd(BOWL, ISO, [0.1, 0.1], p)
    thin = simulate_sgd(BOWL, ISO, [0.1, 0.1], p, record_every=10)
    np.testing.assert_array_equal(thin.points, full.points[[0, 10, 20, 25]])
    np.testing.assert_allclose(thin.times, [0.0, 0.1, 0.2, 0.25])


def test_divergence_guard():
    with pytest.raises(DivergenceError):
        simulate_sgd(BOWL, ISO, [1.0, 0.0], SimParams(0.0, 1.5, 100))


def test_ou_stationary_second_moment():
    eps = 0.1
    path = simulate_sgd(BOWL, ISO, [0.0, 0.0], SimParams(eps, 0.01, 100_000))
    m2 = np.mean(np.sum(path.points[1000:] ** 2, axis=-1))
    # per coordinate the OU variance is eps / 4
    assert abs(m2 - 2 * eps / 4) < 0.2 * (eps / 2)


def test_closeness_constant():
    assert closeness_constant(2.0, 1.0, 2.0) == pytest.approx(4 * math.exp(4), rel=1e-12)
    assert closeness_constant(2.0, 1.0, 2.0) == pytest.approx(218.39, abs=0.01)


def test_closeness_zero_eps_and_threads():
    r1 = closeness_statistic(BOWL, ISO, [0.5, 0.5], [0.0, 0.01], 0.5, 0.01, 100, threads=1)
    r3 = closeness_statistic(BOWL, ISO, [0.5, 0.5], [0.0, 0.01], 0.5, 0.01, 100, threads=3)
    assert r1.statistic[0] == 0.0
    np.testing.assert_array_equal(r1.statistic, r3.statistic)
    assert 0 < r1.statistic[1] <= r1.bound[1]
    with pytest.raises(ParameterError):
        closeness_statistic(BOWL, ISO, [0, 0], [0.1], 1.0, 0.01, 50)


def test_closeness_ou_oracle():
    # x0 at the origin: E|x - 0|^2 at time t is 2 * (eps/4)(1 - e^{-4t}) for D = I
    eps = 0.01
    r = closeness_statistic(BOWL, ISO, [0.0, 0.0], [eps], 1.0, 0.01, 400)
    exact = 0.5 * eps * (1 - math.exp(-4.0))
    assert r.statistic[0] == pytest.approx(exact, rel=0.15)


def test_trajectory_csv():
    p = SimParams(0.1, 0.01, 20, seed=5)
    path = simulate_sgd(BOWL, ISO, [0.1, 0.2], p, record_every=10)
    buf = io.StringIO()
    write_trajectory_csv(path, buf, p.h)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "step,t,x1,x2"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "10", "20"]
    assert [float(v) for v in lines[-1].split(",")[2:]] == path.points[-1].tolist()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 64 - 1), st.integers(1, 3))
def test_batch_split_invariance(master, n):
    p = SimParams(0.4, 0.01, 40, seed=master)
    seeds = trial_seeds(master, n)
    X0 = np.zeros((n, 2))
    whole = simulate_batch(BOWL, ISO, X0, seeds, p)
    parts = [simulate_batch(BOWL, ISO, X0[i:i + 1], seeds[i:i + 1], p)[0] for i in range(n)]
    for a, b in zip(whole, parts):
        np.testing.assert_array_equal(a.points, b.points)
