"""Acceptance gate.  Each test records one PASS/FAIL line, printed in the
terminal summary, and then asserts the same condition."""
import itertools
import math
import time

import numpy as np
import pytest

from quasipot.action import action_functional, geometric_action, reparametrize_uniform
from quasipot.dynamics import (BatchStepper, DiscretePath, SimParams, closeness_statistic, gd_flow,
                               trial_seeds)
from quasipot.escape import DomainSpec, exit_ensemble, exit_exponent
from quasipot.landscape import (B2, O1, O2, FiniteSumLoss, make_diag_diffusion, make_quadratic_bowl,
                                make_two_well, make_two_well_diffusion, minibatch_diffusion,
                                two_well_labels)
from quasipot.metastable import (accumulate_occupation, measure_transitions, stationary_estimate,
                                 transition_probabilities)
from quasipot.quasipotential import (analytic_qp_example31, circle_points, example31_candidate,
                                     hj_residual, mam_minimize, qp_boundary_min,
                                     scaled_loss_candidate)

BOWL = make_quadratic_bowl()
UNIT = DomainSpec((0.0, 0.0), 1.0)
SEED = 0xC0FFEE

# pinned tolerances
HJ_TOL = 1e-10
ISO_TOL = 1e-12
MAM_REL = 0.02
MAM_ARGMIN_X2 = 0.1
AXIS_TOL = 1e-3
GD_ACTION_TOL = 1e-3
EXPONENT_REL = 0.25
FIG1_EXIT_MIN, FIG1_ISO_MAX, FIG1_AXIS_FRAC, FIG1_AXIS_X2 = 0.6, 0.1, 0.9, 0.3
FIG2_O1_MIN, FIG2_O2_MIN = 0.6, 0.9
OCCUPATION_F2_MIN = 0.9
TRANSITION_REL = 0.3
CLOSENESS_RATIO_SPREAD = 2.0
INVARIANCE_TOL = 1e-6
SCALE_TOL = 1e-15


def verdict(request, n, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail} [{elapsed:.1f}s of {limit}s]"
    request.node.user_properties.append(("criterion", line))
    print(line)
    assert ok, line


def ball_points(n, seed):
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.uniform(0, 1, n))
    a = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def test_criterion_01_hj_exactness(request):
    t0 = time.perf_counter()
    worst = {}
    for mu in (0.5, 1.0, 1.5, 1.9999):
        r = hj_residual(example31_candidate(mu), BOWL, make_diag_diffusion(mu), ball_points(1000, 1))
        worst[mu] = float(np.max(np.abs(r)))
    ok = max(worst.values()) < HJ_TOL
    verdict(request, 1, ok, f"max|residual| = {max(worst.values()):.2e} (< {HJ_TOL:g})",
            time.perf_counter() - t0, 1)


def test_criterion_02_isotropic_identity(request):
    t0 = time.perf_counter()
    r = hj_residual(scaled_loss_candidate(BOWL), BOWL, make_diag_diffusion(1.0), ball_points(1000, 2))
    worst = float(np.max(np.abs(r)))
    verdict(request, 2, worst < ISO_TOL, f"max|residual| of 2f = {worst:.2e} (< {ISO_TOL:g})",
            time.perf_counter() - t0, 1)


def test_criterion_03_mam_vs_analytic(request):
    t0 = time.perf_counter()
    targets = circle_points(8)
    parts, ok = [], True
    for mu in (1.0, 1.5):
        res = qp_boundary_min(BOWL, make_diag_diffusion(mu), [0, 0], targets, 100)
        exact = analytic_qp_example31(targets, mu)
        rel = float(np.max(np.abs(res.values - exact) / exact))
        min_rel = abs(res.min_value - 2 / mu) / (2 / mu)
        ok &= rel < MAM_REL and min_rel < MAM_REL and abs(res.argmin[1]) < MAM_ARGMIN_X2
        parts.append(f"mu={mu}: max rel err {rel:.4f}, min {res.min_value:.4f} vs {2 / mu:.4f}, "
                     f"argmin x2 {res.argmin[1]:+.3f}")
    verdict(request, 3, ok, "; ".join(parts), time.perf_counter() - t0, 120)


def test_criterion_04_action_consistency(request):
    t0 = time.perf_counter()
    s = np.linspace(0, 1, 10_000)
    axis = DiscretePath(np.column_stack([s, np.zeros_like(s)]))
    errs = {mu: abs(geometric_action(axis, BOWL, make_diag_diffusion(mu)).value - 2 / mu)
            for mu in (1.0, 1.5, 1.9999)}
    gd = gd_flow(BOWL, [0.6, 0.8], 1e-3, 1.0)
    s_gd = action_functional(gd, BOWL, make_diag_diffusion(1.3)).value
    ok = max(errs.values()) < AXIS_TOL and s_gd < GD_ACTION_TOL
    verdict(request, 4, ok, f"axis max err {max(errs.values()):.2e} (< {AXIS_TOL:g}); "
            f"GD path action {s_gd:.2e} (< {GD_ACTION_TOL:g})", time.perf_counter() - t0, 5)


def test_criterion_05_exit_exponent(request):
    t0 = time.perf_counter()
    eps_list = [0.4, 0.5, 0.6, 0.8]
    fits = {mu: exit_exponent(BOWL, make_diag_diffusion(mu), [0, 0], UNIT, eps_list, 0.01, 10 ** 6,
                              2000, SEED, threads=4)
            for mu in (1.0, 1.5)}
    ok = all(f.available and not f.flagged and abs(f.slope - 2 / mu) <= EXPONENT_REL * 2 / mu
             for mu, f in fits.items())
    (lo1, hi1), (lo15, hi15) = fits[1.0].slope_interval, fits[1.5].slope_interval
    ok &= hi15 < lo1
    detail = "; ".join(f"mu={mu}: slope {f.slope:.3f} vs {2 / mu:.3f}, 80% CI "
                       f"[{f.slope_interval[0]:.3f}, {f.slope_interval[1]:.3f}]" for mu, f in fits.items())
    verdict(request, 5, ok, detail, time.perf_counter() - t0, 20 * 60)


def test_criterion_06_figure1(request):
    t0 = time.perf_counter()
    p = SimParams(0.1, 0.01, 140_000, SEED)
    aniso = exit_ensemble(BOWL, make_diag_diffusion(1.9999), [0, 0], p, UNIT, 50, threads=4)
    iso = exit_ensemble(BOWL, make_diag_diffusion(1.0), [0, 0], p, UNIT, 50, threads=4)
    fa, fi = aniso.n_exited / 50, iso.n_exited / 50
    pts = aniso.exit_points()
    axis = float(np.mean(np.abs(pts[:, 1]) < FIG1_AXIS_X2)) if len(pts) else math.nan
    ok = fa >= FIG1_EXIT_MIN and fi <= FIG1_ISO_MAX and axis >= FIG1_AXIS_FRAC
    verdict(request, 6, ok, f"anisotropic exit fraction {fa:.2f} (>= {FIG1_EXIT_MIN}), isotropic "
            f"{fi:.2f} (<= {FIG1_ISO_MAX}), exits with |x2|<{FIG1_AXIS_X2}: {axis:.2f} "
            f"(>= {FIG1_AXIS_FRAC})", time.perf_counter() - t0, 10 * 60)


def final_labels(x0, n, steps, eps=0.2):
    st = BatchStepper(make_two_well(), make_two_well_diffusion(1.9999, 1.0001), np.tile(x0, (n, 1)),
                      trial_seeds(SEED, n), eps, 0.01)
    for _ in range(steps):
        X = st.advance()
    return two_well_labels(X)


def test_criterion_07_figure2(request):
    t0 = time.perf_counter()
    f_o1 = float(np.mean(final_labels(O1, 50, 22_000) == B2))
    f_o2 = float(np.mean(final_labels(O2, 50, 22_000) == B2))
    ok = f_o1 >= FIG2_O1_MIN and f_o2 >= FIG2_O2_MIN
    verdict(request, 7, ok, f"in B2 at the end: from O1 {f_o1:.2f} (>= {FIG2_O1_MIN}), "
            f"from O2 {f_o2:.2f} (>= {FIG2_O2_MIN})", time.perf_counter() - t0, 5 * 60)


def test_criterion_08_stationary_selection(request):
    t0 = time.perf_counter()
    p = SimParams(0.2, 0.01, 10 ** 6, SEED)
    counts, _ = accumulate_occupation(make_two_well(), make_two_well_diffusion(1.9999, 1.0001),
                                      np.tile(O1, (5, 1)), trial_seeds(SEED, 5), p)
    f2 = counts[:, B2].sum() / counts.sum()
    eps, mu1, mu2 = 0.5, 1.9, 1.1
    stats = measure_transitions(mu1, mu2, eps, SimParams(eps, 0.01, 300_000, SEED), 20_000,
                                n_chains=1000, threads=4)
    P12, P21 = transition_probabilities(stats)
    rho1, rho2 = stationary_estimate(P12, P21)
    e12, e21 = -eps * math.log(P12), -eps * math.log(P21)
    ok = f2 > OCCUPATION_F2_MIN and rho2 > rho1 and abs(e12 - 2 / mu1) <= TRANSITION_REL * 2 / mu1
    verdict(request, 8, ok, f"f2 {f2:.3f} (> {OCCUPATION_F2_MIN}); rho2 {rho2:.3f} vs rho1 {rho1:.3f}; "
            f"-eps ln P12 {e12:.3f} vs {2 / mu1:.3f} (-eps ln P21 {e21:.3f} vs {2 / mu2:.3f}); "
            f"cycles {stats.cycles1}/{stats.cycles2}", time.perf_counter() - t0, 30 * 60)


def test_criterion_09_closeness(request):
    t0 = time.perf_counter()
    eps = [1e-2, 1e-3, 1e-4]
    r = closeness_statistic(BOWL, make_diag_diffusion(1.0), [0.6, 0.8], eps, 1.0, 0.01, 400, SEED,
                            threads=4)
    ratio = r.statistic / r.eps
    spread = float(ratio.max() / ratio.min())
    ok = bool(np.all(r.statistic <= r.bound)) and spread < CLOSENESS_RATIO_SPREAD
    verdict(request, 9, ok, f"statistic/eps {np.array2string(ratio, precision=4)} vs bound constant "
            f"{r.constant_C:.1f}; spread {spread:.3f} (< {CLOSENESS_RATIO_SPREAD})",
            time.perf_counter() - t0, 120)


def enumerate_subsets(G, m):
    """Independent oracle: plain Python over every size-m subset."""
    n, d = len(G), len(G[0])
    gbar = [sum(g[k] for g in G) / n for k in range(d)]
    acc, count = [[0.0] * d for _ in range(d)], 0
    for sub in itertools.combinations(range(n), m):
        dev = [sum(G[i][k] for i in sub) / m - gbar[k] for k in range(d)]
        for a in range(d):
            for b in range(d):
                acc[a][b] += dev[a] * dev[b]
        count += 1
    return [[v / count for v in row] for row in acc]


def test_criterion_10_minibatch_oracle(request):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    ok, cases = True, 0
    for n in range(1, 9):
        for m in range(1, n + 1):
            G = rng.standard_normal((n, 2))
            fs = FiniteSumLoss([(lambda x: 0.0, lambda x, g=g: g) for g in G], m)
            D = minibatch_diffusion(fs, np.zeros(2))
            ok &= D.tolist() == enumerate_subsets(G.tolist(), m)
            if m == n:
                ok &= bool(np.all(D == 0.0))
            cases += 1
    verdict(request, 10, ok, f"exact agreement on {cases} (n, m) cases, zero at m = n",
            time.perf_counter() - t0, 1)


def test_criterion_11_properties(request):
    t0 = time.perf_counter()
    notes = []
    # determinism across thread counts
    p = SimParams(0.5, 0.01, 100_000, SEED)
    runs = [exit_ensemble(BOWL, make_diag_diffusion(1.5), [0, 0], p, UNIT, 40, threads=t)
            for t in (1, 2, 4)]
    det = all([r.exit_time for r in x.records] == [r.exit_time for r in runs[0].records] for x in runs)
    notes.append(f"thread determinism {det}")
    # nonnegativity on random paths
    rng = np.random.default_rng(SEED)
    neg = 0
    for _ in range(1000):
        P = rng.uniform(-3, 3, (int(rng.integers(3, 30)), 2))
        df = make_diag_diffusion(float(rng.uniform(0.05, 1.95)))
        neg += geometric_action(DiscretePath(P), BOWL, df).value < 0
        neg += action_functional(DiscretePath(P, np.arange(len(P)) * 0.1), BOWL, df).value < 0
    notes.append(f"negative actions {neg}/2000")
    # parametrisation invariance
    s = np.linspace(0, 1, 4001) ** 3
    curve = DiscretePath(np.column_stack([np.cos(2 * s), 0.5 * np.sin(3 * s)]))
    df = make_diag_diffusion(1.3)
    a = geometric_action(curve, BOWL, df).value
    b = geometric_action(reparametrize_uniform(curve, 4001), BOWL, df).value
    inv = abs(a - b) / max(1.0, abs(a))
    notes.append(f"reparametrisation drift {inv:.1e}")
    # stationary law under common rescaling
    worst = 0.0
    for _ in range(1000):
        P12, P21 = rng.uniform(1e-6, 1, 2)
        lam = float(10 ** rng.uniform(-6, 6))
        r0, r1 = stationary_estimate(P12, P21), stationary_estimate(lam * P12, lam * P21)
        worst = max(worst, abs(r0[0] - r1[0]), abs(r0[1] - r1[1]), abs(sum(r0) - 1.0))
    notes.append(f"rescaling drift {worst:.1e}")
    ok = det and neg == 0 and inv < INVARIANCE_TOL and worst <= SCALE_TOL
    verdict(request, 11, ok, "; ".join(notes), time.perf_counter() - t0, 120)
