import inspect
import math

import numpy as np
import pytest

from compsep import algorithms
from compsep.algorithms import (
    ScAegParams,
    VrcsParams,
    accvrcs_z_update,
    run_acc_vrcs,
    run_c_aeg,
    run_sc_aeg,
    run_vrcs,
    run_vrcs_epoch,
    tune,
)
from compsep.errors import ParameterError
from compsep.numerics import bregman
from compsep.problems import (
    CombinedOracle,
    CompositeProblem,
    QuadraticOracle,
    SimilarityProfile,
    grad_group,
    make_profile,
    make_quadratic_family,
    solve_reference,
)
from compsep.randomness import RngStream
from compsep.simnet import Network
from compsep.subsolver import LocalModel, ProxSubproblem, certify_exact


def prof(mu, df, dg):
    return SimilarityProfile(mu, df, dg)


def r_squared(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return 1 - resid @ resid / ((y - y.mean()) @ (y - y.mean()))


# -- tuning ------------------------------------------------------------------


def test_tune_sc_aeg_example():
    t = tune(prof(0.01, 1.0, 1.0), "sc_aeg")
    assert t.theta == pytest.approx(1 / 6)
    assert t.tau == pytest.approx(math.sqrt(1 / 600))
    assert t.tau == pytest.approx(0.04082, abs=1e-5)
    assert t.alpha == pytest.approx(0.01)
    assert t.eta == pytest.approx(0.5 * math.sqrt(100 / 6))
    assert t.eta == pytest.approx(2.0412, abs=1e-4)
    assert t.p == pytest.approx(0.5)


def test_tune_vr_examples():
    v = tune(prof(0.01, 1.0, 2.0), "vrcs")
    assert v.p == pytest.approx(0.2) and v.q == pytest.approx(0.2)
    assert v.theta == pytest.approx(0.25 * math.sqrt(0.02))
    assert v.theta == pytest.approx(0.035355, abs=1e-6)
    a = tune(prof(0.01, 1.0, 2.0), "acc_vrcs")
    assert a.tau == pytest.approx(math.sqrt(v.theta * 0.01 / (3 * 0.2)))
    assert a.alpha == pytest.approx(math.sqrt(v.theta / (3 * 0.01 * 0.2)))


def test_tune_c_aeg_and_baseline():
    c = tune(prof(0.01, 1.0, 4.0), "c_aeg")
    assert c.theta_f == pytest.approx(1.0)
    assert c.inner.theta_g == pytest.approx(1 / 8)
    assert c.inner.tau_g == pytest.approx(0.5 * math.sqrt(1 / 8))
    assert c.inner.alpha_g == pytest.approx(1.0)
    assert c.inner.eta_g == pytest.approx(min(0.5, (1 / 8) / (4 * c.inner.tau_g)))
    b = tune(prof(0.01, 1.0, 4.0), "aeg")
    assert b.theta_f == pytest.approx(0.2) and b.inner is None


def test_tune_pq_overrides_feed_formulas():
    v = tune(prof(0.01, 1.0, 2.0), "vrcs", p=0.3, q=0.4)
    assert v.theta == pytest.approx(0.25 * math.sqrt(0.3 * 0.7 * 0.4 / (0.3 * 4 + 0.7 * 1)))
    assert tune(prof(0.01, 1.0, 2.0), "vrcs", theta=0.01).theta == 0.01


@pytest.mark.parametrize("args", [(0.01, 2.0, 1.0), (1.0, 1.0, 2.0), (0.0, 1.0, 2.0)])
def test_tune_rejects_unordered_profiles(args):
    with pytest.raises(ParameterError):
        tune(prof(*args), "vrcs")


def test_tune_rejects_bad_values():
    with pytest.raises(ParameterError):
        tune(prof(0.01, 1.0, 2.0), "vrcs", p=1.0)
    with pytest.raises(ParameterError):
        tune(prof(0.01, 1.0, 2.0), "nope")


# -- closed forms ------------------------------------------------------------


def test_z_update_examples():
    z = np.array([1.0, -2.0])
    np.testing.assert_allclose(accvrcs_z_update(z, np.zeros(2), z, 0.7, 0.3), z)
    out = accvrcs_z_update(np.array([1.0, 1.0]), np.array([1.0, 1.0]), np.array([3.0, 3.0]), 1.0, 2.0)
    np.testing.assert_allclose(out, [1.5, 1.5])


def test_z_update_is_the_argmin(rng):
    z, G, y = rng.standard_normal((3, 4))
    a, mu = 0.8, 0.3
    out = accvrcs_z_update(z, G, y, a, mu)
    grad = (out - z) / a + G + 0.5 * mu * (out - y)
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)


# -- identities ------------------------------------------------------------


def test_three_point_equality(quad_small, rng):
    p, _ = quad_small
    val = lambda x: p.value("h", x)
    grd = lambda x: grad_group(p, "h", x)
    for _ in range(20):
        x, y, z = rng.standard_normal((3, 6))
        lhs = (x - y) @ (grd(y) - grd(z))
        rhs = bregman(val, grd, x, z) - bregman(val, grd, x, y) - bregman(val, grd, y, z)
        assert lhs == pytest.approx(rhs, abs=1e-9 * max(1, abs(lhs)))


def test_distance_generating_function_is_convex(rng):
    for seed in range(5):
        p = make_quadratic_family(8, 4, 4, 3.0, 0.1, seed=seed)
        pr = make_profile(p, "exact")
        theta = 1 / (2 * (pr.delta_f + pr.delta_g))
        psi = lambda x: p.value("h1", x) - p.value("h", x) + x @ x / (2 * theta)
        dpsi = lambda x: grad_group(p, "h1", x) - grad_group(p, "h", x) + x / theta
        for _ in range(20):
            x, y = rng.standard_normal((2, 8))
            assert bregman(psi, dpsi, x, y) >= 0


def test_ledger_only_through_rounds():
    src = inspect.getsource(algorithms)
    assert "grad_group" not in src
    assert "_problem" not in src


# -- SC-AEG ------------------------------------------------------------------


def test_sc_aeg_ledger_is_two_per_step(quad20):
    p, pr = quad20
    tr = run_sc_aeg(p, pr, seed=4, eps=1e-12, max_rounds=10**9, max_outer=150)
    last = tr.records[-1]
    assert last.outer_index == 150
    assert last.rounds_f + last.rounds_g == 2 * 150


def test_sc_aeg_deterministic(quad_small, tmp_path):
    p, pr = quad_small
    a = run_sc_aeg(p, pr, seed=3, max_rounds=400)
    b = run_sc_aeg(p, pr, seed=3, max_rounds=400)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def _f_only_problem():
    base = make_quadratic_family(10, 4, 2, 1.0, 0.2, seed=6)
    zero = QuadraticOracle(np.zeros((10, 10)), np.zeros(10))
    return CompositeProblem(base.server_f, zero, list(base.clients_f), [])


def test_sc_aeg_potential_decreases_with_forced_coin():
    p = _f_only_problem()
    pr = make_profile(p, "exact")
    base = tune(pr, "sc_aeg")
    params = ScAegParams(base.theta, base.tau, base.eta, base.alpha, 1.0)
    xs = solve_reference(p)
    hs = p.value("h", xs)
    phis = []

    def watch(k, x, xbar):
        phis.append(params.tau / params.eta * (x - xs) @ (x - xs) + p.value("h", xbar) - hs)

    x0 = np.ones(10)
    phis.append(params.tau / params.eta * (x0 - xs) @ (x0 - xs) + p.value("h", x0) - hs)
    tr = run_sc_aeg(p, pr, params, seed=0, eps=1e-9, max_rounds=10**6, x0=x0, monitor=watch)
    assert tr.status == "converged"
    phis = np.array(phis)
    phis = phis[phis > 1e-13]  # stop before rounding noise dominates
    assert np.mean(np.diff(phis) <= 0) >= 0.95
    assert tr.records[-1].rounds_g == 0


def test_sc_aeg_rate_bound():
    p = make_quadratic_family(20, 5, 5, 1.0, 0.1, seed=1, interpolate=True)
    pr = make_profile(p, "exact")
    params = tune(pr, "sc_aeg")
    xs = solve_reference(p)
    x0 = np.zeros(20)
    phi0 = params.tau / params.eta * (x0 - xs) @ (x0 - xs) + p.value("h", x0) - p.value("h", xs)
    tr = run_sc_aeg(p, pr, params, seed=2, eps=1e-6, max_rounds=10**6, x0=x0)
    bound = 50 * math.sqrt((pr.delta_f + pr.delta_g) / pr.mu) * math.log(phi0 / 1e-6)
    assert tr.status == "converged"
    assert tr.records[-1].total_rounds <= bound


# -- VRCS --------------------------------------------------------------------


def test_epoch_with_q_one_is_single_step(quad_small):
    p, pr = quad_small
    net = Network(p)
    res = run_vrcs_epoch(net, pr, VrcsParams(0.05, 0.5, 1.0), RngStream(0), np.zeros(6))
    assert res.length == 1
    s = net.snapshot()
    assert s.rounds_f + s.rounds_g == 3 and min(s.rounds_f, s.rounds_g) >= 1


def test_epoch_fixed_point_on_homogeneous_problem():
    A = np.diag([1.0, 2.0, 0.5])
    b = np.array([1.0, -1.0, 2.0])
    f = [QuadraticOracle(A, b) for _ in range(3)]
    g = [QuadraticOracle(A, 0 * b) for _ in range(3)]
    p = CompositeProblem(f[0], g[0], f[1:], g[1:])
    xs = solve_reference(p)
    pr = SimilarityProfile(0.5, 1.0, 1.0)
    res = run_vrcs_epoch(Network(p), pr, VrcsParams(0.1, 0.5, 0.3), RngStream(4), xs)
    np.testing.assert_allclose(res.x, xs, atol=1e-12)


def test_vrcs_ledger_matches_epoch_lengths(quad20):
    p, pr = quad20
    tr = run_vrcs(p, pr, seed=5, eps=1e-6, max_rounds=10**6)
    assert tr.status == "converged"
    lengths = tr.extras["epoch_lengths"]
    assert lengths[-1] == 0  # the converged check ends the last epoch before its inner steps
    assert tr.records[-1].total_rounds == sum(2 + t for t in lengths)


def test_vrcs_linear_decay_and_round_split(quad20):
    p, pr = quad20
    tr = run_vrcs(p, pr, seed=1, eps=1e-9, max_rounds=10**6)
    rf = tr.column("rounds_f").astype(float)
    sub = tr.column("subopt")
    keep = (sub > 1e-20)
    keep[: len(keep) // 10] = False
    assert r_squared(rf[keep], np.log(sub[keep])) >= 0.9
    params = tune(pr, "vrcs")
    last = tr.records[-1]
    expected = (params.q + params.p) / (params.q + 1 - params.p)
    assert last.rounds_f / last.rounds_g == pytest.approx(expected, rel=0.1)


def test_vrcs_deterministic(quad_small):
    p, pr = quad_small
    a = run_vrcs(p, pr, seed=8, max_rounds=3000)
    b = run_vrcs(p, pr, seed=8, max_rounds=3000)
    assert a.records == b.records and a.extras["epoch_lengths"] == b.extras["epoch_lengths"]


# -- AccVRCS -----------------------------------------------------------------


def test_acc_vrcs_ledger(quad_small):
    p, pr = quad_small
    tr = run_acc_vrcs(p, pr, seed=2, eps=1e-12, max_rounds=10**9, max_outer=20)
    lengths = tr.extras["epoch_lengths"]
    assert len(lengths) == 20
    # two full rounds (one per group each) around every epoch
    assert tr.records[-1].total_rounds == sum(4 + t for t in lengths)


def test_acc_vrcs_beats_vrcs_when_ill_conditioned():
    p = make_quadratic_family(10, 4, 4, 2.0, 1e-3, seed=0)
    pr = make_profile(p, "exact")
    a = run_acc_vrcs(p, pr, seed=0, eps=1e-2, max_rounds=10**6)
    v = run_vrcs(p, pr, seed=0, eps=1e-2, max_rounds=10**6)
    assert a.status == v.status == "converged"
    assert a.records[-1].total_rounds <= v.records[-1].total_rounds


# -- C-AEG -------------------------------------------------------------------


def test_baseline_touches_both_groups_every_round(quad20):
    p, pr = quad20
    tr = run_c_aeg(p, pr, baseline=True, eps=1e-6)
    assert tr.status == "converged"
    for r in tr.records:
        assert r.rounds_f == r.rounds_g == 2 * r.outer_index


def test_c_aeg_rounds_f_flat_across_ratios():
    rf = {}
    for ratio in (1.0, 16.0):
        p = make_quadratic_family(20, 5, 5, ratio, 0.1, seed=0)
        tr = run_c_aeg(p, make_profile(p, "exact"), eps=1e-6)
        assert tr.status == "converged"
        rf[ratio] = tr.rounds_to_eps(1e-6)
    assert rf[16.0] <= 1.5 * rf[1.0] and rf[1.0] <= 1.5 * rf[16.0]


def test_c_aeg_on_f_only_problem_scales_log_linearly():
    p = _f_only_problem()
    pr = make_profile(p, "exact")
    tr = run_c_aeg(p, pr, eps=1e-10)
    assert tr.status == "converged"
    r4, r7, r10 = (tr.rounds_to_eps(e) for e in (1e-4, 1e-7, 1e-10))
    assert (r10 - r7) == pytest.approx(r7 - r4, rel=0.35)


def test_every_accepted_subsolve_meets_its_criterion(quad_small):
    p, pr = quad_small
    local_a = LocalModel([p.server_f, CombinedOracle.mean(p.g_oracles)])
    seen = {}

    def audit(kind, sub, x, rule):
        if isinstance(sub, dict):
            sub = ProxSubproblem(sub["linear"], sub["anchor"], sub["theta"], local_a)
        seen[kind] = seen.get(kind, 0) + 1
        assert certify_exact(sub, x, rule), kind

    run_sc_aeg(p, pr, seed=0, max_rounds=300, audit=audit)
    run_vrcs(p, pr, seed=0, max_rounds=300, audit=audit)
    run_acc_vrcs(p, pr, seed=0, max_rounds=300, audit=audit)
    run_c_aeg(p, pr, max_rounds=300, audit=audit)
    run_c_aeg(p, pr, max_rounds=300, baseline=True, audit=audit)
    assert set(seen) == {"sgd", "vr", "inner", "outer"}


# -- guards ------------------------------------------------------------------


def test_divergence_guard(quad_small):
    p, pr = quad_small
    bad = tune(pr, "aeg", theta_f=50.0, eta_f=50.0)
    tr = run_c_aeg(p, pr, bad, baseline=True, max_rounds=10**5)
    assert tr.status == "diverged"
    assert tr.records[-1].status == "diverged"


def test_uncertified_subsolve_aborts(quad_small, monkeypatch):
    p, pr = quad_small
    monkeypatch.setattr(algorithms, "SUBSOLVE_BUDGET", 1)
    tr = run_vrcs(p, pr, seed=0, max_rounds=1000)
    assert tr.status == "uncertified"
    assert not tr.records[-1].certified


def test_budget_stop(quad20):
    p, pr = quad20
    tr = run_acc_vrcs(p, pr, seed=0, eps=1e-14, max_rounds=200)
    assert tr.status == "budget"
    assert tr.rounds_to_eps(1e-14) is None
