from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contactgrad import autodiff as ad
from contactgrad.config import SimConfig
from contactgrad.experiments import relative_error
from contactgrad.scenarios import builtin_scenarios, get_scenario, load_hopper_actions
from contactgrad.trajopt import (
    FunctionProblem,
    KappaSchedule,
    NonFiniteGradientError,
    OptimizationProblem,
    RolloutFailure,
    apex,
    bptt_gradient,
    gd_optimize,
    hopper_hop,
    make_task,
    sphere_throw,
    sphere_throw_optimum,
    transfer_evaluate,
)

G = 9.81


def free_fall_problem(target=0.5, T=0.3):
    scn = get_scenario("falling-sphere-1d", {"h0": 2.0, "T": T})

    def loss(traj):
        e = traj.final.q[0] - target
        return e * e

    return OptimizationProblem(scn, SimConfig(model="hard"), loss, "state", state_indices=(0,))


def test_free_fall_gradient_is_chain_rule():
    prob = free_fall_problem()
    h_T = prob.simulate([2.0]).final.q[0]
    loss, g = bptt_gradient(prob, [2.0])
    assert loss == pytest.approx((h_T - 0.5) ** 2)
    assert g[0] == pytest.approx(2.0 * (h_T - 0.5), rel=1e-12)


def test_zero_step_horizon_uses_initial_state_only():
    prob = free_fall_problem(T=0.0)
    loss, g = bptt_gradient(prob, [2.0])
    assert loss == pytest.approx(2.25) and g[0] == pytest.approx(3.0)


def test_hopper_apex_gradient_matches_fd():
    cfg = SimConfig(model="smoothed", kappa=100.0, horizon=0.4)
    scn = get_scenario("hopper-2d")
    prob = OptimizationProblem(scn, cfg, lambda traj: -apex(traj, 0), "actions")
    theta = np.array(load_hopper_actions(cfg.dt, 0.4)).ravel() * 0.5
    _, g = bptt_gradient(prob, theta)
    fd = ad.finite_diff_gradient(lambda x: prob.evaluate(x), theta, h=1e-6)
    assert relative_error(g, fd) <= 1e-3


@pytest.mark.parametrize("scn", builtin_scenarios(), ids=lambda s: s.name)
def test_state_gradient_matches_fd_on_every_scenario(scn):
    cfg = SimConfig(model="smoothed")
    rng = np.random.default_rng(12)
    n = 2 * scn.system.n_dof
    acts = load_hopper_actions(cfg.dt, scn.episode_length) if scn.name == "hopper-2d" else None
    for _ in range(5):
        w = rng.normal(size=n)

        def loss(traj, w=w):
            s = traj.final
            return sum(wi * x for wi, x in zip(w, s.q + s.u))

        prob = OptimizationProblem(scn, cfg, loss, "state", actions=acts)
        s0 = scn.sample_initial(rng)
        theta = np.array([ad.value(x) for x in s0.q + s0.u])
        _, g = bptt_gradient(prob, theta)
        fd = ad.finite_diff_gradient(lambda x: prob.evaluate(x), theta, h=1e-6)
        assert relative_error(g, fd) <= 1e-3


def test_truncation_at_horizon_is_identical():
    prob = hopper_hop(SimConfig(model="smoothed"))
    theta = prob.initial
    _, full = bptt_gradient(prob, theta, trunc=None)
    _, same = bptt_gradient(prob, theta, trunc=prob.horizon_steps)
    _, cut = bptt_gradient(prob, theta, trunc=10)
    assert np.array_equal(full, same)
    assert not np.array_equal(full, cut)


def test_rollout_failure_raises():
    prob = free_fall_problem()
    with pytest.raises(RolloutFailure):
        bptt_gradient(prob, [math.inf])


def test_problem_validation():
    scn = get_scenario("falling-sphere-1d")
    with pytest.raises(ValueError):
        OptimizationProblem(scn, SimConfig(), lambda t: 0.0, "policy")
    with pytest.raises(ValueError):
        OptimizationProblem(scn, SimConfig(), lambda t: 0.0, trunc=0)


def test_evaluate_failed_rollout_is_infinite():
    assert free_fall_problem().evaluate([math.nan]) == math.inf


# ---------------------------------------------------------------------------
# schedules and descent


def test_kappa_schedule_geometric():
    s = KappaSchedule(100.0, 1000.0, "geometric", 11)
    assert s.kappa(0) == 100.0
    assert s.kappa(10) == pytest.approx(1000.0)
    assert s.kappa(5) == pytest.approx(math.sqrt(1e5))
    assert s.kappa(50) == pytest.approx(1000.0)


def test_kappa_schedule_constant_and_validation():
    assert KappaSchedule(50.0, 50.0, "constant", 10).kappa(7) == 50.0
    with pytest.raises(ValueError):
        KappaSchedule(1000.0, 100.0, "geometric", 5)
    with pytest.raises(ValueError):
        KappaSchedule(0.0)


def test_kappa_schedule_from_config():
    cfg = SimConfig(schedule="geometric", kappa=100.0, kappa_end=1000.0, epochs=3)
    s = KappaSchedule.from_config(cfg)
    assert [round(s.kappa(e), 6) for e in range(3)] == [100.0, round(math.sqrt(1e5), 6), 1000.0]


def test_gd_quadratic():
    trace = gd_optimize(FunctionProblem(lambda x: (x[0] - 3.0) * (x[0] - 3.0), [0.0]), lr=0.1, epochs=100)
    assert abs(trace.theta[0] - 3.0) < 1e-4
    assert trace.status == "completed" and len(trace.records) == 100


def test_gd_adam_quadratic():
    trace = gd_optimize(FunctionProblem(lambda x: (x[0] - 3.0) * (x[0] - 3.0), [0.0]), lr=0.1, epochs=300, adaptive=True)
    assert abs(trace.theta[0] - 3.0) < 1e-2


def test_gd_seeded_jitter_is_deterministic():
    prob = FunctionProblem(lambda x: x[0] * x[0] + x[1] * x[1], [1.0, 1.0])
    a = gd_optimize(prob, lr=0.1, epochs=5, seed=3, init_std=0.5)
    b = gd_optimize(prob, lr=0.1, epochs=5, seed=3, init_std=0.5)
    assert a.losses() == b.losses()
    assert np.array_equal(a.theta, b.theta)


def test_gd_rejects_nonpositive_lr():
    with pytest.raises(ValueError):
        gd_optimize(FunctionProblem(lambda x: x[0], [0.0]), lr=0.0)


@settings(max_examples=30)
@given(
    st.lists(st.floats(0.1, 5.0), min_size=1, max_size=4),
    st.lists(st.floats(-3.0, 3.0), min_size=4, max_size=4),
)
def test_gd_descent_is_monotone_on_convex_quadratics(curv, center):
    center = center[: len(curv)]

    def f(x):
        return sum(c * (xi - m) * (xi - m) for c, xi, m in zip(curv, x, center))

    lr = 0.9 / (2.0 * max(curv))
    trace = gd_optimize(FunctionProblem(f, [0.0] * len(curv)), lr=lr, epochs=30)
    losses = trace.losses()
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_gd_stops_on_divergent_norm():
    trace = gd_optimize(FunctionProblem(lambda x: ad.exp(x[0] * 30.0), [1.0]), lr=1.0, epochs=5)
    assert trace.diverged and "exceeds" in trace.message
    assert len(trace.records) == 1


def test_nonfinite_gradient_error_keeps_norm_trace():
    err = NonFiniteGradientError("bad", [1.0, 2.0])
    assert err.norm_trace == [1.0, 2.0]


def test_sphere_throw_reaches_apex():
    cfg = SimConfig(model="smoothed")
    prob = sphere_throw(cfg)
    trace = gd_optimize(prob, lr=0.5, epochs=200)
    assert trace.final_loss < 1e-3
    assert trace.theta[0] == pytest.approx(sphere_throw_optimum(), rel=0.01)


def test_stiff_soft_hopper_takes_divergence_branch():
    # ten times the default stiffness over a 3 s horizon
    stiff = gd_optimize(hopper_hop(SimConfig(model="soft", kp=1.2e5, horizon=3.0)), lr=300.0, epochs=5)
    assert stiff.diverged
    default = gd_optimize(hopper_hop(SimConfig(model="soft", horizon=3.0)), lr=300.0, epochs=5)
    assert not default.diverged


def test_make_task_unknown():
    with pytest.raises(KeyError):
        make_task("juggle", SimConfig())
    assert make_task("hopper-hop", SimConfig()).decision == "actions"


# ---------------------------------------------------------------------------
# transfer


def test_transfer_same_model_has_zero_gap():
    cfg = SimConfig(model="smoothed")
    prob = hopper_hop(cfg)
    rep = transfer_evaluate(prob, prob.initial, cfg, eval_model="smoothed")
    assert rep.gap == 0.0 and rep.ratio == 1.0


def test_transfer_rejects_wrong_length():
    cfg = SimConfig(model="smoothed")
    prob = hopper_hop(cfg)
    with pytest.raises(ValueError):
        transfer_evaluate(prob, prob.initial[:10], cfg)


def test_transfer_reports_both_losses():
    cfg = SimConfig(model="soft")
    prob = hopper_hop(cfg)
    rep = transfer_evaluate(prob, prob.initial, cfg)
    assert rep.train_model == "soft" and rep.eval_model == "hard"
    assert rep.train_loss == prob.evaluate(prob.initial, cfg)
    assert rep.eval_loss == prob.evaluate(prob.initial, cfg.with_(model="hard"))
