from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contactgrad import autodiff as ad
from contactgrad.config import SimConfig
from contactgrad.dynamics import rollout
from contactgrad.scenarios import get_scenario


def test_record_mul_adjoints():
    tape = ad.Tape()
    x, y = tape.variable(3.0), tape.variable(4.0)
    out = ad.record("mul", (x, y), 12.0, (4.0, 3.0))
    assert out.value == 12.0
    adj = tape.backward(out)
    assert adj[x.index] == 4.0
    assert adj[y.index] == 3.0
    assert adj[out.index] == 1.0


def test_record_add_adjoints():
    tape = ad.Tape()
    x, y = tape.variable(1.0), tape.variable(2.0)
    out = ad.record("add", (x, y), 3.0, (1.0, 1.0))
    adj = tape.backward(out)
    assert (adj[x.index], adj[y.index]) == (1.0, 1.0)


def test_record_sigmoid_partial_at_zero():
    tape = ad.Tape()
    d = tape.variable(0.0)
    out = ad.sigmoid(d * 1.0)
    assert out.value == 0.5
    assert tape.backward(out)[d.index] == 0.25


def test_record_rejects_mixed_tapes():
    a, b = ad.Tape(), ad.Tape()
    x, y = a.variable(1.0), b.variable(2.0)
    with pytest.raises(ad.TapeMismatchError):
        ad.record("add", (x, y), 3.0, (1.0, 1.0))
    with pytest.raises(ad.TapeMismatchError):
        _ = x * y


def test_record_rejects_partials_length_mismatch():
    tape = ad.Tape()
    x = tape.variable(1.0)
    with pytest.raises(ValueError):
        ad.record("neg", (x,), -1.0, (1.0, 2.0))


def test_backward_square():
    assert ad.value_and_grad(lambda v: v[0] * v[0], [3.0])[1][0] == 6.0


def test_backward_inactive_min_branch():
    _, g = ad.value_and_grad(lambda v: ad.minimum(v[0], 5.0), [7.0])
    assert g[0] == 0.0


def test_backward_constant_output_gives_zeros():
    tape = ad.Tape()
    x = tape.variable(2.0)
    assert tape.backward(ad.DVar.constant(3.0)) == [0.0]
    assert tape.backward(5.0) == [0.0]
    assert tape.gradient(ad.DVar(1.0), [x])[0] == 0.0


def test_backward_foreign_output_rejected():
    a, b = ad.Tape(), ad.Tape()
    a.variable(1.0)
    y = b.variable(1.0) * 2.0
    with pytest.raises(ad.TapeMismatchError):
        a.backward(y)


def test_constant_dvar_never_gets_adjoint():
    tape = ad.Tape()
    x = tape.variable(2.0)
    c = ad.DVar.constant(5.0)
    out = x * c + c
    assert c.index == -1
    assert tape.gradient(out, [x, c]).tolist() == [5.0, 0.0]


def test_free_fall_height_depends_linearly_on_h0():
    scn = get_scenario("falling-sphere-1d", {"h0": 5.0, "T": 0.3})
    tape = ad.Tape()
    h0 = tape.variable(5.0)
    traj = rollout(scn, SimConfig(model="hard"), initial_state=scn.with_height(h0))
    assert tape.gradient(traj.final.q[0], [h0])[0] == pytest.approx(1.0, abs=1e-12)


def test_node_operands_precede_node():
    tape = ad.Tape()
    x = tape.variable(0.3)
    y = ad.exp(x) * ad.sqrt(x + 1.0) - ad.sigmoid(x) / (x + 2.0)
    for i in range(len(tape)):
        assert all(j < i for j in tape.operands(i))
    assert tape.backward(y)[y.index] == 1.0


def test_backward_is_repeatable_bit_for_bit():
    tape = ad.Tape()
    xs = tape.variables([0.2, -1.3, 0.7])
    y = ad.maximum(xs[0] * xs[1], xs[2]) + ad.exp(xs[0]) / (ad.absolute(xs[1]) + 1.0)
    assert tape.backward(y) == tape.backward(y)


def test_checkpoint_marks_length():
    tape = ad.Tape()
    x = tape.variable(1.0)
    _ = x * 2.0
    assert tape.checkpoint() == 2 == tape.marker


def test_stop_gradient_cuts_flow():
    tape = ad.Tape()
    x = tape.variable(2.0)
    y = ad.stop_gradient(x * 3.0) * x
    assert tape.gradient(y, [x])[0] == pytest.approx(6.0)


def test_ties_go_to_first_operand():
    _, g = ad.value_and_grad(lambda v: ad.minimum(v[0], v[1]), [1.0, 1.0])
    assert g.tolist() == [1.0, 0.0]
    _, g = ad.value_and_grad(lambda v: ad.maximum(v[0], v[1]), [1.0, 1.0])
    assert g.tolist() == [1.0, 0.0]
    _, g = ad.value_and_grad(lambda v: ad.absolute(v[0]), [0.0])
    assert g.tolist() == [1.0]


def test_select_records_branch_taken():
    _, g = ad.value_and_grad(lambda v: ad.select(True, v[0] * 2.0, v[1]), [1.0, 1.0])
    assert g.tolist() == [2.0, 0.0]
    _, g = ad.value_and_grad(lambda v: ad.select(False, v[0] * 2.0, v[1] * 3.0), [1.0, 1.0])
    assert g.tolist() == [0.0, 3.0]


def test_sigmoid_is_overflow_safe():
    assert ad.sigmoid(-1e6) == 0.0
    assert ad.sigmoid(1e6) == 1.0
    _, g = ad.value_and_grad(lambda v: ad.sigmoid(v[0]), [800.0])
    assert g[0] == 0.0


def test_float_path_does_not_touch_tapes():
    assert ad.exp(0.0) == 1.0
    assert ad.minimum(2.0, 3.0) == 2.0
    assert isinstance(ad.sqrt(4.0), float)


def test_finite_diff_square():
    g = ad.finite_diff_gradient(lambda x: x[0] ** 2, [3.0], h=1e-5)
    assert g[0] == pytest.approx(6.0, abs=1e-6)


def test_finite_diff_abs_at_zero_is_zero():
    assert ad.finite_diff_gradient(lambda x: abs(x[0]), [0.0])[0] == 0.0


def test_finite_diff_names_bad_coordinate():
    def f(x):
        return math.nan if x[1] > 0.5 else float(x[0])

    with pytest.raises(ad.FiniteDifferenceError, match="coordinate 1"):
        ad.finite_diff_gradient(f, [0.0, 0.5], h=1e-3)


def test_finite_diff_requires_positive_step():
    with pytest.raises(ValueError):
        ad.finite_diff_gradient(lambda x: x[0], [0.0], h=0.0)


def test_soft_rollout_gradient_matches_finite_differences():
    # gradient through a penetrating soft contact; the central difference is the oracle
    scn = get_scenario("falling-sphere-1d", {"h0": -0.002, "v0": -0.3, "T": 0.05})
    cfg = SimConfig(model="soft")

    def final_height(x):
        traj = rollout(scn, cfg, initial_state=scn.with_initial((x[0],), (x[1],)).initial_state)
        return traj.final.q[0]

    _, g = ad.value_and_grad(final_height, [-0.002, -0.3])
    fd = ad.finite_diff_gradient(final_height, [-0.002, -0.3], h=1e-7)
    np.testing.assert_allclose(g, fd, rtol=1e-4)


# ---------------------------------------------------------------------------
# properties

UNARY = {
    "neg": lambda x: -x,
    "abs": ad.absolute,
    "exp": ad.exp,
    "sqrt": ad.sqrt,
    "reciprocal": ad.reciprocal,
    "sigmoid": ad.sigmoid,
    "log": ad.log,
}
BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "min": ad.minimum,
    "max": ad.maximum,
}

finite = st.floats(-3.0, 3.0, allow_nan=False)


def _close(g, fd, rtol):
    return abs(g - fd) <= rtol * max(abs(g), abs(fd)) + 1e-9


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_matches_finite_differences(name):
    f = UNARY[name]
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.uniform(-3.0, 3.0)
        if name in ("sqrt", "log"):
            x = abs(x) + 0.1
        if name == "reciprocal" and abs(x) < 0.1:
            x += 0.5
        if name == "abs" and abs(x) < 1e-3:
            continue
        _, g = ad.value_and_grad(lambda v: f(v[0]), [x])
        fd = ad.finite_diff_gradient(lambda v: f(float(v[0])), [x], h=1e-6)
        assert _close(g[0], fd[0], 1e-5), (name, x)


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitive_matches_finite_differences(name):
    f = BINARY[name]
    rng = np.random.default_rng(11)
    for _ in range(100):
        a, b = rng.uniform(-3.0, 3.0, 2)
        if name == "div" and abs(b) < 0.1:
            b += 0.5
        if name in ("min", "max") and abs(a - b) < 1e-3:
            continue
        _, g = ad.value_and_grad(lambda v: f(v[0], v[1]), [a, b])
        fd = ad.finite_diff_gradient(lambda v: f(float(v[0]), float(v[1])), [a, b], h=1e-6)
        assert _close(g[0], fd[0], 1e-5) and _close(g[1], fd[1], 1e-5), (name, a, b)


SMOOTH_OPS = [
    lambda x: ad.sigmoid(x),
    lambda x: x * 0.7 + 0.2,
    lambda x: ad.exp(x * 0.3),
    lambda x: ad.sqrt(x * x + 1.0),
    lambda x: x * x * 0.5 - x,
    lambda x: 1.0 / (x * x + 1.0),
    lambda x: -x,
]


@given(st.lists(st.integers(0, len(SMOOTH_OPS) - 1), min_size=1, max_size=10), st.floats(-1.5, 1.5))
def test_chain_rule_on_random_compositions(ops, x0):
    def f(v):
        y = v[0]
        for k in ops:
            y = SMOOTH_OPS[k](y)
        return y

    _, g = ad.value_and_grad(f, [x0])
    fd = ad.finite_diff_gradient(lambda v: f([float(v[0])]), [x0], h=1e-6)
    assert _close(g[0], fd[0], 1e-4)


@given(finite, finite)
def test_replay_is_deterministic(a, b):
    tape = ad.Tape()
    x, y = tape.variables([a, b])
    out = ad.maximum(x * y, ad.sigmoid(x - y)) + ad.absolute(x)
    assert tape.backward(out) == tape.backward(out)
