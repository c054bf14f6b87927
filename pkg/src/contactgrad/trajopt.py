"""Open-loop trajectory optimisation by gradient descent through the simulator.

The decision vector is either a subset of initial-state entries or a full
per-step action sequence. :func:`bptt_gradient` records one rollout on a fresh
tape and backpropagates the loss; with a truncation window the state is
detached every ``trunc`` steps, so no gradient crosses a window boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .dynamics import GeneralizedState, Trajectory, rollout, step_count
from .scenarios import Scenario, get_scenario, load_hopper_actions

logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e8


class RolloutFailure(ArithmeticError):
    """The rollout behind a gradient evaluation stopped early."""


class NonFiniteGradientError(ArithmeticError):
    """Backpropagation produced NaN or infinite entries."""

    def __init__(self, message: str, norm_trace: list[float] | None = None):
        self.norm_trace = list(norm_trace or [])
        super().__init__(message)


@dataclass
class OptimizationProblem:
    """Loss of a trajectory as a function of a flat decision vector.

    ``decision`` is ``"state"`` (entries of ``[q, u]`` listed in
    ``state_indices``, all of them by default) or ``"actions"`` (a
    ``steps x action_dim`` sequence, flattened row-major). ``actions`` is a
    fixed action sequence replayed when the decision is the state.
    """

    scenario: Scenario
    cfg: object
    loss: Callable[[Trajectory], object]
    decision: str = "state"
    state_indices: tuple | None = None
    action_dim: int = 1
    trunc: int | None = None
    initial: np.ndarray | None = None
    name: str = ""
    actions: list | None = None

    def __post_init__(self):
        if self.decision not in ("state", "actions"):
            raise ValueError("decision must be 'state' or 'actions'")
        if self.trunc is not None and self.trunc < 1:
            raise ValueError("truncation window must be >= 1")
        n = 2 * self.scenario.system.n_dof
        if self.state_indices is None:
            self.state_indices = tuple(range(n))
        if self.initial is None:
            self.initial = self.default_point()

    @property
    def horizon_steps(self) -> int:
        horizon = self.scenario.episode_length if self.cfg.horizon is None else self.cfg.horizon
        return step_count(horizon, self.cfg.dt)

    def default_point(self) -> np.ndarray:
        if self.decision == "actions":
            return np.zeros(self.horizon_steps * self.action_dim)
        s = self.scenario.initial_state
        flat = [float(ad.value(x)) for x in s.q + s.u]
        return np.array([flat[i] for i in self.state_indices])

    def unpack(self, theta, cfg=None):
        """Initial state and action list for a decision vector (floats or DVars)."""
        cfg = self.cfg if cfg is None else cfg
        s = self.scenario.initial_state
        if self.decision == "actions":
            a = list(theta)
            rows = [a[k * self.action_dim : (k + 1) * self.action_dim] for k in range(len(a) // self.action_dim)]
            return s, rows
        n = self.scenario.system.n_dof
        flat = list(s.q + s.u)
        for i, x in zip(self.state_indices, theta):
            flat[i] = x
        return GeneralizedState(flat[:n], flat[n:]), self.actions

    def simulate(self, theta, cfg=None, trunc=None) -> Trajectory:
        cfg = self.cfg if cfg is None else cfg
        state, actions = self.unpack(theta, cfg)
        return rollout(self.scenario, cfg, actions=actions, initial_state=state, truncate_every=trunc)

    def evaluate(self, theta, cfg=None) -> float:
        """Untaped loss; a failed rollout counts as an infinite loss."""
        traj = self.simulate(np.asarray(theta, dtype=float), cfg)
        if traj.failed:
            return math.inf
        return float(ad.value(self.loss(traj)))


def bptt_gradient(prob: OptimizationProblem, theta, cfg=None, trunc="auto") -> tuple[float, np.ndarray]:
    """Loss value and its gradient w.r.t. the decision vector.

    ``trunc="auto"`` uses ``prob.trunc``; ``None`` disables truncation.
    """
    trunc = prob.trunc if trunc == "auto" else trunc
    tape = ad.Tape()
    leaves = tape.variables(np.asarray(theta, dtype=float).ravel())
    traj = prob.simulate(leaves, cfg, trunc)
    if traj.failed:
        raise RolloutFailure(traj.error)
    out = prob.loss(traj)
    grad = tape.gradient(out, leaves)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError("non-finite gradient", [float(np.linalg.norm(np.nan_to_num(grad)))])
    return float(ad.value(out)), grad


@dataclass(frozen=True)
class KappaSchedule:
    start: float = 100.0
    end: float = 100.0
    mode: str = "constant"
    epochs: int = 1

    def __post_init__(self):
        if not 0 < self.start:
            raise ValueError("kappa_start must be > 0")
        if self.mode not in ("constant", "geometric"):
            raise ValueError("schedule mode must be 'constant' or 'geometric'")
        if self.mode == "geometric" and not self.start <= self.end:
            raise ValueError("schedule needs kappa_start <= kappa_end")

    def kappa(self, epoch: int) -> float:
        if self.mode == "constant" or self.epochs <= 1:
            return self.start
        frac = min(max(epoch / (self.epochs - 1), 0.0), 1.0)
        return self.start * (self.end / self.start) ** frac

    @classmethod
    def from_config(cls, cfg, epochs: int | None = None) -> KappaSchedule:
        epochs = cfg.epochs if epochs is None else epochs
        if cfg.schedule == "geometric":
            return cls(cfg.kappa, cfg.kappa_end, "geometric", epochs)
        return cls(cfg.kappa, cfg.kappa, "constant", epochs)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    grad_norm: float
    kappa: float


@dataclass
class OptimizationTrace:
    records: list = field(default_factory=list)
    theta: np.ndarray | None = None
    status: str = "completed"
    message: str = ""

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else math.nan

    def losses(self) -> list[float]:
        return [r.loss for r in self.records]


class FunctionProblem:
    """Adapter so :func:`gd_optimize` also runs on plain differentiable functions."""

    def __init__(self, f: Callable, initial):
        self.f = f
        self.initial = np.atleast_1d(np.asarray(initial, dtype=float))

    def value_and_grad(self, theta, kappa=None):
        return ad.value_and_grad(lambda xs: self.f(xs), theta)


def _value_and_grad(prob, theta, kappa):
    if isinstance(prob, OptimizationProblem):
        cfg = prob.cfg if prob.cfg.model != "smoothed" else prob.cfg.with_(kappa=kappa)
        return bptt_gradient(prob, theta, cfg)
    return prob.value_and_grad(theta, kappa)


def gd_optimize(
    prob,
    schedule: KappaSchedule | None = None,
    lr: float = 1e-3,
    epochs: int = 100,
    seed: int = 0,
    adaptive: bool = False,
    init_std: float = 0.0,
    divergence_norm: float = DIVERGENCE_NORM,
) -> OptimizationTrace:
    """Plain gradient descent with a per-epoch kappa from ``schedule``.

    ``adaptive`` swaps the plain step for Adam. ``init_std`` adds seeded
    Gaussian jitter to the starting point. A gradient norm above
    ``divergence_norm``, a non-finite gradient or a failed rollout stops the
    run with ``status="diverged"``; that is an expected outcome, not an error.
    """
    if not lr > 0:
        raise ValueError("lr must be > 0")
    rng = np.random.default_rng(seed)
    theta = np.array(prob.initial, dtype=float)
    if init_std > 0:
        theta = theta + rng.normal(0.0, init_std, size=theta.shape)
    schedule = schedule or KappaSchedule(epochs=epochs)
    trace = OptimizationTrace()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    norms = []
    for epoch in range(epochs):
        kappa = schedule.kappa(epoch)
        try:
            loss, grad = _value_and_grad(prob, theta, kappa)
        except (RolloutFailure, NonFiniteGradientError, OverflowError) as exc:
            trace.status = "diverged"
            trace.message = f"epoch {epoch}: {exc}"
            break
        norm = float(np.linalg.norm(grad))
        norms.append(norm)
        trace.records.append(EpochRecord(epoch, loss, norm, kappa))
        if not math.isfinite(loss) or not math.isfinite(norm) or norm > divergence_norm:
            trace.status = "diverged"
            trace.message = f"epoch {epoch}: gradient norm {norm:.3g} exceeds {divergence_norm:.3g}"
            break
        if adaptive:
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            mh = m / (1 - b1 ** (epoch + 1))
            vh = v / (1 - b2 ** (epoch + 1))
            theta = theta - lr * mh / (np.sqrt(vh) + eps)
        else:
            theta = theta - lr * grad
    if trace.diverged:
        logger.info("optimisation stopped: %s (norm trace tail %s)", trace.message, norms[-3:])
    trace.theta = theta
    return trace


@dataclass
class TransferReport:
    train_model: str
    eval_model: str
    train_loss: float
    eval_loss: float

    @property
    def gap(self) -> float:
        if math.isinf(self.train_loss) or math.isinf(self.eval_loss):
            return math.inf
        return abs(self.eval_loss - self.train_loss)

    @property
    def ratio(self) -> float:
        if self.train_loss == 0:
            return math.inf if self.eval_loss > 0 else 1.0
        return self.eval_loss / self.train_loss


def transfer_evaluate(prob: OptimizationProblem, theta, train_cfg, eval_model: str = "hard") -> TransferReport:
    """Replay ``theta`` under ``eval_model`` and compare with the training model."""
    if prob.decision == "actions" and len(theta) != prob.horizon_steps * prob.action_dim:
        raise ValueError("action sequence length does not match the evaluation horizon")
    eval_cfg = train_cfg.with_(model=eval_model)
    return TransferReport(
        train_cfg.model,
        eval_model,
        prob.evaluate(theta, train_cfg),
        prob.evaluate(theta, eval_cfg),
    )


# ---------------------------------------------------------------------------
# built-in tasks

SPHERE_THROW_APEX = 1.5
HOPPER_TARGET_APEX = 1.0


def apex(traj: Trajectory, index: int):
    """Highest value of ``q[index]`` along the trajectory (taped)."""
    best = traj.states[0].q[index]
    for s in traj.states[1:]:
        best = ad.maximum(best, s.q[index])
    return best


def sphere_throw(cfg, target: float = SPHERE_THROW_APEX) -> OptimizationProblem:
    """Launch a sphere from the ground; decision is its initial upward velocity."""
    scenario = get_scenario("falling-sphere-1d", {"h0": 0.0, "v0": 3.0, "T": 1.0, **cfg.params})

    def loss(traj):
        e = apex(traj, 0) - target
        return e * e

    return OptimizationProblem(scenario, cfg, loss, "state", state_indices=(1,), name="sphere-throw")


def hopper_hop(cfg, target: float = HOPPER_TARGET_APEX) -> OptimizationProblem:
    """Per-step leg forces that lift the hopper body to ``target`` metres.

    Descent starts from the stored pumping sequence.
    """
    scenario = get_scenario("hopper-2d", cfg.params)
    horizon = scenario.episode_length if cfg.horizon is None else cfg.horizon
    start = np.array(load_hopper_actions(cfg.dt, horizon), dtype=float).ravel()

    def loss(traj):
        e = target - apex(traj, 0)
        return e * e

    return OptimizationProblem(
        scenario, cfg, loss, "actions", action_dim=1, trunc=cfg.trunc, initial=start, name="hopper-hop"
    )


TASKS = {"sphere-throw": sphere_throw, "hopper-hop": hopper_hop}


def make_task(name: str, cfg) -> OptimizationProblem:
    try:
        return TASKS[name](cfg)
    except KeyError:
        raise KeyError(f"unknown task {name!r}; choose from {', '.join(TASKS)}") from None


def sphere_throw_optimum(target: float = SPHERE_THROW_APEX, gravity: float = 9.81) -> float:
    """Continuous-time launch speed that reaches ``target``."""
    return math.sqrt(2.0 * gravity * target)
