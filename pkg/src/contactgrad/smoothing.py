"""Gradient estimators and discontinuity sweeps.

Three ways to get d loss / d theta at a point:

* ``analytic_fog``: one taped evaluation, exact for the model being simulated,
* ``bundled_fog``: the analytic gradient averaged over Gaussian perturbations,
* ``zog``: a zeroth-order Gaussian-smoothing estimate from loss values only,
  ``mean((L(theta + w) - L(theta)) w) / sigma^2``.

On a step-shaped loss the bundled estimate is zero almost surely while the
zeroth-order estimate sees the jump; :func:`empirical_bias_report` flags the
grid points where the two disagree.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .dynamics import rollout
from .scenarios import Scenario, get_scenario

logger = logging.getLogger(__name__)

KINDS = ("zog", "bundled_fog", "analytic_fog")
WORKERS_ENV = "CONTACTGRAD_WORKERS"


class EstimatorError(ArithmeticError):
    """Every Monte-Carlo sample was non-finite."""


@dataclass
class GradientEstimate:
    value: np.ndarray
    n_samples: int
    noise_std: float
    kind: str
    # one row per retained sample
    samples: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    n_excluded: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.kind != "analytic_fog" and not self.noise_std > 0:
            raise ValueError("stochastic estimators need noise_std > 0")

    @property
    def variance(self) -> np.ndarray:
        """Per-sample variance of each coordinate."""
        if len(self.samples) < 2:
            return np.zeros_like(self.value)
        return np.var(self.samples, axis=0, ddof=1)

    @property
    def std_error(self) -> np.ndarray:
        """Standard error of the mean estimate."""
        n = max(len(self.samples), 1)
        return np.sqrt(self.variance / n)

    @property
    def scalar(self) -> float:
        return float(self.value[0])


def _as_vector(theta) -> np.ndarray:
    return np.atleast_1d(np.asarray(theta, dtype=float)).copy()


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _call(loss, theta: np.ndarray):
    return loss(theta if theta.size > 1 else float(theta[0]))


def zog_estimate(
    loss: Callable, theta0, sigma: float, n: int, seed=0, antithetic: bool = False
) -> GradientEstimate:
    """Baseline-subtracted Gaussian-smoothing estimate of the gradient.

    ``loss`` maps a parameter (float for scalar ``theta0``, array otherwise) to
    a real. With ``antithetic`` each draw ``w`` is paired with ``-w`` and the
    per-pair sample is ``(L(theta + w) - L(theta - w)) w / (2 sigma^2)``.
    Non-finite loss samples are dropped and counted in ``n_excluded``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if n < 2:
        raise ValueError("zog_estimate needs n >= 2")
    theta0 = _as_vector(theta0)
    rng = _rng(seed)
    w = rng.normal(0.0, sigma, size=(n, theta0.size))
    base = float(ad.value(_call(loss, theta0)))
    if not antithetic and not math.isfinite(base):
        raise EstimatorError("loss is non-finite at the estimation point")
    rows = []
    excluded = 0
    for wi in w:
        if antithetic:
            lp = float(ad.value(_call(loss, theta0 + wi)))
            lm = float(ad.value(_call(loss, theta0 - wi)))
            diff = (lp - lm) * 0.5
        else:
            diff = float(ad.value(_call(loss, theta0 + wi))) - base
        if not math.isfinite(diff):
            excluded += 1
            continue
        rows.append(diff * wi / (sigma * sigma))
    return _finish(rows, excluded, n, sigma, "zog", theta0.size)


def bundled_fog_estimate(
    loss_grad: Callable, theta0, sigma: float, n: int, seed=0
) -> GradientEstimate:
    """Mean of analytic gradients at Gaussian-perturbed points.

    ``loss_grad(theta)`` returns ``(value, gradient)``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if n < 1:
        raise ValueError("bundled_fog_estimate needs n >= 1")
    theta0 = _as_vector(theta0)
    rng = _rng(seed)
    w = rng.normal(0.0, sigma, size=(n, theta0.size))
    rows = []
    excluded = 0
    for wi in w:
        val, g = _call(loss_grad, theta0 + wi)
        g = np.atleast_1d(np.asarray(g, dtype=float))
        if not (math.isfinite(val) and np.all(np.isfinite(g))):
            excluded += 1
            continue
        rows.append(g)
    return _finish(rows, excluded, n, sigma, "bundled_fog", theta0.size)


def analytic_estimate(loss_grad: Callable, theta0) -> GradientEstimate:
    theta0 = _as_vector(theta0)
    _, g = _call(loss_grad, theta0)
    g = np.atleast_1d(np.asarray(g, dtype=float))
    return GradientEstimate(g, 1, 0.0, "analytic_fog", samples=g[None, :])


def _finish(rows, excluded, n, sigma, kind, dim) -> GradientEstimate:
    if excluded:
        logger.warning("%s: excluded %d of %d non-finite samples", kind, excluded, n)
    if not rows:
        raise EstimatorError(f"{kind}: all {n} samples were non-finite")
    samples = np.array(rows).reshape(len(rows), dim)
    return GradientEstimate(samples.mean(axis=0), len(rows), sigma, kind, samples, excluded)


def taped(f: Callable) -> Callable:
    """Turn ``f(theta) -> DVar`` into ``theta -> (value, gradient)``."""

    def loss_grad(theta):
        return ad.value_and_grad(lambda xs: f(xs[0] if len(xs) == 1 else xs), theta)

    return loss_grad


# ---------------------------------------------------------------------------
# final-state sweeps


def final_state_fn(scenario: Scenario, cfg, target: str) -> Callable:
    """``h0 -> final height`` or ``h0 -> final height-velocity`` for one scenario."""
    idx = scenario.height_index

    def f(h0):
        traj = rollout(scenario, cfg, initial_state=scenario.with_height(h0))
        if traj.failed:
            return math.nan
        s = traj.final
        return s.q[idx] if target == "final_h" else s.u[idx]

    return f


@dataclass
class SweepPoint:
    h0: float
    final_h: float
    final_v: float
    estimates: dict
    error: str = ""


@dataclass
class SweepResult:
    grid: np.ndarray
    points: list
    scenario: str
    target: str
    cfg: object
    seed: int

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.size > 1 and not np.all(np.diff(g) > 0):
            raise ValueError("sweep grid must be strictly increasing")
        self.grid = g

    def column(self, name: str) -> np.ndarray:
        if name in ("h0", "final_h", "final_v"):
            return np.array([getattr(p, name) for p in self.points])
        kind, _, stat = name.partition(":")
        out = []
        for p in self.points:
            est = p.estimates.get(kind)
            if est is None:
                out.append(math.nan)
            elif stat == "std":
                out.append(float(np.sqrt(est.variance[0])))
            elif stat == "se":
                out.append(float(est.std_error[0]))
            else:
                out.append(est.scalar)
        return np.array(out)

    @property
    def kinds(self) -> list[str]:
        found = []
        for p in self.points:
            for k in p.estimates:
                if k not in found:
                    found.append(k)
        return [k for k in KINDS if k in found]


def _sweep_point(args):
    scenario, cfg, h0, target, kinds, seed_seq = args
    if isinstance(scenario, tuple):
        # rebuilt inside a worker process: scenarios hold closures and do not pickle
        name, params, initial = scenario
        scenario = get_scenario(name, params).with_initial(initial.q, initial.u)
    idx = scenario.height_index
    traj = rollout(scenario, cfg, initial_state=scenario.with_height(h0))
    if traj.failed:
        return SweepPoint(h0, math.nan, math.nan, {}, traj.error)
    final_h = float(ad.value(traj.final.q[idx]))
    final_v = float(ad.value(traj.final.u[idx]))
    f = final_state_fn(scenario, cfg, target)
    lg = taped(f)
    zog_seed, fog_seed = seed_seq.spawn(2)
    estimates = {}
    error = ""
    try:
        if "analytic_fog" in kinds:
            estimates["analytic_fog"] = analytic_estimate(lg, h0)
        if "bundled_fog" in kinds:
            estimates["bundled_fog"] = bundled_fog_estimate(
                lg, h0, cfg.sigma, cfg.samples, np.random.default_rng(fog_seed)
            )
        if "zog" in kinds:
            estimates["zog"] = zog_estimate(
                f, h0, cfg.sigma, max(cfg.samples, 2), np.random.default_rng(zog_seed), cfg.antithetic
            )
    except EstimatorError as exc:
        error = str(exc)
    return SweepPoint(h0, final_h, final_v, estimates, error)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def sweep_final_state(
    scenario: Scenario, cfg, grid=None, kinds=KINDS, workers: int | None = None
) -> SweepResult:
    """Roll out from every initial height in ``grid`` and estimate gradients.

    ``grid`` defaults to ``cfg.grid_points`` values over
    ``[cfg.grid_min, cfg.grid_max]``. Gradients are of ``cfg.sweep_target``
    with respect to the initial height. Each point gets its own random stream
    split from ``cfg.seed``, so results do not depend on ``workers``. With
    more than one worker the scenario must be a built-in one, since workers
    rebuild it from its name and parameters.
    """
    if grid is None:
        grid = np.linspace(cfg.grid_min, cfg.grid_max, cfg.grid_points)
    grid = [float(h) for h in grid]
    kinds = tuple(kinds)
    for k in kinds:
        if k not in KINDS:
            raise ValueError(f"unknown estimator kind {k!r}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(grid))
    workers = default_workers() if workers is None else workers
    parallel = workers > 1 and len(grid) > 1
    spec = (scenario.name, scenario.params, scenario.initial_state) if parallel else scenario
    tasks = [(spec, cfg, h, cfg.sweep_target, kinds, s) for h, s in zip(grid, seeds)]
    if parallel:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_sweep_point, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        points = [_sweep_point(t) for t in tasks]
    return SweepResult(grid, points, scenario.name, cfg.sweep_target, cfg, cfg.seed)


@dataclass
class BiasRow:
    h0: float
    abs_diff: float
    var_bundled: float
    var_zog: float
    combined_se: float
    flagged: bool


@dataclass
class BiasReport:
    rows: list

    @property
    def flagged(self) -> list[float]:
        return [r.h0 for r in self.rows if r.flagged]


def empirical_bias_report(sweep: SweepResult, threshold: float = 3.0) -> BiasReport:
    """Compare bundled and zeroth-order estimates point by point.

    A point is flagged when ``|bundled - zog|`` exceeds ``threshold`` combined
    standard errors, ``sqrt(se_bundled^2 + se_zog^2)``. Two identical constant
    estimates (zero spread on both sides) are never flagged.
    """
    if len(sweep.kinds) < 2 or not {"bundled_fog", "zog"} <= set(sweep.kinds):
        raise ValueError("bias report needs both bundled_fog and zog estimates")
    rows = []
    for p in sweep.points:
        b = p.estimates.get("bundled_fog")
        z = p.estimates.get("zog")
        if b is None or z is None:
            continue
        diff = abs(b.scalar - z.scalar)
        se = math.sqrt(float(b.std_error[0]) ** 2 + float(z.std_error[0]) ** 2)
        flagged = diff > threshold * se if se > 0 else diff > 1e-12
        rows.append(BiasRow(p.h0, diff, float(b.variance[0]), float(z.variance[0]), se, flagged))
    return BiasReport(rows)


def critical_height(scenario: Scenario, cfg, lo: float, hi: float, tol: float = 1e-9) -> tuple[float, float]:
    """Bracket ``(below, above)`` of the smallest initial height that avoids contact.

    Bisects on whether the final height-velocity equals free fall, for the
    hard model. ``lo`` must touch the ground within the horizon and ``hi`` not.
    """
    f = final_state_fn(scenario, cfg, "final_v")
    idx = scenario.height_index
    v0 = float(ad.value(scenario.initial_state.u[idx]))
    horizon = scenario.episode_length if cfg.horizon is None else cfg.horizon
    free = v0 - cfg.gravity * horizon

    def free_fall(h):
        return abs(f(h) - free) < 1e-9

    if free_fall(lo) or not free_fall(hi):
        raise ValueError("critical height is not bracketed")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if free_fall(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


def smoothed_step_prediction(jump: float, sigma: float) -> float:
    """Gaussian-smoothed derivative of a step of height ``jump`` at its edge."""
    return jump / (sigma * math.sqrt(2.0 * math.pi))
