"""Experiment drivers shared by the CLI and the acceptance tests.

* penetration metrics over rollouts of several contact-model variants,
* the gradient oracle suite: taped gradients against central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dynamics import GeneralizedState, Trajectory, rollout
from .scenarios import Scenario, builtin_scenarios, load_hopper_actions

# ---------------------------------------------------------------------------
# penetration


def penetration_series(traj: Trajectory) -> list[float | None]:
    """Deepest penetration per step, or ``None`` for steps without contact.

    A step counts as in contact when some gap is ``>= 0`` (touching or
    overlapping), the same test for every model.
    """
    out = []
    for info in traj.infos:
        depths = [d for d in info.gaps.values() if d >= 0.0]
        out.append(max(depths) if depths else None)
    return out


def mean_penetration(traj: Trajectory) -> float:
    """Mean depth over in-contact steps; 0 when contact never occurs."""
    vals = [d for d in penetration_series(traj) if d is not None]
    return sum(vals) / len(vals) if vals else 0.0


@dataclass
class PenetrationRow:
    label: str
    model: str
    kappa: float | None
    toi: bool
    mean_depth: float
    max_depth: float
    contact_steps: int
    series: list = field(default_factory=list)
    failed: bool = False


@dataclass
class PenetrationReport:
    scenario: str
    dt: float
    rows: list

    def ordering(self) -> list[str]:
        """Labels from deepest to shallowest mean penetration."""
        return [r.label for r in sorted(self.rows, key=lambda r: -r.mean_depth)]

    def by_label(self) -> dict:
        return {r.label: r for r in self.rows}


def variant_label(cfg) -> str:
    if cfg.model == "smoothed":
        base = f"smoothed(kappa={cfg.kappa:g})"
    else:
        base = cfg.model
    return base + ("+toi" if cfg.toi else "")


def default_penetration_variants(cfg) -> list:
    """soft, smoothed at kappa 100 and 1000, hard, hard with ToI."""
    return [
        cfg.with_(model="soft", toi=False),
        cfg.with_(model="smoothed", kappa=100.0, toi=False),
        cfg.with_(model="smoothed", kappa=1000.0, toi=False),
        cfg.with_(model="hard", toi=False),
        cfg.with_(model="hard", toi=True),
    ]


def parse_variant(spec: str, base):
    """``soft``, ``hard``, ``hard+toi``, ``smoothed:1000`` or ``smoothed:1000+toi``."""
    toi = spec.endswith("+toi")
    core = spec[: -len("+toi")] if toi else spec
    model, _, kappa = core.partition(":")
    changes = {"model": model, "toi": toi}
    if kappa:
        changes["kappa"] = float(kappa)
    return base.with_(**changes)


def penetration_report(scenario: Scenario, variants: list, actions=None) -> PenetrationReport:
    if len(variants) < 2:
        raise ValueError("penetration comparison needs at least two model configs")
    rows = []
    for cfg in variants:
        traj = rollout(scenario, cfg, actions=actions)
        series = penetration_series(traj)
        vals = [d for d in series if d is not None]
        rows.append(
            PenetrationRow(
                label=variant_label(cfg),
                model=cfg.model,
                kappa=cfg.kappa if cfg.model == "smoothed" else None,
                toi=cfg.toi,
                mean_depth=mean_penetration(traj),
                max_depth=max(vals) if vals else 0.0,
                contact_steps=len(vals),
                series=series,
                failed=traj.failed,
            )
        )
    return PenetrationReport(scenario.name, variants[0].dt, rows)


def stored_actions_for(scenario: Scenario, cfg):
    """The stored pumping sequence for the hopper, no actuation otherwise."""
    if scenario.name != "hopper-2d":
        return None
    horizon = scenario.episode_length if cfg.horizon is None else cfg.horizon
    return load_hopper_actions(cfg.dt, horizon)


# ---------------------------------------------------------------------------
# gradient oracles

GRAD_RTOL = 1e-3
FD_STEP = 1e-6


def relative_error(a, b, floor: float = 1e-8) -> float:
    """``max|a - b| / max(max|a|, max|b|, floor)`` over all coordinates."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), floor)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


@dataclass
class GradCheck:
    name: str
    status: str  # pass, fail or excluded
    max_rel_err: float
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status != "fail"


def _state_from_flat(theta, n):
    theta = list(theta)
    return GeneralizedState(theta[:n], theta[n:])


def _contact_signature(traj: Trajectory):
    return tuple(
        tuple(sorted((t, d >= 0.0, info.modes.get(t)) for t, d in info.gaps.items())) for info in traj.infos
    )


def state_gradient_check(scenario: Scenario, cfg, theta, weights, h: float = FD_STEP, rtol: float = GRAD_RTOL):
    """Taped gradient of ``weights . [q_T, u_T]`` w.r.t. the initial state vs. finite differences.

    For the hard and soft models, a finite-difference probe that changes which
    contacts touch, or which branch a contact takes, straddles a discontinuity
    or kink; the check is then reported as excluded rather than failed.
    """
    n = scenario.system.n_dof
    weights = np.asarray(weights, dtype=float)
    actions = stored_actions_for(scenario, cfg)

    def run(x):
        return rollout(scenario, cfg, actions=actions, initial_state=_state_from_flat(x, n))

    def loss(traj):
        s = traj.final
        acc = 0.0
        for w, x in zip(weights, s.q + s.u):
            acc = acc + w * x
        return acc

    tape = ad.Tape()
    leaves = tape.variables(theta)
    traj = run(leaves)
    if traj.failed:
        return None, None, f"rollout failed: {traj.error}"
    analytic = tape.gradient(loss(traj), leaves)
    base_sig = _contact_signature(traj) if cfg.model != "smoothed" else None

    theta = np.asarray(theta, dtype=float)
    fd = np.zeros_like(theta)
    for i in range(theta.size):
        vals = []
        for sign in (1.0, -1.0):
            x = theta.copy()
            x[i] += sign * h
            t = run(x)
            if t.failed:
                return analytic, None, f"rollout failed at probe {i}"
            if base_sig is not None and _contact_signature(t) != base_sig:
                return analytic, None, "excluded"
            vals.append(float(ad.value(loss(t))))
        fd[i] = (vals[0] - vals[1]) / (2.0 * h)
    return analytic, fd, ""


def check_scenario(scenario: Scenario, cfg, n_points: int = 5, seed: int = 0, rtol: float = GRAD_RTOL) -> list[GradCheck]:
    rng = np.random.default_rng(seed)
    out = []
    n = scenario.system.n_dof
    for k in range(n_points):
        s = scenario.sample_initial(rng)
        theta = np.array([float(ad.value(x)) for x in s.q + s.u])
        weights = rng.normal(size=2 * n)
        name = f"{scenario.name}/{variant_label(cfg)}/point{k}"
        analytic, fd, note = state_gradient_check(scenario, cfg, theta, weights, rtol=rtol)
        if note == "excluded":
            out.append(GradCheck(name, "excluded", math.nan, "probe straddles a contact switch"))
        elif fd is None:
            out.append(GradCheck(name, "fail", math.inf, note))
        else:
            err = relative_error(analytic, fd)
            out.append(GradCheck(name, "pass" if err <= rtol else "fail", err))
    return out


def check_primitives(n_points: int = 100, seed: int = 0, rtol: float = 1e-5) -> list[GradCheck]:
    """Every tape primitive against central differences at random points."""
    rng = np.random.default_rng(seed)
    prims = {
        "add": (lambda x: x[0] + x[1], 2),
        "sub": (lambda x: x[0] - x[1], 2),
        "mul": (lambda x: x[0] * x[1], 2),
        "div": (lambda x: x[0] / x[1], 2),
        "neg": (lambda x: -x[0], 1),
        "min": (lambda x: ad.minimum(x[0], x[1]), 2),
        "max": (lambda x: ad.maximum(x[0], x[1]), 2),
        "abs": (lambda x: ad.absolute(x[0]), 1),
        "exp": (lambda x: ad.exp(x[0]), 1),
        "sqrt": (lambda x: ad.sqrt(x[0] * x[0] + 0.5), 1),
        "reciprocal": (lambda x: ad.reciprocal(x[0]), 1),
        "sigmoid": (lambda x: ad.sigmoid(x[0]), 1),
        "select": (lambda x: ad.select(ad.value(x[0]) > 0.0, x[0] * x[1], x[1] - x[0]), 2),
    }
    out = []
    for name, (f, dim) in prims.items():
        worst = 0.0
        checked = 0
        while checked < n_points:
            x = rng.uniform(-2.0, 2.0, size=dim)
            # keep away from kinks and poles
            if name in ("div", "reciprocal") and abs(x[-1 if name == "div" else 0]) < 0.2:
                continue
            if name in ("min", "max") and abs(x[0] - x[1]) < 1e-3:
                continue
            if name in ("abs", "select") and abs(x[0]) < 1e-3:
                continue
            _, g = ad.value_and_grad(f, x)
            fd = ad.finite_diff_gradient(lambda v: f(list(v)), x, h=1e-6)
            worst = max(worst, relative_error(g, fd))
            checked += 1
        out.append(GradCheck(f"primitive/{name}", "pass" if worst <= rtol else "fail", worst))
    return out


def run_gradcheck(cfg, models=("smoothed", "hard"), n_points: int = 5, scenarios=None) -> list[GradCheck]:
    """Primitive checks plus per-scenario, per-model state-gradient checks."""
    results = check_primitives(seed=cfg.seed)
    scenarios = builtin_scenarios() if scenarios is None else scenarios
    for i, scn in enumerate(scenarios):
        for model in models:
            mcfg = cfg.with_(model=model)
            results.extend(check_scenario(scn, mcfg, n_points, seed=cfg.seed + 1000 * i))
    return results
