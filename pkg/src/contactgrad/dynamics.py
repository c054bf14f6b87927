"""Generalized-coordinate systems, time stepping, and rollouts.

Two integrators are provided:

* :func:`step_semi_implicit` for the penalty (soft) contact model,
* :func:`step_moreau` for impulse-based hard and smoothed contact; positions
  take a half step, contacts are resolved at the midpoint, and the second half
  step uses the post-impact velocity.

:func:`rollout` picks the integrator from ``cfg.model`` and records every
state on the caller's tape when the initial state holds ``DVar`` entries.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from . import autodiff as ad
from . import contact as ct
from . import linalg as la

logger = logging.getLogger(__name__)


class NonFiniteStateError(ArithmeticError):
    """A step produced NaN or infinite coordinates."""


@dataclass(frozen=True)
class GeneralizedState:
    q: tuple
    u: tuple

    def __post_init__(self):
        if len(self.q) != len(self.u):
            raise ValueError("q and u must have the same length")
        object.__setattr__(self, "q", tuple(self.q))
        object.__setattr__(self, "u", tuple(self.u))

    @property
    def n(self) -> int:
        return len(self.q)

    def values(self) -> tuple[list[float], list[float]]:
        return la.values(list(self.q)), la.values(list(self.u))

    def is_finite(self) -> bool:
        return all(math.isfinite(ad.value(x)) for x in self.q + self.u)

    def on_tape(self, tape: ad.Tape) -> GeneralizedState:
        """Copy with every entry promoted to a fresh leaf on ``tape``."""
        return GeneralizedState(
            tuple(tape.variable(ad.value(x)) for x in self.q),
            tuple(tape.variable(ad.value(x)) for x in self.u),
        )

    def detached(self) -> GeneralizedState:
        return GeneralizedState(
            tuple(ad.stop_gradient(x) for x in self.q), tuple(ad.stop_gradient(x) for x in self.u)
        )


@dataclass(frozen=True)
class ContactPoint:
    """One contact candidate.

    ``normal`` and each entry of ``tangents`` are Jacobian rows of length n_v.
    ``mu=None`` defers to the simulation config.
    """

    d: object
    normal: tuple
    tangents: tuple = ()
    mu: float | None = None
    tag: str = "c0"

    def __post_init__(self):
        if all(ad.value(x) == 0.0 for x in self.normal):
            raise ValueError(f"contact {self.tag}: normal Jacobian row is zero")
        for row in (self.normal, *self.tangents):
            if not all(math.isfinite(ad.value(x)) for x in row):
                raise ValueError(f"contact {self.tag}: non-finite Jacobian entry")

    @property
    def rows(self) -> list:
        return [list(self.normal), *(list(t) for t in self.tangents)]


class SystemModel:
    """Mechanical system in generalized coordinates.

    Subclasses provide the mass matrix, the bias force (gravity, springs,
    actuation) and the contact candidates. ``armature_dofs`` flags the
    joint-like coordinates that receive armature.
    """

    n_dof: int = 1
    armature_dofs: tuple = ()
    contact_tags: tuple = ()

    def mass_matrix(self, q) -> list:
        raise NotImplementedError

    def bias_force(self, q, u, action, gravity: float) -> list:
        raise NotImplementedError

    def contact_candidates(self, q) -> list[ContactPoint]:
        raise NotImplementedError

    def energy(self, q, u, gravity: float, armature: float = 0.0) -> float:
        M = self.effective_mass_matrix(q, armature)
        return 0.5 * ad.value(la.dot(u, la.matvec(M, u))) + ad.value(self.potential(q, gravity))

    def potential(self, q, gravity: float):
        return 0.0

    def effective_mass_matrix(self, q, armature: float) -> list:
        M = [list(row) for row in self.mass_matrix(q)]
        if armature:
            for i in self.armature_dofs:
                M[i][i] = M[i][i] + armature
        return M


@dataclass
class StepInfo:
    """Per-step contact diagnostics.

    ``impulses`` maps contact tag to ``[normal, *tangential]`` components: forces
    for the soft model, impulses for hard/smoothed. ``gaps`` holds the gap each
    contact had where it was evaluated. ``modes`` records the branch each
    contact took (touching, damping or impulse sign, friction saturation); two
    rollouts with equal modes lie on the same smooth piece of the dynamics.
    """

    gaps: dict = field(default_factory=dict)
    impulses: dict = field(default_factory=dict)
    active: tuple = ()
    toi: dict = field(default_factory=dict)
    modes: dict = field(default_factory=dict)


def _check_finite(state: GeneralizedState, where: str):
    if not state.is_finite():
        raise NonFiniteStateError(f"non-finite state after {where}")


def step_semi_implicit(sys: SystemModel, s: GeneralizedState, action, cfg):
    """Penalty contact step: forces at (q, u), then ``u' = u + dt a``, ``q' = q + dt u'``."""
    q, u = list(s.q), list(s.u)
    M = sys.effective_mass_matrix(q, cfg.effective_armature)
    L = la.cholesky(M)
    h = list(sys.bias_force(q, u, action, cfg.gravity))
    info = StepInfo()
    for c in sys.contact_candidates(q):
        params = ct.SoftContactParams.from_config(cfg, mu=c.mu)
        v_n = la.dot(c.normal, u)
        f_n = ct.soft_normal_force(c.d, v_n, params)
        v_t = [la.dot(t, u) for t in c.tangents]
        f_t = ct.soft_friction_force(v_t, f_n, params) if v_t else []
        for i in range(len(h)):
            h[i] = h[i] + c.normal[i] * f_n
            for t, ft in zip(c.tangents, f_t):
                h[i] = h[i] + t[i] * ft
        info.gaps[c.tag] = ad.value(c.d)
        info.impulses[c.tag] = [ad.value(f_n), *(ad.value(x) for x in f_t)]
        speed = math.sqrt(sum(ad.value(x) ** 2 for x in v_t))
        info.modes[c.tag] = (
            ad.value(c.d) >= 0.0,
            ad.value(v_n) < 0.0,
            params.kf * speed > params.mu * ad.value(f_n),
        )
        if ad.value(c.d) >= 0.0:
            info.active += (c.tag,)
    acc = la.cho_solve(L, h)
    u_new = [ui + cfg.dt * ai for ui, ai in zip(u, acc)]
    q_new = [qi + cfg.dt * ui for qi, ui in zip(q, u_new)]
    out = GeneralizedState(q_new, u_new)
    _check_finite(out, "semi-implicit step")
    return out, info


def step_moreau(sys: SystemModel, s: GeneralizedState, action, cfg, warm=None):
    """Moreau midpoint step with contact impulses from :func:`contact.solve_contacts`.

    With ``cfg.toi`` on, a contact whose gap crosses zero during the step (by
    the linear model along the unconstrained velocity) is forced into the
    solve and the coordinates it touches are re-integrated from the estimated
    impact time.
    """
    dt = cfg.dt
    q, u = list(s.q), list(s.u)
    q_mid = [qi + (0.5 * dt) * ui for qi, ui in zip(q, u)]
    M = sys.effective_mass_matrix(q_mid, cfg.effective_armature)
    L = la.cholesky(M)
    h = list(sys.bias_force(q_mid, u, action, cfg.gravity))
    contacts = sys.contact_candidates(q_mid)
    minv_h = la.cho_solve(L, h)
    u_free = [ui + dt * ai for ui, ai in zip(u, minv_h)]

    crossings = {}
    d_override = {}
    if cfg.toi:
        start = {c.tag: c for c in sys.contact_candidates(q)}
        for c in contacts:
            c0 = start[c.tag]
            d_prev = c0.d
            d_pred = d_prev - dt * la.dot(c0.normal, u_free)
            if ad.value(d_prev) < 0.0 <= ad.value(d_pred):
                crossings[c.tag] = (c0, d_prev, d_pred)
                if cfg.smoothing is None and ad.value(c.d) < 0.0:
                    d_override[c.tag] = d_pred

    prob = ct.assemble_contact_problem(
        sys, q_mid, u, h, dt, cfg, contacts=contacts, chol=L, d_override=d_override
    )
    if warm:
        prob.p = [list(warm.get(tag, pj)) for tag, pj in zip(prob.tags, prob.p)]
    impulses = ct.solve_contacts(prob)

    gen = [0.0] * len(u)
    for rows, pj in zip(prob.rows, impulses):
        for row, pa in zip(rows, pj):
            for i, coeff in enumerate(row):
                if coeff != 0.0:
                    gen[i] = gen[i] + coeff * pa
    du = la.cho_solve(L, gen)
    u_new = [uf + dui for uf, dui in zip(u_free, du)]
    q_new = [qm + (0.5 * dt) * un for qm, un in zip(q_mid, u_new)]

    info = StepInfo()
    for c in contacts:
        info.gaps[c.tag] = ad.value(c.d)
        info.impulses[c.tag] = [0.0] * (1 + len(c.tangents))
    for tag, pj, mu in zip(prob.tags, impulses, prob.mu):
        vals = [ad.value(x) for x in pj]
        info.impulses[tag] = vals
        tangential = math.sqrt(sum(x * x for x in vals[1:]))
        info.modes[tag] = (vals[0] > 0.0, len(vals) > 1 and tangential >= mu * vals[0] * (1.0 - 1e-12))
    info.active = tuple(prob.tags)

    if crossings:
        post = GeneralizedState(q_new, u_new)
        for tag, (c0, d_prev, d_pred) in crossings.items():
            q_new = ct.toi_correct(
                s, post, c0, dt, d_prev, d_pred, approach_velocity=u_free
            )
            post = GeneralizedState(q_new, u_new)
            alpha = ct.toi_fraction(d_prev, d_pred)
            info.toi[tag] = None if alpha is None else ad.value(alpha)

    out = GeneralizedState(q_new, u_new)
    _check_finite(out, "Moreau step")
    return out, info, dict(zip(prob.tags, impulses))


@dataclass
class Trajectory:
    states: list
    infos: list
    dt: float
    model: str
    failed: bool = False
    error: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> GeneralizedState:
        return self.states[-1]

    def times(self) -> list[float]:
        return [k * self.dt for k in range(len(self.states))]

    def q_values(self) -> list[list[float]]:
        return [la.values(list(s.q)) for s in self.states]

    def u_values(self) -> list[list[float]]:
        return [la.values(list(s.u)) for s in self.states]


def step_count(horizon: float, dt: float) -> int:
    n = round(horizon / dt)
    if abs(n * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValueError(f"episode length {horizon} is not a whole number of {dt} s steps")
    return int(n)


def step(sys: SystemModel, state: GeneralizedState, action, cfg, warm=None):
    """One step with the integrator matching ``cfg.model``."""
    if cfg.model == "soft":
        new, info = step_semi_implicit(sys, state, action, cfg)
        return new, info, None
    return step_moreau(sys, state, action, cfg, warm=warm)


def rollout(scenario, cfg, actions=None, initial_state=None, truncate_every=None) -> Trajectory:
    """Simulate ``scenario`` for its episode length (or ``cfg.horizon``).

    ``actions`` is a per-step sequence (``None`` means unactuated). If the
    initial state carries ``DVar`` entries the whole trajectory is recorded on
    their tape. ``truncate_every`` cuts gradient flow through the state every
    that many steps. A non-finite state stops the rollout and sets ``failed``.
    """
    sys = scenario.system
    state = scenario.initial_state if initial_state is None else initial_state
    horizon = scenario.episode_length if cfg.horizon is None else cfg.horizon
    n = step_count(horizon, cfg.dt)
    if actions is not None and len(actions) < n:
        raise ValueError(f"need {n} actions, got {len(actions)}")
    states = [state]
    infos = []
    warm = None
    traj = Trajectory(states, infos, cfg.dt, cfg.model)
    for k in range(n):
        if truncate_every and k > 0 and k % truncate_every == 0:
            state = state.detached()
        action = None if actions is None else actions[k]
        try:
            state, info, impulses = step(sys, state, action, cfg, warm=warm)
        except (NonFiniteStateError, ct.ContactSolverError, la.CholeskyError, OverflowError) as exc:
            traj.failed = True
            traj.error = f"step {k}: {exc}"
            logger.warning("rollout of %s stopped at %s", scenario.name, traj.error)
            break
        if cfg.warm_start and impulses is not None:
            warm = {tag: [ad.stop_gradient(x) for x in p] for tag, p in impulses.items()}
        states.append(state)
        infos.append(info)
    return traj
