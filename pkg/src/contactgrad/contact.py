"""Contact models: penalty forces, hard impulses, and sigmoid-smoothed impulses.

Sign conventions used throughout:

* ``d`` is the signed gap, positive when bodies interpenetrate.
* A contact's normal Jacobian row maps generalized velocity to the separating
  normal velocity, so approaching bodies have ``v_n < 0`` and a normal impulse
  ``p_n >= 0`` pushes them apart.

The hard and smoothed models share :func:`solve_contacts`; hard contact is the
``kappa=None`` limit where the sigmoid weight becomes the unit step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import linalg as la

# smoothed contacts enter the solver once d reaches this depth (metres)
SMOOTHED_ACTIVATION = -1.0
HARD_ACTIVATION = 0.0


class ContactSolverError(ArithmeticError):
    """Non-finite impulse inside the Gauss-Seidel loop."""

    def __init__(self, message: str, iteration: int, contact: str):
        self.iteration = iteration
        self.contact = contact
        super().__init__(message)


@dataclass(frozen=True)
class SoftContactParams:
    kp: float = 12e3
    kd: float = 3.0
    kf: float = 9e2
    mu: float = 0.8

    def __post_init__(self):
        if not self.kp > 0:
            raise ValueError("k_p must be > 0")
        if self.kd < 0 or self.kf < 0 or self.mu < 0:
            raise ValueError("k_d, k_f and mu must be >= 0")

    @classmethod
    def from_config(cls, cfg, mu: float | None = None) -> SoftContactParams:
        return cls(kp=cfg.kp, kd=cfg.kd, kf=cfg.kf, mu=cfg.mu if mu is None else mu)


@dataclass
class ContactImpulse:
    p_n: object
    p_t: tuple = ()

    def as_list(self) -> list:
        return [self.p_n, *self.p_t]

    @classmethod
    def from_list(cls, p) -> ContactImpulse:
        return cls(p[0], tuple(p[1:]))


def soft_normal_force(d, v_n, params: SoftContactParams):
    """Spring-damper normal force; zero while separated (d < 0).

    Damping only acts while approaching, through ``min(v_n, 0)``.
    """
    if ad.value(d) >= 0.0:
        return params.kp * d - params.kd * ad.minimum(v_n, 0.0)
    return 0.0


def soft_friction_force(v_t, f_n, params: SoftContactParams) -> list:
    """Regularised Coulomb friction: viscous up to the cone, then saturated."""
    v_t = list(v_t)
    speed = math.sqrt(sum(ad.value(v) ** 2 for v in v_t))
    if speed == 0.0:
        return [0.0] * len(v_t)
    cap = params.mu * ad.value(f_n)
    if params.kf * speed <= cap:
        # -v/|v| * kf|v| without the 0/0 hazard near rest
        return [-params.kf * v for v in v_t]
    norm = ad.sqrt(la.dot(v_t, v_t)) if len(v_t) > 1 else ad.absolute(v_t[0])
    scale = params.mu * f_n / norm
    return [-v * scale for v in v_t]


def sigmoid_weight(d, kappa):
    """Contact activation weight in (0, 1); ``kappa=None`` gives the unit step."""
    if kappa is None or math.isinf(kappa):
        return 1.0 if ad.value(d) >= 0.0 else 0.0
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    return ad.sigmoid(d * kappa)


def prox_friction_cone(p, mu: float):
    """Project an impulse onto the Coulomb cone ``|p_t| <= mu * p_n``.

    Normal clamp first, then a radial clamp of the tangential part against the
    clamped normal. Accepts a ``[p_n, *p_t]`` list or a :class:`ContactImpulse`
    and returns the same kind.
    """
    if isinstance(p, ContactImpulse):
        return ContactImpulse.from_list(prox_friction_cone(p.as_list(), mu))
    p_n = ad.maximum(p[0], 0.0)
    p_t = list(p[1:])
    if not p_t:
        return [p_n]
    limit = mu * ad.value(p_n)
    mag = math.sqrt(sum(ad.value(t) ** 2 for t in p_t))
    if mag > limit:
        norm = ad.sqrt(la.dot(p_t, p_t)) if len(p_t) > 1 else ad.absolute(p_t[0])
        factor = mu * p_n / norm
        p_t = [t * factor for t in p_t]
    return [p_n, *p_t]


@dataclass
class ContactProblem:
    """Inputs of the modified Gauss-Seidel solve.

    ``G[j][k]`` is the Delassus block coupling contacts ``j`` and ``k``;
    ``c[j]`` is the contact-frame velocity the step reaches without impulses.
    """

    G: list
    c: list
    p: list
    d: list
    mu: list
    kappa: float | None = None
    n_iter: int = 8
    relaxation: str = "diagonal"
    tags: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.c)
        if not (len(self.G) == len(self.p) == len(self.d) == len(self.mu) == n):
            raise ValueError("G, c, p, d and mu must describe the same contacts")
        for j in range(n):
            m = len(self.c[j])
            if len(self.p[j]) != m or len(self.G[j]) != n:
                raise ValueError(f"inconsistent dimensions for contact {j}")
            for k in range(n):
                blk = self.G[j][k]
                if len(blk) != m or any(len(row) != len(self.c[k]) for row in blk):
                    raise ValueError(f"block G[{j}][{k}] has the wrong shape")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if not self.tags:
            self.tags = [str(j) for j in range(n)]

    def __len__(self) -> int:
        return len(self.c)


def activation_threshold(kappa) -> float:
    return HARD_ACTIVATION if kappa is None else SMOOTHED_ACTIVATION


def assemble_contact_problem(
    sys, q_mid, u, h, dt, cfg, contacts=None, chol=None, d_override=None
) -> ContactProblem:
    """Project the equations of motion onto the active contacts.

    ``G_jk = J_j M^-1 J_k^T`` and ``c_j = J_j (u + M^-1 h dt)``. Contacts enter
    when ``d >= 0`` (hard) or ``d >= -1 m`` (smoothed). ``d_override`` maps a
    contact tag to the gap handed to the solver instead of the midpoint gap.
    """
    kappa = cfg.smoothing
    if chol is None:
        chol = la.cholesky(sys.effective_mass_matrix(q_mid, cfg.effective_armature))
    if contacts is None:
        contacts = sys.contact_candidates(q_mid)
    d_override = d_override or {}
    threshold = activation_threshold(kappa)
    active = [c for c in contacts if c.tag in d_override or ad.value(c.d) >= threshold]

    u_free = la.add(u, la.scale(dt, la.cho_solve(chol, h)))
    rows = [c.rows for c in active]
    minv_rows = [[la.cho_solve(chol, r) for r in rr] for rr in rows]
    G = [
        [[[la.dot(ra, xb) for xb in minv_rows[k]] for ra in rows[j]] for k in range(len(active))]
        for j in range(len(active))
    ]
    c = [la.matvec(rr, u_free) for rr in rows]
    p = [[0.0] * len(rr) for rr in rows]
    d = [d_override.get(ct.tag, ct.d) for ct in active]
    mu = [cfg.mu if ct.mu is None else ct.mu for ct in active]
    return ContactProblem(
        G=G,
        c=c,
        p=p,
        d=d,
        mu=mu,
        kappa=kappa,
        n_iter=cfg.solver_iters,
        relaxation=cfg.relaxation,
        tags=[ct.tag for ct in active],
        rows=rows,
    )


def _lambda_max(A):
    n = len(A)
    if n == 1:
        return A[0][0]
    if n == 2:
        a, b, dd = A[0][0], A[0][1], A[1][1]
        half = (a - dd) * 0.5
        return (a + dd) * 0.5 + ad.sqrt(half * half + b * b)
    # larger blocks: step size only, treated as a constant
    return float(np.linalg.eigvalsh(np.array(la.values(A)))[-1])


def _relaxation(prob: ContactProblem, j: int):
    """Step size for contact ``j``: a scalar, or one entry per row.

    ``determinant`` sums determinants over the nonzero blocks of row ``j``; a
    non-square block (contacts of different dimension) has none and is skipped.
    """
    if prob.relaxation == "determinant":
        acc = 0.0
        for k in range(len(prob)):
            blk = prob.G[j][k]
            if len(blk) == len(blk[0]) and not la.is_zero_matrix(blk):
                acc = acc + la.det(blk)
        return 1.0 / (1.0 + acc)
    Gjj = prob.G[j][j]
    if prob.relaxation == "spectral":
        return 1.0 / _lambda_max(Gjj)
    if prob.relaxation == "diagonal":
        return [1.0 / Gjj[a][a] for a in range(len(Gjj))]
    raise ValueError(f"unknown relaxation {prob.relaxation!r}")


def solve_contacts(prob: ContactProblem) -> list:
    """Modified Gauss-Seidel iteration with sigmoid-weighted coupling.

    Runs exactly ``prob.n_iter`` sweeps. Inside a sweep, contact ``j`` sees the
    other contacts' impulses weighted by their activation ``sigmoid(d_k)``;
    after the last sweep every impulse is scaled by its own activation.
    """
    n = len(prob)
    if n == 0:
        return []
    weights = [sigmoid_weight(dk, prob.kappa) for dk in prob.d]
    coupled = [[k for k in range(n) if not la.is_zero_matrix(prob.G[j][k])] for j in range(n)]
    steps = [_relaxation(prob, j) for j in range(n)]
    p = [list(pj) for pj in prob.p]
    for it in range(prob.n_iter):
        for j in range(n):
            m = len(p[j])
            s = [0.0] * m
            for k in coupled[j]:
                contrib = la.matvec(prob.G[j][k], p[k])
                w = weights[k]
                if k != j and not (not ad.is_dvar(w) and w == 1.0):
                    contrib = la.scale(w, contrib)
                s = la.add(s, contrib)
            r = steps[j]
            if isinstance(r, list):
                cand = [p[j][a] - r[a] * (s[a] + prob.c[j][a]) for a in range(m)]
            else:
                cand = [p[j][a] - r * (s[a] + prob.c[j][a]) for a in range(m)]
            p[j] = prox_friction_cone(cand, prob.mu[j])
            if not all(math.isfinite(ad.value(x)) for x in p[j]):
                raise ContactSolverError(
                    f"non-finite impulse at iteration {it}, contact {prob.tags[j]}",
                    iteration=it,
                    contact=prob.tags[j],
                )
    out = []
    for j in range(n):
        w = weights[j]
        if not ad.is_dvar(w) and w == 1.0:
            out.append(p[j])
        else:
            out.append(la.scale(w, p[j]))
    return out


def toi_fraction(d_prev, d_now):
    """In-step impact fraction from a linear gap model, or ``None`` if undefined."""
    denom = d_prev - d_now
    if ad.value(denom) == 0.0:
        return None
    return d_prev / denom


def toi_correct(prev_state, state, contact, dt, d_prev, d_now, approach_velocity=None) -> list:
    """Re-integrate the coordinates touched by ``contact`` from the impact time.

    ``q' = q_prev + alpha dt u_pre + (1 - alpha) dt u_post`` on every
    coordinate with a nonzero normal-Jacobian entry. ``u_pre`` defaults to the
    previous velocity; velocities themselves are left alone.
    """
    alpha = toi_fraction(d_prev, d_now)
    q = list(state.q)
    if alpha is None:
        return q
    u_pre = prev_state.u if approach_velocity is None else approach_velocity
    for i, coeff in enumerate(contact.normal):
        if coeff == 0.0:
            continue
        q[i] = prev_state.q[i] + (alpha * dt) * u_pre[i] + ((1.0 - alpha) * dt) * state.u[i]
    return q
