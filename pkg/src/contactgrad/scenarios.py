"""Built-in desk-scale scenarios.

All contacts are point/plane contacts against a ground plane at height 0, so
gaps are linear in q and Jacobian rows are constant. Heights are measured at
the lowest point of each body, hence a gap is simply ``d = -height``.

==================  ====  ======================================================
name                DoF   coordinates
==================  ====  ======================================================
falling-sphere-1d   1     height h
two-spheres-1d      2     heights h1, h2 (independent bodies)
sliding-box-2d      2     horizontal x, height z
hopper-2d           2     body height z_b, leg length l (foot at z_b - l)
bouncing-sphere-3d  3     x, height y, spin angle theta (planar)
==================  ====  ======================================================
"""

from __future__ import annotations

import math
from importlib import resources
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .dynamics import ContactPoint, GeneralizedState, SystemModel

# actuator limit for the hopper leg, N
HOPPER_FORCE_LIMIT = 20.0


def _action_vector(action, n):
    if action is None:
        return [0.0] * n
    if isinstance(action, (int, float, ad.DVar)):
        return [action] + [0.0] * (n - 1)
    return list(action)


class FallingSphere(SystemModel):
    """Point-like sphere on a vertical line: ``M = [m]``, ``h = [-m g + a]``."""

    n_dof = 1
    contact_tags = ("ground",)

    def __init__(self, mass: float = 1.0, mu: float | None = None):
        self.mass = mass
        self.mu = mu

    def mass_matrix(self, q):
        return [[self.mass]]

    def bias_force(self, q, u, action, gravity):
        a = _action_vector(action, 1)
        return [-self.mass * gravity + a[0]]

    def contact_candidates(self, q):
        return [ContactPoint(d=-q[0], normal=(1.0,), mu=self.mu, tag="ground")]

    def potential(self, q, gravity):
        return self.mass * gravity * q[0]


class TwoSpheres(SystemModel):
    """Two spheres falling side by side; inertia is block diagonal."""

    n_dof = 2
    contact_tags = ("sphere1", "sphere2")

    def __init__(self, m1: float = 1.0, m2: float = 1.0):
        self.masses = (m1, m2)

    def mass_matrix(self, q):
        return [[self.masses[0], 0.0], [0.0, self.masses[1]]]

    def bias_force(self, q, u, action, gravity):
        a = _action_vector(action, 2)
        return [-m * gravity + ai for m, ai in zip(self.masses, a)]

    def contact_candidates(self, q):
        return [
            ContactPoint(d=-q[0], normal=(1.0, 0.0), tag="sphere1"),
            ContactPoint(d=-q[1], normal=(0.0, 1.0), tag="sphere2"),
        ]

    def potential(self, q, gravity):
        return sum(m * gravity * qi for m, qi in zip(self.masses, q))


class SlidingBox(SystemModel):
    """Box translating in the vertical plane with one Coulomb contact."""

    n_dof = 2
    contact_tags = ("ground",)

    def __init__(self, mass: float = 1.0, mu: float | None = None):
        self.mass = mass
        self.mu = mu

    def mass_matrix(self, q):
        return [[self.mass, 0.0], [0.0, self.mass]]

    def bias_force(self, q, u, action, gravity):
        a = _action_vector(action, 2)
        return [a[0], -self.mass * gravity + a[1]]

    def contact_candidates(self, q):
        return [
            ContactPoint(d=-q[1], normal=(0.0, 1.0), tangents=((1.0, 0.0),), mu=self.mu, tag="ground")
        ]

    def potential(self, q, gravity):
        return self.mass * gravity * q[1]


class Hopper(SystemModel):
    """Body on a springy prismatic leg with a point foot.

    With ``z_f = z_b - l`` the kinetic energy is
    ``m_b zb'^2 / 2 + m_f (zb' - l')^2 / 2``, so
    ``M = [[m_b + m_f, -m_f], [-m_f, m_f]]``. The leg force
    ``k (l0 - l) - c l' + a`` acts on the leg coordinate; the scalar action
    ``a`` is clamped to the actuator limit.
    """

    n_dof = 2
    armature_dofs = (1,)
    contact_tags = ("foot",)

    def __init__(
        self,
        body_mass: float = 1.0,
        foot_mass: float = 0.5,
        leg_stiffness: float = 400.0,
        leg_damping: float = 4.0,
        rest_length: float = 0.4,
        force_limit: float = HOPPER_FORCE_LIMIT,
        mu: float | None = None,
    ):
        self.body_mass = body_mass
        self.foot_mass = foot_mass
        self.leg_stiffness = leg_stiffness
        self.leg_damping = leg_damping
        self.rest_length = rest_length
        self.force_limit = force_limit
        self.mu = mu

    def mass_matrix(self, q):
        mb, mf = self.body_mass, self.foot_mass
        return [[mb + mf, -mf], [-mf, mf]]

    def leg_force(self, q, u, action):
        a = 0.0
        if action is not None:
            a = action[0] if isinstance(action, (list, tuple)) else action
            a = ad.maximum(ad.minimum(a, self.force_limit), -self.force_limit)
        return self.leg_stiffness * (self.rest_length - q[1]) - self.leg_damping * u[1] + a

    def bias_force(self, q, u, action, gravity):
        mb, mf = self.body_mass, self.foot_mass
        return [-(mb + mf) * gravity, mf * gravity + self.leg_force(q, u, action)]

    def contact_candidates(self, q):
        return [ContactPoint(d=q[1] - q[0], normal=(1.0, -1.0), mu=self.mu, tag="foot")]

    def potential(self, q, gravity):
        mb, mf = self.body_mass, self.foot_mass
        stretch = q[1] - self.rest_length
        return mb * gravity * q[0] + mf * gravity * (q[0] - q[1]) + 0.5 * self.leg_stiffness * stretch * stretch


class PlanarSphere(SystemModel):
    """Sphere in the vertical plane with spin; friction couples x and spin.

    The contact point slides with ``v_t = x' + r theta'``.
    """

    n_dof = 3
    armature_dofs = (2,)
    contact_tags = ("ground",)

    def __init__(self, mass: float = 1.0, radius: float = 0.1, mu: float | None = None):
        self.mass = mass
        self.radius = radius
        self.inertia = 0.4 * mass * radius * radius
        self.mu = mu

    def mass_matrix(self, q):
        m = self.mass
        return [[m, 0.0, 0.0], [0.0, m, 0.0], [0.0, 0.0, self.inertia]]

    def bias_force(self, q, u, action, gravity):
        a = _action_vector(action, 3)
        return [a[0], -self.mass * gravity + a[1], a[2]]

    def contact_candidates(self, q):
        return [
            ContactPoint(
                d=-q[1],
                normal=(0.0, 1.0, 0.0),
                tangents=((1.0, 0.0, self.radius),),
                mu=self.mu,
                tag="ground",
            )
        ]

    def potential(self, q, gravity):
        return self.mass * gravity * q[1]


@dataclass
class Scenario:
    name: str
    system: SystemModel
    initial_state: GeneralizedState
    episode_length: float
    params: dict = field(default_factory=dict)
    analytic_oracle: Callable | None = None
    # draws a random initial state inside the scenario's validity range
    sample_initial: Callable | None = None
    description: str = ""
    # coordinate swept as "initial height" and read back as final height/velocity
    height_index: int = 0

    def with_initial(self, q, u) -> Scenario:
        return Scenario(
            self.name,
            self.system,
            GeneralizedState(q, u),
            self.episode_length,
            self.params,
            self.analytic_oracle,
            self.sample_initial,
            self.description,
            self.height_index,
        )

    def with_height(self, h) -> GeneralizedState:
        """Initial state with the height coordinate replaced by ``h``."""
        q = list(self.initial_state.q)
        q[self.height_index] = h
        return GeneralizedState(q, self.initial_state.u)


def falling_sphere_oracle(h0: float, v0: float, t: float, gravity: float = 9.81):
    """Continuous-time inelastic drop: (height, velocity) at time ``t``."""
    # first time the height reaches zero
    disc = v0 * v0 + 2.0 * gravity * h0
    if h0 <= 0.0:
        t_c = 0.0
    else:
        t_c = (v0 + math.sqrt(disc)) / gravity
    if t < t_c:
        return h0 + v0 * t - 0.5 * gravity * t * t, v0 - gravity * t
    return 0.0, 0.0


def impact_time(h0: float, v0: float = 0.0, gravity: float = 9.81) -> float:
    if h0 <= 0.0:
        return 0.0
    return (v0 + math.sqrt(v0 * v0 + 2.0 * gravity * h0)) / gravity


def _merge(defaults: dict, overrides: dict | None) -> dict:
    p = dict(defaults)
    for k, v in (overrides or {}).items():
        if k not in p:
            raise KeyError(f"unknown scenario parameter {k!r}")
        p[k] = float(v)
    return p


def _mu(p):
    return None if p.get("mu", -1.0) < 0 else p["mu"]


def falling_sphere_1d(overrides: dict | None = None) -> Scenario:
    p = _merge({"mass": 1.0, "h0": 1.0, "v0": 0.0, "T": 0.5}, overrides)

    def sample(rng):
        return GeneralizedState((rng.uniform(0.1, 2.0),), (rng.uniform(-1.0, 1.0),))

    return Scenario(
        "falling-sphere-1d",
        FallingSphere(p["mass"]),
        GeneralizedState((p["h0"],), (p["v0"],)),
        p["T"],
        p,
        analytic_oracle=falling_sphere_oracle,
        sample_initial=sample,
        description="M=[m], h=[-m g], one ground contact with J_n=[1], d=-h",
    )


def two_spheres_1d(overrides: dict | None = None) -> Scenario:
    p = _merge({"m1": 1.0, "m2": 1.0, "h1": 1.0, "delta": 0.05, "T": 0.7}, overrides)

    def sample(rng):
        return GeneralizedState(tuple(rng.uniform(0.2, 1.5, 2)), tuple(rng.uniform(-1.0, 1.0, 2)))

    def oracle(h0, v0, t, gravity=9.81):
        return tuple(falling_sphere_oracle(h, v, t, gravity) for h, v in zip(h0, v0))

    return Scenario(
        "two-spheres-1d",
        TwoSpheres(p["m1"], p["m2"]),
        GeneralizedState((p["h1"], p["h1"] + p["delta"]), (0.0, 0.0)),
        p["T"],
        p,
        analytic_oracle=oracle,
        sample_initial=sample,
        description="two decoupled falling spheres; both come to rest at d=0 in continuous time",
    )


def sliding_box_2d(overrides: dict | None = None) -> Scenario:
    p = _merge({"mass": 1.0, "z0": 0.05, "vx0": 1.0, "mu": -1.0, "T": 0.5}, overrides)

    def sample(rng):
        return GeneralizedState((0.0, rng.uniform(0.0, 0.2)), (rng.uniform(-1.5, 1.5), rng.uniform(-0.5, 0.5)))

    return Scenario(
        "sliding-box-2d",
        SlidingBox(p["mass"], _mu(p)),
        GeneralizedState((0.0, p["z0"]), (p["vx0"], 0.0)),
        p["T"],
        p,
        sample_initial=sample,
        description="box dropped with horizontal velocity; Coulomb stick-slip",
        height_index=1,
    )


def hopper_2d(overrides: dict | None = None) -> Scenario:
    p = _merge(
        {
            "body_mass": 1.0,
            "foot_mass": 0.5,
            "leg_stiffness": 400.0,
            "leg_damping": 4.0,
            "rest_length": 0.4,
            "drop": 0.1,
            "T": 1.0,
            "mu": -1.0,
        },
        overrides,
    )
    system = Hopper(
        p["body_mass"], p["foot_mass"], p["leg_stiffness"], p["leg_damping"], p["rest_length"], mu=_mu(p)
    )
    l0 = p["rest_length"]

    def sample(rng):
        drop = rng.uniform(0.0, 0.15)
        l = l0 + rng.uniform(-0.05, 0.05)
        return GeneralizedState((l + drop, l), (rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)))

    return Scenario(
        "hopper-2d",
        system,
        GeneralizedState((l0 + p["drop"], l0), (0.0, 0.0)),
        p["T"],
        p,
        sample_initial=sample,
        description="actuated springy leg; foot contact gap d = l - z_b",
    )


def bouncing_sphere_3d(overrides: dict | None = None) -> Scenario:
    p = _merge(
        {"mass": 1.0, "radius": 0.1, "y0": 0.6, "vx0": 1.0, "vy0": 0.0, "spin0": 0.0, "mu": -1.0, "T": 0.6},
        overrides,
    )

    def sample(rng):
        return GeneralizedState(
            (0.0, rng.uniform(0.1, 1.0), 0.0),
            (rng.uniform(-2.0, 2.0), rng.uniform(-1.0, 1.0), rng.uniform(-5.0, 5.0)),
        )

    return Scenario(
        "bouncing-sphere-3d",
        PlanarSphere(p["mass"], p["radius"], _mu(p)),
        GeneralizedState((0.0, p["y0"], 0.0), (p["vx0"], p["vy0"], p["spin0"])),
        p["T"],
        p,
        sample_initial=sample,
        description="planar sphere (x, y, spin) thrown onto the ground; friction spins it up",
        height_index=1,
    )


BUILDERS = {
    "falling-sphere-1d": falling_sphere_1d,
    "two-spheres-1d": two_spheres_1d,
    "sliding-box-2d": sliding_box_2d,
    "hopper-2d": hopper_2d,
    "bouncing-sphere-3d": bouncing_sphere_3d,
}


def builtin_scenarios() -> list[Scenario]:
    return [build() for build in BUILDERS.values()]


def get_scenario(name: str, overrides: dict | None = None) -> Scenario:
    try:
        build = BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(BUILDERS)}") from None
    return build(overrides)


def scenario_from_config(cfg) -> Scenario:
    return get_scenario(cfg.scenario, cfg.params)


def load_hopper_actions(dt: float, horizon: float | None = None) -> list[list[float]]:
    """Stored hopper leg-force sequence resampled to step ``dt`` by zero-order hold.

    The file holds ``time, force`` rows; each row's force applies from its
    time stamp until the next row. ``horizon`` defaults to the file's span.
    """
    text = resources.files(__package__).joinpath("data/hopper_actions.csv").read_text()
    rows = [line.split(",") for line in text.splitlines() if line and not line.startswith(("#", "time"))]
    times = [float(r[0]) for r in rows]
    forces = [float(r[1]) for r in rows]
    span = times[-1] + (times[1] - times[0] if len(times) > 1 else dt)
    horizon = span if horizon is None else horizon
    n = round(horizon / dt)
    out = []
    j = 0
    for k in range(n):
        t = k * dt + 1e-12
        while j + 1 < len(times) and times[j + 1] <= t:
            j += 1
        out.append([forces[j]])
    return out


def random_initial_states(scenario: Scenario, n: int, seed: int) -> list[GeneralizedState]:
    rng = np.random.default_rng(seed)
    return [scenario.sample_initial(rng) for _ in range(n)]
