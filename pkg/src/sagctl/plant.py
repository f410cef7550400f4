"""Deterministic discrete-time test plants with injectable parameter shifts.

Three plants are provided:

* ``Pendulum``   -- inverted pendulum, one torque input, upright at q=0.
* ``CartPole``   -- cart with an inverted point-mass pole, one force input.
* ``Wheeled``    -- planar unicycle with first-order velocity dynamics,
  two inputs (drive force, yaw torque).

All plants advance with semi-implicit (symplectic) Euler: velocities are
updated from the accelerations at the current configuration, then positions
are advanced with the *new* velocities.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConfigError",
    "NumericalBlowup",
    "PlantState",
    "PlantParams",
    "ShiftSpec",
    "ReferenceSignal",
    "ReferenceConfig",
    "Plant",
    "Pendulum",
    "CartPole",
    "Wheeled",
    "make_plant",
    "apply_shift",
    "reward",
    "reference",
    "SHIFT_FAMILIES",
]

SHIFT_FAMILIES = ("actuator", "mass", "friction", "sign_flip")


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class NumericalBlowup(FloatingPointError):
    """Raised when a state, action or weight stops being finite."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message)


@dataclass(frozen=True)
class PlantState:
    q: np.ndarray
    qdot: np.ndarray
    t: int = 0

    def as_vector(self):
        return np.concatenate([self.q, self.qdot])


@dataclass(frozen=True)
class PlantParams:
    """Physical parameter vector of a plant.

    ``actuator_scale`` and ``mass_scale`` are multiplicative factors with
    nominal value 1. ``friction`` is an absolute coefficient in the plant's
    own units. ``channel_sign`` holds a +/-1 per input channel and is only
    touched by the ``sign_flip`` family.
    """

    actuator_scale: float = 1.0
    mass_scale: float = 1.0
    friction: float = 0.0
    channel_sign: tuple = ()

    def __post_init__(self):
        if not self.actuator_scale >= 0.0 or not math.isfinite(self.actuator_scale):
            raise ConfigError(f"actuator_scale must be finite and >= 0, got {self.actuator_scale}")
        if not self.mass_scale > 0.0 or not math.isfinite(self.mass_scale):
            raise ConfigError(f"mass_scale must be finite and > 0, got {self.mass_scale}")
        if not self.friction >= 0.0 or not math.isfinite(self.friction):
            raise ConfigError(f"friction must be finite and >= 0, got {self.friction}")


@dataclass(frozen=True)
class ShiftSpec:
    family: str
    severity: float
    fault_step: int = 500
    channel: int = 0

    def __post_init__(self):
        if not self.severity > 0.0:
            raise ConfigError(f"shift severity must be > 0, got {self.severity}")
        if self.fault_step < 0:
            raise ConfigError(f"fault_step must be >= 0, got {self.fault_step}")


@dataclass(frozen=True)
class ReferenceSignal:
    q_ref: np.ndarray
    qdot_ref: np.ndarray


@dataclass(frozen=True)
class ReferenceConfig:
    """Constant or sinusoidal setpoint on the tracked coordinates.

    With ``period`` set, each tracked position follows
    ``offset + amplitude * sin(2*pi*t*dt/period)``; for the wheeled plant
    the same shape is applied to the commanded velocities instead.
    """

    offset: tuple = ()
    amplitude: tuple = ()
    period: float | None = None
    dt: float = 0.01


def apply_shift(params: PlantParams, shift: ShiftSpec) -> PlantParams:
    if shift.family == "actuator":
        return dataclasses.replace(params, actuator_scale=params.actuator_scale * shift.severity)
    if shift.family == "mass":
        return dataclasses.replace(params, mass_scale=params.mass_scale * shift.severity)
    if shift.family == "friction":
        return dataclasses.replace(params, friction=params.friction * shift.severity)
    if shift.family == "sign_flip":
        signs = list(params.channel_sign)
        if not 0 <= shift.channel < len(signs):
            raise ConfigError(f"sign_flip channel {shift.channel} out of range for {len(signs)} inputs")
        signs[shift.channel] = -signs[shift.channel]
        return dataclasses.replace(params, channel_sign=tuple(signs))
    raise ConfigError(f"unknown shift family {shift.family!r}; expected one of {SHIFT_FAMILIES}")


def reference(t: int, config: ReferenceConfig, n_tracked: int, velocity_reference=False) -> ReferenceSignal:
    """Reference at step ``t``.

    Position references come with their analytic time derivative. With
    ``velocity_reference`` the offset/amplitude describe commanded
    velocities and the position reference is identically zero.
    """
    if t < 0:
        raise ConfigError(f"reference step must be >= 0, got {t}")
    off = np.zeros(n_tracked) if len(config.offset) == 0 else np.asarray(config.offset, dtype=float)
    amp = np.zeros(n_tracked) if len(config.amplitude) == 0 else np.asarray(config.amplitude, dtype=float)
    if config.period is None:
        shape, dshape = 0.0, 0.0
    else:
        w = 2.0 * math.pi / config.period
        # reduce the phase modulo one period so t and t + period agree bitwise
        steps_per_period = config.period / config.dt
        if float(steps_per_period).is_integer():
            phase = w * config.dt * (t % int(steps_per_period))
        else:
            phase = w * config.dt * t
        shape, dshape = math.sin(phase), w * math.cos(phase)
    if velocity_reference:
        return ReferenceSignal(np.zeros(n_tracked), off + amp * shape)
    return ReferenceSignal(off + amp * shape, amp * dshape)


def reward(state_err: np.ndarray, action: np.ndarray, weights: np.ndarray, action_cost: float) -> float:
    """Bounded tracking reward ``exp(-sum w_i err_i^2) - c_a |a|^2``.

    ``state_err`` stacks position and velocity tracking errors, ``weights``
    has the same length.
    """
    err = np.asarray(state_err, dtype=float)
    act = np.asarray(action, dtype=float)
    if not (np.all(np.isfinite(err)) and np.all(np.isfinite(act))):
        raise NumericalBlowup("non-finite input to reward")
    return math.exp(-float(np.dot(weights, err * err))) - action_cost * float(np.dot(act, act))


class Plant:
    """Base class; subclasses define ``accel`` or override ``step``."""

    name = "plant"
    n_q = 1
    n_u = 1
    # tracked coordinates default to (q, qdot)
    n_tracked = 1
    velocity_reference = False

    def __init__(self, friction=0.0):
        self.friction = float(friction)

    def nominal_params(self) -> PlantParams:
        return PlantParams(1.0, 1.0, self.friction, (1.0,) * self.n_u)

    def equilibrium(self) -> PlantState:
        return PlantState(np.zeros(self.n_q), np.zeros(self.n_q), 0)

    def effective_action(self, action, params):
        act = np.asarray(action, dtype=float)
        sign = np.asarray(params.channel_sign, dtype=float) if params.channel_sign else 1.0
        return params.actuator_scale * sign * act

    def accel(self, q, qdot, force, params):
        raise NotImplementedError

    def step(self, state: PlantState, action, params: PlantParams, dt: float) -> PlantState:
        action = np.asarray(action, dtype=float)
        if action.shape != (self.n_u,):
            raise ConfigError(f"{self.name}: expected action of shape ({self.n_u},), got {action.shape}")
        if not dt > 0:
            raise ConfigError(f"dt must be > 0, got {dt}")
        if not np.all(np.isfinite(action)):
            raise NumericalBlowup("numerical blowup: non-finite action", state.t)
        force = self.effective_action(action, params)
        qdd = self.accel(state.q, state.qdot, force, params)
        qdot = state.qdot + dt * qdd
        q = state.q + dt * qdot
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise NumericalBlowup("numerical blowup: non-finite state", state.t)
        return PlantState(q, qdot, state.t + 1)

    def tracked(self, state: PlantState):
        return state.q, state.qdot

    def derivative(self, s, force, params):
        """Continuous-time vector field on ``(q, qdot)`` for integrator checks."""
        q, qdot = s[: self.n_q], s[self.n_q:]
        return np.concatenate([qdot, self.accel(q, qdot, force, params)])


class Pendulum(Plant):
    """Inverted pendulum, ``m l^2 qdd = m g l sin q - b qdot + tau``."""

    name = "pendulum"
    n_q = n_u = n_tracked = 1

    def __init__(self, mass=1.0, length=1.0, gravity=9.81, friction=0.1):
        super().__init__(friction)
        self.mass, self.length, self.gravity = float(mass), float(length), float(gravity)

    def accel(self, q, qdot, force, params):
        m = self.mass * params.mass_scale
        l = self.length
        return (m * self.gravity * l * np.sin(q) - params.friction * qdot + force) / (m * l * l)

    def energy(self, state, params):
        m = self.mass * params.mass_scale
        l = self.length
        return 0.5 * m * l * l * float(state.qdot[0]) ** 2 + m * self.gravity * l * math.cos(float(state.q[0]))


class CartPole(Plant):
    """Cart of mass M with a point mass m on a massless rod of length l.

    Coordinates ``q = (x, theta)``, theta = 0 upright and positive when the
    pole leans towards +x. Viscous friction ``b`` acts on the cart.
    """

    name = "cartpole"
    n_q = n_tracked = 2
    n_u = 1

    def __init__(self, cart_mass=1.0, pole_mass=0.1, length=0.5, gravity=9.81, friction=0.1):
        super().__init__(friction)
        self.cart_mass = float(cart_mass)
        self.pole_mass = float(pole_mass)
        self.length = float(length)
        self.gravity = float(gravity)

    def accel(self, q, qdot, force, params):
        M = self.cart_mass * params.mass_scale
        m = self.pole_mass * params.mass_scale
        l, g = self.length, self.gravity
        th, thd = q[1], qdot[1]
        s, c = math.sin(th), math.cos(th)
        F = float(force[0]) - params.friction * qdot[0]
        # (M+m) xdd + m l c thdd = F + m l s thd^2
        #      c xdd +     l thdd = g s
        a11, a12, a21, a22 = M + m, m * l * c, c, l
        b1 = F + m * l * s * thd * thd
        b2 = g * s
        det = a11 * a22 - a12 * a21
        xdd = (b1 * a22 - a12 * b2) / det
        thdd = (a11 * b2 - a21 * b1) / det
        return np.array([xdd, thdd])


class Wheeled(Plant):
    """Planar unicycle with velocity dynamics.

    Pose ``q = (x, y, heading)``; body velocities ``qdot = (v, omega)``.
    ``m vdot = F - b v`` and ``I omegadot = T - b omega``. Only the body
    velocities are tracked.
    """

    name = "wheeled"
    n_q = 3
    n_u = n_tracked = 2
    velocity_reference = True

    def __init__(self, mass=4.0, inertia=0.5, friction=2.0):
        super().__init__(friction)
        self.mass, self.inertia = float(mass), float(inertia)

    def equilibrium(self):
        return PlantState(np.zeros(3), np.zeros(2), 0)

    def accel(self, q, qdot, force, params):
        m = self.mass * params.mass_scale
        inertia = self.inertia * params.mass_scale
        return np.array([
            (force[0] - params.friction * qdot[0]) / m,
            (force[1] - params.friction * qdot[1]) / inertia,
        ])

    def step(self, state, action, params, dt):
        action = np.asarray(action, dtype=float)
        if action.shape != (2,):
            raise ConfigError(f"wheeled: expected action of shape (2,), got {action.shape}")
        if not dt > 0:
            raise ConfigError(f"dt must be > 0, got {dt}")
        if not np.all(np.isfinite(action)):
            raise NumericalBlowup("numerical blowup: non-finite action", state.t)
        vel = state.qdot + dt * self.accel(state.q, state.qdot, self.effective_action(action, params), params)
        heading = state.q[2] + dt * vel[1]
        q = np.array([
            state.q[0] + dt * vel[0] * math.cos(heading),
            state.q[1] + dt * vel[0] * math.sin(heading),
            heading,
        ])
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(vel))):
            raise NumericalBlowup("numerical blowup: non-finite state", state.t)
        return PlantState(q, vel, state.t + 1)

    def tracked(self, state):
        return np.zeros(2), state.qdot

    def derivative(self, s, force, params):
        x, y, th, v, w = s
        acc = self.accel(s[:3], s[3:], force, params)
        return np.array([v * math.cos(th), v * math.sin(th), w, acc[0], acc[1]])


PLANTS = {"pendulum": Pendulum, "cartpole": CartPole, "wheeled": Wheeled}


def make_plant(name: str, **constants) -> Plant:
    try:
        cls = PLANTS[name]
    except KeyError:
        raise ConfigError(f"unknown plant {name!r}; expected one of {sorted(PLANTS)}") from None
    return cls(**constants)
