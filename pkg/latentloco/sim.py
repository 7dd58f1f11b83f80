"""
Deterministic planar articulated rigid-body simulator.

Every state array carries a leading environment axis, a single robot is a
batch of one. One call to `PlanarSimulator.step` advances one control period
made of `decimation` physics sub-steps (semi-implicit Euler), with PD
actuation, a delayed target buffer and penalty ground contact.
"""

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .kinematics import ROOT_DOF


logger = logging.getLogger(__name__)


FRICTION_RANGE = (0.5, 2.2)
GAIN_RANGE = (0.75, 1.25)
DELAY_RANGE_MS = (20.0, 40.0)
PUSH_INTERVAL = 8.0
PUSH_VELOCITY = 0.5


class DelayError(ValueError):
    pass


@dataclass
class SimState:

    root_pos: np.ndarray
    pitch: np.ndarray
    root_vel: np.ndarray
    ang_vel: np.ndarray
    joint_pos: np.ndarray
    joint_vel: np.ndarray
    # per contact point: (tangential, normal) force in N.
    contact_forces: np.ndarray
    time: np.ndarray
    step_count: np.ndarray
    # commanded targets, most recent first.
    target_history: np.ndarray
    torques: np.ndarray
    saturated: np.ndarray

    @property
    def batch_size(self):
        return self.root_pos.shape[0]

    def generalized(self):
        q = np.concatenate(
            [self.root_pos, self.pitch[:, None], self.joint_pos], axis=-1)
        qd = np.concatenate(
            [self.root_vel, self.ang_vel[:, None], self.joint_vel], axis=-1)
        return q, qd

    def copy(self):
        return SimState(**{
            item.name: np.array(getattr(self, item.name), copy=True)
            for item in fields(self)
        })

    def select(self, ids):
        return SimState(**{
            item.name: np.array(getattr(self, item.name)[ids], copy=True)
            for item in fields(self)
        })

    def assign(self, ids, other):
        for item in fields(self):
            getattr(self, item.name)[ids] = getattr(other, item.name)

    def is_finite(self):
        return all(
            np.isfinite(getattr(self, name)).all()
            for name in ('root_pos', 'pitch', 'root_vel', 'ang_vel',
                         'joint_pos', 'joint_vel')
        )

    @classmethod
    def concatenate(cls, states):
        return cls(**{
            item.name: np.concatenate(
                [getattr(state, item.name) for state in states], axis=0)
            for item in fields(cls)
        })


@dataclass
class RandomizationDraw:

    friction: np.ndarray
    gain_multiplier: np.ndarray
    delay_ms: np.ndarray
    push_interval: np.ndarray
    push_velocity: np.ndarray
    push_seed: np.ndarray = field(default=None)

    @property
    def batch_size(self):
        return self.friction.shape[0]

    def select(self, ids):
        return RandomizationDraw(**{
            item.name: np.array(getattr(self, item.name)[ids], copy=True)
            for item in fields(self)
        })

    def assign(self, ids, other):
        for item in fields(self):
            getattr(self, item.name)[ids] = getattr(other, item.name)

    @classmethod
    def nominal(cls, count=1):
        return cls(
            friction=np.ones(count),
            gain_multiplier=np.ones(count),
            delay_ms=np.zeros(count),
            push_interval=np.full(count, np.inf),
            push_velocity=np.zeros(count),
            push_seed=np.zeros(count, dtype=np.int64),
        )


def draw_randomization(seed, count=1, enabled=True, pushes=True,
                       friction_range=FRICTION_RANGE, gain_range=GAIN_RANGE,
                       delay_range_ms=DELAY_RANGE_MS,
                       push_interval=PUSH_INTERVAL,
                       push_velocity=PUSH_VELOCITY):
    if not enabled:
        return RandomizationDraw.nominal(count)
    rng = np.random.default_rng(seed)
    friction = rng.uniform(*friction_range, size=count)
    gain = rng.uniform(*gain_range, size=count)
    delay = rng.uniform(*delay_range_ms, size=count)
    push_seed = rng.integers(0, 2 ** 31 - 1, size=count)
    if pushes:
        interval = np.full(count, float(push_interval))
        velocity = np.full(count, float(push_velocity))
    else:
        interval = np.full(count, np.inf)
        velocity = np.zeros(count)
    return RandomizationDraw(
        friction=friction,
        gain_multiplier=gain,
        delay_ms=delay,
        push_interval=interval,
        push_velocity=velocity,
        push_seed=push_seed,
    )


def delay_steps(delay_ms, dt):
    return np.rint(np.asarray(delay_ms) * 1e-3 / dt).astype(np.int64)


def history_length(max_delay_ms, dt):
    """Targets kept so that a delay of up to `max_delay_ms` can be served."""
    return int(delay_steps(max_delay_ms, dt)) + 1


def make_state(model, root_pos, pitch, root_vel, ang_vel, joint_pos,
               joint_vel, dt, max_delay_ms=DELAY_RANGE_MS[1]):
    root_pos = np.atleast_2d(np.asarray(root_pos, dtype=np.float64))
    batch = root_pos.shape[0]
    joint_pos = np.asarray(joint_pos, dtype=np.float64).reshape(batch, -1)
    joint_vel = np.asarray(joint_vel, dtype=np.float64).reshape(batch, -1)
    if joint_pos.shape[1] != model.joint_count:
        raise ValueError('State Has {} Joints, Model Has {}.'.format(
            joint_pos.shape[1], model.joint_count))
    contacts = len(model.contact_keypoints())
    history = np.repeat(joint_pos[:, None, :],
                        history_length(max_delay_ms, dt), axis=1)
    return SimState(
        root_pos=root_pos,
        pitch=np.asarray(pitch, dtype=np.float64).reshape(batch),
        root_vel=np.asarray(root_vel, dtype=np.float64).reshape(batch, 2),
        ang_vel=np.asarray(ang_vel, dtype=np.float64).reshape(batch),
        joint_pos=joint_pos,
        joint_vel=joint_vel,
        contact_forces=np.zeros((batch, contacts, 2)),
        time=np.zeros(batch),
        step_count=np.zeros(batch, dtype=np.int64),
        target_history=history,
        torques=np.zeros_like(joint_pos),
        saturated=np.zeros(joint_pos.shape, dtype=bool),
    )


def standing_state(model, dt, batch=1, x=0.0,
                   max_delay_ms=DELAY_RANGE_MS[1]):
    """Default pose with the lowest contact point resting on the ground."""
    pose = np.broadcast_to(model.default_pose, (batch, model.joint_count))
    root = np.zeros((batch, 2))
    root[:, 0] = x
    tree = model.tree
    q = tree.pack(root, np.zeros(batch), pose)
    points = tree.keypoints(tree.frames(q))
    contact = model.contact_keypoints() or list(range(model.keypoint_count))
    root[:, 1] = -points[:, contact, 1].min(axis=-1)
    return make_state(model, root, np.zeros(batch), np.zeros((batch, 2)),
                      np.zeros(batch), pose, np.zeros_like(pose), dt,
                      max_delay_ms)


def reset_from_reference(clip, phase, model, dt,
                         max_delay_ms=DELAY_RANGE_MS[1]):
    """State of `clip` at `phase` in [0, 1], interpolating between frames."""
    if clip.frame_count == 0:
        raise ValueError('Empty Clip.')
    frame = clip.interpolate(phase)
    return make_state(
        model,
        frame['root_pos'][None],
        frame['root_pitch'][None],
        frame['root_vel'][None],
        frame['root_ang_vel'][None],
        frame['joint_pos'][None],
        frame['joint_vel'][None],
        dt,
        max_delay_ms,
    )


def apply_push(state, draw, time):
    """
    At every multiple of the push interval add a planar velocity kick of the
    drawn magnitude, in a direction drawn from the environment's own stream.
    """
    time = np.broadcast_to(np.asarray(time, dtype=np.float64),
                           (state.batch_size,))
    interval = draw.push_interval
    with np.errstate(invalid='ignore', divide='ignore'):
        ratio = np.where(np.isfinite(interval) & (interval > 0),
                         time / interval, np.nan)
    index = np.rint(ratio)
    at_boundary = (np.abs(ratio - index) < 1e-9) & (index >= 1)
    at_boundary &= draw.push_velocity > 0
    if not at_boundary.any():
        return state
    result = state.copy()
    for env in np.flatnonzero(at_boundary):
        rng = np.random.default_rng([int(draw.push_seed[env]),
                                     int(index[env])])
        angle = rng.uniform(0.0, 2.0 * np.pi)
        result.root_vel[env] += draw.push_velocity[env] * np.array(
            [np.cos(angle), np.sin(angle)])
        logger.debug('push env=%d t=%.3f angle=%.3f', env, time[env], angle)
    return result


def compute_com_cop(state, model):
    """
    Ground-projected center of mass, and the center of pressure of the
    contact points, masked where no normal force acts.
    """
    tree = model.tree
    q, _ = state.generalized()
    frames = tree.frames(q)
    com = tree.center_of_mass(frames)
    com[:, 1] = 0.0
    contact = model.contact_keypoints()
    cop = np.zeros_like(com)
    absent = np.ones(state.batch_size, dtype=bool)
    if contact:
        points = tree.keypoints(frames)[:, contact, :]
        normal = np.clip(state.contact_forces[:, :, 1], 0.0, None)
        total = normal.sum(axis=-1)
        absent = total <= 0.0
        safe = np.where(absent, 1.0, total)
        cop[:, 0] = (normal * points[:, :, 0]).sum(axis=-1) / safe
    mask = np.repeat(absent[:, None], 2, axis=1)
    return com, np.ma.array(cop, mask=mask)


def mechanical_energy(state, model):
    tree = model.tree
    q, qd = state.generalized()
    return tree.kinetic_energy(q, qd) + tree.potential_energy(q)


class PlanarSimulator:

    def __init__(self, model, physics_dt, decimation=10,
                 contact_stiffness=2e4, contact_damping=2e2,
                 friction_damping=5e2):
        if physics_dt <= 0:
            raise ValueError('Physics Step Must Be Positive.')
        self.model = model
        self.tree = model.tree
        self.physics_dt = float(physics_dt)
        self.decimation = int(decimation)
        self.contact_stiffness = float(contact_stiffness)
        self.contact_damping = float(contact_damping)
        self.friction_damping = float(friction_damping)
        self.contact = model.contact_keypoints()
        self._lows, self._highs = model.joint_limits

    @property
    def dt(self):
        return self.physics_dt * self.decimation

    def _contact_forces(self, frames, qd, friction):
        tree = self.tree
        batch = qd.shape[0]
        generalized = np.zeros((batch, tree.dof))
        forces = np.zeros((batch, len(self.contact), 2))
        for c, k in enumerate(self.contact):
            link = tree.keypoint_links[k]
            point = tree.point(frames, link, tree.keypoint_offsets[k])
            jac = tree.point_jacobian(frames, link, point)
            vel = np.einsum('bkn,bn->bk', jac, qd)
            depth = -point[:, 1]
            normal = np.where(
                depth > 0,
                self.contact_stiffness * depth - self.contact_damping * vel[:, 1],
                0.0,
            )
            normal = np.clip(normal, 0.0, None)
            bound = friction * normal
            tangential = np.clip(-self.friction_damping * vel[:, 0],
                                 -bound, bound)
            force = np.stack([tangential, normal], axis=-1)
            forces[:, c] = force
            generalized += np.einsum('bkn,bk->bn', jac, force)
        return generalized, forces

    def step(self, state, target_joint_positions, draw, dt=None):
        """
        Advance one control period with `target_joint_positions` commanded
        now; the target applied is the one commanded `delay` ago.
        """
        dt = self.dt if dt is None else float(dt)
        if dt <= 0:
            raise ValueError('Control Step Must Be Positive.')
        targets = np.asarray(target_joint_positions, dtype=np.float64)
        targets = targets.reshape(state.batch_size, -1)
        if targets.shape[1] != self.model.joint_count:
            raise ValueError('Target Has {} Joints, Model Has {}.'.format(
                targets.shape[1], self.model.joint_count))
        if not np.isfinite(targets).all():
            raise ValueError('Non-Finite Joint Target.')

        result = state.copy()
        history = np.roll(result.target_history, 1, axis=1)
        history[:, 0] = targets
        result.target_history = history
        lag = delay_steps(draw.delay_ms, dt)
        if (lag >= history.shape[1]).any() or (lag < 0).any():
            raise DelayError(
                'Delay Of {} Steps Does Not Fit The {}-Step Target '
                'History.'.format(int(lag.max()), history.shape[1]))
        applied = history[np.arange(state.batch_size), lag]

        kp = self.model.kp * draw.gain_multiplier[:, None]
        kd = self.model.kd * draw.gain_multiplier[:, None]
        limits = self.model.torque_limits
        physics_dt = dt / self.decimation
        q, qd = result.generalized()

        for _ in range(self.decimation):
            joint_q = q[:, ROOT_DOF:]
            joint_qd = qd[:, ROOT_DOF:]
            raw = kp * (applied - joint_q) - kd * joint_qd
            torque = np.clip(raw, -limits, limits)
            frames, mass_matrix, bias, gravity = self.tree.dynamics_terms(
                q, qd)
            contact, forces = self._contact_forces(frames, qd, draw.friction)
            generalized = gravity - bias + contact
            generalized[:, ROOT_DOF:] += torque
            qdd = np.linalg.solve(mass_matrix, generalized[..., None])[..., 0]
            qd = qd + qdd * physics_dt
            q = q + qd * physics_dt
            # clamp joints into their limits.
            joint_q = q[:, ROOT_DOF:]
            clamped = np.clip(joint_q, self._lows, self._highs)
            outward = ((joint_q < self._lows) & (qd[:, ROOT_DOF:] < 0)) | (
                (joint_q > self._highs) & (qd[:, ROOT_DOF:] > 0))
            q[:, ROOT_DOF:] = clamped
            qd[:, ROOT_DOF:] = np.where(outward, 0.0, qd[:, ROOT_DOF:])

        result.root_pos = q[:, 0:2].copy()
        result.pitch = q[:, 2].copy()
        result.joint_pos = q[:, ROOT_DOF:].copy()
        result.root_vel = qd[:, 0:2].copy()
        result.ang_vel = qd[:, 2].copy()
        result.joint_vel = qd[:, ROOT_DOF:].copy()
        result.contact_forces = forces
        result.torques = torque
        result.saturated = np.abs(raw) >= limits
        result.step_count = state.step_count + 1
        result.time = result.step_count * dt
        return result

    def keypoints(self, state):
        q, _ = state.generalized()
        return self.tree.keypoints(self.tree.frames(q))
