"""
Tracking reward engine.

Task terms are w * exp(-|err|^2 / sigma^2) with |err|^2 the squared L2
norm over all of the term's channels. Penalty and regularization terms use
the weights as signed coefficients. The total is the sum of the breakdown terms, in
breakdown order.
"""

from collections import OrderedDict
from dataclasses import dataclass, fields

import numpy as np


TASK_TERMS = ('root_vel', 'root_vel_dir', 'root_ang_vel', 'keypoint',
              'feet', 'joint_pos', 'joint_vel')


@dataclass
class RewardWeights:

    root_vel: float = 10.0
    root_vel_dir: float = 6.0
    root_ang_vel: float = 1.0
    keypoint: float = 10.0
    feet: float = 12.0
    joint_pos: float = 6.0
    joint_vel: float = 6.0
    joint_limit: float = -10.0
    torque_limit: float = -5.0
    termination: float = -200.0
    joint_acc: float = -3e-7
    action_rate: float = -0.5
    feet_air_time: float = 10.0
    feet_contact_force: float = -0.003
    stumble: float = -2.0
    waist_error: float = -0.5
    ankle_action: float = -0.3
    joint_error: float = -0.1

    def task_total(self):
        return sum(getattr(self, name) for name in TASK_TERMS)

    @classmethod
    def from_mapping(cls, mapping):
        known = {item.name for item in fields(cls)}
        return cls(**{k: float(v) for k, v in mapping.items() if k in known})


@dataclass
class RewardKernels:

    root_vel: float = 0.5
    root_vel_dir: float = 0.5
    root_ang_vel: float = 0.5
    keypoint: float = 0.3
    feet: float = 0.5
    joint_pos: float = 0.5
    joint_vel: float = 0.5


@dataclass
class RewardSettings:

    air_time_target: float = 0.5
    contact_force_threshold: float = 350.0
    stumble_ratio: float = 5.0


class RewardContext:

    """
    Everything one batched reward evaluation needs. `reference` is a
    ReferenceBatch; keypoints are world positions (B, K, 2); foot arrays
    come from a FeetTracker.
    """

    def __init__(self, model, state, prev_state, action, prev_action,
                 reference, keypoints, terminated, dt,
                 first_contact=None, air_time=None):
        self.model = model
        self.state = state
        self.prev_state = prev_state
        self.action = np.asarray(action, dtype=np.float64)
        self.prev_action = np.asarray(prev_action, dtype=np.float64)
        self.reference = reference
        self.keypoints = keypoints
        self.terminated = np.asarray(terminated, dtype=bool)
        self.dt = dt
        feet = len(model.feet)
        batch = state.batch_size
        self.first_contact = (np.zeros((batch, feet), dtype=bool)
                              if first_contact is None else first_contact)
        self.air_time = (np.zeros((batch, feet))
                         if air_time is None else air_time)


def _square_norm(err):
    err = np.asarray(err, dtype=np.float64)
    return (err.reshape(err.shape[0], -1) ** 2).sum(axis=-1)


def _kernel(weight, sq_error, sigma):
    return weight * np.exp(-sq_error / sigma ** 2)


def _soft_direction(v, floor=0.1):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norm, floor)


def _foot_contacts(model, contact_forces):
    """Per-foot (tangential, normal) sums from per-point forces."""
    contacts = model.contact_keypoints()
    position = {k: c for c, k in enumerate(contacts)}
    per_foot = [contact_forces[:, [position[k] for k in points], :].sum(axis=1)
                for points in model.foot_points()]
    if not per_foot:
        return np.zeros(contact_forces.shape[:1] + (0, 2))
    return np.stack(per_foot, axis=1)


def compute_reward(ctx, weights=None, kernels=None, settings=None):
    weights = weights or RewardWeights()
    kernels = kernels or RewardKernels()
    settings = settings or RewardSettings()
    model, state, ref = ctx.model, ctx.state, ctx.reference
    terms = OrderedDict()

    # task
    terms['root_vel'] = _kernel(
        weights.root_vel, _square_norm(state.root_vel - ref.root_vel),
        kernels.root_vel)
    terms['root_vel_dir'] = _kernel(
        weights.root_vel_dir,
        _square_norm(_soft_direction(state.root_vel)
                     - _soft_direction(ref.root_vel)),
        kernels.root_vel_dir)
    terms['root_ang_vel'] = _kernel(
        weights.root_ang_vel,
        _square_norm((state.ang_vel - ref.root_ang_vel)[:, None]),
        kernels.root_ang_vel)
    terms['keypoint'] = _kernel(
        weights.keypoint, _square_norm(ctx.keypoints - ref.keypoints),
        kernels.keypoint)
    feet = model.contact_keypoints()
    if feet:
        feet_error = _square_norm(ctx.keypoints[:, feet]
                                  - ref.keypoints[:, feet])
    else:
        feet_error = np.zeros(state.batch_size)
    terms['feet'] = _kernel(weights.feet, feet_error, kernels.feet)
    terms['joint_pos'] = _kernel(
        weights.joint_pos, _square_norm(state.joint_pos - ref.joint_pos),
        kernels.joint_pos)
    terms['joint_vel'] = _kernel(
        weights.joint_vel, _square_norm(state.joint_vel - ref.joint_vel),
        kernels.joint_vel)

    # penalties
    lows, highs = model.joint_limits
    at_limit = (state.joint_pos <= lows) | (state.joint_pos >= highs)
    terms['joint_limit'] = weights.joint_limit * at_limit.sum(axis=-1)
    terms['torque_limit'] = weights.torque_limit * \
        np.asarray(state.saturated).sum(axis=-1)
    terms['termination'] = weights.termination * ctx.terminated

    # regularization
    joint_acc = (state.joint_vel - ctx.prev_state.joint_vel) / ctx.dt
    terms['joint_acc'] = weights.joint_acc * (joint_acc ** 2).sum(axis=-1)
    terms['action_rate'] = weights.action_rate * \
        ((ctx.action - ctx.prev_action) ** 2).sum(axis=-1)
    terms['feet_air_time'] = weights.feet_air_time * (
        (ctx.air_time - settings.air_time_target) * ctx.first_contact
    ).sum(axis=-1)
    per_foot = _foot_contacts(model, state.contact_forces)
    excess = np.clip(per_foot[..., 1] - settings.contact_force_threshold,
                     0.0, None)
    terms['feet_contact_force'] = weights.feet_contact_force * \
        excess.sum(axis=-1)
    stumbling = np.abs(per_foot[..., 0]) > \
        settings.stumble_ratio * np.abs(per_foot[..., 1])
    terms['stumble'] = weights.stumble * stumbling.any(axis=-1)
    terms['waist_error'] = weights.waist_error * \
        (state.pitch - ref.root_pitch) ** 2
    ankles = model.joints_matching('ankle')
    default = model.default_pose
    terms['ankle_action'] = weights.ankle_action * (
        (ctx.action[:, ankles] - default[ankles]) ** 2).sum(axis=-1)
    terms['joint_error'] = weights.joint_error * \
        ((state.joint_pos - ref.joint_pos) ** 2).sum(axis=-1)

    total = np.zeros(state.batch_size)
    for name in terms:
        terms[name] = np.asarray(terms[name], dtype=np.float64) * \
            np.ones(state.batch_size)
        total = total + terms[name]
    return total, terms


class FeetTracker:

    """Per-foot air time, reported once at touchdown."""

    def __init__(self, batch, feet, contact_threshold=1.0):
        self.air_time = np.zeros((batch, feet))
        self.in_contact = np.ones((batch, feet), dtype=bool)
        self.contact_threshold = contact_threshold

    def update(self, model, contact_forces, dt):
        normal = _foot_contacts(model, contact_forces)[..., 1]
        contact = normal > self.contact_threshold
        self.air_time += dt
        first_contact = contact & ~self.in_contact
        landed_after = self.air_time * first_contact
        self.air_time = np.where(contact, 0.0, self.air_time)
        self.in_contact = contact
        return first_contact, landed_after

    def reset(self, ids):
        self.air_time[ids] = 0.0
        self.in_contact[ids] = True
