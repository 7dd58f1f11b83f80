"""
Observation layouts.

One proprioceptive frame is, in order: joint positions (J), joint
velocities (J), last action (J), root angular velocity (roll, pitch, yaw
rates) and root orientation (roll, pitch, yaw), so 3J + 6 values. The planar
robot always writes zero into the roll and yaw slots.
"""

import numpy as np


HISTORY = 10


def proprio_width(joint_count):
    return 3 * joint_count + 6


def privileged_width(joint_count, keypoint_count):
    # joint difference, keypoint difference, true root velocity.
    return joint_count + 2 * keypoint_count + 3


def reference_width(joint_count, keypoint_count):
    # joint pos, keypoints, root lin vel, root ang vel, orientation, height.
    return joint_count + 2 * keypoint_count + 3 + 3 + 3 + 1


def _planar3(middle):
    """(roll, pitch, yaw)-style triplet with only the middle slot set."""
    middle = np.asarray(middle, dtype=np.float64)
    zeros = np.zeros_like(middle)
    return np.stack([zeros, middle, zeros], axis=-1)


def _linear3(planar):
    # (x, z) -> (x, y = 0, z)
    zeros = np.zeros(planar.shape[:-1])
    return np.stack([planar[..., 0], zeros, planar[..., 1]], axis=-1)


def proprio_frame(state, last_action):
    """(B, 3J + 6) proprioceptive frame of a batched state."""
    return np.concatenate([
        state.joint_pos,
        state.joint_vel,
        np.asarray(last_action, dtype=np.float64),
        _planar3(state.ang_vel),
        _planar3(state.pitch),
    ], axis=-1)


class ProprioHistory:

    """Batched window of the last `length` proprio frames, oldest first."""

    def __init__(self, batch, width, length=HISTORY):
        self.length = length
        self.width = width
        self.frames = np.zeros((batch, length, width))

    def push(self, frame):
        self.frames = np.roll(self.frames, -1, axis=1)
        self.frames[:, -1] = frame

    def reset(self, ids=None):
        if ids is None:
            self.frames[:] = 0.0
        else:
            self.frames[ids] = 0.0

    def stacked(self, last=None):
        frames = self.frames if last is None else self.frames[:, -last:]
        return frames.reshape(frames.shape[0], -1).copy()


class ReferenceBatch:

    """Reference frames of a batch of clips, clamped to each clip end."""

    def __init__(self, clips, frame_indices):
        frame_indices = np.asarray(frame_indices, dtype=np.int64)
        self.terminal = np.array([
            index >= clip.frame_count - 1
            for clip, index in zip(clips, frame_indices)
        ])
        frames = [clip.frame(index) for clip, index in
                  zip(clips, frame_indices)]
        for name in ('root_pos', 'root_pitch', 'root_vel', 'root_ang_vel',
                     'joint_pos', 'joint_vel', 'keypoints'):
            setattr(self, name, np.stack([frame[name] for frame in frames]))
        self.frame_indices = np.minimum(
            frame_indices,
            np.array([clip.frame_count - 1 for clip in clips]),
        )

    @property
    def batch_size(self):
        return self.root_pos.shape[0]


class ObservationBundle:

    def __init__(self, proprio, privileged, reference, terminal):
        self.proprio = proprio
        self.privileged = privileged
        self.reference = reference
        self.terminal = terminal

    def teacher_input(self):
        return np.concatenate(
            [self.proprio, self.privileged, self.reference], axis=-1)

    def __repr__(self):
        return 'ObservationBundle(proprio={}, privileged={}, reference={})' \
            .format(self.proprio.shape[-1], self.privileged.shape[-1],
                    self.reference.shape[-1])


def privileged_block(state, keypoints, reference):
    batch = state.batch_size
    return np.concatenate([
        state.joint_pos - reference.joint_pos,
        (keypoints - reference.keypoints).reshape(batch, -1),
        _linear3(state.root_vel),
    ], axis=-1)


def reference_block(reference):
    batch = reference.batch_size
    relative = reference.keypoints.copy()
    relative[:, :, 0] -= reference.root_pos[:, None, 0]
    return np.concatenate([
        reference.joint_pos,
        relative.reshape(batch, -1),
        _linear3(reference.root_vel),
        _planar3(reference.root_ang_vel),
        _planar3(reference.root_pitch),
        reference.root_pos[:, 1:2],
    ], axis=-1)


def build_observations(history, state, keypoints, reference):
    """
    Teacher observation: the last HISTORY proprio frames, privileged
    differences to the reference frame, and the reference frame itself.
    `history` must already hold the current frame.
    """
    return ObservationBundle(
        proprio=history.stacked(HISTORY),
        privileged=privileged_block(state, keypoints, reference),
        reference=reference_block(reference),
        terminal=reference.terminal.copy(),
    )


def teacher_input_width(joint_count, keypoint_count):
    return (HISTORY * proprio_width(joint_count)
            + privileged_width(joint_count, keypoint_count)
            + reference_width(joint_count, keypoint_count))
