"""
Motion corpus toolkit.

Reference clips are synthesized from parametric motion families, stored in
the GLOC container, filtered by a CoM/CoP stability rule, normalized and
split. Frame data is kept as float32 in memory so that a saved clip reloads
bit-identically.
"""

import configparser
import logging
import math
import os
import struct
from collections import OrderedDict

import numpy as np
import torch
from torch import nn


logger = logging.getLogger(__name__)


MAGIC = b'GLOC'
FORMAT_VERSION = 1
KIND_CLIP = 0
KIND_LATENT = 1

STD_FLOOR = 1e-6


class ClipFormatError(ValueError):
    pass


class BadFormatError(ClipFormatError):
    pass


class VersionMismatchError(ClipFormatError):
    pass


class TruncatedFileError(ClipFormatError):
    pass


class DimensionError(ClipFormatError):
    pass


class UnknownFamilyError(KeyError):
    pass


class UnknownLabelError(KeyError):

    def __init__(self, phrase, nearest):
        self.phrase = phrase
        self.nearest = list(nearest)
        super().__init__(
            'Unknown Label {!r}, Nearest: {}.'.format(
                phrase, ', '.join(self.nearest) or '-'),
        )


class MotionClip:

    """
    A reference trajectory sampled at `frame_rate`.

    Arrays (F frames, J joints, K keypoints): root_pos (F, 2) as (x, z),
    root_pitch (F,), root_vel (F, 2), root_ang_vel (F,), joint_pos (F, J),
    joint_vel (F, J) and keypoints (F, K, 2) in world coordinates.
    """

    ARRAYS = ('root_pos', 'root_pitch', 'root_vel', 'root_ang_vel',
              'joint_pos', 'joint_vel', 'keypoints')

    def __init__(self, frame_rate, root_pos, root_pitch, root_vel,
                 root_ang_vel, joint_pos, joint_vel, keypoints,
                 label='', clip_id='', family=''):
        self.frame_rate = float(frame_rate)
        self.root_pos = np.asarray(root_pos, dtype=np.float32)
        self.root_pitch = np.asarray(root_pitch, dtype=np.float32)
        self.root_vel = np.asarray(root_vel, dtype=np.float32)
        self.root_ang_vel = np.asarray(root_ang_vel, dtype=np.float32)
        self.joint_pos = np.asarray(joint_pos, dtype=np.float32)
        self.joint_vel = np.asarray(joint_vel, dtype=np.float32)
        self.keypoints = np.asarray(keypoints, dtype=np.float32)
        self.label = label
        self.clip_id = clip_id
        self.family = family
        self._check()

    def _check(self):
        frames = self.root_pos.shape[0]
        if frames < 2:
            raise DimensionError('Clip Needs At Least 2 Frames.')
        if self.frame_rate <= 0:
            raise DimensionError('Frame Rate Must Be Positive.')
        shapes = {
            'root_pos': (frames, 2),
            'root_pitch': (frames,),
            'root_vel': (frames, 2),
            'root_ang_vel': (frames,),
            'joint_pos': (frames, self.joint_pos.shape[-1]),
            'joint_vel': (frames, self.joint_pos.shape[-1]),
            'keypoints': (frames, self.keypoints.shape[1]
                          if self.keypoints.ndim == 3 else -1, 2),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    'Inconsistent Shape Of {}: {}.'.format(
                        name, getattr(self, name).shape),
                )

    @property
    def frame_count(self):
        return self.root_pos.shape[0]

    @property
    def joint_count(self):
        return self.joint_pos.shape[1]

    @property
    def keypoint_count(self):
        return self.keypoints.shape[1]

    @property
    def duration(self):
        return (self.frame_count - 1) / self.frame_rate

    def frame(self, index):
        index = int(np.clip(index, 0, self.frame_count - 1))
        return {name: np.asarray(getattr(self, name)[index], dtype=np.float64)
                for name in self.ARRAYS}

    def interpolate(self, phase):
        """Linear interpolation at `phase` in [0, 1]."""
        position = float(np.clip(phase, 0.0, 1.0)) * (self.frame_count - 1)
        lo = int(math.floor(position))
        hi = min(lo + 1, self.frame_count - 1)
        weight = position - lo
        result = {}
        for name in self.ARRAYS:
            data = getattr(self, name)
            a = np.asarray(data[lo], dtype=np.float64)
            if weight == 0.0:
                result[name] = a
            else:
                b = np.asarray(data[hi], dtype=np.float64)
                result[name] = (1.0 - weight) * a + weight * b
        return result

    def __eq__(self, other):
        if not isinstance(other, MotionClip):
            return NotImplemented
        return (
            self.frame_rate == other.frame_rate
            and self.label == other.label
            and self.clip_id == other.clip_id
            and self.family == other.family
            and all(np.array_equal(getattr(self, name), getattr(other, name))
                    for name in self.ARRAYS)
        )

    def __repr__(self):
        return 'MotionClip({}, {!r}, frames={})'.format(
            self.clip_id, self.label, self.frame_count)


def frame_matrix(clip):
    return np.concatenate([
        clip.root_pos,
        clip.root_pitch[:, None],
        clip.root_vel,
        clip.root_ang_vel[:, None],
        clip.joint_pos,
        clip.joint_vel,
        clip.keypoints.reshape(clip.frame_count, -1),
    ], axis=1).astype(np.float32)


def clip_from_matrix(matrix, frame_rate, joint_count, keypoint_count,
                     label='', clip_id='', family=''):
    j, k = joint_count, keypoint_count
    width = 6 + 2 * j + 2 * k
    if matrix.ndim != 2 or matrix.shape[1] != width:
        raise DimensionError(
            'Frame Width {} Does Not Match {} Joints And {} Keypoints.'.format(
                matrix.shape[-1], j, k),
        )
    return MotionClip(
        frame_rate,
        root_pos=matrix[:, 0:2],
        root_pitch=matrix[:, 2],
        root_vel=matrix[:, 3:5],
        root_ang_vel=matrix[:, 5],
        joint_pos=matrix[:, 6:6 + j],
        joint_vel=matrix[:, 6 + j:6 + 2 * j],
        keypoints=matrix[:, 6 + 2 * j:].reshape(matrix.shape[0], k, 2),
        label=label,
        clip_id=clip_id,
        family=family,
    )


def frame_features(clip):
    """
    Per-frame channels: root height, pitch, root velocities, joint
    positions and velocities, and keypoints relative to the root.
    """
    relative = clip.keypoints.astype(np.float64)
    relative[:, :, 0] -= clip.root_pos[:, None, 0]
    return np.concatenate([
        clip.root_pos[:, 1:2],
        clip.root_pitch[:, None],
        clip.root_vel,
        clip.root_ang_vel[:, None],
        clip.joint_pos,
        clip.joint_vel,
        relative.reshape(clip.frame_count, -1),
    ], axis=1).astype(np.float64)


def feature_width(joint_count, keypoint_count):
    return 5 + 2 * joint_count + 2 * keypoint_count


def clip_from_features(features, frame_rate, joint_count, keypoint_count,
                       label='', clip_id='', family=''):
    """
    Inverse of `frame_features`; the horizontal root position is integrated
    from the root velocity starting at x = 0.
    """
    features = np.asarray(features, dtype=np.float64)
    j, k = joint_count, keypoint_count
    if features.ndim != 2 or features.shape[1] != feature_width(j, k):
        raise DimensionError('Feature Width {} Does Not Match {} Joints And '
                             '{} Keypoints.'.format(features.shape[-1], j, k))
    count = features.shape[0]
    root_vel = features[:, 2:4]
    x = np.concatenate([[0.0], np.cumsum(root_vel[:-1, 0]) / frame_rate])
    root_pos = np.stack([x, features[:, 0]], axis=1)
    keypoints = features[:, 5 + 2 * j:].reshape(count, k, 2).copy()
    keypoints[:, :, 0] += x[:, None]
    return MotionClip(
        frame_rate,
        root_pos=root_pos,
        root_pitch=features[:, 1],
        root_vel=root_vel,
        root_ang_vel=features[:, 4],
        joint_pos=features[:, 5:5 + j],
        joint_vel=features[:, 5 + j:5 + 2 * j],
        keypoints=keypoints,
        label=label,
        clip_id=clip_id,
        family=family,
    )


def resample_clip(clip, frame_count):
    if frame_count < 2:
        raise DimensionError('Clip Needs At Least 2 Frames.')
    if frame_count == clip.frame_count:
        return clip
    source = np.linspace(0.0, 1.0, clip.frame_count)
    target = np.linspace(0.0, 1.0, frame_count)
    matrix = frame_matrix(clip).astype(np.float64)
    resampled = np.stack([np.interp(target, source, column)
                          for column in matrix.T], axis=1)
    return clip_from_matrix(
        resampled,
        (frame_count - 1) / clip.duration,
        clip.joint_count,
        clip.keypoint_count,
        clip.label,
        clip.clip_id,
        clip.family,
    )


# GLOC container.

_PREFIX = struct.Struct('<4sIB')
_HEADER = struct.Struct('<dIIII')
_LENGTH = struct.Struct('<I')


def _pack_text(text):
    data = text.encode('utf-8')
    return _LENGTH.pack(len(data)) + data


def _unpack_text(blob, offset):
    if offset + _LENGTH.size > len(blob):
        raise TruncatedFileError('Truncated Header.')
    (length,) = _LENGTH.unpack_from(blob, offset)
    offset += _LENGTH.size
    if offset + length > len(blob):
        raise TruncatedFileError('Truncated Header.')
    try:
        text = blob[offset:offset + length].decode('utf-8')
    except UnicodeDecodeError:
        raise BadFormatError('Header Text Is Not UTF-8.')
    return text, offset + length


def write_container(path, kind, frame_rate, matrix, joint_count,
                    keypoint_count, stride, texts):
    matrix = np.ascontiguousarray(matrix, dtype='<f4')
    blob = bytearray()
    blob += _PREFIX.pack(MAGIC, FORMAT_VERSION, kind)
    blob += _HEADER.pack(float(frame_rate), matrix.shape[0], joint_count,
                         keypoint_count, stride)
    for text in texts:
        blob += _pack_text(text)
    blob += matrix.tobytes()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(bytes(blob))


def read_container(path, kind, width_of, text_count=3):
    """
    Returns (frame_rate, matrix, joint_count, keypoint_count, stride, texts).
    `width_of(joint_count, keypoint_count)` gives the expected row width.
    """
    with open(path, 'rb') as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadFormatError('{} Is Not A GLOC File.'.format(path))
    if len(blob) < _PREFIX.size:
        raise TruncatedFileError('Truncated Header.')
    _, version, stored_kind = _PREFIX.unpack_from(blob, 0)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            'File Version {} Differs From Supported Version {}.'.format(
                version, FORMAT_VERSION),
        )
    if stored_kind != kind:
        raise BadFormatError(
            'Stream Kind {} Where {} Was Expected.'.format(stored_kind, kind))
    offset = _PREFIX.size
    if offset + _HEADER.size > len(blob):
        raise TruncatedFileError('Truncated Header.')
    frame_rate, rows, joint_count, keypoint_count, stride = \
        _HEADER.unpack_from(blob, offset)
    offset += _HEADER.size
    texts = []
    for _ in range(text_count):
        text, offset = _unpack_text(blob, offset)
        texts.append(text)
    width = width_of(joint_count, keypoint_count)
    if width <= 0:
        raise DimensionError('Header Declares An Empty Frame.')
    expected = rows * width * 4
    body = blob[offset:]
    if len(body) < expected:
        raise TruncatedFileError(
            'Header Claims {} Rows, Body Holds {}.'.format(
                rows, len(body) // (width * 4)),
        )
    if len(body) > expected:
        raise DimensionError(
            'Body Holds {} Extra Bytes.'.format(len(body) - expected))
    matrix = np.frombuffer(body, dtype='<f4').reshape(rows, width)
    return (frame_rate, matrix.astype(np.float32), joint_count,
            keypoint_count, stride, texts)


def _clip_width(joint_count, keypoint_count):
    return 6 + 2 * joint_count + 2 * keypoint_count


def save_clip(path, clip):
    write_container(
        path, KIND_CLIP, clip.frame_rate, frame_matrix(clip),
        clip.joint_count, clip.keypoint_count, 1,
        (clip.label, clip.clip_id, clip.family),
    )


def load_clip(path):
    frame_rate, matrix, joints, keypoints, _, texts = read_container(
        path, KIND_CLIP, _clip_width)
    label, clip_id, family = texts
    return clip_from_matrix(matrix, frame_rate, joints, keypoints,
                            label, clip_id, family)


# motion families.

class _UniqueKeyDict(dict):

    def __setitem__(self, key, val):
        if key in self:
            raise KeyError('Family Already Existed!.')
        super().__setitem__(key, val)


class FamilyRegister(type):

    family_mapping = _UniqueKeyDict()

    def __new__(cls, cls_name, bases, namespace, **kwargs):
        family_cls = super().__new__(cls, cls_name, bases, namespace, **kwargs)
        name = namespace.get('name')
        if name:
            cls.family_mapping[name] = family_cls
        return family_cls

    @classmethod
    def get_family(cls, name):
        family_cls = cls.family_mapping.get(name)
        if family_cls is None:
            raise UnknownFamilyError(
                'Unknown Motion Family {!r}.'.format(name))
        return family_cls()

    @classmethod
    def names(cls):
        return list(cls.family_mapping)


def _limb(model):
    # {'l': {'hip': index, ...}, 'r': {...}} resolved from joint names.
    legs = {}
    for side in ('l', 'r'):
        parts = {}
        for part in ('hip', 'knee', 'ankle'):
            matches = [i for i in model.joints_matching(part)
                       if model.joints[i].name.endswith('_' + side)]
            parts[part] = matches[0] if matches else None
        legs[side] = parts
    return legs


def _wave(times, amplitude, omega, phase=0.0):
    angle = omega * times + phase
    return amplitude * np.sin(angle), amplitude * omega * np.cos(angle)


def _bump(times, amplitude, omega, phase=0.0):
    # smooth 0 -> amplitude -> 0 over one period.
    angle = omega * times + phase
    return (amplitude * 0.5 * (1.0 - np.cos(angle)),
            amplitude * 0.5 * omega * np.sin(angle))


def leg_length(model):
    tree = model.tree
    q = np.zeros(tree.dof)
    points = tree.keypoints(tree.frames(q))
    contact = model.contact_keypoints() or list(range(model.keypoint_count))
    return float(-points[contact, 1].min())


class MotionFamily(metaclass=FamilyRegister):

    """
    Parametric family: `curves` gives joint positions and their exact time
    derivatives, `root_motion` the horizontal root trajectory and an extra
    lift above ground contact.
    """

    name = None
    RANGES = {}

    def sample_parameters(self, rng, ranges=None):
        ranges = dict(self.RANGES, **(ranges or {}))
        return OrderedDict(
            (key, float(rng.uniform(*ranges[key]))) for key in self.RANGES
        )

    def label(self, params):
        raise NotImplementedError

    def period(self, params):
        cadence = params.get('cadence')
        return 1.0 / cadence if cadence else None

    def curves(self, times, params, model):
        raise NotImplementedError

    def root_motion(self, times, params, model):
        zeros = np.zeros_like(times)
        return zeros, zeros, zeros, zeros

    def _pose(self, times, model):
        q = np.repeat(model.default_pose[None], len(times), axis=0)
        return q, np.zeros_like(q)


class Stand(MotionFamily):

    name = 'stand'
    RANGES = {}

    def label(self, params):
        return 'stand still'

    def curves(self, times, params, model):
        return self._pose(times, model)


class Walk(MotionFamily):

    name = 'walk'
    RANGES = {
        'stride': (0.2, 0.5),
        'cadence': (0.8, 1.2),
        'amplitude': (0.3, 0.6),
    }

    def hip_amplitude(self, params, model):
        ratio = params['stride'] / (2.0 * leg_length(model))
        return math.asin(min(ratio, 0.9))

    def speed(self, params):
        return params['stride'] * params['cadence']

    def label(self, params):
        if self.speed(params) < 0.35:
            return 'walk forward slowly'
        return 'walk forward quickly'

    def curves(self, times, params, model):
        q, qd = self._pose(times, model)
        omega = 2.0 * math.pi * params['cadence']
        hip = self.hip_amplitude(params, model)
        for side, phase in (('l', 0.0), ('r', math.pi)):
            joints = _limb(model)[side]
            if joints['hip'] is not None:
                value, rate = _wave(times, hip, omega, phase)
                q[:, joints['hip']] += value
                qd[:, joints['hip']] += rate
            if joints['knee'] is not None:
                # knee flexes while the hip swings forward.
                value, rate = _bump(times, params['amplitude'], omega,
                                    phase + math.pi)
                q[:, joints['knee']] -= value
                qd[:, joints['knee']] -= rate
            if joints['ankle'] is not None:
                value, rate = _wave(times, 0.5 * hip, omega, phase)
                q[:, joints['ankle']] -= value
                qd[:, joints['ankle']] -= rate
        return q, qd

    def root_motion(self, times, params, model):
        speed = self.speed(params)
        zeros = np.zeros_like(times)
        return speed * times, np.full_like(times, speed), zeros, zeros


class Hop(MotionFamily):

    name = 'hop'
    RANGES = {
        'cadence': (1.0, 1.5),
        'height': (0.03, 0.08),
        'stride': (0.0, 0.2),
    }

    def label(self, params):
        if params['stride'] < 0.05:
            return 'hop in place'
        return 'hop forward'

    def curves(self, times, params, model):
        q, qd = self._pose(times, model)
        omega = 2.0 * math.pi * params['cadence']
        crouch = 0.4
        for joints in _limb(model).values():
            # crouched at landing, extended in flight.
            value, rate = _bump(times, crouch, omega, math.pi)
            for part, sign in (('hip', 0.5), ('knee', -1.0), ('ankle', 0.5)):
                if joints[part] is not None:
                    q[:, joints[part]] += sign * value
                    qd[:, joints[part]] += sign * rate
        return q, qd

    def root_motion(self, times, params, model):
        omega = 2.0 * math.pi * params['cadence']
        half = 0.5 * omega * times
        height = params['height']
        lift = height * np.sin(half) ** 4
        lift_rate = 2.0 * height * omega * np.sin(half) ** 3 * np.cos(half)
        speed = params['stride'] * params['cadence']
        return speed * times, np.full_like(times, speed), lift, lift_rate


class Squat(MotionFamily):

    name = 'squat'
    RANGES = {
        'cadence': (0.3, 0.6),
        'depth': (0.3, 0.8),
    }

    def label(self, params):
        return 'squat in place'

    def curves(self, times, params, model):
        q, qd = self._pose(times, model)
        omega = 2.0 * math.pi * params['cadence']
        value, rate = _bump(times, params['depth'], omega)
        for joints in _limb(model).values():
            # hip + knee + ankle stays constant so the torso and feet keep
            # their orientation.
            for part, sign in (('hip', 1.0), ('knee', -2.0), ('ankle', 1.0)):
                if joints[part] is not None:
                    q[:, joints[part]] += sign * value
                    qd[:, joints[part]] += sign * rate
        return q, qd


class Kick(MotionFamily):

    name = 'kick'
    RANGES = {
        'cadence': (0.5, 0.8),
        'amplitude': (0.4, 0.9),
        'side': (0.0, 1.0),
    }

    def _side(self, params):
        return 'l' if params['side'] < 0.5 else 'r'

    def label(self, params):
        if self._side(params) == 'l':
            return 'kick with the left leg'
        return 'kick with the right leg'

    def curves(self, times, params, model):
        q, qd = self._pose(times, model)
        omega = 2.0 * math.pi * params['cadence']
        joints = _limb(model)[self._side(params)]
        amplitude = params['amplitude']
        if joints['hip'] is not None:
            value, rate = _bump(times, amplitude, omega)
            q[:, joints['hip']] += value
            qd[:, joints['hip']] += rate
        if joints['knee'] is not None:
            value, rate = _bump(times, 0.5 * amplitude, 2.0 * omega)
            q[:, joints['knee']] -= value
            qd[:, joints['knee']] -= rate
        return q, qd


def _ground_contact(model, pitch, joint_pos, pitch_rate, joint_vel):
    """
    Root height placing the lowest contact point on the ground, and its
    exact time derivative through the contact point Jacobian.
    """
    tree = model.tree
    frames_count = joint_pos.shape[0]
    root = np.zeros((frames_count, 2))
    q = tree.pack(root, pitch, joint_pos)
    frames = tree.frames(q)
    contact = model.contact_keypoints() or list(range(model.keypoint_count))
    points = tree.keypoints(frames)[:, contact, :]
    lowest = np.argmin(points[:, :, 1], axis=1)
    height = -points[np.arange(frames_count), lowest, 1]
    qd = np.concatenate([np.zeros((frames_count, 2)), pitch_rate[:, None],
                         joint_vel], axis=1)
    rate = np.zeros(frames_count)
    for c, k in enumerate(contact):
        rows = lowest == c
        if not rows.any():
            continue
        link = tree.keypoint_links[k]
        point = points[:, c, :]
        jac = tree.point_jacobian(frames, link, point)
        vertical = np.einsum('bn,bn->b', jac[:, 1, :], qd)
        rate[rows] = -vertical[rows]
    return height, rate


def synthesize_clip(family, params, model, frame_rate, duration, clip_id=''):
    period = family.period(params)
    if period:
        cycles = max(1, int(round(duration / period)))
        span = cycles * period
    else:
        span = duration
    frame_count = max(2, int(round(span * frame_rate)) + 1)
    times = np.arange(frame_count, dtype=np.float64) / frame_rate

    joint_pos, joint_vel = family.curves(times, params, model)
    x, x_rate, lift, lift_rate = family.root_motion(times, params, model)
    pitch = np.zeros(frame_count)
    pitch_rate = np.zeros(frame_count)
    height, height_rate = _ground_contact(model, pitch, joint_pos,
                                          pitch_rate, joint_vel)
    root_pos = np.stack([x, height + lift], axis=1)
    root_vel = np.stack([x_rate, height_rate + lift_rate], axis=1)

    tree = model.tree
    frames = tree.frames(tree.pack(root_pos, pitch, joint_pos))
    keypoints = tree.keypoints(frames)
    return MotionClip(
        frame_rate,
        root_pos=root_pos,
        root_pitch=pitch,
        root_vel=root_vel,
        root_ang_vel=pitch_rate,
        joint_pos=joint_pos,
        joint_vel=joint_vel,
        keypoints=keypoints,
        label=family.label(params),
        clip_id=clip_id,
        family=family.name,
    )


class CorpusSpec:

    def __init__(self, families=('walk', 'hop', 'squat', 'kick', 'stand'),
                 clips_per_family=4, frame_rate=50.0, duration=4.0,
                 ranges=None):
        self.families = list(families)
        self.clips_per_family = int(clips_per_family)
        self.frame_rate = float(frame_rate)
        self.duration = float(duration)
        # {family: {parameter: (low, high)}}
        self.ranges = ranges or {}


def synthesize_corpus(spec, seed, model):
    clips = []
    for family_index, name in enumerate(spec.families):
        family = FamilyRegister.get_family(name)
        for index in range(spec.clips_per_family):
            rng = np.random.default_rng([seed, family_index, index])
            params = family.sample_parameters(rng, spec.ranges.get(name))
            clip_id = '{}-{:04d}'.format(name, index)
            clips.append(synthesize_clip(
                family, params, model, spec.frame_rate, spec.duration,
                clip_id,
            ))
    logger.info('synthesized clips=%d families=%s', len(clips),
                ','.join(spec.families))
    return clips


# stability filter.

class StabilityResult:

    def __init__(self, flags, epsilon, max_unstable_run):
        self.flags = np.asarray(flags, dtype=bool)
        self.epsilon = epsilon
        self.max_unstable_run = max_unstable_run
        self.longest_unstable_run = longest_run(~self.flags)
        self.keep = decide_keep(self.flags, max_unstable_run)

    def __repr__(self):
        return 'StabilityResult(keep={}, longest={})'.format(
            self.keep, self.longest_unstable_run)


def longest_run(mask):
    best = current = 0
    for value in mask:
        current = current + 1 if value else 0
        best = max(best, current)
    return best


def decide_keep(flags, max_unstable_run=100):
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return False
    return bool(flags[0] and flags[-1]
                and longest_run(~flags) < max_unstable_run)


def stability_flags(clip, model, epsilon=0.12, foot_height=0.02):
    """
    A frame is stable when the ground-projected CoM lies within `epsilon`
    of the centroid of foot points lower than `foot_height`. Frames with no
    low foot point are unstable.
    """
    tree = model.tree
    q = tree.pack(clip.root_pos.astype(np.float64),
                  clip.root_pitch.astype(np.float64),
                  clip.joint_pos.astype(np.float64))
    com = tree.center_of_mass(tree.frames(q))
    feet = [k for points in model.foot_points() for k in points]
    points = clip.keypoints[:, feet, :].astype(np.float64)
    low = points[:, :, 1] < foot_height
    count = low.sum(axis=1)
    safe = np.where(count > 0, count, 1)
    cop_x = (points[:, :, 0] * low).sum(axis=1) / safe
    distance = np.abs(com[:, 0] - cop_x)
    return (count > 0) & (distance < epsilon)


def stability_filter(clip, model, epsilon=0.12, max_unstable_run=100,
                     foot_height=0.02):
    flags = stability_flags(clip, model, epsilon, foot_height)
    return StabilityResult(flags, epsilon, max_unstable_run)


# normalization.

class NormStats:

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(std, dtype=np.float64), STD_FLOOR)

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def state_dict(self):
        return {'mean': self.mean.tolist(), 'std': self.std.tolist()}

    @classmethod
    def from_state_dict(cls, state):
        return cls(state['mean'], state['std'])


def compute_norm_stats(clips, features=frame_features):
    if not clips:
        raise ValueError('Empty Split.')
    data = np.concatenate([features(clip) for clip in clips], axis=0)
    return NormStats(data.mean(axis=0), data.std(axis=0))


# splits and manifest.

def split_corpus(clips, ratio=0.8, seed=0):
    """Deterministic per-family split; each family keeps its own ratio."""
    groups = OrderedDict()
    for clip in clips:
        groups.setdefault(clip.family, []).append(clip)
    train, test = [], []
    for family_index, (_, members) in enumerate(sorted(groups.items())):
        rng = np.random.default_rng([seed, family_index])
        order = rng.permutation(len(members))
        cut = int(math.floor(ratio * len(members) + 0.5))
        if len(members) > 1:
            cut = min(max(cut, 1), len(members) - 1)
        train.extend(members[i] for i in sorted(order[:cut]))
        test.extend(members[i] for i in sorted(order[cut:]))
    return train, test


class ManifestEntry:

    def __init__(self, clip_id, path, label, family, split):
        self.clip_id = clip_id
        self.path = path
        self.label = label
        self.family = family
        self.split = split

    def __repr__(self):
        return 'ManifestEntry({}, {})'.format(self.clip_id, self.split)


def save_manifest(path, entries):
    config = configparser.ConfigParser(interpolation=None)
    for entry in entries:
        config[entry.clip_id] = OrderedDict([
            ('path', entry.path),
            ('label', entry.label),
            ('family', entry.family),
            ('split', entry.split),
        ])
    with open(path, 'w') as f:
        config.write(f)


def load_manifest(path):
    if not os.path.exists(path):
        raise FileNotFoundError('{} Not Exists.'.format(path))
    config = configparser.ConfigParser(interpolation=None)
    with open(path) as f:
        config.read_file(f)
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    for clip_id in config.sections():
        section = config[clip_id]
        clip_path = section['path']
        if not os.path.isabs(clip_path):
            clip_path = os.path.join(base, clip_path)
        entries.append(ManifestEntry(
            clip_id, clip_path, section.get('label', ''),
            section.get('family', ''), section.get('split', 'train'),
        ))
    return entries


def load_split(path, split=None):
    return [load_clip(entry.path) for entry in load_manifest(path)
            if split is None or entry.split == split]


# label vocabulary.

def normalize_phrase(phrase):
    return ' '.join(phrase.lower().split())


def nearest_phrases(phrase, phrases, count=3):
    tokens = set(normalize_phrase(phrase).split())

    def overlap(candidate):
        other = set(candidate.split())
        union = tokens | other
        return len(tokens & other) / len(union) if union else 0.0

    ranked = sorted(phrases, key=lambda item: (-overlap(item), item))
    return [item for item in ranked[:count] if overlap(item) > 0]


class LabelVocabulary(nn.Module):

    """Closed vocabulary of command phrases with a learned embedding."""

    def __init__(self, phrases, width=64):
        super().__init__()
        normalized = []
        for phrase in phrases:
            phrase = normalize_phrase(phrase)
            if phrase not in normalized:
                normalized.append(phrase)
        if not normalized:
            raise ValueError('Empty Vocabulary.')
        self.phrases = normalized
        self.width = width
        self.embedding = nn.Embedding(len(normalized), width)
        nn.init.normal_(self.embedding.weight, std=1.0)

    @classmethod
    def from_clips(cls, clips, width=64):
        return cls(sorted({clip.label for clip in clips}), width)

    def index(self, phrase):
        key = normalize_phrase(phrase)
        if key not in self.phrases:
            raise UnknownLabelError(phrase,
                                    nearest_phrases(key, self.phrases))
        return self.phrases.index(key)

    def indices(self, phrases):
        return torch.tensor([self.index(p) for p in phrases],
                            dtype=torch.long)

    def forward(self, indices):
        return self.embedding(indices)

    def encode_label(self, phrase):
        return self.embedding.weight[self.index(phrase)]


def encode_label(vocab, phrase):
    return vocab.encode_label(phrase)
