"""
Evaluation math: tracking success and errors, generation metrics over a
pluggable feature extractor, and the latent-versus-explicit pipeline timing.
"""

import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .env import EnvConfig, rollout_clip
from .generator import decode_latents, generate_latents
from .kinematics import ROOT_DOF
from .motion import (
    DimensionError,
    MotionClip,
    UnknownLabelError,
    frame_features,
    nearest_phrases,
    resample_clip,
)
from .sim import standing_state
from .student import generated_latents, student_actor, zero_latents
from .teacher import teacher_actor


logger = logging.getLogger(__name__)


MODES = ('latent', 'explicit')


class UntrainedComponentError(RuntimeError):
    pass


@dataclass
class MetricsConfig:

    deviation_limit: float = 0.5
    pitch_limit: float = 0.8
    window: float = 0.5
    n_pairs: int = 300
    retarget_iterations: int = 1000
    retarget_step: float = 0.2
    trials: int = 10
    record_timings: bool = False


# tracking.

def windowed_mean(series, width):
    """Trailing mean over `width` samples; shorter prefixes use what exists."""
    series = np.asarray(series, dtype=np.float64)
    width = max(1, int(width))
    total = np.concatenate([[0.0], np.cumsum(series)])
    index = np.arange(1, series.size + 1)
    start = np.maximum(0, index - width)
    return (total[index] - total[start]) / (index - start)


def judge_success(deviations, pitches, dt=0.02, deviation_limit=0.5,
                  pitch_limit=0.8, window=0.5):
    """(success, reason); reason is None on success."""
    deviations = np.asarray(deviations, dtype=np.float64)
    pitches = np.asarray(pitches, dtype=np.float64)
    if deviations.size == 0:
        raise ValueError('Empty Deviation Series.')
    averaged = windowed_mean(deviations, round(window / dt))
    if (averaged > deviation_limit).any():
        return False, 'deviation'
    if pitches.size and (np.abs(pitches) > pitch_limit).any():
        return False, 'pitch'
    return True, None


def _aligned(executed, reference):
    if executed.joint_count != reference.joint_count or \
            executed.keypoint_count != reference.keypoint_count:
        raise DimensionError('Executed And Reference Clips Differ In Size.')
    if reference.frame_count != executed.frame_count:
        reference = resample_clip(reference, executed.frame_count)
    return reference


def mpjpe(executed, reference):
    reference = _aligned(executed, reference)
    return float(np.abs(executed.joint_pos.astype(np.float64)
                        - reference.joint_pos.astype(np.float64)).mean())


def mpkpe(executed, reference):
    reference = _aligned(executed, reference)
    return float(np.linalg.norm(
        executed.keypoints.astype(np.float64)
        - reference.keypoints.astype(np.float64), axis=-1).mean())


class TrackingReport:

    def __init__(self, clip_id, label, success, reason, e_mpjpe, e_mpkpe,
                 deviations, timings=None):
        if success == (reason is not None):
            raise ValueError('Failure Reason Must Accompany Failure Only.')
        self.clip_id = clip_id
        self.label = label
        self.success = success
        self.reason = reason
        self.e_mpjpe = e_mpjpe
        self.e_mpkpe = e_mpkpe
        self.deviations = deviations
        self.timings = timings or OrderedDict()

    def record(self):
        row = {
            'clip_id': self.clip_id,
            'label': self.label,
            'succ': self.success,
            'reason': self.reason or '',
            'e_mpjpe': self.e_mpjpe,
            'e_mpkpe': self.e_mpkpe,
            'steps': len(self.deviations),
        }
        for stage, seconds in self.timings.items():
            row['t_' + stage] = seconds
        return row


def tracking_report(track, cfg=None, dt=0.02, timings=None):
    """Report for one TrackResult from `rollout_clip`."""
    cfg = cfg or MetricsConfig()
    success, reason = judge_success(track.deviations, track.pitches, dt,
                                    cfg.deviation_limit, cfg.pitch_limit,
                                    cfg.window)
    if success and track.terminated:
        success, reason = False, 'terminated'
    return TrackingReport(
        track.reference.clip_id, track.reference.label, success, reason,
        mpjpe(track.executed, track.reference),
        mpkpe(track.executed, track.reference),
        track.deviations, timings,
    )


# features.

class FeatureSet:

    def __init__(self, matrix, extractor='pooled-stats'):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise DimensionError('Features Must Be A Matrix.')
        if not np.isfinite(matrix).all():
            raise ValueError('Non-Finite Features.')
        self.matrix = matrix
        self.extractor = extractor

    def __len__(self):
        return self.matrix.shape[0]

    @property
    def width(self):
        return self.matrix.shape[1]


class PooledFeatureExtractor:

    """Mean and std of normalized frame channels and of their differences."""

    name = 'pooled-stats'

    def __init__(self, stats):
        self.stats = stats

    def clip_vector(self, clip):
        x = self.stats.apply(frame_features(clip))
        dx = np.diff(x, axis=0)
        return np.concatenate([x.mean(axis=0), x.std(axis=0),
                               dx.mean(axis=0), dx.std(axis=0)])

    def __call__(self, clips):
        return FeatureSet(np.stack([self.clip_vector(c) for c in clips]),
                          self.name)


def label_prototypes(features, labels):
    """Mean real-motion feature per label."""
    prototypes = OrderedDict()
    for label in sorted(set(labels)):
        rows = [i for i, name in enumerate(labels) if name == label]
        prototypes[label] = features.matrix[rows].mean(axis=0)
    return prototypes


def text_features(labels, prototypes):
    missing = [label for label in labels if label not in prototypes]
    if missing:
        raise UnknownLabelError(missing[0],
                                nearest_phrases(missing[0], prototypes))
    return FeatureSet(np.stack([prototypes[label] for label in labels]),
                      'label-prototype')


# generation metrics.

def _gaussian(features):
    if len(features) < 2:
        raise ValueError('At Least 2 Samples Are Needed.')
    mean = features.matrix.mean(axis=0)
    cov = np.atleast_2d(np.cov(features.matrix, rowvar=False))
    return mean, cov


def _sqrtm_psd(matrix):
    values, vectors = linalg.eigh((matrix + matrix.T) / 2.0)
    values = np.clip(values, 0.0, None)
    return (vectors * np.sqrt(values)) @ vectors.T


def fid(real, generated):
    mu1, sigma1 = _gaussian(real)
    mu2, sigma2 = _gaussian(generated)
    if mu1.shape != mu2.shape:
        raise DimensionError('Feature Widths Differ.')
    root1 = _sqrtm_psd(sigma1)
    # tr((S1 S2)^1/2) = tr((S1^1/2 S2 S1^1/2)^1/2), a symmetric product.
    values = linalg.eigvalsh(root1 @ sigma2 @ root1)
    covariance_term = np.sqrt(np.clip(values, 0.0, None)).sum()
    diff = mu1 - mu2
    distance = diff @ diff + np.trace(sigma1) + np.trace(sigma2) \
        - 2.0 * covariance_term
    return float(max(distance, 0.0))


def diversity(features, n_pairs=300, seed=0):
    count = len(features)
    if count < 2:
        raise ValueError('Diversity Needs At Least 2 Features.')
    rng = np.random.default_rng(seed)
    first = rng.integers(count, size=n_pairs)
    second = (first + rng.integers(1, count, size=n_pairs)) % count
    return float(np.linalg.norm(
        features.matrix[first] - features.matrix[second], axis=-1).mean())


def retrieval_metrics(text, motion):
    """(R@1, R@2, R@3, MMDist); text i belongs to motion i."""
    if len(text) == 0 or len(motion) == 0:
        raise ValueError('Empty Feature Set.')
    if len(text) != len(motion):
        raise DimensionError('Text And Motion Counts Differ.')
    distances = cdist(text.matrix, motion.matrix)
    ranks = np.empty(len(text), dtype=np.int64)
    for i, row in enumerate(distances):
        order = np.argsort(row, kind='stable')
        ranks[i] = int(np.flatnonzero(order == i)[0])
    recalls = tuple(float((ranks < k).mean()) for k in (1, 2, 3))
    return recalls + (float(np.diag(distances).mean()),)


# explicit pipeline stages.

def retarget_emulation(clip, model, iterations=1000, step=0.2):
    """
    Fit every frame's pose to the clip keypoints by gradient descent
    through forward kinematics; all frames are fit side by side.
    """
    tree = model.tree
    lows, highs = model.joint_limits
    target = clip.keypoints.astype(np.float64)
    frames = clip.frame_count
    pose = np.broadcast_to(model.default_pose, (frames, model.joint_count))
    q = tree.pack(clip.root_pos.astype(np.float64), np.zeros(frames), pose)
    scale = 1.0 / max(1, model.keypoint_count)
    for _ in range(iterations):
        points, jac = tree.keypoint_jacobians(tree.frames(q))
        gradient = np.einsum('fkd,fkdn->fn', points - target, jac) * scale
        q = q - step * gradient
        q[:, ROOT_DOF:] = np.clip(q[:, ROOT_DOF:], lows, highs)
    points = tree.keypoints(tree.frames(q))
    qd = np.gradient(q, axis=0) * clip.frame_rate
    return MotionClip(
        clip.frame_rate, q[:, 0:2], q[:, 2], qd[:, 0:2], qd[:, 2],
        q[:, ROOT_DOF:], qd[:, ROOT_DOF:], points,
        clip.label, clip.clip_id, clip.family,
    )


def hold_clip(model, frame_count, frame_rate, label=''):
    """Standing reference used where a pipeline runs without one."""
    state = standing_state(model, 1.0 / frame_rate)
    keypoints = model.tree.keypoints(model.tree.frames(
        state.generalized()[0]))

    def repeat(values):
        return np.repeat(np.asarray(values), frame_count, axis=0)

    return MotionClip(
        frame_rate, repeat(state.root_pos), repeat(state.pitch),
        repeat(state.root_vel), repeat(state.ang_vel),
        repeat(state.joint_pos), repeat(state.joint_vel), repeat(keypoints),
        label,
    )


class PipelineComponents:

    def __init__(self, model, generator=None, stats=None, student=None,
                 teacher=None, env_cfg=None):
        self.model = model
        self.generator = generator
        self.stats = stats
        self.student = student
        self.teacher = teacher
        self.env_cfg = env_cfg

    def require(self, mode):
        needed = {'latent': ('generator', 'student'),
                  'explicit': ('generator', 'stats', 'teacher')}[mode]
        missing = [name for name in needed if getattr(self, name) is None]
        if missing:
            raise UntrainedComponentError('Missing Trained {}.'.format(
                ', '.join(missing)))


def _timing_env(cfg):
    return replace(cfg or EnvConfig(), num_envs=1, randomize=False,
                   pushes=False, pitch_limit=float('inf'),
                   termination_threshold=float('inf'))


def pipeline_trial(mode, label, parts, token_count, seed=0,
                   iterations=1000, step=0.2):
    """Stage timings in seconds for one label-to-motion run."""
    model, generator = parts.model, parts.generator
    env_cfg = _timing_env(parts.env_cfg)
    timings = OrderedDict()
    started = time.perf_counter()
    latents = generate_latents(generator, label, token_count, seed)
    timings['generation'] = time.perf_counter() - started
    frames = token_count * generator.cfg.stride
    steps = frames - 1
    if mode == 'latent':
        reference = hold_clip(model, frames, latents.frame_rate, label)
        act = student_actor(parts.student, [latents], seed)
    else:
        started = time.perf_counter()
        decoded = decode_latents(generator, latents, parts.stats)
        timings['decode'] = time.perf_counter() - started
        started = time.perf_counter()
        reference = retarget_emulation(decoded, model, iterations, step)
        timings['retarget'] = time.perf_counter() - started
        act = teacher_actor(parts.teacher)
    started = time.perf_counter()
    rollout_clip(model, reference, act, env_cfg, seed, max_steps=steps)
    timings['control'] = time.perf_counter() - started
    timings['total'] = sum(timings.values())
    return timings


def pipeline_timing(mode, label, parts, trials=10, seed=0, token_count=16,
                    iterations=1000, step=0.2):
    if mode not in MODES:
        raise ValueError('Unknown Mode {!r}.'.format(mode))
    if trials < 1:
        raise ValueError('At Least One Trial Is Needed.')
    parts.require(mode)
    rows = []
    for trial in range(trials):
        timings = pipeline_trial(mode, label, parts, token_count,
                                 seed + trial, iterations, step)
        logger.info('timing mode=%s trial=%d total=%.4f', mode, trial,
                    timings['total'])
        rows.append(timings)
    means = OrderedDict(
        (stage, float(np.mean([row[stage] for row in rows])))
        for stage in rows[0])
    return rows, means


# evaluation runs.

def control_dt(env_cfg):
    return env_cfg.physics_dt * env_cfg.decimation


def evaluate_clip(mode, clip, parts, cfg=None, seed=0, zero_latent=False):
    """
    Generate latents from the clip label and track them. In latent mode the
    student follows the latents against the clip itself; in explicit mode
    the teacher tracks the decoded and retargeted motion.
    Returns (TrackingReport, TrackResult).
    """
    if mode not in MODES:
        raise ValueError('Unknown Mode {!r}.'.format(mode))
    cfg = cfg or MetricsConfig()
    parts.require(mode)
    model, generator = parts.model, parts.generator
    env_cfg = parts.env_cfg or EnvConfig(num_envs=1, randomize=False,
                                         pushes=False)
    timings = OrderedDict()
    started = time.perf_counter()
    latents = generated_latents(generator, [clip], seed)[0]
    timings['generation'] = time.perf_counter() - started
    if mode == 'latent':
        if zero_latent:
            latents = zero_latents([latents])[0]
        reference = clip
        act = student_actor(parts.student, [latents], seed)
    else:
        started = time.perf_counter()
        decoded = decode_latents(generator, latents, parts.stats)
        timings['decode'] = time.perf_counter() - started
        started = time.perf_counter()
        reference = retarget_emulation(decoded, model,
                                       cfg.retarget_iterations,
                                       cfg.retarget_step)
        timings['retarget'] = time.perf_counter() - started
        reference.clip_id = clip.clip_id
        act = teacher_actor(parts.teacher)
    started = time.perf_counter()
    track = rollout_clip(model, reference, act, env_cfg, seed)
    timings['control'] = time.perf_counter() - started
    report = tracking_report(track, cfg, control_dt(env_cfg),
                             timings if cfg.record_timings else None)
    logger.debug('evaluated clip=%s mode=%s success=%s', clip.clip_id, mode,
                 report.success)
    return report, track


def generation_metrics(generator, stats, clips, cfg=None, seed=0):
    """FID, diversity and retrieval of generated motion against `clips`."""
    cfg = cfg or MetricsConfig()
    extractor = PooledFeatureExtractor(stats)
    latents = generated_latents(generator, clips, seed)
    generated = [decode_latents(generator, seq, stats) for seq in latents]
    real = extractor(clips)
    fake = extractor(generated)
    labels = [clip.label for clip in clips]
    text = text_features(labels, label_prototypes(real, labels))
    top1, top2, top3, mm_dist = retrieval_metrics(text, fake)
    enough = len(clips) >= 2
    return OrderedDict([
        ('clips', len(clips)),
        ('extractor', extractor.name),
        ('fid', fid(real, fake) if enough else float('nan')),
        ('diversity', diversity(fake, cfg.n_pairs, seed)
         if enough else float('nan')),
        ('real_diversity', diversity(real, cfg.n_pairs, seed)
         if enough else float('nan')),
        ('r_precision_1', top1),
        ('r_precision_2', top2),
        ('r_precision_3', top3),
        ('mm_dist', mm_dist),
    ])
