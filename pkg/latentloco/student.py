"""
Latent-conditioned student policies and DAgger distillation.

The student sees a generator latent token, the proprioceptive history and
the current proprioceptive frame; nothing privileged and no reference
frame. The diffusion student denoises a normalized action vector under
AdaLN conditioning and is trained with the x0-recovery loss; the MLP
student regresses the teacher action directly.
"""

import logging
import threading
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import diffusion
from .env import EnvConfig, TrackingEnv
from .generator import LatentSequence, generate_latents
from .nets import (
    DENOISER_BACKBONES,
    MLP,
    OptimizerConfig,
    ParameterSet,
    ShapeError,
    apply_loss,
    build_denoiser,
    fan_in_init,
)
from .observation import HISTORY, proprio_width
from .report import ProgressLog
from .sampling import AdaptiveSampler
from .teacher import RunningNormalizer, moe_act


logger = logging.getLogger(__name__)


POLICY_KINDS = ('diffusion', 'mlp')


class MissingLatentError(ValueError):
    pass


@dataclass
class StudentConfig:

    policy: str = 'diffusion'
    encoder_width: int = 64
    cond_width: int = 256
    width: int = 256
    depth: int = 3
    backbone: str = 'mlp'
    heads: int = 4
    tokens: int = 4
    mlp_hidden: tuple = (256, 256, 256)
    diffusion_steps: int = 50
    ddim_steps: int = 10
    beta_start: float = 1e-4
    beta_end: float = 0.02
    objective: str = 'ddpm'
    lr: float = 1e-4
    weight_decay: float = 0.01
    rounds: int = 4
    horizon: int = 100
    train_steps: int = 500
    batch_size: int = 256
    mixing_rounds: int = 3
    log_interval: int = 100

    def __post_init__(self):
        if self.policy not in POLICY_KINDS:
            raise ValueError('Unknown Policy Kind {!r}.'.format(self.policy))
        if self.backbone not in DENOISER_BACKBONES:
            raise ValueError('Unknown Denoiser Backbone {!r}.'.format(
                self.backbone))

    def schedule(self):
        return diffusion.DiffusionSchedule.linear(
            self.diffusion_steps, self.beta_start, self.beta_end,
            self.objective)

    def optimizer(self):
        return OptimizerConfig(lr=self.lr, weight_decay=self.weight_decay)


class StudentInput:

    """Latent token (B, L), flattened history (B, H * P), current (B, P)."""

    FIELDS = ('latent', 'history', 'current')

    def __init__(self, latent, history, current):
        self.latent = latent
        self.history = history
        self.current = current

    @property
    def batch_size(self):
        return self.current.shape[0]

    def observation(self):
        return np.concatenate([self.history, self.current], axis=-1)

    def tensors(self):
        if self.latent is None:
            raise MissingLatentError('Student Input Without A Latent.')
        return (torch.as_tensor(np.asarray(self.latent), dtype=torch.float32),
                torch.as_tensor(self.observation(), dtype=torch.float32))

    def select(self, index):
        return StudentInput(self.latent[index], self.history[index],
                            self.current[index])

    @classmethod
    def concatenate(cls, inputs):
        return cls(*(np.concatenate([getattr(x, name) for x in inputs])
                     for name in cls.FIELDS))


def mixing_beta(round_index, mixing_rounds=3):
    """Share of teacher-executed steps in a round."""
    if mixing_rounds <= 0:
        return 0.0
    return max(0.0, 1.0 - round_index / mixing_rounds)


class _StudentBase(nn.Module):

    def __init__(self, joint_count, latent_width, lows, highs, default_pose,
                 cfg):
        super().__init__()
        self.cfg = cfg
        self.joint_count = joint_count
        self.latent_width = latent_width
        self.obs_width = (HISTORY + 1) * proprio_width(joint_count)
        self.latent_norm = RunningNormalizer(latent_width)
        self.obs_norm = RunningNormalizer(self.obs_width)
        self.latent_encoder = MLP(
            [latent_width, cfg.encoder_width, cfg.encoder_width])
        lows = torch.as_tensor(np.asarray(lows), dtype=torch.float32)
        highs = torch.as_tensor(np.asarray(highs), dtype=torch.float32)
        self.register_buffer('lows', lows)
        self.register_buffer('highs', highs)
        self.register_buffer(
            'action_center',
            torch.as_tensor(np.asarray(default_pose), dtype=torch.float32))
        self.register_buffer('action_scale',
                             ((highs - lows) / 2).clamp(min=1e-3))

    def observe(self, inputs):
        latent, obs = inputs.tensors()
        if latent.shape[-1] != self.latent_width:
            raise ShapeError('Student Expects Latent Width {}, Got {}.'.format(
                self.latent_width, latent.shape[-1]))
        if obs.shape[-1] != self.obs_width:
            raise ShapeError('Student Expects {} Observation Values, Got {}.'
                             .format(self.obs_width, obs.shape[-1]))
        return latent, obs

    def update_normalizers(self, inputs):
        latent, obs = self.observe(inputs)
        with torch.no_grad():
            self.latent_norm.update(latent)
            self.obs_norm.update(obs)

    def features(self, inputs):
        latent, obs = self.observe(inputs)
        return torch.cat([self.latent_encoder(self.latent_norm(latent)),
                          self.obs_norm(obs)], dim=-1)

    def normalize_action(self, actions):
        return (actions - self.action_center) / self.action_scale

    def denormalize_action(self, x):
        return x * self.action_scale + self.action_center

    def clamp_action(self, actions):
        return torch.max(torch.min(actions, self.highs), self.lows)


class DiffusionStudent(_StudentBase):

    kind = 'diffusion'

    def __init__(self, joint_count, latent_width, lows, highs, default_pose,
                 cfg):
        super().__init__(joint_count, latent_width, lows, highs,
                         default_pose, cfg)
        self.condition = fan_in_init(nn.Linear(
            cfg.encoder_width + self.obs_width, cfg.cond_width))
        self.denoiser = build_denoiser(
            cfg.backbone, joint_count, cfg.cond_width, cfg.width, cfg.depth,
            cfg.heads, cfg.tokens)
        self.schedule = cfg.schedule()

    def conditions(self, inputs):
        return self.condition(self.features(inputs))

    def forward(self, x_t, t, condition):
        return self.denoiser(x_t, t, condition)


class MLPStudent(_StudentBase):

    kind = 'mlp'

    def __init__(self, joint_count, latent_width, lows, highs, default_pose,
                 cfg):
        super().__init__(joint_count, latent_width, lows, highs,
                         default_pose, cfg)
        self.body = MLP([cfg.encoder_width + self.obs_width]
                        + list(cfg.mlp_hidden) + [joint_count])

    def forward(self, inputs):
        return self.body(self.features(inputs))


def build_student(model, latent_width, cfg):
    lows, highs = model.joint_limits
    kind = DiffusionStudent if cfg.policy == 'diffusion' else MLPStudent
    return kind(model.joint_count, latent_width, lows, highs,
                model.default_pose, cfg)


def x0_loss(x_t, t, prediction, x0, schedule):
    """Squared error of the clean action recovered from a prediction."""
    recovered, _ = diffusion.split_prediction(x_t, t, prediction, schedule)
    return ((recovered - x0) ** 2).sum(dim=-1).mean()


def student_loss(student, inputs, actions, generator=None):
    if inputs.latent is None:
        raise MissingLatentError('Student Input Without A Latent.')
    actions = torch.as_tensor(np.asarray(actions), dtype=torch.float32)
    x0 = student.normalize_action(actions)
    if student.kind == 'mlp':
        return ((student(inputs) - x0) ** 2).sum(dim=-1).mean()
    schedule = student.schedule
    t = torch.randint(1, schedule.steps + 1, (x0.shape[0],),
                      generator=generator)
    noised = diffusion.forward_diffuse(x0, t, schedule, generator=generator)
    prediction = student(noised.x_t, t, student.conditions(inputs))
    return x0_loss(noised.x_t, t, prediction, x0, schedule)


def student_train_step(student, params, inputs, actions, generator=None):
    loss = student_loss(student, inputs, actions, generator)
    apply_loss(params, loss)
    return float(loss)


def sample_action(student, inputs, steps=None, seed=0, schedule=None):
    """
    Target joint positions for a batch of inputs; deterministic given the
    seed. The diffusion student starts its DDIM chain from seeded noise.
    """
    was_training = student.training
    student.eval()
    with torch.no_grad():
        if student.kind == 'mlp':
            x = student(inputs)
        else:
            schedule = schedule or student.schedule
            steps = steps or student.cfg.ddim_steps
            condition = student.conditions(inputs)
            generator = torch.Generator().manual_seed(int(seed))
            x_T = torch.randn((inputs.batch_size, student.joint_count),
                              generator=generator)
            x = diffusion.sample_chain(
                lambda x, t: student(x, t, condition), x_T, schedule, steps)
        actions = student.clamp_action(student.denormalize_action(x))
    student.train(was_training)
    return actions.numpy().astype(np.float64)


def student_inputs(env, latents, zero_latent=False):
    """Inputs for every environment; `latents` holds one sequence per clip."""
    frames = env.history.frames
    batch = frames.shape[0]
    history = frames[:, :-1].reshape(batch, -1)
    current = frames[:, -1]
    if latents is None:
        latent = None
    else:
        indices = env.frame_index()
        latent = np.stack([
            latents[int(clip)].token_for_frame(int(frame))
            for clip, frame in zip(env.clip_index, indices)
        ]).astype(np.float64)
        if zero_latent:
            latent = np.zeros_like(latent)
    return StudentInput(latent, history.copy(), current.copy())


def student_actor(student, latents, seed=0, steps=None, zero_latent=False):
    """Act function for clip rollouts driven by the student."""
    def act(env):
        inputs = student_inputs(env, latents, zero_latent)
        step_seed = int(seed) * 100003 + int(env.episode_length[0])
        return sample_action(student, inputs, steps, step_seed)
    return act


def generated_latents(generator, clips, seed=0, ddim_steps=None):
    """One generated sequence per clip, from the clip label."""
    sequences = []
    for index, clip in enumerate(clips):
        stride = generator.cfg.stride
        count = min(-(-clip.frame_count // stride), generator.cfg.max_tokens)
        sequences.append(generate_latents(generator, clip.label, count,
                                          seed + index, ddim_steps))
    return sequences


def zero_latents(latents):
    return [LatentSequence(np.zeros_like(seq.tokens), seq.stride, seq.source,
                           seq.label, seq.frame_rate) for seq in latents]


class AggregateBuffer:

    """Append-only store of (student input, teacher action) pairs."""

    def __init__(self):
        self._lock = threading.Lock()
        self._inputs = []
        self._actions = []
        self._size = 0
        self._cache = None

    def append(self, inputs, actions):
        actions = np.asarray(actions, dtype=np.float64)
        with self._lock:
            self._inputs.append(inputs)
            self._actions.append(actions)
            self._size += len(actions)
            self._cache = None

    def __len__(self):
        return self._size

    def _merged(self):
        with self._lock:
            if self._cache is None:
                self._cache = (StudentInput.concatenate(self._inputs),
                               np.concatenate(self._actions))
            return self._cache

    def sample(self, count, rng):
        if not self._size:
            raise ValueError('Empty Aggregate Buffer.')
        inputs, actions = self._merged()
        index = rng.choice(self._size, size=min(count, self._size),
                           replace=False)
        return inputs.select(index), actions[index]


def dagger_iteration(teacher, student, params, env, latents, round_index,
                     buffer, cfg, rng, generator=None):
    """
    One round: roll out with teacher actions mixed in at rate beta, label
    every visited state with the teacher action, then train the student on
    the aggregate.
    """
    beta = mixing_beta(round_index, cfg.mixing_rounds)
    finished = []
    executed_by_teacher = 0
    for step in range(cfg.horizon):
        obs = env.observations()
        with torch.no_grad():
            mean, _, _ = moe_act(teacher, obs)
        teacher_action = mean.numpy().astype(np.float64)
        inputs = student_inputs(env, latents)
        use_teacher = rng.uniform(size=env.num_envs) < beta
        if use_teacher.all():
            executed = teacher_action
        else:
            seed = int(rng.integers(2 ** 31 - 1))
            executed = np.where(use_teacher[:, None], teacher_action,
                                sample_action(student, inputs, seed=seed))
        executed_by_teacher += int(use_teacher.sum())
        buffer.append(inputs, teacher_action)
        student.update_normalizers(inputs)
        result = env.step(executed)
        finished.extend(result.finished)

    losses = []
    for step in range(cfg.train_steps):
        inputs, actions = buffer.sample(cfg.batch_size, rng)
        losses.append(student_train_step(student, params, inputs, actions,
                                         generator))
        if (step + 1) % cfg.log_interval == 0:
            logger.debug('student round=%d step=%d loss=%.6f', round_index,
                         step + 1, np.mean(losses[-cfg.log_interval:]))
    env.sampler.apply_failures()
    return {
        'round': round_index,
        'beta': beta,
        'buffer_size': len(buffer),
        'teacher_steps': executed_by_teacher,
        'mean_loss': float(np.mean(losses)) if losses else float('nan'),
        'episodes': len(finished),
        'success_rate': (float(np.mean([f[4] for f in finished]))
                         if finished else float('nan')),
    }


class DistillationTrainer:

    def __init__(self, model, teacher, clips, latents, cfg=None,
                 env_cfg=None, seed=0, weights=None, kernels=None,
                 settings=None, progress_path=None):
        if len(latents) != len(clips):
            raise MissingLatentError('One Latent Sequence Per Clip Is Needed.')
        self.model = model
        self.teacher = teacher.eval()
        for p in self.teacher.parameters():
            p.requires_grad_(False)
        self.clips = list(clips)
        self.latents = list(latents)
        self.cfg = cfg or StudentConfig()
        self.seed = seed
        torch.manual_seed(seed)
        self.student = build_student(model, self.latents[0].width, self.cfg)
        self.params = ParameterSet(self.student, self.cfg.optimizer())
        self.buffer = AggregateBuffer()
        self.rng = np.random.default_rng([seed, 4])
        self.generator = torch.Generator().manual_seed(seed)
        sampler = AdaptiveSampler(len(self.clips), enabled=False)
        self.env = TrackingEnv(model, self.clips, env_cfg or EnvConfig(),
                               seed, sampler, weights, kernels, settings)
        self.round = 0
        self.progress = ProgressLog(progress_path) if progress_path else None

    def run(self, rounds=None):
        history = []
        for _ in range(rounds if rounds is not None else self.cfg.rounds):
            stats = dagger_iteration(
                self.teacher, self.student, self.params, self.env,
                self.latents, self.round, self.buffer, self.cfg, self.rng,
                self.generator)
            history.append(stats)
            if self.progress is not None:
                self.progress.write(stats)
            logger.info('distill round=%d beta=%.3f buffer=%d loss=%.6f '
                        'success=%.3f', stats['round'], stats['beta'],
                        stats['buffer_size'], stats['mean_loss'],
                        stats['success_rate'])
            self.round += 1
        if self.progress is not None:
            self.progress.close()
        return history
