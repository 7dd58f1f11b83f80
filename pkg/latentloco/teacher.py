"""
Privileged mixture-of-experts teacher and its PPO trainer.

Each expert maps the teacher observation to target joint positions; the
gate mixes the expert means into one action mean, and a shared
state-independent log-std drives exploration. After an initial training
run the corpus is refined: clips the teacher tracks with a combined
keypoint and lower-body joint error above the threshold are dropped and
training continues on the rest.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn
from torch.distributions import Normal

from .env import EnvConfig, TrackingEnv, rollout_clip
from .nets import (
    MLP,
    OptimizerConfig,
    ParameterSet,
    ShapeError,
    apply_loss,
)
from .observation import teacher_input_width
from .report import ProgressLog
from .sampling import CasConfig, CurriculumConfig


logger = logging.getLogger(__name__)


class EmptyRolloutError(ValueError):
    pass


@dataclass
class TeacherConfig:

    experts: int = 5
    hidden: tuple = (512, 256, 128)
    init_log_std: float = -1.0
    lr: float = 1e-4
    weight_decay: float = 0.01
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    value_coef: float = 1.0
    entropy_coef: float = 0.005
    epochs: int = 5
    minibatches: int = 4
    max_grad_norm: float = 1.0
    horizon: int = 24
    iterations: int = 2000
    log_interval: int = 50
    alpha: float = 0.5
    beta: float = 0.5
    filter_threshold: float = 0.6
    refine: bool = True
    refine_iterations: int = 500

    def optimizer(self):
        return OptimizerConfig(lr=self.lr, weight_decay=self.weight_decay,
                               max_grad_norm=self.max_grad_norm)


class RunningNormalizer(nn.Module):

    """Observation standardization with running mean and variance."""

    def __init__(self, width, clip=5.0, std_floor=1e-2):
        super().__init__()
        self.clip = clip
        self.std_floor = std_floor
        self.register_buffer('mean', torch.zeros(width))
        self.register_buffer('var', torch.ones(width))
        self.register_buffer('count', torch.tensor(1e-4))

    def update(self, x):
        x = x.reshape(-1, x.shape[-1]).to(self.mean.dtype)
        batch_mean = x.mean(dim=0)
        batch_var = x.var(dim=0, unbiased=False)
        batch_count = x.shape[0]
        total = self.count + batch_count
        delta = batch_mean - self.mean
        self.mean += delta * batch_count / total
        m2 = (self.var * self.count + batch_var * batch_count
              + delta ** 2 * self.count * batch_count / total)
        self.var.copy_(m2 / total)
        self.count.copy_(total)

    def forward(self, x):
        std = self.var.sqrt().clamp(min=self.std_floor)
        return ((x - self.mean) / std).clamp(-self.clip, self.clip)


class MoEPolicy(nn.Module):

    def __init__(self, obs_width, action_width, experts=5,
                 hidden=(512, 256, 128), default_pose=None,
                 init_log_std=-1.0):
        super().__init__()
        if experts < 1:
            raise ValueError('At Least One Expert Is Needed.')
        self.obs_width = obs_width
        self.action_width = action_width
        sizes = [obs_width] + list(hidden)
        self.normalizer = RunningNormalizer(obs_width)
        self.experts = nn.ModuleList(
            MLP(sizes + [action_width]) for _ in range(experts))
        self.gate = MLP(sizes + [experts])
        self.critic = MLP(sizes + [1])
        self.log_std = nn.Parameter(torch.full((action_width,),
                                               float(init_log_std)))
        bias = torch.zeros(action_width) if default_pose is None else \
            torch.as_tensor(np.asarray(default_pose), dtype=torch.float32)
        with torch.no_grad():
            for expert in self.experts:
                last = expert.layers[-1]
                last.weight.mul_(0.01)
                last.bias.copy_(bias)

    @property
    def expert_count(self):
        return len(self.experts)

    def forward(self, obs, gate_override=None):
        if obs.shape[-1] != self.obs_width:
            raise ShapeError('Teacher Expects {} Inputs, Got {}.'.format(
                self.obs_width, obs.shape[-1]))
        x = self.normalizer(obs)
        actions = torch.stack([expert(x) for expert in self.experts], dim=-2)
        if gate_override is None:
            probs = torch.softmax(self.gate(x), dim=-1)
        else:
            probs = torch.as_tensor(gate_override, dtype=actions.dtype)
            probs = probs.expand(actions.shape[:-1])
        mean = (probs[..., None] * actions).sum(dim=-2)
        value = self.critic(x)[..., 0]
        return mean, probs, value

    def std(self):
        return self.log_std.exp()

    def distribution(self, mean):
        return Normal(mean, self.std().expand_as(mean))


def _teacher_tensor(obs):
    if hasattr(obs, 'teacher_input'):
        obs = obs.teacher_input()
    return torch.as_tensor(np.asarray(obs), dtype=torch.float32)


def moe_act(policy, obs, gate_override=None):
    """(action mean, gate probabilities, value) for a batch of observations."""
    return policy(_teacher_tensor(obs), gate_override)


def build_teacher(model, cfg):
    return MoEPolicy(
        teacher_input_width(model.joint_count, model.keypoint_count),
        model.joint_count, cfg.experts, cfg.hidden, model.default_pose,
        cfg.init_log_std,
    )


def teacher_actor(policy):
    """Deterministic act function for clip rollouts."""
    def act(env):
        with torch.no_grad():
            mean, _, _ = moe_act(policy, env.observations())
        return mean.numpy().astype(np.float64)
    return act


class RolloutBatch:

    """Time-major (T, B, ...) storage of one collection round."""

    def __init__(self, observations, actions, log_probs, rewards, values,
                 dones, last_values):
        self.observations = observations
        self.actions = actions
        self.log_probs = log_probs
        self.rewards = np.asarray(rewards, dtype=np.float64)
        self.values = np.asarray(values, dtype=np.float64)
        self.dones = np.asarray(dones, dtype=bool)
        self.last_values = np.asarray(last_values, dtype=np.float64)

    @property
    def size(self):
        return int(self.rewards.size)


def compute_gae(rewards, values, dones, last_values, gamma=0.99, lam=0.95):
    """Advantages and returns; a done step does not bootstrap."""
    steps = rewards.shape[0]
    advantages = np.zeros_like(rewards)
    running = np.zeros_like(last_values)
    for t in reversed(range(steps)):
        next_value = last_values if t == steps - 1 else values[t + 1]
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * alive - values[t]
        running = delta + gamma * lam * alive * running
        advantages[t] = running
    return advantages, advantages + values


def normalize_advantages(advantages, eps=1e-8):
    advantages = np.asarray(advantages, dtype=np.float64)
    return (advantages - advantages.mean()) / (advantages.std() + eps)


def clipped_surrogate(ratio, advantages, clip=0.2):
    clipped = torch.clamp(ratio, 1.0 - clip, 1.0 + clip)
    return torch.min(ratio * advantages, clipped * advantages)


def ppo_update(policy, params, batch, cfg, generator=None):
    if batch.size == 0:
        raise EmptyRolloutError('Empty Rollout.')
    advantages, returns = compute_gae(batch.rewards, batch.values,
                                      batch.dones, batch.last_values,
                                      cfg.gamma, cfg.lam)
    advantages = torch.as_tensor(normalize_advantages(advantages).ravel(),
                                 dtype=torch.float32)
    returns = torch.as_tensor(returns.ravel(), dtype=torch.float32)
    obs = batch.observations.reshape(-1, batch.observations.shape[-1])
    actions = batch.actions.reshape(-1, batch.actions.shape[-1])
    old_log_probs = batch.log_probs.reshape(-1)

    count = obs.shape[0]
    minibatches = max(1, min(cfg.minibatches, count))
    totals = {'policy_loss': 0.0, 'value_loss': 0.0, 'entropy': 0.0,
              'clip_fraction': 0.0, 'grad_norm': 0.0}
    updates = 0
    for _ in range(cfg.epochs):
        order = torch.randperm(count, generator=generator)
        for index in order.chunk(minibatches):
            mean, _, value = policy(obs[index])
            dist = policy.distribution(mean)
            log_prob = dist.log_prob(actions[index]).sum(dim=-1)
            entropy = dist.entropy().sum(dim=-1).mean()
            ratio = torch.exp(log_prob - old_log_probs[index])
            policy_loss = -clipped_surrogate(ratio, advantages[index],
                                             cfg.clip).mean()
            value_loss = ((returns[index] - value) ** 2).mean()
            loss = (policy_loss + cfg.value_coef * value_loss
                    - cfg.entropy_coef * entropy)
            totals['grad_norm'] += apply_loss(params, loss)
            totals['policy_loss'] += float(policy_loss)
            totals['value_loss'] += float(value_loss)
            totals['entropy'] += float(entropy)
            totals['clip_fraction'] += float(
                ((ratio - 1.0).abs() > cfg.clip).float().mean())
            updates += 1
    return {name: value / updates for name, value in totals.items()}


def combine_error(keypoint_error, joint_error, alpha=0.5, beta=0.5):
    return alpha * keypoint_error + beta * joint_error


def clip_errors(executed, reference, model):
    """(mean keypoint error in m, mean lower-body joint error in rad)."""
    keypoint = np.linalg.norm(
        executed.keypoints.astype(np.float64)
        - reference.keypoints.astype(np.float64), axis=-1).mean()
    lower = model.lower_body_joints() or list(range(model.joint_count))
    joint = np.abs(executed.joint_pos[:, lower].astype(np.float64)
                   - reference.joint_pos[:, lower].astype(np.float64)).mean()
    return float(keypoint), float(joint)


def tracking_error(policy, clip, model, alpha=0.5, beta=0.5, env_cfg=None,
                   seed=0):
    track = rollout_clip(model, clip, teacher_actor(policy), env_cfg, seed,
                         hold_after_termination=True)
    keypoint, joint = clip_errors(track.executed, track.reference, model)
    return combine_error(keypoint, joint, alpha, beta)


def filter_dataset(policy, clips, model, threshold=0.6, alpha=0.5, beta=0.5,
                   env_cfg=None, seed=0):
    """Clips whose tracking error does not exceed `threshold`, and all errors."""
    errors = [tracking_error(policy, clip, model, alpha, beta, env_cfg, seed)
              for clip in clips]
    kept = [clip for clip, error in zip(clips, errors) if error <= threshold]
    for clip, error in zip(clips, errors):
        if error > threshold:
            logger.info('filtered clip=%s error=%.4f', clip.clip_id, error)
    return kept, errors


class TeacherTrainer:

    def __init__(self, model, clips, cfg=None, env_cfg=None, cas=None,
                 curriculum=None, seed=0, weights=None, kernels=None,
                 settings=None, progress_path=None):
        self.model = model
        self.cfg = cfg or TeacherConfig()
        self.env_cfg = env_cfg or EnvConfig()
        self.cas = cas or CasConfig()
        self.curriculum = curriculum or CurriculumConfig()
        self.seed = seed
        self.weights = weights
        self.kernels = kernels
        self.settings = settings
        torch.manual_seed(seed)
        self.policy = build_teacher(model, self.cfg)
        self.params = ParameterSet(self.policy, self.cfg.optimizer())
        self.generator = torch.Generator().manual_seed(seed)
        self.iteration = 0
        self.history = []
        self.progress = ProgressLog(progress_path) if progress_path else None
        self.set_clips(clips)

    def set_clips(self, clips):
        self.clips = list(clips)
        if not self.clips:
            raise ValueError('Teacher Training Needs At Least One Clip.')
        sampler = self.cas.build(len(self.clips))
        self.env = TrackingEnv(self.model, self.clips, self.env_cfg,
                               self.seed + self.iteration, sampler,
                               self.weights, self.kernels, self.settings)
        self._obs = self.env.observations()

    def collect(self):
        cfg, env, policy = self.cfg, self.env, self.policy
        observations, actions, log_probs = [], [], []
        rewards, values, dones = [], [], []
        term_sums = {}
        finished = []
        obs = self._obs
        for _ in range(cfg.horizon):
            x = _teacher_tensor(obs)
            with torch.no_grad():
                policy.normalizer.update(x)
                mean, _, value = policy(x)
                noise = torch.randn(mean.shape, generator=self.generator)
                action = mean + policy.std() * noise
                log_prob = policy.distribution(mean).log_prob(action) \
                    .sum(dim=-1)
            result = env.step(action.numpy().astype(np.float64))
            observations.append(x)
            actions.append(action)
            log_probs.append(log_prob)
            rewards.append(result.reward)
            values.append(value.numpy())
            dones.append(result.done)
            for name, term in result.terms.items():
                term_sums[name] = term_sums.get(name, 0.0) + float(term.mean())
            finished.extend(result.finished)
            obs = result.observations
        self._obs = obs
        with torch.no_grad():
            _, _, last_value = policy(_teacher_tensor(obs))
        batch = RolloutBatch(
            torch.stack(observations), torch.stack(actions),
            torch.stack(log_probs), np.stack(rewards), np.stack(values),
            np.stack(dones), last_value.numpy(),
        )
        stats = {
            'mean_reward': float(batch.rewards.mean()),
            'episodes': len(finished),
            'success_rate': (float(np.mean([f[4] for f in finished]))
                             if finished else float('nan')),
        }
        for name, total in term_sums.items():
            stats['term_' + name] = total / cfg.horizon
        return batch, stats

    def train(self, iterations):
        history = []
        for _ in range(iterations):
            threshold = self.curriculum.threshold(self.iteration)
            self.env.set_threshold(threshold)
            batch, stats = self.collect()
            failures = self.env.sampler.apply_failures()
            diagnostics = ppo_update(self.policy, self.params, batch,
                                     self.cfg, self.generator)
            row = {'iteration': self.iteration, 'threshold': threshold,
                   'failures': failures}
            row.update(stats)
            row.update(diagnostics)
            history.append(row)
            self.history.append(row)
            if self.progress is not None:
                self.progress.write(row)
            if (self.iteration + 1) % self.cfg.log_interval == 0:
                logger.info(
                    'teacher iteration=%d reward=%.4f success=%.3f '
                    'threshold=%.3f', self.iteration, row['mean_reward'],
                    row['success_rate'], threshold)
            self.iteration += 1
        return history

    def evaluation_env(self):
        return replace(self.env_cfg, num_envs=1, randomize=False,
                       pushes=False,
                       termination_threshold=self.curriculum.floor)

    def refine(self):
        kept, errors = filter_dataset(
            self.policy, self.clips, self.model, self.cfg.filter_threshold,
            self.cfg.alpha, self.cfg.beta, self.evaluation_env(), self.seed)
        logger.info('refinement kept=%d of %d', len(kept), len(self.clips))
        if not kept:
            raise RuntimeError('Every Clip Was Filtered Out.')
        self.set_clips(kept)
        return kept, errors

    def run(self):
        self.train(self.cfg.iterations)
        if self.cfg.refine:
            self.refine()
            self.train(self.cfg.refine_iterations)
        if self.progress is not None:
            self.progress.close()
        return self.clips
