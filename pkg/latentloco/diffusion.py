"""
Gaussian diffusion shared by the generator head and the student policy.

Step 0 is the clean signal (alpha_bar[0] = 1); steps 1..T add noise with
variances betas[1..T]. Both noise prediction ('ddpm') and velocity
prediction ('velocity') are supported; sampling is deterministic DDIM.
"""

import numpy as np
import torch


OBJECTIVES = ('ddpm', 'velocity')

MIN_ALPHA_BAR = 1e-8


class ScheduleError(ValueError):
    pass


class DiffusionSchedule:

    def __init__(self, betas, objective='ddpm', strict=True):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ScheduleError('Schedule Needs At Least One Step.')
        if objective not in OBJECTIVES:
            raise ScheduleError('Unknown Objective {!r}.'.format(objective))
        if strict and not ((betas > 0) & (betas < 1)).all():
            raise ScheduleError('Noise Variances Must Lie In (0, 1).')
        if not ((betas >= 0) & (betas < 1)).all():
            raise ScheduleError('Noise Variances Must Lie In [0, 1).')
        self.objective = objective
        self.steps = betas.size
        self.betas = np.concatenate([[0.0], betas])
        self.alpha_bars = np.cumprod(1.0 - self.betas)

    @classmethod
    def linear(cls, steps=50, beta_start=1e-4, beta_end=0.02,
               objective='ddpm'):
        return cls(np.linspace(beta_start, beta_end, steps), objective)

    @classmethod
    def from_betas(cls, betas, objective='ddpm', strict=False):
        return cls(betas, objective, strict)

    def alpha_bar(self, t):
        t = np.asarray(t)
        if ((t < 0) | (t > self.steps)).any():
            raise ScheduleError('Step {} Outside [0, {}].'.format(
                t.tolist(), self.steps))
        return self.alpha_bars[t]

    def check_training_step(self, t):
        t = np.asarray(t)
        if ((t < 1) | (t > self.steps)).any():
            raise ScheduleError('Step {} Outside [1, {}].'.format(
                t.tolist(), self.steps))

    def __repr__(self):
        return 'DiffusionSchedule(steps={}, objective={})'.format(
            self.steps, self.objective)


def _as_int(t):
    if isinstance(t, torch.Tensor):
        return t.detach().cpu().numpy().astype(np.int64)
    return np.asarray(t, dtype=np.int64)


def _coefficient(values, t, like):
    """values[t] shaped to broadcast against `like` (batch-first)."""
    index = _as_int(t)
    picked = np.asarray(values)[index]
    if isinstance(like, torch.Tensor):
        picked = torch.as_tensor(picked, dtype=like.dtype, device=like.device)
        while picked.dim() and picked.dim() < like.dim():
            picked = picked.unsqueeze(-1)
        return picked
    picked = np.asarray(picked, dtype=np.result_type(like, np.float64))
    while picked.ndim and picked.ndim < np.ndim(like):
        picked = picked[..., None]
    return picked


def _sqrt(value):
    if isinstance(value, torch.Tensor):
        return torch.sqrt(value)
    return np.sqrt(value)


class NoisedAction:

    def __init__(self, x_t, t, noise, x0):
        self.x_t = x_t
        self.t = t
        self.noise = noise
        self.x0 = x0

    def __repr__(self):
        return 'NoisedAction(t={})'.format(self.t)


def standard_noise(like, generator=None):
    if isinstance(like, torch.Tensor):
        return torch.randn(like.shape, generator=generator, dtype=like.dtype)
    rng = generator if generator is not None else np.random.default_rng()
    return rng.standard_normal(np.shape(like))


def forward_diffuse(x0, t, schedule, noise=None, generator=None):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise."""
    schedule.check_training_step(_as_int(t))
    if noise is None:
        noise = standard_noise(x0, generator)
    alpha_bar = _coefficient(schedule.alpha_bars, t, x0)
    x_t = _sqrt(alpha_bar) * x0 + _sqrt(1.0 - alpha_bar) * noise
    return NoisedAction(x_t, t, noise, x0)


def recover_x0(x_t, t, eps_hat, schedule):
    alpha_bar = schedule.alpha_bar(_as_int(t))
    if (np.asarray(alpha_bar) < MIN_ALPHA_BAR).any():
        raise ScheduleError('Cumulative Product Below {} At Step {}.'.format(
            MIN_ALPHA_BAR, _as_int(t).tolist()))
    alpha_bar = _coefficient(schedule.alpha_bars, t, x_t)
    return (x_t - _sqrt(1.0 - alpha_bar) * eps_hat) / _sqrt(alpha_bar)


def velocity_target(x0, noise, t, schedule):
    alpha_bar = _coefficient(schedule.alpha_bars, t, x0)
    return _sqrt(alpha_bar) * noise - _sqrt(1.0 - alpha_bar) * x0


def x0_from_velocity(x_t, velocity, t, schedule):
    alpha_bar = _coefficient(schedule.alpha_bars, t, x_t)
    return _sqrt(alpha_bar) * x_t - _sqrt(1.0 - alpha_bar) * velocity


def noise_from_velocity(x_t, velocity, t, schedule):
    alpha_bar = _coefficient(schedule.alpha_bars, t, x_t)
    return _sqrt(1.0 - alpha_bar) * x_t + _sqrt(alpha_bar) * velocity


def training_target(noised, schedule):
    if schedule.objective == 'velocity':
        return velocity_target(noised.x0, noised.noise, noised.t, schedule)
    return noised.noise


def split_prediction(x_t, t, prediction, schedule):
    """(x0, noise) implied by a network prediction under the objective."""
    if schedule.objective == 'velocity':
        return (x0_from_velocity(x_t, prediction, t, schedule),
                noise_from_velocity(x_t, prediction, t, schedule))
    return recover_x0(x_t, t, prediction, schedule), prediction


def _renoise(x0, noise, t_prev, schedule):
    alpha_bar = _coefficient(schedule.alpha_bars, t_prev, x0)
    return _sqrt(alpha_bar) * x0 + _sqrt(1.0 - alpha_bar) * noise


def ddim_step(x_t, t, t_prev, prediction, schedule):
    """
    Deterministic DDIM update (eta = 0) from step t to t_prev; `prediction`
    is the network output under the schedule's objective.
    """
    if not (int(t) > int(t_prev) >= 0):
        raise ScheduleError('DDIM Needs t > t_prev >= 0, Got {} -> {}.'
                            .format(t, t_prev))
    x0, noise = split_prediction(x_t, t, prediction, schedule)
    return _renoise(x0, noise, t_prev, schedule)


def ddim_timesteps(total, steps):
    if not 1 <= steps <= total:
        raise ScheduleError('DDIM Steps Must Lie In [1, {}].'.format(total))
    return [int(t) for t in np.round(np.linspace(total, 0, steps + 1))]


def sample_chain(predict, x_T, schedule, steps):
    """
    Run the DDIM reverse chain from x_T. `predict(x, t)` returns the network
    prediction under the schedule's objective.
    """
    x = x_T
    times = ddim_timesteps(schedule.steps, steps)
    for t, t_prev in zip(times[:-1], times[1:]):
        x = ddim_step(x, t, t_prev, predict(x, t), schedule)
    return x
