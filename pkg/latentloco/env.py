"""
Batched motion-tracking environment.

Every environment tracks one reference clip from a start frame chosen by
the adaptive sampler. An episode terminates when the root drifts further
from the reference than the curriculum threshold, when the root pitch
passes the pitch limit, or when the state stops being finite; it is
truncated at the end of the clip.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .motion import MotionClip
from .observation import (
    ProprioHistory,
    ReferenceBatch,
    build_observations,
    proprio_frame,
    proprio_width,
    HISTORY,
)
from .reward import (
    FeetTracker,
    RewardContext,
    RewardKernels,
    RewardSettings,
    RewardWeights,
    compute_reward,
)
from .sampling import AdaptiveSampler
from .sim import (
    DELAY_RANGE_MS,
    FRICTION_RANGE,
    GAIN_RANGE,
    PUSH_INTERVAL,
    PUSH_VELOCITY,
    PlanarSimulator,
    RandomizationDraw,
    SimState,
    apply_push,
    draw_randomization,
    reset_from_reference,
)


logger = logging.getLogger(__name__)


@dataclass
class EnvConfig:

    num_envs: int = 16
    physics_dt: float = 0.002
    decimation: int = 10
    contact_stiffness: float = 2e4
    contact_damping: float = 2e2
    friction_damping: float = 5e2
    randomize: bool = True
    pushes: bool = True
    friction_range: tuple = FRICTION_RANGE
    gain_range: tuple = GAIN_RANGE
    delay_range_ms: tuple = DELAY_RANGE_MS
    push_interval: float = PUSH_INTERVAL
    push_velocity: float = PUSH_VELOCITY
    pitch_limit: float = 0.8
    termination_threshold: float = 1.5

    def __post_init__(self):
        if self.num_envs < 1:
            raise ValueError('At Least One Environment Is Needed.')
        if self.physics_dt <= 0:
            raise ValueError('Physics Step Must Be Positive.')
        low, high = self.delay_range_ms
        if not 0 <= low <= high:
            raise ValueError('Delay Range Must Satisfy 0 <= Low <= High.')


class StepResult:

    def __init__(self, observations, reward, terminated, truncated, terms,
                 finished):
        self.observations = observations
        self.reward = reward
        self.terminated = terminated
        self.truncated = truncated
        self.terms = terms
        # (env, clip index, length, return, success) per finished episode.
        self.finished = finished

    @property
    def done(self):
        return self.terminated | self.truncated


class TrackingEnv:

    def __init__(self, model, clips, cfg=None, seed=0, sampler=None,
                 weights=None, kernels=None, settings=None):
        if not clips:
            raise ValueError('Tracking Needs At Least One Clip.')
        self.model = model
        self.clips = list(clips)
        self.cfg = cfg or EnvConfig()
        self.seed = int(seed)
        self.sim = PlanarSimulator(
            model, self.cfg.physics_dt, self.cfg.decimation,
            self.cfg.contact_stiffness, self.cfg.contact_damping,
            self.cfg.friction_damping)
        self.sampler = sampler or AdaptiveSampler(len(self.clips))
        self.weights = weights or RewardWeights()
        self.kernels = kernels or RewardKernels()
        self.settings = settings or RewardSettings()
        self.threshold = self.cfg.termination_threshold
        self.rng = np.random.default_rng([self.seed, 2])

        batch = self.cfg.num_envs
        joints = model.joint_count
        self.clip_index = np.zeros(batch, dtype=np.int64)
        self.start_frame = np.zeros(batch, dtype=np.int64)
        self.clip_time = np.zeros(batch)
        self.episode_length = np.zeros(batch, dtype=np.int64)
        self.episode_return = np.zeros(batch)
        self.episodes_started = 0
        self.history = ProprioHistory(batch, proprio_width(joints),
                                      HISTORY + 1)
        self.feet = FeetTracker(batch, len(model.feet))
        self.last_action = np.zeros((batch, joints))
        self.state = None
        self.draw = None
        self.reset()

    @property
    def num_envs(self):
        return self.cfg.num_envs

    @property
    def dt(self):
        return self.sim.dt

    def current_clips(self):
        return [self.clips[i] for i in self.clip_index]

    def frame_index(self):
        rates = np.array([clip.frame_rate for clip in self.current_clips()])
        offset = np.rint(self.clip_time * rates).astype(np.int64)
        return self.start_frame + offset

    def set_threshold(self, threshold):
        self.threshold = float(threshold)

    def _draw(self):
        seed = [self.seed, 3, self.episodes_started]
        self.episodes_started += 1
        cfg = self.cfg
        return draw_randomization(
            seed, 1, cfg.randomize, cfg.pushes, cfg.friction_range,
            cfg.gain_range, cfg.delay_range_ms, cfg.push_interval,
            cfg.push_velocity)

    def start(self, ids, clip_indices, frames):
        """Begin episodes for `ids` at the given clips and frames."""
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        states, draws = [], []
        for env, clip_index, frame in zip(ids, clip_indices, frames):
            clip = self.clips[int(clip_index)]
            phase = frame / (clip.frame_count - 1) \
                if clip.frame_count > 1 else 0.0
            states.append(reset_from_reference(
                clip, phase, self.model, self.dt, self.cfg.delay_range_ms[1]))
            draws.append(self._draw())
        fresh = SimState.concatenate(states)
        fresh_draw = RandomizationDraw(**{
            name: np.concatenate([getattr(d, name) for d in draws])
            for name in ('friction', 'gain_multiplier', 'delay_ms',
                         'push_interval', 'push_velocity', 'push_seed')
        })
        if self.state is None:
            self.state, self.draw = fresh, fresh_draw
        else:
            self.state.assign(ids, fresh)
            self.draw.assign(ids, fresh_draw)
        self.clip_index[ids] = clip_indices
        self.start_frame[ids] = frames
        self.clip_time[ids] = 0.0
        self.episode_length[ids] = 0
        self.episode_return[ids] = 0.0
        self.feet.reset(ids)
        self.history.reset(ids)
        self.last_action[ids] = self.state.joint_pos[ids]
        self.history.frames[ids, -1] = proprio_frame(
            self.state.select(ids), self.last_action[ids])

    def reset(self, ids=None):
        if ids is None:
            ids = np.arange(self.num_envs)
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        clip_indices, frames = [], []
        for _ in ids:
            clip_index = int(self.rng.integers(len(self.clips)))
            clip = self.clips[clip_index]
            _, frame, _ = self.sampler.sample(clip_index, clip.frame_count,
                                              self.rng)
            clip_indices.append(clip_index)
            frames.append(frame)
        self.start(ids, clip_indices, frames)
        return self.observations()

    def reference(self):
        return ReferenceBatch(self.current_clips(), self.frame_index())

    def observations(self):
        return build_observations(self.history, self.state,
                                  self.sim.keypoints(self.state),
                                  self.reference())

    def root_deviation(self, reference=None):
        if reference is None:
            reference = self.reference()
        return np.linalg.norm(self.state.root_pos - reference.root_pos,
                              axis=-1)

    def step(self, actions, auto_reset=True):
        actions = np.asarray(actions, dtype=np.float64).reshape(
            self.num_envs, -1)
        prev_state = self.state
        state = self.sim.step(prev_state, actions, self.draw)
        state = apply_push(state, self.draw, state.time)
        finite = np.array([state.select([i]).is_finite()
                           for i in range(self.num_envs)])
        if not finite.all():
            # keep the last finite state for those environments.
            bad = np.flatnonzero(~finite)
            state.assign(bad, prev_state.select(bad))
            logger.debug('non-finite state envs=%s', bad.tolist())
        self.state = state
        self.clip_time += self.dt
        self.episode_length += 1

        reference = self.reference()
        keypoints = self.sim.keypoints(state)
        deviation = self.root_deviation(reference)
        terminated = (deviation > self.threshold) | \
            (np.abs(state.pitch) > self.cfg.pitch_limit) | ~finite
        truncated = reference.terminal & ~terminated
        first_contact, air_time = self.feet.update(
            self.model, state.contact_forces, self.dt)
        ctx = RewardContext(
            self.model, state, prev_state, actions, self.last_action,
            reference, keypoints, terminated, self.dt, first_contact,
            air_time)
        reward, terms = compute_reward(ctx, self.weights, self.kernels,
                                       self.settings)
        self.episode_return += reward
        self.last_action = actions.copy()
        self.history.push(proprio_frame(state, actions))

        finished = []
        done = terminated | truncated
        for env in np.flatnonzero(done):
            clip_index = int(self.clip_index[env])
            if terminated[env]:
                self.sampler.record_failure(
                    clip_index, int(reference.frame_indices[env]),
                    self.clips[clip_index].frame_count)
            finished.append((int(env), clip_index,
                             int(self.episode_length[env]),
                             float(self.episode_return[env]),
                             bool(truncated[env])))
        if auto_reset and done.any():
            self.reset(np.flatnonzero(done))
        return StepResult(self.observations(), reward, terminated, truncated,
                          terms, finished)


class TrackResult:

    """One clip tracked from its first frame by a single environment."""

    def __init__(self, executed, reference, deviations, pitches, rewards,
                 terminated):
        self.executed = executed
        self.reference = reference
        self.deviations = deviations
        self.pitches = pitches
        self.rewards = rewards
        self.terminated = terminated

    @property
    def steps(self):
        return len(self.deviations)


def rollout_clip(model, clip, act, cfg=None, seed=0, weights=None,
                 kernels=None, max_steps=None, hold_after_termination=False):
    """
    Track `clip` from frame 0 until it ends or the episode terminates.
    `act(env)` returns the (1, J) target joint positions of the next step.
    With `hold_after_termination` the executed clip keeps the final state
    until the reference ends, so both clips cover the whole reference.
    """
    cfg = cfg or EnvConfig(num_envs=1, randomize=False, pushes=False)
    if cfg.num_envs != 1:
        raise ValueError('Clip Rollouts Use One Environment.')
    sampler = AdaptiveSampler(1, enabled=False)
    env = TrackingEnv(model, [clip], cfg, seed, sampler, weights, kernels)
    env.start([0], [0], [0])

    records = {name: [] for name in MotionClip.ARRAYS}
    deviations, pitches, rewards, frames = [], [], [], []
    terminated = False

    def record():
        state = env.state
        records['root_pos'].append(state.root_pos[0].copy())
        records['root_pitch'].append(float(state.pitch[0]))
        records['root_vel'].append(state.root_vel[0].copy())
        records['root_ang_vel'].append(float(state.ang_vel[0]))
        records['joint_pos'].append(state.joint_pos[0].copy())
        records['joint_vel'].append(state.joint_vel[0].copy())
        records['keypoints'].append(env.sim.keypoints(state)[0])
        frames.append(int(env.frame_index()[0]))

    record()
    limit = max_steps or int(np.ceil(clip.duration / env.dt)) + 1
    for _ in range(limit):
        result = env.step(act(env), auto_reset=False)
        deviations.append(float(env.root_deviation()[0]))
        pitches.append(float(env.state.pitch[0]))
        rewards.append(float(result.reward[0]))
        record()
        if result.terminated[0]:
            terminated = True
            break
        if result.truncated[0]:
            break
    if terminated and hold_after_termination:
        while frames[-1] < clip.frame_count - 1:
            env.clip_time += env.dt
            record()

    executed = MotionClip(
        1.0 / env.dt,
        label=clip.label, clip_id=clip.clip_id, family=clip.family,
        **{name: np.asarray(values) for name, values in records.items()}
    )
    reference = MotionClip(
        1.0 / env.dt,
        label=clip.label, clip_id=clip.clip_id, family=clip.family,
        **{name: getattr(clip, name)[
            np.minimum(frames, clip.frame_count - 1)]
           for name in MotionClip.ARRAYS}
    )
    return TrackResult(executed, reference, np.asarray(deviations),
                       np.asarray(pitches), np.asarray(rewards), terminated)
