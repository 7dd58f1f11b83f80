"""
Episode start selection: causal adaptive sampling over clip intervals, and
the termination curriculum.

A failure in interval t raises the restart probability of t and of the s
intervals before it, by p * gamma^(t - i), then the distribution is
renormalized.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerState:

    probabilities: np.ndarray
    gamma: float = 0.8
    horizon: int = 3
    increment: float = 0.005

    @classmethod
    def uniform(cls, intervals=10, gamma=0.8, horizon=3, increment=0.005):
        if intervals < 1:
            raise ValueError('At Least One Interval Is Needed.')
        if not 0.0 < gamma < 1.0:
            raise ValueError('Decay Base Must Lie In (0, 1).')
        return cls(np.full(intervals, 1.0 / intervals), gamma, horizon,
                   increment)

    @property
    def intervals(self):
        return len(self.probabilities)


def cas_update(state, failure_interval=None):
    """New state after observing a failure in `failure_interval`."""
    if failure_interval is None or state.increment == 0:
        return state
    t = int(failure_interval)
    if not 0 <= t < state.intervals:
        raise ValueError('Failure Interval {} Outside [0, {}).'.format(
            t, state.intervals))
    delta = np.zeros(state.intervals)
    for i in range(max(0, t - state.horizon), t + 1):
        delta[i] = state.gamma ** (t - i) * state.increment
    updated = state.probabilities + delta
    return replace(state, probabilities=updated / updated.sum())


def interval_bounds(frame_count, intervals):
    """[start, stop) frame ranges of equal-length intervals."""
    intervals = min(intervals, frame_count)
    edges = [(i * frame_count) // intervals for i in range(intervals + 1)]
    return list(zip(edges[:-1], edges[1:]))


def interval_of(frame, frame_count, intervals):
    if frame_count >= intervals:
        starts = [(i * frame_count) // intervals for i in range(1, intervals)]
        return int(np.searchsorted(starts, int(frame), side='right'))
    return min(intervals - 1, int(frame) * intervals // frame_count)


def sample_intervals(state, count, rng):
    return rng.choice(state.intervals, size=count, p=state.probabilities)


def cas_sample_start(state, frame_count, rng):
    """
    (interval, frame, phase). A clip with fewer frames than intervals is
    split into one interval per frame; each drawn interval maps onto it
    proportionally.
    """
    interval = int(sample_intervals(state, 1, rng)[0])
    intervals = min(state.intervals, frame_count)
    local = interval * intervals // state.intervals
    start, stop = interval_bounds(frame_count, intervals)[local]
    frame = int(rng.integers(start, stop))
    phase = frame / (frame_count - 1) if frame_count > 1 else 0.0
    return interval, frame, phase


def uniform_start(frame_count, rng):
    """Plain reference state initialization."""
    phase = float(rng.uniform(0.0, 1.0))
    frame = int(round(phase * (frame_count - 1)))
    return None, frame, phase


def curriculum_threshold(iteration, initial=1.5, decay=0.9995, floor=0.3):
    return max(floor, initial * decay ** max(0, iteration))


class AdaptiveSampler:

    """One SamplerState per clip, updated by the learner between rounds."""

    def __init__(self, clip_count, intervals=10, gamma=0.8, horizon=3,
                 increment=0.005, enabled=True):
        self.enabled = enabled
        self.states = [
            SamplerState.uniform(intervals, gamma, horizon, increment)
            for _ in range(clip_count)
        ]
        self._pending = []

    def sample(self, clip_index, frame_count, rng):
        if not self.enabled:
            return uniform_start(frame_count, rng)
        return cas_sample_start(self.states[clip_index], frame_count, rng)

    def record_failure(self, clip_index, frame, frame_count):
        if not self.enabled:
            return
        state = self.states[clip_index]
        self._pending.append(
            (clip_index, interval_of(frame, frame_count, state.intervals)))

    def apply_failures(self):
        for clip_index, interval in self._pending:
            self.states[clip_index] = cas_update(self.states[clip_index],
                                                 interval)
        count = len(self._pending)
        self._pending = []
        return count

    def resize(self, clip_count):
        template = self.states[0]
        self.states = [
            SamplerState.uniform(template.intervals, template.gamma,
                                 template.horizon, template.increment)
            for _ in range(clip_count)
        ]
        self._pending = []


@dataclass(frozen=True)
class CasConfig:

    enabled: bool = True
    intervals: int = 10
    gamma: float = 0.8
    horizon: int = 3
    increment: float = 0.005

    def build(self, clip_count):
        return AdaptiveSampler(clip_count, self.intervals, self.gamma,
                               self.horizon, self.increment, self.enabled)


@dataclass(frozen=True)
class CurriculumConfig:

    initial: float = 1.5
    decay: float = 0.9995
    floor: float = 0.3

    def threshold(self, iteration):
        return curriculum_threshold(iteration, self.initial, self.decay,
                                    self.floor)
