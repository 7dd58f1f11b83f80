"""
Test Plan.

TrackingEnv:
    test_reset:
        observation widths, start frames inside their clips.
    test_termination_on_drift:
        a root moved past the threshold terminates the episode and reports
        a failure to the sampler.
    test_no_auto_reset:
        ...
    test_non_finite_action:
        expect failure.
    test_empty_clip_list:
        expect failure.
    test_configured_delay_range:
        1. a 60 ms delay sizes the target history to four steps and steps.
        2. an inverted range, expect failure.

rollout_clip:
    test_standing_reaches_clip_end:
        holding the reference pose tracks a standing clip to its end.
    test_hold_after_termination:
        the executed clip still covers the whole reference.
    test_single_environment_only:
        expect failure.
"""

import unittest

import numpy as np

from latentloco.env import EnvConfig, TrackingEnv, rollout_clip
from latentloco.motion import FamilyRegister, synthesize_clip
from latentloco.observation import teacher_input_width
from latentloco.robot.model import load_robot
from latentloco.sampling import CasConfig


_MODEL = load_robot()


def _stand():
    return synthesize_clip(FamilyRegister.get_family('stand'), {}, _MODEL,
                           50.0, 1.0, 'stand-0000')


def _hold_reference(env):
    return env.reference().joint_pos


class TrackingEnvTest(unittest.TestCase):

    def setUp(self):
        self.clips = [_stand()]
        self.cfg = EnvConfig(num_envs=2, randomize=False, pushes=False)
        self.env = TrackingEnv(_MODEL, self.clips, self.cfg, seed=1,
                               sampler=CasConfig(intervals=5).build(1))

    def test_reset(self):
        bundle = self.env.reset()
        self.assertEqual(bundle.teacher_input().shape,
                         (2, teacher_input_width(6, 10)))
        frames = self.env.frame_index()
        self.assertTrue(((frames >= 0) & (frames < 51)).all())
        self.assertAlmostEqual(self.env.dt, 0.02)

    def test_termination_on_drift(self):
        self.env.state.root_pos[0, 0] += 2.0
        result = self.env.step(_hold_reference(self.env))
        self.assertTrue(result.terminated[0])
        self.assertFalse(result.truncated[0])
        env_id, clip_index, length, _, success = result.finished[0]
        self.assertEqual((env_id, clip_index, length, success),
                         (0, 0, 1, False))
        self.assertLess(float(result.terms['termination'][0]), 0.0)
        self.assertEqual(self.env.sampler.apply_failures(), 1)
        # the environment was restarted.
        self.assertEqual(int(self.env.episode_length[0]), 0)

    def test_no_auto_reset(self):
        self.env.state.root_pos[1, 0] -= 2.0
        result = self.env.step(_hold_reference(self.env), auto_reset=False)
        self.assertTrue(result.done[1])
        self.assertEqual(int(self.env.episode_length[1]), 1)

    def test_non_finite_action(self):
        actions = _hold_reference(self.env).copy()
        actions[0, 0] = np.inf
        with self.assertRaises(ValueError):
            self.env.step(actions)

    def test_empty_clip_list(self):
        with self.assertRaises(ValueError):
            TrackingEnv(_MODEL, [], self.cfg)

    def test_configured_delay_range(self):
        cfg = EnvConfig(num_envs=2, randomize=True, pushes=False,
                        delay_range_ms=(60.0, 60.0))
        env = TrackingEnv(_MODEL, self.clips, cfg, seed=3)
        self.assertEqual(env.state.target_history.shape[1], 4)
        self.assertTrue(np.array_equal(env.draw.delay_ms, [60.0, 60.0]))
        result = env.step(_hold_reference(env))
        self.assertTrue(np.isfinite(result.reward).all())
        with self.assertRaises(ValueError):
            EnvConfig(delay_range_ms=(50.0, 20.0))


class RolloutClipTest(unittest.TestCase):

    def test_standing_reaches_clip_end(self):
        clip = _stand()
        result = rollout_clip(_MODEL, clip, _hold_reference)
        self.assertFalse(result.terminated)
        self.assertEqual(result.steps, clip.frame_count - 1)
        self.assertEqual(result.executed.frame_count, clip.frame_count)
        self.assertEqual(result.reference.frame_count, clip.frame_count)
        self.assertLess(float(result.deviations.max()), 0.1)
        self.assertEqual(result.executed.clip_id, 'stand-0000')

    def test_hold_after_termination(self):
        clip = _stand()
        cfg = EnvConfig(num_envs=1, randomize=False, pushes=False,
                        termination_threshold=-1.0)
        result = rollout_clip(_MODEL, clip, _hold_reference, cfg,
                              hold_after_termination=True)
        self.assertTrue(result.terminated)
        self.assertEqual(result.steps, 1)
        self.assertEqual(result.executed.frame_count, clip.frame_count)
        held = result.executed.root_pos
        self.assertTrue(np.array_equal(held[1], held[-1]))

        short = rollout_clip(_MODEL, clip, _hold_reference, cfg)
        self.assertEqual(short.executed.frame_count, 2)

    def test_single_environment_only(self):
        with self.assertRaises(ValueError):
            rollout_clip(_MODEL, _stand(), _hold_reference,
                         EnvConfig(num_envs=2))
