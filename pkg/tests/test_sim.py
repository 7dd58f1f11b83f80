"""
Test Plan.

PlanarSimulator:
    test_deterministic:
        two runs with equal inputs are bit-identical.
    test_free_fall:
        far above the ground, holding the pose, the root falls with g.
    test_invalid_targets:
        1. non-finite target.
        2. wrong joint count.
    test_delay_applies_old_target:
        with one step of delay, the first step applies the initial pose.
    test_long_delay_is_served:
        a 60 ms delay holds the initial pose for three steps, then applies
        the first command.
    test_delay_beyond_history:
        a delay longer than the target history, expect failure.
    test_standing_contact:
        resting on the ground produces normal forces and an unmasked
        center of pressure.

standing_state, compute_com_cop:
    test_lowest_contact_on_ground:
        ...
    test_cop_masked_without_contact:
        ...

draw_randomization, apply_push, delay_steps:
    test_nominal_draw:
        ...
    test_draw_ranges:
        ...
    test_push_only_on_interval:
        ...
    test_delay_steps:
        ...
"""

import unittest

import numpy as np

from latentloco.robot.model import load_robot
from latentloco.kinematics import GRAVITY
from latentloco.sim import (
    FRICTION_RANGE,
    DelayError,
    RandomizationDraw,
    PlanarSimulator,
    apply_push,
    compute_com_cop,
    delay_steps,
    draw_randomization,
    standing_state,
)


_MODEL = load_robot()


class PlanarSimulatorTest(unittest.TestCase):

    def setUp(self):
        self.sim = PlanarSimulator(_MODEL, 0.002, decimation=10)

    def _run(self, steps=5):
        state = standing_state(_MODEL, self.sim.dt, batch=2)
        draw = draw_randomization(3, count=2, pushes=False)
        target = _MODEL.default_pose + 0.1
        for _ in range(steps):
            state = self.sim.step(state, np.stack([target, target]), draw)
        return state

    def test_deterministic(self):
        first, second = self._run(), self._run()
        self.assertTrue(np.array_equal(first.root_pos, second.root_pos))
        self.assertTrue(np.array_equal(first.joint_vel, second.joint_vel))
        self.assertTrue(np.array_equal(first.contact_forces,
                                       second.contact_forces))
        self.assertEqual(int(first.step_count[0]), 5)
        self.assertAlmostEqual(float(first.time[0]), 0.1)

    def test_free_fall(self):
        state = standing_state(_MODEL, self.sim.dt)
        state.root_pos[:, 1] += 10.0
        draw = RandomizationDraw.nominal()
        result = self.sim.step(state, _MODEL.default_pose[None], draw)
        self.assertAlmostEqual(float(result.root_vel[0, 1]),
                               -GRAVITY * self.sim.dt, places=6)
        self.assertAlmostEqual(float(result.root_vel[0, 0]), 0.0, places=9)
        self.assertTrue(np.allclose(result.joint_pos, state.joint_pos,
                                    atol=1e-9))
        self.assertEqual(float(np.abs(result.contact_forces).sum()), 0.0)

    def test_invalid_targets(self):
        state = standing_state(_MODEL, self.sim.dt)
        draw = RandomizationDraw.nominal()
        bad = _MODEL.default_pose.copy()
        bad[2] = np.nan
        with self.assertRaises(ValueError):
            self.sim.step(state, bad[None], draw)
        with self.assertRaises(ValueError):
            self.sim.step(state, np.zeros((1, 5)), draw)

    def test_delay_applies_old_target(self):
        state = standing_state(_MODEL, self.sim.dt)
        delayed = RandomizationDraw.nominal()
        delayed.delay_ms[:] = 20.0
        moved = self.sim.step(state, _MODEL.default_pose[None] + 0.3,
                              delayed)
        held = self.sim.step(state, _MODEL.default_pose[None],
                             RandomizationDraw.nominal())
        self.assertTrue(np.array_equal(moved.joint_pos, held.joint_pos))
        self.assertTrue(np.array_equal(moved.root_pos, held.root_pos))

    def test_long_delay_is_served(self):
        # 60 ms at a 20 ms control step lags three steps.
        state = standing_state(_MODEL, self.sim.dt, max_delay_ms=60.0)
        self.assertEqual(state.target_history.shape[1], 4)
        delayed = RandomizationDraw.nominal()
        delayed.delay_ms[:] = 60.0
        nominal = RandomizationDraw.nominal()
        moved, held = state, state
        target = _MODEL.default_pose[None] + 0.3
        for _ in range(3):
            moved = self.sim.step(moved, target, delayed)
            held = self.sim.step(held, _MODEL.default_pose[None], nominal)
        self.assertTrue(np.array_equal(moved.joint_pos, held.joint_pos))
        moved = self.sim.step(moved, target, delayed)
        held = self.sim.step(held, target, nominal)
        self.assertTrue(np.array_equal(moved.joint_pos, held.joint_pos))
        self.assertTrue(np.array_equal(moved.root_pos, held.root_pos))

    def test_delay_beyond_history(self):
        state = standing_state(_MODEL, self.sim.dt)
        delayed = RandomizationDraw.nominal()
        delayed.delay_ms[:] = 60.0
        with self.assertRaises(DelayError):
            self.sim.step(state, _MODEL.default_pose[None], delayed)

    def test_standing_contact(self):
        state = standing_state(_MODEL, self.sim.dt)
        draw = RandomizationDraw.nominal()
        for _ in range(3):
            state = self.sim.step(state, _MODEL.default_pose[None], draw)
        self.assertGreater(float(state.contact_forces[:, :, 1].sum()), 0.0)
        _, cop = compute_com_cop(state, _MODEL)
        self.assertFalse(np.ma.is_masked(cop))
        self.assertTrue(state.is_finite())


class StandingStateTest(unittest.TestCase):

    def test_lowest_contact_on_ground(self):
        state = standing_state(_MODEL, 0.02, batch=3, x=1.5)
        self.assertEqual(state.batch_size, 3)
        points = PlanarSimulator(_MODEL, 0.002).keypoints(state)
        contact = _MODEL.contact_keypoints()
        lowest = points[:, contact, 1].min(axis=-1)
        self.assertTrue(np.allclose(lowest, 0.0, atol=1e-12))
        self.assertTrue(np.allclose(state.root_pos[:, 0], 1.5))

    def test_cop_masked_without_contact(self):
        state = standing_state(_MODEL, 0.02)
        com, cop = compute_com_cop(state, _MODEL)
        self.assertTrue(cop.mask.all())
        self.assertEqual(float(com[0, 1]), 0.0)


class RandomizationTest(unittest.TestCase):

    def test_nominal_draw(self):
        draw = draw_randomization(0, count=4, enabled=False)
        self.assertTrue(np.array_equal(draw.friction, np.ones(4)))
        self.assertTrue(np.array_equal(draw.delay_ms, np.zeros(4)))
        self.assertTrue(np.isinf(draw.push_interval).all())

    def test_draw_ranges(self):
        draw = draw_randomization(5, count=64)
        self.assertTrue((draw.friction >= FRICTION_RANGE[0]).all())
        self.assertTrue((draw.friction <= FRICTION_RANGE[1]).all())
        self.assertTrue((draw.gain_multiplier >= 0.75).all())
        self.assertTrue((draw.delay_ms <= 40.0).all())
        again = draw_randomization(5, count=64)
        self.assertTrue(np.array_equal(draw.friction, again.friction))

    def test_push_only_on_interval(self):
        state = standing_state(_MODEL, 0.02)
        draw = draw_randomization(1, count=1)
        self.assertIs(apply_push(state, draw, 4.0), state)
        self.assertIs(apply_push(state, draw, 0.0), state)
        pushed = apply_push(state, draw, 8.0)
        kick = pushed.root_vel - state.root_vel
        self.assertAlmostEqual(float(np.linalg.norm(kick)), 0.5)
        no_push = draw_randomization(1, count=1, pushes=False)
        self.assertIs(apply_push(state, no_push, 8.0), state)

    def test_delay_steps(self):
        self.assertEqual(int(delay_steps(20.0, 0.02)), 1)
        self.assertEqual(int(delay_steps(40.0, 0.02)), 2)
        self.assertEqual(int(delay_steps(0.0, 0.02)), 0)
