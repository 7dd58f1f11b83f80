"""
Test Plan.

proprio_frame, ProprioHistory:
    test_widths:
        ...
    test_frame_layout:
        roll and yaw slots hold zero.
    test_history_order:
        oldest frame first, reset clears selected rows.

ReferenceBatch, build_observations:
    test_terminal_flag:
        set at and past the last frame; indices are clamped.
    test_reference_block:
        keypoints are relative to the root.
    test_bundle_width:
        ...
"""

import unittest

import numpy as np

from latentloco.motion import FamilyRegister, synthesize_clip
from latentloco.observation import (
    HISTORY,
    ProprioHistory,
    ReferenceBatch,
    build_observations,
    proprio_frame,
    proprio_width,
    reference_block,
    teacher_input_width,
)
from latentloco.robot.model import load_robot
from latentloco.sim import standing_state


_MODEL = load_robot()


def _walk():
    family = FamilyRegister.get_family('walk')
    params = {'stride': 0.4, 'cadence': 1.0, 'amplitude': 0.4}
    return synthesize_clip(family, params, _MODEL, 50.0, 1.0)


class ProprioTest(unittest.TestCase):

    def test_widths(self):
        self.assertEqual(proprio_width(6), 24)
        self.assertEqual(teacher_input_width(6, 10), 10 * 24 + 29 + 36)

    def test_frame_layout(self):
        state = standing_state(_MODEL, 0.02)
        state.ang_vel[:] = 0.7
        state.pitch[:] = -0.2
        action = np.arange(6, dtype=np.float64)[None]
        frame = proprio_frame(state, action)
        self.assertEqual(frame.shape, (1, 24))
        self.assertTrue(np.allclose(frame[0, :6], _MODEL.default_pose))
        self.assertTrue(np.allclose(frame[0, 12:18], np.arange(6)))
        self.assertListEqual(frame[0, 18:21].tolist(), [0.0, 0.7, 0.0])
        self.assertListEqual(frame[0, 21:24].tolist(), [0.0, -0.2, 0.0])

    def test_history_order(self):
        history = ProprioHistory(2, 3, length=4)
        for value in range(1, 6):
            history.push(np.full((2, 3), float(value)))
        self.assertListEqual(history.frames[0, :, 0].tolist(),
                             [2.0, 3.0, 4.0, 5.0])
        self.assertEqual(history.stacked().shape, (2, 12))
        self.assertListEqual(history.stacked(last=2)[0].tolist(),
                             [4.0] * 3 + [5.0] * 3)
        history.reset([1])
        self.assertEqual(float(history.frames[1].sum()), 0.0)
        self.assertGreater(float(history.frames[0].sum()), 0.0)


class ReferenceBatchTest(unittest.TestCase):

    def test_terminal_flag(self):
        clip = _walk()
        last = clip.frame_count - 1
        reference = ReferenceBatch([clip, clip, clip], [0, last, last + 7])
        self.assertListEqual(reference.terminal.tolist(),
                             [False, True, True])
        self.assertListEqual(reference.frame_indices.tolist(),
                             [0, last, last])
        self.assertTrue(np.allclose(reference.joint_pos[2],
                                    clip.joint_pos[last]))

    def test_reference_block(self):
        clip = _walk()
        reference = ReferenceBatch([clip], [20])
        block = reference_block(reference)
        j, k = _MODEL.joint_count, _MODEL.keypoint_count
        keypoints = block[0, j:j + 2 * k].reshape(k, 2)
        expected = clip.keypoints[20, :, 0] - clip.root_pos[20, 0]
        self.assertTrue(np.allclose(keypoints[:, 0], expected, atol=1e-6))
        self.assertAlmostEqual(block[0, -1], clip.root_pos[20, 1], places=6)

    def test_bundle_width(self):
        clip = _walk()
        state = standing_state(_MODEL, 0.02)
        history = ProprioHistory(1, proprio_width(6))
        history.push(proprio_frame(state, _MODEL.default_pose[None]))
        keypoints = _MODEL.tree.keypoints(
            _MODEL.tree.frames(state.generalized()[0]))
        bundle = build_observations(history, state, keypoints,
                                    ReferenceBatch([clip], [0]))
        self.assertEqual(bundle.proprio.shape, (1, HISTORY * 24))
        self.assertEqual(bundle.teacher_input().shape,
                         (1, teacher_input_width(6, 10)))
        self.assertFalse(bundle.terminal[0])
