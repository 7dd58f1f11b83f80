"""
Test Plan.

parse_robot_description, load_robot:
    test_default_robot:
        the bundled biped has 6 tagged lower-body joints, 10 keypoints and
        two feet.
    test_error_cases:
        every case under cases/robot raises RobotSyntaxError carrying the
        expected message.
    test_errors_are_cleaned_up:
        a valid description parses after a failed one.
    test_structure_errors:
        1. unknown parent.
        2. joint declared before its parent.
        3. invalid limits.
        4. foot on unknown keypoint.
    test_missing_file:
        expect failure.

KinematicTree:
    test_zero_pose_keypoints:
        ...
    test_pitch_rotates_the_body:
        ...
    test_keypoint_jacobians:
        jacobians match central differences.
    test_mass_matrix:
        symmetric and positive definite.
"""

import configparser
import os
import unittest

import numpy as np

from latentloco.robot.model import (default_robot_path, load_robot,
                                    parse_robot_description)
from latentloco.robot.utils import ErrorCollector, RobotSyntaxError


_VALID = """
robot tiny
link torso mass 10 inertia 0.5
link leg mass 2 inertia 0.1 com 0 -0.25
joint hip parent torso child leg anchor 0 0 limit -1 1 torque 50 kp 100 kd 2 lower
keypoint toe on leg at 0 -0.5
foot only points toe
"""


class _GetCasePath:

    def _get_file_path(self, rel_path):
        test_dir = os.path.join(
            os.path.dirname(__file__),
            'cases/robot',
        )
        return os.path.join(test_dir, rel_path)

    def _load_test_case(self, name):
        config = configparser.ConfigParser(interpolation=None)
        with open(self._get_file_path(name)) as f:
            config.read_file(f)
        section = config['Test']
        return section['description'], section['error']


class RobotParserTest(unittest.TestCase, _GetCasePath):

    def setUp(self):
        ErrorCollector.clean_up()

    def test_default_robot(self):
        model = load_robot()
        self.assertEqual(model.name, 'biped')
        self.assertEqual(model.joint_count, 6)
        self.assertEqual(model.keypoint_count, 10)
        self.assertEqual(model.root_name(), 'torso')
        self.assertListEqual(model.lower_body_joints(), list(range(6)))
        self.assertEqual(len(model.feet), 2)
        self.assertEqual(len(model.contact_keypoints()), 4)
        self.assertAlmostEqual(model.total_mass, 39.0)
        self.assertEqual(load_robot(default_robot_path()).joint_count, 6)

    def test_error_cases(self):
        cases = ['illegal_character', 'missing_key', 'arity',
                 'unexpected', 'not_allowed', 'not_a_number']
        for case in cases:
            text, error = self._load_test_case(case)
            with self.assertRaises(RobotSyntaxError) as context:
                parse_robot_description(text)
            joined = '; '.join(context.exception.messages)
            self.assertIn(error, joined, case)

    def test_errors_are_cleaned_up(self):
        text, _ = self._load_test_case('illegal_character')
        with self.assertRaises(RobotSyntaxError):
            parse_robot_description(text)
        self.assertListEqual(ErrorCollector.messages(), [])
        model = parse_robot_description(_VALID)
        self.assertEqual(model.name, 'tiny')
        self.assertEqual(model.action_dim, 1)

    def test_structure_errors(self):
        out_of_order = _VALID + (
            'link shin mass 1 inertia 0.1\n'
            'link foot mass 1 inertia 0.1\n'
            'joint ankle parent shin child foot limit -1 1 torque 5 kp 1 kd 1\n'
            'joint knee parent leg child shin limit -1 1 torque 5 kp 1 kd 1\n'
        )
        cases = [
            _VALID.replace('parent torso', 'parent pelvis'),
            out_of_order,
            _VALID.replace('limit -1 1', 'limit 1 -1'),
            _VALID.replace('points toe', 'points heel'),
        ]
        for text in cases:
            with self.assertRaises(ValueError):
                parse_robot_description(text)

    def test_missing_file(self):
        with self.assertRaisesRegex(FileNotFoundError, 'Not Exists'):
            load_robot(self._get_file_path('no_such.robot'))


class KinematicTreeTest(unittest.TestCase):

    def setUp(self):
        self.model = load_robot()
        self.tree = self.model.tree

    def _q(self, pitch=0.0, joints=None):
        joints = np.zeros(6) if joints is None else joints
        return self.tree.pack(np.zeros((1, 2)), np.array([pitch]),
                              joints[None])

    def test_zero_pose_keypoints(self):
        points = self.tree.keypoints(self.tree.frames(self._q()))[0]
        index = self.model.keypoint_index
        self.assertTrue(np.allclose(points[index['head']], [0.0, 0.5]))
        self.assertTrue(np.allclose(points[index['knee_l']], [0.0, -0.4]))
        self.assertTrue(np.allclose(points[index['ankle_r']], [0.0, -0.8]))
        self.assertTrue(np.allclose(points[index['toe_l']], [0.15, -0.86]))

    def test_pitch_rotates_the_body(self):
        frames = self.tree.frames(self._q(pitch=np.pi / 2))
        points = self.tree.keypoints(frames)[0]
        knee = points[self.model.keypoint_index['knee_l']]
        self.assertTrue(np.allclose(knee, [0.4, 0.0]))

    def test_keypoint_jacobians(self):
        rng = np.random.default_rng(0)
        q = self._q(0.2, rng.uniform(-0.5, 0.5, 6))
        points, jacobians = self.tree.keypoint_jacobians(self.tree.frames(q))
        h = 1e-6
        for n in range(self.tree.dof):
            up, down = q.copy(), q.copy()
            up[0, n] += h
            down[0, n] -= h
            numeric = (self.tree.keypoints(self.tree.frames(up))
                       - self.tree.keypoints(self.tree.frames(down))) / (2 * h)
            self.assertTrue(np.allclose(numeric[0], jacobians[0, :, :, n],
                                        atol=1e-6))

    def test_mass_matrix(self):
        q = self._q(0.1, self.model.default_pose)
        _, mass_matrix, _, _ = self.tree.dynamics_terms(
            q, np.zeros((1, self.tree.dof)))
        self.assertTrue(np.allclose(mass_matrix[0], mass_matrix[0].T))
        self.assertTrue((np.linalg.eigvalsh(mass_matrix[0]) > 0).all())
        self.assertAlmostEqual(mass_matrix[0, 0, 0], self.model.total_mass)
