"""
Test Plan.

SettingsLoader, RunConfig.load:
    test_minimal:
        only sim.dt given, every other key takes its default.
    test_bundled_default:
        the packaged default.cfg loads.
    test_invalid_cases:
        every case fails with a ConfigError:
        1. missing sim.dt.
        2. unknown key.
        3. unknown section.
        4. non-numeric value.
        5. text before the first section header.
        6. inverted range.
        7. unknown preset.
        8. missing file.
    test_presets:
        1. paper raises the batch size.
        2. an explicit key beats the preset.
    test_relative_paths:
        paths resolve against the config file directory.

component_hash, override:
    test_hash_is_stable:
        ...
    test_hash_tracks_dependencies:
        a teacher key changes the teacher hash only.
    test_override_is_typed:
        1. string values are converted.
        2. a bad override, expect failure.
    test_component_builders:
        ...
    test_optimizer_defaults:
        every optimizer defaults to lr 1e-4 and weight decay 0.01.
"""

import os
import unittest

import latentloco
from latentloco.settings import ConfigError, RunConfig


class _GetCasePath:

    def get_case_path(self, name):
        return os.path.join(os.path.dirname(__file__), 'cases', 'settings',
                            name)

    def load(self, name):
        return RunConfig.load(self.get_case_path(name))


class RunConfigTest(_GetCasePath, unittest.TestCase):

    def test_minimal(self):
        cfg = self.load('minimal.cfg')
        self.assertEqual(cfg.get('sim', 'dt'), 0.002)
        self.assertEqual(cfg.get('run', 'preset'), 'desk')
        self.assertEqual(cfg.get('run', 'batch_size'), 256)
        self.assertEqual(cfg.get('teacher', 'hidden'), (512, 256, 128))
        self.assertIs(cfg.get('randomization', 'enabled'), True)
        self.assertEqual(cfg.get('data', 'walk_stride'), (0.2, 0.5))

    def test_bundled_default(self):
        path = os.path.join(os.path.dirname(latentloco.__file__), 'data',
                            'default.cfg')
        cfg = RunConfig.load(path)
        self.assertEqual(cfg.get('sim', 'dt'), 0.002)
        self.assertEqual(cfg.get('teacher', 'experts'), 5)
        self.assertEqual(cfg.get('data', 'families'),
                         ('walk', 'hop', 'squat', 'kick', 'stand'))

    def test_invalid_cases(self):
        for name in ('missing_dt.cfg', 'unknown_key.cfg',
                     'unknown_section.cfg', 'bad_value.cfg',
                     'malformed.cfg', 'bad_range.cfg',
                     'unknown_preset.cfg', 'not_there.cfg'):
            with self.subTest(case=name):
                with self.assertRaises(ConfigError):
                    self.load(name)

    def test_missing_dt_message(self):
        with self.assertRaisesRegex(ConfigError, 'sim.dt'):
            self.load('missing_dt.cfg')

    def test_presets(self):
        self.assertEqual(self.load('paper.cfg').get('run', 'batch_size'),
                         4096)
        self.assertEqual(self.load('paper.cfg').env_config().num_envs, 4096)
        overridden = self.load('paper_override.cfg')
        self.assertEqual(overridden.get('run', 'batch_size'), 64)

    def test_relative_paths(self):
        cfg = self.load('relative.cfg')
        base = os.path.dirname(os.path.abspath(
            self.get_case_path('relative.cfg')))
        self.assertEqual(cfg.robot_path(),
                         os.path.join(base, 'robots/mine.robot'))
        self.assertEqual(cfg.out_dir(), os.path.join(base, 'results'))
        self.assertEqual(cfg.manifest_path(),
                         os.path.join(base, 'results', 'data',
                                      'manifest.cfg'))
        self.assertEqual(cfg.student_config().policy, 'mlp')


class ComponentHashTest(_GetCasePath, unittest.TestCase):

    def setUp(self):
        self.cfg = self.load('minimal.cfg')

    def test_hash_is_stable(self):
        again = self.load('minimal.cfg')
        for kind in ('autoencoder', 'generator', 'teacher', 'student'):
            self.assertEqual(self.cfg.component_hash(kind),
                             again.component_hash(kind))
        self.assertEqual(len(self.cfg.component_hash('teacher')), 64)
        with self.assertRaises(ConfigError):
            self.cfg.component_hash('critic')

    def test_hash_tracks_dependencies(self):
        changed = self.cfg.override('teacher', 'experts', 3)
        self.assertNotEqual(changed.component_hash('teacher'),
                            self.cfg.component_hash('teacher'))
        self.assertNotEqual(changed.component_hash('student'),
                            self.cfg.component_hash('student'))
        self.assertEqual(changed.component_hash('generator'),
                         self.cfg.component_hash('generator'))
        # the original is untouched.
        self.assertEqual(self.cfg.get('teacher', 'experts'), 5)

    def test_override_is_typed(self):
        changed = self.cfg.override('run', 'seed', '7')
        self.assertEqual(changed.get('run', 'seed'), 7)
        self.assertEqual(changed.component_hash('teacher'),
                         self.cfg.component_hash('teacher'))
        with self.assertRaises(ConfigError):
            self.cfg.override('sim', 'dt', -1.0)

    def test_component_builders(self):
        env = self.cfg.env_config()
        self.assertEqual(env.physics_dt, 0.002)
        self.assertEqual(env.termination_threshold, 1.5)
        evaluation = self.cfg.evaluation_env_config()
        self.assertEqual(evaluation.num_envs, 1)
        self.assertFalse(evaluation.randomize)
        self.assertEqual(evaluation.termination_threshold, float('inf'))
        self.assertEqual(self.cfg.teacher_config().experts, 5)
        self.assertEqual(self.cfg.reward_kernels().keypoint, 0.3)
        self.assertEqual(self.cfg.reward_settings()
                         .contact_force_threshold, 350.0)
        spec = self.cfg.corpus_spec()
        self.assertEqual(spec.clips_per_family, 4)

    def test_optimizer_defaults(self):
        bundled = RunConfig.load(os.path.join(
            os.path.dirname(latentloco.__file__), 'data', 'default.cfg'))
        for cfg in (self.cfg, bundled):
            optimizers = {
                'generator': cfg.optimizer_config(),
                'teacher': cfg.teacher_config().optimizer(),
                'student': cfg.student_config().optimizer(),
            }
            for kind, optimizer in optimizers.items():
                with self.subTest(kind=kind):
                    self.assertEqual(optimizer.lr, 1e-4)
                    self.assertEqual(optimizer.weight_decay, 0.01)
        changed = self.cfg.override('teacher', 'weight_decay', '0.0')
        self.assertEqual(changed.teacher_config().optimizer().weight_decay,
                         0.0)
        self.assertNotEqual(changed.component_hash('teacher'),
                            self.cfg.component_hash('teacher'))
