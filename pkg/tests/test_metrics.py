"""
Test Plan.

windowed_mean, judge_success, TrackingReport:
    test_windowed_mean:
        ...
    test_success_reasons:
        1. small deviations succeed.
        2. a sustained deviation fails.
        3. a large pitch fails.
        4. an empty series, expect failure.
    test_report_reason_invariant:
        a reason accompanies failures only.

mpjpe, mpkpe:
    test_joint_offset:
        ...
    test_resampled_reference:
        clips of different lengths are compared after resampling.

fid, diversity, retrieval_metrics:
    test_fid_of_identical_sets:
        ...
    test_fid_mean_shift:
        a shifted copy scores the squared shift.
    test_fid_needs_two_samples:
        expect failure.
    test_diversity:
        ...
    test_retrieval:
        1. matching order ranks every text first.
        2. swapped pairs drop R@1.
    test_unknown_label:
        expect failure.

PipelineComponents, pipeline_timing, generation_metrics:
    test_missing_components:
        expect failure.
    test_unknown_mode:
        expect failure.
    test_single_clip_generation_metrics:
        distribution metrics are NaN, retrieval is still reported.
"""

import math
import unittest

import numpy as np
import torch

from latentloco.generator import GeneratorConfig, build_generator
from latentloco.metrics import (
    FeatureSet,
    PipelineComponents,
    TrackingReport,
    UntrainedComponentError,
    diversity,
    fid,
    generation_metrics,
    hold_clip,
    judge_success,
    mpjpe,
    mpkpe,
    pipeline_timing,
    retrieval_metrics,
    text_features,
    windowed_mean,
)
from latentloco.motion import (
    CorpusSpec,
    LabelVocabulary,
    MotionClip,
    UnknownLabelError,
    compute_norm_stats,
    synthesize_corpus,
)
from latentloco.robot.model import load_robot


_MODEL = load_robot()


def _shifted_joints(clip, offset):
    return MotionClip(
        clip.frame_rate, clip.root_pos, clip.root_pitch, clip.root_vel,
        clip.root_ang_vel, clip.joint_pos + offset, clip.joint_vel,
        clip.keypoints, clip.label,
    )


class TrackingMetricTest(unittest.TestCase):

    def test_windowed_mean(self):
        self.assertTrue(np.allclose(windowed_mean([1, 2, 3, 4], 2),
                                    [1.0, 1.5, 2.5, 3.5]))
        self.assertTrue(np.allclose(windowed_mean([2, 4], 10), [2.0, 3.0]))

    def test_success_reasons(self):
        self.assertEqual(judge_success([0.1] * 10, [0.0] * 10),
                         (True, None))
        drifting = [0.1] * 5 + [1.0] * 30
        self.assertEqual(judge_success(drifting, [0.0] * 35),
                         (False, 'deviation'))
        self.assertEqual(judge_success([0.1] * 3, [0.0, 0.0, 1.0]),
                         (False, 'pitch'))
        with self.assertRaises(ValueError):
            judge_success([], [])

    def test_report_reason_invariant(self):
        with self.assertRaises(ValueError):
            TrackingReport('c', 'walk', True, 'deviation', 0.0, 0.0, [0.1])
        with self.assertRaises(ValueError):
            TrackingReport('c', 'walk', False, None, 0.0, 0.0, [0.1])
        row = TrackingReport('c', 'walk', False, 'pitch', 0.5, 0.25,
                             [0.1, 0.2]).record()
        self.assertEqual(row['reason'], 'pitch')
        self.assertEqual(row['steps'], 2)
        self.assertFalse(row['succ'])

    def test_joint_offset(self):
        clip = hold_clip(_MODEL, 10, 50.0)
        self.assertEqual(mpjpe(clip, clip), 0.0)
        shifted = _shifted_joints(clip, 0.1)
        self.assertAlmostEqual(mpjpe(shifted, clip), 0.1, places=5)
        self.assertEqual(mpkpe(shifted, clip), 0.0)

    def test_resampled_reference(self):
        short = hold_clip(_MODEL, 10, 50.0)
        long = hold_clip(_MODEL, 20, 50.0)
        self.assertAlmostEqual(mpjpe(short, long), 0.0, places=6)
        self.assertAlmostEqual(mpkpe(short, long), 0.0, places=6)


class GenerationMetricTest(unittest.TestCase):

    def setUp(self):
        self.features = FeatureSet(
            np.random.default_rng(0).standard_normal((200, 3)))

    def test_fid_of_identical_sets(self):
        self.assertAlmostEqual(fid(self.features, self.features), 0.0,
                               places=6)

    def test_fid_mean_shift(self):
        shift = np.array([1.0, 2.0, 2.0])
        shifted = FeatureSet(self.features.matrix + shift)
        self.assertAlmostEqual(fid(self.features, shifted), 9.0, places=6)

    def test_fid_needs_two_samples(self):
        with self.assertRaises(ValueError):
            fid(FeatureSet(np.ones((1, 3))), self.features)
        with self.assertRaises(ValueError):
            FeatureSet([[np.nan, 0.0]])

    def test_diversity(self):
        pair = FeatureSet([[0.0, 0.0], [3.0, 4.0]])
        self.assertAlmostEqual(diversity(pair, n_pairs=20), 5.0)
        same = FeatureSet(np.ones((4, 2)))
        self.assertEqual(diversity(same), 0.0)
        with self.assertRaises(ValueError):
            diversity(FeatureSet(np.ones((1, 2))))

    def test_retrieval(self):
        eye = np.eye(3)
        self.assertEqual(retrieval_metrics(FeatureSet(eye), FeatureSet(eye)),
                         (1.0, 1.0, 1.0, 0.0))
        swapped = FeatureSet(eye[[1, 0, 2]])
        top1, top2, top3, mm_dist = retrieval_metrics(FeatureSet(eye),
                                                      swapped)
        self.assertAlmostEqual(top1, 1.0 / 3.0)
        self.assertEqual((top2, top3), (1.0, 1.0))
        self.assertAlmostEqual(mm_dist, 2.0 * math.sqrt(2.0) / 3.0)

    def test_unknown_label(self):
        with self.assertRaises(UnknownLabelError):
            text_features(['jump'], {'walk': np.zeros(2)})


class PipelineTest(unittest.TestCase):

    def test_missing_components(self):
        parts = PipelineComponents(_MODEL)
        with self.assertRaisesRegex(UntrainedComponentError,
                                    'generator, student'):
            parts.require('latent')
        with self.assertRaises(UntrainedComponentError):
            pipeline_timing('explicit', 'walk', parts, trials=1)

    def test_unknown_mode(self):
        parts = PipelineComponents(_MODEL)
        with self.assertRaises(ValueError):
            pipeline_timing('hybrid', 'walk', parts)
        with self.assertRaises(ValueError):
            pipeline_timing('latent', 'walk', parts, trials=0)

    def test_single_clip_generation_metrics(self):
        spec = CorpusSpec(families=('stand',), clips_per_family=1,
                          duration=1.0)
        clips = synthesize_corpus(spec, 0, _MODEL)
        stats = compute_norm_stats(clips)
        cfg = GeneratorConfig(
            latent_width=4, stride=2, ae_width=8, width=16, layers=1,
            heads=2, head_width=16, head_depth=2, label_width=4,
            max_tokens=8, diffusion_steps=10, ddim_steps=5)
        torch.manual_seed(0)
        vocab = LabelVocabulary([clips[0].label], width=cfg.label_width)
        generator = build_generator(cfg, vocab, _MODEL.joint_count,
                                    _MODEL.keypoint_count, 50.0)
        metrics = generation_metrics(generator, stats, clips)
        self.assertEqual(metrics['clips'], 1)
        self.assertTrue(math.isnan(metrics['fid']))
        self.assertTrue(math.isnan(metrics['diversity']))
        self.assertEqual(metrics['r_precision_1'], 1.0)
        self.assertTrue(np.isfinite(metrics['mm_dist']))
