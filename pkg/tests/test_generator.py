"""
Test Plan.

mask_ratio, masked_count, build_mask_plan:
    test_schedule_ends:
        tau = 0 masks everything, tau = 1 nothing.
    test_rounding:
        ...
    test_out_of_range:
        expect failure.
    test_plan:
        masked positions are unique and sorted.

CausalAutoencoder:
    test_token_count:
        ...
    test_causal_tokens:
        changing later frames leaves earlier tokens unchanged.
    test_short_clip:
        expect failure.

LatentSequence:
    test_file_reload:
        ...
    test_token_for_frame:
        the last token is held past the end.

MotionGenerator, generate_latents:
    test_generate_shape:
        ...
    test_same_seed_same_tokens:
        ...
    test_prefix_is_stable:
        a shorter request yields a prefix of a longer one.
    test_shared_denoising_step:
        every token runs the shared DDIM step once per sampling step.
    test_token_limits:
        1. zero tokens.
        2. more than the generator limit.
    test_unknown_label:
        expect failure.
    test_head_backbones:
        the mlp and dit heads both train a step and generate.
    test_no_masked_token:
        the loss is skipped.

GeneratorTrainer:
    test_short_training:
        losses are finite; decoding generated latents gives a clip.
"""

import os
import tempfile
import unittest
from dataclasses import replace
from unittest import mock

import numpy as np
import torch

from latentloco import diffusion
from latentloco.generator import (
    CausalAutoencoder,
    GeneratorConfig,
    GeneratorTrainer,
    LatentSequence,
    build_generator,
    build_mask_plan,
    decode_latents,
    encode_motion,
    generate_latents,
    generator_loss,
    generator_train_step,
    load_latents,
    mask_ratio,
    masked_count,
    save_latents,
)
from latentloco.motion import (
    CorpusSpec,
    DimensionError,
    LabelVocabulary,
    UnknownLabelError,
    compute_norm_stats,
    synthesize_corpus,
)
from latentloco.nets import (
    AdaLNDenoiser,
    AdaLNTransformerDenoiser,
    OptimizerConfig,
    ParameterSet,
    ShapeError,
)
from latentloco.robot.model import load_robot


_MODEL = load_robot()

_TINY = GeneratorConfig(
    latent_width=4, stride=2, ae_width=8, width=16, layers=1, heads=2,
    head_width=16, head_depth=2, label_width=4, max_tokens=8,
    diffusion_steps=10, ddim_steps=5,
)


def _tiny_generator(phrases=('stand still', 'squat in place'), cfg=_TINY):
    torch.manual_seed(0)
    vocab = LabelVocabulary(list(phrases), width=cfg.label_width)
    return build_generator(cfg, vocab, _MODEL.joint_count,
                           _MODEL.keypoint_count, 50.0)


class _FixedTau:

    def __init__(self, tau):
        self.tau = tau
        self.rng = np.random.default_rng(0)

    def uniform(self):
        return self.tau

    def choice(self, *args, **kwargs):
        return self.rng.choice(*args, **kwargs)


class MaskScheduleTest(unittest.TestCase):

    def test_schedule_ends(self):
        self.assertEqual(mask_ratio(0.0), 1.0)
        self.assertAlmostEqual(mask_ratio(1.0), 0.0)
        self.assertEqual(masked_count(0.0, 10), 10)
        self.assertEqual(masked_count(1.0, 10), 0)

    def test_rounding(self):
        # cos(pi / 4) * 10 = 7.07.
        self.assertEqual(masked_count(0.5, 10), 7)
        self.assertEqual(masked_count(0.5, 0), 0)

    def test_out_of_range(self):
        for tau in (-0.1, 1.5):
            with self.assertRaises(ValueError):
                mask_ratio(tau)

    def test_plan(self):
        plan = build_mask_plan(0.3, 12, np.random.default_rng(4))
        self.assertEqual(len(plan.masked), masked_count(0.3, 12))
        self.assertEqual(len(set(plan.masked.tolist())), len(plan.masked))
        self.assertTrue((np.diff(plan.masked) > 0).all())
        self.assertEqual(int(plan.as_mask().sum()), len(plan.masked))


class CausalAutoencoderTest(unittest.TestCase):

    def setUp(self):
        torch.manual_seed(1)
        self.autoencoder = CausalAutoencoder(5, latent_width=3, width=8,
                                             stride=4)

    def test_token_count(self):
        self.assertEqual(self.autoencoder.token_count(16), 4)
        self.assertEqual(self.autoencoder.token_count(9), 3)
        tokens = self.autoencoder.encode(torch.randn(1, 9, 5))
        self.assertEqual(tuple(tokens.shape), (1, 3, 3))
        self.assertEqual(tuple(self.autoencoder.decode(tokens, 9).shape),
                         (1, 9, 5))

    def test_causal_tokens(self):
        features = torch.randn(1, 16, 5)
        changed = features.clone()
        changed[:, 8:] += 1.0
        with torch.no_grad():
            base = self.autoencoder.encode(features)
            moved = self.autoencoder.encode(changed)
        self.assertTrue(torch.allclose(base[:, :2], moved[:, :2], atol=1e-6))
        self.assertFalse(torch.allclose(base[:, 2:], moved[:, 2:]))

    def test_short_clip(self):
        with self.assertRaises(ShapeError):
            self.autoencoder.encode(torch.randn(1, 3, 5))
        with self.assertRaises(ShapeError):
            self.autoencoder.encode(torch.randn(1, 8, 4))


class LatentSequenceTest(unittest.TestCase):

    def test_file_reload(self):
        latents = LatentSequence(np.arange(12).reshape(3, 4), stride=2,
                                 source='seed:3', label='stand still')
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'latents', 'a.gloc')
            save_latents(path, latents)
            self.assertEqual(load_latents(path), latents)

    def test_token_for_frame(self):
        latents = LatentSequence(np.arange(6).reshape(3, 2), stride=4)
        self.assertListEqual(latents.token_for_frame(5).tolist(), [2, 3])
        self.assertListEqual(latents.token_for_frame(40).tolist(), [4, 5])
        with self.assertRaises(DimensionError):
            LatentSequence(np.zeros(3))


class MotionGeneratorTest(unittest.TestCase):

    def setUp(self):
        self.model = _tiny_generator()

    def test_generate_shape(self):
        latents = generate_latents(self.model, 'Stand  Still', 5, seed=2)
        self.assertEqual((latents.token_count, latents.width), (5, 4))
        self.assertEqual(latents.label, 'stand still')
        self.assertEqual(latents.source, 'seed:2')
        self.assertTrue(np.isfinite(latents.tokens).all())

    def test_same_seed_same_tokens(self):
        first = generate_latents(self.model, 'stand still', 4, seed=9)
        second = generate_latents(self.model, 'stand still', 4, seed=9)
        self.assertTrue(np.array_equal(first.tokens, second.tokens))

    def test_prefix_is_stable(self):
        long = generate_latents(self.model, 'squat in place', 6, seed=1)
        short = generate_latents(self.model, 'squat in place', 3, seed=1)
        self.assertTrue(np.allclose(long.tokens[:3], short.tokens, atol=1e-6))

    def test_shared_denoising_step(self):
        with mock.patch('latentloco.diffusion.ddim_step',
                        wraps=diffusion.ddim_step) as step:
            latents = generate_latents(self.model, 'stand still', 3, seed=4,
                                       ddim_steps=4)
        self.assertEqual(step.call_count, 3 * 4)
        times = [(call.args[1], call.args[2]) for call in
                 step.call_args_list[:4]]
        self.assertEqual(times, [(10, 8), (8, 5), (5, 2), (2, 0)])
        self.assertEqual(latents.token_count, 3)

    def test_token_limits(self):
        with self.assertRaises(ValueError):
            generate_latents(self.model, 'stand still', 0)
        with self.assertRaises(ShapeError):
            generate_latents(self.model, 'stand still', 9)

    def test_unknown_label(self):
        with self.assertRaises(UnknownLabelError):
            generate_latents(self.model, 'moonwalk', 2)

    def test_head_backbones(self):
        tokens = [torch.randn(4, 4), torch.randn(3, 4)]
        labels = torch.tensor([0, 1])
        for backbone, head in (('mlp', AdaLNDenoiser),
                               ('dit', AdaLNTransformerDenoiser)):
            with self.subTest(backbone=backbone):
                model = _tiny_generator(cfg=replace(
                    _TINY, head_backbone=backbone, head_tokens=2))
                self.assertIsInstance(model.head, head)
                params = ParameterSet(model, OptimizerConfig(lr=1e-3),
                                      exclude=model.autoencoder)
                before = model.head.output.weight.detach().clone()
                loss = generator_train_step(model, params, tokens, labels,
                                            _FixedTau(0.0))
                self.assertTrue(np.isfinite(loss))
                self.assertGreater(loss, 0.0)
                self.assertFalse(torch.equal(
                    before, model.head.output.weight.detach()))
                latents = generate_latents(model, 'stand still', 3, seed=1)
                self.assertEqual(latents.tokens.shape, (3, 4))
                self.assertTrue(np.isfinite(latents.tokens).all())

    def test_no_masked_token(self):
        tokens = [torch.randn(4, 4)]
        labels = torch.tensor([0])
        self.assertIsNone(generator_loss(self.model, tokens, labels,
                                         _FixedTau(1.0)))
        loss = generator_loss(self.model, tokens, labels, _FixedTau(0.0))
        self.assertTrue(torch.isfinite(loss))


class GeneratorTrainerTest(unittest.TestCase):

    def test_short_training(self):
        spec = CorpusSpec(families=('stand', 'squat'), clips_per_family=1,
                          duration=1.0)
        clips = synthesize_corpus(spec, 0, _MODEL)
        stats = compute_norm_stats(clips)
        model = _tiny_generator()
        trainer = GeneratorTrainer(model, clips, stats,
                                   OptimizerConfig(lr=1e-3), batch_size=2)
        ae_losses = trainer.train_autoencoder(3, log_interval=1)
        losses = trainer.train(3, log_interval=1)
        self.assertEqual(len(ae_losses), 3)
        self.assertTrue(np.isfinite(ae_losses + losses).all())
        mse, variance = trainer.reconstruction_error(clips)
        self.assertTrue(np.isfinite([mse, variance]).all())

        encoded = encode_motion(model, clips[0], stats)
        self.assertEqual(encoded.token_count,
                         -(-clips[0].frame_count // _TINY.stride))
        generated = generate_latents(model, 'squat in place', 3, seed=0)
        clip = decode_latents(model, generated, stats)
        self.assertEqual(clip.frame_count, 3 * _TINY.stride)
        self.assertEqual(clip.joint_count, _MODEL.joint_count)
