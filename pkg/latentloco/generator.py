"""
Masked causal-autoregressive motion generator.

A causal convolutional autoencoder turns normalized frame features into
latent tokens (one per `stride` frames). A causal transformer reads a label
prefix token followed by the tokens seen so far; its output at position i
conditions a small diffusion head that denoises token i. Training masks a
random share of the input tokens, inference generates tokens strictly left
to right.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import diffusion
from .motion import (
    KIND_LATENT,
    DimensionError,
    clip_from_features,
    feature_width,
    frame_features,
    read_container,
    write_container,
)
from .nets import (
    AttentionConfig,
    LAYER_NORM_EPS,
    ParameterSet,
    ShapeError,
    TransformerBlock,
    apply_loss,
    build_denoiser,
    fan_in_init,
)


logger = logging.getLogger(__name__)


def mask_ratio(tau):
    if not 0.0 <= tau <= 1.0:
        raise ValueError('Mask Schedule Input {} Outside [0, 1].'.format(tau))
    return math.cos(math.pi * tau / 2.0)


def masked_count(tau, token_count):
    # round half up.
    return int(math.floor(mask_ratio(tau) * token_count + 0.5))


class MaskPlan:

    def __init__(self, tau, ratio, masked, token_count):
        self.tau = tau
        self.ratio = ratio
        self.masked = masked
        self.token_count = token_count

    def as_mask(self):
        mask = np.zeros(self.token_count, dtype=bool)
        mask[self.masked] = True
        return mask

    def __repr__(self):
        return 'MaskPlan(tau={:.3f}, masked={}/{})'.format(
            self.tau, len(self.masked), self.token_count)


def build_mask_plan(tau, token_count, rng):
    count = masked_count(tau, token_count)
    masked = np.sort(rng.choice(token_count, size=count, replace=False)) \
        if count else np.zeros(0, dtype=np.int64)
    return MaskPlan(tau, mask_ratio(tau), masked, token_count)


class LatentSequence:

    def __init__(self, tokens, stride=4, source='', label='',
                 frame_rate=50.0):
        self.tokens = np.asarray(tokens, dtype=np.float32)
        if self.tokens.ndim != 2:
            raise DimensionError('Latent Tokens Must Be A Matrix.')
        if stride < 1:
            raise DimensionError('Stride Must Be At Least 1.')
        self.stride = int(stride)
        self.source = source
        self.label = label
        self.frame_rate = float(frame_rate)

    @property
    def token_count(self):
        return self.tokens.shape[0]

    @property
    def width(self):
        return self.tokens.shape[1]

    def token_for_frame(self, frame):
        # the last token is held past the end.
        return self.tokens[min(frame // self.stride, self.token_count - 1)]

    def __eq__(self, other):
        if not isinstance(other, LatentSequence):
            return NotImplemented
        return (self.stride == other.stride and self.source == other.source
                and self.label == other.label
                and self.frame_rate == other.frame_rate
                and np.array_equal(self.tokens, other.tokens))

    def __repr__(self):
        return 'LatentSequence({!r}, tokens={}, stride={})'.format(
            self.label, self.token_count, self.stride)


def save_latents(path, latents):
    write_container(
        path, KIND_LATENT, latents.frame_rate, latents.tokens,
        latents.width, 0, latents.stride, (latents.label, latents.source, ''),
    )


def load_latents(path):
    frame_rate, matrix, width, _, stride, texts = read_container(
        path, KIND_LATENT, lambda width, _: width)
    label, source, _ = texts
    if stride < 1:
        raise DimensionError('Stride Must Be At Least 1.')
    return LatentSequence(matrix, stride, source, label, frame_rate)


@dataclass
class GeneratorConfig:

    latent_width: int = 64
    stride: int = 4
    ae_width: int = 128
    width: int = 256
    layers: int = 4
    heads: int = 4
    head_width: int = 256
    head_depth: int = 16
    label_width: int = 64
    max_tokens: int = 64
    diffusion_steps: int = 50
    ddim_steps: int = 10
    beta_start: float = 1e-4
    beta_end: float = 0.02
    objective: str = 'ddpm'
    head_repeats: int = 1
    head_backbone: str = 'mlp'
    head_tokens: int = 4

    def schedule(self):
        return diffusion.DiffusionSchedule.linear(
            self.diffusion_steps, self.beta_start, self.beta_end,
            self.objective)


class CausalConv1d(nn.Conv1d):

    def __init__(self, in_channels, out_channels, kernel_size):
        super().__init__(in_channels, out_channels, kernel_size)
        self.left = kernel_size - 1

    def forward(self, x):
        return super().forward(F.pad(x, (self.left, 0)))


class CausalAutoencoder(nn.Module):

    """
    Token i only sees frames before (i + 1) * stride: causal convolutions
    followed by a non-overlapping strided convolution.
    """

    def __init__(self, channels, latent_width=64, width=128, stride=4):
        super().__init__()
        self.channels = channels
        self.latent_width = latent_width
        self.width = width
        self.stride = stride
        self.encoder = nn.Sequential(
            CausalConv1d(channels, width, 3), nn.SiLU(),
            CausalConv1d(width, width, 3), nn.SiLU(),
            nn.Conv1d(width, width, stride, stride=stride), nn.SiLU(),
            nn.Conv1d(width, latent_width, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv1d(latent_width, width, 1), nn.SiLU(),
            nn.ConvTranspose1d(width, width, stride, stride=stride),
            nn.SiLU(),
            CausalConv1d(width, width, 3), nn.SiLU(),
            nn.Conv1d(width, channels, 1),
        )

    def token_count(self, frame_count):
        return -(-frame_count // self.stride)

    def _pad(self, features):
        frames = features.shape[1]
        extra = self.token_count(frames) * self.stride - frames
        if extra:
            tail = features[:, -1:].expand(-1, extra, -1)
            features = torch.cat([features, tail], dim=1)
        return features

    def encode(self, features):
        """(B, F, C) -> (B, ceil(F / stride), latent_width)"""
        if features.shape[-1] != self.channels:
            raise ShapeError('Autoencoder Expects {} Channels, Got {}.'.format(
                self.channels, features.shape[-1]))
        if features.shape[1] < self.stride:
            raise ShapeError('Clip Shorter Than One Stride.')
        x = self._pad(features).transpose(1, 2)
        return self.encoder(x).transpose(1, 2)

    def decode(self, tokens, frame_count=None):
        x = self.decoder(tokens.transpose(1, 2)).transpose(1, 2)
        if frame_count is not None:
            x = x[:, :frame_count]
        return x

    def forward(self, features):
        return self.decode(self.encode(features), features.shape[1])


def pad_batch(arrays):
    """Right-pad (T_i, C) arrays into (B, T, C) plus a validity mask."""
    longest = max(a.shape[0] for a in arrays)
    width = arrays[0].shape[1]
    batch = np.zeros((len(arrays), longest, width), dtype=np.float32)
    valid = np.zeros((len(arrays), longest), dtype=bool)
    for i, a in enumerate(arrays):
        batch[i, :a.shape[0]] = a
        # replicate the last row so causal padding stays smooth.
        batch[i, a.shape[0]:] = a[-1]
        valid[i, :a.shape[0]] = True
    return torch.from_numpy(batch), torch.from_numpy(valid)


def autoencoder_loss(autoencoder, features, valid):
    reconstruction = autoencoder(features)
    error = ((reconstruction - features) ** 2).mean(dim=-1)
    return (error * valid).sum() / valid.sum().clamp(min=1)


class MotionGenerator(nn.Module):

    def __init__(self, cfg, vocab, channels, joint_count, keypoint_count,
                 frame_rate=50.0):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.joint_count = joint_count
        self.keypoint_count = keypoint_count
        self.frame_rate = frame_rate
        self.autoencoder = CausalAutoencoder(
            channels, cfg.latent_width, cfg.ae_width, cfg.stride)
        attention = AttentionConfig(cfg.max_tokens + 1, cfg.width, cfg.heads)
        self.label_projection = fan_in_init(
            nn.Linear(vocab.width, cfg.width))
        self.token_projection = fan_in_init(
            nn.Linear(cfg.latent_width, cfg.width))
        self.mask_token = nn.Parameter(torch.zeros(cfg.latent_width))
        self.position = nn.Parameter(
            torch.randn(cfg.max_tokens + 1, cfg.width) * 0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(attention) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.width, eps=LAYER_NORM_EPS)
        self.head = build_denoiser(
            cfg.head_backbone, cfg.latent_width, cfg.width, cfg.head_width,
            cfg.head_depth, cfg.heads, cfg.head_tokens)
        self.register_buffer('latent_mean', torch.zeros(cfg.latent_width))
        self.register_buffer('latent_std', torch.ones(cfg.latent_width))
        self.schedule = cfg.schedule()

    def transformer_parameters(self):
        skip = {id(p) for p in self.autoencoder.parameters()}
        return [p for p in self.parameters() if id(p) not in skip]

    def set_latent_stats(self, tokens):
        self.latent_mean.copy_(tokens.mean(dim=0))
        self.latent_std.copy_(tokens.std(dim=0).clamp(min=1e-3))

    def to_model_space(self, tokens):
        return (tokens - self.latent_mean) / self.latent_std

    def from_model_space(self, tokens):
        return tokens * self.latent_std + self.latent_mean

    def conditions(self, label_indices, inputs):
        """
        Transformer outputs for a label prefix followed by `inputs`
        (B, n, latent, model space); position i conditions token i.
        """
        label = self.label_projection(self.vocab(label_indices))[:, None]
        x = torch.cat([label, self.token_projection(inputs)], dim=1)
        count = x.shape[1]
        if count > self.position.shape[0]:
            raise ShapeError('{} Tokens Exceed The Generator Limit {}.'.format(
                count - 1, self.cfg.max_tokens))
        x = x + self.position[:count]
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    def head_loss(self, targets, conditions, generator=None):
        """Diffusion loss of the head on (M, latent) targets."""
        repeats = self.cfg.head_repeats
        targets = targets.repeat(repeats, 1)
        conditions = conditions.repeat(repeats, 1)
        t = torch.randint(1, self.schedule.steps + 1, (targets.shape[0],),
                          generator=generator)
        noised = diffusion.forward_diffuse(targets, t, self.schedule,
                                           generator=generator)
        prediction = self.head(noised.x_t, t, conditions)
        goal = diffusion.training_target(noised, self.schedule)
        return ((prediction - goal) ** 2).mean()


def generator_loss(model, token_batches, label_indices, rng, generator=None):
    """
    Masked causal loss over a batch. `token_batches` holds (N_i, latent)
    tensors in model space; entries with no masked token contribute nothing.
    Returns None when the whole batch has no masked token.
    """
    targets, conditions = [], []
    for tokens, label in zip(token_batches, label_indices):
        count = min(tokens.shape[0], model.cfg.max_tokens)
        if count == 0:
            continue
        tokens = tokens[:count]
        plan = build_mask_plan(float(rng.uniform()), count, rng)
        if not len(plan.masked):
            continue
        mask = torch.from_numpy(plan.as_mask())
        inputs = torch.where(mask[:, None], model.mask_token[None], tokens)
        # position i sees the label and inputs before i.
        outputs = model.conditions(label.view(1), inputs[None, :-1])[0]
        index = torch.from_numpy(plan.masked)
        targets.append(tokens[index])
        conditions.append(outputs[index])
    if not targets:
        return None
    return model.head_loss(torch.cat(targets), torch.cat(conditions),
                           generator)


def encode_motion(model, clip, stats):
    if clip.frame_count < model.cfg.stride:
        raise DimensionError('Clip Shorter Than One Stride.')
    features = torch.from_numpy(
        stats.apply(frame_features(clip)).astype(np.float32))[None]
    with torch.no_grad():
        tokens = model.autoencoder.encode(features)[0]
    return LatentSequence(tokens.numpy(), model.cfg.stride, clip.clip_id,
                          clip.label, clip.frame_rate)


def decode_latents(model, latents, stats):
    tokens = torch.from_numpy(latents.tokens)[None]
    with torch.no_grad():
        features = model.autoencoder.decode(tokens)[0].numpy()
    return clip_from_features(
        stats.invert(features), latents.frame_rate, model.joint_count,
        model.keypoint_count, latents.label, latents.source,
    )


def token_noise(seed, index, width):
    # one independent stream per token position.
    rng = np.random.default_rng([int(seed), int(index)])
    return torch.from_numpy(rng.standard_normal(width).astype(np.float32))


def generate_latents(model, label, token_count, seed=0, ddim_steps=None):
    if token_count < 1:
        raise ValueError('Token Count Must Be Positive.')
    if token_count > model.cfg.max_tokens:
        raise ShapeError('{} Tokens Exceed The Generator Limit {}.'.format(
            token_count, model.cfg.max_tokens))
    steps = ddim_steps or model.cfg.ddim_steps
    label_index = model.vocab.indices([label])
    width = model.cfg.latent_width
    generated = torch.zeros(0, width)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for i in range(token_count):
            condition = model.conditions(label_index, generated[None])[0, i]

            def predict(x, t, condition=condition):
                return model.head(x[None], t, condition[None])[0]

            token = diffusion.sample_chain(
                predict, token_noise(seed, i, width), model.schedule, steps)
            generated = torch.cat([generated, token[None]], dim=0)
        tokens = model.from_model_space(generated)
    model.train(was_training)
    return LatentSequence(tokens.numpy(), model.cfg.stride,
                          'seed:{}'.format(seed),
                          model.vocab.phrases[int(label_index)],
                          model.frame_rate)


def build_generator(cfg, vocab, joint_count, keypoint_count, frame_rate):
    channels = feature_width(joint_count, keypoint_count)
    return MotionGenerator(cfg, vocab, channels, joint_count, keypoint_count,
                           frame_rate)


def autoencoder_train_step(model, params, features, valid):
    """One reconstruction step on a padded (B, F, C) batch."""
    loss = autoencoder_loss(model.autoencoder, features, valid)
    apply_loss(params, loss)
    return float(loss)


def generator_train_step(model, params, token_batches, label_indices, rng,
                         generator=None):
    loss = generator_loss(model, token_batches, label_indices, rng, generator)
    if loss is None:
        return 0.0
    apply_loss(params, loss)
    return float(loss)


class GeneratorTrainer:

    """Autoencoder first, then the masked transformer on frozen latents."""

    def __init__(self, model, clips, stats, optimizer_cfg, batch_size=16,
                 seed=0):
        self.model = model
        self.clips = list(clips)
        self.stats = stats
        self.batch_size = batch_size
        self.rng = np.random.default_rng([seed, 1])
        self.generator = torch.Generator().manual_seed(seed)
        self.ae_params = ParameterSet(model.autoencoder, optimizer_cfg)
        self.params = ParameterSet(model, optimizer_cfg,
                                   exclude=model.autoencoder)
        self.features = [
            stats.apply(frame_features(clip)).astype(np.float32)
            for clip in self.clips
        ]
        self.labels = model.vocab.indices([clip.label for clip in self.clips])
        self.tokens = None

    def _batch(self):
        count = min(self.batch_size, len(self.clips))
        return self.rng.choice(len(self.clips), size=count, replace=False)

    def train_autoencoder(self, iterations, log_interval=100):
        losses = []
        for iteration in range(1, iterations + 1):
            index = self._batch()
            features, valid = pad_batch([self.features[i] for i in index])
            losses.append(autoencoder_train_step(
                self.model, self.ae_params, features, valid))
            if iteration % log_interval == 0:
                logger.info('autoencoder iteration=%d loss=%.6f', iteration,
                            np.mean(losses[-log_interval:]))
        return losses

    def encode_corpus(self):
        encoded = []
        with torch.no_grad():
            for features in self.features:
                x = torch.from_numpy(features)[None]
                encoded.append(self.model.autoencoder.encode(x)[0])
        self.model.set_latent_stats(torch.cat(encoded))
        self.tokens = [self.model.to_model_space(t) for t in encoded]
        return self.tokens

    def train(self, iterations, log_interval=100):
        if self.tokens is None:
            self.encode_corpus()
        losses = []
        for iteration in range(1, iterations + 1):
            index = self._batch()
            losses.append(generator_train_step(
                self.model, self.params,
                [self.tokens[i] for i in index], self.labels[index],
                self.rng, self.generator,
            ))
            if iteration % log_interval == 0:
                logger.info('generator iteration=%d loss=%.6f', iteration,
                            np.mean(losses[-log_interval:]))
        return losses

    def reconstruction_error(self, clips):
        """Mean squared error and per-channel variance on normalized data."""
        errors, variances = [], []
        with torch.no_grad():
            for clip in clips:
                x = torch.from_numpy(
                    self.stats.apply(frame_features(clip))
                    .astype(np.float32))[None]
                y = self.model.autoencoder(x)
                errors.append(((y - x) ** 2).mean().item())
                variances.append(x[0].var(dim=0).mean().item())
        return float(np.mean(errors)), float(np.mean(variances))
