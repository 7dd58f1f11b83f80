"""
Network building blocks shared by the generator, the teacher and the
student: dense stacks, AdaLN modulation, causal self-attention, an AdaLN
residual denoiser, and a parameter container that owns the AdamW state.
"""

import logging
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


logger = logging.getLogger(__name__)


LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):

    def __init__(self, name):
        self.name = name
        super().__init__('Non-Finite Gradient In {}.'.format(name))


class BackwardWithoutForwardError(RuntimeError):
    pass


@dataclass
class OptimizerConfig:

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    max_grad_norm: float = 1.0
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError('Learning Rate Must Be Positive.')
        for beta in (self.beta1, self.beta2):
            if not 0 < beta < 1:
                raise ValueError('Betas Must Lie In (0, 1).')
        if self.weight_decay < 0:
            raise ValueError('Weight Decay Must Be Non-Negative.')


@dataclass
class AttentionConfig:

    seq_len: int
    width: int
    heads: int
    causal: bool = True

    def __post_init__(self):
        if self.seq_len <= 0:
            raise ValueError('Sequence Length Must Be Positive.')
        if self.heads <= 0 or self.width % self.heads:
            raise ValueError('Head Count Must Divide Width.')
        if not self.causal:
            raise ValueError('Only Causal Attention Is Supported.')


def fan_in_init(linear):
    # scaled uniform on weights, zero biases.
    bound = 1.0 / math.sqrt(linear.in_features)
    nn.init.uniform_(linear.weight, -bound, bound)
    if linear.bias is not None:
        nn.init.zeros_(linear.bias)
    return linear


def zero_init(linear):
    nn.init.zeros_(linear.weight)
    if linear.bias is not None:
        nn.init.zeros_(linear.bias)
    return linear


class MLP(nn.Module):

    def __init__(self, layer_sizes, activation=True, final_activation=False):
        super().__init__()
        if len(layer_sizes) < 2:
            raise ValueError('MLP Needs At Least Two Layer Sizes.')
        self.layer_sizes = list(layer_sizes)
        self.activation = activation
        self.final_activation = final_activation
        self.layers = nn.ModuleList(
            fan_in_init(nn.Linear(n_in, n_out))
            for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:])
        )

    def forward(self, x):
        first = self.layers[0]
        if x.shape[-1] != first.in_features:
            raise ShapeError(
                'Input Width {} Does Not Match Layer 0 ({} -> {}), '
                'Which Expects {}.'.format(x.shape[-1], first.in_features,
                                           first.out_features,
                                           first.in_features))
        last = len(self.layers) - 1
        for index, layer in enumerate(self.layers):
            x = layer(x)
            if self.activation and (index < last or self.final_activation):
                x = F.silu(x)
        return x


class ParameterSet:

    """
    Named parameters of one module, their gradients, and the AdamW moments.

    A single training thread owns gradients and moments; frozen sets may be
    shared for inference.
    """

    def __init__(self, module, cfg=None, exclude=None):
        self.module = module
        self.cfg = cfg or OptimizerConfig()
        # parameters of `exclude` (a submodule) are trained elsewhere.
        skip = ({id(p) for p in exclude.parameters()}
                if exclude is not None else set())
        self._parameters = [
            (name, p) for name, p in module.named_parameters()
            if id(p) not in skip
        ]
        self.optimizer = torch.optim.AdamW(
            [p for _, p in self._parameters],
            lr=self.cfg.lr,
            betas=(self.cfg.beta1, self.cfg.beta2),
            eps=self.cfg.eps,
            weight_decay=self.cfg.weight_decay,
        )
        self.step_count = 0
        self._output = None

    def named(self):
        return dict(self._parameters)

    def gradients(self):
        return {
            name: (p.grad if p.grad is not None else torch.zeros_like(p))
            for name, p in self._parameters
        }

    def moments(self, name):
        param = self.named()[name]
        state = self.optimizer.state.get(param, {})
        if 'exp_avg' not in state:
            return torch.zeros_like(param), torch.zeros_like(param)
        return state['exp_avg'], state['exp_avg_sq']

    def zero_grad(self):
        self.optimizer.zero_grad(set_to_none=False)

    def remember(self, output):
        self._output = output
        return output

    def backward(self, loss_gradient):
        if self._output is None:
            raise BackwardWithoutForwardError('Backward Without Forward.')
        output, self._output = self._output, None
        output.backward(torch.as_tensor(loss_gradient, dtype=output.dtype))
        return self

    def check_gradients(self):
        for name, param in self._parameters:
            if param.grad is not None and not torch.isfinite(param.grad).all():
                raise NonFiniteGradientError(name)

    def clip_gradients(self, max_norm=None):
        max_norm = self.cfg.max_grad_norm if max_norm is None else max_norm
        return float(nn.utils.clip_grad_norm_(
            [p for _, p in self._parameters], max_norm))

    def step(self, cfg=None):
        cfg = cfg or self.cfg
        self.check_gradients()
        norm = self.clip_gradients(cfg.max_grad_norm)
        for group in self.optimizer.param_groups:
            group['lr'] = cfg.lr
            group['weight_decay'] = cfg.weight_decay
            group['betas'] = (cfg.beta1, cfg.beta2)
        self.optimizer.step()
        self.zero_grad()
        self.step_count += 1
        return norm

    def state_dict(self):
        return {
            'optimizer': self.optimizer.state_dict(),
            'step_count': self.step_count,
        }

    def load_state_dict(self, state):
        self.optimizer.load_state_dict(state['optimizer'])
        self.step_count = int(state.get('step_count', 0))


def backward(params, loss_gradient):
    return params.backward(loss_gradient)


def adamw_step(params, cfg, step_index):
    if step_index < 1:
        raise ValueError('Step Index Starts At 1.')
    if step_index != params.step_count + 1:
        raise ValueError('Step Index {} Does Not Follow Step {}.'.format(
            step_index, params.step_count))
    return params.step(cfg)


def apply_loss(params, loss, cfg=None):
    """
    Backpropagate a scalar loss and take one AdamW step. Returns the
    gradient norm before clipping.
    """
    params.zero_grad()
    params.remember(loss)
    backward(params, 1.0)
    return adamw_step(params, cfg or params.cfg, params.step_count + 1)


def modulate(x, shift, scale):
    return x * (1 + scale) + shift


class AdaLN(nn.Module):

    """LayerNorm without affine terms, modulated by a projected condition."""

    def __init__(self, width, cond_width):
        super().__init__()
        self.norm = nn.LayerNorm(width, elementwise_affine=False,
                                 eps=LAYER_NORM_EPS)
        self.projection = zero_init(nn.Linear(cond_width, 2 * width))

    def forward(self, x, condition):
        return adaln_modulate(self, x, condition)


def adaln_modulate(module, features, condition):
    shift, scale = module.projection(condition).chunk(2, dim=-1)
    return modulate(module.norm(features), shift, scale)


class CausalSelfAttention(nn.Module):

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.head_dim = cfg.width // cfg.heads
        self.query = fan_in_init(nn.Linear(cfg.width, cfg.width))
        self.key = fan_in_init(nn.Linear(cfg.width, cfg.width))
        self.value = fan_in_init(nn.Linear(cfg.width, cfg.width))
        self.out = fan_in_init(nn.Linear(cfg.width, cfg.width))

    def split_heads(self, x):
        batch, count, _ = x.shape
        return x.view(batch, count, self.cfg.heads, self.head_dim) \
            .transpose(1, 2)

    def forward(self, tokens, return_weights=False):
        return causal_attention(self.cfg, self, tokens, return_weights)


def causal_attention(cfg, module, tokens, return_weights=False):
    if module.cfg != cfg:
        raise ShapeError('Attention Module Was Built For Another Config.')
    single = tokens.dim() == 2
    if single:
        tokens = tokens.unsqueeze(0)
    count = tokens.shape[1]
    if count == 0:
        raise ShapeError('Empty Token Sequence.')
    if count > cfg.seq_len:
        raise ShapeError('{} Tokens Exceed Sequence Length {}.'.format(
            count, cfg.seq_len))
    q = module.split_heads(module.query(tokens))
    k = module.split_heads(module.key(tokens))
    v = module.split_heads(module.value(tokens))
    scores = q @ k.transpose(-2, -1) / math.sqrt(module.head_dim)
    allowed = torch.ones(count, count, dtype=torch.bool,
                         device=tokens.device).tril()
    scores = scores.masked_fill(~allowed, float('-inf'))
    weights = torch.softmax(scores, dim=-1)
    mixed = (weights @ v).transpose(1, 2).reshape(tokens.shape)
    output = module.out(mixed)
    if single:
        output, weights = output.squeeze(0), weights.squeeze(0)
    if return_weights:
        return output, weights
    return output


class TransformerBlock(nn.Module):

    def __init__(self, cfg, mlp_ratio=4):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.width, eps=LAYER_NORM_EPS)
        self.attention = CausalSelfAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.width, eps=LAYER_NORM_EPS)
        self.mlp = MLP([cfg.width, mlp_ratio * cfg.width, cfg.width])

    def forward(self, x):
        x = x + self.attention(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def timestep_embedding(t, dim, max_period=10000):
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period)
        * torch.arange(half, dtype=torch.float64) / half
    )
    args = torch.as_tensor(t, dtype=torch.float64)[..., None] * freqs
    embedding = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        embedding = torch.cat(
            [embedding, torch.zeros_like(embedding[..., :1])], dim=-1)
    return embedding


class TimestepEmbedder(nn.Module):

    def __init__(self, width, frequency_width=64):
        super().__init__()
        self.frequency_width = frequency_width
        self.mlp = MLP([frequency_width, width, width])

    def forward(self, t):
        dtype = self.mlp.layers[0].weight.dtype
        return self.mlp(timestep_embedding(t, self.frequency_width)
                        .to(dtype))


class ResidualAdaLNBlock(nn.Module):

    def __init__(self, width):
        super().__init__()
        self.norm = nn.LayerNorm(width, elementwise_affine=False,
                                 eps=LAYER_NORM_EPS)
        self.mlp = MLP([width, width, width])
        self.modulation = zero_init(nn.Linear(width, 3 * width))

    def forward(self, x, condition):
        shift, scale, gate = self.modulation(F.silu(condition)) \
            .chunk(3, dim=-1)
        return x + gate * self.mlp(modulate(self.norm(x), shift, scale))


class AdaLNDenoiser(nn.Module):

    """
    Residual MLP noise predictor: the noisy vector is embedded, the time
    step embedding is added to the projected condition, and every block is
    modulated by that sum.
    """

    def __init__(self, target_width, cond_width, width=256, depth=16):
        super().__init__()
        self.target_width = target_width
        self.cond_width = cond_width
        self.input = fan_in_init(nn.Linear(target_width, width))
        self.time = TimestepEmbedder(width)
        self.condition = fan_in_init(nn.Linear(cond_width, width))
        self.blocks = nn.ModuleList(
            ResidualAdaLNBlock(width) for _ in range(depth))
        self.final = AdaLN(width, width)
        self.output = zero_init(nn.Linear(width, target_width))

    def forward(self, x_t, t, condition):
        if x_t.shape[-1] != self.target_width:
            raise ShapeError('Denoiser Expects Width {}, Got {}.'.format(
                self.target_width, x_t.shape[-1]))
        if condition.shape[-1] != self.cond_width:
            raise ShapeError('Condition Expects Width {}, Got {}.'.format(
                self.cond_width, condition.shape[-1]))
        t = torch.as_tensor(t)
        if t.dim() == 0:
            t = t.expand(x_t.shape[:-1])
        c = self.condition(condition) + self.time(t)
        h = self.input(x_t)
        for block in self.blocks:
            h = block(h, c)
        return self.output(self.final(h, F.silu(c)))


class AdaLNTransformerBlock(nn.Module):

    """TransformerBlock with AdaLN-Zero modulation of both sublayers."""

    def __init__(self, cfg, mlp_ratio=4):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.width, elementwise_affine=False,
                                  eps=LAYER_NORM_EPS)
        self.attention = CausalSelfAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.width, elementwise_affine=False,
                                  eps=LAYER_NORM_EPS)
        self.mlp = MLP([cfg.width, mlp_ratio * cfg.width, cfg.width])
        self.modulation = zero_init(nn.Linear(cfg.width, 6 * cfg.width))

    def forward(self, x, condition):
        # condition is (B, 1, width), shared by every token.
        (shift1, scale1, gate1,
         shift2, scale2, gate2) = self.modulation(F.silu(condition)) \
            .chunk(6, dim=-1)
        x = x + gate1 * self.attention(
            modulate(self.norm1(x), shift1, scale1))
        return x + gate2 * self.mlp(modulate(self.norm2(x), shift2, scale2))


class AdaLNTransformerDenoiser(nn.Module):

    """
    DiT-style noise predictor: the noisy vector is projected to `tokens`
    tokens, run through AdaLN transformer blocks conditioned on the time
    step embedding plus the projected condition, and read back out through
    a zero-initialized projection of all tokens.
    """

    def __init__(self, target_width, cond_width, width=256, depth=4,
                 heads=4, tokens=4):
        super().__init__()
        if tokens < 1:
            raise ValueError('Denoiser Needs At Least One Token.')
        self.target_width = target_width
        self.cond_width = cond_width
        self.width = width
        self.tokens = tokens
        attention = AttentionConfig(tokens, width, heads)
        self.input = fan_in_init(nn.Linear(target_width, tokens * width))
        self.position = nn.Parameter(torch.randn(tokens, width) * 0.02)
        self.time = TimestepEmbedder(width)
        self.condition = fan_in_init(nn.Linear(cond_width, width))
        self.blocks = nn.ModuleList(
            AdaLNTransformerBlock(attention) for _ in range(depth))
        self.final = AdaLN(width, width)
        self.output = zero_init(nn.Linear(tokens * width, target_width))

    def forward(self, x_t, t, condition):
        if x_t.shape[-1] != self.target_width:
            raise ShapeError('Denoiser Expects Width {}, Got {}.'.format(
                self.target_width, x_t.shape[-1]))
        if condition.shape[-1] != self.cond_width:
            raise ShapeError('Condition Expects Width {}, Got {}.'.format(
                self.cond_width, condition.shape[-1]))
        lead = x_t.shape[:-1]
        t = torch.as_tensor(t)
        if t.dim() == 0:
            t = t.expand(lead)
        c = (self.condition(condition) + self.time(t)) \
            .reshape(-1, 1, self.width)
        h = self.input(x_t).reshape(-1, self.tokens, self.width) \
            + self.position
        for block in self.blocks:
            h = block(h, c)
        h = self.final(h, F.silu(c))
        return self.output(h.reshape(-1, self.tokens * self.width)) \
            .reshape(lead + (self.target_width,))


DENOISER_BACKBONES = ('mlp', 'dit')


def build_denoiser(backbone, target_width, cond_width, width, depth,
                   heads=4, tokens=4):
    if backbone == 'mlp':
        return AdaLNDenoiser(target_width, cond_width, width, depth)
    if backbone == 'dit':
        return AdaLNTransformerDenoiser(target_width, cond_width, width,
                                        depth, heads, tokens)
    raise ValueError('Unknown Denoiser Backbone {!r}.'.format(backbone))


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())


def set_threads(count):
    torch.set_num_threads(max(1, int(count)))
    logger.debug('torch threads=%d', torch.get_num_threads())
