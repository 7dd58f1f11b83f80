"""
Checkpoint files.

A checkpoint is one `torch.save` archive holding the format version, the
component kind, the parameter tensors, the optimizer state, the training
step, the hash of the configuration sections the component depends on,
and whatever plain values are needed to rebuild the module.
"""

import logging
import os
import pickle
import zipfile
from dataclasses import asdict

import torch

from .generator import CausalAutoencoder, GeneratorConfig, build_generator
from .motion import LabelVocabulary, NormStats
from .student import StudentConfig, build_student
from .teacher import MoEPolicy, TeacherConfig


logger = logging.getLogger(__name__)


FORMAT_VERSION = 1
KINDS = ('generator', 'teacher', 'student', 'autoencoder')


class CheckpointError(Exception):
    pass


class MissingCheckpointError(CheckpointError, FileNotFoundError):
    pass


class CorruptCheckpointError(CheckpointError, ValueError):
    pass


class CheckpointVersionError(CorruptCheckpointError):

    def __init__(self, found, expected=FORMAT_VERSION):
        super().__init__(
            'Checkpoint Version {} Does Not Match Supported Version {}.'
            .format(found, expected))
        self.found = found
        self.expected = expected


class ConfigHashMismatchError(CheckpointError, ValueError):
    pass


class Checkpoint:

    def __init__(self, kind, params, optimizer=None, step=0, config_hash='',
                 extra=None, format_version=FORMAT_VERSION):
        if kind not in KINDS:
            raise ValueError('Unknown Checkpoint Kind {!r}.'.format(kind))
        self.kind = kind
        self.params = params
        self.optimizer = optimizer
        self.step = int(step)
        self.config_hash = config_hash
        self.extra = extra or {}
        self.format_version = format_version

    def state(self):
        return {
            'format_version': self.format_version,
            'kind': self.kind,
            'params': self.params,
            'optimizer': self.optimizer,
            'step': self.step,
            'config_hash': self.config_hash,
            'extra': self.extra,
        }

    def __repr__(self):
        return 'Checkpoint({}, step={})'.format(self.kind, self.step)


def checkpoint_save(path, checkpoint):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    torch.save(checkpoint.state(), path)
    logger.info('saved checkpoint kind=%s step=%d path=%s', checkpoint.kind,
                checkpoint.step, path)
    return path


def _read(path):
    try:
        return torch.load(path, map_location='cpu', weights_only=True)
    except (EOFError, RuntimeError, pickle.UnpicklingError,
            zipfile.BadZipFile, ValueError) as error:
        raise CorruptCheckpointError('Corrupt Checkpoint {}: {}'.format(
            path, error))


def checkpoint_load(path, kind=None, config_hash=None, force=False):
    """
    Load and validate a checkpoint. With `config_hash` given, a different
    stored hash is rejected unless `force` is set.
    """
    if not os.path.exists(path):
        raise MissingCheckpointError('Missing Checkpoint {}.'.format(path))
    state = _read(path)
    if not isinstance(state, dict) or 'format_version' not in state:
        raise CorruptCheckpointError('Corrupt Checkpoint {}.'.format(path))
    if state['format_version'] != FORMAT_VERSION:
        raise CheckpointVersionError(state['format_version'])
    if kind is not None and state.get('kind') != kind:
        raise CorruptCheckpointError(
            'Expected A {} Checkpoint, Found {}.'.format(kind, state.get('kind')))
    if config_hash is not None and state['config_hash'] != config_hash:
        if not force:
            raise ConfigHashMismatchError(
                'Config Hash Mismatch For {}: Stored {}, Current {}.'.format(
                    path, state['config_hash'][:12], config_hash[:12]))
        logger.warning('config hash mismatch ignored path=%s', path)
    try:
        return Checkpoint(
            state['kind'], state['params'], state.get('optimizer'),
            state.get('step', 0), state['config_hash'],
            state.get('extra'), state['format_version'])
    except (KeyError, ValueError) as error:
        raise CorruptCheckpointError('Corrupt Checkpoint {}: {}'.format(
            path, error))


def restore_optimizer(params, checkpoint):
    if checkpoint.optimizer is not None:
        params.load_state_dict(checkpoint.optimizer)
    return params


def _load_module(module, checkpoint):
    try:
        module.load_state_dict(checkpoint.params)
    except (RuntimeError, KeyError) as error:
        raise CorruptCheckpointError(
            'Parameters Do Not Fit The {}: {}'.format(checkpoint.kind, error))
    return module


# generator and autoencoder.

def generator_checkpoint(model, params, step, config_hash, stats):
    extra = {
        'config': asdict(model.cfg),
        'phrases': list(model.vocab.phrases),
        'label_width': model.vocab.width,
        'joint_count': model.joint_count,
        'keypoint_count': model.keypoint_count,
        'frame_rate': float(model.frame_rate),
        'stats': stats.state_dict(),
    }
    return Checkpoint('generator', model.state_dict(),
                      params.state_dict() if params else None, step,
                      config_hash, extra)


def restore_generator(checkpoint):
    """(generator, normalization stats)"""
    extra = checkpoint.extra
    cfg = GeneratorConfig(**extra['config'])
    vocab = LabelVocabulary(extra['phrases'], extra['label_width'])
    model = build_generator(cfg, vocab, extra['joint_count'],
                            extra['keypoint_count'], extra['frame_rate'])
    _load_module(model, checkpoint)
    return model.eval(), NormStats.from_state_dict(extra['stats'])


def autoencoder_checkpoint(model, params, step, config_hash, stats):
    ae = model.autoencoder
    extra = {
        'channels': ae.channels,
        'latent_width': ae.latent_width,
        'width': ae.width,
        'stride': ae.stride,
        'stats': stats.state_dict(),
    }
    return Checkpoint('autoencoder', ae.state_dict(),
                      params.state_dict() if params else None, step,
                      config_hash, extra)


def restore_autoencoder(checkpoint):
    extra = checkpoint.extra
    ae = CausalAutoencoder(extra['channels'], extra['latent_width'],
                           extra['width'], extra['stride'])
    _load_module(ae, checkpoint)
    return ae.eval(), NormStats.from_state_dict(extra['stats'])


# policies.

def teacher_checkpoint(policy, params, step, config_hash, cfg, clip_ids=()):
    extra = {
        'config': asdict(cfg),
        'obs_width': policy.obs_width,
        'action_width': policy.action_width,
        'clip_ids': list(clip_ids),
    }
    return Checkpoint('teacher', policy.state_dict(),
                      params.state_dict() if params else None, step,
                      config_hash, extra)


def restore_teacher(checkpoint):
    extra = checkpoint.extra
    cfg = TeacherConfig(**extra['config'])
    policy = MoEPolicy(extra['obs_width'], extra['action_width'],
                       cfg.experts, cfg.hidden, None, cfg.init_log_std)
    _load_module(policy, checkpoint)
    return policy.eval(), cfg


def student_checkpoint(student, params, step, config_hash, cfg,
                       latent_width):
    extra = {
        'config': asdict(cfg),
        'latent_width': int(latent_width),
    }
    return Checkpoint('student', student.state_dict(),
                      params.state_dict() if params else None, step,
                      config_hash, extra)


def restore_student(checkpoint, model):
    extra = checkpoint.extra
    cfg = StudentConfig(**extra['config'])
    student = build_student(model, extra['latent_width'], cfg)
    _load_module(student, checkpoint)
    return student.eval(), cfg
