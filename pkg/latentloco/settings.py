"""
Run configuration.

A run is described by one INI file read through `SettingsLoader`. The
schema is derived from the defaults of the component configuration
classes, so every key has a declared type; unknown sections or keys are
rejected. `sim.dt` has no default and must always be given.
"""

import configparser
import hashlib
import os
from collections import OrderedDict
from dataclasses import fields, replace

from .env import EnvConfig
from .generator import GeneratorConfig
from .metrics import MetricsConfig
from .motion import CorpusSpec, FamilyRegister
from .nets import DENOISER_BACKBONES, OptimizerConfig
from .reward import RewardKernels, RewardSettings, RewardWeights
from .robot.model import default_robot_path, load_robot
from .sampling import CasConfig, CurriculumConfig
from .sim import (
    DELAY_RANGE_MS,
    FRICTION_RANGE,
    GAIN_RANGE,
    PUSH_INTERVAL,
    PUSH_VELOCITY,
)
from .student import StudentConfig
from .teacher import TeacherConfig


class ConfigError(ValueError):
    pass


class SettingsLoader:

    def __init__(self, path):
        if not os.path.exists(path):
            raise ConfigError('{} Not Exists.'.format(path))
        self.path = path
        self._load_settings()

    def _load_settings(self):
        config = configparser.ConfigParser(interpolation=None)
        try:
            with open(self.path) as f:
                config.read_file(f)
        except configparser.Error as error:
            raise ConfigError('Malformed Config {}: {}'.format(
                self.path, error.message))
        self._config = config

    def sections(self):
        return self._config.sections()

    def get_section(self, section):
        if section in self._config:
            return self._config[section]
        else:
            return None


# schema.

REQUIRED = object()

PRESETS = {
    'desk': {('run', 'batch_size'): 256},
    'paper': {('run', 'batch_size'): 4096},
}


class Field:

    """A typed key: bool, int, float, str or a comma separated list."""

    def __init__(self, kind, default, item=None):
        self.kind = kind
        self.default = default
        self.item = item

    @classmethod
    def like(cls, default):
        if isinstance(default, (tuple, list)):
            item = type(default[0]) if default else float
            return cls(tuple, tuple(default), item)
        return cls(type(default), default)

    def parse(self, section, key):
        text = section.get(key)
        if self.kind is bool:
            return section.getboolean(key)
        if self.kind is tuple:
            parts = [part.strip() for part in text.split(',')]
            if not all(parts):
                raise ValueError('empty list item')
            return tuple(self.item(part) for part in parts)
        return self.kind(text.strip())


def _from_dataclass(cls, skip=(), **extra):
    schema = OrderedDict()
    for item in fields(cls):
        if item.name in skip:
            continue
        schema[item.name] = Field.like(item.default)
    for name, default in extra.items():
        schema[name] = Field.like(default)
    return schema


def _data_schema():
    schema = OrderedDict([
        ('families', Field.like(('walk', 'hop', 'squat', 'kick', 'stand'))),
        ('clips_per_family', Field.like(4)),
        ('frame_rate', Field.like(50.0)),
        ('duration', Field.like(4.0)),
        ('split_ratio', Field.like(0.8)),
        ('epsilon', Field.like(0.12)),
        ('max_unstable_run', Field.like(100)),
        ('foot_height', Field.like(0.02)),
    ])
    for name in FamilyRegister.names():
        family = FamilyRegister.get_family(name)
        for param, bounds in family.RANGES.items():
            schema['{}_{}'.format(name, param)] = Field.like(bounds)
    return schema


def _reward_schema():
    schema = _from_dataclass(RewardWeights)
    for item in fields(RewardKernels):
        schema['sigma_' + item.name] = Field.like(item.default)
    schema.update(_from_dataclass(RewardSettings))
    return schema


def build_schema():
    return OrderedDict([
        ('run', OrderedDict([
            ('preset', Field.like('desk')),
            ('seed', Field.like(0)),
            ('robot', Field.like('')),
            ('manifest', Field.like('')),
            ('out', Field.like('runs')),
            ('batch_size', Field.like(256)),
            ('log_interval', Field.like(50)),
        ])),
        ('sim', OrderedDict([
            ('dt', Field(float, REQUIRED)),
            ('decimation', Field.like(10)),
            ('contact_stiffness', Field.like(2e4)),
            ('contact_damping', Field.like(2e2)),
            ('friction_damping', Field.like(5e2)),
            ('pitch_limit', Field.like(0.8)),
        ])),
        ('randomization', OrderedDict([
            ('enabled', Field.like(True)),
            ('pushes', Field.like(True)),
            ('friction_range', Field.like(FRICTION_RANGE)),
            ('gain_range', Field.like(GAIN_RANGE)),
            ('delay_range_ms', Field.like(DELAY_RANGE_MS)),
            ('push_interval', Field.like(PUSH_INTERVAL)),
            ('push_velocity', Field.like(PUSH_VELOCITY)),
        ])),
        ('data', _data_schema()),
        ('generator', _from_dataclass(
            GeneratorConfig, lr=1e-4, weight_decay=0.01, batch_size=16,
            ae_iterations=500, iterations=1000, log_interval=100)),
        ('teacher', _from_dataclass(TeacherConfig)),
        ('reward', _reward_schema()),
        ('cas', _from_dataclass(CasConfig)),
        ('curriculum', _from_dataclass(CurriculumConfig)),
        ('student', _from_dataclass(StudentConfig)),
        ('metrics', _from_dataclass(MetricsConfig)),
    ])


SCHEMA = build_schema()

# sections each checkpoint kind depends on.
COMPONENT_SECTIONS = {
    'autoencoder': ('data', 'generator'),
    'generator': ('data', 'generator'),
    'teacher': ('sim', 'randomization', 'data', 'teacher', 'reward', 'cas',
                'curriculum'),
    'student': ('sim', 'randomization', 'data', 'generator', 'teacher',
                'student', 'reward'),
}


def canonical(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ','.join(canonical(v) for v in value)
    return str(value)


def _check_range(name, bounds):
    if len(bounds) != 2 or bounds[0] > bounds[1]:
        raise ConfigError('{} Must Be A Low, High Pair.'.format(name))


class RunConfig:

    """Validated values per section, plus builders for component configs."""

    def __init__(self, values, path=None):
        self.values = values
        self.path = path
        self._validate()

    @classmethod
    def from_loader(cls, loader):
        for section in loader.sections():
            if section not in SCHEMA:
                raise ConfigError('Unknown Section [{}].'.format(section))
        preset_section = loader.get_section('run')
        preset = 'desk'
        if preset_section is not None and 'preset' in preset_section:
            preset = preset_section['preset'].strip()
        if preset not in PRESETS:
            raise ConfigError('Unknown Preset {!r}.'.format(preset))

        values = OrderedDict()
        for name, schema in SCHEMA.items():
            section = loader.get_section(name)
            present = section if section is not None else {}
            for key in present:
                if key not in schema:
                    raise ConfigError('Unknown Key {}.{}.'.format(name, key))
            block = OrderedDict()
            for key, field in schema.items():
                if key in present:
                    try:
                        block[key] = field.parse(section, key)
                    except ValueError as error:
                        raise ConfigError('Invalid Value For {}.{}: {}.'.format(
                            name, key, error))
                elif (name, key) in PRESETS[preset]:
                    block[key] = PRESETS[preset][(name, key)]
                elif field.default is REQUIRED:
                    raise ConfigError('Missing Required Key {}.{}.'.format(
                        name, key))
                else:
                    block[key] = field.default
            values[name] = block
        return cls(values, loader.path)

    @classmethod
    def load(cls, path):
        return cls.from_loader(SettingsLoader(path))

    def _validate(self):
        if self.get('sim', 'dt') <= 0:
            raise ConfigError('sim.dt Must Be Positive.')
        if self.get('run', 'batch_size') < 1:
            raise ConfigError('run.batch_size Must Be Positive.')
        for key in ('friction_range', 'gain_range', 'delay_range_ms'):
            _check_range('randomization.' + key,
                         self.get('randomization', key))
        ratio = self.get('data', 'split_ratio')
        if not 0.0 < ratio <= 1.0:
            raise ConfigError('data.split_ratio Must Be In (0, 1].')
        for name in self.get('data', 'families'):
            if name not in FamilyRegister.names():
                raise ConfigError('Unknown Motion Family {!r}.'.format(name))
        for key, value in self.values['data'].items():
            if key.split('_')[0] in FamilyRegister.names():
                _check_range('data.' + key, value)
        for section in ('generator', 'student'):
            if self.get(section, 'objective') not in ('ddpm', 'velocity'):
                raise ConfigError('{}.objective Must Be ddpm Or velocity.'
                                  .format(section))
        if self.get('student', 'policy') not in ('mlp', 'diffusion'):
            raise ConfigError('student.policy Must Be mlp Or diffusion.')
        for section, key in (('generator', 'head_backbone'),
                             ('student', 'backbone')):
            if self.get(section, key) not in DENOISER_BACKBONES:
                raise ConfigError('{}.{} Must Be mlp Or dit.'.format(
                    section, key))
        for section in ('run', 'generator', 'teacher', 'student'):
            if self.get(section, 'log_interval') < 1:
                raise ConfigError('{}.log_interval Must Be Positive.'.format(
                    section))
        try:
            self.optimizer_config()
            self.teacher_config().optimizer()
            self.student_config().optimizer()
            self.env_config()
        except ValueError as error:
            raise ConfigError(str(error))

    def get(self, section, key):
        return self.values[section][key]

    def section(self, name):
        return dict(self.values[name])

    def override(self, section, key, value):
        """Command line overrides go through the same typed schema."""
        field = SCHEMA[section][key]
        if field.kind is not tuple and not isinstance(value, field.kind):
            value = field.kind(value)
        values = OrderedDict(
            (name, OrderedDict(block)) for name, block in self.values.items())
        values[section][key] = value
        return RunConfig(values, self.path)

    # component builders.

    def _pick(self, cls, section, rename=None):
        block = self.values[section]
        rename = rename or {}
        names = {item.name for item in fields(cls)}
        return cls(**{
            name: block[rename.get(name, name)] for name in names
            if rename.get(name, name) in block
        })

    def env_config(self):
        sim, rand = self.values['sim'], self.values['randomization']
        return EnvConfig(
            num_envs=self.get('run', 'batch_size'),
            physics_dt=sim['dt'],
            decimation=sim['decimation'],
            contact_stiffness=sim['contact_stiffness'],
            contact_damping=sim['contact_damping'],
            friction_damping=sim['friction_damping'],
            randomize=rand['enabled'],
            pushes=rand['enabled'] and rand['pushes'],
            friction_range=rand['friction_range'],
            gain_range=rand['gain_range'],
            delay_range_ms=rand['delay_range_ms'],
            push_interval=rand['push_interval'],
            push_velocity=rand['push_velocity'],
            pitch_limit=sim['pitch_limit'],
            termination_threshold=self.get('curriculum', 'initial'),
        )

    def evaluation_env_config(self):
        return replace(self.env_config(), num_envs=1, randomize=False,
                       pushes=False, termination_threshold=float('inf'))

    def generator_config(self):
        return self._pick(GeneratorConfig, 'generator')

    def optimizer_config(self):
        block = self.values['generator']
        return OptimizerConfig(lr=block['lr'],
                               weight_decay=block['weight_decay'])

    def teacher_config(self):
        return self._pick(TeacherConfig, 'teacher')

    def student_config(self):
        return self._pick(StudentConfig, 'student')

    def cas_config(self):
        return self._pick(CasConfig, 'cas')

    def curriculum_config(self):
        return self._pick(CurriculumConfig, 'curriculum')

    def metrics_config(self):
        return self._pick(MetricsConfig, 'metrics')

    def reward_weights(self):
        return self._pick(RewardWeights, 'reward')

    def reward_kernels(self):
        return RewardKernels(**{
            item.name: self.get('reward', 'sigma_' + item.name)
            for item in fields(RewardKernels)
        })

    def reward_settings(self):
        return self._pick(RewardSettings, 'reward')

    def corpus_spec(self):
        data = self.values['data']
        ranges = {}
        for name in data['families']:
            family = FamilyRegister.get_family(name)
            ranges[name] = {
                param: data['{}_{}'.format(name, param)]
                for param in family.RANGES
            }
        return CorpusSpec(data['families'], data['clips_per_family'],
                          data['frame_rate'], data['duration'], ranges)

    # paths.

    def _resolve(self, path):
        if os.path.isabs(path) or self.path is None:
            return path
        return os.path.join(os.path.dirname(os.path.abspath(self.path)),
                            path)

    def robot_path(self):
        robot = self.get('run', 'robot')
        return self._resolve(robot) if robot else default_robot_path()

    def robot_model(self):
        return load_robot(self.robot_path())

    def out_dir(self):
        return self._resolve(self.get('run', 'out'))

    def manifest_path(self):
        manifest = self.get('run', 'manifest')
        if manifest:
            return self._resolve(manifest)
        return os.path.join(self.out_dir(), 'data', 'manifest.cfg')

    # hashing.

    def canonical_lines(self, sections):
        lines = []
        for section in sorted(sections):
            for key in sorted(self.values[section]):
                lines.append('{}.{}={}'.format(
                    section, key, canonical(self.values[section][key])))
        return lines

    def component_hash(self, kind):
        if kind not in COMPONENT_SECTIONS:
            raise ConfigError('Unknown Component {!r}.'.format(kind))
        text = '\n'.join(self.canonical_lines(COMPONENT_SECTIONS[kind]))
        return hashlib.sha256(text.encode('utf-8')).hexdigest()
