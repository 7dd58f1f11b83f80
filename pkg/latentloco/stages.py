"""
The pipeline subcommands.

Each stage loads the run configuration, works inside the output layout
and prints one JSON summary line on stdout. Logging goes to stderr.
"""

import glob
import json
import logging
import os
import re

import numpy as np
import torch

from .checkpoint import (
    autoencoder_checkpoint,
    checkpoint_load,
    checkpoint_save,
    generator_checkpoint,
    restore_generator,
    restore_optimizer,
    restore_student,
    restore_teacher,
    student_checkpoint,
    teacher_checkpoint,
)
from .generator import (
    GeneratorTrainer,
    build_generator,
    decode_latents,
    generate_latents,
    save_latents,
)
from .metrics import (
    MODES,
    PipelineComponents,
    evaluate_clip,
    generation_metrics,
    pipeline_timing,
)
from .motion import (
    LabelVocabulary,
    ManifestEntry,
    NormStats,
    compute_norm_stats,
    load_split,
    save_clip,
    save_manifest,
    split_corpus,
    stability_filter,
    synthesize_corpus,
)
from .protocol import BaseStage, UsageError
from .report import (
    AGGREGATE_ID,
    ProgressLog,
    ReportError,
    load_report,
    report_emit,
    table_emit,
    timing_emit,
)
from .settings import RunConfig
from .student import DistillationTrainer, generated_latents
from .teacher import TeacherTrainer


logger = logging.getLogger(__name__)


class Layout:

    """Where a run keeps its files, all below the output directory."""

    def __init__(self, cfg):
        self.root = cfg.out_dir()
        self.manifest = cfg.manifest_path()
        self.clips = os.path.join(os.path.dirname(self.manifest), 'clips')
        self.checkpoints = os.path.join(self.root, 'checkpoints')
        self.progress = os.path.join(self.root, 'progress')
        self.reports = os.path.join(self.root, 'reports')
        self.latents = os.path.join(self.root, 'latents')
        self.rollouts = os.path.join(self.root, 'rollouts')

    def checkpoint(self, kind):
        return os.path.join(self.checkpoints, kind + '.ckpt')

    def progress_file(self, name):
        return os.path.join(self.progress, name + '.csv')


def _int_option(args, name):
    value = args.get(name)
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        raise UsageError('{} Expects An Integer, Got {!r}.'.format(
            name, value))


def _slug(text):
    return re.sub(r'[^a-z0-9]+', '-', text.lower()).strip('-') or 'motion'


class RunStage(BaseStage):

    # (option, section, key) pairs copied into the configuration.
    overrides = ()

    def load_config(self, args):
        cfg = RunConfig.load(args['--config'])
        seed = _int_option(args, '--seed')
        if seed is not None:
            cfg = cfg.override('run', 'seed', seed)
        if args.get('--out'):
            cfg = cfg.override('run', 'out', os.path.abspath(args['--out']))
        for option, section, key in self.overrides:
            if args.get(option):
                cfg = cfg.override(section, key, args[option])
        return cfg

    def run(self, args):
        cfg = self.load_config(args)
        summary = self.execute(cfg, Layout(cfg), args)
        print(json.dumps(summary, sort_keys=True))
        return summary

    def execute(self, cfg, layout, args):
        raise NotImplementedError('Stage Must Implement execute.')

    # trained components.

    def _load(self, cfg, layout, args, kind, path=None):
        return checkpoint_load(path or layout.checkpoint(kind), kind,
                               cfg.component_hash(kind), args['--force'])

    def load_generator(self, cfg, layout, args, path=None):
        return restore_generator(self._load(cfg, layout, args, 'generator',
                                            path))

    def load_teacher(self, cfg, layout, args, path=None):
        checkpoint = self._load(cfg, layout, args, 'teacher', path)
        policy, _ = restore_teacher(checkpoint)
        return policy, checkpoint

    def load_student(self, cfg, layout, args, model, path=None):
        student, _ = restore_student(
            self._load(cfg, layout, args, 'student', path), model)
        return student

    def components(self, cfg, layout, args, model, modes):
        """PipelineComponents holding what `modes` need."""
        path = args.get('--checkpoint')
        generator, stats = self.load_generator(cfg, layout, args)
        parts = PipelineComponents(model, generator, stats,
                                   env_cfg=cfg.evaluation_env_config())
        if 'latent' in modes:
            parts.student = self.load_student(
                cfg, layout, args, model, path if len(modes) == 1 else None)
        if 'explicit' in modes:
            parts.teacher, _ = self.load_teacher(
                cfg, layout, args, path if len(modes) == 1 else None)
        return parts

    def split(self, layout, name, fallback=None):
        clips = load_split(layout.manifest, name)
        if not clips and fallback:
            logger.info('split %s is empty, using %s', name, fallback)
            clips = load_split(layout.manifest, fallback)
        if not clips:
            raise RuntimeError('No Clips In Split {!r}.'.format(name))
        return clips


def _mode(args):
    mode = args.get('--mode') or 'latent'
    if mode not in MODES:
        raise UsageError('Unknown Mode {!r}, Expected latent Or explicit.'
                         .format(mode))
    return mode


_MODE_OPTION = ('--mode=<mode>', 'latent or explicit [default: latent].')
_CHECKPOINT_OPTION = ('--checkpoint=<path>', 'Checkpoint to load.')


class GenerateDataStage(RunStage):

    command = 'gen-data'
    explanation = 'Synthesize, filter and split the motion corpus.'

    def execute(self, cfg, layout, args):
        model = cfg.robot_model()
        seed = cfg.get('run', 'seed')
        data = cfg.section('data')
        clips = synthesize_corpus(cfg.corpus_spec(), seed, model)
        kept = []
        for clip in clips:
            result = stability_filter(clip, model, data['epsilon'],
                                      data['max_unstable_run'],
                                      data['foot_height'])
            if result.keep:
                kept.append(clip)
            else:
                logger.info('dropped clip=%s longest_unstable=%d',
                            clip.clip_id, result.longest_unstable_run)
        if not kept:
            raise RuntimeError('Every Clip Failed The Stability Filter.')
        train, test = split_corpus(kept, data['split_ratio'], seed)

        base = os.path.dirname(layout.manifest)
        os.makedirs(layout.clips, exist_ok=True)
        entries = []
        for split, members in (('train', train), ('test', test)):
            for clip in members:
                path = os.path.join(layout.clips, clip.clip_id + '.gloc')
                save_clip(path, clip)
                entries.append(ManifestEntry(
                    clip.clip_id, os.path.relpath(path, base), clip.label,
                    clip.family, split))
        save_manifest(layout.manifest, entries)
        return {'clips': len(clips), 'kept': len(kept), 'train': len(train),
                'test': len(test), 'manifest': layout.manifest}


class TrainGeneratorStage(RunStage):

    command = 'train-generator'
    explanation = ('Train the motion autoencoder and the masked '
                   'autoregressive generator.')
    options = (
        ('--objective=<name>', 'ddpm or velocity.'),
        ('--checkpoint=<path>', 'Resume from a generator checkpoint.'),
    )
    overrides = (('--objective', 'generator', 'objective'),)

    def execute(self, cfg, layout, args):
        model = cfg.robot_model()
        seed = cfg.get('run', 'seed')
        block = cfg.section('generator')
        gcfg = cfg.generator_config()
        train = self.split(layout, 'train')
        config_hash = cfg.component_hash('generator')

        resume = None
        if args.get('--checkpoint'):
            resume = checkpoint_load(args['--checkpoint'], 'generator',
                                     config_hash, args['--force'])
            stats = NormStats.from_state_dict(resume.extra['stats'])
            vocab = LabelVocabulary(resume.extra['phrases'],
                                    resume.extra['label_width'])
        else:
            stats = compute_norm_stats(train)
            torch.manual_seed(seed)
            vocab = LabelVocabulary.from_clips(train, gcfg.label_width)
        generator = build_generator(gcfg, vocab, model.joint_count,
                                    model.keypoint_count, train[0].frame_rate)
        trainer = GeneratorTrainer(generator, train, stats,
                                   cfg.optimizer_config(),
                                   block['batch_size'], seed)
        progress = ProgressLog(layout.progress_file('generator'))
        step = 0
        try:
            if resume is not None:
                generator.load_state_dict(resume.params)
                restore_optimizer(trainer.params, resume)
                step = resume.step
            else:
                ae_losses = trainer.train_autoencoder(block['ae_iterations'],
                                                      block['log_interval'])
                for index, loss in enumerate(ae_losses):
                    progress.write({'phase': 'autoencoder',
                                    'iteration': index + 1, 'loss': loss})
                checkpoint_save(
                    layout.checkpoint('autoencoder'),
                    autoencoder_checkpoint(
                        generator, trainer.ae_params, len(ae_losses),
                        cfg.component_hash('autoencoder'), stats))
            losses = trainer.train(block['iterations'], block['log_interval'])
            for index, loss in enumerate(losses):
                progress.write({'phase': 'generator',
                                'iteration': step + index + 1, 'loss': loss})
        finally:
            progress.close()
        step += len(losses)
        path = checkpoint_save(
            layout.checkpoint('generator'),
            generator_checkpoint(generator, trainer.params, step,
                                 config_hash, stats))
        mse, variance = trainer.reconstruction_error(train)
        tail = losses[-min(len(losses), 10):] if losses else [float('nan')]
        return {'checkpoint': path, 'step': step, 'objective': gcfg.objective,
                'loss': float(np.mean(tail)), 'reconstruction_mse': mse,
                'feature_variance': variance}


class TrainTeacherStage(RunStage):

    command = 'train-teacher'
    explanation = ('Train the mixture-of-experts teacher with PPO and '
                   'refine the corpus.')

    def execute(self, cfg, layout, args):
        model = cfg.robot_model()
        seed = cfg.get('run', 'seed')
        tcfg = cfg.teacher_config()
        clips = self.split(layout, 'train')
        trainer = TeacherTrainer(
            model, clips, tcfg, cfg.env_config(), cfg.cas_config(),
            cfg.curriculum_config(), seed, cfg.reward_weights(),
            cfg.reward_kernels(), cfg.reward_settings(),
            layout.progress_file('teacher'))
        kept = trainer.run()
        path = checkpoint_save(
            layout.checkpoint('teacher'),
            teacher_checkpoint(trainer.policy, trainer.params,
                               trainer.iteration,
                               cfg.component_hash('teacher'), tcfg,
                               [clip.clip_id for clip in kept]))
        last = trainer.history[-1] if trainer.history else {}
        return {'checkpoint': path, 'iterations': trainer.iteration,
                'clips': len(clips), 'kept': len(kept),
                'mean_reward': last.get('mean_reward'),
                'success_rate': last.get('success_rate')}


class DistillStudentStage(RunStage):

    command = 'distill-student'
    explanation = ('Distill the teacher into the latent-conditioned '
                   'student with dataset aggregation.')
    options = (
        ('--policy=<kind>', 'mlp or diffusion.'),
        ('--objective=<name>', 'ddpm or velocity.'),
    )
    overrides = (('--policy', 'student', 'policy'),
                 ('--objective', 'student', 'objective'))

    def execute(self, cfg, layout, args):
        model = cfg.robot_model()
        seed = cfg.get('run', 'seed')
        scfg = cfg.student_config()
        generator, _ = self.load_generator(cfg, layout, args)
        teacher, teacher_ckpt = self.load_teacher(cfg, layout, args)
        clips = self.split(layout, 'train')
        kept_ids = set(teacher_ckpt.extra.get('clip_ids') or ())
        if kept_ids:
            clips = [clip for clip in clips if clip.clip_id in kept_ids]
        if not clips:
            raise RuntimeError('No Clips Left For Distillation.')
        latents = generated_latents(generator, clips, seed)
        threshold = cfg.curriculum_config().threshold(teacher_ckpt.step)
        env_cfg = cfg.env_config()
        env_cfg.termination_threshold = threshold
        trainer = DistillationTrainer(
            model, teacher, clips, latents, scfg, env_cfg, seed,
            cfg.reward_weights(), cfg.reward_kernels(),
            cfg.reward_settings(), layout.progress_file('student'))
        history = trainer.run()
        path = checkpoint_save(
            layout.checkpoint('student'),
            student_checkpoint(trainer.student, trainer.params,
                               trainer.params.step_count,
                               cfg.component_hash('student'), scfg,
                               generator.cfg.latent_width))
        last = history[-1] if history else {}
        return {'checkpoint': path, 'policy': scfg.policy,
                'rounds': len(history), 'clips': len(clips),
                'mean_loss': last.get('mean_loss'),
                'success_rate': last.get('success_rate')}


class EvaluateStage(RunStage):

    command = 'eval'
    explanation = ('Track the test clips from generated latents and write '
                   'the tracking and generation reports.')
    options = (
        _MODE_OPTION,
        _CHECKPOINT_OPTION,
        ('--zero-latent', 'Replace the latents by zeros.'),
    )

    def execute(self, cfg, layout, args):
        mode = _mode(args)
        model = cfg.robot_model()
        seed = cfg.get('run', 'seed')
        mcfg = cfg.metrics_config()
        parts = self.components(cfg, layout, args, model, (mode,))
        clips = self.split(layout, 'test', fallback='train')
        records = []
        for index, clip in enumerate(clips):
            report, _ = evaluate_clip(mode, clip, parts, mcfg, seed + index,
                                      args.get('--zero-latent', False))
            records.append(report.record())
        name = 'eval_' + mode + ('_zero' if args.get('--zero-latent') else '')
        csv_path, _ = report_emit(records, layout.reports, name,
                                  mcfg.record_timings)
        generation = generation_metrics(parts.generator, parts.stats, clips,
                                        mcfg, seed)
        table_emit([generation], list(generation), layout.reports,
                   'generation')
        success = [record['succ'] for record in records]
        return {'mode': mode, 'clips': len(records), 'report': csv_path,
                'success_rate': float(np.mean(success)),
                'fid': generation['fid']}


class RolloutStage(RunStage):

    command = 'rollout'
    explanation = 'Roll out the policy on clips and save the trajectories.'
    options = (
        _MODE_OPTION,
        _CHECKPOINT_OPTION,
        ('--split=<name>', 'train or test [default: test].'),
        ('--clip=<id>', 'Roll out one clip only.'),
        ('--zero-latent', 'Replace the latents by zeros.'),
    )

    def execute(self, cfg, layout, args):
        mode = _mode(args)
        model = cfg.robot_model()
        seed = cfg.get('run', 'seed')
        mcfg = cfg.metrics_config()
        parts = self.components(cfg, layout, args, model, (mode,))
        clips = self.split(layout, args.get('--split') or 'test',
                           fallback='train')
        if args.get('--clip'):
            clips = [clip for clip in clips if clip.clip_id == args['--clip']]
            if not clips:
                raise UsageError('No Clip {!r}.'.format(args['--clip']))
        os.makedirs(layout.rollouts, exist_ok=True)
        records = []
        for index, clip in enumerate(clips):
            report, track = evaluate_clip(mode, clip, parts, mcfg,
                                          seed + index,
                                          args.get('--zero-latent', False))
            records.append(report.record())
            stem = os.path.join(layout.rollouts,
                                '{}-{}'.format(clip.clip_id, mode))
            save_clip(stem + '.gloc', track.executed)
            save_clip(stem + '.reference.gloc', track.reference)
        csv_path, _ = report_emit(records, layout.reports, 'rollout_' + mode,
                                  mcfg.record_timings)
        return {'mode': mode, 'clips': len(records), 'report': csv_path,
                'rollouts': layout.rollouts}


class TimingStage(RunStage):

    command = 'timing'
    explanation = ('Time label-to-motion in latent mode against decode, '
                   'retarget and track in explicit mode.')
    options = (
        ('--label=<phrase>', 'Command phrase to generate from.'),
        ('--trials=<n>', 'Trials per mode.'),
        ('--tokens=<n>', 'Latent tokens per trial [default: 16].'),
    )

    def execute(self, cfg, layout, args):
        model = cfg.robot_model()
        seed = cfg.get('run', 'seed')
        mcfg = cfg.metrics_config()
        trials = _int_option(args, '--trials') or mcfg.trials
        tokens = _int_option(args, '--tokens') or 16
        parts = self.components(cfg, layout, args, model, MODES)
        label = args.get('--label') or parts.generator.vocab.phrases[0]
        rows, totals = [], {}
        for mode in MODES:
            trial_rows, means = pipeline_timing(
                mode, label, parts, trials, seed, tokens,
                mcfg.retarget_iterations, mcfg.retarget_step)
            for trial, timings in enumerate(trial_rows):
                row = {'mode': mode, 'trial': trial}
                for stage, seconds in timings.items():
                    row['t_' + stage] = seconds
                rows.append(row)
            totals[mode] = [timings['total'] for timings in trial_rows]
        csv_path, _ = timing_emit(rows, layout.reports)
        faster = all(latent < explicit for latent, explicit
                     in zip(totals['latent'], totals['explicit']))
        return {'label': label, 'trials': trials, 'report': csv_path,
                'latent_mean_total': float(np.mean(totals['latent'])),
                'explicit_mean_total': float(np.mean(totals['explicit'])),
                'latent_faster_every_trial': faster}


class ReportStage(RunStage):

    command = 'report'
    explanation = 'Collect the aggregate rows of every report into a summary.'

    def execute(self, cfg, layout, args):
        summary = {}
        paths = sorted(glob.glob(os.path.join(layout.reports, '*.json')))
        for path in paths:
            name = os.path.splitext(os.path.basename(path))[0]
            if name == 'summary':
                continue
            rows = load_report(path)
            aggregates = [row for row in rows
                          if AGGREGATE_ID in (row.get('clip_id'),
                                              row.get('trial'))]
            summary[name] = aggregates or rows
        if not summary:
            raise ReportError('No Reports Under {}.'.format(layout.reports))
        path = os.path.join(layout.reports, 'summary.json')
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
            handle.write('\n')
        return {'summary': path, 'reports': sorted(summary)}


class GenerateStage(RunStage):

    command = 'generate'
    explanation = 'Generate a latent sequence for a command phrase.'
    arguments = ' --label=<phrase>'
    options = (
        ('--label=<phrase>', 'Command phrase to generate from.'),
        ('--tokens=<n>', 'Latent tokens to generate [default: 16].'),
        ('--decode', 'Also write the decoded motion clip.'),
    )

    def execute(self, cfg, layout, args):
        seed = cfg.get('run', 'seed')
        tokens = _int_option(args, '--tokens') or 16
        generator, stats = self.load_generator(cfg, layout, args)
        latents = generate_latents(generator, args['--label'], tokens, seed)
        os.makedirs(layout.latents, exist_ok=True)
        stem = os.path.join(layout.latents, '{}-{}'.format(
            _slug(latents.label), seed))
        save_latents(stem + '.gloc', latents)
        summary = {'latents': stem + '.gloc', 'label': latents.label,
                   'tokens': latents.token_count}
        if args.get('--decode'):
            clip = decode_latents(generator, latents, stats)
            save_clip(stem + '.clip.gloc', clip)
            summary['clip'] = stem + '.clip.gloc'
        return summary
