import json
import logging
import os
import sys

from docopt import docopt, DocoptExit

from . import __version__
from .checkpoint import (CorruptCheckpointError, ConfigHashMismatchError,
                         MissingCheckpointError)
from .doc_construct import DocConstructor
from .motion import ClipFormatError
from .nets import set_threads
from .protocol import StageRegister, UsageError
from .settings import ConfigError
from . import stages  # noqa: F401, registers the stages.


logger = logging.getLogger(__name__)

THREADS_VARIABLE = 'LATENTLOCO_THREADS'

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_UNKNOWN_COMMAND = 3
EXIT_INVALID_CONFIG = 4
EXIT_MISSING_CHECKPOINT = 5
EXIT_CORRUPT_FILE = 6

# checked in order; the first matching class decides the exit status.
_ERROR_CODES = (
    (UsageError, EXIT_USAGE, 'usage'),
    (ConfigError, EXIT_INVALID_CONFIG, 'invalid_config'),
    (MissingCheckpointError, EXIT_MISSING_CHECKPOINT, 'missing_checkpoint'),
    (CorruptCheckpointError, EXIT_CORRUPT_FILE, 'corrupt_checkpoint'),
    (ConfigHashMismatchError, EXIT_CORRUPT_FILE, 'config_hash_mismatch'),
    (ClipFormatError, EXIT_CORRUPT_FILE, 'corrupt_file'),
)


def _get_args(doc, argv, options_first=False):
    args = docopt(
        doc,
        argv=argv,
        version=__version__,
        options_first=options_first,
    )
    return args


def _report_error(code, name, message, usage=None):
    if usage:
        print(usage.strip(), file=sys.stderr)
    print(json.dumps({'error': name, 'message': str(message)}),
          file=sys.stderr)
    return code


def _configure_logging(verbose):
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(
        '%(asctime)s %(levelname)s %(name)s: %(message)s'))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def _thread_count():
    value = os.environ.get(THREADS_VARIABLE, '1')
    try:
        return int(value)
    except ValueError:
        raise ConfigError('{} Must Be An Integer, Got {!r}.'.format(
            THREADS_VARIABLE, value))


def _get_stage_instance(stage_cls):
    return stage_cls()


def _run_stage(stage, argv):
    try:
        args = _get_args(stage.get_doc(), argv)
    except DocoptExit as error:
        return _report_error(EXIT_USAGE, 'usage', 'Invalid Arguments.',
                             str(error))
    _configure_logging(args['--verbose'])
    try:
        set_threads(_thread_count())
        stage.run(args)
    except Exception as error:
        for cls, code, name in _ERROR_CODES:
            if isinstance(error, cls):
                return _report_error(code, name, error)
        logger.debug('stage failed', exc_info=True)
        return _report_error(EXIT_FAILURE, 'stage_failure',
                             '{}: {}'.format(type(error).__name__, error))
    return EXIT_OK


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    registered = StageRegister.get_registered_stages()
    doc, cli_mapping = DocConstructor.get_doc_and_cli_mapping(
        map(_get_stage_instance,
            [registered[name] for name in sorted(registered)]),
    )
    try:
        args = _get_args(doc, argv, options_first=True)
    except DocoptExit as error:
        return _report_error(EXIT_USAGE, 'usage', 'Invalid Arguments.',
                             str(error))
    except SystemExit as done:
        # --help and --version.
        return EXIT_OK if done.code is None else EXIT_USAGE

    command = args['<command>']
    stage = cli_mapping.get(command, None)
    if stage is None:
        return _report_error(EXIT_UNKNOWN_COMMAND, 'unknown_subcommand',
                             'No Such Command: {}'.format(command), doc)
    try:
        return _run_stage(stage, [command] + args['<args>'])
    except SystemExit as done:
        return EXIT_OK if done.code is None else EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
