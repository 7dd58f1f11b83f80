import os


_DOC_TEMPLATE = """
Usage:
    latentloco <command> [<args>...]
    latentloco (-h | --help)
    latentloco --version

Options:
    -h --help  Show this text.
    --version  Show the version.

Available Commands:
{0}
"""

_STAGE_TEMPLATE = """
Usage:
    latentloco {command} --config=<path> [options]{arguments}

{explanation}

Options:
{options}
"""

_NEWLINE = os.linesep

COMMON_OPTIONS = (
    ('--config=<path>', 'Run configuration file.'),
    ('--seed=<n>', 'Override the [run] seed.'),
    ('--out=<dir>', 'Override the [run] output directory.'),
    ('--force', 'Load checkpoints despite a config hash mismatch.'),
    ('--verbose', 'Log at debug level.'),
    ('-h --help', 'Show this text.'),
)


class DocConstructor:

    @classmethod
    def _get_explanation(cls, command, explanation, width):
        INDENT4 = ' ' * 4
        INDENT2 = ' ' * 2
        return (INDENT4 + command.ljust(width) +
                INDENT2 + explanation)

    @classmethod
    def get_doc_and_cli_mapping(cls, stages):
        stages = list(stages)
        mapping = {}
        pairs = [stage.get_command_and_explanation() for stage in stages]
        width = max([len(command) for command, _ in pairs] or [0])
        explanations = []
        for stage, (command, explanation) in zip(stages, pairs):
            explanations.append(
                cls._get_explanation(command, explanation, width),
            )
            mapping[command] = stage

        doc = _DOC_TEMPLATE.format(
            _NEWLINE.join(explanations),
        )
        return doc, mapping

    @classmethod
    def get_stage_doc(cls, stage):
        options = COMMON_OPTIONS + tuple(stage.options)
        width = max(len(flag) for flag, _ in options)
        lines = [cls._get_explanation(flag, text, width)
                 for flag, text in options]
        return _STAGE_TEMPLATE.format(
            command=stage.command,
            arguments=stage.arguments,
            explanation=stage.explanation,
            options=_NEWLINE.join(lines),
        )
