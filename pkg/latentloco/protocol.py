"""
Pipeline stages exposed on the command line.

Every subclass of `BaseStage` that declares a `command` is registered on
class creation; the top-level usage text and the dispatch table are
derived from the registered stages.
"""

from .doc_construct import DocConstructor


class UsageError(ValueError):
    pass


class _UniqueKeyDict(dict):

    def __setitem__(self, key, val):
        if key in self:
            raise KeyError('Stage Already Existed!.')
        super().__setitem__(key, val)


class StageRegister(type):

    stage_mapping = _UniqueKeyDict()

    @classmethod
    def clean_up_registered_stages(cls):
        cls.stage_mapping = _UniqueKeyDict()

    @classmethod
    def get_stage(cls, command):
        return cls.stage_mapping.get(command, None)

    @classmethod
    def get_registered_stages(cls):
        return dict(cls.stage_mapping)

    @classmethod
    def _should_process(cls, cls_name, namespace):
        return cls_name != 'BaseStage' and namespace.get('command')

    def __new__(cls, cls_name, bases, namespace, **kargs):
        stage_cls = super().__new__(cls, cls_name, bases, namespace, **kargs)
        if cls._should_process(cls_name, namespace):
            cls.stage_mapping[namespace['command']] = stage_cls
        return stage_cls


class BaseStage(metaclass=StageRegister):

    # subcommand name and its one-line explanation.
    command = None
    explanation = ''
    # extra docopt usage fragment and option lines of the subcommand.
    arguments = ''
    options = ()

    def get_command_and_explanation(self):
        return self.command, self.explanation

    def get_doc(self):
        return DocConstructor.get_stage_doc(self)

    def run(self, args):
        raise NotImplementedError('Stage Must Implement run.')
