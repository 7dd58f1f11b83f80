class Statement:

    def __init__(self, kind, name, attributes, lineno):
        self.kind = kind
        self.name = name
        # list of (key, [values]) in source order.
        self.attributes = attributes
        self.lineno = lineno

    def get(self, key):
        for attr_key, values in self.attributes:
            if attr_key == key:
                return values
        return None

    def keys(self):
        return [key for key, _ in self.attributes]

    def __repr__(self):
        return '<Statement {} {} line {}: {}>'.format(
            self.kind,
            self.name,
            self.lineno,
            self.attributes,
        )


class RobotSyntaxError(SyntaxError):

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__(
            'Robot Description Error: ' + '; '.join(self.messages),
        )


class _ContainerError:

    def __init__(self, name):
        self._name = name

    def __get__(self, instance, cls):
        container_name = cls._get_message_container(self._name)
        container = getattr(cls, container_name)
        return bool(container)


class ErrorCollector:

    lex_error = _ContainerError('lex')
    yacc_error = _ContainerError('yacc')
    model_error = _ContainerError('model')

    _lex_message_container = []
    _yacc_message_container = []
    _model_message_container = []

    @classmethod
    def _get_message_container(cls, name):
        attr = '_{}_message_container'.format(name)
        return attr

    @classmethod
    def _add_message(cls, name, message):
        attr = cls._get_message_container(name)
        getattr(cls, attr).append(message)

    @classmethod
    def add_lex_message(cls, message):
        char, lineno = message
        cls._add_message(
            'lex',
            "line {}: illegal character '{}'".format(lineno, char),
        )

    @classmethod
    def add_yacc_message(cls, message):
        value, lineno = message
        cls._add_message(
            'yacc',
            "line {}: unexpected '{}'".format(lineno, value),
        )

    @classmethod
    def add_model_message(cls, message):
        text, lineno = message
        cls._add_message('model', 'line {}: {}'.format(lineno, text))

    @classmethod
    def clean_up(cls):
        for name in ('lex', 'yacc', 'model'):
            setattr(cls, cls._get_message_container(name), list())

    @classmethod
    def messages(cls):
        result = []
        for name in ('lex', 'yacc', 'model'):
            result.extend(getattr(cls, cls._get_message_container(name)))
        return result

    @classmethod
    def raise_if_any(cls):
        messages = cls.messages()
        if messages:
            cls.clean_up()
            raise RobotSyntaxError(messages)
