import re
from ply import lex
from .utils import ErrorCollector


KINDS = ('robot', 'link', 'joint', 'keypoint', 'foot')
KEYS = ('mass', 'inertia', 'com', 'parent', 'child', 'anchor', 'limit',
        'torque', 'kp', 'kd', 'default', 'lower', 'on', 'at', 'points')


tokens = (
    'KIND',
    'KEY',
    'WORD',
    'NUMBER',
    'NEWLINE',
)


def t_NUMBER(t):
    r'[-+]?(\d+\.\d*|\.\d+|\d+)([eE][-+]?\d+)?'
    t.value = float(t.value)
    return t


def t_WORD(t):
    r'[^\d\W]\w*'
    if t.value in KINDS:
        t.type = 'KIND'
    elif t.value in KEYS:
        t.type = 'KEY'
    return t


def t_NEWLINE(t):
    r'\n+'
    t.lexer.lineno += len(t.value)
    return t


t_ignore = ' \t\r'
t_ignore_COMMENT = r'\#.*'


def t_error(t):
    ErrorCollector.add_lex_message(
        (t.value[0], t.lineno),
    )
    t.lexer.skip(1)

lexer = lex.lex(
    debug=False,
    reflags=int(re.ASCII),
)
