"""
Syntax:
    description : statements

    statements  : statements statement
                | empty

    statement   : KIND WORD attributes NEWLINE
                | NEWLINE
                | error NEWLINE

    attributes  : attributes attribute
                | empty

    attribute   : KEY values

    values      : values value
                | empty

    value       : NUMBER
                | WORD

Semantics:
    1. "link thigh_l mass 5.0 inertia 0.07 com 0.0 -0.2": declare a link
    with its mass (kg), rotational inertia about its center (kg m^2) and
    the center of mass in the link frame (m).
    2. "joint knee_l parent thigh_l child shank_l anchor 0.0 -0.4 limit
    -2.2 0.05 torque 150 kp 200 kd 5 default -0.6 lower": a revolute joint
    placed at "anchor" in the parent frame. "lower" tags the joint as part
    of the lower body.
    3. "keypoint toe_l on foot_l at 0.15 -0.06": a tracked point.
    4. "foot left points heel_l toe_l": contact points of one foot.
    5. "robot biped": optional name of the description.
"""

from ply import yacc
from .lexer import tokens, lexer
from .utils import Statement, ErrorCollector


start = 'description'


def p_description(p):
    'description : statements'
    p[0] = p[1]


def p_statements(p):
    '''statements : statements statement
                  | empty'''
    if len(p) == 2:
        p[0] = []
    else:
        statements = p[1]
        if p[2] is not None:
            statements.append(p[2])
        p[0] = statements


def p_statement(p):
    'statement : KIND WORD attributes NEWLINE'
    p[0] = Statement(p[1], p[2], p[3], p.lineno(1))


def p_statement_blank(p):
    'statement : NEWLINE'
    p[0] = None


def p_statement_error(p):
    'statement : error NEWLINE'
    p[0] = None


def p_attributes(p):
    '''attributes : attributes attribute
                  | empty'''
    if len(p) == 2:
        p[0] = []
    else:
        attributes = p[1]
        attributes.append(p[2])
        p[0] = attributes


def p_attribute(p):
    'attribute : KEY values'
    p[0] = (p[1], p[2])


def p_values(p):
    '''values : values value
              | empty'''
    if len(p) == 2:
        p[0] = []
    else:
        values = p[1]
        values.append(p[2])
        p[0] = values


def p_value(p):
    '''value : NUMBER
             | WORD'''
    p[0] = p[1]


def p_empty(p):
    'empty :'
    p[0] = None


def p_error(p):
    if p is None:
        ErrorCollector.add_yacc_message(('[EOF]', lexer.lineno))
    else:
        ErrorCollector.add_yacc_message((p.value, p.lineno))


parser = yacc.yacc(
    debug=False,
    write_tables=False,
)


def parse_statements(text):
    ErrorCollector.clean_up()
    lexer.lineno = 1
    # every statement is closed by a newline.
    statements = parser.parse(text + '\n', lexer=lexer)
    ErrorCollector.raise_if_any()
    return statements or []
