import os
from collections import OrderedDict

import numpy as np

from ..kinematics import KinematicTree
from .grammar import parse_statements
from .utils import ErrorCollector


_DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'data')


def default_robot_path():
    return os.path.join(_DATA_DIR, 'biped.robot')


class Link:

    def __init__(self, name, mass, inertia, com):
        self.name = name
        self.mass = float(mass)
        self.inertia = float(inertia)
        self.com = np.asarray(com, dtype=np.float64)

    def __repr__(self):
        return 'Link({}, mass={})'.format(self.name, self.mass)


class Joint:

    def __init__(self, name, parent, child, anchor, limits, torque_limit,
                 kp, kd, default=0.0, lower=False):
        self.name = name
        self.parent = parent
        self.child = child
        self.anchor = np.asarray(anchor, dtype=np.float64)
        self.limits = (float(limits[0]), float(limits[1]))
        self.torque_limit = float(torque_limit)
        self.kp = float(kp)
        self.kd = float(kd)
        self.default = float(default)
        self.lower = bool(lower)

    def __repr__(self):
        return 'Joint({}, {} -> {})'.format(self.name, self.parent, self.child)


class Keypoint:

    def __init__(self, name, link, offset):
        self.name = name
        self.link = link
        self.offset = np.asarray(offset, dtype=np.float64)

    def __repr__(self):
        return 'Keypoint({} on {})'.format(self.name, self.link)


class Foot:

    def __init__(self, name, points):
        self.name = name
        self.points = list(points)

    def __repr__(self):
        return 'Foot({}, {})'.format(self.name, self.points)


class RobotModel:

    """
    A planar kinematic tree. The root link (the only link that is never a
    joint child) floats with position (x, z) and pitch; every joint adds one
    revolute degree of freedom, so the action dimension equals the joint
    count.
    """

    def __init__(self, name, links, joints, keypoints, feet):
        self.name = name
        self.links = list(links)
        self.joints = list(joints)
        self.keypoints = list(keypoints)
        self.feet = list(feet)
        self._check()
        self._index()

    def _check(self):
        link_names = [link.name for link in self.links]
        if len(set(link_names)) != len(link_names):
            raise ValueError('Duplicated Link Name.')
        if not self.links:
            raise ValueError('Robot Has No Links.')
        seen = {self.root_name()}
        for joint in self.joints:
            if joint.parent not in link_names:
                raise ValueError(
                    'Joint {} References Unknown Parent {}.'.format(
                        joint.name, joint.parent),
                )
            if joint.child not in link_names:
                raise ValueError(
                    'Joint {} References Unknown Child {}.'.format(
                        joint.name, joint.child),
                )
            # joints are listed parent first.
            if joint.parent not in seen:
                raise ValueError(
                    'Joint {} Declared Before Its Parent.'.format(joint.name),
                )
            if joint.child in seen:
                raise ValueError(
                    'Link {} Has Two Parents.'.format(joint.child),
                )
            seen.add(joint.child)
            lo, hi = joint.limits
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(
                    'Joint {} Has Invalid Limits.'.format(joint.name),
                )
            if not (np.isfinite(joint.torque_limit)
                    and joint.torque_limit > 0):
                raise ValueError(
                    'Joint {} Has Invalid Torque Limit.'.format(joint.name),
                )
        if seen != set(link_names):
            raise ValueError('Robot Links Are Not Connected.')
        keypoint_names = [kp.name for kp in self.keypoints]
        for keypoint in self.keypoints:
            if keypoint.link not in link_names:
                raise ValueError(
                    'Keypoint {} References Unknown Link {}.'.format(
                        keypoint.name, keypoint.link),
                )
        for foot in self.feet:
            for point in foot.points:
                if point not in keypoint_names:
                    raise ValueError(
                        'Foot {} References Unknown Keypoint {}.'.format(
                            foot.name, point),
                    )

    def _index(self):
        self.link_index = OrderedDict(
            (link.name, i) for i, link in enumerate(self.links))
        self.joint_index = OrderedDict(
            (joint.name, i) for i, joint in enumerate(self.joints))
        self.keypoint_index = OrderedDict(
            (kp.name, i) for i, kp in enumerate(self.keypoints))

    def root_name(self):
        children = {joint.child for joint in self.joints}
        roots = [link.name for link in self.links if link.name not in children]
        if len(roots) != 1:
            raise ValueError('Robot Must Have Exactly One Root Link.')
        return roots[0]

    @property
    def joint_count(self):
        return len(self.joints)

    @property
    def action_dim(self):
        return len(self.joints)

    @property
    def keypoint_count(self):
        return len(self.keypoints)

    @property
    def total_mass(self):
        return sum(link.mass for link in self.links)

    @property
    def joint_limits(self):
        lows = np.array([joint.limits[0] for joint in self.joints])
        highs = np.array([joint.limits[1] for joint in self.joints])
        return lows, highs

    @property
    def torque_limits(self):
        return np.array([joint.torque_limit for joint in self.joints])

    @property
    def default_pose(self):
        return np.array([joint.default for joint in self.joints])

    @property
    def kp(self):
        return np.array([joint.kp for joint in self.joints])

    @property
    def kd(self):
        return np.array([joint.kd for joint in self.joints])

    @property
    def tree(self):
        tree = getattr(self, '_tree', None)
        if tree is None:
            tree = self._tree = KinematicTree(self)
        return tree

    def lower_body_joints(self):
        return [i for i, joint in enumerate(self.joints) if joint.lower]

    def joints_matching(self, fragment):
        return [i for i, joint in enumerate(self.joints)
                if fragment in joint.name]

    def foot_points(self):
        # flat list of keypoint indices used as contact points, per foot.
        return [[self.keypoint_index[name] for name in foot.points]
                for foot in self.feet]

    def contact_keypoints(self):
        return [index for points in self.foot_points() for index in points]

    def __repr__(self):
        return 'RobotModel({}, joints={}, keypoints={})'.format(
            self.name,
            self.joint_count,
            self.keypoint_count,
        )


_ARITY = {
    'link': {'mass': 1, 'inertia': 1, 'com': 2},
    'joint': {'parent': 1, 'child': 1, 'anchor': 2, 'limit': 2,
              'torque': 1, 'kp': 1, 'kd': 1, 'default': 1, 'lower': 0},
    'keypoint': {'on': 1, 'at': 2},
    'foot': {'points': None},
    'robot': {},
}

_REQUIRED = {
    'link': ('mass', 'inertia'),
    'joint': ('parent', 'child', 'limit', 'torque', 'kp', 'kd'),
    'keypoint': ('on', 'at'),
    'foot': ('points',),
    'robot': (),
}


def _check_statement(statement):
    arity = _ARITY[statement.kind]
    ok = True
    for key, values in statement.attributes:
        if key not in arity:
            ErrorCollector.add_model_message((
                "'{}' is not allowed in a {} statement".format(
                    key, statement.kind),
                statement.lineno,
            ))
            ok = False
        elif arity[key] is not None and len(values) != arity[key]:
            ErrorCollector.add_model_message((
                "'{}' expects {} value(s), got {}".format(
                    key, arity[key], len(values)),
                statement.lineno,
            ))
            ok = False
    for key in _REQUIRED[statement.kind]:
        if statement.get(key) is None:
            ErrorCollector.add_model_message((
                "{} {} is missing '{}'".format(
                    statement.kind, statement.name, key),
                statement.lineno,
            ))
            ok = False
    return ok


def _numbers(statement, key, default=None):
    values = statement.get(key)
    if values is None:
        return default
    for value in values:
        if not isinstance(value, float):
            ErrorCollector.add_model_message((
                "'{}' expects numbers, got '{}'".format(key, value),
                statement.lineno,
            ))
            return default
    return values


def build_model(statements):
    name = 'robot'
    links, joints, keypoints, feet = [], [], [], []

    for statement in statements:
        if not _check_statement(statement):
            continue
        kind = statement.kind
        if kind == 'robot':
            name = statement.name
        elif kind == 'link':
            links.append(Link(
                statement.name,
                _numbers(statement, 'mass', [1.0])[0],
                _numbers(statement, 'inertia', [0.0])[0],
                _numbers(statement, 'com', [0.0, 0.0]),
            ))
        elif kind == 'joint':
            joints.append(Joint(
                statement.name,
                statement.get('parent')[0],
                statement.get('child')[0],
                _numbers(statement, 'anchor', [0.0, 0.0]),
                _numbers(statement, 'limit', [-1.0, 1.0]),
                _numbers(statement, 'torque', [1.0])[0],
                _numbers(statement, 'kp', [0.0])[0],
                _numbers(statement, 'kd', [0.0])[0],
                _numbers(statement, 'default', [0.0])[0],
                statement.get('lower') is not None,
            ))
        elif kind == 'keypoint':
            keypoints.append(Keypoint(
                statement.name,
                statement.get('on')[0],
                _numbers(statement, 'at', [0.0, 0.0]),
            ))
        elif kind == 'foot':
            feet.append(Foot(statement.name, statement.get('points')))

    ErrorCollector.raise_if_any()
    return RobotModel(name, links, joints, keypoints, feet)


def parse_robot_description(text):
    return build_model(parse_statements(text))


def load_robot(path=None):
    path = path or default_robot_path()
    if not os.path.exists(path):
        raise FileNotFoundError('{} Not Exists.'.format(path))
    with open(path) as f:
        return parse_robot_description(f.read())
