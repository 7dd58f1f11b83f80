"""
Batched forward kinematics and rigid-body quantities of a planar tree.

Generalized coordinates are Q = [x, z, pitch, q_1 .. q_J] with a leading
batch axis. A link frame is placed at its joint (the root frame at the root
position); a point with link-frame offset o sits at origin + R(angle) o.
"""

import numpy as np


GRAVITY = 9.81

ROOT_DOF = 3


def rotate(angle, vector):
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([
        c * vector[..., 0] - s * vector[..., 1],
        s * vector[..., 0] + c * vector[..., 1],
    ], axis=-1)


def perp(vector):
    # derivative of R(angle) v with respect to angle.
    return np.stack([-vector[..., 1], vector[..., 0]], axis=-1)


class Frames:

    def __init__(self, origins, angles):
        self.origins = origins
        self.angles = angles


class KinematicTree:

    def __init__(self, model):
        self.model = model
        self.link_count = len(model.links)
        self.dof = ROOT_DOF + model.joint_count
        root = model.link_index[model.root_name()]
        self.root = root

        self.parent_link = [-1] * self.link_count
        self.entry_joint = [-1] * self.link_count
        self.anchor = [np.zeros(2) for _ in range(self.link_count)]
        for j, joint in enumerate(model.joints):
            child = model.link_index[joint.child]
            self.parent_link[child] = model.link_index[joint.parent]
            self.entry_joint[child] = j
            self.anchor[child] = joint.anchor

        # links in an order where parents come first.
        self.order = [root] + [model.link_index[joint.child]
                               for joint in model.joints]

        # chain of links from the root to each link.
        self.chain = []
        for link in range(self.link_count):
            path = [link]
            while self.parent_link[path[-1]] != -1:
                path.append(self.parent_link[path[-1]])
            self.chain.append(path[::-1])

        # angular jacobian rows are constant.
        self.angular = np.zeros((self.link_count, self.dof))
        for link, path in enumerate(self.chain):
            self.angular[link, 2] = 1.0
            for item in path[1:]:
                self.angular[link, ROOT_DOF + self.entry_joint[item]] = 1.0

        self.masses = np.array([link.mass for link in model.links])
        self.inertias = np.array([link.inertia for link in model.links])
        self.coms = np.stack([link.com for link in model.links])
        self.keypoint_links = [model.link_index[kp.link]
                               for kp in model.keypoints]
        self.keypoint_offsets = np.stack(
            [kp.offset for kp in model.keypoints]
        ) if model.keypoints else np.zeros((0, 2))

    def pack(self, root_pos, pitch, joint_pos):
        return np.concatenate([
            root_pos,
            pitch[..., None],
            joint_pos,
        ], axis=-1)

    def frames(self, q):
        batch = q.shape[:-1]
        origins = np.zeros(batch + (self.link_count, 2))
        angles = np.zeros(batch + (self.link_count,))
        origins[..., self.root, :] = q[..., 0:2]
        angles[..., self.root] = q[..., 2]
        for link in self.order[1:]:
            parent = self.parent_link[link]
            origins[..., link, :] = origins[..., parent, :] + rotate(
                angles[..., parent], np.broadcast_to(
                    self.anchor[link], batch + (2,)),
            )
            angles[..., link] = (angles[..., parent]
                                 + q[..., ROOT_DOF + self.entry_joint[link]])
        return Frames(origins, angles)

    def point(self, frames, link, offset):
        offset = np.broadcast_to(offset, frames.origins.shape[:-2] + (2,))
        return frames.origins[..., link, :] + rotate(
            frames.angles[..., link], offset,
        )

    def keypoints(self, frames):
        if not self.keypoint_links:
            return np.zeros(frames.origins.shape[:-2] + (0, 2))
        return np.stack([
            self.point(frames, link, offset)
            for link, offset in zip(self.keypoint_links,
                                    self.keypoint_offsets)
        ], axis=-2)

    def link_coms(self, frames):
        return np.stack([
            self.point(frames, link, self.coms[link])
            for link in range(self.link_count)
        ], axis=-2)

    def point_jacobian(self, frames, link, point):
        batch = point.shape[:-1]
        jac = np.zeros(batch + (2, self.dof))
        jac[..., 0, 0] = 1.0
        jac[..., 1, 1] = 1.0
        path = self.chain[link]
        jac[..., :, 2] = perp(point - frames.origins[..., path[0], :])
        for item in path[1:]:
            column = ROOT_DOF + self.entry_joint[item]
            jac[..., :, column] = perp(point - frames.origins[..., item, :])
        return jac

    def link_velocities(self, qd):
        # angular velocity of every link.
        return qd @ self.angular.T

    def point_bias(self, frames, omegas, link, point):
        # velocity-product part of the point acceleration.
        path = self.chain[link]
        bias = np.zeros(point.shape)
        for here, there in zip(path[:-1], path[1:]):
            segment = (frames.origins[..., there, :]
                       - frames.origins[..., here, :])
            bias -= omegas[..., here, None] ** 2 * segment
        segment = point - frames.origins[..., link, :]
        bias -= omegas[..., link, None] ** 2 * segment
        return bias

    def dynamics_terms(self, q, qd):
        """
        Mass matrix M, velocity-product forces h and gravity forces G so that
        M qdd + h = G + applied forces.
        """
        frames = self.frames(q)
        omegas = self.link_velocities(qd)
        batch = q.shape[:-1]
        mass_matrix = np.zeros(batch + (self.dof, self.dof))
        bias = np.zeros(batch + (self.dof,))
        gravity = np.zeros(batch + (self.dof,))
        for link in range(self.link_count):
            mass = self.masses[link]
            com = self.point(frames, link, self.coms[link])
            jac = self.point_jacobian(frames, link, com)
            row = self.angular[link]
            mass_matrix += mass * np.einsum('...ki,...kj->...ij', jac, jac)
            mass_matrix += self.inertias[link] * np.outer(row, row)
            acc = self.point_bias(frames, omegas, link, com)
            bias += mass * np.einsum('...ki,...k->...i', jac, acc)
            gravity -= mass * GRAVITY * jac[..., 1, :]
        return frames, mass_matrix, bias, gravity

    def center_of_mass(self, frames):
        coms = self.link_coms(frames)
        weights = self.masses / self.masses.sum()
        return np.einsum('...lk,l->...k', coms, weights)

    def kinetic_energy(self, q, qd):
        _, mass_matrix, _, _ = self.dynamics_terms(q, qd)
        return 0.5 * np.einsum('...i,...ij,...j->...', qd, mass_matrix, qd)

    def potential_energy(self, q):
        frames = self.frames(q)
        coms = self.link_coms(frames)
        return GRAVITY * np.einsum('...l,l->...', coms[..., 1], self.masses)

    def keypoint_jacobians(self, frames):
        points = self.keypoints(frames)
        return points, np.stack([
            self.point_jacobian(frames, link, points[..., k, :])
            for k, link in enumerate(self.keypoint_links)
        ], axis=-3)
