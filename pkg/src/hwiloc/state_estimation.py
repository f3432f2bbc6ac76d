"""Fusion of per-receiver channel estimates into position, clock and orientation.

A closed-form least-squares stage (orthogonal Procrustes for the rotation,
stacked direction/range equations for position and clock) initializes a
weighted refinement in which the rotation stays on SO(3) through an
exponential-map retraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .geometry import (SPEED_OF_LIGHT, ChannelParams, Pose, StateVector,
                       angles_from_direction, direction_vector, wrap_angle)


class SingularGeometryError(RuntimeError):
    """Raised when the link geometry cannot determine the state."""


@dataclass
class LinkEstimate:
    """One receiver's channel-parameter estimate with its information weight.

    ``weight`` is a 5x5 symmetric PSD information matrix over
    [aoa_az, aoa_el, aod_az, aod_el, range] with the range residual in
    meters; ``None`` selects an identity weight.
    """

    params: ChannelParams
    weight: np.ndarray | None = None


def channel_map(state: StateVector, bs: Pose) -> np.ndarray:
    """Geometry-only map from state to [aoa_az, aoa_el, aod_az, aod_el, range_m]."""
    diff = state.position - bs.position
    dist = float(np.linalg.norm(diff))
    if dist < 1e-9:
        raise SingularGeometryError("transmitter collocated with a receiver")
    aoa = angles_from_direction(bs.rotation.T @ (diff / dist))
    aod = angles_from_direction(state.rotation.T @ (-diff / dist))
    range_m = dist + SPEED_OF_LIGHT * state.clock_offset
    return np.array([aoa[0], aoa[1], aod[0], aod[1], range_m])


def skew(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def expm_so3(w) -> np.ndarray:
    """Rodrigues exponential map of a rotation vector."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        k = skew(w)
        return np.eye(3) + k + 0.5 * (k @ k)
    k = skew(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def project_so3(r: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (SVD retraction with determinant fix-up)."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def ls_coarse(estimates: list[LinkEstimate], bs_poses: list[Pose],
              use_delays: bool = True) -> StateVector:
    """Closed-form coarse state estimate from angle and delay estimates.

    The rotation aligns the transmitter-frame departure directions with the
    global arrival directions (Procrustes with determinant fix-up).  With
    delays available, position and clock offset solve the stacked
    direction/range equations; otherwise position comes from angle-only
    triangulation and the clock offset is reported as zero.
    """
    n_links = len(estimates)
    if n_links < 2:
        raise SingularGeometryError("need at least two receivers")
    dirs_global = []     # unit vectors from each BS towards the UE
    dirs_local_tx = []   # departure directions in the UE frame
    ranges = []
    for est, pose in zip(estimates, bs_poses):
        p = est.params
        dirs_global.append(pose.rotation @ direction_vector(p.aoa_az, p.aoa_el))
        dirs_local_tx.append(direction_vector(p.aod_az, p.aod_el))
        ranges.append(SPEED_OF_LIGHT * p.delay)
    q1 = -np.stack(dirs_global, axis=1)
    q2 = np.stack(dirs_local_tx, axis=1)
    u, _, vt = np.linalg.svd(q1 @ q2.T)
    if np.linalg.det(u @ vt) < 0:
        rotation = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    else:
        rotation = u @ vt

    if use_delays:
        q3 = np.zeros((3 * n_links, 4))
        q = np.zeros(3 * n_links)
        for i, (pose, d) in enumerate(zip(bs_poses, dirs_global)):
            q3[3 * i:3 * i + 3, :3] = np.eye(3)
            q3[3 * i:3 * i + 3, 3] = d
            q[3 * i:3 * i + 3] = pose.position + ranges[i] * d
        if np.linalg.matrix_rank(q3) < 4:
            raise SingularGeometryError("direction/range system is rank deficient")
        sol, *_ = np.linalg.lstsq(q3, q, rcond=None)
        position = sol[:3]
        clock = sol[3] / SPEED_OF_LIGHT
    else:
        a = np.zeros((3, 3))
        b = np.zeros(3)
        for pose, d in zip(bs_poses, dirs_global):
            proj = np.eye(3) - np.outer(d, d)
            a += proj
            b += proj @ pose.position
        if np.linalg.matrix_rank(a) < 3:
            raise SingularGeometryError("angle-only triangulation is rank deficient")
        position = np.linalg.solve(a, b)
        clock = 0.0
    return StateVector(position=position, clock_offset=float(clock), rotation=rotation)


def _angle_marginal_info(weight: np.ndarray) -> np.ndarray:
    """Information of the angle block once the range estimate is discarded."""
    cov = np.linalg.inv(weight)
    return np.linalg.inv(cov[:4, :4])


@dataclass
class StateResult:
    state: StateVector
    objective: float
    n_iterations: int
    converged: bool


def _residual(state: StateVector, est: LinkEstimate, pose: Pose,
              use_delays: bool) -> np.ndarray:
    c = channel_map(state, pose)
    p = est.params
    r = np.array([wrap_angle(c[0] - p.aoa_az), wrap_angle(c[1] - p.aoa_el),
                  wrap_angle(c[2] - p.aod_az), wrap_angle(c[3] - p.aod_el),
                  c[4] - SPEED_OF_LIGHT * p.delay])
    return r if use_delays else r[:4]


def mmle_state(estimates: list[LinkEstimate], init: StateVector,
               bs_poses: list[Pose], use_delays: bool = True,
               max_outer: int = 8, gtol: float = 1e-12) -> StateResult:
    """Weighted refinement of the state estimate on R^3 x R x SO(3).

    Minimizes the information-weighted squared residual of the channel map.
    Each outer iteration optimizes in a local chart (position and clock in
    meters, rotation in tangent coordinates) and retracts the rotation back
    onto the manifold through the exponential map.
    """
    weights = []
    for est in estimates:
        w = est.weight if est.weight is not None else np.eye(5)
        weights.append(w if use_delays else _angle_marginal_info(w))

    def objective_at(state: StateVector) -> float:
        total = 0.0
        for est, pose, w in zip(estimates, bs_poses, weights):
            r = _residual(state, est, pose, use_delays)
            total += float(r @ w @ r)
        return total

    n_coords = 7 if use_delays else 6
    current = init.copy()
    f_current = objective_at(current)
    n_iter = 0
    converged = False
    for _ in range(max_outer):
        base = current.copy()

        def chart(x) -> StateVector:
            pos = base.position + x[:3]
            if use_delays:
                clock = base.clock_offset + x[3] / SPEED_OF_LIGHT
                rot_x = x[4:]
            else:
                clock = base.clock_offset
                rot_x = x[3:]
            return StateVector(pos, clock, base.rotation @ expm_so3(rot_x))

        res = optimize.minimize(lambda x: objective_at(chart(x)),
                                np.zeros(n_coords), method="BFGS",
                                options={"gtol": gtol * max(f_current, 1.0),
                                         "maxiter": 200})
        n_iter += int(res.nit)
        if res.fun <= f_current:
            current = chart(res.x)
            current.rotation = project_so3(current.rotation)
            improved = f_current - res.fun
            f_current = objective_at(current)
            if np.linalg.norm(res.x) < 1e-12 or improved <= 1e-15 * max(f_current, 1.0):
                converged = True
                break
        else:
            converged = True
            break
    return StateResult(state=current, objective=f_current,
                       n_iterations=n_iter, converged=converged)
