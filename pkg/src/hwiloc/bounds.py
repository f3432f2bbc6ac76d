"""Fisher information and misspecification bounds for channel and state estimates.

Covers the clean-model information matrix and its error bounds (angle, delay,
position, clock, orientation), the pseudo-true projection of the impaired
model onto the clean manifold, the two misspecification information matrices,
and the resulting lower bounds with their noise-independent bias floors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .channel_estimation import FineResult, fine_mmle
from .forward_model import Observation, PilotFrame, mm_mean, tm_mean
from .geometry import SPEED_OF_LIGHT, ChannelParams, Pose, StateVector, wrap_angle
from .impairments import HwiRealization
from .state_estimation import (LinkEstimate, SingularGeometryError, channel_map,
                               expm_so3, mmle_state)

# eta parameter order used throughout
ETA_LABELS = ("aoa_az", "aoa_el", "aod_az", "aod_el", "delay", "gain_amp", "gain_phase")
_ANGLE_LIKE = (0, 1, 2, 3, 6)

# tangent directions whose vec-images are the orthonormal rotation basis columns
_TANGENT_GENERATORS = np.array([[0.0, 1.0, 0.0],
                                [-1.0, 0.0, 0.0],
                                [0.0, 0.0, 1.0]]) / np.sqrt(2.0)


def eta_steps(params: ChannelParams, frame: PilotFrame, scale: float = 1.0) -> np.ndarray:
    """Per-parameter finite-difference steps (angles rad, delay s, amplitude rel)."""
    delay_unit = 1.0 / (frame.n_subcarriers * frame.cfg.delta_f)
    rho = abs(params.gain_amp)
    return scale * np.array([1e-6, 1e-6, 1e-6, 1e-6,
                             1e-6 * delay_unit,
                             1e-6 * (rho if rho > 0 else 1.0),
                             1e-6])


def _mean_at(eta: np.ndarray, frame: PilotFrame) -> np.ndarray:
    return mm_mean(ChannelParams.from_vector(eta), frame)


def mean_jacobian(params: ChannelParams, frame: PilotFrame,
                  steps: np.ndarray | None = None) -> np.ndarray:
    """Central-difference Jacobian of the clean mean, (G*K) x 7."""
    eta = params.as_vector()
    h = eta_steps(params, frame) if steps is None else steps
    cols = []
    for i in range(7):
        e = np.zeros(7)
        e[i] = h[i]
        cols.append((_mean_at(eta + e, frame) - _mean_at(eta - e, frame)) / (2.0 * h[i]))
    return np.stack(cols, axis=1)


def mean_hessian(params: ChannelParams, frame: PilotFrame) -> np.ndarray:
    """Nested central-difference Hessian of the clean mean, (G*K) x 7 x 7.

    Uses steps ten times larger than the Jacobian to keep the second
    differences above roundoff.
    """
    eta = params.as_vector()
    h = eta_steps(params, frame, scale=10.0)
    n = frame.n_transmissions * frame.n_subcarriers
    hess = np.zeros((n, 7, 7), dtype=complex)
    mu0 = _mean_at(eta, frame)
    for i in range(7):
        ei = np.zeros(7)
        ei[i] = h[i]
        hess[:, i, i] = (_mean_at(eta + ei, frame) - 2.0 * mu0
                         + _mean_at(eta - ei, frame)) / (h[i] ** 2)
        for j in range(i + 1, 7):
            ej = np.zeros(7)
            ej[j] = h[j]
            mixed = (_mean_at(eta + ei + ej, frame) - _mean_at(eta + ei - ej, frame)
                     - _mean_at(eta - ei + ej, frame) + _mean_at(eta - ei - ej, frame))
            hess[:, i, j] = mixed / (4.0 * h[i] * h[j])
            hess[:, j, i] = hess[:, i, j]
    return hess


def fim_channel(params: ChannelParams, frame: PilotFrame,
                noise_variance: float | None = None) -> np.ndarray:
    """7x7 Fisher information of the clean model at the given parameters."""
    var = frame.noise_variance if noise_variance is None else noise_variance
    if not var > 0:
        raise ValueError("noise variance must be positive")
    jac = mean_jacobian(params, frame)
    fim = (2.0 / var) * np.real(jac.conj().T @ jac)
    return 0.5 * (fim + fim.T)


def efim_nonnuisance(fim: np.ndarray) -> np.ndarray:
    """Schur complement removing the gain amplitude/phase block."""
    a = fim[:5, :5]
    b = fim[:5, 5:]
    d = fim[5:, 5:]
    try:
        cond = np.linalg.cond(d)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        warnings.warn("gain block is numerically singular; regularizing", RuntimeWarning)
        d = d + 1e-12 * np.trace(d) * np.eye(2)
        e = a - b @ np.linalg.pinv(d) @ b.T
    else:
        e = a - b @ np.linalg.solve(d, b.T)
    return 0.5 * (e + e.T)


def efim_to_range_units(efim: np.ndarray) -> np.ndarray:
    """Rescale the delay row/column of a 5x5 information matrix to meters."""
    d = np.diag([1.0, 1.0, 1.0, 1.0, 1.0 / SPEED_OF_LIGHT])
    return d @ efim @ d


@dataclass
class ChannelCrb:
    """Clean-model error bounds of one link."""

    covariance: np.ndarray      # 7x7 inverse information
    aaeb: float                 # rad
    adeb: float                 # rad
    deb: float                  # s
    deb_m: float                # m


def _channel_bounds(matrix: np.ndarray) -> tuple[float, float, float]:
    aaeb = float(np.sqrt(np.trace(matrix[0:2, 0:2])))
    adeb = float(np.sqrt(np.trace(matrix[2:4, 2:4])))
    deb = float(np.sqrt(matrix[4, 4]))
    return aaeb, adeb, deb


def crb_channel(fim: np.ndarray) -> ChannelCrb:
    try:
        cov = np.linalg.inv(fim)
    except np.linalg.LinAlgError as exc:
        raise SingularGeometryError("channel information matrix is singular") from exc
    aaeb, adeb, deb = _channel_bounds(cov)
    return ChannelCrb(covariance=cov, aaeb=aaeb, adeb=adeb, deb=deb,
                      deb_m=deb * SPEED_OF_LIGHT)


def rotation_tangent_basis(rotation: np.ndarray) -> np.ndarray:
    """Orthonormal 9x3 basis of vec-space rotation perturbations."""
    r1, r2, r3 = rotation[:, 0], rotation[:, 1], rotation[:, 2]
    z = np.zeros(3)
    cols = [np.concatenate([-r3, z, r1]),
            np.concatenate([z, -r3, r2]),
            np.concatenate([r2, -r1, z])]
    return np.stack(cols, axis=1) / np.sqrt(2.0)


def _perturbed_state(state: StateVector, coord: int, step: float,
                     use_delays: bool) -> StateVector:
    pos = state.position.copy()
    clock = state.clock_offset
    rot = state.rotation
    rot_base = 4 if use_delays else 3
    if coord < 3:
        pos[coord] += step
    elif use_delays and coord == 3:
        clock += step / SPEED_OF_LIGHT
    else:
        w = _TANGENT_GENERATORS[coord - rot_base] * step
        rot = rot @ expm_so3(w)
    return StateVector(pos, clock, rot)


def state_jacobian(state: StateVector, bs: Pose, use_delays: bool = True,
                   step: float = 1e-6) -> np.ndarray:
    """Derivative of the channel map w.r.t. the local state coordinates.

    Coordinates are [position (m), clock (m), rotation tangent (rad)] for the
    synchronized system; the clock column is dropped otherwise, along with
    the range row of the map.
    """
    n_coords = 7 if use_delays else 6
    rows = 5 if use_delays else 4
    jac = np.zeros((rows, n_coords))
    for c in range(n_coords):
        plus = channel_map(_perturbed_state(state, c, step, use_delays), bs)
        minus = channel_map(_perturbed_state(state, c, -step, use_delays), bs)
        d = (plus - minus) / (2.0 * step)
        d[:4] = wrap_angle(plus[:4] - minus[:4]) / (2.0 * step)
        jac[:, c] = d[:rows]
    return jac


@dataclass
class StateCrb:
    """Clean-model state bounds for the fused multi-link problem."""

    info: np.ndarray            # local-coordinate information matrix
    covariance: np.ndarray      # its inverse
    bound13: np.ndarray | None  # full-state bound matrix (synchronized mode)
    peb: float                  # m
    ceb: float                  # m (nan without delays)
    oeb: float                  # Frobenius units
    oeb_deg: float

    @property
    def ceb_seconds(self) -> float:
        return self.ceb / SPEED_OF_LIGHT


def _angle_marginal(weight: np.ndarray) -> np.ndarray:
    cov = np.linalg.inv(weight)
    return np.linalg.inv(cov[:4, :4])


def crb_state(weights_range_units: list[np.ndarray], state: StateVector,
              bs_poses: list[Pose], use_delays: bool = True) -> StateCrb:
    """Fused state bound from per-link information matrices (range in meters).

    Without delays the range estimate is discarded, so each link contributes
    the marginal information of its angle estimates only.
    """
    n_coords = 7 if use_delays else 6
    info = np.zeros((n_coords, n_coords))
    for w, pose in zip(weights_range_units, bs_poses):
        if not use_delays and w.shape[0] == 5:
            w = _angle_marginal(w)
        jac = state_jacobian(state, pose, use_delays=use_delays)
        info += jac.T @ w @ jac
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularGeometryError("state information matrix is singular")
    cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    peb = float(np.sqrt(np.trace(cov[0:3, 0:3])))
    if use_delays:
        ceb = float(np.sqrt(cov[3, 3]))
        rot_cov = cov[4:, 4:]
    else:
        ceb = float("nan")
        rot_cov = cov[3:, 3:]
    oeb = float(np.sqrt(np.trace(rot_cov)))
    oeb_deg = float(np.degrees(2.0 * np.arcsin(min(oeb / (2.0 * np.sqrt(2.0)), 1.0))))

    bound13 = None
    if use_delays:
        m_full = np.zeros((13, 7))
        m_full[0:3, 0:3] = np.eye(3)
        m_full[3, 3] = 1.0 / SPEED_OF_LIGHT
        m_full[4:13, 4:7] = rotation_tangent_basis(state.rotation)
        bound13 = m_full @ cov @ m_full.T
    return StateCrb(info=info, covariance=cov, bound13=bound13, peb=peb,
                    ceb=ceb, oeb=oeb, oeb_deg=oeb_deg)


@dataclass
class PseudoTrue:
    params: ChannelParams
    converged: bool
    residual: float


def pseudo_true_channel(params_true: ChannelParams, hwi: HwiRealization,
                        frame: PilotFrame) -> PseudoTrue:
    """Projection of the impaired noise-free mean onto the clean-model manifold.

    Solved with the fine-stage machinery on the synthetic observation,
    initialized at the true parameters.
    """
    y_bar = tm_mean(params_true, hwi, frame)
    obs = Observation(y=y_bar, noise_variance=frame.noise_variance)
    fine: FineResult = fine_mmle(obs, params_true, frame)
    return PseudoTrue(params=fine.params, converged=fine.converged,
                      residual=fine.objective)


def eta_difference(eta_a: np.ndarray, eta_b: np.ndarray) -> np.ndarray:
    """Componentwise eta_a - eta_b with angle-like entries wrapped to (-pi, pi]."""
    d = np.asarray(eta_a, dtype=float) - np.asarray(eta_b, dtype=float)
    for i in _ANGLE_LIKE:
        d[i] = wrap_angle(d[i])
    return d


def mcrb_matrices(pseudo: ChannelParams, params_true: ChannelParams,
                  hwi: HwiRealization, frame: PilotFrame,
                  noise_variance: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """The two misspecification information matrices evaluated at the pseudo-true point.

    A collects the expected log-likelihood curvature (second derivatives of
    the clean mean against the model-mismatch residual); B is the score outer
    product, carrying an additional fourth-order noise term.
    """
    var = frame.noise_variance if noise_variance is None else noise_variance
    if not var > 0:
        raise ValueError("noise variance must be positive")
    eps = tm_mean(params_true, hwi, frame) - mm_mean(pseudo, frame)
    jac = mean_jacobian(pseudo, frame)
    hess = mean_hessian(pseudo, frame)
    jhj = np.real(jac.conj().T @ jac)
    curvature = np.real(np.einsum("nij,n->ij", hess.conj(), eps))
    a = (2.0 / var) * (curvature - jhj)
    score = np.real(jac.conj().T @ eps)
    b = (4.0 / var ** 2) * np.outer(score, score) + (2.0 / var) * jhj
    return 0.5 * (a + a.T), 0.5 * (b + b.T)


@dataclass
class ChannelLb:
    """Mismatched-estimator lower bound of one link."""

    matrix: np.ndarray
    bias: np.ndarray
    aalb: float   # rad
    adlb: float   # rad
    dlb: float    # s
    dlb_m: float  # m


def lb_channel(a: np.ndarray, b: np.ndarray, pseudo: ChannelParams,
               params_true: ChannelParams) -> ChannelLb:
    """LB = A^{-1} B A^{-1} + bias outer product, with the usual index blocks."""
    try:
        x = np.linalg.solve(a, b)
        mcrb = np.linalg.solve(a, x.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularGeometryError("curvature matrix A is singular") from exc
    mcrb = 0.5 * (mcrb + mcrb.T)
    bias = eta_difference(params_true.as_vector(), pseudo.as_vector())
    lb = mcrb + np.outer(bias, bias)
    aalb, adlb, dlb = _channel_bounds(lb)
    return ChannelLb(matrix=lb, bias=bias, aalb=aalb, adlb=adlb, dlb=dlb,
                     dlb_m=dlb * SPEED_OF_LIGHT)


@dataclass
class StateAlb:
    """Bias-only localization floor induced by the model mismatch."""

    pseudo_state: StateVector
    palb: float   # m
    oalb: float   # Frobenius units
    calb: float   # m (nan without delays)
    converged: bool


def pseudo_true_state_and_alb(pseudo_params: list[ChannelParams],
                              weights_range_units: list[np.ndarray],
                              state_true: StateVector, bs_poses: list[Pose],
                              use_delays: bool = True) -> StateAlb:
    """Pseudo-true state from the biased per-link mappings and its offsets.

    The per-link pseudo-true parameters are fused exactly like estimates,
    weighted by the clean-model information, starting from the true state.
    """
    estimates = [LinkEstimate(params=p, weight=w)
                 for p, w in zip(pseudo_params, weights_range_units)]
    result = mmle_state(estimates, state_true, bs_poses, use_delays=use_delays)
    s0 = result.state
    palb = float(np.linalg.norm(state_true.position - s0.position))
    oalb = float(np.linalg.norm(state_true.rotation - s0.rotation, ord="fro"))
    if use_delays:
        calb = float(SPEED_OF_LIGHT * abs(state_true.clock_offset - s0.clock_offset))
    else:
        calb = float("nan")
    return StateAlb(pseudo_state=s0, palb=palb, oalb=oalb, calb=calb,
                    converged=result.converged)
