"""Two-stage channel parameter estimation from swept pilot observations.

Stage one rearranges the per-beam channel ratios into a five-way tensor,
extracts its dominant rank-1 factors by alternating power iteration and reads
each spatial frequency off a matched-filter grid with parabolic refinement.
Stage two polishes the five geometric parameters by minimizing the projected
residual of the clean model, with the complex gain eliminated in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .forward_model import Observation, PilotFrame, mm_mean, mode_steering
from .geometry import ChannelParams, wrap_angle


class NoDetectionError(RuntimeError):
    """Raised when the beamspace tensor carries no usable signal."""


@dataclass
class SpatialFrequencies:
    """Per-mode spatial frequencies: two AOA, two AOD and the delay mode."""

    w1: float
    w2: float
    w3: float
    w4: float
    w5: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3, self.w4, self.w5])


def assemble_tensor(obs: Observation, frame: PilotFrame) -> np.ndarray:
    """Per-beam, per-subcarrier channel ratios y/x as an M1 x M2 x M3 x M4 x K tensor."""
    if np.any(frame.pilots == 0):
        raise ValueError("pilot symbols must be nonzero")
    m1, m2, m3, m4 = frame.beam_counts
    k = frame.n_subcarriers
    ratios = obs.y.reshape(frame.n_transmissions, k) / frame.pilots
    tensor = np.zeros((m1, m2, m3, m4, k), dtype=complex)
    bi = frame.beam_index
    tensor[bi[:, 0], bi[:, 1], bi[:, 2], bi[:, 3], :] = ratios
    return tensor


def rank1_factors(tensor: np.ndarray, n_sweeps: int = 20, tol: float = 1e-12):
    """Dominant rank-1 factors of a complex tensor by alternating power iteration.

    Returns (factors, scale) with unit-norm factor vectors; initialization is
    the leading left singular vector of each mode unfolding.
    """
    dims = tensor.shape
    n_modes = tensor.ndim
    factors = []
    for n in range(n_modes):
        unfold = np.moveaxis(tensor, n, 0).reshape(dims[n], -1)
        u, _, _ = np.linalg.svd(unfold, full_matrices=False)
        factors.append(u[:, 0])
    scale = 0.0
    for _ in range(n_sweeps):
        prev = scale
        for n in range(n_modes):
            contracted = tensor
            for m in range(n_modes - 1, -1, -1):
                if m == n:
                    continue
                contracted = np.tensordot(contracted, np.conj(factors[m]), axes=([m], [0]))
            nrm = np.linalg.norm(contracted)
            if nrm == 0.0:
                raise NoDetectionError("tensor contraction vanished")
            factors[n] = contracted / nrm
            scale = nrm
        if abs(scale - prev) <= tol * max(scale, 1.0):
            break
    return factors, scale


def _mode_response(frame: PilotFrame, mode: int, omega) -> np.ndarray:
    """Beamspace response T_n^H a(omega) of angular mode ``mode`` (0..3)."""
    axes = [frame.bs_layout.y_axis, frame.bs_layout.z_axis,
            frame.ue_layout.y_axis, frame.ue_layout.z_axis]
    omega = np.atleast_1d(omega)
    steer = np.exp(1j * (2.0 * axes[mode][:, None] / frame.cfg.wavelength) * omega[None, :])
    return frame.codebooks[mode].conj().T @ steer


def _parabolic_peak(grid: np.ndarray, scores: np.ndarray) -> float:
    i = int(np.argmax(scores))
    if 0 < i < len(grid) - 1:
        denom = scores[i - 1] - 2.0 * scores[i] + scores[i + 1]
        if denom < 0:
            delta = 0.5 * (scores[i - 1] - scores[i + 1]) / denom
            return float(grid[i] + delta * (grid[1] - grid[0]))
    return float(grid[i])


def _angular_mode_peak(frame: PilotFrame, mode: int, factor: np.ndarray) -> float:
    """Spatial frequency maximizing the normalized beamspace correlation."""
    m_n = frame.beam_counts[mode]
    half = m_n * frame.grid_step / 2.0 + frame.grid_step / 2.0
    step = frame.grid_step / 50.0
    center = frame.grid_centers[mode]
    grid = np.arange(center - half, center + half + step / 2.0, step)
    resp = _mode_response(frame, mode, grid)
    norms = np.linalg.norm(resp, axis=0)
    norms[norms == 0.0] = 1.0
    scores = np.abs(np.conj(factor) @ resp) / norms
    # prefer the candidate nearer the window center on exact ties
    best = np.max(scores)
    ties = np.flatnonzero(scores >= best * (1.0 - 1e-12))
    if len(ties) > 1:
        i = ties[np.argmin(np.abs(grid[ties] - center))]
        lo = max(i - 1, 0)
        hi = min(i + 2, len(grid))
        return _parabolic_peak(grid[lo:hi], scores[lo:hi])
    return _parabolic_peak(grid, scores)


def _delay_mode_peak(factor: np.ndarray, oversample: int = 64) -> float:
    """Delay spatial frequency in [0, 2 pi) from the K-point factor vector."""
    k = len(factor)
    n_fft = oversample * k
    padded = np.zeros(n_fft, dtype=complex)
    padded[1:k + 1] = factor            # ramp index runs 1..K
    spec = np.fft.fft(padded)            # spec[m] = sum_k u_k exp(-j 2 pi m k / n)
    scores = np.abs(spec)
    i = int(np.argmax(scores))
    grid = 2.0 * np.pi * np.arange(n_fft) / n_fft
    lo, hi = i - 1, i + 2
    idx = np.arange(lo, hi) % n_fft
    local_grid = grid[i] + (np.arange(-1, 2)) * (2.0 * np.pi / n_fft)
    omega = _parabolic_peak(local_grid, scores[idx])
    return float(np.mod(-omega, 2.0 * np.pi))


def params_from_frequencies(freqs: SpatialFrequencies, delta_f: float) -> ChannelParams:
    """Invert the spatial-frequency map back to angles and delay (unit gain)."""
    w = freqs.as_array()
    el_rx = np.arcsin(np.clip(w[1] / np.pi, -1.0, 1.0))
    el_tx = np.arcsin(np.clip(w[3] / np.pi, -1.0, 1.0))
    c_rx = np.cos(el_rx)
    c_tx = np.cos(el_tx)
    az_rx = np.arcsin(np.clip(w[0] / (np.pi * c_rx), -1.0, 1.0)) if c_rx > 1e-9 else 0.0
    az_tx = np.arcsin(np.clip(w[2] / (np.pi * c_tx), -1.0, 1.0)) if c_tx > 1e-9 else 0.0
    delay = w[4] / (2.0 * np.pi * delta_f)
    return ChannelParams(float(az_rx), float(el_rx), float(az_tx), float(el_tx), float(delay))


def coarse_estimate(tensor: np.ndarray, frame: PilotFrame,
                    norm_threshold: float = 1e-30):
    """Initial channel-parameter estimate from the measured beamspace tensor.

    Returns (ChannelParams, SpatialFrequencies); the gain fields carry the
    least-squares complex gain of the rank-1 fit.
    """
    if np.linalg.norm(tensor) < norm_threshold:
        raise NoDetectionError("beamspace tensor norm below detection threshold")
    factors, _ = rank1_factors(tensor)
    omegas = [_angular_mode_peak(frame, n, factors[n]) for n in range(4)]
    omegas.append(_delay_mode_peak(factors[4]))
    freqs = SpatialFrequencies(*omegas)
    params = params_from_frequencies(freqs, frame.cfg.delta_f)

    model = np.ones((1,), dtype=complex)
    b_modes = [_mode_response(frame, n, omegas[n])[:, 0] for n in range(4)]
    ramp = frame.delay_ramp(params.delay)
    for b in b_modes + [ramp]:
        model = np.multiply.outer(model, b)
    model = model[0]
    denom = np.vdot(model, model).real
    alpha = np.vdot(model, tensor) / denom if denom > 0 else 0.0
    params.gain_amp = float(np.abs(alpha))
    params.gain_phase = float(np.mod(-np.angle(alpha), 2.0 * np.pi))
    return params, freqs


@dataclass
class FineResult:
    params: ChannelParams
    converged: bool
    n_iterations: int
    objective: float


def _unit_gain(c: np.ndarray) -> ChannelParams:
    return ChannelParams(float(c[0]), float(c[1]), float(c[2]), float(c[3]),
                         float(c[4]), 1.0, 0.0)


def projected_residual(c: np.ndarray, y: np.ndarray, frame: PilotFrame,
                       y_norm2: float) -> float:
    """Normalized residual after the optimal complex gain is projected out.

    Returns 1 - |gamma^H y|^2 / (|gamma|^2 |y|^2), in [0, 1].
    """
    gamma = mm_mean(_unit_gain(c), frame)
    g2 = np.vdot(gamma, gamma).real
    if g2 <= 0.0 or y_norm2 <= 0.0:
        return 1.0
    return float(1.0 - (np.abs(np.vdot(gamma, y)) ** 2) / (g2 * y_norm2))


def fine_mmle(obs: Observation, init: ChannelParams, frame: PilotFrame,
              max_iter: int = 200) -> FineResult:
    """Refine a coarse estimate by minimizing the gain-projected residual.

    Minimizes over the five geometric parameters with a simplex stage followed
    by quasi-Newton polishing; the gain is recovered afterwards from the
    closed-form projection.  A result that fails both stages is returned with
    ``converged=False`` carrying the best iterate seen.
    """
    y = obs.y
    y_norm2 = float(np.vdot(y, y).real)
    delay_scale = 1.0 / (frame.n_subcarriers * frame.cfg.delta_f)

    def pack(params: ChannelParams) -> np.ndarray:
        return np.array([params.aoa_az, params.aoa_el, params.aod_az,
                         params.aod_el, params.delay / delay_scale])

    def unpack(x: np.ndarray) -> np.ndarray:
        return np.array([x[0], x[1], x[2], x[3], x[4] * delay_scale])

    def fun(x):
        return projected_residual(unpack(x), y, frame, y_norm2)

    x0 = pack(init)
    f0 = fun(x0)
    nm = optimize.minimize(fun, x0, method="Nelder-Mead",
                           options={"maxiter": max_iter, "xatol": 1e-10,
                                    "fatol": 1e-14, "adaptive": True})
    bfgs = optimize.minimize(fun, nm.x, method="BFGS",
                             options={"maxiter": max_iter, "gtol": 1e-12})
    if float(bfgs.fun) <= float(nm.fun):
        best_fun, best_x = float(bfgs.fun), bfgs.x
    else:
        best_fun, best_x = float(nm.fun), nm.x
    # never move off the initial point without a resolvable improvement
    if f0 <= best_fun + 1e-15:
        best_fun, best_x = f0, x0
    # BFGS status 2 is precision loss at a stationary point, normal here
    converged = bool(np.isfinite(best_fun)
                     and (nm.success or bfgs.success or bfgs.status == 2))

    c = unpack(best_x)
    c[0] = wrap_angle(c[0])
    c[2] = wrap_angle(c[2])
    gamma = mm_mean(_unit_gain(c), frame)
    g2 = np.vdot(gamma, gamma).real
    alpha = np.vdot(gamma, y) / g2 if g2 > 0 else 0.0
    params = ChannelParams(c[0], c[1], c[2], c[3], c[4],
                           float(np.abs(alpha)),
                           float(np.mod(-np.angle(alpha), 2.0 * np.pi)))
    n_iter = int(nm.nit + bfgs.nit)
    return FineResult(params=params, converged=converged,
                      n_iterations=n_iter, objective=float(best_fun))
