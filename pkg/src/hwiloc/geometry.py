"""Coordinate systems, rotations, planar-array steering and the state-to-channel mapping.

Conventions used throughout the package:

* global frame is right-handed, z up; array elements lie in the local YZ
  plane so the local x axis is the array boresight,
* azimuth is measured in the local XY plane from the x axis, elevation from
  the XY plane towards +z,
* Euler angles are intrinsic Z-Y-X (yaw, pitch, roll), given in degrees in
  configuration files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact

_ROT_TOL = 1e-10


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return w if w.ndim else float(w)


def rotation_from_euler(angles_deg) -> np.ndarray:
    """Rotation matrix from intrinsic Z-Y-X (yaw, pitch, roll) angles in degrees."""
    yaw, pitch, roll = np.deg2rad(np.asarray(angles_deg, dtype=float))
    if not np.all(np.isfinite([yaw, pitch, roll])):
        raise ValueError("Euler angles must be finite")
    cz, sz = np.cos(yaw), np.sin(yaw)
    cy, sy = np.cos(pitch), np.sin(pitch)
    cx, sx = np.cos(roll), np.sin(roll)
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rz @ ry @ rx


def is_rotation(r: np.ndarray, tol: float = _ROT_TOL) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        return False
    return (np.max(np.abs(r.T @ r - np.eye(3))) < tol
            and abs(np.linalg.det(r) - 1.0) < tol)


def direction_vector(azimuth: float, elevation: float) -> np.ndarray:
    """Unit direction t = [cos(el)cos(az), cos(el)sin(az), sin(el)]."""
    ce = np.cos(elevation)
    return np.array([ce * np.cos(azimuth), ce * np.sin(azimuth), np.sin(elevation)])


def angles_from_direction(t) -> tuple[float, float]:
    """Invert :func:`direction_vector`: (azimuth, elevation) from a unit vector."""
    t = np.asarray(t, dtype=float)
    return float(np.arctan2(t[1], t[0])), float(np.arcsin(np.clip(t[2], -1.0, 1.0)))


@dataclass(frozen=True)
class Pose:
    """Position (m) and orientation of an array in the global frame."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        if not np.all(np.isfinite(self.position)):
            raise ValueError("pose position must be finite")
        if not is_rotation(self.rotation):
            raise ValueError("pose rotation must be in SO(3)")

    @classmethod
    def from_euler(cls, position, angles_deg) -> "Pose":
        return cls(position=np.asarray(position, dtype=float),
                   rotation=rotation_from_euler(angles_deg))


@dataclass(frozen=True)
class ArrayLayout:
    """Uniform planar array in the local YZ plane.

    Elements are ordered with the y index slow and the z index fast,
    ``n = i_y * n_z + i_z``, so the full steering vector factors as the
    Kronecker product of the per-axis responses (y mode first).
    """

    n_z: int
    n_y: int
    element_positions: np.ndarray  # 3 x N, first row all zeros
    spacing: float

    def __post_init__(self):
        pos = np.asarray(self.element_positions, dtype=float)
        object.__setattr__(self, "element_positions", pos)
        if pos.shape != (3, self.n_z * self.n_y):
            raise ValueError("element_positions must be 3 x (n_z*n_y)")
        if np.any(pos[0] != 0.0):
            raise ValueError("elements must lie in the local YZ plane (zero first row)")
        if self.n_z < 1 or self.n_y < 1:
            raise ValueError("array dimensions must be positive")

    @property
    def n_elements(self) -> int:
        return self.n_z * self.n_y

    @property
    def y_axis(self) -> np.ndarray:
        """Distinct y coordinates (length n_y) of the element grid."""
        return self.element_positions[1].reshape(self.n_y, self.n_z)[:, 0]

    @property
    def z_axis(self) -> np.ndarray:
        """Distinct z coordinates (length n_z) of the element grid."""
        return self.element_positions[2].reshape(self.n_y, self.n_z)[0, :]

    @classmethod
    def upa(cls, n_z: int, n_y: int, spacing: float) -> "ArrayLayout":
        """Centered uniform planar array with the given inter-element spacing."""
        iy = np.arange(n_y) - (n_y - 1) / 2.0
        iz = np.arange(n_z) - (n_z - 1) / 2.0
        ys = np.repeat(iy, n_z) * spacing
        zs = np.tile(iz, n_y) * spacing
        pos = np.vstack([np.zeros(n_z * n_y), ys, zs])
        return cls(n_z=n_z, n_y=n_y, element_positions=pos, spacing=spacing)


@dataclass
class ChannelParams:
    """Geometric channel parameters of a single LOS link.

    Angles in radians, delay in seconds; the complex gain is
    ``gain_amp * exp(-1j * gain_phase)``.
    """

    aoa_az: float
    aoa_el: float
    aod_az: float
    aod_el: float
    delay: float
    gain_amp: float = 1.0
    gain_phase: float = 0.0

    @property
    def gain(self) -> complex:
        return self.gain_amp * np.exp(-1j * self.gain_phase)

    def angles_delay(self) -> np.ndarray:
        """The 5-vector of non-nuisance parameters [aoa_az, aoa_el, aod_az, aod_el, delay]."""
        return np.array([self.aoa_az, self.aoa_el, self.aod_az, self.aod_el, self.delay])

    def as_vector(self) -> np.ndarray:
        """Full 7-parameter vector, gain amplitude and phase last."""
        return np.array([self.aoa_az, self.aoa_el, self.aod_az, self.aod_el,
                         self.delay, self.gain_amp, self.gain_phase])

    @classmethod
    def from_vector(cls, eta) -> "ChannelParams":
        eta = np.asarray(eta, dtype=float)
        return cls(*[float(v) for v in eta[:7]])


@dataclass
class StateVector:
    """Transmitter state: position (m), clock offset (s) and orientation."""

    position: np.ndarray
    clock_offset: float
    rotation: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not is_rotation(self.rotation):
            raise ValueError("state rotation must be in SO(3)")

    def copy(self) -> "StateVector":
        return StateVector(self.position.copy(), self.clock_offset, self.rotation.copy())


def channel_params_from_state(state: StateVector, bs: Pose, f_c: float,
                              gain_phase: float = 0.0) -> ChannelParams:
    """Map transmitter state and receiver pose to LOS channel parameters.

    The gain amplitude follows free-space decay, wavelength / (4 pi c tau);
    the gain phase is not geometric and must be supplied by the caller.
    """
    diff = state.position - bs.position
    dist = float(np.linalg.norm(diff))
    if dist < 1e-9:
        raise ValueError("transmitter and receiver positions coincide")
    t_rx = bs.rotation.T @ (diff / dist)
    t_tx = state.rotation.T @ (-diff / dist)
    aoa_az, aoa_el = angles_from_direction(t_rx)
    aod_az, aod_el = angles_from_direction(t_tx)
    delay = dist / SPEED_OF_LIGHT + state.clock_offset
    wavelength = SPEED_OF_LIGHT / f_c
    rho = wavelength / (4.0 * np.pi * SPEED_OF_LIGHT * delay)
    return ChannelParams(aoa_az, aoa_el, aod_az, aod_el, delay, rho, gain_phase)


def steering_vector(layout: ArrayLayout, azimuth: float, elevation: float,
                    f_c: float) -> np.ndarray:
    """Array response exp(j 2 pi f_c / c * Z^T t) for direction (azimuth, elevation)."""
    t = direction_vector(azimuth, elevation)
    phase = (2.0 * np.pi * f_c / SPEED_OF_LIGHT) * (layout.element_positions.T @ t)
    return np.exp(1j * phase)


def perturbed_steering_vector(layout: ArrayLayout, displacement: np.ndarray,
                              gain_coeffs: np.ndarray, azimuth: float,
                              elevation: float, f_c: float) -> np.ndarray:
    """Steering vector of a displaced, gain-perturbed array.

    ``displacement`` is a 3 x N offset matrix (zero first row) added to the
    nominal element positions; ``gain_coeffs`` is the complex per-element
    excitation applied on top of the phase response.
    """
    displacement = np.asarray(displacement, dtype=float)
    if np.any(displacement[0] != 0.0):
        raise ValueError("element displacements must stay in the YZ plane")
    t = direction_vector(azimuth, elevation)
    pos = layout.element_positions + displacement
    phase = (2.0 * np.pi * f_c / SPEED_OF_LIGHT) * (pos.T @ t)
    return np.asarray(gain_coeffs, dtype=complex) * np.exp(1j * phase)
