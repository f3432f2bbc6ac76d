import numpy as np
import pytest

from hwiloc.geometry import (SPEED_OF_LIGHT, ArrayLayout, Pose, StateVector,
                             angles_from_direction, channel_params_from_state,
                             direction_vector, perturbed_steering_vector,
                             rotation_from_euler, steering_vector, wrap_angle)

F_C = 60e9
WAVELENGTH = SPEED_OF_LIGHT / F_C


def test_rotation_identity():
    assert np.allclose(rotation_from_euler((0, 0, 0)), np.eye(3), atol=1e-15)


def test_rotation_yaw_180():
    # composing the elementary Z-rotation by hand
    expected = np.diag([-1.0, -1.0, 1.0])
    assert np.allclose(rotation_from_euler((180, 0, 0)), expected, atol=1e-12)


def test_rotation_always_proper():
    rng = np.random.default_rng(7)
    for _ in range(50):
        r = rotation_from_euler(rng.uniform(-180, 180, 3))
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-12
        assert abs(np.linalg.det(r) - 1.0) < 1e-12


def test_rotation_rejects_nonfinite():
    with pytest.raises(ValueError):
        rotation_from_euler((np.nan, 0, 0))


def test_channel_params_boresight():
    state = StateVector([1.0, 0.0, 0.0], 0.0, np.eye(3))
    bs = Pose(np.zeros(3), np.eye(3))
    p = channel_params_from_state(state, bs, F_C)
    assert abs(p.aoa_az) < 1e-12 and abs(p.aoa_el) < 1e-12


def test_channel_params_zenith():
    state = StateVector([0.0, 0.0, 1.0], 0.0, np.eye(3))
    bs = Pose(np.zeros(3), np.eye(3))
    p = channel_params_from_state(state, bs, F_C)
    assert abs(p.aoa_el - np.pi / 2) < 1e-12


def test_channel_params_table_geometry_delay():
    # Euclidean-distance oracle for the default placement
    state = StateVector([8.0, 4.0, 0.0], 0.0, rotation_from_euler((180, 0, 0)))
    bs = Pose.from_euler([0.0, 0.0, 3.0], (0, 15, 0))
    p = channel_params_from_state(state, bs, F_C)
    expected = np.sqrt(8.0 ** 2 + 4.0 ** 2 + 3.0 ** 2) / SPEED_OF_LIGHT
    assert abs(p.delay - expected) < 1e-20
    assert abs(p.delay - 31.47e-9) < 0.01e-9
    # free-space amplitude at that range
    assert np.isclose(p.gain_amp, WAVELENGTH / (4 * np.pi * np.sqrt(89.0)), rtol=1e-12)


def test_channel_params_coincident_positions():
    state = StateVector([0.0, 0.0, 3.0], 0.0, np.eye(3))
    bs = Pose.from_euler([0.0, 0.0, 3.0], (0, 0, 0))
    with pytest.raises(ValueError):
        channel_params_from_state(state, bs, F_C)


def test_steering_boresight_all_ones():
    layout = ArrayLayout.upa(4, 4, WAVELENGTH / 2)
    a = steering_vector(layout, 0.0, 0.0, F_C)
    assert np.allclose(a, np.ones(16), atol=1e-12)


def test_steering_two_element_phase():
    # elements at y = 0 and y = lambda/2; azimuth 90 deg puts t along +y
    pos = np.array([[0.0, 0.0], [0.0, WAVELENGTH / 2], [0.0, 0.0]])
    layout = ArrayLayout(n_z=1, n_y=2, element_positions=pos, spacing=WAVELENGTH / 2)
    a = steering_vector(layout, np.pi / 2, 0.0, F_C)
    phases = np.angle(a)
    assert abs(phases[0]) < 1e-12
    assert abs(abs(phases[1]) - np.pi) < 1e-9


def test_steering_unit_modulus():
    layout = ArrayLayout.upa(3, 5, WAVELENGTH / 2)
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = steering_vector(layout, rng.uniform(-np.pi, np.pi),
                            rng.uniform(-np.pi / 2, np.pi / 2), F_C)
        assert np.max(np.abs(np.abs(a) - 1.0)) < 1e-12


def test_steering_conjugate_symmetry():
    # mirrored direction t -> -t conjugates the response (planar array)
    layout = ArrayLayout.upa(2, 3, WAVELENGTH / 2)
    rng = np.random.default_rng(11)
    for _ in range(10):
        az = rng.uniform(-np.pi, np.pi)
        el = rng.uniform(-np.pi / 2, np.pi / 2)
        t = direction_vector(az, el)
        az_m, el_m = angles_from_direction(-t)
        a = steering_vector(layout, az, el, F_C)
        a_m = steering_vector(layout, az_m, el_m, F_C)
        assert np.max(np.abs(a_m - np.conj(a))) < 1e-10


def test_direction_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(30):
        state = StateVector(rng.uniform(-20, 20, 3), rng.uniform(-1e-8, 1e-8),
                            rotation_from_euler(rng.uniform(-180, 180, 3)))
        bs = Pose.from_euler(rng.uniform(-20, 20, 3), rng.uniform(-180, 180, 3))
        if np.linalg.norm(state.position - bs.position) < 0.5:
            continue
        p = channel_params_from_state(state, bs, F_C)
        t_local = bs.rotation.T @ (state.position - bs.position)
        t_local /= np.linalg.norm(t_local)
        assert np.max(np.abs(direction_vector(p.aoa_az, p.aoa_el) - t_local)) < 1e-10
        u_local = state.rotation.T @ (bs.position - state.position)
        u_local /= np.linalg.norm(u_local)
        assert np.max(np.abs(direction_vector(p.aod_az, p.aod_el) - u_local)) < 1e-10


def test_perturbed_degenerate_matches_plain():
    layout = ArrayLayout.upa(2, 2, WAVELENGTH / 2)
    a0 = steering_vector(layout, 0.3, -0.2, F_C)
    a1 = perturbed_steering_vector(layout, np.zeros((3, 4)), np.ones(4), 0.3, -0.2, F_C)
    assert np.max(np.abs(a0 - a1)) < 1e-14


def test_perturbed_gain_scales_single_entry():
    layout = ArrayLayout.upa(2, 2, WAVELENGTH / 2)
    gains = np.ones(4, dtype=complex)
    gains[2] = 1.5  # amplitude error 0.5, no phase error
    a0 = steering_vector(layout, 0.5, 0.1, F_C)
    a1 = perturbed_steering_vector(layout, np.zeros((3, 4)), gains, 0.5, 0.1, F_C)
    assert np.allclose(a1[2], 1.5 * a0[2], atol=1e-14)
    assert np.allclose(np.delete(a1, 2), np.delete(a0, 2), atol=1e-14)


def test_perturbed_half_wave_shift_advances_pi():
    pos = np.array([[0.0, 0.0], [0.0, WAVELENGTH / 2], [0.0, 0.0]])
    layout = ArrayLayout(n_z=1, n_y=2, element_positions=pos, spacing=WAVELENGTH / 2)
    disp = np.zeros((3, 2))
    disp[1, 1] = WAVELENGTH / 2  # shift second element along y
    a0 = steering_vector(layout, np.pi / 2, 0.0, F_C)
    a1 = perturbed_steering_vector(layout, disp, np.ones(2), np.pi / 2, 0.0, F_C)
    dphi = wrap_angle(np.angle(a1[1]) - np.angle(a0[1]))
    assert abs(abs(dphi) - np.pi) < 1e-9


def test_perturbed_rejects_out_of_plane():
    layout = ArrayLayout.upa(2, 2, WAVELENGTH / 2)
    disp = np.zeros((3, 4))
    disp[0, 0] = 1e-6
    with pytest.raises(ValueError):
        perturbed_steering_vector(layout, disp, np.ones(4), 0.0, 0.0, F_C)
