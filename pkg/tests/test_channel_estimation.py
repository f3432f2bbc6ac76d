import numpy as np
import pytest

from conftest import small_frame
from hwiloc.channel_estimation import (NoDetectionError, SpatialFrequencies,
                                       assemble_tensor, coarse_estimate,
                                       fine_mmle, params_from_frequencies,
                                       projected_residual, rank1_factors)
from hwiloc.forward_model import Observation, add_noise, mm_mean, spatial_frequencies
from hwiloc.geometry import ChannelParams


def noisefree_obs(params, frame):
    return Observation(y=mm_mean(params, frame), noise_variance=frame.noise_variance)


def mode_response_vectors(frame, freqs):
    from hwiloc.channel_estimation import _mode_response
    return [_mode_response(frame, n, freqs[n])[:, 0] for n in range(4)]


def test_assemble_matches_direct_evaluation():
    # beamspace tensor equals the factored per-mode construction
    params, frame = small_frame(seed=0)
    tensor = assemble_tensor(noisefree_obs(params, frame), frame)
    freqs = spatial_frequencies(params, frame.cfg.delta_f)
    bs = mode_response_vectors(frame, freqs)
    ramp = frame.delay_ramp(params.delay)
    direct = params.gain * np.einsum("a,b,c,d,k->abcdk", *bs, ramp)
    rel = np.linalg.norm(tensor - direct) / np.linalg.norm(direct)
    assert rel < 1e-10


def test_assemble_single_entry():
    from hwiloc.forward_model import OfdmConfig, build_frame
    from hwiloc.geometry import ArrayLayout
    cfg = OfdmConfig(n_subcarriers=1, n_transmissions=1)
    lay = ArrayLayout.upa(1, 1, cfg.wavelength / 2)
    params = ChannelParams(0.0, 0.0, 0.0, 0.0, 10e-9, 1e-4, 0.3)
    frame = build_frame(cfg, lay, lay, params, (1, 1, 1, 1), 0.15, 0.05,
                        np.random.default_rng(1))
    obs = noisefree_obs(params, frame)
    tensor = assemble_tensor(obs, frame)
    assert tensor.shape == (1, 1, 1, 1, 1)
    assert abs(tensor.ravel()[0] - obs.y[0] / frame.pilots[0, 0]) < 1e-18


def test_assemble_linearity():
    params, frame = small_frame(seed=2)
    obs = noisefree_obs(params, frame)
    t1 = assemble_tensor(obs, frame)
    obs3 = Observation(y=3.0 * obs.y, noise_variance=obs.noise_variance)
    assert np.allclose(assemble_tensor(obs3, frame), 3.0 * t1, rtol=1e-14)


def test_assemble_rejects_zero_pilots():
    params, frame = small_frame(seed=3)
    frame.pilots = frame.pilots.copy()
    frame.pilots[0, 0] = 0.0
    with pytest.raises(ValueError):
        assemble_tensor(noisefree_obs(params, frame), frame)


def test_rank1_recovers_synthetic_outer_product():
    rng = np.random.default_rng(4)
    vecs = [rng.normal(size=m) + 1j * rng.normal(size=m) for m in (3, 4, 2, 3, 8)]
    tensor = 2.5 * np.einsum("a,b,c,d,k->abcdk", *vecs)
    factors, scale = rank1_factors(tensor)
    for u, v in zip(factors, vecs):
        v = v / np.linalg.norm(v)
        overlap = abs(np.vdot(u, v))
        assert overlap > 1 - 1e-10


def test_coarse_exact_on_rank1_tensor():
    # the tensor built from the model at known frequencies inverts itself
    params, frame = small_frame(seed=5, k=64, m_beams=(3, 3, 2, 2))
    tensor = assemble_tensor(noisefree_obs(params, frame), frame)
    est, freqs = coarse_estimate(tensor, frame)
    truth = spatial_frequencies(params, frame.cfg.delta_f)
    assert np.max(np.abs(freqs.as_array()[:4] - truth[:4])) < 1e-3
    assert abs(freqs.w5 - truth[4]) < 1e-3


def test_coarse_tablescale_noise_free(table_link0):
    params, frame = table_link0
    tensor = assemble_tensor(noisefree_obs(params, frame), frame)
    est, _ = coarse_estimate(tensor, frame)
    assert abs(est.aoa_az - params.aoa_az) < np.deg2rad(0.5)
    assert abs(est.aoa_el - params.aoa_el) < np.deg2rad(0.5)
    assert abs(est.aod_az - params.aod_az) < np.deg2rad(0.5)
    assert abs(est.aod_el - params.aod_el) < np.deg2rad(0.5)
    assert abs(est.delay - params.delay) < 0.1e-9


def test_elevation_inversion_algebra():
    freqs = SpatialFrequencies(0.0, np.pi * np.sin(0.4), 0.0,
                               np.pi * np.sin(-0.25), 0.05)
    p = params_from_frequencies(freqs, 240e3)
    assert abs(p.aoa_el - 0.4) < 1e-12
    assert abs(p.aod_el + 0.25) < 1e-12
    assert abs(p.delay - 0.05 / (2 * np.pi * 240e3)) < 1e-20


def test_coarse_rejects_empty_tensor():
    params, frame = small_frame(seed=6)
    with pytest.raises(NoDetectionError):
        coarse_estimate(np.zeros((2, 2, 2, 2, 16), dtype=complex), frame)


def test_fine_fixed_point_at_truth():
    params, frame = small_frame(seed=7)
    res = fine_mmle(noisefree_obs(params, frame), params, frame)
    assert res.converged
    diff = np.abs(res.params.angles_delay() - params.angles_delay())
    assert np.max(diff[:4]) < 1e-9
    assert diff[4] < 1e-9 / (frame.n_subcarriers * frame.cfg.delta_f)
    assert abs(res.params.gain_amp - params.gain_amp) < 1e-9 * params.gain_amp


def test_fine_recovers_from_perturbed_init():
    params, frame = small_frame(seed=8, k=32)
    init = ChannelParams(params.aoa_az + np.deg2rad(0.5),
                         params.aoa_el - np.deg2rad(0.5),
                         params.aod_az + np.deg2rad(0.5),
                         params.aod_el - np.deg2rad(0.5),
                         params.delay + 0.2e-9,
                         params.gain_amp, params.gain_phase)
    res = fine_mmle(noisefree_obs(params, frame), init, frame)
    diff = np.abs(res.params.angles_delay() - params.angles_delay())
    assert np.max(diff[:4]) < 1e-6
    assert diff[4] < 1e-6 * params.delay


def test_fine_objective_never_worse_than_init():
    params, frame = small_frame(seed=9)
    obs = add_noise(mm_mean(params, frame), frame, np.random.default_rng(0))
    y_norm2 = float(np.vdot(obs.y, obs.y).real)
    init = ChannelParams(params.aoa_az + 0.01, params.aoa_el, params.aod_az,
                         params.aod_el, params.delay)
    res = fine_mmle(obs, init, frame)
    f_init = projected_residual(init.angles_delay(), obs.y, frame, y_norm2)
    assert res.objective <= f_init + 1e-15


def test_fine_unit_modulus_equivariance():
    # rotating the observation by a constant phase changes only the gain phase
    params, frame = small_frame(seed=10)
    obs = noisefree_obs(params, frame)
    res1 = fine_mmle(obs, params, frame)
    theta = 0.9
    obs2 = Observation(y=np.exp(1j * theta) * obs.y, noise_variance=obs.noise_variance)
    res2 = fine_mmle(obs2, params, frame)
    assert np.max(np.abs(res1.params.angles_delay() - res2.params.angles_delay())) < 1e-9
    dphi = (res1.params.gain_phase - res2.params.gain_phase) % (2 * np.pi)
    assert abs(dphi - theta) < 1e-6 or abs(dphi - theta - 2 * np.pi) < 1e-6


def test_gain_elimination_is_stationary():
    # residual as a function of complex gain has zero gradient at the projection
    params, frame = small_frame(seed=11)
    obs = add_noise(mm_mean(params, frame), frame, np.random.default_rng(1))
    gamma = mm_mean(ChannelParams(*params.angles_delay(), 1.0, 0.0), frame)
    alpha = np.vdot(gamma, obs.y) / np.vdot(gamma, gamma).real

    def cost(a):
        return np.linalg.norm(obs.y - a * gamma) ** 2

    h = 1e-9 * max(abs(alpha), 1e-12)
    d_re = (cost(alpha + h) - cost(alpha - h)) / (2 * h)
    d_im = (cost(alpha + 1j * h) - cost(alpha - 1j * h)) / (2 * h)
    scale = cost(alpha) + np.linalg.norm(obs.y) ** 2
    assert abs(d_re) < 1e-5 * scale / max(abs(alpha), 1e-12)
    assert abs(d_im) < 1e-5 * scale / max(abs(alpha), 1e-12)
