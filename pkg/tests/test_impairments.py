import numpy as np
import pytest

from hwiloc.impairments import (HwiConfig, HwiRealization, apply_iqi, cfo_matrix,
                                cfo_matrix_diag, apply_pn_cfo,
                                mutual_coupling_matrix, pa_transfer,
                                sample_realization, unitary_dft, unitary_idft)

PA_TABLE = (0.9798 + 0.0286j, 0.0122 - 0.0043j, -0.0007 + 0.0001j)


def test_sample_degenerate_all_zero_sigmas():
    cfg = HwiConfig()
    rng = np.random.default_rng(0)
    r = sample_realization(cfg, 4, 4, 3, 8, rng)
    assert r.cfo_tx == 0.0 and r.cfo_rx == 0.0
    assert not r.pn_tx.any() and not r.pn_rx.any()
    assert np.allclose(r.mc_tx, np.eye(4)) and np.allclose(r.mc_rx, np.eye(4))
    assert np.allclose(r.age_tx, 1.0) and np.allclose(r.age_rx, 1.0)
    assert not r.ade_tx.any() and not r.ade_rx.any()
    assert r.iqi_tx == (1.0 + 0.0j, 0.0 + 0.0j)
    assert r.iqi_rx == (1.0 + 0.0j, 0.0 + 0.0j)


def test_sample_scale_doubles_cfo_spread():
    base = dict(sigma_cfo=2e-4)
    draws = {}
    for scale in (1.0, 2.0):
        cfg = HwiConfig(hwi_scale=scale, **base)
        rng = np.random.default_rng(123)
        draws[scale] = np.array([sample_realization(cfg, 1, 1, 1, 1, rng).cfo_rx
                                 for _ in range(3000)])
    ratio = np.std(draws[2.0]) / np.std(draws[1.0])
    assert abs(ratio - 2.0) < 0.15


def test_sample_seed_repeatable():
    cfg = HwiConfig(sigma_pn=0.03, sigma_cfo=1e-4, sigma_mc=1e-3,
                    sigma_age_amp=0.002, sigma_age_phase=0.002, sigma_ade=5e-6,
                    sigma_iqi_amp=0.02, sigma_iqi_phase=0.02)
    a = sample_realization(cfg, 4, 9, 5, 7, np.random.default_rng(42))
    b = sample_realization(cfg, 4, 9, 5, 7, np.random.default_rng(42))
    assert np.array_equal(a.pn_rx, b.pn_rx)
    assert np.array_equal(a.mc_rx, b.mc_rx)
    assert np.array_equal(a.ade_tx, b.ade_tx)
    assert a.iqi_tx == b.iqi_tx and a.cfo_tx == b.cfo_tx


def test_iqi_pairs_sum_to_one():
    cfg = HwiConfig(sigma_iqi_amp=0.05, sigma_iqi_phase=0.05)
    rng = np.random.default_rng(9)
    for _ in range(20):
        r = sample_realization(cfg, 2, 2, 1, 2, rng)
        assert abs(r.iqi_tx[0] + r.iqi_tx[1] - 1.0) < 1e-14
        assert abs(r.iqi_rx[0] + r.iqi_rx[1] - 1.0) < 1e-14


def test_mc_unit_diagonal():
    cfg = HwiConfig(sigma_mc=0.01)
    r = sample_realization(cfg, 4, 16, 1, 2, np.random.default_rng(1))
    assert np.allclose(np.diag(r.mc_rx), 1.0)


def test_cfo_matrix_zero_is_identity():
    assert np.allclose(cfo_matrix(0.0, 3, 8, 1), np.eye(8))


def test_cfo_matrix_structure_at_g0():
    eps, k = 3e-4, 16
    d = cfo_matrix_diag(eps, 0, k, 2)
    assert abs(d[0] - 1.0) < 1e-15
    expected = np.exp(1j * 2 * np.pi * eps * np.arange(k) / k)
    assert np.allclose(d, expected, atol=1e-15)


def test_cfo_matrix_unit_modulus():
    d = cfo_matrix_diag(2e-4, 5, 32, 4)
    assert np.max(np.abs(np.abs(d) - 1.0)) < 1e-12


def test_apply_pn_cfo_identity():
    rng = np.random.default_rng(2)
    y = rng.normal(size=16) + 1j * rng.normal(size=16)
    out = apply_pn_cfo(y, np.zeros(16), np.ones(16))
    assert np.max(np.abs(out - y)) < 1e-12


def test_apply_pn_cfo_common_phase_commutes():
    rng = np.random.default_rng(3)
    y = rng.normal(size=32) + 1j * rng.normal(size=32)
    theta = 0.7
    out = apply_pn_cfo(y, np.full(32, theta), np.ones(32))
    assert np.max(np.abs(out - np.exp(1j * theta) * y)) < 1e-12


def test_apply_pn_cfo_preserves_norm():
    rng = np.random.default_rng(4)
    y = rng.normal(size=64) + 1j * rng.normal(size=64)
    pn = rng.normal(0, 0.1, 64)
    out = apply_pn_cfo(y, pn, cfo_matrix_diag(1e-3, 2, 64, 8))
    assert abs(np.linalg.norm(out) - np.linalg.norm(y)) < 1e-10


def test_apply_pn_cfo_length_mismatch():
    with pytest.raises(ValueError):
        apply_pn_cfo(np.ones(8), np.zeros(4), np.ones(8))


def test_mc_matrix_zero_coupling():
    assert np.allclose(mutual_coupling_matrix(0.0, 0.0, 3, 2), np.eye(6))


def test_mc_matrix_2x2_hand_expansion():
    cx, cxy = 0.1 + 0.02j, 0.03 - 0.01j
    m = mutual_coupling_matrix(cx, cxy, 2, 2)
    expected = np.array([[1, cx, cx, cxy],
                         [cx, 1, cxy, cx],
                         [cx, cxy, 1, cx],
                         [cxy, cx, cx, 1]])
    assert np.allclose(m, expected, atol=1e-15)


def test_mc_matrix_symmetric():
    rng = np.random.default_rng(6)
    for _ in range(10):
        cx = complex(rng.normal(), rng.normal()) * 0.01
        cxy = complex(rng.normal(), rng.normal()) * 0.005
        m = mutual_coupling_matrix(cx, cxy, 4, 3)
        assert np.max(np.abs(m - m.T)) == 0.0


def test_pa_linear_identity():
    rng = np.random.default_rng(8)
    x = rng.normal(size=50) + 1j * rng.normal(size=50)
    out = pa_transfer(x, (1.0,), np.inf, 50.0)
    assert np.max(np.abs(out - x)) < 1e-12


def test_pa_polynomial_at_clip_point():
    # hand evaluation of the cubic polynomial at 1 V drive
    out = pa_transfer(np.array([1.0 + 0.0j]), PA_TABLE, 1.0, 1.0)
    assert abs(out[0] - (0.9913 + 0.0244j)) < 1e-12


def test_pa_saturates_magnitude():
    clip = 1.0
    drives = np.array([1.5, 3.0, 10.0], dtype=complex)
    out = pa_transfer(drives, PA_TABLE, clip, 1.0)
    ref = pa_transfer(np.array([clip + 0j]), PA_TABLE, clip, 1.0)
    assert np.max(np.abs(np.abs(out) - np.abs(ref[0]))) < 1e-12


def test_pa_continuous_at_clip():
    clip, r = 1.0, 50.0
    below = pa_transfer(np.array([(clip - 1e-13) * np.sqrt(r) + 0j]), PA_TABLE, clip, r)
    above = pa_transfer(np.array([(clip + 1e-13) * np.sqrt(r) + 0j]), PA_TABLE, clip, r)
    assert abs(below[0] - above[0]) < 1e-10


def test_iqi_passthrough():
    x = np.array([1 + 2j, -0.3 + 0.1j])
    assert np.array_equal(apply_iqi(x, (1.0 + 0.0j, 0.0 + 0.0j)), x)


def test_iqi_real_and_imag_axes():
    # alpha + beta = 1 and alpha - beta = m: real input passes through,
    # purely imaginary input is scaled by m
    m = 1.05
    alpha, beta = 0.5 + 0.5 * m, 0.5 - 0.5 * m
    x_re = np.array([1.0, -2.0], dtype=complex)
    x_im = 1j * np.array([1.0, -2.0])
    assert np.allclose(apply_iqi(x_re, (alpha, beta)), x_re, atol=1e-14)
    assert np.allclose(apply_iqi(x_im, (alpha, beta)), m * x_im, atol=1e-14)


def test_iqi_time_domain_matches_spectral_image():
    # F(alpha F^H x + beta (F^H x)*) == alpha x + beta mirror(conj x)
    from hwiloc.forward_model import iqi_spectral_image
    rng = np.random.default_rng(12)
    x = rng.normal(size=32) + 1j * rng.normal(size=32)
    iqi = (0.98 + 0.01j, 0.02 - 0.01j)
    time_route = unitary_dft(apply_iqi(unitary_idft(x), iqi))
    assert np.max(np.abs(time_route - iqi_spectral_image(x, iqi))) < 1e-12


def test_masked_disables_groups():
    cfg = HwiConfig(sigma_pn=0.1, sigma_cfo=1e-3, sigma_mc=0.01,
                    pa_coeffs=PA_TABLE, pa_clip=1.0, sigma_age_amp=0.01,
                    sigma_age_phase=0.01, sigma_ade=1e-5, sigma_iqi_amp=0.01,
                    sigma_iqi_phase=0.01)
    only_pn = cfg.masked({"pn"})
    assert only_pn.sigma_pn == cfg.sigma_pn
    assert only_pn.sigma_cfo == 0 and only_pn.sigma_mc == 0
    assert only_pn.pa_coeffs == (1.0 + 0.0j,) and np.isinf(only_pn.pa_clip)
    assert only_pn.sigma_iqi_amp == 0
    with pytest.raises(ValueError):
        cfg.masked({"bogus"})


def test_scale_zero_disables_everything():
    cfg = HwiConfig(sigma_pn=0.1, sigma_cfo=1e-3, pa_coeffs=PA_TABLE,
                    pa_clip=1.0, hwi_scale=0.0)
    r = sample_realization(cfg, 2, 4, 3, 8, np.random.default_rng(5))
    assert r.pa_coeffs == (1.0 + 0.0j,)
    assert not r.pn_rx.any() and r.cfo_rx == 0.0


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        HwiConfig(sigma_pn=-0.1)
