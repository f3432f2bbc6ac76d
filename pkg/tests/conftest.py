import numpy as np
import pytest

from hwiloc.forward_model import OfdmConfig, build_frame
from hwiloc.geometry import ArrayLayout, ChannelParams, Pose, StateVector, rotation_from_euler
from hwiloc.harness import default_scenario, link_true_params, build_link_frame


@pytest.fixture(scope="session")
def table_scenario():
    return default_scenario()


@pytest.fixture(scope="session")
def table_link0(table_scenario):
    """True params and full-size pilot frame of the first link."""
    params = link_true_params(table_scenario, 0)
    frame = build_link_frame(table_scenario, 0)
    return params, frame


def small_frame(seed=0, power_dbm=0.0, n_ue=(2, 2), n_bs=(2, 2), k=16,
                m_beams=(2, 2, 2, 2), waveform="ofdm", delta_f=240e3):
    """Compact frame for fast tests: tiny arrays and few beams."""
    rng = np.random.default_rng(seed)
    cfg = OfdmConfig(f_c=60e9, delta_f=delta_f, n_subcarriers=k,
                     n_transmissions=int(np.prod(m_beams)),
                     tx_power_dbm=power_dbm)
    spacing = cfg.wavelength / 2.0
    bs_layout = ArrayLayout.upa(n_bs[0], n_bs[1], spacing)
    ue_layout = ArrayLayout.upa(n_ue[0], n_ue[1], spacing)
    params = ChannelParams(aoa_az=rng.uniform(-0.8, 0.8), aoa_el=rng.uniform(-0.6, 0.6),
                           aod_az=rng.uniform(-0.8, 0.8), aod_el=rng.uniform(-0.6, 0.6),
                           delay=rng.uniform(10e-9, 60e-9),
                           gain_amp=4e-5, gain_phase=rng.uniform(0, 2 * np.pi))
    frame = build_frame(cfg, bs_layout, ue_layout, params, m_beams, 0.15, 0.05,
                        rng, "bs-first")
    if waveform == "dft-s-ofdm":
        cfg2 = OfdmConfig(f_c=cfg.f_c, delta_f=cfg.delta_f, n_subcarriers=k,
                          n_transmissions=cfg.n_transmissions,
                          tx_power_dbm=power_dbm, waveform=waveform)
        frame = build_frame(cfg2, bs_layout, ue_layout, params, m_beams, 0.15,
                            0.05, np.random.default_rng(seed), "bs-first")
    return params, frame
