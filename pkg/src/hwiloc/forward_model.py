"""Pilot frames, beam-sweep codebooks and the two observation models.

Two generators are provided for the stacked G*K pilot observation of one
link: ``mm_mean`` is the clean model the estimators assume, ``tm_mean`` runs
the full impaired transmit/channel/receive chain.  With every impairment at
its neutral value the two coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (SPEED_OF_LIGHT, ArrayLayout, ChannelParams,
                       direction_vector, perturbed_steering_vector,
                       steering_vector)
from .impairments import (HwiRealization, apply_iqi, cfo_matrix_diag,
                          pa_transfer, unitary_dft, unitary_idft)

DBM_TO_WATT = 1e-3


def dbm_to_watt(p_dbm: float) -> float:
    return DBM_TO_WATT * 10.0 ** (p_dbm / 10.0)


@dataclass(frozen=True)
class OfdmConfig:
    """Carrier, subcarrier grid, power and noise description of the pilot band."""

    f_c: float = 60e9
    delta_f: float = 240e3
    n_subcarriers: int = 100
    n_transmissions: int = 144
    cp_len: int | None = None          # None -> K // 8
    noise_psd_dbm_hz: float = -173.855
    noise_figure_db: float = 10.0
    tx_power_dbm: float = 0.0
    waveform: str = "ofdm"             # "ofdm" | "dft-s-ofdm"
    noise_bandwidth_hz: float | None = None   # None -> pilot band K * delta_f

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.n_transmissions < 1:
            raise ValueError("n_subcarriers and n_transmissions must be >= 1")
        if self.delta_f <= 0:
            raise ValueError("subcarrier spacing must be positive")
        if self.waveform not in ("ofdm", "dft-s-ofdm"):
            raise ValueError(f"unknown waveform {self.waveform!r}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def cyclic_prefix(self) -> int:
        return self.n_subcarriers // 8 if self.cp_len is None else self.cp_len

    @property
    def tx_power_watt(self) -> float:
        return dbm_to_watt(self.tx_power_dbm)

    @property
    def noise_variance(self) -> float:
        """Per-sample noise power N0 * W * NF in watts, before combiner gain."""
        bw = self.noise_bandwidth_hz
        if bw is None:
            bw = self.n_subcarriers * self.delta_f
        n0 = dbm_to_watt(self.noise_psd_dbm_hz)
        return n0 * bw * 10.0 ** (self.noise_figure_db / 10.0)


def mode_steering(axis_positions: np.ndarray, omega: float, wavelength: float) -> np.ndarray:
    """One-axis response exp(j * 2 p / lambda * omega) at spatial frequency omega.

    For half-wavelength spacing this reduces to exp(j * omega * index).
    """
    return np.exp(1j * (2.0 * np.asarray(axis_positions) / wavelength) * omega)


def spatial_frequencies(params: ChannelParams, delta_f: float) -> np.ndarray:
    """The five spatial frequencies (two AOA, two AOD, one delay) of a link."""
    return np.array([
        np.pi * np.sin(params.aoa_az) * np.cos(params.aoa_el),
        np.pi * np.sin(params.aoa_el),
        np.pi * np.sin(params.aod_az) * np.cos(params.aod_el),
        np.pi * np.sin(params.aod_el),
        2.0 * np.pi * delta_f * params.delay,
    ])


@dataclass
class PilotFrame:
    """Sweep codebooks, per-transmission beams and pilot symbols for one link."""

    cfg: OfdmConfig
    bs_layout: ArrayLayout
    ue_layout: ArrayLayout
    pilots: np.ndarray          # (G, K) complex
    precoders: np.ndarray       # (N_U, G), unit-modulus entries
    combiners: np.ndarray       # (N_B, G), unit-modulus entries
    codebooks: list             # [T1 (N1,M1), T2, T3, T4]
    beam_index: np.ndarray      # (G, 4) per-mode beam indices
    grid_centers: np.ndarray    # prior spatial frequencies of the four modes
    beam_counts: tuple
    grid_step: float
    sweep_order: str = "bs-first"

    @property
    def n_transmissions(self) -> int:
        return self.pilots.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.pilots.shape[1]

    @property
    def noise_variance(self) -> float:
        """Per-observation noise power including the combiner gain w^H w = N_B."""
        return self.bs_layout.n_elements * self.cfg.noise_variance

    def delay_ramp(self, delay: float) -> np.ndarray:
        k = np.arange(1, self.n_subcarriers + 1)
        return np.exp(-2j * np.pi * k * self.cfg.delta_f * delay)


def build_codebooks(prior_freqs, beam_counts, grid_step: float,
                    bs_layout: ArrayLayout, ue_layout: ArrayLayout,
                    wavelength: float, sweep_order: str = "bs-first"):
    """Gridded sweep codebooks and the per-transmission beam schedule.

    Mode m of codebook n points at prior + (2m - M_n - 1)/2 * grid_step.
    Returns (codebooks, combiners, precoders, beam_index).  With
    ``bs-first`` ordering the BS beam pair cycles fastest over transmissions.
    """
    prior_freqs = np.asarray(prior_freqs, dtype=float)
    if prior_freqs.shape != (4,) or not np.all(np.isfinite(prior_freqs)):
        raise ValueError("need four finite prior spatial frequencies")
    m1, m2, m3, m4 = beam_counts
    axes = [bs_layout.y_axis, bs_layout.z_axis, ue_layout.y_axis, ue_layout.z_axis]
    codebooks = []
    for n, m_n in enumerate(beam_counts):
        offsets = (2.0 * np.arange(1, m_n + 1) - m_n - 1) / 2.0 * grid_step
        cols = [mode_steering(axes[n], prior_freqs[n] + off, wavelength) for off in offsets]
        codebooks.append(np.stack(cols, axis=1))
    w_cb = np.kron(codebooks[0], codebooks[1])             # N_B x M1*M2
    v_cb = np.conj(np.kron(codebooks[2], codebooks[3]))    # N_U x M3*M4

    n_bs, n_ue = m1 * m2, m3 * m4
    if sweep_order == "bs-first":
        bs_idx = np.tile(np.arange(n_bs), n_ue)
        ue_idx = np.repeat(np.arange(n_ue), n_bs)
    elif sweep_order == "ue-first":
        bs_idx = np.repeat(np.arange(n_bs), n_ue)
        ue_idx = np.tile(np.arange(n_ue), n_bs)
    else:
        raise ValueError(f"unknown sweep order {sweep_order!r}")

    combiners = np.conj(w_cb[:, bs_idx])
    precoders = v_cb[:, ue_idx]
    beam_index = np.stack([bs_idx // m2, bs_idx % m2, ue_idx // m4, ue_idx % m4], axis=1)
    return codebooks, combiners, precoders, beam_index


def build_frame(cfg: OfdmConfig, bs_layout: ArrayLayout, ue_layout: ArrayLayout,
                true_params: ChannelParams, beam_counts, grid_step: float,
                prior_error: float, rng: np.random.Generator,
                sweep_order: str = "bs-first") -> PilotFrame:
    """Assemble a pilot frame whose codebooks are centered near the true angles.

    The sweep grid is centered at the true spatial frequency plus
    ``prior_error`` (a stale prior).  Pilot symbols have constant amplitude
    sqrt(P / N_U) and uniformly random phases; for the DFT-spread waveform the
    constant-modulus symbols are passed through a unitary DFT so the
    time-domain drive of the PA is flat.
    """
    g_total = int(np.prod(beam_counts))
    if g_total != cfg.n_transmissions:
        raise ValueError("product of beam counts must equal n_transmissions")
    freqs = spatial_frequencies(true_params, cfg.delta_f)
    priors = freqs[:4] + prior_error
    codebooks, combiners, precoders, beam_index = build_codebooks(
        priors, beam_counts, grid_step, bs_layout, ue_layout,
        cfg.wavelength, sweep_order)
    amp = np.sqrt(cfg.tx_power_watt / ue_layout.n_elements)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(g_total, cfg.n_subcarriers))
    pilots = amp * np.exp(1j * phases)
    if cfg.waveform == "dft-s-ofdm":
        pilots = unitary_dft(pilots, axis=1)
    return PilotFrame(cfg=cfg, bs_layout=bs_layout, ue_layout=ue_layout,
                      pilots=pilots, precoders=precoders, combiners=combiners,
                      codebooks=codebooks, beam_index=beam_index,
                      grid_centers=priors, beam_counts=tuple(beam_counts),
                      grid_step=grid_step, sweep_order=sweep_order)


def beam_gains(params: ChannelParams, frame: PilotFrame):
    """Per-transmission scalar couplings (w_g^T a_B, a_U^T v_g)."""
    a_bs = steering_vector(frame.bs_layout, params.aoa_az, params.aoa_el, frame.cfg.f_c)
    a_ue = steering_vector(frame.ue_layout, params.aod_az, params.aod_el, frame.cfg.f_c)
    return frame.combiners.T @ a_bs, frame.precoders.T @ a_ue


def mm_mean(params: ChannelParams, frame: PilotFrame) -> np.ndarray:
    """Noise-free observation of the clean model, stacked over (g, k)."""
    g_bs, g_ue = beam_gains(params, frame)
    ramp = frame.delay_ramp(params.delay)
    block = params.gain * (g_bs * g_ue)[:, None] * ramp[None, :] * frame.pilots
    return block.reshape(-1)


def tm_mean(params: ChannelParams, hwi: HwiRealization, frame: PilotFrame) -> np.ndarray:
    """Noise-free observation of the hardware-impaired chain.

    Per transmission: the pilot block is IQ-imbalanced and phase-rotated at
    the transmitter in the time domain, amplified per antenna, mapped through
    the coupled and calibration-perturbed channel with the delay ramp, then
    phase-rotated and IQ-imbalanced at the receiver.
    """
    cfg = frame.cfg
    k = frame.n_subcarriers
    cp = cfg.cyclic_prefix
    if hwi.pn_tx.shape != (frame.n_transmissions, k):
        raise ValueError("impairment realization does not match the frame dimensions")

    a_bs = perturbed_steering_vector(frame.bs_layout, hwi.ade_rx, hwi.age_rx,
                                     params.aoa_az, params.aoa_el, cfg.f_c)
    a_ue = perturbed_steering_vector(frame.ue_layout, hwi.ade_tx, hwi.age_tx,
                                     params.aod_az, params.aod_el, cfg.f_c)
    channel = params.gain * (hwi.mc_rx @ a_bs)[:, None] * (hwi.mc_tx @ a_ue)[None, :]
    ramp = frame.delay_ramp(params.delay)

    out = np.empty((frame.n_transmissions, k), dtype=complex)
    for g in range(frame.n_transmissions):
        x_g = frame.pilots[g]
        t_sig = apply_iqi(unitary_idft(x_g), hwi.iqi_tx)
        t_sig = t_sig * np.exp(1j * hwi.pn_tx[g]) * cfo_matrix_diag(hwi.cfo_tx, g, k, cp)
        x_time = t_sig[:, None] * frame.precoders[:, g][None, :]
        x_pa = pa_transfer(x_time, hwi.pa_coeffs, hwi.pa_clip, hwi.load_resistance)
        x_freq = unitary_dft(x_pa, axis=0)

        h_eff = channel.T @ frame.combiners[:, g]
        s = (x_freq @ h_eff) * ramp
        u = unitary_idft(s)
        u = u * np.exp(1j * hwi.pn_rx[g]) * cfo_matrix_diag(hwi.cfo_rx, g, k, cp)
        out[g] = unitary_dft(apply_iqi(u, hwi.iqi_rx))
    return out.reshape(-1)


def iqi_spectral_image(x_freq: np.ndarray, iqi: tuple) -> np.ndarray:
    """Frequency-domain view of time-domain IQI: alpha x + beta * mirror(conj x).

    Conjugating the time signal mirrors the spectrum (index -k mod K), so this
    closed form must agree with DFT(apply_iqi(IDFT(x))).
    """
    alpha, beta = iqi
    x_freq = np.asarray(x_freq, dtype=complex)
    mirrored = np.conj(np.roll(x_freq[::-1], 1))
    return alpha * x_freq + beta * mirrored


@dataclass
class Observation:
    """Stacked received pilots of one link and the per-sample noise power."""

    y: np.ndarray
    noise_variance: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.y.real)) or not np.all(np.isfinite(self.y.imag)):
            raise ValueError("observation contains non-finite entries")


def add_noise(mean: np.ndarray, frame: PilotFrame,
              rng: np.random.Generator) -> Observation:
    """Add circular complex Gaussian noise with variance w^H w * sigma_n^2 * NF."""
    var = frame.noise_variance
    mean = np.asarray(mean, dtype=complex)
    if var == 0.0:
        return Observation(y=mean.copy(), noise_variance=0.0)
    s = np.sqrt(var / 2.0)
    noise = rng.normal(0.0, s, mean.shape) + 1j * rng.normal(0.0, s, mean.shape)
    return Observation(y=mean + noise, noise_variance=var)
