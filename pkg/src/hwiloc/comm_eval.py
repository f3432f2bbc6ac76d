"""Symbol-error-rate evaluation of the impaired link.

The data link reuses the impaired observation chain with fixed
conjugate-matched beams at both ends.  The analytical route approximates the
hardware distortion as additional Gaussian noise measured at the decision
variable; the Monte-Carlo route demodulates actual noisy symbols with
minimum-distance decisions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erfc

from .forward_model import OfdmConfig, PilotFrame, tm_mean
from .geometry import ArrayLayout, ChannelParams, perturbed_steering_vector
from .impairments import HwiRealization


@dataclass(frozen=True)
class CommSetup:
    """Modulation and sampling sizes for the data-link evaluation."""

    mod_order: int = 16
    n_symbols: int = 2000            # OFDM symbols per realization

    def __post_init__(self):
        m = int(round(np.sqrt(self.mod_order)))
        if m * m != self.mod_order or self.mod_order < 4:
            raise ValueError("modulation order must be a perfect square >= 4")


def qfunc(x):
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def ser_analytic(mod_order: int, snr) -> float | np.ndarray:
    """Square M-QAM symbol error probability at the given effective SNR."""
    snr = np.asarray(snr, dtype=float)
    if np.any(snr < 0):
        raise ValueError("SNR must be nonnegative")
    root_m = np.sqrt(mod_order)
    inner = 2.0 * (1.0 - 1.0 / root_m) * qfunc(np.sqrt(3.0 * snr / (mod_order - 1)))
    out = 1.0 - (1.0 - inner) ** 2
    return float(out) if out.ndim == 0 else out


def qam_constellation(mod_order: int) -> np.ndarray:
    """Square QAM alphabet normalized to unit average energy."""
    m = int(round(np.sqrt(mod_order)))
    levels = np.arange(-(m - 1), m, 2).astype(float)
    points = (levels[:, None] + 1j * levels[None, :]).reshape(-1)
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


@dataclass
class CommLink:
    """Fixed-beam data link derived from one impairment realization."""

    frame_template: PilotFrame
    equalizer: complex          # static channel seen at the decision variable
    noise_variance: float       # per-observation, includes combiner gain
    symbol_scale: float         # sqrt(P / N_U)


def build_comm_link(params: ChannelParams, hwi: HwiRealization, cfg: OfdmConfig,
                    bs_layout: ArrayLayout, ue_layout: ArrayLayout,
                    n_symbols: int) -> CommLink:
    """Conjugate-matched single-beam link over ``n_symbols`` transmissions.

    Beams are the elementwise-normalized conjugates of the impaired array
    responses, so the receiver's channel knowledge covers every static
    distortion (coupling, calibration, gain) plus the amplifier's
    small-signal complex gain.
    """
    a_bs = perturbed_steering_vector(bs_layout, hwi.ade_rx, hwi.age_rx,
                                     params.aoa_az, params.aoa_el, cfg.f_c)
    a_ue = perturbed_steering_vector(ue_layout, hwi.ade_tx, hwi.age_tx,
                                     params.aod_az, params.aod_el, cfg.f_c)
    rx_response = hwi.mc_rx @ a_bs
    tx_response = hwi.mc_tx @ a_ue
    combiner = np.exp(-1j * np.angle(rx_response))
    precoder = np.exp(-1j * np.angle(tx_response))

    comm_cfg = replace(cfg, n_transmissions=n_symbols)
    g = n_symbols
    frame = PilotFrame(
        cfg=comm_cfg, bs_layout=bs_layout, ue_layout=ue_layout,
        pilots=np.zeros((g, cfg.n_subcarriers), dtype=complex),
        precoders=np.repeat(precoder[:, None], g, axis=1),
        combiners=np.repeat(combiner[:, None], g, axis=1),
        codebooks=[], beam_index=np.zeros((g, 4), dtype=int),
        grid_centers=np.zeros(4), beam_counts=(1, 1, 1, 1), grid_step=0.0)

    g_eff = params.gain * (combiner @ rx_response) * (precoder @ tx_response)
    pa_gain = complex(hwi.pa_coeffs[0]) if len(hwi.pa_coeffs) else 1.0
    scale = np.sqrt(cfg.tx_power_watt / ue_layout.n_elements)
    return CommLink(frame_template=frame, equalizer=g_eff * pa_gain,
                    noise_variance=frame.noise_variance, symbol_scale=scale)


def _decision_variables(link: CommLink, params: ChannelParams,
                        hwi: HwiRealization, symbols: np.ndarray) -> np.ndarray:
    """Noise-free decision variables for unit-energy symbol blocks."""
    frame = link.frame_template
    frame.pilots = symbols * link.symbol_scale
    y = tm_mean(params, hwi, frame).reshape(symbols.shape)
    ramp = frame.delay_ramp(params.delay)
    return y / (link.equalizer * ramp[None, :] * link.symbol_scale)


@dataclass
class HwiNoiseSplit:
    """Equivalent-noise decomposition at the decision variable (unit signal)."""

    hwi_power: float
    background_power: float
    hwi_min: float
    hwi_max: float

    @property
    def overall(self) -> float:
        return self.hwi_power + self.background_power

    def snr(self, which: str = "mean") -> float:
        hwi = {"mean": self.hwi_power, "min": self.hwi_min, "max": self.hwi_max}[which]
        return 1.0 / (hwi + self.background_power)


def equivalent_hwi_noise(link: CommLink, params: ChannelParams,
                         hwi: HwiRealization, setup: CommSetup,
                         rng: np.random.Generator) -> HwiNoiseSplit:
    """Split the decision-variable noise into distortion and thermal parts.

    The distortion power is the mean squared deviation of the noise-free
    impaired decision variable from the transmitted symbol; the min/max
    variants condition on the symbol magnitude ring, capturing
    amplitude-dependent effects.
    """
    constellation = qam_constellation(setup.mod_order)
    frame = link.frame_template
    idx = rng.integers(0, len(constellation), size=(frame.n_transmissions,
                                                    frame.cfg.n_subcarriers))
    symbols = constellation[idx]
    z = _decision_variables(link, params, hwi, symbols)
    err2 = np.abs(z - symbols) ** 2
    hwi_power = float(np.mean(err2))

    mags = np.round(np.abs(symbols) ** 2, 9)
    ring_powers = [float(np.mean(err2[mags == m])) for m in np.unique(mags)]
    background = link.noise_variance / (np.abs(link.equalizer) ** 2
                                        * link.symbol_scale ** 2)
    return HwiNoiseSplit(hwi_power=hwi_power, background_power=float(background),
                         hwi_min=min(ring_powers), hwi_max=max(ring_powers))


def wilson_halfwidth(n_errors: int, n_trials: int, z: float = 1.96) -> float:
    if n_trials <= 0:
        return 1.0
    p = n_errors / n_trials
    denom = 1.0 + z * z / n_trials
    return float(z * np.sqrt(p * (1.0 - p) / n_trials
                             + z * z / (4.0 * n_trials ** 2)) / denom)


def ser_monte_carlo(link: CommLink, params: ChannelParams, hwi: HwiRealization,
                    setup: CommSetup, rng: np.random.Generator) -> tuple[float, float]:
    """Empirical symbol error rate with minimum-distance decisions.

    Returns the error-rate estimate and a 95% Wilson-interval halfwidth.
    """
    constellation = qam_constellation(setup.mod_order)
    frame = link.frame_template
    n_slots = frame.n_transmissions * frame.cfg.n_subcarriers
    if n_slots < 1000:
        raise ValueError("need at least 1e3 symbols for a stable estimate")
    idx = rng.integers(0, len(constellation), size=(frame.n_transmissions,
                                                    frame.cfg.n_subcarriers))
    symbols = constellation[idx]
    z = _decision_variables(link, params, hwi, symbols)

    noise_std = np.sqrt(link.noise_variance / 2.0)
    noise = (rng.normal(0.0, noise_std, z.shape)
             + 1j * rng.normal(0.0, noise_std, z.shape))
    ramp = frame.delay_ramp(params.delay)
    z = z + noise / (link.equalizer * ramp[None, :] * link.symbol_scale)

    decided = np.argmin(np.abs(z.reshape(-1, 1) - constellation[None, :]) ** 2, axis=1)
    n_err = int(np.sum(decided != idx.reshape(-1)))
    return n_err / n_slots, wilson_halfwidth(n_err, n_slots)
