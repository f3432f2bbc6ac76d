"""RF hardware impairment models: sampling and signal-domain transforms.

Seven impairment families are covered: residual phase noise (PN), residual
carrier frequency offset (CFO), mutual coupling (MC), power-amplifier
nonlinearity (PAN), array gain error (AGE), antenna displacement error (ADE)
and IQ imbalance (IQI).  All except the PAN are drawn as zero-mean random
perturbations whose standard deviations scale with a single severity knob
``hwi_scale``; the PAN is a fixed polynomial/clipping model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

IMPAIRMENT_NAMES = ("pn", "cfo", "mc", "pan", "age", "ade", "iqi")

# Default PA polynomial, clip point and load follow the measured-amplifier
# values used by the simulation defaults (see harness.TABLE_DEFAULTS).
_LINEAR_PA = (1.0 + 0.0j,)


def unitary_dft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.fft.fft(x, axis=axis, norm="ortho")


def unitary_idft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.fft.ifft(x, axis=axis, norm="ortho")


@dataclass(frozen=True)
class HwiConfig:
    """Severity levels of all impairments.

    Angular sigmas are stored in radians (configuration files give degrees).
    ``hwi_scale`` multiplies every standard deviation except the PA model's;
    a scale of exactly zero disables the whole chain including the PA.
    """

    sigma_pn: float = 0.0            # rad
    sigma_cfo: float = 0.0           # dimensionless subcarrier fraction
    sigma_mc: float = 0.0
    pa_coeffs: tuple = _LINEAR_PA    # complex polynomial coefficients b_1..b_Q
    pa_clip: float = np.inf          # V
    load_resistance: float = 50.0    # ohm
    sigma_age_amp: float = 0.0
    sigma_age_phase: float = 0.0     # rad
    sigma_ade: float = 0.0           # m
    sigma_iqi_amp: float = 0.0
    sigma_iqi_phase: float = 0.0     # rad
    hwi_scale: float = 1.0
    tx_pn_cfo_enabled: bool = True

    def __post_init__(self):
        for name in ("sigma_pn", "sigma_cfo", "sigma_mc", "sigma_age_amp",
                     "sigma_age_phase", "sigma_ade", "sigma_iqi_amp",
                     "sigma_iqi_phase", "hwi_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if len(self.pa_coeffs) < 1:
            raise ValueError("PA model needs at least one coefficient")
        if not self.pa_clip > 0:
            raise ValueError("pa_clip must be positive")
        if not self.load_resistance > 0:
            raise ValueError("load_resistance must be positive")

    def masked(self, enabled) -> "HwiConfig":
        """Copy of the config with every impairment outside ``enabled`` turned off.

        ``enabled`` is an iterable over names from :data:`IMPAIRMENT_NAMES`.
        """
        enabled = set(enabled)
        unknown = enabled - set(IMPAIRMENT_NAMES)
        if unknown:
            raise ValueError(f"unknown impairment names: {sorted(unknown)}")
        kw = {}
        if "pn" not in enabled:
            kw["sigma_pn"] = 0.0
        if "cfo" not in enabled:
            kw["sigma_cfo"] = 0.0
        if "mc" not in enabled:
            kw["sigma_mc"] = 0.0
        if "pan" not in enabled:
            kw["pa_coeffs"] = _LINEAR_PA
            kw["pa_clip"] = np.inf
        if "age" not in enabled:
            kw["sigma_age_amp"] = 0.0
            kw["sigma_age_phase"] = 0.0
        if "ade" not in enabled:
            kw["sigma_ade"] = 0.0
        if "iqi" not in enabled:
            kw["sigma_iqi_amp"] = 0.0
            kw["sigma_iqi_phase"] = 0.0
        return replace(self, **kw)

    def effective_sigmas(self) -> dict:
        """Standard deviations after applying the severity scale (PA untouched)."""
        c = self.hwi_scale
        return {
            "pn": c * self.sigma_pn,
            "cfo": c * self.sigma_cfo,
            "mc": c * self.sigma_mc,
            "age_amp": c * self.sigma_age_amp,
            "age_phase": c * self.sigma_age_phase,
            "ade": c * self.sigma_ade,
            "iqi_amp": c * self.sigma_iqi_amp,
            "iqi_phase": c * self.sigma_iqi_phase,
        }


@dataclass
class HwiRealization:
    """One concrete draw of every impairment quantity for a single link."""

    cfo_tx: float
    cfo_rx: float
    pn_tx: np.ndarray          # (G, K) rad
    pn_rx: np.ndarray          # (G, K) rad
    mc_tx: np.ndarray          # (N_U, N_U)
    mc_rx: np.ndarray          # (N_B, N_B)
    age_tx: np.ndarray         # (N_U,) complex
    age_rx: np.ndarray         # (N_B,) complex
    ade_tx: np.ndarray         # 3 x N_U, zero first row
    ade_rx: np.ndarray         # 3 x N_B
    iqi_tx: tuple               # (alpha, beta)
    iqi_rx: tuple
    pa_coeffs: tuple = _LINEAR_PA
    pa_clip: float = np.inf
    load_resistance: float = 50.0

    @classmethod
    def identity(cls, n_tx: int, n_rx: int, n_transmissions: int,
                 n_subcarriers: int) -> "HwiRealization":
        """Fully transparent chain (useful as a baseline in tests)."""
        return cls(
            cfo_tx=0.0, cfo_rx=0.0,
            pn_tx=np.zeros((n_transmissions, n_subcarriers)),
            pn_rx=np.zeros((n_transmissions, n_subcarriers)),
            mc_tx=np.eye(n_tx, dtype=complex),
            mc_rx=np.eye(n_rx, dtype=complex),
            age_tx=np.ones(n_tx, dtype=complex),
            age_rx=np.ones(n_rx, dtype=complex),
            ade_tx=np.zeros((3, n_tx)),
            ade_rx=np.zeros((3, n_rx)),
            iqi_tx=(1.0 + 0.0j, 0.0 + 0.0j),
            iqi_rx=(1.0 + 0.0j, 0.0 + 0.0j),
        )


def _complex_normal(rng, sigma2: float):
    if sigma2 == 0.0:
        return 0.0 + 0.0j
    s = np.sqrt(sigma2 / 2.0)
    return complex(rng.normal(0.0, s) + 1j * rng.normal(0.0, s))


def _iqi_pair(rng, sigma_amp: float, sigma_phase: float):
    m = 1.0 + (rng.normal(0.0, sigma_amp) if sigma_amp > 0 else 0.0)
    psi = rng.normal(0.0, sigma_phase) if sigma_phase > 0 else 0.0
    rot = m * np.exp(1j * psi)
    return 0.5 + 0.5 * rot, 0.5 - 0.5 * rot


def sample_realization(cfg: HwiConfig, n_tx: int, n_rx: int,
                       n_transmissions: int, n_subcarriers: int,
                       rng: np.random.Generator) -> HwiRealization:
    """Draw one realization of every impairment for a link.

    The RNG consumption order is fixed (CFO, PN, MC, AGE, ADE, IQI, each
    transmitter end first) so a given seed always yields the same draw.
    """
    sig = cfg.effective_sigmas()
    if cfg.hwi_scale == 0.0:
        return HwiRealization.identity(n_tx, n_rx, n_transmissions, n_subcarriers)

    def normal(sd, shape=None):
        if sd == 0.0:
            return 0.0 if shape is None else np.zeros(shape)
        return rng.normal(0.0, sd) if shape is None else rng.normal(0.0, sd, shape)

    gk = (n_transmissions, n_subcarriers)
    cfo_tx = float(normal(sig["cfo"])) if cfg.tx_pn_cfo_enabled else 0.0
    cfo_rx = float(normal(sig["cfo"]))
    pn_tx = normal(sig["pn"], gk) if cfg.tx_pn_cfo_enabled else np.zeros(gk)
    pn_rx = normal(sig["pn"], gk)

    mc_tx = mutual_coupling_matrix(_complex_normal(rng, sig["mc"] ** 2),
                                   _complex_normal(rng, sig["mc"] ** 2 / 4.0),
                                   *_grid_dims(n_tx))
    mc_rx = mutual_coupling_matrix(_complex_normal(rng, sig["mc"] ** 2),
                                   _complex_normal(rng, sig["mc"] ** 2 / 4.0),
                                   *_grid_dims(n_rx))

    age_tx = (1.0 + normal(sig["age_amp"], n_tx)) * np.exp(1j * normal(sig["age_phase"], n_tx))
    age_rx = (1.0 + normal(sig["age_amp"], n_rx)) * np.exp(1j * normal(sig["age_phase"], n_rx))

    ade_tx = np.zeros((3, n_tx))
    ade_rx = np.zeros((3, n_rx))
    ade_tx[1:, :] = normal(sig["ade"], (2, n_tx))
    ade_rx[1:, :] = normal(sig["ade"], (2, n_rx))

    iqi_tx = _iqi_pair(rng, sig["iqi_amp"], sig["iqi_phase"])
    iqi_rx = _iqi_pair(rng, sig["iqi_amp"], sig["iqi_phase"])

    return HwiRealization(
        cfo_tx=cfo_tx, cfo_rx=cfo_rx, pn_tx=pn_tx, pn_rx=pn_rx,
        mc_tx=mc_tx, mc_rx=mc_rx, age_tx=age_tx, age_rx=age_rx,
        ade_tx=ade_tx, ade_rx=ade_rx, iqi_tx=iqi_tx, iqi_rx=iqi_rx,
        pa_coeffs=tuple(complex(b) for b in cfg.pa_coeffs),
        pa_clip=float(cfg.pa_clip), load_resistance=float(cfg.load_resistance),
    )


def _grid_dims(n: int) -> tuple[int, int]:
    """Best-effort (n_y, n_z) factorization for standalone sampling; square first."""
    r = int(round(np.sqrt(n)))
    while r > 1 and n % r != 0:
        r -= 1
    return n // r, r


def sample_link_set(cfg: HwiConfig, n_tx: int, n_rx_list, n_transmissions: int,
                    n_subcarriers: int, rng: np.random.Generator,
                    tx_grid=None, rx_grids=None) -> list:
    """Draw realizations for several receiver links sharing one transmitter device.

    Static transmitter-side quantities (MC, AGE, ADE, IQI) are drawn once and
    shared across links; dynamic quantities (PN, CFO) and everything on the
    receiver side are drawn independently per link.
    """
    sig = cfg.effective_sigmas()
    if cfg.hwi_scale == 0.0:
        return [HwiRealization.identity(n_tx, n_rx, n_transmissions, n_subcarriers)
                for n_rx in n_rx_list]

    def normal(sd, shape=None):
        if sd == 0.0:
            return 0.0 if shape is None else np.zeros(shape)
        return rng.normal(0.0, sd) if shape is None else rng.normal(0.0, sd, shape)

    tx_dims = tx_grid if tx_grid is not None else _grid_dims(n_tx)
    mc_tx = mutual_coupling_matrix(_complex_normal(rng, sig["mc"] ** 2),
                                   _complex_normal(rng, sig["mc"] ** 2 / 4.0), *tx_dims)
    age_tx = (1.0 + normal(sig["age_amp"], n_tx)) * np.exp(1j * normal(sig["age_phase"], n_tx))
    ade_tx = np.zeros((3, n_tx))
    ade_tx[1:, :] = normal(sig["ade"], (2, n_tx))
    iqi_tx = _iqi_pair(rng, sig["iqi_amp"], sig["iqi_phase"])

    out = []
    gk = (n_transmissions, n_subcarriers)
    for i, n_rx in enumerate(n_rx_list):
        rx_dims = rx_grids[i] if rx_grids is not None else _grid_dims(n_rx)
        cfo_tx = float(normal(sig["cfo"])) if cfg.tx_pn_cfo_enabled else 0.0
        cfo_rx = float(normal(sig["cfo"]))
        pn_tx = normal(sig["pn"], gk) if cfg.tx_pn_cfo_enabled else np.zeros(gk)
        pn_rx = normal(sig["pn"], gk)
        mc_rx = mutual_coupling_matrix(_complex_normal(rng, sig["mc"] ** 2),
                                       _complex_normal(rng, sig["mc"] ** 2 / 4.0), *rx_dims)
        age_rx = (1.0 + normal(sig["age_amp"], n_rx)) * np.exp(1j * normal(sig["age_phase"], n_rx))
        ade_rx = np.zeros((3, n_rx))
        ade_rx[1:, :] = normal(sig["ade"], (2, n_rx))
        iqi_rx = _iqi_pair(rng, sig["iqi_amp"], sig["iqi_phase"])
        out.append(HwiRealization(
            cfo_tx=cfo_tx, cfo_rx=cfo_rx, pn_tx=pn_tx, pn_rx=pn_rx,
            mc_tx=mc_tx, mc_rx=mc_rx, age_tx=age_tx, age_rx=age_rx,
            ade_tx=ade_tx, ade_rx=ade_rx, iqi_tx=iqi_tx, iqi_rx=iqi_rx,
            pa_coeffs=tuple(complex(b) for b in cfg.pa_coeffs),
            pa_clip=float(cfg.pa_clip), load_resistance=float(cfg.load_resistance)))
    return out


def cfo_matrix_diag(epsilon: float, g: int, n_subcarriers: int, cp_len: int) -> np.ndarray:
    """Diagonal of the CFO rotation for the g-th (0-based) transmission.

    Combines the inter-symbol phase jump exp(j 2 pi eps g (K+K_cp)/K) with the
    intra-symbol progressive rotation across the K time samples.
    """
    if n_subcarriers < 1:
        raise ValueError("need at least one subcarrier")
    k_tot = n_subcarriers + cp_len
    lead = np.exp(1j * 2.0 * np.pi * epsilon * g * k_tot / n_subcarriers)
    ramp = np.exp(1j * 2.0 * np.pi * epsilon * np.arange(n_subcarriers) / n_subcarriers)
    return lead * ramp


def cfo_matrix(epsilon: float, g: int, n_subcarriers: int, cp_len: int) -> np.ndarray:
    """Full K x K diagonal CFO matrix (see :func:`cfo_matrix_diag`)."""
    return np.diag(cfo_matrix_diag(epsilon, g, n_subcarriers, cp_len))


def apply_pn_cfo(freq_signal: np.ndarray, pn_phases: np.ndarray,
                 cfo_diag: np.ndarray) -> np.ndarray:
    """Apply per-sample PN and CFO rotations to a frequency-domain block.

    The block is taken to the time domain with a unitary IDFT, rotated sample
    by sample by exp(j nu_k) and the CFO diagonal, and transformed back.
    """
    y = np.asarray(freq_signal)
    pn_phases = np.asarray(pn_phases)
    cfo_diag = np.asarray(cfo_diag)
    if y.shape[-1] != pn_phases.shape[-1] or y.shape[-1] != cfo_diag.shape[-1]:
        raise ValueError("signal, PN and CFO lengths must match")
    t = unitary_idft(y)
    t = t * np.exp(1j * pn_phases) * cfo_diag
    return unitary_dft(t)


def mutual_coupling_matrix(c_x: complex, c_xy: complex, n_y: int, n_z: int) -> np.ndarray:
    """Nearest-neighbour coupling matrix of an n_y x n_z planar grid.

    Element order is y slow / z fast, matching ArrayLayout.  Neighbours at one
    grid step (half-wavelength) couple with c_x, diagonal neighbours with
    c_xy; the diagonal is fixed at one.  The result is block tridiagonal with
    Toeplitz blocks and symmetric.
    """
    if n_y < 1 or n_z < 1:
        raise ValueError("grid dimensions must be positive")
    inner = np.eye(n_z, dtype=complex)
    idx = np.arange(n_z)
    adj = (np.abs(idx[:, None] - idx[None, :]) == 1).astype(complex)
    c1 = inner + c_x * adj                    # same y column: couple along z
    c2 = c_x * inner + c_xy * adj             # adjacent y columns
    blocks_y = np.arange(n_y)
    same = (blocks_y[:, None] == blocks_y[None, :]).astype(complex)
    near = (np.abs(blocks_y[:, None] - blocks_y[None, :]) == 1).astype(complex)
    return np.kron(same, c1) + np.kron(near, c2)


def pa_transfer(x: np.ndarray, coeffs, clip: float, load_resistance: float) -> np.ndarray:
    """Memoryless polynomial PA with hard magnitude clipping.

    The input is converted to the voltage domain as x / sqrt(R), pushed
    through sum_q b_{q+1} * v * |v|^q (with |v| frozen at the clip point when
    exceeded) and scaled back by sqrt(R).
    """
    if not clip > 0:
        raise ValueError("clip point must be positive")
    x = np.asarray(x, dtype=complex)
    scale = np.sqrt(load_resistance)
    v = x / scale
    mag = np.abs(v)
    eff = np.minimum(mag, clip)
    gain = np.zeros_like(mag, dtype=complex)
    for q, b in enumerate(coeffs):
        gain = gain + b * eff ** q
    # below clip: b v|v|^q == v * gain(|v|); above: (v/|v|) clip^{q+1} == v*(clip/|v|)*gain(clip)
    with np.errstate(invalid="ignore", divide="ignore"):
        shrink = np.where(mag > clip, np.where(mag > 0, clip / mag, 1.0), 1.0)
    return (v * shrink * gain) * scale


def apply_iqi(x: np.ndarray, iqi: tuple) -> np.ndarray:
    """Time-domain IQ imbalance: x -> alpha x + beta conj(x)."""
    alpha, beta = iqi
    x = np.asarray(x, dtype=complex)
    return alpha * x + beta * np.conj(x)
