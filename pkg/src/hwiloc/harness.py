"""Scenario configuration, seeded experiment orchestration and result persistence.

A scenario bundles the world geometry, waveform/noise configuration,
impairment levels and an experiment plan (power grid, severity grid,
impairment mask, realization count, master seed).  Sweeps emit flat result
rows; every random draw comes from a stream derived from the master seed, a
stage tag and a realization index, so a run is reproducible byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from . import bounds as bd
from . import comm_eval as ce
from .channel_estimation import NoDetectionError, assemble_tensor, coarse_estimate, fine_mmle
from .forward_model import OfdmConfig, PilotFrame, add_noise, build_frame, tm_mean
from .geometry import (SPEED_OF_LIGHT, ArrayLayout, ChannelParams, Pose,
                       StateVector, channel_params_from_state, rotation_from_euler,
                       wrap_angle)
from .impairments import IMPAIRMENT_NAMES, HwiConfig, sample_link_set
from .state_estimation import (LinkEstimate, SingularGeometryError, ls_coarse,
                               mmle_state)


class ConfigError(ValueError):
    """Scenario file failed validation; the message names the offending field."""


CSV_COLUMNS = ("scenario_id", "power_dbm", "c_hwi", "mask", "realization",
               "metric", "value", "unit")

TABLE_DEFAULTS: dict = {
    "scenario_id": "default",
    "geometry": {
        "bs": [
            {"position": [0.0, 0.0, 3.0], "orientation_deg": [0.0, 15.0, 0.0]},
            {"position": [0.0, 10.0, 3.0], "orientation_deg": [-30.0, 15.0, 0.0]},
        ],
        "ue": {"position": [8.0, 4.0, 0.0], "orientation_deg": [180.0, 0.0, 0.0],
               "clock_offset_s": 0.0},
    },
    "arrays": {
        "bs": [[8, 8], [8, 8]],       # [n_z, n_y] per BS
        "ue": [4, 4],
        "spacing_wavelengths": 0.5,
    },
    "ofdm": {
        "f_c_hz": 60.0e9,
        "subcarrier_spacing_hz": 240.0e3,
        "n_subcarriers": 100,
        "cp_len": None,
        "noise_psd_dbm_hz": -173.855,
        "noise_figure_db": 10.0,
        "tx_power_dbm": 0.0,
        "waveform": "ofdm",
        "noise_bandwidth_hz": None,
    },
    "hwi": {
        "sigma_pn_deg": 2.0,
        "sigma_cfo": 2.0e-4,
        "sigma_mc": 0.001,
        "pa_coeffs": [[0.9798, 0.0286], [0.0122, -0.0043], [-0.0007, 0.0001]],
        "pa_clip_v": 1.0,
        "load_resistance_ohm": 50.0,
        "sigma_age_amp": 0.002,
        "sigma_age_phase": 0.002,
        "sigma_ade_m": 5.0e-6,
        "sigma_iqi_amp": 0.02,
        "sigma_iqi_phase": 0.02,
        "hwi_scale": 1.0,
        "tx_pn_cfo_enabled": True,
    },
    "frame": {
        "m_beams": [4, 4, 3, 3],
        "delta_omega": 0.15,
        "prior_error": 0.05,
        "sweep_order": "bs-first",
    },
    "experiment": {
        "powers_dbm": [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0,
                       25.0, 30.0, 35.0],
        "c_hwi_grid": [1.0],
        "n_realizations": 100,
        "n_trials": 200,
        "mask": "all",
        "master_seed": 0,
        "ser_n_ofdm_symbols": 200,
        "ser_n_realizations": 10,
    },
    "sync_mode": "bs-sync",
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key: {here}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, here)
        else:
            out[key] = val
    return out


def parse_mask(mask) -> tuple:
    """Normalize a mask spec ('all', 'none', list or comma string) to a tuple."""
    if isinstance(mask, str):
        low = mask.strip().lower()
        if low == "all":
            return tuple(IMPAIRMENT_NAMES)
        if low in ("none", ""):
            return ()
        parts = [p.strip().lower() for p in low.split(",") if p.strip()]
    else:
        parts = [str(p).strip().lower() for p in mask]
    unknown = set(parts) - set(IMPAIRMENT_NAMES)
    if unknown:
        raise ConfigError(f"experiment.mask: unknown impairments {sorted(unknown)}")
    return tuple(p for p in IMPAIRMENT_NAMES if p in parts)


@dataclass
class Scenario:
    """Fully resolved experiment description."""

    scenario_id: str
    bs_poses: list
    bs_layouts: list
    ue_layout: ArrayLayout
    state_true: StateVector
    ofdm: OfdmConfig
    hwi: HwiConfig
    beam_counts: tuple
    grid_step: float
    prior_error: float
    sweep_order: str
    powers_dbm: list
    c_hwi_grid: list
    n_realizations: int
    n_trials: int
    mask: tuple
    master_seed: int
    sync_mode: str
    ser_n_ofdm_symbols: int
    ser_n_realizations: int
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def n_links(self) -> int:
        return len(self.bs_poses)

    @property
    def use_delays(self) -> bool:
        return self.sync_mode == "bs-sync"

    def masked_hwi(self, c_hwi: float | None = None) -> HwiConfig:
        cfg = self.hwi.masked(self.mask)
        if c_hwi is not None:
            cfg = replace(cfg, hwi_scale=c_hwi)
        return cfg


def _require(cond: bool, field_name: str, message: str):
    if not cond:
        raise ConfigError(f"{field_name}: {message}")


def scenario_from_dict(data: dict) -> Scenario:
    cfg = _merge(TABLE_DEFAULTS, data or {})

    geo = cfg["geometry"]
    arr = cfg["arrays"]
    _require(len(geo["bs"]) >= 1, "geometry.bs", "need at least one base station")
    _require(len(arr["bs"]) == len(geo["bs"]), "arrays.bs",
             "need one array spec per base station")

    ofdm_raw = cfg["ofdm"]
    _require(ofdm_raw["subcarrier_spacing_hz"] > 0, "ofdm.subcarrier_spacing_hz",
             "must be positive")
    _require(int(ofdm_raw["n_subcarriers"]) >= 1, "ofdm.n_subcarriers", "must be >= 1")

    frame_raw = cfg["frame"]
    m_beams = tuple(int(m) for m in frame_raw["m_beams"])
    _require(len(m_beams) == 4 and all(m >= 1 for m in m_beams),
             "frame.m_beams", "need four beam counts >= 1")
    _require(frame_raw["sweep_order"] in ("bs-first", "ue-first"),
             "frame.sweep_order", "must be 'bs-first' or 'ue-first'")

    hwi_raw = cfg["hwi"]
    for key in ("sigma_pn_deg", "sigma_cfo", "sigma_mc", "sigma_age_amp",
                "sigma_age_phase", "sigma_ade_m", "sigma_iqi_amp",
                "sigma_iqi_phase", "hwi_scale"):
        _require(float(hwi_raw[key]) >= 0.0, f"hwi.{key}", "must be nonnegative")
    _require(float(hwi_raw["pa_clip_v"]) > 0.0, "hwi.pa_clip_v", "must be positive")
    _require(float(hwi_raw["load_resistance_ohm"]) > 0.0,
             "hwi.load_resistance_ohm", "must be positive")

    exp = cfg["experiment"]
    _require(len(exp["powers_dbm"]) >= 1, "experiment.powers_dbm", "must be nonempty")
    _require(int(exp["n_realizations"]) >= 1, "experiment.n_realizations", "must be >= 1")
    _require(cfg["sync_mode"] in ("bs-sync", "bs-async"), "sync_mode",
             "must be 'bs-sync' or 'bs-async'")
    mask = parse_mask(exp["mask"])

    f_c = float(ofdm_raw["f_c_hz"])
    wavelength = SPEED_OF_LIGHT / f_c
    spacing = float(arr["spacing_wavelengths"]) * wavelength

    bs_poses = [Pose.from_euler(b["position"], b["orientation_deg"]) for b in geo["bs"]]
    bs_layouts = [ArrayLayout.upa(int(nz), int(ny), spacing) for nz, ny in arr["bs"]]
    ue_layout = ArrayLayout.upa(int(arr["ue"][0]), int(arr["ue"][1]), spacing)
    state_true = StateVector(position=np.asarray(geo["ue"]["position"], dtype=float),
                             clock_offset=float(geo["ue"]["clock_offset_s"]),
                             rotation=rotation_from_euler(geo["ue"]["orientation_deg"]))

    ofdm = OfdmConfig(
        f_c=f_c,
        delta_f=float(ofdm_raw["subcarrier_spacing_hz"]),
        n_subcarriers=int(ofdm_raw["n_subcarriers"]),
        n_transmissions=int(np.prod(m_beams)),
        cp_len=None if ofdm_raw["cp_len"] is None else int(ofdm_raw["cp_len"]),
        noise_psd_dbm_hz=float(ofdm_raw["noise_psd_dbm_hz"]),
        noise_figure_db=float(ofdm_raw["noise_figure_db"]),
        tx_power_dbm=float(ofdm_raw["tx_power_dbm"]),
        waveform=str(ofdm_raw["waveform"]),
        noise_bandwidth_hz=(None if ofdm_raw["noise_bandwidth_hz"] is None
                            else float(ofdm_raw["noise_bandwidth_hz"])),
    )
    pa_coeffs = tuple(complex(float(re), float(im)) for re, im in hwi_raw["pa_coeffs"])
    hwi = HwiConfig(
        sigma_pn=np.deg2rad(float(hwi_raw["sigma_pn_deg"])),
        sigma_cfo=float(hwi_raw["sigma_cfo"]),
        sigma_mc=float(hwi_raw["sigma_mc"]),
        pa_coeffs=pa_coeffs,
        pa_clip=float(hwi_raw["pa_clip_v"]),
        load_resistance=float(hwi_raw["load_resistance_ohm"]),
        sigma_age_amp=float(hwi_raw["sigma_age_amp"]),
        sigma_age_phase=float(hwi_raw["sigma_age_phase"]),
        sigma_ade=float(hwi_raw["sigma_ade_m"]),
        sigma_iqi_amp=float(hwi_raw["sigma_iqi_amp"]),
        sigma_iqi_phase=float(hwi_raw["sigma_iqi_phase"]),
        hwi_scale=float(hwi_raw["hwi_scale"]),
        tx_pn_cfo_enabled=bool(hwi_raw["tx_pn_cfo_enabled"]),
    )
    return Scenario(
        scenario_id=str(cfg["scenario_id"]),
        bs_poses=bs_poses, bs_layouts=bs_layouts, ue_layout=ue_layout,
        state_true=state_true, ofdm=ofdm, hwi=hwi,
        beam_counts=m_beams, grid_step=float(frame_raw["delta_omega"]),
        prior_error=float(frame_raw["prior_error"]),
        sweep_order=str(frame_raw["sweep_order"]),
        powers_dbm=[float(p) for p in exp["powers_dbm"]],
        c_hwi_grid=[float(c) for c in exp["c_hwi_grid"]],
        n_realizations=int(exp["n_realizations"]),
        n_trials=int(exp["n_trials"]),
        mask=mask, master_seed=int(exp["master_seed"]),
        sync_mode=str(cfg["sync_mode"]),
        ser_n_ofdm_symbols=int(exp["ser_n_ofdm_symbols"]),
        ser_n_realizations=int(exp["ser_n_realizations"]),
        raw=cfg,
    )


def load_scenario(path) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"scenario file is not valid YAML: {exc}")
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("scenario file must contain a mapping")
    return scenario_from_dict(data)


def default_scenario(**overrides) -> Scenario:
    return scenario_from_dict(overrides)


def derive_rng(master_seed: int, stage: str, index: int = 0) -> np.random.Generator:
    """Independent, deterministic RNG stream for (seed, stage tag, index)."""
    digest = hashlib.blake2b(f"{master_seed}|{stage}|{index}".encode(),
                             digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


# ---------------------------------------------------------------------------
# link construction


def link_gain_phase(scenario: Scenario, link: int) -> float:
    rng = derive_rng(scenario.master_seed, "gain-phase", link)
    return float(rng.uniform(0.0, 2.0 * np.pi))


def link_true_params(scenario: Scenario, link: int) -> ChannelParams:
    return channel_params_from_state(scenario.state_true, scenario.bs_poses[link],
                                     scenario.ofdm.f_c,
                                     gain_phase=link_gain_phase(scenario, link))


def build_link_frame(scenario: Scenario, link: int,
                     power_dbm: float | None = None,
                     sweep_order: str | None = None) -> PilotFrame:
    """Pilot frame of one link; pilot phases depend only on the master seed."""
    cfg = scenario.ofdm
    if power_dbm is not None:
        cfg = replace(cfg, tx_power_dbm=power_dbm)
    rng = derive_rng(scenario.master_seed, "pilots", link)
    return build_frame(cfg, scenario.bs_layouts[link], scenario.ue_layout,
                       link_true_params(scenario, link), scenario.beam_counts,
                       scenario.grid_step, scenario.prior_error, rng,
                       sweep_order or scenario.sweep_order)


def draw_link_hwis(scenario: Scenario, c_hwi: float, realization: int,
                   stage: str = "hwi", n_transmissions: int | None = None):
    """One impairment draw per link, transmitter statics shared."""
    cfg = scenario.masked_hwi(c_hwi)
    rng = derive_rng(scenario.master_seed, f"{stage}/c{c_hwi:g}", realization)
    g = n_transmissions if n_transmissions is not None else scenario.ofdm.n_transmissions
    return sample_link_set(
        cfg, scenario.ue_layout.n_elements,
        [lay.n_elements for lay in scenario.bs_layouts],
        g, scenario.ofdm.n_subcarriers, rng,
        tx_grid=(scenario.ue_layout.n_y, scenario.ue_layout.n_z),
        rx_grids=[(lay.n_y, lay.n_z) for lay in scenario.bs_layouts])


def _row(scenario_id, power, c_hwi, mask, realization, metric, value, unit) -> dict:
    return {"scenario_id": scenario_id, "power_dbm": power, "c_hwi": c_hwi,
            "mask": mask, "realization": realization, "metric": metric,
            "value": value, "unit": unit}


def mask_label(mask: tuple) -> str:
    if tuple(mask) == tuple(IMPAIRMENT_NAMES):
        return "all"
    return ",".join(mask) if mask else "none"


# ---------------------------------------------------------------------------
# bounds sweep


def bounds_rows_for_realization(scenario: Scenario, c_hwi: float,
                                realization: int) -> list[dict]:
    """CRB, LB and ALB rows for one impairment draw across the power grid.

    The pseudo-true projections (and hence the bias floors) are computed once
    at the scenario's reference power; the information-dependent parts are
    re-evaluated at each grid power.
    """
    rows: list[dict] = []
    label = mask_label(scenario.mask)
    sid = scenario.scenario_id
    use_delays = scenario.use_delays
    hwis = draw_link_hwis(scenario, c_hwi, realization)
    params = [link_true_params(scenario, li) for li in range(scenario.n_links)]
    frames_ref = [build_link_frame(scenario, li) for li in range(scenario.n_links)]

    pseudo = []
    for li in range(scenario.n_links):
        pt = bd.pseudo_true_channel(params[li], hwis[li], frames_ref[li])
        pseudo.append(pt)
        if not pt.converged:
            rows.append(_row(sid, scenario.ofdm.tx_power_dbm, c_hwi, label,
                             realization, f"pseudo_true_failed_l{li + 1}", 1.0, "flag"))

    fims_ref = [bd.fim_channel(params[li], frames_ref[li])
                for li in range(scenario.n_links)]
    weights_ref = [bd.efim_to_range_units(bd.efim_nonnuisance(f)) for f in fims_ref]
    alb = bd.pseudo_true_state_and_alb([pt.params for pt in pseudo], weights_ref,
                                       scenario.state_true, scenario.bs_poses,
                                       use_delays=use_delays)

    for power in scenario.powers_dbm:
        frames = [build_link_frame(scenario, li, power_dbm=power)
                  for li in range(scenario.n_links)]
        weights = []
        for li in range(scenario.n_links):
            try:
                fim = bd.fim_channel(params[li], frames[li])
                crb = bd.crb_channel(fim)
                a, b = bd.mcrb_matrices(pseudo[li].params, params[li], hwis[li],
                                        frames[li])
                lb = bd.lb_channel(a, b, pseudo[li].params, params[li])
            except (SingularGeometryError, np.linalg.LinAlgError):
                rows.append(_row(sid, power, c_hwi, label, realization,
                                 f"bound_failed_l{li + 1}", 1.0, "flag"))
                weights.append(None)
                continue
            weights.append(bd.efim_to_range_units(bd.efim_nonnuisance(fim)))
            tag = f"_l{li + 1}"
            rows.extend([
                _row(sid, power, c_hwi, label, realization, "aaeb" + tag, crb.aaeb, "rad"),
                _row(sid, power, c_hwi, label, realization, "adeb" + tag, crb.adeb, "rad"),
                _row(sid, power, c_hwi, label, realization, "deb" + tag, crb.deb_m, "m"),
                _row(sid, power, c_hwi, label, realization, "aalb" + tag, lb.aalb, "rad"),
                _row(sid, power, c_hwi, label, realization, "adlb" + tag, lb.adlb, "rad"),
                _row(sid, power, c_hwi, label, realization, "dlb" + tag, lb.dlb_m, "m"),
            ])
        if any(w is None for w in weights):
            continue
        try:
            crb_s = bd.crb_state(weights, scenario.state_true, scenario.bs_poses,
                                 use_delays=use_delays)
        except SingularGeometryError:
            rows.append(_row(sid, power, c_hwi, label, realization,
                             "state_bound_failed", 1.0, "flag"))
            continue
        rows.extend([
            _row(sid, power, c_hwi, label, realization, "peb", crb_s.peb, "m"),
            _row(sid, power, c_hwi, label, realization, "ceb", crb_s.ceb, "m"),
            _row(sid, power, c_hwi, label, realization, "oeb", crb_s.oeb, "frob"),
            _row(sid, power, c_hwi, label, realization, "palb", alb.palb, "m"),
            _row(sid, power, c_hwi, label, realization, "oalb", alb.oalb, "frob"),
            _row(sid, power, c_hwi, label, realization, "calb", alb.calb, "m"),
        ])
    return rows


def _bounds_cell(args) -> list[dict]:
    scenario, c_hwi, realization = args
    return bounds_rows_for_realization(scenario, c_hwi, realization)


def run_bounds_sweep(scenario: Scenario, n_workers: int = 1) -> list[dict]:
    cells = [(scenario, c, r) for c in scenario.c_hwi_grid
             for r in range(scenario.n_realizations)]
    results = _pmap(_bounds_cell, cells, n_workers)
    rows: list[dict] = []
    for cell_rows in results:
        rows.extend(cell_rows)
    rows.extend(_percentile_rows(scenario, rows, 75.0))
    return rows


def _percentile_rows(scenario: Scenario, rows: list[dict], q: float) -> list[dict]:
    """Aggregate per-(power, c_hwi, metric) percentiles over realizations."""
    groups: dict = {}
    for row in rows:
        if row["realization"] < 0 or row["unit"] == "flag":
            continue
        key = (row["power_dbm"], row["c_hwi"], row["mask"], row["metric"])
        groups.setdefault(key, []).append(row["value"])
    out = []
    for (power, c_hwi, mask, metric), values in sorted(groups.items()):
        finite = [v for v in values if math.isfinite(v)]
        if not finite:
            continue
        out.append(_row(scenario.scenario_id, power, c_hwi, mask, -1,
                        f"{metric}_p{int(q)}", float(np.percentile(finite, q)),
                        "aggregate"))
    return out


# ---------------------------------------------------------------------------
# estimator sweep


def estimate_once(scenario: Scenario, hwis, power_dbm: float,
                  noise_rng: np.random.Generator):
    """One end-to-end estimation trial; returns (link results, state result)."""
    link_results = []
    estimates = []
    for li in range(scenario.n_links):
        frame = build_link_frame(scenario, li, power_dbm=power_dbm)
        truth = link_true_params(scenario, li)
        mean = tm_mean(truth, hwis[li], frame)
        obs = add_noise(mean, frame, noise_rng)
        tensor = assemble_tensor(obs, frame)
        coarse, _ = coarse_estimate(tensor, frame)
        fine = fine_mmle(obs, coarse, frame)
        fim = bd.fim_channel(fine.params, frame)
        weight = bd.efim_to_range_units(bd.efim_nonnuisance(fim))
        estimates.append(LinkEstimate(params=fine.params, weight=weight))
        link_results.append((truth, fine))
    init = ls_coarse(estimates, scenario.bs_poses, use_delays=scenario.use_delays)
    state = mmle_state(estimates, init, scenario.bs_poses,
                       use_delays=scenario.use_delays)
    return link_results, state


def _trial_error_rows(scenario: Scenario, power: float, trial: int,
                      link_results, state_result) -> list[dict]:
    rows = []
    sid = scenario.scenario_id
    label = mask_label(scenario.mask)
    c_hwi = scenario.hwi.hwi_scale
    for li, (truth, fine) in enumerate(link_results):
        tag = f"_l{li + 1}"
        p, t = fine.params, truth
        err_aoa = np.hypot(wrap_angle(p.aoa_az - t.aoa_az), wrap_angle(p.aoa_el - t.aoa_el))
        err_aod = np.hypot(wrap_angle(p.aod_az - t.aod_az), wrap_angle(p.aod_el - t.aod_el))
        err_delay = abs(p.delay - t.delay) * SPEED_OF_LIGHT
        rows.extend([
            _row(sid, power, c_hwi, label, trial, "err_aoa" + tag, float(err_aoa), "rad"),
            _row(sid, power, c_hwi, label, trial, "err_aod" + tag, float(err_aod), "rad"),
            _row(sid, power, c_hwi, label, trial, "err_delay" + tag, float(err_delay), "m"),
        ])
    st = state_result.state
    truth_state = scenario.state_true
    rows.append(_row(sid, power, c_hwi, label, trial, "err_pos",
                     float(np.linalg.norm(st.position - truth_state.position)), "m"))
    rows.append(_row(sid, power, c_hwi, label, trial, "err_ori",
                     float(np.linalg.norm(st.rotation - truth_state.rotation, "fro")),
                     "frob"))
    if scenario.use_delays:
        rows.append(_row(sid, power, c_hwi, label, trial, "err_clock",
                         float(SPEED_OF_LIGHT * abs(st.clock_offset
                                                    - truth_state.clock_offset)), "m"))
    return rows


def _estimator_cell(args) -> list[dict]:
    scenario, power, trial = args
    hwis = draw_link_hwis(scenario, scenario.hwi.hwi_scale, 0, stage="est-hwi")
    rng = derive_rng(scenario.master_seed, f"est-noise/p{power:g}", trial)
    try:
        link_results, state_result = estimate_once(scenario, hwis, power, rng)
    except (NoDetectionError, SingularGeometryError, np.linalg.LinAlgError):
        return [_row(scenario.scenario_id, power, scenario.hwi.hwi_scale,
                     mask_label(scenario.mask), trial, "estimator_failure", 1.0, "flag")]
    return _trial_error_rows(scenario, power, trial, link_results, state_result)


def run_estimator_sweep(scenario: Scenario, n_workers: int = 1) -> list[dict]:
    cells = [(scenario, p, t) for p in scenario.powers_dbm
             for t in range(scenario.n_trials)]
    results = _pmap(_estimator_cell, cells, n_workers)
    rows: list[dict] = []
    for cell_rows in results:
        rows.extend(cell_rows)
    rows.extend(_rmse_rows(scenario, rows))
    rows.extend(_estimator_bound_rows(scenario))
    return rows


def _rmse_rows(scenario: Scenario, rows: list[dict]) -> list[dict]:
    groups: dict = {}
    failures: dict = {}
    for row in rows:
        if row["metric"] == "estimator_failure":
            failures[row["power_dbm"]] = failures.get(row["power_dbm"], 0) + 1
            continue
        key = (row["power_dbm"], row["metric"], row["unit"])
        groups.setdefault(key, []).append(row["value"])
    out = []
    label = mask_label(scenario.mask)
    for (power, metric, unit), values in sorted(groups.items()):
        rmse = float(np.sqrt(np.mean(np.square(values))))
        out.append(_row(scenario.scenario_id, power, scenario.hwi.hwi_scale, label,
                        -1, metric.replace("err_", "rmse_"), rmse, unit))
    for power, count in sorted(failures.items()):
        out.append(_row(scenario.scenario_id, power, scenario.hwi.hwi_scale, label,
                        -1, "excluded_trials", float(count), "count"))
    return out


def _estimator_bound_rows(scenario: Scenario) -> list[dict]:
    """Clean-model bounds matching the estimator sweep's operating points."""
    rows = []
    label = mask_label(scenario.mask)
    sid = scenario.scenario_id
    c_hwi = scenario.hwi.hwi_scale
    params = [link_true_params(scenario, li) for li in range(scenario.n_links)]
    for power in scenario.powers_dbm:
        weights = []
        for li in range(scenario.n_links):
            frame = build_link_frame(scenario, li, power_dbm=power)
            fim = bd.fim_channel(params[li], frame)
            crb = bd.crb_channel(fim)
            weights.append(bd.efim_to_range_units(bd.efim_nonnuisance(fim)))
            tag = f"_l{li + 1}"
            rows.extend([
                _row(sid, power, c_hwi, label, -1, "aaeb" + tag, crb.aaeb, "rad"),
                _row(sid, power, c_hwi, label, -1, "adeb" + tag, crb.adeb, "rad"),
                _row(sid, power, c_hwi, label, -1, "deb" + tag, crb.deb_m, "m"),
            ])
        try:
            crb_s = bd.crb_state(weights, scenario.state_true, scenario.bs_poses,
                                 use_delays=scenario.use_delays)
            rows.append(_row(sid, power, c_hwi, label, -1, "peb", crb_s.peb, "m"))
            rows.append(_row(sid, power, c_hwi, label, -1, "ceb", crb_s.ceb, "m"))
            rows.append(_row(sid, power, c_hwi, label, -1, "oeb", crb_s.oeb, "frob"))
        except SingularGeometryError:
            rows.append(_row(sid, power, c_hwi, label, -1, "state_bound_failed",
                             1.0, "flag"))
    return rows


# ---------------------------------------------------------------------------
# SER sweep


def _ser_cell(args) -> list[dict]:
    scenario, c_hwi, realization = args
    sid = scenario.scenario_id
    label = mask_label(scenario.mask)
    setup = ce.CommSetup(mod_order=16, n_symbols=scenario.ser_n_ofdm_symbols)
    hwis = draw_link_hwis(scenario, c_hwi, realization, stage="ser-hwi",
                          n_transmissions=setup.n_symbols)
    truth = link_true_params(scenario, 0)
    rows = []
    for power in scenario.powers_dbm:
        cfg = replace(scenario.ofdm, tx_power_dbm=power)
        link = ce.build_comm_link(truth, hwis[0], cfg, scenario.bs_layouts[0],
                                  scenario.ue_layout, setup.n_symbols)
        rng = derive_rng(scenario.master_seed, f"ser/c{c_hwi:g}/p{power:g}", realization)
        split = ce.equivalent_hwi_noise(link, truth, hwis[0], setup, rng)
        ser_mc, halfwidth = ce.ser_monte_carlo(link, truth, hwis[0], setup, rng)
        rows.extend([
            _row(sid, power, c_hwi, label, realization, "ser_mc", ser_mc, "prob"),
            _row(sid, power, c_hwi, label, realization, "ser_mc_halfwidth",
                 halfwidth, "prob"),
            _row(sid, power, c_hwi, label, realization, "ser_analytic",
                 ce.ser_analytic(setup.mod_order, split.snr("mean")), "prob"),
            _row(sid, power, c_hwi, label, realization, "ser_analytic_min",
                 ce.ser_analytic(setup.mod_order, split.snr("min")), "prob"),
            _row(sid, power, c_hwi, label, realization, "ser_analytic_max",
                 ce.ser_analytic(setup.mod_order, split.snr("max")), "prob"),
            _row(sid, power, c_hwi, label, realization, "hwi_noise_power",
                 split.hwi_power, "1"),
            _row(sid, power, c_hwi, label, realization, "background_noise_power",
                 split.background_power, "1"),
        ])
    return rows


def run_ser_sweep(scenario: Scenario, n_workers: int = 1) -> list[dict]:
    cells = [(scenario, c, r) for c in scenario.c_hwi_grid
             for r in range(scenario.ser_n_realizations)]
    results = _pmap(_ser_cell, cells, n_workers)
    rows: list[dict] = []
    for cell_rows in results:
        rows.extend(cell_rows)
    return rows


# ---------------------------------------------------------------------------
# execution and persistence


def _pmap(fn, items, n_workers: int):
    if n_workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, items))


def _scenario_json(scenario: Scenario) -> dict:
    return {"scenario": scenario.raw, "resolved_mask": list(scenario.mask),
            "master_seed": scenario.master_seed,
            "noise_variance_w": scenario.ofdm.noise_variance,
            "noise_bandwidth_hz": (scenario.ofdm.noise_bandwidth_hz
                                   or scenario.ofdm.n_subcarriers
                                   * scenario.ofdm.delta_f)}


def write_rows(rows: list[dict], csv_path, scenario: Scenario | None = None):
    """Write result rows as CSV plus a JSON sidecar of the resolved config."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([
                row["scenario_id"], f"{row['power_dbm']:.6g}", f"{row['c_hwi']:.6g}",
                row["mask"], row["realization"], row["metric"],
                f"{row['value']:.12g}", row["unit"]])
    if scenario is not None:
        sidecar = str(csv_path) + ".config.json"
        with open(sidecar, "w", encoding="utf-8") as fh:
            json.dump(_scenario_json(scenario), fh, indent=2, sort_keys=True)
