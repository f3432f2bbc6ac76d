"""Uplink mmWave OFDM MIMO localization under RF hardware impairments.

Modules: geometry (arrays, rotations, state/channel mapping), impairments
(hardware error models), forward_model (pilot frames and both observation
models), channel_estimation (tensor coarse stage plus refined fit),
state_estimation (multi-link fusion), bounds (information and
misspecification bounds), comm_eval (symbol error rates), harness
(scenarios, sweeps and persistence).
"""

from .geometry import (ArrayLayout, ChannelParams, Pose, StateVector,
                       SPEED_OF_LIGHT, channel_params_from_state,
                       rotation_from_euler, steering_vector)
from .impairments import HwiConfig, HwiRealization, sample_realization
from .forward_model import Observation, OfdmConfig, PilotFrame, add_noise, build_frame, mm_mean, tm_mean
from .channel_estimation import assemble_tensor, coarse_estimate, fine_mmle
from .state_estimation import LinkEstimate, ls_coarse, mmle_state
from .bounds import (crb_channel, crb_state, efim_nonnuisance, fim_channel,
                     lb_channel, mcrb_matrices, pseudo_true_channel,
                     pseudo_true_state_and_alb)
from .comm_eval import CommSetup, ser_analytic, ser_monte_carlo
from .harness import Scenario, default_scenario, derive_rng, load_scenario

__version__ = "0.1.0"
