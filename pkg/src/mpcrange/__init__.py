"""Distance estimation between two nodes from multipath delay differences."""

from .channel import ChannelParams, crlb_sigma, detect, pdp, sinr
from .config import ScenarioConfig, load_config, parse_config
from .est import (
    Estimate,
    Method,
    bias_async,
    bias_sync,
    mle_async,
    mle_sync,
    std_async_analytic,
    std_offset_analytic,
    std_sync_analytic,
    umvue_async,
    umvue_sync,
)
from .geom import Room, trace_paths
from .mle import SolverError, SolverSettings, solve_async_mle, solve_sync_mle
from .obs import ObservationError, ObservationSet, make_rng, sample_unit_sphere, synth_from_scene, synth_statistical

__version__ = "0.1.0"
