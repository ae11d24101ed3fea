"""Ground-truth BIR simulator: stochastic ray tracing with a spherical-head binauralizer."""

from .config import HeadModel, SimConfig, config_hash
from .sampling import (SamplingError, gen_dataset, grid_positions, pair_seed,
                       split_sources_listeners)
from .synthesis import simulate_pair, synthesize_bir
from .tracer import (Arrival, DirectPath, EnergyHistogram, PreparedScene, TraceError,
                     arrivals, binauralize, trace, woodworth_itd)

__all__ = [
    "Arrival", "DirectPath", "EnergyHistogram", "HeadModel", "PreparedScene", "SamplingError",
    "SimConfig", "TraceError", "arrivals", "binauralize", "config_hash", "gen_dataset",
    "grid_positions", "pair_seed", "simulate_pair", "split_sources_listeners",
    "synthesize_bir", "trace", "woodworth_itd",
]
