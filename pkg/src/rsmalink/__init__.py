"""Link-level simulation of 1-layer rate splitting in the MISO broadcast channel."""

from .csit import CsitConfig, conditional_draws, draw_block, error_variance
from .model import (
    ChannelSet,
    DimensionError,
    PrecoderSet,
    RateReport,
    averaged_rate_report,
    rate_report,
    received_sample,
    sinr_common,
    sinr_private,
    transmit_signal,
)
from .optimizer import (
    OptimizerSettings,
    Strategy,
    StrategyTag,
    dof_slope,
    noma_rates,
    optimize,
    optimize_all,
    sum_rate_objective,
)
from .sweep import ConfigError, ExperimentConfig, SweepResult, estimate_dof, load_config, run_sweep

__version__ = "0.1.0"
