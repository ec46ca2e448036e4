"""Joint time allocation and power control for two-stage NOMA computation offloading."""

from .baselines import SCHEMES, SchemeResult, solve_benchmark, solve_proposed, solve_s_noma, solve_s_oma
from .channel import ChannelRealization, Scenario, channel_from_gains, noise_power, sample_channel, reference_scenario
from .model import Allocation, check_feasibility, max_common_capacity, objective_min_individual
from .sca import SlackPoint, default_init, sca_solve, taylor_terms

__all__ = [
    "Allocation", "ChannelRealization", "SCHEMES", "Scenario", "SchemeResult", "SlackPoint",
    "channel_from_gains", "check_feasibility", "default_init", "max_common_capacity",
    "noise_power", "objective_min_individual", "sample_channel", "sca_solve", "solve_benchmark",
    "solve_proposed", "solve_s_noma", "solve_s_oma", "reference_scenario", "taylor_terms",
]
