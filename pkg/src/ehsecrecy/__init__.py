"""Optimal secrecy policies for an energy-harvesting transmitter with a finite
battery over parallel fading wiretap sub-carriers."""

from .errors import (BracketError, ConfigError, ConvergenceError, DomainError,
                     InfeasibleActionError, OSPError, SingularMatrixError, SizeError)
from .mdp import Policy, SolveReport, solve
from .models import (ArrivalProcess, FadingModel, SystemConfig, calibrate_truncated_geometric,
                     channel_states, enumerate_joint_states, quantize)
from .powersplit import (RewardTable, SplitResult, build_reward_table, split_full_csi,
                         split_partial_csi, split_uniform)
from .reward import RewardKernel, c_total, rate_pair, t_con, t_stat, t_var
from .sim import SimResult, simulate

__version__ = "0.1.0"

__all__ = [
    "ArrivalProcess", "BracketError", "ConfigError", "ConvergenceError", "DomainError",
    "FadingModel", "InfeasibleActionError", "OSPError", "Policy", "RewardKernel", "RewardTable",
    "SimResult", "SingularMatrixError", "SizeError", "SolveReport", "SplitResult",
    "SystemConfig", "build_reward_table", "c_total", "calibrate_truncated_geometric",
    "channel_states", "enumerate_joint_states", "quantize", "rate_pair", "simulate", "solve",
    "split_full_csi", "split_partial_csi", "split_uniform", "t_con", "t_stat", "t_var",
]
