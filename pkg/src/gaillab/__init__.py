"""Exact-arithmetic laboratory for gradient explosion in tabular GAIL."""

__version__ = "0.1.0"

from gaillab.mdp_core import (
    OccupancyMeasures,
    PolicyTable,
    TabularMdp,
    expand_policy_matrix,
    marginalization_matrix,
    occupancy_measures,
    occupancy_oracle_rollout,
)
from gaillab.policy import GaussianKernelPolicy, policy_table_from_gaussian

__all__ = [
    "OccupancyMeasures",
    "PolicyTable",
    "TabularMdp",
    "GaussianKernelPolicy",
    "expand_policy_matrix",
    "marginalization_matrix",
    "occupancy_measures",
    "occupancy_oracle_rollout",
    "policy_table_from_gaussian",
]
