"""Max-min uplink rate with a movable-antenna base station."""
from .channel import (ChannelMatrix, UserChannelSpec, channel_matrix, channel_vector,
                      field_response_vector, phase_difference)
from .inner import InnerSolution, bcd_solve, bcd_solve_channels, mmse_combiner
from .pso import PsoParams, PsoResult, pso_solve, violation_set
from .scenario import (ScenarioConfig, ScenarioInstance, SchemeKind, TrialResult, aps_solve,
                       fpa_apv, generate_scenario, monte_carlo, run_trial)

__version__ = "0.1.0"
