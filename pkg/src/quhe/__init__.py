"""Joint allocation of QKD key rates, CKKS polynomial degrees and edge resources.

Typical use::

    from quhe import surfnet_default, run_quhe
    result = run_quhe(surfnet_default())
    result.state.phi, result.objective
"""

from .costs import ClientProfile, CostBreakdown, FheParamSet, ServerProfile
from .objective import (AllocationState, ObjectiveWeights, check_feasibility,
                        objective_terms, p1_objective)
from .orchestrator import (RobustnessSummary, SolverTrace, run_baseline, run_quhe,
                           sample_robustness, stage1_alternatives)
from .qkd import Link, Route, Topology, secret_key_fraction
from .scenario import (ChannelModel, Scenario, ScenarioError, load_scenario,
                       realize_channels, surfnet_default)
from .settings import SolveSettings
from .stage1 import solve_stage1
from .stage2 import exhaustive_stage2, solve_stage2
from .stage3 import solve_stage3, surrogate_tr_energy, update_z

__all__ = [
    "AllocationState", "ChannelModel", "ClientProfile", "CostBreakdown", "FheParamSet",
    "Link", "ObjectiveWeights", "RobustnessSummary", "Route", "Scenario", "ScenarioError",
    "ServerProfile", "SolveSettings", "SolverTrace", "Topology", "check_feasibility",
    "exhaustive_stage2", "load_scenario", "objective_terms", "p1_objective",
    "realize_channels", "run_baseline", "run_quhe", "sample_robustness",
    "secret_key_fraction", "solve_stage1", "solve_stage2", "solve_stage3",
    "stage1_alternatives", "surfnet_default", "surrogate_tr_energy", "update_z",
]
