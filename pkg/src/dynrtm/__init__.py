"""Simulator for runtime management of dynamic DNNs on heterogeneous SoCs.

A weight-sharing super-network is modelled by a search space and synthetic
cost models; per-core Pareto libraries of its sub-networks are the runtime
knob a governor turns alongside DVFS and task mapping.
"""

from .compare import ComparisonTable, default_libraries, run_compare, simulate, write_report
from .errors import (
    ConfigurationError,
    DynRTMError,
    FloorInfeasibleError,
    MissingFileError,
    NotFittedError,
    SchemaError,
    TargetInfeasibleError,
    ValidationError,
)
from .governor import (
    GovernorDecision,
    HierarchicalGovernor,
    MaxPerfGovernor,
    SchedutilGovernor,
    hierarchical_decide,
    make_governor,
    maxperf_decide,
    schedutil_decide,
    select_deploy_subnet,
)
from .pareto import (
    LibraryEntry,
    ParetoFrontFilter,
    SubnetLibrary,
    SubnetLibraryBuilder,
    TradeoffPoint,
    build_library,
    pareto_front,
    switch_cost,
    thin_front,
)
from .scenario import Scenario, bundled_scenario, parse_scenario
from .sim import SimReport, energy_check, run
from .soc import CoreModel, OpPoint, SocModel, core_power, exec_time, load_soc, read_monitors
from .space import (
    ArchConfig,
    CostModelParams,
    SearchSpace,
    accuracy_model,
    flops_proxy,
    latency_at_fmax,
    load_space,
    sample_configs,
)

__version__ = "0.1.0"
