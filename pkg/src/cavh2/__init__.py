"""cavh2: open-system simulator of photon-assisted hydrogen association
and dissociation in coupled optical cavities."""

__version__ = "0.1.0"

from .basis import (
    MODE_NAMES,
    BasisIndex,
    BasisSizeError,
    BasisState,
    ModeSpec,
    StateNotFoundError,
    enumerate_basis,
    index_of,
    reachable_subspace,
    slot_index,
    state_of,
)
from .ops import SparseOperator, photon_op, molecular_transition, atomic_transition, spin_transition, nuclear_op, transition_op
from .model import (
    CouplingSchedule,
    EtaReport,
    ModelParams,
    build_H_A,
    build_H_D,
    build_H_spin,
    build_H_tun,
    build_total,
    couplings_at,
    eta_check,
)
from .ptsim import PtsimConfig, PtsimError, expm_oracle, expm_ptsim, unitarity_residual
from .dynamics import (
    DensityMatrix,
    InvariantBreachError,
    JumpChannel,
    Trajectory,
    dissipative_step,
    dissipator,
    evolve,
    gibbs_state,
    influx,
    lindblad_rhs,
    make_channels,
    mu_temperature,
    unitary_step,
)
from .analysis import (
    classify,
    dark_population,
    dark_state_vectors,
    diagnostics,
    population,
    species_classifier,
    verify_singlet,
)
from .scenarios import (
    Scenario,
    ScenarioError,
    builtin_scenarios,
    parse_config,
    run_scenario,
    scenario_to_config,
    simulate,
    sweep,
    validate,
)
