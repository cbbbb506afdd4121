"""Structured controller tuning by non-smooth bundle optimization.

Closed-loop peak-gain, energy-norm, and pole-region objectives over tunable
controller parameterizations, solved by a proximity-control bundle method,
plus a boundary-controlled wave benchmark with two independent simulators.
"""

from . import errors
from .bundle_opt import BundleOptions, BundleResult, OracleSample
from .controller_structures import (
    Decentralized,
    FirstOrderFilter,
    FixedBlock,
    FullOrder,
    ObserverBased,
    ParamJacobian,
    ParamVector,
    PolynomialScheduled,
    RealizablePid,
    StaticGain,
    StructureSpec,
    assemble,
    init_params,
    jacobian,
    structure_from_json,
    structure_to_json,
)
from .delay_sim import (
    DelayNetwork,
    WaveScenario,
    build_gtilde,
    build_phi,
    network_freq_response,
    recover_controller,
    simulate_network,
    simulate_wave_pde,
    wave_closed_loop_network,
)
from .sensitivity import (
    Subgradient,
    closed_loop_jacobian,
    finite_diff_gradient,
    h2_gradient,
    hinf_subgradients,
    pole_subgradients,
)
from .ss_core import (
    PartitionedPlant,
    Spectrum,
    StateSpace,
    closed_pair,
    compose,
    freq_response,
    lft_lower,
    plant_from_json,
    plant_to_json,
    poles,
    spectral_abscissa,
    ss_from_json,
    ss_to_json,
)
from .synth_program import (
    EvalResult,
    Program,
    Requirement,
    SynthOptions,
    SynthResult,
    evaluate,
    phase0_stabilize,
    program_from_json,
    program_to_json,
    solve,
    two_dof_tracking_program,
)
from .sysnorms import HinfResult, PoleGoal, gramians, h2_norm, hinf_norm, pole_region_violation

__version__ = "0.1.0"
