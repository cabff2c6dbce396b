"""Completely positive quantum trajectories for small open systems.

Second-order Kraus-map stepping for jump and homodyne unravellings, plus
quantum state filtering, retrofiltering and smoothing, and a CLI that
reproduces the driven-damped two-level-atom experiments at desk scale.
"""

from .channels import (
    DiffusiveChannel,
    GaussianSufficiencyReport,
    JumpChannel,
    OutcomeMoments,
    SchemeOrder,
    actual_diffusive_moments,
    actual_jump_prob,
    completeness_residual,
    diffusive_op,
    gaussian_sufficiency_check,
    jump_ops,
    ostensible_jump_prob,
    quadrature_outcome_moments,
)
from .engine import (
    ChannelAssignment,
    MeasurementRecord,
    SystemSpec,
    Trajectory,
    run_trajectory,
    run_true_ensemble,
    substream,
    unconditioned_step,
)
from .estimation import (
    EffectTrajectory,
    FilteredTrajectory,
    HypotheticalEnsemble,
    SmoothedTrajectory,
    build_hypothetical_ensemble,
    effect_consistency,
    filter_consistency,
    filter_record,
    n_eff,
    retrofilter,
    smooth,
)
from .operators import (
    BlochVector,
    bloch,
    dissipator,
    fidelity_to_pure,
    liouvillian_propagate,
    normalize,
    purity,
    superop_g,
    superop_h,
    unitary_of_hamiltonian,
)

__version__ = "0.1.0"

__all__ = [
    "BlochVector",
    "ChannelAssignment",
    "DiffusiveChannel",
    "EffectTrajectory",
    "FilteredTrajectory",
    "GaussianSufficiencyReport",
    "HypotheticalEnsemble",
    "JumpChannel",
    "MeasurementRecord",
    "OutcomeMoments",
    "SchemeOrder",
    "SmoothedTrajectory",
    "SystemSpec",
    "Trajectory",
    "actual_diffusive_moments",
    "actual_jump_prob",
    "bloch",
    "build_hypothetical_ensemble",
    "completeness_residual",
    "diffusive_op",
    "dissipator",
    "effect_consistency",
    "fidelity_to_pure",
    "filter_consistency",
    "filter_record",
    "gaussian_sufficiency_check",
    "jump_ops",
    "liouvillian_propagate",
    "n_eff",
    "normalize",
    "ostensible_jump_prob",
    "purity",
    "quadrature_outcome_moments",
    "retrofilter",
    "run_trajectory",
    "run_true_ensemble",
    "smooth",
    "substream",
    "superop_g",
    "superop_h",
    "unconditioned_step",
    "unitary_of_hamiltonian",
]
