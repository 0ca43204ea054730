"""Dissipation-engineered stabilization of Schroedinger cat states in a storage cavity.

Lindblad models of the storage mode and its readouts, sparse and stiff
propagators, steady states, Wigner functions, a check of the adiabatic
elimination of readout r2, and an experiment runner with a CLI.
"""

from .errors import (
    CapacityError,
    CatstabError,
    ConfigError,
    DegenerateSteadyStateError,
    DimensionError,
    IntegrationError,
    InvalidIndexError,
    InvalidStateError,
    TruncationWarning,
    HierarchyWarning,
    ZeroVectorError,
)
from .fock import (
    DensityMatrix,
    ModeLayout,
    Operator,
    StateVector,
    cat_state,
    coherent_state,
    create,
    destroy,
    embed,
    fock_state,
    identity,
    number,
    parity,
    partial_trace,
    tensor,
)
from .lindblad import (
    LindbladModel,
    PropagatorPlan,
    TimeSeries,
    assemble_liouvillian_matrix,
    dissipator_apply,
    evolve,
    liouvillian_apply,
    steady_state,
)
from .models import (
    EffectiveParams,
    PumpParams,
    ThreeModeParams,
    effective_model,
    rate_kappa_2ph,
    rate_kappa_ps,
    three_mode_model,
    two_mode_reduced_model,
)
from .observables import WignerGrid, fidelity, mean_parity, mean_photon, photon_pmf, wigner

__all__ = [
    "assemble_liouvillian_matrix",
    "CapacityError",
    "cat_state",
    "CatstabError",
    "coherent_state",
    "ConfigError",
    "create",
    "DegenerateSteadyStateError",
    "DensityMatrix",
    "destroy",
    "DimensionError",
    "dissipator_apply",
    "effective_model",
    "EffectiveParams",
    "embed",
    "evolve",
    "fidelity",
    "fock_state",
    "HierarchyWarning",
    "identity",
    "IntegrationError",
    "InvalidIndexError",
    "InvalidStateError",
    "LindbladModel",
    "liouvillian_apply",
    "mean_parity",
    "mean_photon",
    "ModeLayout",
    "number",
    "Operator",
    "parity",
    "partial_trace",
    "photon_pmf",
    "PropagatorPlan",
    "PumpParams",
    "rate_kappa_2ph",
    "rate_kappa_ps",
    "StateVector",
    "steady_state",
    "tensor",
    "three_mode_model",
    "ThreeModeParams",
    "TimeSeries",
    "TruncationWarning",
    "two_mode_reduced_model",
    "wigner",
    "WignerGrid",
    "ZeroVectorError",
]

__version__ = "0.1.0"
