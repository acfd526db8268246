"""Quantum Fisher information of a remote qubit under Lieb-Robinson constraints."""

from .dynamics import (
    HamiltonianTerms,
    KrylovConvergenceError,
    Propagator,
    build_xy_hamiltonian,
    evolve,
    heisenberg_operator,
)
from .fisher import (
    FisherReport,
    ImpulsePipeline,
    MeasurementModel,
    classical_fisher,
    qfi_general,
    qfi_qubit,
)
from .hilbert import (
    DensityOperator,
    LocalOperatorSpec,
    PureState,
    SpectralDecomposition,
    commutator,
    operator_norm,
    partial_trace_to_qubit,
    spectral_decompose,
)
from .lrb import (
    BoundConfig,
    BoundReport,
    BoundViolation,
    VelocityFit,
    certify_bound,
    commutator_norm,
    fit_velocity,
    inequality_chain_check,
    run_certification_suite,
)
from .xy_analytic import (
    LightConeGrid,
    bessel_j,
    lightcone_grid,
    receiver_closed_form,
    receiver_small_theta,
    single_excitation_amplitudes,
)

__version__ = "0.1.0"
