"""Perfect sampling of quantum Gibbs states by voter coupling from the past."""
from .analysis import (BoundReport, empirical_tv, faulty_pe_report, phi_bound, phi_exact, phi_monte_carlo,
                       pinsker_lumping_bound, runtime_prediction, stability_report, t_mix)
from .cftp import (CftpGraph, MeasurementOracle, Povm, RunStats, build_oracle, classical_voter_cftp,
                   povm_measure, quantum_voter_cftp)
from .channels import (QuantumChannel, classical_lift, induced_transition_matrix, is_eigenbasis_preserving,
                       is_lumpable_chain, is_primitive, kappa, lump, metropolis_channel, metropolis_chain,
                       metropolis_lumped, one_to_one_distance, stationary_distribution)
from .errors import (CftpAbort, CoveringInfeasible, DeadLabelError, NotLumpableError, NotPrimitiveError,
                     ValidationError)
from .phase_estimation import ConfusionModel, PEConfig, confusion_backward, confusion_forward, pe_distribution
from .spectral import (SpectralCovering, SpectralDecomposition, build_covering, decompose, gibbs_lumped,
                       gibbs_state, parse_hamiltonian, relative_entropy, trace_distance)

__version__ = "0.1.0"
