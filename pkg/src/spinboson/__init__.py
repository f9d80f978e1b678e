"""Spin-boson qubit dynamics toolkit.

Builds asymptotic second- and fourth-order time-convolutionless generators
for odd spectral densities by nested ordered-time quadrature, cross-checks
them against an exact exponential-mode backend for the Drude bath,
propagates Bloch dynamics, benchmarks against a desk-scale hierarchy solver
and quantifies non-Markovianity through trace-distance backflow.
"""

from .bath import (
    BathContext,
    CorrelationTable,
    DqdPhonon,
    Drude,
    QuadratureConfig,
    QuadratureError,
    Tabulated,
    correlation_table,
    eta,
    eval_J,
    eval_f,
    nu,
)
from .expbath import (
    DegenerateModeError,
    ExponentialBath,
    ExpSum,
    ExpTerm,
    SecularResidualError,
    drude_modes,
    expsum_mul,
    expsum_ordered_integral,
    ordered_triple_constant,
    tcl2_drude_matsubara,
    tcl4_drude_matsubara,
)
from .system import (
    DqdParams,
    GeneratorMatrix,
    SpinBosonParams,
    bloch_from_density,
    coupling_matrix,
    density_from_bloch,
    dqd_to_sbm,
    free_generator,
    hamiltonian_matrix,
    validate_bloch,
)
from .tcl import (
    NonConvergenceError,
    Tcl4Config,
    tcl2_generator,
    tcl4_generator,
    tcl4_integrand,
    total_generator,
)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
