"""Complex lattice reduction (CLLL, FSR-LLL, ASLR), LR-aided MIMO detection,
and a cycle-level simulator of a systolic array that runs them."""

from .errors import (
    ConfigError,
    DegenerateRotation,
    DomainError,
    IterationLimit,
    LatticeError,
    NonInteger,
    NotReduced,
    ProtocolViolation,
    RankDeficient,
    SearchSpaceTooLarge,
    ShapeMismatch,
    ZeroDiagonal,
)
from .linalg import QRFactors, is_unimodular, qr_givens, sorted_qr
from .reduction import (
    Algorithm,
    Condition,
    ReductionOutcome,
    ReductionParams,
    ReductionStats,
    defect_bound,
    orthogonality_defect,
    reduce,
    reduce_aslr,
    reduce_channel,
    reduce_clll,
    reduce_fsr_lll,
)

__version__ = "0.1.0"
