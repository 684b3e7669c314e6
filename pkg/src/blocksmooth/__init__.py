"""Block tridiagonal solvers for Kalman smoothing, with spectral diagnostics."""

from .blocktri import (
    ALGORITHMS,
    BlockSolution,
    BlockTriSystem,
    SolveTrace,
    assemble_dense,
    bbt_solve,
    fbt_solve,
    hybrid_solve,
    residual,
    solve,
    twofilter_solve,
)
from .errors import (
    BadParameters,
    BlockSmoothError,
    CombinedNotPD,
    CovarianceNotPD,
    DimensionMismatch,
    EmptySequence,
    IdentityViolation,
    MeasurementInfoSingular,
    NotSymmetric,
    PivotNotPositiveDefinite,
    SingularInput,
    SizeCapExceeded,
    VacuousBound,
)
from .kalman import (
    LinearGaussianModel,
    assemble_system,
    mayne_a_smoother,
    mayne_fraser_smoother,
    objective,
    objective_gradient,
    pq_identity_check,
    rts_block_identities,
    rts_smoother,
    woodbury_solve,
)
from .sim import Scenario, random_model, random_system, weakest_link_toy
from .spectral import (
    ProcessOnlySystem,
    SpectralReport,
    condition_bound,
    eigenvalue_sandwich,
    gram_eigenvalue_bounds,
    spectral_report,
    sym_eig,
    weakest_link,
)

__version__ = "0.1.0"
