"""Mean-field SDE simulation and measure-derivative calculus toolkit."""

from .calculus import (
    CylindricalFunction,
    DerivativeBundle,
    l_derivative,
    l_derivative_fd_oracle,
    l_derivative_pairing,
    make_cylindrical,
    make_inner,
    make_outer,
)
from .dynamics import (
    CoefficientField,
    DecoupledEnsemble,
    ParticleFlow,
    make_coefficients,
    semigroup_apply,
    simulate_decoupled,
    simulate_mckean_vlasov,
)
from .errors import (
    CapabilityError,
    ConfigError,
    ContractError,
    DataError,
    EvaluationError,
    MfsdeError,
    SimulationError,
)
from .feynman_kac import (
    McSolution,
    McValueFunction,
    npy_identity_gap,
    pde_residual_exact,
    pde_residual_mc,
    solve_combined,
    solve_linear,
    solve_log_transform,
    solve_with_source,
)
from .functionals import (
    PathRecord,
    accumulate,
    build_pair_from_V,
    girsanov_weight,
    make_path_record,
    novikov_estimate,
    verify_path_independence,
)
from .generator import (
    GeneratorValue,
    apply_L_sigma,
    apply_L_sigma_b,
    ito_residual,
    ito_residual_ensemble,
)
from .measure import (
    EmpiricalMeasure,
    dirac,
    integrate,
    pushforward,
    wasserstein2,
    wasserstein2_bruteforce,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
