"""Affine-variation tests of infinity-harmonic and p-harmonic maps on regular grids."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    EmptySubdomainError,
    InfHarmError,
    InvalidDomainError,
    InvalidJetError,
    SingularityError,
    StencilError,
    StepError,
    SubdomainError,
    SupportViolationError,
)
from .grid import (  # noqa: E402
    GridDomain,
    GridMap,
    Jet,
    SubdomainSpec,
    build_domain,
    difference_quotient,
    gradient_field,
    hessian_field,
    restrict,
    sample_analytic,
)
from .operators import (  # noqa: E402
    OperatorId,
    infinity_full,
    infinity_normal,
    infinity_tangential,
    orth_projection,
    p_laplacian_expanded,
    residual_field,
)
from .functionals import (  # noqa: E402
    AffineMap,
    argmax_set,
    integral_energy,
    sublevel_neighborhood,
    sup_energy,
    variation_profile,
)
from .solutions import corpus, make_solution, perturb  # noqa: E402
from .solver import SolverConfig, p_continuation, p_harmonic_solve  # noqa: E402
from .variations import (  # noqa: E402
    BoxSampler,
    c2_tangent_family,
    characterization_verdict,
    minimality_check,
    normal_matrix_space,
    scalar_infinity_family,
    scalar_p_family,
    vector_normal_family,
    vector_tangential_family,
)
from .diffuse import (  # noqa: E402
    d_solution_field_check,
    d_solution_residual,
    hessian_samples,
    integral_criterion,
    support_estimate,
)
