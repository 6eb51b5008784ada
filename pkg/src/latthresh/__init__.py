"""Bound states and threshold behaviour of two-particle lattice Schroedinger operators."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DispersionRelation,
    HypothesisViolation,
    PairDispersion,
    Potential,
    check_cnd,
    check_hypothesis,
    eval_dispersion,
    laplacian_dispersion,
    pair_dispersion,
    pair_fourier_coeffs,
)
from .green import (  # noqa: E402
    GreenError,
    GreenTable,
    double_green_cs_kernel,
    green_bessel,
    green_extrapolation,
    green_kernel,
    green_off_threshold,
    green_subtraction,
)
from .bs import (  # noqa: E402
    BoundStateSet,
    BsMatrix,
    EvenBasis,
    build_bs_matrix,
    build_even_basis,
    count_above_one,
    critical_coupling,
    dispersion_sweep,
    solve_bound_states,
)
from .threshold import (  # noqa: E402
    LambdaForm,
    PhaseMap,
    ThresholdReport,
    ThresholdSolution,
    build_lambda,
    classify_threshold,
    phase_map,
    reconstruct_threshold_solution,
    stability_scan,
)
from .oracle import (  # noqa: E402
    BoxSpectrum,
    OracleError,
    box_spectrum,
    convergence_rule,
    periodic_fiber_check,
)
