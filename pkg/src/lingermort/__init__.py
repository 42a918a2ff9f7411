"""lingermort: cause-of-death mortality modeling with lingering jump effects."""

__version__ = "0.1.0"

from . import errors  # noqa: F401
from .panel import (  # noqa: F401
    AgeAxis,
    CauseAxis,
    ImprovementTensor,
    MortalityPanel,
    SIX_CAUSE_AXIS,
    excess_log_mortality,
    improvement_tensor,
    load_canonical_csv,
    load_wonder_export,
    pct_change,
    period_life_expectancy,
)
from .model import (  # noqa: F401
    JumpPattern,
    ParamSet,
    assemble_full_moments,
    enumerate_patterns,
    information_criteria,
    lingering_weight,
    mixture_loglik,
    single_pattern_loglik,
    special_case_gradient,
    special_case_loglik,
)
from .estimation import (  # noqa: F401
    FitOptions,
    FitResult,
    ParamPacker,
    bfgs_maximize,
    fit,
    initialize,
    standard_errors,
)
from .baselines import (  # noqa: F401
    fit_cc,
    fit_j1,
    fit_lee_carter_poisson,
    simulate_baseline,
)
from .projection import (  # noqa: F401
    Ensemble,
    InjectedShock,
    ScenarioSpec,
    make_scenario,
    project,
    survival_curves,
)
from .actuarial import (  # noqa: F401
    ProductSpec,
    hedge_comparison,
    optimal_hedge,
    risk_measures,
    value_annuity,
    value_insurance,
    whatif_report,
)
