"""Milstein-type schemes for semimartingale-driven SDEs and the
Monte Carlo machinery to verify their convergence rates and asymptotic
error laws."""

from .model import (CoefficientField, SdeProblem, builtin_models,
                    correction_pairing, get_model, ito_problem, ode_curvature)
from .montecarlo import (ExperimentReport, RateFit, compare_distributions,
                         estimate_moments, fit_rate, ks_statistic,
                         null_limit_check, run_error_law, run_rate_experiment)
from .paths import (DriverSpec, Grid, PathBundle, brownian_motion_driver,
                    build_driver, coarse_anchor, ito_embedding_driver,
                    make_grid, sample_brownian, simulate_bundle, time_driver)
from .schemes import (SchemeOutput, error_process, euler, iterated_integrals,
                      milstein, milstein_ito54, reference)
from .stats import (StatSeries, cube_functional, empirical_qv, fv_exact_nm,
                    fv_limit_quadrature, m_functional, n_functional,
                    z_functional)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
