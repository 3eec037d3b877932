from .contrasts import Contrast, ContrastResult, ContrastSpanError, baseline_family, delta_pct, pairwise_family, rr_contrasts
from .counts import EmptyTableError, RunCountsTable, build_counts_table
from .fdr import bh_fdr
from .gee import ConvergenceError, GeeFit, build_design, dispersion_diagnostics, fit_poisson_gee
from .linear import (ConditionContrast, LinearFit, SingularDesignError, condition_contrast, fit_condition_model,
                     wald_heterogeneity, wls_cluster)
from .power import UnsatisfiableDesign, power_required_runs, runs_for_stratum
