"""Risk-equalized private synthesis of tabular data.

The package is organised by stage: ``data_model`` (schemas, CSV I/O, the
simulator), ``dp_core`` (Gaussian mechanism and budgets), ``scoring`` (DP
rarity scores), ``weighting`` (score-to-weight maps), ``synthesis`` (weighted
sufficient statistics and Naive Bayes sampling), ``accounting`` (per-record
privacy bounds), ``evaluation`` (attacks and utility), ``pipeline`` (grids)
and ``cli``.
"""

from .dp_core import PrivacyBudget, calibrate_sigma, derive_seed, split_budget
from .pipeline import ExperimentConfig, run_grid, run_method, run_reps

__version__ = "0.1.0"
