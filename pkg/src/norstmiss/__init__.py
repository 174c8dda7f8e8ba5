"""Subspace tracking and matrix completion from data with missing entries.

The tracker alternates between refining a subspace estimate from projected
least-squares fills and watching for a change; a robust variant also locates
sparse outliers.  See :mod:`norstmiss.tracker` for the main entry points.
"""

from .exceptions import (BudgetExceeded, BudgetWarning, ConfigInvalid, DimensionMismatch,
                         IllConditioned, NoConvergence, NorstError, NotSkewSymmetric,
                         NumericalError, ParseError, RankDeficient, ShapeMismatch, ZeroMatrix)
from .fill import project_ls_fill, sample_efficient_fill
from .linalg import (cgls_solve, lambda_max_sym, mu_coherence, orthonormalize, r_svd,
                     sin_theta_max, skew_expm)
from .metrics import (detection_report, rel_frobenius, samples_to_threshold,
                      subspace_error_series)
from .robust import NorstMissRobust, RobustParams, altproj_init, modified_cs, support_estimate
from .tracker import NorstMiss, TrackerParams, complete_matrix, smooth
from .variants import VariantParams, buffer_reuse_update, sliding_window_schedule

__version__ = "0.1.0"
