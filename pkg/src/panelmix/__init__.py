"""panelmix: two-stage forecasting for heterogeneous panels.

Global pooled AR(1)+fixed-effects persistence, block-routed local residual
models, a rolling out-of-sample evaluation protocol with a full
forecast-comparison inference battery, placebo and block-selection
validation drivers, and Grassmannian rotation diagnostics.
"""

from .architectures import (ArchitectureSpec, MixtureFit, fit_architecture,
                            forecast_architecture, local_rank_rule,
                            single_stage_block_dummy_ridge, zero_stage2)
from .engines import (EwmDemeaner, KalmanState, RidgeVarFit, SubspaceBasis,
                      ewm_demean, exact_dmd, fit_diag_ar, fit_engine,
                      fit_pca_basis, fit_ridge_full, fit_ridge_var,
                      forecast_residual, kalman_gain, kalman_run,
                      spectral_radius_clip)
from .evaluation import (ComparisonReport, WindowResult, compare_architectures,
                         compare_windows, dm_test, effective_sample_size,
                         forecast_error_correlation, hln_factor,
                         holm_bonferroni, mae, mean_oos_r2,
                         moving_block_bootstrap_ci, nw_hac_t, oos_r2,
                         paired_bootstrap_ci, per_block_r2,
                         rolling_oos_evaluate, sign_test, spearman_ic,
                         window_r2)
from .geometry import (geodesic_distance, matched_subpanel_control,
                       principal_angles, random_baseline,
                       residual_bases_per_quarter, rotation_series)
from .panel import (ActorMeta, BlockPartition, Panel, RollingWindowSpec,
                    first_difference, lag_actors, load_panel, load_partition,
                    minmax_normalize, percentile_rank_transform, save_panel,
                    save_partition)
from .persistence import (BlockAR1Fit, PooledAR1Fit, fit_block_ar1_fe,
                          fit_pooled_ar1_fe, forecast_pooled)
from .synth import (BlockFactorSpec, LayerSpec, generate_heterogeneous_panel,
                    generate_homogeneous_panel, planted_partition)
from .validation import (MixtureDeltaCache, PartitionVariant, candidate_scan,
                         held_out_freeze, lowo_block_selection, placebo_test,
                         perturbation_suite)

__version__ = "0.1.0"
