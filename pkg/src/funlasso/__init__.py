"""Measure-weighted LASSO for functional linear regression with subgaussian
designs, plus the sparsity and chaining-complexity diagnostics that govern its
prediction error."""

__version__ = "0.1.0"

from .grids import (Grid, GridFunction, ConeSpec, OracleSpec, build_uniform_grid,
                    weighted_l1_norm, pairing, canonical_subgradient, dominant_set)
from .kernels import (BrownianReleased, Brownian, OrnsteinUhlenbeck, StationarySpectral,
                      BlockKernel, GramModel, NonPsdError, kernel_eval,
                      stationary_kernel_from_spectral, gram_matrix, pseudometric_dx)
from .sampling import RegressionSample, sample_design, sample_response, simulate
from .solver import (LassoProblem, LassoFit, objective_empirical, fit_empirical,
                     fit_population, kkt_residual, penalized_approx_error, population_risk)
from .sparsity import (AlignmentResult, RKHSNormInfinite, AlignmentError, rkhs_norm,
                       discrete_sobolev_norm_bm, ou_rkhs_norm_closed, fourier_sobolev_norm,
                       spike_subgradient, alignment_coefficient)
from .complexity import (covering_numbers, covering_profile, gamma2_dudley,
                         expected_sup_bound, kolmogorov_width, approximate_dimension,
                         local_dimensions, rip_constant, rip_beta_bound, RipEstimate)
from .experiments import (ExperimentConfig, OracleConfig, EpsilonRule, run_scenario,
                          fit_rate_slope, verify_approx_theorem, run_spike_separation,
                          make_oracle, monte_carlo_risk)
