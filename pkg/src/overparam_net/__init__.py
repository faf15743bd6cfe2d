"""Over-parametrised deep sigmoid network regression.

Parallel-subnetwork logistic networks trained by full-batch gradient descent,
explicit approximation networks built from piecewise Taylor polynomials, and
an experiment harness that checks the supporting inequalities numerically.
"""
from .construct import (AssembledNet, ConstructionError, MonomialNetSpec, SubnetBlueprint,
                        assemble_taylor_net, build_monomial_net, build_mult2, build_mult_d,
                        choose_t_sigma, embed_blueprints, solve_moment_system)
from .estimator import (Constants, FitReport, Planted, TheoremSchedule, fit, init_weights,
                        plant_oracle, predict, schedule_from_theorem)
from .experiments import (ExperimentConfig, RateReport, covering_bound, generate_data,
                          mc_l2_error, rate_study, verify_suite)
from .network import (SigmaDerivTable, Topology, WeightVector, forward, forward_units,
                      sigma_deriv, sigmoid)
from .taylor import (PiecewiseTaylor, SmoothTarget, TaylorGrid, build_pieces, eval_P,
                     eval_Pbar, slab_sum, taylor_at)
from .training import (Dataset, DescentTrace, GdConfig, Projection, empirical_risk, gradient,
                       lipschitz_probe, project_ball, run_gd, truncate, verify_derivative_bound,
                       verify_linearisation_bound)

__all__ = [name for name in dir() if not name.startswith("_")]
