"""Quasi-potentials, exit times and metastability of SGD viewed as a
small-noise diffusion with state-dependent covariance."""
from .action import action_functional, arc_length, geometric_action, reparametrize_uniform
from .dynamics import DiscretePath, SimParams, closeness_statistic, gd_flow, simulate_sgd
from .errors import (ConfigError, DegeneratePathError, DivergenceError, FactorizationError,
                     ParameterError, QuasipotError)
from .escape import DomainSpec, cycle_chain, exit_ensemble, exit_exponent, first_exit
from .landscape import (diffusion_from_id, factorize, landscape_from_id, make_diag_diffusion,
                        make_quadratic, make_quadratic_bowl, make_two_well,
                        make_two_well_diffusion, minibatch_diffusion)
from .metastable import (measure_transitions, occupation_fractions, phi_histogram,
                         stationary_estimate, transition_probabilities)
from .quasipotential import (analytic_qp_example31, hj_residual, mam_minimize, qp_boundary_min)

__version__ = "0.1.0"
