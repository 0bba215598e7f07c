//! Ground truth for finite problems: occupancy-measure LP, exact policy
//! evaluation and a direct solver for the discrete E-step.

mod brute;
mod eval;
mod lp;
mod mdp;

pub use brute::{brute_force_estep, brute_min_cost, BruteEstep, DiscreteEstep};
pub use eval::{bellman_residual, exact_policy_eval, finite_horizon_returns, state_occupancy, ExactQ};
pub use lp::{min_discounted_cost, solve_constrained_lp, LpSolution};
pub use mdp::FiniteCmdp;
