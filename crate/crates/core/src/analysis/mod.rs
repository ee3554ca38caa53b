//! Exact and Monte Carlo verification of the baseline bias and variance results.

pub mod checks;
pub mod enumerable;
pub mod eval;
pub mod gridworld;
pub mod theory;

pub use enumerable::{EnumerableMdp, Path, StepKey, TabularPolicy};
pub use eval::{evaluate_controller, evaluate_policy, policy_heatmap, queue_grid, Controller, EvalReport, Heatmap, HEATMAP_JOB_SIZE};
pub use gridworld::{analytic_gap, gridworld_variance_gap, truncation_horizon, VarianceGapReport};
pub use theory::{
    baseline_optimality_check, exact_bias_term, exact_gradient_moments, lemma1_exact, lemma1_factorization_check,
    markov_property_check, step_variance, trpo_term_constancy_check, GradientMoments, IndependenceReport,
    OptimalityReport, TrpoReport,
};
