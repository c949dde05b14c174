//! Finite MDPs, softmax policies, induced Markov chains, and exact solvers
//! for stationary distributions, average rewards, and relative values.

mod chain;
mod features;
mod mdp;
mod policy;
mod solve;

pub use chain::{
    induced_from_table, induced_transition_matrix, power_iteration, stationary_distribution,
    stationary_of_matrix, ChainSource, InducedChain, PowerIteration, SOLVER_TOL,
};
pub use features::{FeatureMap, SPAN_TOL};
pub use mdp::{collect_from_throughputs, EnvironmentSet, FiniteMdp, CONSTRUCTION_TOL};
pub use policy::TabularSoftmaxPolicy;
pub use solve::{
    average_reward, exact_mixed_gradient, exact_mixed_gradient_with, mixed_average_reward,
    optimal_average_reward, per_environment_average_rewards, policy_reward, q_and_advantage,
    value_function, QAdvantage,
};
