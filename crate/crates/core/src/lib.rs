//! Counterfactual strategy synthesis for Markov decision processes.
//!
//! Given an MDP, an initial (memoryless, possibly randomized) strategy, a
//! target state and a probability limit, this crate computes strategies of
//! minimal distance to the initial one that keep the probability of reaching
//! the target at or below the limit. It also materializes the underlying
//! mixed-integer quadratically constrained program, produces diverse
//! collections of counterfactuals and renders recourse explanations.
//!
//! The crate is `no_std` + `alloc`. The `std` feature adds a wall-clock timer
//! and thread-parallel multi-start.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod diversity;
pub mod encoding;
mod error;
pub mod explain;
pub mod fixtures;
pub mod linalg;
pub mod mdp;
pub mod reach;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use mdp::{
    decision_states, distance_vector, induce_dtmc, strategy_distance, tv_distance,
    validate_strategy, ActionId, DistanceBreakdown, DistanceConfig, Distribution, Dtmc, Mdp,
    MdpBuilder, StateId, Strategy, Violation, CHANGE_TOL,
};
