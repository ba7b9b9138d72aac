//! Tabular self-play Q-learning for finite-horizon Markov games.
//!
//! The crate provides the stage-game machinery (games, exact equilibrium
//! oracles built on a dense simplex solver), the memory-efficient optimistic
//! learner with its reference-value machinery, a multi-player general-sum
//! extension, and evaluation utilities for learning-rate and regret theory.

pub mod error;
pub mod eval;
pub mod game;
pub mod learner;
pub mod linprog;
pub mod multi;
pub mod rng;
pub mod textio;

pub use error::{Error, Result};
