//! Solvers for two-player stochastic Stackelberg games with a best-response
//! follower: follower best responses, leader dagger values, fixed points of
//! the one-step game operator, Pareto-optimal policy iteration, and a
//! brute-force grid oracle to check them against.

pub mod cli;
pub mod error;
pub mod export;
pub mod fpe;
pub mod game;
pub mod improve;
pub mod mdp;
pub mod oracle;
pub mod popi;
pub mod simplex;

pub use error::{Error, Result, Violation};
