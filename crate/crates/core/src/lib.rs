//! Simulation and exact oracles for Poisson limits of nonconventional sums
//! `S_n = sum_l prod_j xi_{q_j(l)}` over Bernoulli arrays, finite Markov
//! chains and subshifts of finite type.

pub mod bernoulli;
pub mod error;
pub mod experiment;
pub mod markov;
pub mod paths;
pub mod poisson;
pub mod schedule;
pub mod seeding;
pub mod sevastyanov;
pub mod subshift;
pub mod table;
pub mod union_find;

pub use error::{Error, Result};
