//! A self-contained laboratory for speed control of a vehicle platoon on a
//! lane-drop corridor.
//!
//! The crate couples three layers:
//!
//! * [`micro_env`] — a microscopic multi-lane simulator (stochastic
//!   safe-speed drivers around one controllable platoon) that serves as
//!   ground truth;
//! * [`macro_model`] + [`adaptive_model`] — a first-order macroscopic
//!   density model whose per-segment parameters are fitted online by
//!   recursive least squares, giving a cheap one-step predictor;
//! * [`qlearn`] + [`dyna`] — a from-scratch Q-network with experience
//!   replay whose training interleaves real steps with virtual steps drawn
//!   from the adapted predictor.
//!
//! Everything is deterministic given a root seed: every random consumer
//! draws from its own labeled stream (see [`seeding`]).

pub mod adaptive_model;
pub mod config;
pub mod dyna;
pub mod error;
pub mod macro_model;
pub mod mdp;
pub mod micro_env;
pub mod outputs;
pub mod qlearn;
pub mod seeding;

pub use error::{Error, Result};
