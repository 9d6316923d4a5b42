//! Differential interactive games.
//!
//! A game evolves as `dphi/dt = Phi(phi, u_1, ..., u_n)` where each realized
//! control `u_i` is the player's pure control `uo_i` coupled with a feedback
//! on the state. The crate covers:
//!
//! - [`expr`]: the expression language games are written in;
//! - [`model`]: game files, validation and the associated ordinary game in
//!   which feedback parameters ε become controls of virtual players;
//! - [`engine`]: discrete-time simulation (left difference in feedbacks,
//!   right difference in the evolution) and derivative exclusion;
//! - [`epsilon`]: per-sample recovery of ε from observed play;
//! - [`oracle`]: baseline short-term predictions, deviation tracking, affine
//!   interactivity fits, corrected predictions and the long/short-term
//!   prognosis;
//! - [`invariants`]: scanning candidate quantities for time-independence or
//!   closed dynamics along a run;
//! - [`cli`]: the `igame` command line.

pub mod cli;
pub mod engine;
pub mod epsilon;
pub mod expr;
pub mod invariants;
pub mod model;
pub mod oracle;
pub mod rng;

pub use engine::{simulate, Trajectory};
pub use expr::{parse, Env, Expr, Var};
pub use model::{load_game, GameDefinition};
