//! Equilibrium value learning for a two-player intersection game.
//!
//! The crate generates supervised equilibrium trajectories from the
//! game's two-point BVP, trains small value networks under supervised,
//! self-supervised (PDE-residual), and hybrid regimes, and evaluates the
//! learned values as closed-loop controllers in complete- and
//! incomplete-information interactions.

pub mod adam;
pub mod diagnostics;
pub mod dataset;
pub mod error;
pub mod game;
pub mod net;
pub mod rng;
pub mod solver;
pub mod train;

pub use error::{Error, Result};
