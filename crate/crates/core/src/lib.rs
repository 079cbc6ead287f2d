//! Large deviations of kicked dissipative Markov chains, computed at desk scale.

pub mod attainability;
pub mod dynamics;
pub mod error;
pub mod ldp;
pub mod models;
pub mod noise;
pub mod occupation;
pub mod par;
pub mod seed;
pub mod slaved;
pub mod state;
pub mod twisted;

pub use error::{Error, Result};
