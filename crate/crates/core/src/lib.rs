//! Effective diffusivity of inertial particles in a cellular flow whose
//! strength is modulated by an Ornstein–Uhlenbeck process.

pub mod config;
pub mod diffusivity;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod flow;
pub mod limits;
pub mod ou;
pub mod report;
pub mod verify;

pub use error::{Error, Result};
