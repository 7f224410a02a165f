//! Phasor-domain simulation of an interline power flow controller (IPFC)
//! and its effect on the apparent impedance seen by a distance relay.

pub mod error;
pub mod fault;
pub mod grid;
pub mod ipfc;
pub mod linalg;
pub mod output;
pub mod phasor;
pub mod relay;
pub mod scenario;

pub use error::{Error, GridError, Result};
