//! Numerical laboratory for current density impedance imaging on the unit
//! square: forward conductivity solves, weighted least-gradient
//! reconstruction, level-set geometry and empirical stability rates.

pub mod error;
pub mod expr;
pub mod field;
pub mod forward;
pub mod least_gradient;
pub mod level_sets;
pub mod scenario;
pub mod stability_lab;
pub mod verify;

pub use error::{Error, Result};
