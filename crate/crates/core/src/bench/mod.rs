//! Test cases, the monolithic reference oracle, error metrics and run
//! orchestration.

pub mod cases;
pub mod metrics;
pub mod reference;
pub mod run;

pub use cases::{ConeDamage, CubicField, Microstructure, PLANES};
pub use reference::ReferenceSystem;
