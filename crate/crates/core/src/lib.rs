//! Volume-level sensitivity-specificity detection losses, a multi-pathway 3D
//! patch network with an optional temporal-prior pathway, and lesion-level
//! evaluation, all exercised on seeded synthetic longitudinal phantoms.

pub mod ensemble;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod patching;
pub mod phantom;
pub mod pipeline;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
