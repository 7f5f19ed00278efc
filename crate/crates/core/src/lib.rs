//! Robust location estimation for symmetric heavy-tailed data.
//!
//! The estimators transform samples through a bounded Huber-type influence
//! function and then run an outlier filter on the transformed points: a
//! second-moment spectral filter, a higher-moment sum-of-squares filter, and
//! a near-optimal variant that handles unknown noise scale via sample
//! pairing. See the `examples/` directory for end-to-end usage.

pub mod data;
pub mod distributions;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod filters;
pub mod numerics;
pub mod sos;

pub use data::{Dataset, Truth, WeightVector};
pub use error::{Error, Result};
pub use losses::{HuberParams, LossKind};
