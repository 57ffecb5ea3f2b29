//! Differentially private release of pandemic surveillance data products:
//! subgroup case counts, patient locations and hot-spot maps, and contact
//! networks, together with the estimators used to judge their utility and
//! re-identification risk.

pub mod analytics;
pub mod ctn;
pub mod doppelganger;
pub mod error;
pub mod heatmap;
pub mod histogram;
pub mod point;
pub mod privacy;
pub mod stats;

pub use error::{Error, Result};
pub use point::GeoPoint;
pub use privacy::{BudgetKind, PrivacyBudget, RandomSource, Sensitivity};
