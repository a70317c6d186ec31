//! Campaign runner for eigentherm: configuration, per-sample tasks, result
//! store and reports.

pub mod analysis;
pub mod campaign;
pub mod config;
pub mod ensemble;
pub mod plot;
pub mod reference;
pub mod report;
pub mod stages;
pub mod store;
