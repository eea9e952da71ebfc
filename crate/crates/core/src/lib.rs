//! Verifying the declared location of a cloud VM from RTT measurements to a
//! catalog of landmarks with known positions.
//!
//! [`audit::run_audit`] drives the whole procedure. The building blocks are
//! usable on their own: [`dispoints`] for dispersed landmark selection,
//! [`sectorize`] for delay-similarity tallies and [`estimate`] for the
//! weighted circle fit.

pub mod audit;
pub mod catalog;
pub mod dispoints;
pub mod error;
pub mod estimate;
pub mod geodesy;
pub mod positions;
pub mod probe;
pub mod sectorize;
pub mod simplex;

pub use audit::{run_audit, AuditConfig, AuditReport, AuditStatus, BackendKind};
pub use catalog::{Catalog, Landmark, MeshMatrix};
pub use geodesy::{great_circle_km, GeoPoint};
pub use probe::ProbeBackend;
