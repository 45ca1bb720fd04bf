//! Pesin-block recurrences, quasi-hyperbolic certificates for the scaled
//! Poincaré cocycle, Newton refinement of pseudo-periodic orbits and the
//! periodic-orbit census.

mod census;
mod certificate;
mod periodic;
mod pesin;
mod recurrence;

pub use census::{horseshoe_census, Census, CensusOrbit, CensusRow};
pub use certificate::{
    certify_quasi_hyperbolic, recheck_certificate, scaled_step_matrix, Condition, QuasiHyperbolicCertificate, Recheck,
    StepValues, Violation,
};
pub use periodic::{
    gap_scaling, lorenz_itinerary, shadow_periodic, verify_shadowing, GapScaling, PeriodicOrbitRecord,
    ShadowConfig, ShadowingReport, Seed,
};
pub use pesin::{pesin_block, PesinBlock};
pub use recurrence::{find_recurrences, RecurrenceConfig};
