//! Topological entropy from spanning and separated sets, disk volume
//! growth, and Bowen-ball expansiveness probes.

mod disk;
mod expansive;
mod maps;
mod spanning;

pub use expansive::{expansiveness_probe, flow_expansiveness_probe, ExpansivenessConfig, ExpansivenessReport};
pub use disk::{disk_volume_expansion, DiskConfig, DiskMesh, VolumeExpansion};
pub use maps::{CircleRotation, DoublingMap, IteratedMap, Metric, TimeOneMap};
pub use spanning::{
    arc_sample, ball_membership, entropy_estimate, fit_linear_regime, greedy_cover, greedy_cover_brute_force,
    seeded_order, spanning_count, CountRow, DynamicalBallSpec, EntropyConfig, EntropyEstimate,
    EpsCurve, Membership, SlopeFit, SpanningCount, Trajectories,
};
