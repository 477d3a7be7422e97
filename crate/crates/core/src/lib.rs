//! Matching of transit smart-card traces against phone-network traces by
//! alibi-pruned spatiotemporal co-occurrence, and estimation of how often
//! such matching succeeds.

pub mod bins;
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod index;
pub mod ingest;
pub mod matchability;
pub mod matcher;
pub mod projection;
pub mod records;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use bins::{ActivityBins, BinRange};
pub use config::Config;
pub use error::{Error, Result};
pub use index::SpatioTemporalIndex;
pub use matcher::{compare_users, match_all, Comparison, MatchOutcome, MatchParams, MatchRun, Thresholds};
pub use records::{Dataset, DatasetTag, EventRecord, LocationIdx, LocationTable, Timestamp, TimeWindow, Trajectory, TripFlag};
