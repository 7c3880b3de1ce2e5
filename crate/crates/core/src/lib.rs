//! Population and mobility estimation from geo-tagged event streams.
//!
//! The crate turns raw `(user, time, place)` events into per-area user
//! counts and origin-destination flow matrices, fits gravity and radiation
//! spatial-interaction models to those flows, and scores the fits. A seeded
//! generator ([`synth`]) produces worlds with known ground truth for every
//! stage.
//!
//! Stages, in pipeline order:
//!
//! * [`ingest`]: CSV / JSON-lines parsing, bounding-box filter, timelines
//! * [`activity`]: per-user volume and waiting-time statistics
//! * [`areas`]: area registry and radius-based population extraction
//! * [`mobility`]: consecutive-event flow extraction
//! * [`models`]: model forms, intervening population, log-space fitting
//! * [`evaluation`]: Pearson, HitRate@50%, binned scatter, comparison table
//! * [`pipeline`]: all of the above for one scale

pub mod activity;
pub mod areas;
pub mod evaluation;
pub mod geo;
pub mod ingest;
pub mod mobility;
pub mod models;
pub mod pipeline;
pub mod synth;

use thiserror::Error;

pub use geo::{haversine_km, BoundingBox, Coordinate};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geo(#[from] geo::GeoError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Activity(#[from] activity::ActivityError),
    #[error(transparent)]
    Area(#[from] areas::AreaError),
    #[error(transparent)]
    Flow(#[from] mobility::FlowError),
    #[error(transparent)]
    Model(#[from] models::ModelError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}

impl Error {
    /// Whether the failure happened in a numeric stage (fitting, metrics,
    /// estimation) rather than while reading or validating data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Activity(_) | Error::Model(_) | Error::Eval(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
