//! Limit-order-book analytics over order-flow message files.
//!
//! The pipeline is: [`ingest`] parses and validates a per-instrument day of
//! messages, [`book`] replays it through a price-time-priority book,
//! [`mo`] consolidates trade runs into market orders, [`observables`]
//! collects placement and impact statistics, and [`clustering`] groups
//! instruments by the Kolmogorov-Smirnov distance between their in-spread
//! relative-price distributions. [`synth`] generates seeded synthetic
//! instrument-days with ground truth for end-to-end checks.

pub mod analysis;
pub mod book;
pub mod clustering;
pub mod histogram;
pub mod ingest;
pub mod model;
pub mod mo;
pub mod observables;
pub mod synth;

pub use book::{Book, BookDelta, BookError, BookView, ReplayObserver, ReplayStats};
pub use ingest::{InstrumentDay, ValidationReport};
pub use model::{
    midpoint_x2, in_session, Event, EventKind, MidpointX2, ModelError, Price, SessionConfig, Side,
};
pub use mo::{MarketOrder, MoSide};
