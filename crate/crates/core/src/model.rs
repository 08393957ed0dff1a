//! Domain types and price arithmetic shared by the whole pipeline.
//!
//! Prices are integers in 1/10000 USD, so one cent tick is 100 units.
//! Midpoints are carried doubled ([`MidpointX2`]) which keeps half-tick
//! midpoints exact; returns are the only floating-point quantities.

use std::fmt;

use chrono::{NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Price units per US dollar.
pub const PRICE_SCALE: i64 = 10_000;

/// One cent in price units.
pub const DEFAULT_TICK: Price = Price(100);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("crossed book: best bid {bid} >= best ask {ask}")]
    CrossedBook { bid: Price, ask: Price },
    #[error("invalid session window: start {start_ms} ms must precede end {end_ms} ms")]
    InvalidSession { start_ms: u64, end_ms: u64 },
    #[error("tick must be positive, got {0}")]
    InvalidTick(i64),
    #[error("cannot parse clock time {0:?}, expected HH:MM[:SS[.mmm]]")]
    BadClock(String),
}

/// Price in 1/10000 USD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Price(pub i64);

impl Price {
    #[inline]
    pub fn units(self) -> i64 {
        self.0
    }

    #[inline]
    pub fn is_on_grid(self, tick: Price) -> bool {
        self.0 > 0 && self.0 % tick.0 == 0
    }

    pub fn as_dollars(self) -> f64 {
        self.0 as f64 / PRICE_SCALE as f64
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Twice the midpoint, in price units. Always `best_bid + best_ask`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MidpointX2(pub i64);

impl MidpointX2 {
    /// The midpoint in price units, possibly half-integral.
    pub fn as_price_units(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

/// Returns `best_bid + best_ask`, rejecting a crossed or locked book.
pub fn midpoint_x2(best_bid: Price, best_ask: Price) -> Result<MidpointX2, ModelError> {
    if best_bid >= best_ask {
        return Err(ModelError::CrossedBook {
            bid: best_bid,
            ask: best_ask,
        });
    }
    Ok(MidpointX2(best_bid.0 + best_ask.0))
}

/// Side of a resting limit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    #[inline]
    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }
}

/// Message type. Numeric codes follow the message-file convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Add,
    CancelPartial,
    Delete,
    ExecuteFull,
    ExecuteHidden,
    ExecutePartial,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Add,
        EventKind::CancelPartial,
        EventKind::Delete,
        EventKind::ExecuteFull,
        EventKind::ExecuteHidden,
        EventKind::ExecutePartial,
    ];

    pub fn code(self) -> u8 {
        match self {
            EventKind::Add => 1,
            EventKind::CancelPartial => 2,
            EventKind::Delete => 3,
            EventKind::ExecuteFull => 4,
            EventKind::ExecuteHidden => 5,
            EventKind::ExecutePartial => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<EventKind> {
        Some(match code {
            1 => EventKind::Add,
            2 => EventKind::CancelPartial,
            3 => EventKind::Delete,
            4 => EventKind::ExecuteFull,
            5 => EventKind::ExecuteHidden,
            6 => EventKind::ExecutePartial,
            _ => return None,
        })
    }

    #[inline]
    pub fn is_trade(self) -> bool {
        matches!(
            self,
            EventKind::ExecuteFull | EventKind::ExecutePartial | EventKind::ExecuteHidden
        )
    }

    /// Trades against a visible resting order.
    #[inline]
    pub fn is_visible_trade(self) -> bool {
        matches!(self, EventKind::ExecuteFull | EventKind::ExecutePartial)
    }

    /// Kinds that must reference a live order id.
    #[inline]
    pub fn references_order(self) -> bool {
        matches!(
            self,
            EventKind::CancelPartial
                | EventKind::Delete
                | EventKind::ExecuteFull
                | EventKind::ExecutePartial
        )
    }
}

/// One order-flow message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    /// Milliseconds after midnight, exchange-local.
    pub timestamp_ms: u64,
    pub kind: EventKind,
    /// Zero for hidden executions, which carry no order reference.
    pub order_id: u64,
    /// Side of the resting limit order; `None` only for hidden executions.
    pub side: Option<Side>,
    pub price: Price,
    pub volume: u64,
}

impl Event {
    pub fn order_ref(&self) -> Option<u64> {
        (self.kind != EventKind::ExecuteHidden).then_some(self.order_id)
    }
}

/// Session window and consolidation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Inclusive start, milliseconds after midnight.
    pub session_start_ms: u64,
    /// Exclusive end, milliseconds after midnight.
    pub session_end_ms: u64,
    pub mo_window_ms: u64,
    pub tick: Price,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            session_start_ms: 10 * 3_600_000,
            session_end_ms: 15 * 3_600_000 + 30 * 60_000,
            mo_window_ms: 1,
            tick: DEFAULT_TICK,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.session_start_ms >= self.session_end_ms {
            return Err(ModelError::InvalidSession {
                start_ms: self.session_start_ms,
                end_ms: self.session_end_ms,
            });
        }
        if self.tick.0 <= 0 {
            return Err(ModelError::InvalidTick(self.tick.0));
        }
        Ok(())
    }
}

/// Half-open session membership: `start <= t < end`.
#[inline]
pub fn in_session(timestamp_ms: u64, config: &SessionConfig) -> bool {
    config.session_start_ms <= timestamp_ms && timestamp_ms < config.session_end_ms
}

/// Parses `HH:MM`, `HH:MM:SS` or `HH:MM:SS.mmm` into milliseconds after midnight.
pub fn parse_clock(text: &str) -> Result<u64, ModelError> {
    let t = text.trim();
    let parsed = NaiveTime::parse_from_str(t, "%H:%M:%S%.f")
        .or_else(|_| NaiveTime::parse_from_str(t, "%H:%M"))
        .map_err(|_| ModelError::BadClock(text.to_string()))?;
    Ok(parsed.num_seconds_from_midnight() as u64 * 1000 + (parsed.nanosecond() / 1_000_000) as u64)
}

/// Formats milliseconds after midnight as `HH:MM:SS.mmm`.
pub fn format_clock(ms: u64) -> String {
    let h = ms / 3_600_000;
    let m = (ms / 60_000) % 60;
    let s = (ms / 1000) % 60;
    format!("{h:02}:{m:02}:{s:02}.{:03}", ms % 1000)
}
