//! Market-order reconstruction from runs of trade events.
//!
//! A run of consecutive trades is one market order while
//! - every visible trade hits the same resting side (hidden trades join
//!   regardless of side),
//! - no other message type comes in between,
//! - a partial execution only ever closes the run,
//! - the first and last trade are at most `mo_window_ms` apart.
//!
//! Runs are grown greedily and kept maximal.

use std::io::{self, Write};
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::book::{replay, BookView, ReplayError, ReplayObserver, ReplayStats};
use crate::histogram::CountHistogram;
use crate::ingest::InstrumentDay;
use crate::model::{Event, EventKind, SessionConfig, Side};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MoError {
    #[error("no market orders to summarize")]
    Empty,
    #[error("window list is empty")]
    NoWindows,
}

/// Direction of the aggressor. `Undirected` when only hidden orders traded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum MoSide {
    Buy,
    Sell,
    Undirected,
}

impl MoSide {
    pub fn side(self) -> Option<Side> {
        match self {
            MoSide::Buy => Some(Side::Buy),
            MoSide::Sell => Some(Side::Sell),
            MoSide::Undirected => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketOrder {
    /// Indices into the session events.
    pub events: Range<usize>,
    pub first_ts: u64,
    pub last_ts: u64,
    pub trades: Vec<Event>,
    pub side: MoSide,
    pub total_volume: u64,
    pub visible_volume: u64,
    pub hidden_trades: usize,
    /// View immediately before the first trade.
    pub book_before: Option<BookView>,
    /// View immediately after the last trade.
    pub book_after: Option<BookView>,
}

impl MarketOrder {
    pub fn cluster_size(&self) -> usize {
        self.trades.len()
    }

    pub fn is_directed(&self) -> bool {
        self.side != MoSide::Undirected
    }

    pub fn has_hidden(&self) -> bool {
        self.hidden_trades > 0
    }
}

/// Membership test for the run currently being grown.
#[derive(Debug, Clone, Copy)]
struct RunState {
    first_ts: u64,
    resting_side: Option<Side>,
    closed: bool,
}

impl RunState {
    fn start(ev: &Event) -> Self {
        RunState {
            first_ts: ev.timestamp_ms,
            resting_side: ev.side,
            closed: ev.kind == EventKind::ExecutePartial,
        }
    }

    #[inline]
    fn accepts(&self, ev: &Event, window_ms: u64) -> bool {
        !self.closed
            && ev.kind.is_trade()
            && ev.timestamp_ms.saturating_sub(self.first_ts) <= window_ms
            && match (self.resting_side, ev.side) {
                (Some(run), Some(side)) => run == side,
                _ => true,
            }
    }

    #[inline]
    fn push(&mut self, ev: &Event) {
        if ev.side.is_some() {
            self.resting_side = ev.side;
        }
        if ev.kind == EventKind::ExecutePartial {
            self.closed = true;
        }
    }
}

/// Trade runs as contiguous index ranges into `events`.
pub fn group_trades(events: &[Event], window_ms: u64) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut current: Option<(usize, RunState)> = None;
    for (i, ev) in events.iter().enumerate() {
        match current.as_mut() {
            Some((_, state)) if state.accepts(ev, window_ms) => state.push(ev),
            _ => {
                if let Some((start, _)) = current.take() {
                    runs.push(start..i);
                }
                if ev.kind.is_trade() {
                    current = Some((i, RunState::start(ev)));
                }
            }
        }
    }
    if let Some((start, _)) = current {
        runs.push(start..events.len());
    }
    runs
}

struct OpenOrder {
    state: RunState,
    order: MarketOrder,
}

/// Replay observer that builds market orders with their book context.
pub struct MoCollector {
    window_ms: u64,
    open: Option<OpenOrder>,
    orders: Vec<MarketOrder>,
}

impl MoCollector {
    pub fn new(window_ms: u64) -> Self {
        MoCollector {
            window_ms,
            open: None,
            orders: Vec::new(),
        }
    }

    fn close(&mut self) {
        if let Some(open) = self.open.take() {
            let mut order = open.order;
            order.side = match open.state.resting_side {
                Some(resting) => match resting.opposite() {
                    Side::Buy => MoSide::Buy,
                    Side::Sell => MoSide::Sell,
                },
                None => MoSide::Undirected,
            };
            self.orders.push(order);
        }
    }

    pub fn finish(mut self) -> Vec<MarketOrder> {
        self.close();
        self.orders
    }
}

impl ReplayObserver for MoCollector {
    fn on_event(&mut self, index: usize, ev: &Event, before: Option<&BookView>, after: Option<&BookView>) {
        if let Some(open) = self.open.as_mut() {
            if open.state.accepts(ev, self.window_ms) {
                open.state.push(ev);
                let o = &mut open.order;
                o.events.end = index + 1;
                o.last_ts = ev.timestamp_ms;
                o.trades.push(*ev);
                o.total_volume += ev.volume;
                if ev.kind == EventKind::ExecuteHidden {
                    o.hidden_trades += 1;
                } else {
                    o.visible_volume += ev.volume;
                }
                o.book_after = after.copied();
                return;
            }
            self.close();
        }
        if ev.kind.is_trade() {
            let hidden = ev.kind == EventKind::ExecuteHidden;
            self.open = Some(OpenOrder {
                state: RunState::start(ev),
                order: MarketOrder {
                    events: index..index + 1,
                    first_ts: ev.timestamp_ms,
                    last_ts: ev.timestamp_ms,
                    trades: vec![*ev],
                    side: MoSide::Undirected,
                    total_volume: ev.volume,
                    visible_volume: if hidden { 0 } else { ev.volume },
                    hidden_trades: usize::from(hidden),
                    book_before: before.copied(),
                    book_after: after.copied(),
                },
            });
        }
    }
}

/// Replays the day and returns its market orders in stream order.
pub fn consolidate(day: &InstrumentDay, config: &SessionConfig) -> Result<Vec<MarketOrder>, ReplayError> {
    consolidate_with_stats(day, config).map(|(orders, _)| orders)
}

pub fn consolidate_with_stats(
    day: &InstrumentDay,
    config: &SessionConfig,
) -> Result<(Vec<MarketOrder>, ReplayStats), ReplayError> {
    let mut collector = MoCollector::new(config.mo_window_ms);
    let (stats, _) = replay(day, config, &mut [&mut collector])?;
    Ok((collector.finish(), stats))
}

/// Counts of market orders per cluster size.
pub fn cluster_size_histogram(
    orders: &[MarketOrder],
    include_undirected: bool,
) -> Result<CountHistogram, MoError> {
    let hist = CountHistogram::from_values(
        orders
            .iter()
            .filter(|o| include_undirected || o.is_directed())
            .map(|o| o.cluster_size() as u64),
    );
    if hist.total() == 0 {
        return Err(MoError::Empty);
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WindowCount {
    pub window_ms: u64,
    pub market_orders: usize,
}

/// Number of reconstructed market orders for each consolidation window.
pub fn window_sensitivity(day: &InstrumentDay, windows: &[u64]) -> Result<Vec<WindowCount>, MoError> {
    if windows.is_empty() {
        return Err(MoError::NoWindows);
    }
    Ok(windows
        .iter()
        .map(|&w| WindowCount {
            window_ms: w,
            market_orders: group_trades(&day.events, w).len(),
        })
        .collect())
}

#[derive(Serialize)]
struct MarketOrderRow<'a> {
    first_event: usize,
    first_ts: u64,
    last_ts: u64,
    side: MoSide,
    cluster_size: usize,
    total_volume: u64,
    visible_volume: u64,
    hidden_trades: usize,
    book_before: Option<&'a BookView>,
    book_after: Option<&'a BookView>,
}

/// One JSON object per market order, newline separated.
pub fn write_market_orders_jsonl<W: Write>(orders: &[MarketOrder], mut out: W) -> io::Result<()> {
    for o in orders {
        let row = MarketOrderRow {
            first_event: o.events.start,
            first_ts: o.first_ts,
            last_ts: o.last_ts,
            side: o.side,
            cluster_size: o.cluster_size(),
            total_volume: o.total_volume,
            visible_volume: o.visible_volume,
            hidden_trades: o.hidden_trades,
            book_before: o.book_before.as_ref(),
            book_after: o.book_after.as_ref(),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
