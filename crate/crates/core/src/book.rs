//! Price-time-priority limit order book and event replay.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Write};

use rustc_hash::FxHashMap;
use serde::Serialize;
use thiserror::Error;

use crate::ingest::InstrumentDay;
use crate::model::{midpoint_x2, Event, EventKind, MidpointX2, Price, SessionConfig, Side};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BookError {
    #[error("{kind:?} references order {id}, which is not resting")]
    UnknownOrder { id: u64, kind: EventKind },
    #[error("order {0} is already resting")]
    DuplicateOrder(u64),
    #[error("price {price} is not on the {tick}-unit tick grid")]
    OffGrid { price: Price, tick: i64 },
    #[error("order {id}: reduction of {volume} exceeds remaining {remaining}")]
    OverReduction { id: u64, volume: u64, remaining: u64 },
    #[error("{0:?} side of the book is empty")]
    EmptySide(Side),
    #[error("book is crossed: bid {bid} >= ask {ask}")]
    Crossed { bid: Price, ask: Price },
    #[error("add without a side")]
    MissingSide,
}

#[derive(Debug, Error)]
#[error("event {index} ({phase}): {source}")]
pub struct ReplayError {
    pub index: usize,
    pub phase: &'static str,
    #[source]
    pub source: BookError,
}

#[derive(Debug, Clone, Copy)]
struct Resting {
    id: u64,
    remaining: u64,
}

#[derive(Debug, Clone, Default)]
struct Level {
    volume: u64,
    queue: VecDeque<Resting>,
}

/// Best price and the volume resting there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Quote {
    pub price: Price,
    pub volume: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QuoteChange {
    pub before: Option<Quote>,
    pub after: Option<Quote>,
}

/// Quote changes caused by one event. Empty when neither quote moved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BookDelta {
    pub bid: Option<QuoteChange>,
    pub ask: Option<QuoteChange>,
}

impl BookDelta {
    pub fn is_empty(&self) -> bool {
        self.bid.is_none() && self.ask.is_none()
    }
}

/// Counters for invariant breaches seen while applying events. All stay at
/// zero on a consistent stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BookDiagnostics {
    /// Adds priced at or through the opposite quote.
    pub crossing_adds: u64,
    /// Executions that hit an order other than the front of its queue.
    pub priority_violations: u64,
    /// Executions away from the same-side quote.
    pub off_quote_executions: u64,
}

/// Snapshot of the top of the book.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BookView {
    pub best_bid: Price,
    pub best_ask: Price,
    pub bid_quote_volume: u64,
    pub ask_quote_volume: u64,
    pub spread_ticks: i64,
    /// Ticks from the bid to the next occupied bid level; `None` when the
    /// bid is the only level.
    pub gap_behind_bid: Option<i64>,
    pub gap_behind_ask: Option<i64>,
}

impl BookView {
    pub fn midpoint_x2(&self) -> MidpointX2 {
        MidpointX2(self.best_bid.0 + self.best_ask.0)
    }

    pub fn quote(&self, side: Side) -> Quote {
        match side {
            Side::Buy => Quote {
                price: self.best_bid,
                volume: self.bid_quote_volume,
            },
            Side::Sell => Quote {
                price: self.best_ask,
                volume: self.ask_quote_volume,
            },
        }
    }

    pub fn gap_behind(&self, side: Side) -> Option<i64> {
        match side {
            Side::Buy => self.gap_behind_bid,
            Side::Sell => self.gap_behind_ask,
        }
    }
}

/// Two-sided book of FIFO queues keyed by price, with an id index.
#[derive(Debug, Clone)]
pub struct Book {
    tick: i64,
    bids: BTreeMap<Price, Level>,
    asks: BTreeMap<Price, Level>,
    index: FxHashMap<u64, (Side, Price)>,
    resting_volume: u64,
    diagnostics: BookDiagnostics,
}

impl Book {
    pub fn new(tick: Price) -> Self {
        assert!(tick.0 > 0, "tick must be positive");
        Book {
            tick: tick.0,
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            index: FxHashMap::default(),
            resting_volume: 0,
            diagnostics: BookDiagnostics::default(),
        }
    }

    pub fn resting_volume(&self) -> u64 {
        self.resting_volume
    }

    pub fn order_count(&self) -> usize {
        self.index.len()
    }

    pub fn diagnostics(&self) -> BookDiagnostics {
        self.diagnostics
    }

    fn levels(&self, side: Side) -> &BTreeMap<Price, Level> {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn levels_mut(&mut self, side: Side) -> &mut BTreeMap<Price, Level> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    fn best_level(&self, side: Side) -> Option<(&Price, &Level)> {
        match side {
            Side::Buy => self.bids.iter().next_back(),
            Side::Sell => self.asks.iter().next(),
        }
    }

    pub fn best(&self, side: Side) -> Option<Quote> {
        self.best_level(side).map(|(p, l)| Quote {
            price: *p,
            volume: l.volume,
        })
    }

    /// Price of the second occupied level on `side`.
    fn second_price(&self, side: Side) -> Option<Price> {
        match side {
            Side::Buy => self.bids.keys().nth_back(1).copied(),
            Side::Sell => self.asks.keys().nth(1).copied(),
        }
    }

    /// Resting volume at `price` on `side`, zero when unoccupied.
    pub fn depth_at(&self, side: Side, price: Price) -> u64 {
        self.levels(side).get(&price).map_or(0, |l| l.volume)
    }

    /// Occupied levels from the quote outwards.
    pub fn levels_from_quote(&self, side: Side) -> Vec<Quote> {
        let map = |(p, l): (&Price, &Level)| Quote {
            price: *p,
            volume: l.volume,
        };
        match side {
            Side::Buy => self.bids.iter().rev().map(map).collect(),
            Side::Sell => self.asks.iter().map(map).collect(),
        }
    }

    /// Order ids queued at `price`, front first.
    pub fn queue_at(&self, side: Side, price: Price) -> Vec<(u64, u64)> {
        self.levels(side)
            .get(&price)
            .map(|l| l.queue.iter().map(|r| (r.id, r.remaining)).collect())
            .unwrap_or_default()
    }

    /// Side, price and remaining volume of a resting order.
    pub fn order(&self, id: u64) -> Option<(Side, Price, u64)> {
        let &(side, price) = self.index.get(&id)?;
        let rest = self.levels(side).get(&price)?.queue.iter().find(|r| r.id == id)?;
        Some((side, price, rest.remaining))
    }

    pub fn view(&self) -> Result<BookView, BookError> {
        let (&bid, bid_level) = self.best_level(Side::Buy).ok_or(BookError::EmptySide(Side::Buy))?;
        let (&ask, ask_level) = self.best_level(Side::Sell).ok_or(BookError::EmptySide(Side::Sell))?;
        if bid >= ask {
            return Err(BookError::Crossed { bid, ask });
        }
        let tick = self.tick;
        Ok(BookView {
            best_bid: bid,
            best_ask: ask,
            bid_quote_volume: bid_level.volume,
            ask_quote_volume: ask_level.volume,
            spread_ticks: (ask.0 - bid.0) / tick,
            gap_behind_bid: self.second_price(Side::Buy).map(|p| (bid.0 - p.0) / tick),
            gap_behind_ask: self.second_price(Side::Sell).map(|p| (p.0 - ask.0) / tick),
        })
    }

    /// The view when both sides are populated and uncrossed.
    #[inline]
    pub fn try_view(&self) -> Option<BookView> {
        self.view().ok()
    }

    pub fn midpoint_x2(&self) -> Option<MidpointX2> {
        let bid = self.best(Side::Buy)?;
        let ask = self.best(Side::Sell)?;
        midpoint_x2(bid.price, ask.price).ok()
    }

    pub fn apply(&mut self, ev: &Event) -> Result<BookDelta, BookError> {
        match ev.kind {
            EventKind::ExecuteHidden => Ok(BookDelta::default()),
            EventKind::Add => {
                let side = ev.side.ok_or(BookError::MissingSide)?;
                let before = self.best(side);
                self.add(side, ev.order_id, ev.price, ev.volume)?;
                Ok(self.delta_for(side, before))
            }
            kind => {
                let &(side, price) = self
                    .index
                    .get(&ev.order_id)
                    .ok_or(BookError::UnknownOrder { id: ev.order_id, kind })?;
                let before = self.best(side);
                if kind.is_visible_trade() {
                    self.check_priority(side, price, ev.order_id);
                }
                let full = matches!(kind, EventKind::Delete | EventKind::ExecuteFull);
                self.reduce(side, price, ev.order_id, if full { None } else { Some(ev.volume) })?;
                Ok(self.delta_for(side, before))
            }
        }
    }

    fn delta_for(&self, side: Side, before: Option<Quote>) -> BookDelta {
        let after = self.best(side);
        if before == after {
            return BookDelta::default();
        }
        let change = Some(QuoteChange { before, after });
        match side {
            Side::Buy => BookDelta {
                bid: change,
                ask: None,
            },
            Side::Sell => BookDelta {
                bid: None,
                ask: change,
            },
        }
    }

    fn check_priority(&mut self, side: Side, price: Price, id: u64) {
        let best = self.best_level(side).map(|(p, _)| *p);
        if best != Some(price) {
            self.diagnostics.off_quote_executions += 1;
        }
        let front = self
            .levels(side)
            .get(&price)
            .and_then(|l| l.queue.front())
            .map(|r| r.id);
        if front != Some(id) {
            self.diagnostics.priority_violations += 1;
        }
    }

    fn add(&mut self, side: Side, id: u64, price: Price, volume: u64) -> Result<(), BookError> {
        if !price.is_on_grid(Price(self.tick)) {
            return Err(BookError::OffGrid {
                price,
                tick: self.tick,
            });
        }
        if self.index.contains_key(&id) {
            return Err(BookError::DuplicateOrder(id));
        }
        let crosses = match side {
            Side::Buy => self.asks.keys().next().is_some_and(|&a| price >= a),
            Side::Sell => self.bids.keys().next_back().is_some_and(|&b| price <= b),
        };
        if crosses {
            self.diagnostics.crossing_adds += 1;
        }
        let level = self.levels_mut(side).entry(price).or_default();
        level.volume += volume;
        level.queue.push_back(Resting {
            id,
            remaining: volume,
        });
        self.index.insert(id, (side, price));
        self.resting_volume += volume;
        Ok(())
    }

    /// Removes `volume` from order `id`, or the whole order when `None`.
    fn reduce(&mut self, side: Side, price: Price, id: u64, volume: Option<u64>) -> Result<(), BookError> {
        let levels = self.levels_mut(side);
        let level = levels
            .get_mut(&price)
            .expect("index and price map are consistent");
        let pos = level
            .queue
            .iter()
            .position(|r| r.id == id)
            .expect("index and queue are consistent");
        let remaining = level.queue[pos].remaining;
        let take = volume.unwrap_or(remaining);
        if take > remaining {
            return Err(BookError::OverReduction {
                id,
                volume: take,
                remaining,
            });
        }
        level.volume -= take;
        let removed = take == remaining;
        if removed {
            level.queue.remove(pos);
        } else {
            level.queue[pos].remaining -= take;
        }
        if level.queue.is_empty() {
            levels.remove(&price);
        }
        if removed {
            self.index.remove(&id);
        }
        self.resting_volume -= take;
        Ok(())
    }
}

/// Receives every in-session event with the book views around it. Views are
/// `None` while a side is empty.
pub trait ReplayObserver {
    fn on_event(&mut self, index: usize, event: &Event, before: Option<&BookView>, after: Option<&BookView>);
}

impl<F> ReplayObserver for F
where
    F: FnMut(usize, &Event, Option<&BookView>, Option<&BookView>),
{
    fn on_event(&mut self, index: usize, event: &Event, before: Option<&BookView>, after: Option<&BookView>) {
        self(index, event, before, after)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReplayStats {
    pub warmup_events: u64,
    pub events: u64,
    pub hidden_executions: u64,
    /// In-session steps after which a side was empty.
    pub one_sided_steps: u64,
    pub diagnostics: BookDiagnostics,
    pub resting_volume_open: u64,
    pub resting_volume_close: u64,
    pub resting_volume_min: u64,
    pub resting_volume_max: u64,
}

/// Replays warmup silently, then every session event with observer callbacks.
pub fn replay(
    day: &InstrumentDay,
    config: &SessionConfig,
    observers: &mut [&mut dyn ReplayObserver],
) -> Result<(ReplayStats, Book), ReplayError> {
    let mut book = Book::new(config.tick);
    let mut stats = ReplayStats::default();
    for (index, ev) in day.warmup.iter().enumerate() {
        book.apply(ev).map_err(|source| ReplayError {
            index,
            phase: "warmup",
            source,
        })?;
    }
    stats.warmup_events = day.warmup.len() as u64;
    if day.events.is_empty() {
        return Ok((stats, book));
    }

    stats.resting_volume_open = book.resting_volume();
    stats.resting_volume_min = book.resting_volume();
    stats.resting_volume_max = book.resting_volume();
    let mut before = book.try_view();
    for (index, ev) in day.events.iter().enumerate() {
        book.apply(ev).map_err(|source| ReplayError {
            index,
            phase: "session",
            source,
        })?;
        let after = book.try_view();
        for obs in observers.iter_mut() {
            obs.on_event(index, ev, before.as_ref(), after.as_ref());
        }
        if after.is_none() {
            stats.one_sided_steps += 1;
        }
        if ev.kind == EventKind::ExecuteHidden {
            stats.hidden_executions += 1;
        }
        let v = book.resting_volume();
        stats.resting_volume_min = stats.resting_volume_min.min(v);
        stats.resting_volume_max = stats.resting_volume_max.max(v);
        before = after;
    }
    stats.events = day.events.len() as u64;
    stats.resting_volume_close = book.resting_volume();
    stats.diagnostics = book.diagnostics();
    Ok((stats, book))
}

#[derive(Serialize)]
struct SnapshotLine<'a> {
    index: usize,
    timestamp_ms: u64,
    view: Option<&'a BookView>,
}

/// Observer writing the post-event view as JSON lines every `stride` events.
pub struct SnapshotWriter<W: Write> {
    out: W,
    stride: usize,
    error: Option<io::Error>,
}

impl<W: Write> SnapshotWriter<W> {
    pub fn new(out: W, stride: usize) -> Self {
        SnapshotWriter {
            out,
            stride: stride.max(1),
            error: None,
        }
    }

    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> ReplayObserver for SnapshotWriter<W> {
    fn on_event(&mut self, index: usize, event: &Event, _before: Option<&BookView>, after: Option<&BookView>) {
        if self.error.is_some() || !index.is_multiple_of(self.stride) {
            return;
        }
        let line = SnapshotLine {
            index,
            timestamp_ms: event.timestamp_ms,
            view: after,
        };
        let res = serde_json::to_writer(&mut self.out, &line)
            .map_err(io::Error::from)
            .and_then(|_| self.out.write_all(b"\n"));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DEFAULT_TICK;

    fn ev(kind: EventKind, id: u64, side: Option<Side>, cents: i64, volume: u64) -> Event {
        Event {
            timestamp_ms: 36_000_000,
            kind,
            order_id: id,
            side,
            price: Price(cents * 100),
            volume,
        }
    }

    fn add(id: u64, side: Side, cents: i64, volume: u64) -> Event {
        ev(EventKind::Add, id, Some(side), cents, volume)
    }

    fn book_with(events: &[Event]) -> Book {
        let mut b = Book::new(DEFAULT_TICK);
        for e in events {
            b.apply(e).unwrap();
        }
        b
    }

    #[test]
    fn add_inside_spread_raises_bid() {
        let mut b = book_with(&[add(1, Side::Buy, 10000, 100), add(2, Side::Sell, 10002, 100)]);
        let d = b.apply(&add(3, Side::Buy, 10001, 100)).unwrap();
        assert_eq!(b.view().unwrap().best_bid, Price(1_000_100));
        let change = d.bid.unwrap();
        assert_eq!(change.before.unwrap().price, Price(1_000_000));
        assert_eq!(change.after.unwrap().price, Price(1_000_100));
        assert!(d.ask.is_none());
    }

    #[test]
    fn full_execution_of_last_order_moves_ask() {
        let mut b = book_with(&[
            add(1, Side::Buy, 10000, 100),
            add(2, Side::Sell, 10002, 300),
            add(3, Side::Sell, 10005, 200),
        ]);
        b.apply(&ev(EventKind::ExecuteFull, 2, Some(Side::Sell), 10002, 300)).unwrap();
        assert_eq!(b.view().unwrap().best_ask, Price(1_000_500));
    }

    #[test]
    fn hidden_execution_leaves_book_untouched() {
        let mut b = book_with(&[add(1, Side::Buy, 10000, 100), add(2, Side::Sell, 10002, 300)]);
        let v = b.view().unwrap();
        let d = b.apply(&ev(EventKind::ExecuteHidden, 0, None, 10001, 50)).unwrap();
        assert!(d.is_empty());
        assert_eq!(b.view().unwrap(), v);
    }

    #[test]
    fn view_spread_and_gaps() {
        let b = book_with(&[
            add(1, Side::Buy, 10000, 100),
            add(2, Side::Sell, 10002, 300),
            add(3, Side::Sell, 10005, 200),
        ]);
        let v = b.view().unwrap();
        assert_eq!(v.spread_ticks, 2);
        assert_eq!(v.gap_behind_ask, Some(3));
        assert_eq!(v.gap_behind_bid, None);
        assert_eq!(v.ask_quote_volume, 300);
        assert_eq!(v.bid_quote_volume, 100);
    }

    #[test]
    fn single_level_books_report_no_gap() {
        let v = book_with(&[add(1, Side::Buy, 10000, 100), add(2, Side::Sell, 10001, 100)])
            .view()
            .unwrap();
        assert_eq!(v.spread_ticks, 1);
        assert_eq!((v.gap_behind_bid, v.gap_behind_ask), (None, None));
    }

    #[test]
    fn empty_side_is_an_error() {
        let b = book_with(&[add(1, Side::Buy, 10000, 100)]);
        assert_eq!(b.view(), Err(BookError::EmptySide(Side::Sell)));
    }

    #[test]
    fn partial_reductions_keep_queue_position() {
        let mut b = book_with(&[
            add(1, Side::Sell, 10002, 300),
            add(2, Side::Sell, 10002, 200),
            add(9, Side::Buy, 10000, 100),
        ]);
        b.apply(&ev(EventKind::CancelPartial, 1, Some(Side::Sell), 10002, 100)).unwrap();
        assert_eq!(b.queue_at(Side::Sell, Price(1_000_200)), vec![(1, 200), (2, 200)]);
        b.apply(&ev(EventKind::ExecutePartial, 1, Some(Side::Sell), 10002, 50)).unwrap();
        assert_eq!(b.depth_at(Side::Sell, Price(1_000_200)), 350);
        assert_eq!(b.diagnostics(), BookDiagnostics::default());
    }

    #[test]
    fn executing_behind_the_front_is_a_priority_violation() {
        let mut b = book_with(&[
            add(1, Side::Sell, 10002, 300),
            add(2, Side::Sell, 10002, 200),
            add(9, Side::Buy, 10000, 100),
        ]);
        b.apply(&ev(EventKind::ExecuteFull, 2, Some(Side::Sell), 10002, 200)).unwrap();
        assert_eq!(b.diagnostics().priority_violations, 1);
    }

    #[test]
    fn integrity_errors() {
        let mut b = book_with(&[add(1, Side::Sell, 10002, 300)]);
        assert!(matches!(
            b.apply(&ev(EventKind::ExecuteFull, 7, Some(Side::Sell), 10002, 1)),
            Err(BookError::UnknownOrder { id: 7, .. })
        ));
        assert!(matches!(
            b.apply(&ev(EventKind::CancelPartial, 1, Some(Side::Sell), 10002, 301)),
            Err(BookError::OverReduction { .. })
        ));
        assert_eq!(b.apply(&add(1, Side::Sell, 10003, 5)), Err(BookError::DuplicateOrder(1)));
        let mut off = add(5, Side::Buy, 10000, 5);
        off.price = Price(1_000_050);
        assert!(matches!(b.apply(&off), Err(BookError::OffGrid { .. })));
    }

    #[test]
    fn crossing_add_is_counted_and_view_refuses() {
        let mut b = book_with(&[add(1, Side::Sell, 10002, 300), add(2, Side::Buy, 10000, 100)]);
        b.apply(&add(3, Side::Buy, 10002, 100)).unwrap();
        assert_eq!(b.diagnostics().crossing_adds, 1);
        assert!(matches!(b.view(), Err(BookError::Crossed { .. })));
    }

    #[test]
    fn snapshot_writer_respects_stride() {
        let day = InstrumentDay {
            ticker: "T".into(),
            date: chrono::NaiveDate::from_ymd_opt(2016, 3, 7).unwrap(),
            warmup: vec![],
            events: (0..5).map(|i| add(i + 1, Side::Buy, 10000 - i as i64, 10)).collect(),
        };
        let mut w = SnapshotWriter::new(Vec::new(), 2);
        replay(&day, &SessionConfig::default(), &mut [&mut w]).unwrap();
        let out = String::from_utf8(w.finish().unwrap()).unwrap();
        assert_eq!(out.lines().count(), 3);
        assert!(out.lines().all(|l| l.contains("\"view\":null")));
    }
}
