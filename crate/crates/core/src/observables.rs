//! Placement, frequency and impact observables.
//!
//! Limit-order placement is measured against the book just before the add:
//! in-spread orders by their relative price `(p - p_q) / s` (taken as a
//! positive aggressiveness), off-spread and on-quote orders by their
//! absolute distance `|p - p_q|` in ticks, with `p_q` the same-side quote.
//! Market-order impact is the midpoint return `(p_after - p_before) / p_before`.

use rustc_hash::FxHashMap;
use serde::Serialize;
use thiserror::Error;

use crate::book::{BookView, ReplayObserver};
use crate::mo::{MarketOrder, MoSide};
use crate::model::{Event, EventKind, MidpointX2, Price, Side};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObservableError {
    #[error("expected an add, got {0:?}")]
    NotAnAdd(EventKind),
    #[error("{side:?} add at {price} crosses the opposite quote")]
    Crossing { side: Side, price: Price },
    #[error("market order is undirected")]
    Undirected,
    #[error("book context is missing or one-sided")]
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PlacementKind {
    InSpread,
    OnQuote,
    OffSpread,
}

/// Where one limit order landed relative to the book it arrived at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlacementSample {
    pub kind: PlacementKind,
    pub side: Side,
    /// Ticks from the same-side quote: inside the spread for in-spread
    /// orders, behind it otherwise (0 on the quote).
    pub offset_ticks: i64,
    pub prior_spread_ticks: i64,
    pub quote_price: Price,
}

impl PlacementSample {
    /// `offset / spread`, in-spread orders only.
    pub fn relative_price(&self) -> Option<f64> {
        (self.kind == PlacementKind::InSpread)
            .then(|| self.offset_ticks as f64 / self.prior_spread_ticks as f64)
    }

    /// Absolute deviation from the quote in ticks, off-spread and on-quote only.
    pub fn abs_deviation_ticks(&self) -> Option<i64> {
        (self.kind != PlacementKind::InSpread).then_some(self.offset_ticks)
    }

    /// Deviation divided by the quote price (both in price units).
    pub fn relative_deviation(&self, tick: Price) -> Option<f64> {
        self.abs_deviation_ticks()
            .map(|d| (d * tick.0) as f64 / self.quote_price.0 as f64)
    }
}

pub fn classify_placement(event: &Event, before: &BookView, tick: Price) -> Result<PlacementSample, ObservableError> {
    if event.kind != EventKind::Add {
        return Err(ObservableError::NotAnAdd(event.kind));
    }
    let side = event.side.ok_or(ObservableError::NotAnAdd(event.kind))?;
    let p = event.price.0;
    let (bid, ask) = (before.best_bid.0, before.best_ask.0);
    let (quote, inside, crossing) = match side {
        Side::Buy => (bid, p - bid, p >= ask),
        Side::Sell => (ask, ask - p, p <= bid),
    };
    if crossing {
        return Err(ObservableError::Crossing {
            side,
            price: event.price,
        });
    }
    let (kind, offset) = if inside > 0 {
        (PlacementKind::InSpread, inside / tick.0)
    } else if inside == 0 {
        (PlacementKind::OnQuote, 0)
    } else {
        (PlacementKind::OffSpread, -inside / tick.0)
    };
    Ok(PlacementSample {
        kind,
        side,
        offset_ticks: offset,
        prior_spread_ticks: before.spread_ticks,
        quote_price: Price(quote),
    })
}

/// Collects a placement sample for every add that meets a two-sided book.
#[derive(Debug, Clone)]
pub struct PlacementCollector {
    tick: Price,
    pub samples: Vec<PlacementSample>,
    /// Adds arriving while a side was empty.
    pub unclassified: u64,
    pub crossing: u64,
}

impl PlacementCollector {
    pub fn new(tick: Price) -> Self {
        PlacementCollector {
            tick,
            samples: Vec::new(),
            unclassified: 0,
            crossing: 0,
        }
    }
}

impl ReplayObserver for PlacementCollector {
    #[inline]
    fn on_event(&mut self, _index: usize, ev: &Event, before: Option<&BookView>, _after: Option<&BookView>) {
        if ev.kind != EventKind::Add {
            return;
        }
        match before {
            None => self.unclassified += 1,
            Some(view) => match classify_placement(ev, view, self.tick) {
                Ok(s) => self.samples.push(s),
                Err(_) => self.crossing += 1,
            },
        }
    }
}

/// Tracks which in-session adds receive at least one execution.
#[derive(Debug, Clone, Default)]
pub struct ActivityTracker {
    executed: FxHashMap<u64, bool>,
    pub adds: u64,
    pub active: u64,
}

impl ReplayObserver for ActivityTracker {
    #[inline]
    fn on_event(&mut self, _index: usize, ev: &Event, _before: Option<&BookView>, _after: Option<&BookView>) {
        match ev.kind {
            EventKind::Add => {
                self.adds += 1;
                self.executed.insert(ev.order_id, false);
            }
            EventKind::ExecuteFull | EventKind::ExecutePartial => {
                if let Some(hit) = self.executed.get_mut(&ev.order_id) {
                    if !*hit {
                        *hit = true;
                        self.active += 1;
                    }
                }
            }
            EventKind::Delete => {
                self.executed.remove(&ev.order_id);
            }
            _ => {}
        }
    }
}

/// Raw counts behind [`FrequencySummary`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FrequencyCounts {
    pub market_orders: u64,
    pub undirected_market_orders: u64,
    pub adds: u64,
    pub active_adds: u64,
    pub in_spread_adds: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl FrequencyCounts {
    pub fn summary(&self) -> FrequencySummary {
        FrequencySummary {
            mou: ratio(self.undirected_market_orders, self.market_orders),
            mo: ratio(self.market_orders, self.market_orders + self.adds),
            act: ratio(self.active_adds, self.adds),
            sprd: ratio(self.in_spread_adds, self.adds),
        }
    }

    /// Daily order count: limit-order adds plus market orders.
    pub fn order_count(&self) -> u64 {
        self.adds + self.market_orders
    }
}

/// Relative frequencies; `None` when the denominator is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencySummary {
    /// Undirected market orders among all market orders.
    pub mou: Option<f64>,
    /// Market orders among all orders.
    pub mo: Option<f64>,
    /// Adds with at least one execution among all adds.
    pub act: Option<f64>,
    /// In-spread adds among all adds.
    pub sprd: Option<f64>,
}

pub fn frequency_counts(
    market_orders: &[MarketOrder],
    placements: &[PlacementSample],
    activity: &ActivityTracker,
) -> FrequencyCounts {
    FrequencyCounts {
        market_orders: market_orders.len() as u64,
        undirected_market_orders: market_orders.iter().filter(|m| !m.is_directed()).count() as u64,
        adds: activity.adds,
        active_adds: activity.active,
        in_spread_adds: placements
            .iter()
            .filter(|p| p.kind == PlacementKind::InSpread)
            .count() as u64,
    }
}

/// Share of on-quote placements among off-spread and on-quote placements.
pub fn onquote_share(samples: &[PlacementSample], side: Side) -> Option<f64> {
    let (on, total) = samples
        .iter()
        .filter(|s| s.side == side && s.kind != PlacementKind::InSpread)
        .fold((0u64, 0u64), |(on, t), s| (on + u64::from(s.kind == PlacementKind::OnQuote), t + 1));
    ratio(on, total)
}

/// Quote the market order removes liquidity from, before it arrived.
fn hit_quote(mo: &MarketOrder) -> Result<(Side, u64), ObservableError> {
    let side = mo.side.side().ok_or(ObservableError::Undirected)?;
    let before = mo.book_before.as_ref().ok_or(ObservableError::OneSided)?;
    let resting = side.opposite();
    Ok((resting, before.quote(resting).volume))
}

/// Visible market-order volume over the volume at the quote it hits.
pub fn relative_mo_volume(mo: &MarketOrder) -> Result<f64, ObservableError> {
    let (_, quote_volume) = hit_quote(mo)?;
    Ok(mo.visible_volume as f64 / quote_volume as f64)
}

/// Midpoint return across the market order.
pub fn impact_return(mo: &MarketOrder) -> Result<f64, ObservableError> {
    let before = mo.book_before.as_ref().ok_or(ObservableError::OneSided)?;
    let after = mo.book_after.as_ref().ok_or(ObservableError::OneSided)?;
    Ok(midpoint_return(before.midpoint_x2(), after.midpoint_x2()))
}

#[inline]
pub fn midpoint_return(before: MidpointX2, after: MidpointX2) -> f64 {
    (after.0 - before.0) as f64 / before.0 as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImpactSample {
    pub first_ts: u64,
    pub side: Side,
    pub visible_volume: u64,
    pub quote_volume: u64,
    pub relative_volume: f64,
    #[serde(rename = "return")]
    pub ret: f64,
    /// Gap behind the hit quote before the order, in ticks.
    pub gap_ticks: i64,
    pub midpoint_before_x2: MidpointX2,
    pub midpoint_after_x2: MidpointX2,
    pub hidden_trades: usize,
}

impl ImpactSample {
    pub fn moved_midpoint(&self) -> bool {
        self.midpoint_after_x2 != self.midpoint_before_x2
    }
}

/// Impact samples for directed market orders with two-sided book context and
/// a known gap behind the hit quote. Orders mixing hidden and visible trades
/// are kept unless `exclude_mixed_hidden` is set.
pub fn impact_samples(orders: &[MarketOrder], exclude_mixed_hidden: bool) -> Vec<ImpactSample> {
    orders
        .iter()
        .filter(|o| o.side != MoSide::Undirected)
        .filter(|o| !(exclude_mixed_hidden && o.has_hidden()))
        .filter_map(|o| {
            let (resting, quote_volume) = hit_quote(o).ok()?;
            let before = o.book_before?;
            let after = o.book_after?;
            let gap = before.gap_behind(resting)?;
            Some(ImpactSample {
                first_ts: o.first_ts,
                side: resting.opposite(),
                visible_volume: o.visible_volume,
                quote_volume,
                relative_volume: o.visible_volume as f64 / quote_volume as f64,
                ret: midpoint_return(before.midpoint_x2(), after.midpoint_x2()),
                gap_ticks: gap,
                midpoint_before_x2: before.midpoint_x2(),
                midpoint_after_x2: after.midpoint_x2(),
                hidden_trades: o.hidden_trades,
            })
        })
        .collect()
}

/// Pearson correlation; `None` with fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between market-order visible volume and the hit quote volume,
/// optionally restricted to orders that moved the midpoint.
pub fn volume_quote_correlation(samples: &[ImpactSample], only_midpoint_movers: bool) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter(|s| !only_midpoint_movers || s.moved_midpoint())
        .map(|s| (s.visible_volume as f64, s.quote_volume as f64))
        .unzip();
    pearson(&xs, &ys)
}

/// Shares of relative volumes below, at and above one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelativeVolumeSplit {
    pub below: f64,
    pub equal: f64,
    pub above: f64,
}

pub fn relative_volume_split(samples: &[ImpactSample]) -> Option<RelativeVolumeSplit> {
    let n = samples.len();
    if n == 0 {
        return None;
    }
    let (mut below, mut equal) = (0usize, 0usize);
    for s in samples {
        match s.visible_volume.cmp(&s.quote_volume) {
            std::cmp::Ordering::Less => below += 1,
            std::cmp::Ordering::Equal => equal += 1,
            std::cmp::Ordering::Greater => {}
        }
    }
    let n = n as f64;
    Some(RelativeVolumeSplit {
        below: below as f64 / n,
        equal: equal as f64 / n,
        above: 1.0 - (below + equal) as f64 / n,
    })
}
