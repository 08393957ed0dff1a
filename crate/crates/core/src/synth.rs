//! Seeded synthetic order flow with ground truth.
//!
//! Flow is zero-intelligence style: limit orders arrive at a constant rate,
//! each resting order is cancelled at a constant per-order rate, and market
//! orders arrive at a constant rate and are written out as the trades they
//! cause against the standing book (price-time priority, one millisecond).
//! Regimes differ in where limit orders are placed, which controls spread
//! and depth structure.

use std::ops::Range;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::Book;
use crate::ingest::InstrumentDay;
use crate::model::{Event, EventKind, Price, SessionConfig, Side};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("parameter {name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("{0}")]
    Inconsistent(&'static str),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("bad date {0:?}, expected YYYYMMDD")]
    BadDate(String),
    #[error("generated stream rejected by the book: {0}")]
    Book(String),
}

/// Generator parameters for one instrument-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeParams {
    /// Ground-truth label written to the sidecar file.
    pub regime: String,
    pub ticker: String,
    /// `YYYYMMDD`.
    pub date: String,
    pub seed: u64,

    /// Limit-order arrivals per second.
    pub add_rate: f64,
    /// Cancellation rate per resting order per second.
    pub cancel_rate: f64,
    /// Market-order arrivals per second.
    pub market_order_rate: f64,
    /// Share of cancellations that only reduce volume.
    pub partial_cancel_prob: f64,

    /// Probability that an add goes inside the spread when the spread allows it.
    pub in_spread_prob: f64,
    /// In-spread offset `k` ticks from the same-side quote has weight
    /// `k^in_spread_shape * in_spread_decay^k`, `1 <= k < spread`.
    pub in_spread_shape: f64,
    pub in_spread_decay: f64,
    /// Above this spread every add goes inside it.
    pub max_spread_ticks: u32,
    /// Probability that a non-in-spread add joins the quote.
    pub onquote_prob: f64,
    /// Off-spread depth `d >= 1` behind the quote is geometric: `P(d) ~ depth_decay^(d-1)`.
    pub depth_decay: f64,
    pub max_depth: u32,

    /// Probability that a market order takes exactly the quote volume.
    pub mo_exact_prob: f64,
    /// Probability that it takes more than the quote volume.
    pub mo_exceed_prob: f64,
    /// Probability that a market order trades against hidden liquidity only;
    /// the same probability adds one hidden trade in front of a visible one.
    pub hidden_rate: f64,
    /// Lets market orders follow each other without an intervening message.
    /// Such neighbours may legitimately merge during reconstruction.
    pub allow_adjacent_market_orders: bool,

    pub lot: u64,
    pub size_min_lots: u64,
    pub size_max_lots: u64,

    /// Price units; multiple of `tick`.
    pub base_price: i64,
    pub tick: i64,
    pub initial_spread_ticks: u32,
    pub initial_levels: u32,
    pub initial_orders_per_level: u32,
    /// Stop after this many session events.
    pub max_events: Option<usize>,
}

impl Default for RegimeParams {
    fn default() -> Self {
        RegimeParams {
            regime: "custom".into(),
            ticker: "SYN".into(),
            date: "20160307".into(),
            seed: 0,
            add_rate: 2.0,
            cancel_rate: 0.02,
            market_order_rate: 0.08,
            partial_cancel_prob: 0.1,
            in_spread_prob: 0.3,
            in_spread_shape: 0.0,
            in_spread_decay: 0.5,
            max_spread_ticks: 50,
            onquote_prob: 0.4,
            depth_decay: 0.5,
            max_depth: 30,
            mo_exact_prob: 0.4,
            mo_exceed_prob: 0.06,
            hidden_rate: 0.0,
            allow_adjacent_market_orders: false,
            lot: 100,
            size_min_lots: 1,
            size_max_lots: 5,
            base_price: 1_000_000,
            tick: 100,
            initial_spread_ticks: 1,
            initial_levels: 10,
            initial_orders_per_level: 3,
            max_events: None,
        }
    }
}

pub const PRESETS: [&str; 4] = ["large_tick", "narrow_spread", "wide_spread", "small_tick"];

impl RegimeParams {
    /// Named regimes, from tick-constrained to wide-spread books.
    pub fn preset(name: &str) -> Result<RegimeParams, SynthError> {
        let base = RegimeParams {
            regime: name.to_string(),
            ..RegimeParams::default()
        };
        Ok(match name {
            "large_tick" => RegimeParams {
                add_rate: 3.0,
                cancel_rate: 0.01,
                market_order_rate: 0.12,
                in_spread_prob: 0.7,
                onquote_prob: 0.55,
                depth_decay: 0.35,
                max_depth: 10,
                initial_levels: 12,
                initial_orders_per_level: 4,
                ..base
            },
            "narrow_spread" => RegimeParams {
                add_rate: 1.0,
                cancel_rate: 0.05,
                market_order_rate: 0.1,
                in_spread_prob: 0.4,
                in_spread_shape: 0.0,
                in_spread_decay: 0.5,
                onquote_prob: 0.1,
                depth_decay: 0.85,
                max_depth: 40,
                max_spread_ticks: 20,
                initial_spread_ticks: 2,
                ..base
            },
            "wide_spread" => RegimeParams {
                add_rate: 1.0,
                cancel_rate: 0.08,
                market_order_rate: 0.1,
                in_spread_prob: 0.3,
                in_spread_shape: 1.0,
                in_spread_decay: 0.5,
                onquote_prob: 0.05,
                depth_decay: 0.9,
                max_depth: 60,
                max_spread_ticks: 20,
                initial_spread_ticks: 4,
                ..base
            },
            "small_tick" => RegimeParams {
                add_rate: 1.0,
                cancel_rate: 0.1,
                market_order_rate: 0.1,
                in_spread_prob: 0.1,
                in_spread_shape: 2.0,
                in_spread_decay: 0.35,
                onquote_prob: 0.03,
                depth_decay: 0.9,
                max_depth: 60,
                max_spread_ticks: 20,
                initial_spread_ticks: 10,
                initial_levels: 15,
                initial_orders_per_level: 1,
                ..base
            },
            other => return Err(SynthError::UnknownPreset(other.to_string())),
        })
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let prob = |name: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SynthError::OutOfRange {
                    name,
                    value: v,
                    range: "[0, 1]",
                })
            }
        };
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SynthError::OutOfRange {
                    name,
                    value: v,
                    range: "(0, inf)",
                })
            }
        };
        let open_unit = |name: &'static str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(SynthError::OutOfRange {
                    name,
                    value: v,
                    range: "(0, 1)",
                })
            }
        };
        positive("add_rate", self.add_rate)?;
        positive("cancel_rate", self.cancel_rate)?;
        positive("market_order_rate", self.market_order_rate)?;
        prob("partial_cancel_prob", self.partial_cancel_prob)?;
        prob("in_spread_prob", self.in_spread_prob)?;
        prob("onquote_prob", self.onquote_prob)?;
        prob("mo_exact_prob", self.mo_exact_prob)?;
        prob("mo_exceed_prob", self.mo_exceed_prob)?;
        prob("hidden_rate", self.hidden_rate)?;
        open_unit("depth_decay", self.depth_decay)?;
        open_unit("in_spread_decay", self.in_spread_decay)?;
        if !(self.in_spread_shape.is_finite() && self.in_spread_shape >= 0.0) {
            return Err(SynthError::OutOfRange {
                name: "in_spread_shape",
                value: self.in_spread_shape,
                range: "[0, inf)",
            });
        }
        if self.mo_exact_prob + self.mo_exceed_prob > 1.0 {
            return Err(SynthError::Inconsistent("mo_exact_prob + mo_exceed_prob exceeds 1"));
        }
        if self.tick <= 0 || self.base_price <= 0 || self.base_price % self.tick != 0 {
            return Err(SynthError::Inconsistent("base_price must be a positive multiple of a positive tick"));
        }
        if self.lot == 0 || self.size_min_lots == 0 || self.size_min_lots > self.size_max_lots {
            return Err(SynthError::Inconsistent("order sizes need 1 <= size_min_lots <= size_max_lots and lot >= 1"));
        }
        if self.max_depth == 0 || self.initial_spread_ticks == 0 || self.max_spread_ticks < 2 {
            return Err(SynthError::Inconsistent(
                "max_depth and initial_spread_ticks must be positive, max_spread_ticks at least 2",
            ));
        }
        if self.initial_levels < 2 || self.initial_orders_per_level == 0 {
            return Err(SynthError::Inconsistent("need at least 2 initial levels with one order each"));
        }
        let depth_room = (self.initial_levels as i64 + self.max_depth as i64 + 2) * self.tick;
        if self.base_price <= depth_room {
            return Err(SynthError::Inconsistent("base_price too low for the book depth"));
        }
        self.parsed_date()?;
        Ok(())
    }

    fn parsed_date(&self) -> Result<NaiveDate, SynthError> {
        NaiveDate::parse_from_str(&self.date, "%Y%m%d").map_err(|_| SynthError::BadDate(self.date.clone()))
    }
}

/// One market order as emitted by the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueMarketOrder {
    /// Index range into the session events.
    pub events: Range<usize>,
    pub side: Side,
    pub all_hidden: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub regime: String,
    pub ticker: String,
    pub date: String,
    pub seed: u64,
    pub market_orders: Vec<TrueMarketOrder>,
}

impl GroundTruth {
    pub fn all_hidden_count(&self) -> usize {
        self.market_orders.iter().filter(|m| m.all_hidden).count()
    }
}

/// Random access to live order ids.
#[derive(Default)]
struct LiveSet {
    ids: Vec<u64>,
    pos: FxHashMap<u64, usize>,
}

impl LiveSet {
    fn insert(&mut self, id: u64) {
        self.pos.insert(id, self.ids.len());
        self.ids.push(id);
    }

    fn remove(&mut self, id: u64) {
        if let Some(i) = self.pos.remove(&id) {
            self.ids.swap_remove(i);
            if let Some(&moved) = self.ids.get(i) {
                self.pos.insert(moved, i);
            }
        }
    }

    fn len(&self) -> usize {
        self.ids.len()
    }
}

struct Generator<'a> {
    p: &'a RegimeParams,
    rng: ChaCha8Rng,
    book: Book,
    live: LiveSet,
    side_counts: [usize; 2],
    next_id: u64,
    warmup: Vec<Event>,
    events: Vec<Event>,
    truth: Vec<TrueMarketOrder>,
    in_session: bool,
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Buy => 0,
        Side::Sell => 1,
    }
}

impl Generator<'_> {
    fn emit(&mut self, ev: Event) -> Result<(), SynthError> {
        self.book.apply(&ev).map_err(|e| SynthError::Book(e.to_string()))?;
        if let Some(side) = ev.side {
            match ev.kind {
                EventKind::Add => {
                    self.live.insert(ev.order_id);
                    self.side_counts[side_index(side)] += 1;
                }
                EventKind::Delete | EventKind::ExecuteFull => {
                    self.live.remove(ev.order_id);
                    self.side_counts[side_index(side)] -= 1;
                }
                EventKind::CancelPartial | EventKind::ExecutePartial => {
                    if self.book.order(ev.order_id).is_none() {
                        self.live.remove(ev.order_id);
                        self.side_counts[side_index(side)] -= 1;
                    }
                }
                EventKind::ExecuteHidden => {}
            }
        }
        if self.in_session {
            self.events.push(ev);
        } else {
            self.warmup.push(ev);
        }
        Ok(())
    }

    fn order_size(&mut self) -> u64 {
        self.p.lot * self.rng.random_range(self.p.size_min_lots..=self.p.size_max_lots)
    }

    fn add(&mut self, ts: u64, side: Side, price: i64) -> Result<(), SynthError> {
        let volume = self.order_size();
        let id = self.next_id;
        self.next_id += 1;
        self.emit(Event {
            timestamp_ms: ts,
            kind: EventKind::Add,
            order_id: id,
            side: Some(side),
            price: Price(price),
            volume,
        })
    }

    fn initial_book(&mut self, ts: u64) -> Result<(), SynthError> {
        let tick = self.p.tick;
        let half_up = (self.p.initial_spread_ticks as i64 + 1) / 2;
        let ask0 = self.p.base_price + half_up * tick;
        let bid0 = ask0 - self.p.initial_spread_ticks as i64 * tick;
        for level in 0..self.p.initial_levels as i64 {
            for _ in 0..self.p.initial_orders_per_level {
                self.add(ts, Side::Buy, bid0 - level * tick)?;
                self.add(ts, Side::Sell, ask0 + level * tick)?;
            }
        }
        Ok(())
    }

    fn in_spread_offset(&mut self, spread: i64) -> i64 {
        let weights: Vec<f64> = (1..spread)
            .map(|k| (k as f64).powf(self.p.in_spread_shape) * self.p.in_spread_decay.powi(k as i32))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut r = self.rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            r -= w;
            if r < 0.0 {
                return i as i64 + 1;
            }
        }
        weights.len() as i64
    }

    fn depth(&mut self) -> i64 {
        let mut d = 1;
        while d < self.p.max_depth as i64 && self.rng.random::<f64>() < self.p.depth_decay {
            d += 1;
        }
        d
    }

    fn limit_order(&mut self, ts: u64) -> Result<(), SynthError> {
        let view = self.book.view().map_err(|e| SynthError::Book(e.to_string()))?;
        let side = if self.rng.random::<bool>() { Side::Buy } else { Side::Sell };
        let tick = self.p.tick;
        let sign = match side {
            Side::Buy => 1,
            Side::Sell => -1,
        };
        let quote = view.quote(side).price.0;
        let in_spread = view.spread_ticks > self.p.max_spread_ticks as i64
            || (view.spread_ticks >= 2 && self.rng.random::<f64>() < self.p.in_spread_prob);
        let offset = if in_spread {
            self.in_spread_offset(view.spread_ticks)
        } else if self.rng.random::<f64>() < self.p.onquote_prob {
            0
        } else {
            -self.depth()
        };
        let price = (quote + sign * offset * tick).max(tick);
        self.add(ts, side, price)
    }

    fn cancel(&mut self, ts: u64) -> Result<bool, SynthError> {
        let id = self.live.ids[self.rng.random_range(0..self.live.len())];
        let (side, price, remaining) = self.book.order(id).expect("live set mirrors the book");
        let partial = remaining > 1 && self.rng.random::<f64>() < self.p.partial_cancel_prob;
        if !partial && self.side_counts[side_index(side)] <= 1 {
            return Ok(false);
        }
        let (kind, volume) = if partial {
            let v = self.rng.random_range(1..remaining);
            (EventKind::CancelPartial, v)
        } else {
            (EventKind::Delete, remaining)
        };
        self.emit(Event {
            timestamp_ms: ts,
            kind,
            order_id: id,
            side: Some(side),
            price,
            volume,
        })?;
        Ok(true)
    }

    fn hidden_trade(&self, ts: u64, price: Price) -> Event {
        Event {
            timestamp_ms: ts,
            kind: EventKind::ExecuteHidden,
            order_id: 0,
            side: None,
            price,
            volume: self.p.lot,
        }
    }

    /// Emits the trades of one market order. Returns false when the book is
    /// too thin on the hit side to take one without emptying it.
    fn market_order(&mut self, ts: u64) -> Result<bool, SynthError> {
        let aggressor = if self.rng.random::<bool>() { Side::Buy } else { Side::Sell };
        let resting = aggressor.opposite();
        let levels = self.book.levels_from_quote(resting);
        if levels.len() < 2 {
            return Ok(false);
        }
        let start = self.events.len();
        let quote = levels[0];

        if self.rng.random::<f64>() < self.p.hidden_rate {
            let n = self.rng.random_range(1..=2);
            for _ in 0..n {
                let ev = self.hidden_trade(ts, quote.price);
                self.emit(ev)?;
            }
            self.truth.push(TrueMarketOrder {
                events: start..self.events.len(),
                side: aggressor,
                all_hidden: true,
            });
            return Ok(true);
        }

        let u = self.rng.random::<f64>();
        let mut volume = if u < self.p.mo_exact_prob || quote.volume == 1 {
            quote.volume
        } else if u < self.p.mo_exact_prob + self.p.mo_exceed_prob && levels.len() >= 3 {
            quote.volume + self.rng.random_range(1..=levels[1].volume)
        } else if u < self.p.mo_exact_prob + self.p.mo_exceed_prob {
            quote.volume
        } else {
            self.rng.random_range(1..quote.volume)
        };

        if self.rng.random::<f64>() < self.p.hidden_rate {
            let ev = self.hidden_trade(ts, quote.price);
            self.emit(ev)?;
        }
        'levels: for level in &levels {
            for (id, remaining) in self.book.queue_at(resting, level.price) {
                let (kind, take) = if remaining <= volume {
                    (EventKind::ExecuteFull, remaining)
                } else {
                    (EventKind::ExecutePartial, volume)
                };
                self.emit(Event {
                    timestamp_ms: ts,
                    kind,
                    order_id: id,
                    side: Some(resting),
                    price: level.price,
                    volume: take,
                })?;
                volume -= take;
                if volume == 0 {
                    break 'levels;
                }
            }
        }
        self.truth.push(TrueMarketOrder {
            events: start..self.events.len(),
            side: aggressor,
            all_hidden: false,
        });
        Ok(true)
    }
}

/// Generates one instrument-day under `session`. The initial book is laid
/// down thirty minutes before the session start as warmup messages.
pub fn generate_instrument_day_with(
    params: &RegimeParams,
    session: &SessionConfig,
) -> Result<(InstrumentDay, GroundTruth), SynthError> {
    params.validate()?;
    let date = params.parsed_date()?;
    let mut g = Generator {
        p: params,
        rng: ChaCha8Rng::seed_from_u64(params.seed),
        book: Book::new(Price(params.tick)),
        live: LiveSet::default(),
        side_counts: [0, 0],
        next_id: 1,
        warmup: Vec::new(),
        events: Vec::new(),
        truth: Vec::new(),
        in_session: false,
    };
    g.initial_book(session.session_start_ms.saturating_sub(30 * 60_000))?;
    g.in_session = true;

    let mut t = session.session_start_ms as f64;
    let mut last_was_mo = false;
    let max_events = params.max_events.unwrap_or(usize::MAX);
    loop {
        let n_live = g.live.len() as f64;
        let total = params.add_rate + params.cancel_rate * n_live + params.market_order_rate;
        let dt_s = Exp::new(total).expect("positive rate").sample(&mut g.rng);
        t += dt_s * 1000.0;
        let ts = t as u64;
        if ts >= session.session_end_ms || g.events.len() >= max_events {
            break;
        }
        let u = g.rng.random::<f64>() * total;
        let mut done = false;
        if u >= params.add_rate + params.cancel_rate * n_live
            && (params.allow_adjacent_market_orders || !last_was_mo)
        {
            done = g.market_order(ts)?;
            last_was_mo = done;
        } else if u >= params.add_rate && u < params.add_rate + params.cancel_rate * n_live {
            done = g.cancel(ts)?;
            last_was_mo &= !done;
        }
        if !done {
            g.limit_order(ts)?;
            last_was_mo = false;
        }
    }

    let truth = GroundTruth {
        regime: params.regime.clone(),
        ticker: params.ticker.clone(),
        date: params.date.clone(),
        seed: params.seed,
        market_orders: g.truth,
    };
    Ok((
        InstrumentDay {
            ticker: params.ticker.clone(),
            date,
            warmup: g.warmup,
            events: g.events,
        },
        truth,
    ))
}

/// Generates one instrument-day over the default 10:00 to 15:30 session.
pub fn generate_instrument_day(params: &RegimeParams) -> Result<(InstrumentDay, GroundTruth), SynthError> {
    let session = SessionConfig {
        tick: Price(params.tick),
        ..SessionConfig::default()
    };
    generate_instrument_day_with(params, &session)
}

/// Seed for cohort member `index`, decorrelated from the master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n_per_regime` instrument-days for each regime, regime-major order. Each
/// member gets its own ticker `SYNnnn` and a derived seed.
pub fn generate_cohort(
    n_per_regime: usize,
    regimes: &[RegimeParams],
    seed: u64,
) -> Result<Vec<(InstrumentDay, GroundTruth)>, SynthError> {
    let members: Vec<RegimeParams> = regimes
        .iter()
        .flat_map(|r| std::iter::repeat_n(r, n_per_regime))
        .enumerate()
        .map(|(i, r)| RegimeParams {
            seed: derive_seed(seed, i as u64),
            ticker: format!("SYN{i:04}"),
            ..r.clone()
        })
        .collect();
    members.par_iter().map(generate_instrument_day).collect()
}
