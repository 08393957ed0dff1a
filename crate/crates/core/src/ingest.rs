//! Message-file parsing and stream validation.
//!
//! One event per LF-terminated line, six comma-separated integer columns:
//! `timestamp_ms,type,order_id,volume,price,direction`. Parsing is strict:
//! integers must be canonical (no sign on unsigned columns, no leading
//! zeros) so that a parsed stream formats back to the identical bytes.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rustc_hash::FxHashMap;
use serde::Serialize;
use thiserror::Error;

use crate::model::{in_session, Event, EventKind, Price, SessionConfig, Side};

const MAX_EXAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("expected 6 columns, found {0}")]
    ColumnCount(usize),
    #[error("column {column}: {text:?} is not a canonical integer")]
    NotInteger { column: usize, text: String },
    #[error("unknown type code {0}")]
    UnknownType(i64),
    #[error("volume must be positive")]
    NonPositiveVolume,
    #[error("price must be positive, got {0}")]
    NonPositivePrice(i64),
    #[error("direction must be 1, -1 or 0, got {0}")]
    BadDirection(i64),
    #[error("direction 0 is only valid for hidden executions (type 5)")]
    MissingDirection,
    #[error("hidden executions carry direction 0 and order id 0")]
    HiddenWithReference,
    #[error("order id must be positive")]
    ZeroOrderId,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: ParseError,
    },
    #[error("{0}: empty input, no messages")]
    Empty(PathBuf),
    #[error("{0}: file name must look like YYYYMMDD_TICKER.csv")]
    BadFileName(PathBuf),
    #[error("{path}: stream failed validation ({summary})", summary = report.summary())]
    Validation {
        path: PathBuf,
        report: Box<ValidationReport>,
    },
}

/// All messages of one instrument on one day.
///
/// `warmup` holds the messages before the session start. They are replayed
/// into the book so the opening book is complete, but never enter statistics.
/// Messages at or after the session end are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentDay {
    pub ticker: String,
    pub date: NaiveDate,
    pub warmup: Vec<Event>,
    pub events: Vec<Event>,
}

impl InstrumentDay {
    /// Data-set key such as `20160307_AAPL`.
    pub fn key(&self) -> String {
        format!("{}_{}", self.date.format("%Y%m%d"), self.ticker)
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.key())
    }

    /// Writes warmup and session messages in the message-file format.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut line = String::with_capacity(64);
        for ev in self.warmup.iter().chain(&self.events) {
            line.clear();
            push_message_line(&mut line, ev);
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct KindCounts {
    pub add: u64,
    pub cancel_partial: u64,
    pub delete: u64,
    pub execute_full: u64,
    pub execute_hidden: u64,
    pub execute_partial: u64,
}

impl KindCounts {
    pub fn record(&mut self, kind: EventKind) {
        match kind {
            EventKind::Add => self.add += 1,
            EventKind::CancelPartial => self.cancel_partial += 1,
            EventKind::Delete => self.delete += 1,
            EventKind::ExecuteFull => self.execute_full += 1,
            EventKind::ExecuteHidden => self.execute_hidden += 1,
            EventKind::ExecutePartial => self.execute_partial += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.add
            + self.cancel_partial
            + self.delete
            + self.execute_full
            + self.execute_hidden
            + self.execute_partial
    }
}

/// A problem found while validating, with its 1-based position in the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub line: usize,
    pub order_id: u64,
    pub reason: &'static str,
}

/// Outcome of validating one stream. Counts cover in-session events only;
/// integrity checks cover the whole file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub counts: KindCounts,
    pub dropped_pre_session: u64,
    pub dropped_post_session: u64,
    /// Delete/cancel/execute against an id that is not live.
    pub orphans: u64,
    /// Visible prices off the tick grid.
    pub price_grid_violations: u64,
    pub duplicate_ids: u64,
    /// Side, price or volume disagrees with the referenced order.
    pub mismatches: u64,
    pub timestamp_regressions: u64,
    /// Partial cancels/executions that removed the whole remaining volume.
    /// Accepted and treated like a delete/full execution.
    pub exhausting_partials: u64,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn dropped(&self) -> u64 {
        self.dropped_pre_session + self.dropped_post_session
    }

    pub fn is_accepted(&self) -> bool {
        self.orphans == 0
            && self.price_grid_violations == 0
            && self.duplicate_ids == 0
            && self.mismatches == 0
            && self.timestamp_regressions == 0
    }

    pub fn summary(&self) -> String {
        format!(
            "orphans={} grid={} duplicates={} mismatches={} regressions={}",
            self.orphans,
            self.price_grid_violations,
            self.duplicate_ids,
            self.mismatches,
            self.timestamp_regressions
        )
    }

    fn note(&mut self, line: usize, order_id: u64, reason: &'static str) {
        if self.findings.len() < MAX_EXAMPLES {
            self.findings.push(Finding {
                line,
                order_id,
                reason,
            });
        }
    }
}

#[inline]
fn parse_unsigned(field: &str, column: usize) -> Result<u64, ParseError> {
    let bytes = field.as_bytes();
    let canonical = !bytes.is_empty()
        && bytes.iter().all(u8::is_ascii_digit)
        && (bytes[0] != b'0' || bytes.len() == 1);
    canonical
        .then(|| {
            bytes.iter().try_fold(0u64, |acc, b| {
                acc.checked_mul(10)?.checked_add(u64::from(b - b'0'))
            })
        })
        .flatten()
        .ok_or_else(|| ParseError::NotInteger {
            column,
            text: field.to_string(),
        })
}

#[inline]
fn parse_signed(field: &str, column: usize) -> Result<i64, ParseError> {
    match field.strip_prefix('-') {
        Some(rest) if rest != "0" => parse_unsigned(rest, column)
            .ok()
            .and_then(|v| i64::try_from(v).ok())
            .map(|v| -v),
        Some(_) => None,
        None => parse_unsigned(field, column)
            .ok()
            .and_then(|v| i64::try_from(v).ok()),
    }
    .ok_or_else(|| ParseError::NotInteger {
        column,
        text: field.to_string(),
    })
}

/// Parses one message line (without the trailing newline).
pub fn parse_message_line(line: &str) -> Result<Event, ParseError> {
    let mut fields = [""; 6];
    let mut n = 0;
    for field in line.split(',') {
        if n == 6 {
            return Err(ParseError::ColumnCount(line.split(',').count()));
        }
        fields[n] = field;
        n += 1;
    }
    if n != 6 {
        return Err(ParseError::ColumnCount(n));
    }

    let timestamp_ms = parse_unsigned(fields[0], 1)?;
    let code = parse_signed(fields[1], 2)?;
    let kind = u8::try_from(code)
        .ok()
        .and_then(EventKind::from_code)
        .ok_or(ParseError::UnknownType(code))?;
    let order_id = parse_unsigned(fields[2], 3)?;
    let volume = parse_unsigned(fields[3], 4)?;
    let price = parse_signed(fields[4], 5)?;
    let direction = parse_signed(fields[5], 6)?;

    if volume == 0 {
        return Err(ParseError::NonPositiveVolume);
    }
    if price <= 0 {
        return Err(ParseError::NonPositivePrice(price));
    }
    let side = match direction {
        1 => Some(Side::Buy),
        -1 => Some(Side::Sell),
        0 => None,
        other => return Err(ParseError::BadDirection(other)),
    };
    if kind == EventKind::ExecuteHidden {
        if side.is_some() || order_id != 0 {
            return Err(ParseError::HiddenWithReference);
        }
    } else {
        if side.is_none() {
            return Err(ParseError::MissingDirection);
        }
        if order_id == 0 {
            return Err(ParseError::ZeroOrderId);
        }
    }

    Ok(Event {
        timestamp_ms,
        kind,
        order_id,
        side,
        price: Price(price),
        volume,
    })
}

/// Appends the message-file representation of `ev` (no newline).
pub fn push_message_line(buf: &mut String, ev: &Event) {
    let direction = match ev.side {
        Some(Side::Buy) => 1,
        Some(Side::Sell) => -1,
        None => 0,
    };
    let _ = write!(
        buf,
        "{},{},{},{},{},{}",
        ev.timestamp_ms,
        ev.kind.code(),
        ev.order_id,
        ev.volume,
        ev.price.0,
        direction
    );
}

pub fn format_message_line(ev: &Event) -> String {
    let mut s = String::with_capacity(48);
    push_message_line(&mut s, ev);
    s
}

/// Splits `20160307_AAPL.csv` into its date and ticker.
pub fn parse_file_name(path: &Path) -> Option<(NaiveDate, String)> {
    let stem = path.file_stem()?.to_str()?;
    if path.extension().and_then(|e| e.to_str()) != Some("csv") {
        return None;
    }
    let (date, ticker) = stem.split_once('_')?;
    if date.len() != 8 || ticker.is_empty() {
        return None;
    }
    if !ticker
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '-')
    {
        return None;
    }
    let date = NaiveDate::parse_from_str(date, "%Y%m%d").ok()?;
    Some((date, ticker.to_string()))
}

#[derive(Clone, Copy)]
struct LiveOrder {
    side: Side,
    price: Price,
    remaining: u64,
}

/// Checks referential integrity, tick grid and ordering over the full stream
/// (`warmup` then `events`). Kind counts cover `events` only.
pub fn validate_stream(warmup: &[Event], events: &[Event], config: &SessionConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut live: FxHashMap<u64, LiveOrder> = FxHashMap::default();
    let mut last_ts = 0u64;

    for (i, ev) in warmup.iter().chain(events).enumerate() {
        let line = i + 1;
        if i >= warmup.len() {
            report.counts.record(ev.kind);
        }
        if ev.timestamp_ms < last_ts {
            report.timestamp_regressions += 1;
            report.note(line, ev.order_id, "timestamp regression");
        }
        last_ts = last_ts.max(ev.timestamp_ms);

        match ev.kind {
            EventKind::Add => {
                let side = ev.side.expect("parser guarantees a side for adds");
                if !ev.price.is_on_grid(config.tick) {
                    report.price_grid_violations += 1;
                    report.note(line, ev.order_id, "price off tick grid");
                }
                if live.contains_key(&ev.order_id) {
                    report.duplicate_ids += 1;
                    report.note(line, ev.order_id, "duplicate live order id");
                    continue;
                }
                live.insert(
                    ev.order_id,
                    LiveOrder {
                        side,
                        price: ev.price,
                        remaining: ev.volume,
                    },
                );
            }
            EventKind::ExecuteHidden => {}
            kind => {
                let Some(order) = live.get_mut(&ev.order_id) else {
                    report.orphans += 1;
                    report.note(line, ev.order_id, "reference to unknown order id");
                    continue;
                };
                if Some(order.side) != ev.side || order.price != ev.price {
                    report.mismatches += 1;
                    report.note(line, ev.order_id, "side or price differs from resting order");
                }
                let remove = match kind {
                    EventKind::Delete | EventKind::ExecuteFull => {
                        if ev.volume != order.remaining {
                            report.mismatches += 1;
                            report.note(line, ev.order_id, "volume differs from remaining volume");
                        }
                        true
                    }
                    _ => {
                        if ev.volume < order.remaining {
                            order.remaining -= ev.volume;
                            false
                        } else if ev.volume == order.remaining {
                            report.exhausting_partials += 1;
                            true
                        } else {
                            report.mismatches += 1;
                            report.note(line, ev.order_id, "reduction exceeds remaining volume");
                            true
                        }
                    }
                };
                if remove {
                    live.remove(&ev.order_id);
                }
            }
        }
    }
    report
}

/// Parses and validates a message stream already in memory.
pub fn parse_instrument_day<R: BufRead>(
    ticker: &str,
    date: NaiveDate,
    reader: R,
    config: &SessionConfig,
    source: &Path,
) -> Result<(InstrumentDay, ValidationReport), IngestError> {
    let mut warmup = Vec::new();
    let mut events = Vec::new();
    let mut dropped_post = 0u64;
    let mut any = false;

    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IngestError::Io {
            path: source.to_path_buf(),
            source: e,
        })?;
        any = true;
        let ev = parse_message_line(&line).map_err(|e| IngestError::Parse {
            path: source.to_path_buf(),
            line: idx + 1,
            source: e,
        })?;
        if ev.timestamp_ms < config.session_start_ms {
            warmup.push(ev);
        } else if in_session(ev.timestamp_ms, config) {
            events.push(ev);
        } else {
            dropped_post += 1;
        }
    }
    if !any {
        return Err(IngestError::Empty(source.to_path_buf()));
    }

    let mut report = validate_stream(&warmup, &events, config);
    report.dropped_pre_session = warmup.len() as u64;
    report.dropped_post_session = dropped_post;
    if !report.is_accepted() {
        return Err(IngestError::Validation {
            path: source.to_path_buf(),
            report: Box::new(report),
        });
    }
    Ok((
        InstrumentDay {
            ticker: ticker.to_string(),
            date,
            warmup,
            events,
        },
        report,
    ))
}

/// Loads `<YYYYMMDD>_<TICKER>.csv`, splits off pre-session warmup, drops
/// post-session messages and rejects streams that fail validation.
pub fn load_instrument_day(
    path: &Path,
    config: &SessionConfig,
) -> Result<(InstrumentDay, ValidationReport), IngestError> {
    let (date, ticker) =
        parse_file_name(path).ok_or_else(|| IngestError::BadFileName(path.to_path_buf()))?;
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_instrument_day(&ticker, date, io::BufReader::new(file), config, path)
}
