//! One-pass analysis of an instrument-day and its exportable report.

use serde::{Deserialize, Serialize};

use crate::book::{replay, ReplayError, ReplayStats};
use crate::histogram::{build_histogram, AtomRule, Binning, CountHistogram, Histogram};
use crate::ingest::InstrumentDay;
use crate::mo::{cluster_size_histogram, window_sensitivity, MarketOrder, MoCollector, WindowCount};
use crate::model::{SessionConfig, Side};
use crate::observables::{
    frequency_counts, impact_samples, onquote_share, relative_volume_split, volume_quote_correlation,
    ActivityTracker, FrequencyCounts, FrequencySummary, ImpactSample, PlacementCollector, PlacementSample,
    RelativeVolumeSplit,
};

/// Consolidation windows reported alongside the configured one.
pub const SENSITIVITY_WINDOWS_MS: [u64; 5] = [0, 1, 5, 10, 100];

/// Bin width for relative prices and relative volumes.
pub const RATIO_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationMode {
    /// Ticks from the quote.
    #[default]
    Ticks,
    /// Distance from the quote divided by the quote price.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub session: SessionConfig,
    /// Drop market orders mixing hidden and visible trades from impact and
    /// relative-volume statistics.
    pub exclude_mixed_hidden: bool,
    /// Drop all-hidden market orders from the cluster-size histogram.
    pub exclude_undirected_sizes: bool,
    /// Return histogram bin width; derived from the median midpoint when absent.
    pub return_bin_width: Option<f64>,
    pub deviation_mode: DeviationMode,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            session: SessionConfig::default(),
            exclude_mixed_hidden: false,
            exclude_undirected_sizes: false,
            return_bin_width: None,
            deviation_mode: DeviationMode::Ticks,
        }
    }
}

/// Everything collected from one replay of an instrument-day.
#[derive(Debug, Clone)]
pub struct DayAnalysis {
    pub key: String,
    pub stats: ReplayStats,
    pub market_orders: Vec<MarketOrder>,
    pub placements: Vec<PlacementSample>,
    pub unclassified_adds: u64,
    pub crossing_adds: u64,
    pub counts: FrequencyCounts,
}

pub fn analyze_day(day: &InstrumentDay, session: &SessionConfig) -> Result<DayAnalysis, ReplayError> {
    let mut mos = MoCollector::new(session.mo_window_ms);
    let mut placements = PlacementCollector::new(session.tick);
    let mut activity = ActivityTracker::default();
    let (stats, _) = replay(day, session, &mut [&mut mos, &mut placements, &mut activity])?;
    let market_orders = mos.finish();
    let counts = frequency_counts(&market_orders, &placements.samples, &activity);
    Ok(DayAnalysis {
        key: day.key(),
        stats,
        market_orders,
        placements: placements.samples,
        unclassified_adds: placements.unclassified,
        crossing_adds: placements.crossing,
        counts,
    })
}

/// Frequency summary for a day, replaying it once.
pub fn frequency_summary(day: &InstrumentDay, session: &SessionConfig) -> Result<FrequencySummary, ReplayError> {
    analyze_day(day, session).map(|a| a.counts.summary())
}

impl DayAnalysis {
    /// In-spread relative prices in stream order.
    pub fn relative_prices(&self) -> Vec<f64> {
        self.placements.iter().filter_map(PlacementSample::relative_price).collect()
    }

    /// Spread in ticks before each in-spread add.
    pub fn prior_spreads(&self) -> Vec<i64> {
        self.placements
            .iter()
            .filter(|p| p.relative_price().is_some())
            .map(|p| p.prior_spread_ticks)
            .collect()
    }

    pub fn deviations(&self, mode: DeviationMode, session: &SessionConfig) -> Vec<f64> {
        self.placements
            .iter()
            .filter_map(|p| match mode {
                DeviationMode::Ticks => p.abs_deviation_ticks().map(|d| d as f64),
                DeviationMode::Relative => p.relative_deviation(session.tick),
            })
            .collect()
    }

    pub fn impact_samples(&self, exclude_mixed_hidden: bool) -> Vec<ImpactSample> {
        impact_samples(&self.market_orders, exclude_mixed_hidden)
    }

    pub fn report(&self, day: &InstrumentDay, opts: &AnalysisOptions) -> DayReport {
        let impacts = self.impact_samples(opts.exclude_mixed_hidden);
        let tick = opts.session.tick.0 as f64;

        let return_bin_width = opts.return_bin_width.or_else(|| {
            let mut mids: Vec<i64> = impacts.iter().map(|s| s.midpoint_before_x2.0).collect();
            median_i64(&mut mids).map(|m| tick / m as f64)
        });
        let rets: Vec<f64> = impacts.iter().map(|s| s.ret).collect();
        let return_hist = return_bin_width.and_then(|w| {
            build_histogram(&rets, &Binning::Width { origin: -w / 2.0, width: w }, None).ok()
        });

        let deviations = self.deviations(opts.deviation_mode, &opts.session);
        let deviation_binning = match opts.deviation_mode {
            DeviationMode::Ticks => Some(Binning::integer()),
            DeviationMode::Relative => {
                let mut quotes: Vec<i64> = self
                    .placements
                    .iter()
                    .filter(|p| p.abs_deviation_ticks().is_some())
                    .map(|p| p.quote_price.0)
                    .collect();
                median_i64(&mut quotes).map(|q| {
                    let w = tick / q as f64;
                    Binning::Width { origin: -w / 2.0, width: w }
                })
            }
        };

        let ratio_bins = Binning::Width {
            origin: 0.0,
            width: RATIO_BIN_WIDTH,
        };
        let relative_volumes: Vec<f64> = impacts.iter().map(|s| s.relative_volume).collect();
        let spreads: Vec<f64> = self.prior_spreads().into_iter().map(|s| s as f64).collect();

        DayReport {
            key: self.key.clone(),
            ticker: day.ticker.clone(),
            date: day.date.format("%Y%m%d").to_string(),
            replay: self.stats,
            counts: self.counts,
            frequencies: self.counts.summary(),
            order_count: self.counts.order_count(),
            unclassified_adds: self.unclassified_adds,
            crossing_adds: self.crossing_adds,
            onquote_share_buy: onquote_share(&self.placements, Side::Buy),
            onquote_share_sell: onquote_share(&self.placements, Side::Sell),
            impact_samples: impacts.len(),
            volume_quote_correlation: volume_quote_correlation(&impacts, false),
            volume_quote_correlation_movers: volume_quote_correlation(&impacts, true),
            relative_volume_split: relative_volume_split(&impacts),
            window_sensitivity: window_sensitivity(day, &SENSITIVITY_WINDOWS_MS).unwrap_or_default(),
            return_bin_width,
            cluster_sizes: cluster_size_histogram(&self.market_orders, !opts.exclude_undirected_sizes).ok(),
            relative_price: build_histogram(&self.relative_prices(), &ratio_bins, Some(AtomRule::default())).ok(),
            prior_spread: build_histogram(&spreads, &Binning::integer(), None).ok(),
            deviation: deviation_binning.and_then(|b| build_histogram(&deviations, &b, None).ok()),
            relative_volume: build_histogram(&relative_volumes, &ratio_bins, Some(AtomRule::default())).ok(),
            impact_return: return_hist,
        }
    }
}

fn median_i64(values: &mut [i64]) -> Option<i64> {
    if values.is_empty() {
        return None;
    }
    let mid = values.len() / 2;
    Some(*values.select_nth_unstable(mid).1)
}

/// Serializable per-day summary. Histograms are absent when they have no samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayReport {
    pub key: String,
    pub ticker: String,
    pub date: String,
    pub replay: ReplayStats,
    pub counts: FrequencyCounts,
    pub frequencies: FrequencySummary,
    pub order_count: u64,
    pub unclassified_adds: u64,
    pub crossing_adds: u64,
    pub onquote_share_buy: Option<f64>,
    pub onquote_share_sell: Option<f64>,
    pub impact_samples: usize,
    pub volume_quote_correlation: Option<f64>,
    pub volume_quote_correlation_movers: Option<f64>,
    pub relative_volume_split: Option<RelativeVolumeSplit>,
    pub window_sensitivity: Vec<WindowCount>,
    pub return_bin_width: Option<f64>,
    pub cluster_sizes: Option<CountHistogram>,
    pub relative_price: Option<Histogram>,
    pub prior_spread: Option<Histogram>,
    pub deviation: Option<Histogram>,
    pub relative_volume: Option<Histogram>,
    pub impact_return: Option<Histogram>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_instrument_day, RegimeParams};

    #[test]
    fn report_is_consistent_with_counts() {
        let p = RegimeParams {
            max_events: Some(5000),
            hidden_rate: 0.05,
            ..RegimeParams::preset("narrow_spread").unwrap()
        };
        let (day, truth) = generate_instrument_day(&p).unwrap();
        let opts = AnalysisOptions::default();
        let a = analyze_day(&day, &opts.session).unwrap();
        assert_eq!(a.market_orders.len(), truth.market_orders.len());
        let r = a.report(&day, &opts);
        assert_eq!(r.counts.in_spread_adds as usize, a.relative_prices().len());
        let rp = r.relative_price.unwrap();
        assert!((rp.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(r.cluster_sizes.unwrap().total(), a.market_orders.len() as u64);
        let w = r.return_bin_width.unwrap();
        let h = r.impact_return.unwrap();
        // zero sits in the middle of a bin
        let i = h.bin_of(0.0).unwrap();
        assert!((h.centers()[i]).abs() < w * 1e-9);
        assert_eq!(
            r.window_sensitivity.iter().find(|w| w.window_ms == 1).unwrap().market_orders,
            a.market_orders.len()
        );
    }

    #[test]
    fn median() {
        assert_eq!(median_i64(&mut []), None);
        assert_eq!(median_i64(&mut [5, 1, 3]), Some(3));
    }
}
