//! Reconstruction against generator ground truth.

use orderflow::analysis::analyze_day;
use orderflow::mo::{cluster_size_histogram, consolidate};
use orderflow::synth::{generate_cohort, RegimeParams, PRESETS};
use orderflow::{MoSide, SessionConfig};

fn regimes(hidden_rate: f64) -> Vec<RegimeParams> {
    PRESETS
        .iter()
        .map(|n| RegimeParams {
            hidden_rate,
            max_events: Some(40_000),
            ..RegimeParams::preset(n).unwrap()
        })
        .collect()
}

#[test]
fn boundaries_match_truth_without_hidden_flow() {
    for (day, truth) in generate_cohort(2, &regimes(0.0), 5).unwrap() {
        let mos = consolidate(&day, &SessionConfig::default()).unwrap();
        let got: Vec<_> = mos.iter().map(|m| m.events.clone()).collect();
        let want: Vec<_> = truth.market_orders.iter().map(|m| m.events.clone()).collect();
        assert_eq!(got, want, "{}", day.key());
        for (m, t) in mos.iter().zip(&truth.market_orders) {
            assert_eq!(m.side.side(), Some(t.side));
        }
        let sizes = cluster_size_histogram(&mos, true).unwrap();
        for (size, count, _) in sizes.rows() {
            let expected = truth.market_orders.iter().filter(|m| m.events.len() as u64 == size).count();
            assert_eq!(count as usize, expected);
        }
        assert!(sizes.rows().iter().any(|&(s, _, _)| s > 1), "no multi-fill orders");
    }
}

#[test]
fn undirected_count_matches_all_hidden_truth() {
    for (day, truth) in generate_cohort(1, &regimes(0.1), 6).unwrap() {
        let a = analyze_day(&day, &SessionConfig::default()).unwrap();
        let undirected = a.market_orders.iter().filter(|m| m.side == MoSide::Undirected).count();
        assert_eq!(undirected, truth.all_hidden_count());
        assert!(undirected > 0);
        let summary = a.counts.summary();
        let expected = truth.all_hidden_count() as f64 / truth.market_orders.len() as f64;
        assert_eq!(summary.mou, Some(expected));
    }
}
