//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use orderflow::analysis::analyze_day;
use orderflow::clustering::{adjusted_rand_index, distance_matrix, ks_distance, select_k, Ecdf, KMeansParams};
use orderflow::histogram::{build_histogram, AtomRule, Binning};
use orderflow::mo::consolidate;
use orderflow::observables::{impact_samples, PlacementKind};
use orderflow::synth::{generate_cohort, generate_instrument_day, GroundTruth, RegimeParams, PRESETS};
use orderflow::{Book, Event, EventKind, InstrumentDay, MoSide, Price, SessionConfig, Side};
use orderflow_cli::config::RunConfig;
use orderflow_cli::{cmd_analyze, cmd_cluster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn presets() -> Vec<RegimeParams> {
    PRESETS.iter().map(|n| RegimeParams::preset(n).unwrap()).collect()
}

// ---------------------------------------------------------------- 1

/// Rule-by-rule check of one candidate run.
fn valid_run(slice: &[Event], window: u64) -> bool {
    if slice.iter().any(|e| !e.kind.is_trade()) {
        return false;
    }
    let sides: Vec<Side> = slice.iter().filter_map(|e| e.side).collect();
    if sides.windows(2).any(|w| w[0] != w[1]) {
        return false;
    }
    if slice[..slice.len() - 1].iter().any(|e| e.kind == EventKind::ExecutePartial) {
        return false;
    }
    slice[slice.len() - 1].timestamp_ms - slice[0].timestamp_ms <= window
}

fn oracle(events: &[Event], window: u64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < events.len() {
        if !events[i].kind.is_trade() {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < events.len() && valid_run(&events[i..=end], window) {
            end += 1;
        }
        out.push(i..end);
        i = end;
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut mismatches, mut events, mut orders, mut hidden, mut partial) = (0, 0usize, 0usize, 0usize, 0usize);
    for stream in 0..1000u64 {
        let preset = PRESETS[rng.random_range(0..PRESETS.len())];
        let window = [0, 1, 1, 2, 5, 50][rng.random_range(0..6)];
        let p = RegimeParams {
            seed: stream,
            hidden_rate: rng.random_range(0.0..0.3),
            market_order_rate: rng.random_range(0.05..2.0),
            allow_adjacent_market_orders: rng.random::<bool>(),
            max_events: Some(rng.random_range(100..=10_000)),
            ..RegimeParams::preset(preset).unwrap()
        };
        let (day, _) = generate_instrument_day(&p).unwrap();
        let cfg = SessionConfig {
            mo_window_ms: window,
            ..SessionConfig::default()
        };
        let got: Vec<_> = consolidate(&day, &cfg).unwrap().into_iter().map(|m| m.events).collect();
        let want = oracle(&day.events, window);
        if got != want {
            mismatches += 1;
        }
        events += day.events.len();
        orders += want.len();
        hidden += day.events.iter().filter(|e| e.kind == EventKind::ExecuteHidden).count();
        partial += day.events.iter().filter(|e| e.kind == EventKind::ExecutePartial).count();
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!(
            "1000 streams, {events} events, {orders} market orders, {hidden} hidden and {partial} partial executions; \
             {mismatches} mismatching streams; {:.1} s (limit 60 s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let clean = generate_cohort(6, &presets(), 21).unwrap();
    let (mut total, mut matched) = (0usize, 0usize);
    for (day, truth) in &clean {
        let got: Vec<_> = consolidate(day, &SessionConfig::default()).unwrap().into_iter().map(|m| m.events).collect();
        total += truth.market_orders.len();
        matched += truth
            .market_orders
            .iter()
            .filter(|t| got.binary_search_by(|g| g.start.cmp(&t.events.start)).is_ok_and(|i| got[i] == t.events))
            .count();
        // extra reconstructed orders would also be a failure
        total += got.len().saturating_sub(truth.market_orders.len());
    }

    let hidden_regimes: Vec<_> = presets()
        .into_iter()
        .map(|p| RegimeParams {
            hidden_rate: 0.1,
            ..p
        })
        .collect();
    let hidden = generate_cohort(6, &hidden_regimes, 22).unwrap();
    let mut exact_days = 0;
    let (mut undirected, mut all_hidden) = (0usize, 0usize);
    for (day, truth) in &hidden {
        let mos = consolidate(day, &SessionConfig::default()).unwrap();
        let u = mos.iter().filter(|m| m.side == MoSide::Undirected).count();
        undirected += u;
        all_hidden += truth.all_hidden_count();
        exact_days += usize::from(u == truth.all_hidden_count());
    }
    outcome(
        matched == total && exact_days == hidden.len(),
        format!(
            "hidden-free: {matched}/{total} market orders recovered exactly ({}%); hidden-rate 0.1: \
             undirected count equals all-hidden truth on {exact_days}/{} days ({undirected} vs {all_hidden})",
            100.0 * matched as f64 / total as f64,
            hidden.len()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn random_sample(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(1..=200);
    match rng.random_range(0..3) {
        0 => (0..n).map(|_| rng.random::<f64>()).collect(),
        1 => (0..n).map(|_| f64::from(rng.random_range(0..10u32)) / 10.0).collect(),
        _ => {
            let grid = rng.random_range(2..40u32);
            (0..n).map(|_| f64::from(rng.random_range(1..grid)) / f64::from(grid)).collect()
        }
    }
}

fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&x| (cdf(a, x) - cdf(b, x)).abs()).fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let a = random_sample(&mut rng);
        let b = random_sample(&mut rng);
        let d = ks_distance(&Ecdf::from_samples(&a).unwrap(), &Ecdf::from_samples(&b).unwrap());
        worst = worst.max((d - brute_ks(&a, &b)).abs());
    }
    let (mut asymmetric, mut triangle) = (0, 0);
    for _ in 0..1000 {
        let e: Vec<Ecdf> = (0..3).map(|_| Ecdf::from_samples(&random_sample(&mut rng)).unwrap()).collect();
        let (ab, ba) = (ks_distance(&e[0], &e[1]), ks_distance(&e[1], &e[0]));
        if ab != ba {
            asymmetric += 1;
        }
        if ab > ks_distance(&e[0], &e[2]) + ks_distance(&e[2], &e[1]) + 1e-12 {
            triangle += 1;
        }
    }
    outcome(
        worst <= 1e-12 && asymmetric == 0 && triangle == 0,
        format!(
            "10000 pairs, max |ks - brute force| = {worst:e} (tolerance 1e-12); 1000 triples: \
             {asymmetric} symmetry and {triangle} triangle violations"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn planted_run(master: u64) -> (usize, f64) {
    let cohort = generate_cohort(6, &presets(), master).unwrap();
    let ecdfs: Vec<Ecdf> = cohort
        .par_iter()
        .map(|(day, _)| {
            let a = analyze_day(day, &SessionConfig::default()).unwrap();
            Ecdf::from_samples(&a.relative_prices()).unwrap()
        })
        .collect();
    let labels: Vec<String> = cohort.iter().map(|(d, _)| d.key()).collect();
    let planted: Vec<usize> = cohort
        .iter()
        .map(|(_, t)| PRESETS.iter().position(|&p| p == t.regime).unwrap())
        .collect();
    let matrix = distance_matrix(&labels, &ecdfs, true).unwrap();
    let params = KMeansParams {
        seed: master,
        ..KMeansParams::default()
    };
    let sel = select_k(&matrix, 2, 8, &params).unwrap();
    (sel.best.k, adjusted_rand_index(&sel.best.labels, &planted))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let runs: Vec<(usize, f64)> = (0..20u64).map(|s| planted_run(1000 + s)).collect();
    let elapsed = start.elapsed();
    let good = runs.iter().filter(|&&(k, ari)| k == 4 && ari >= 0.9).count();
    let min_ari = runs.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    outcome(
        good >= 19 && elapsed < Duration::from_secs(300),
        format!(
            "k = 4 with ARI >= 0.9 for {good}/20 master seeds (need 19), min ARI {min_ari:.3}; {:.1} s (limit 300 s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let cohort = generate_cohort(3, &presets(), 55).unwrap();
    let tick = SessionConfig::default().tick.0 as f64;
    let (mut below, mut exact, mut above) = (0usize, 0usize, 0usize);
    let (mut below_bad, mut exact_bad) = (0usize, 0usize);
    let mut worst = 0.0f64;
    for (day, _) in &cohort {
        let a = analyze_day(day, &SessionConfig::default()).unwrap();
        let directed: Vec<_> = a
            .market_orders
            .iter()
            .filter(|m| m.side != MoSide::Undirected && !m.has_hidden())
            .cloned()
            .collect();
        for s in impact_samples(&directed, true) {
            if s.relative_volume < 1.0 {
                below += 1;
                if s.ret != 0.0 {
                    below_bad += 1;
                }
            } else if s.relative_volume == 1.0 {
                exact += 1;
                let p_before = s.midpoint_before_x2.0 as f64 / 2.0;
                let sign = match s.side {
                    Side::Buy => 1.0,
                    Side::Sell => -1.0,
                };
                let expected = sign * (s.gap_ticks as f64 * tick / 2.0) / p_before;
                let rel = ((s.ret - expected) / expected).abs();
                worst = worst.max(rel);
                if rel > 1e-12 || s.ret.signum() != sign {
                    exact_bad += 1;
                }
            } else {
                above += 1;
            }
        }
    }
    outcome(
        below_bad == 0 && exact_bad == 0 && below > 0 && exact > 0,
        format!(
            "{below} orders below quote volume ({below_bad} with r != 0), {exact} exactly at it \
             ({exact_bad} off the gap identity, max relative error {worst:e}, tolerance 1e-12), {above} above"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let regimes: Vec<_> = presets()
        .into_iter()
        .map(|p| RegimeParams {
            hidden_rate: 0.05,
            ..p
        })
        .collect();
    let cohort = generate_cohort(6, &regimes, 66).unwrap();
    let results: Vec<(u64, u64, u64, u64)> = cohort
        .par_iter()
        .map(|(day, _)| {
            let mut book = Book::new(Price(100));
            let (mut crossed, mut rejected, mut conservation, mut steps) = (0, 0, 0, 0);
            let mut expected: i128 = 0;
            for ev in day.warmup.iter().chain(&day.events) {
                steps += 1;
                if book.apply(ev).is_err() {
                    rejected += 1;
                    continue;
                }
                expected += match ev.kind {
                    EventKind::Add => ev.volume as i128,
                    EventKind::ExecuteHidden => 0,
                    _ => -(ev.volume as i128),
                };
                if expected < 0 || book.resting_volume() as i128 != expected {
                    conservation += 1;
                }
                if let (Some(b), Some(a)) = (book.best(Side::Buy), book.best(Side::Sell)) {
                    if b.price >= a.price {
                        crossed += 1;
                    }
                }
            }
            let d = book.diagnostics();
            (crossed + d.crossing_adds, rejected + conservation, d.priority_violations, steps)
        })
        .collect();
    let crossed: u64 = results.iter().map(|r| r.0).sum();
    let negative: u64 = results.iter().map(|r| r.1).sum();
    let priority: u64 = results.iter().map(|r| r.2).sum();
    let steps: u64 = results.iter().map(|r| r.3).sum();
    outcome(
        crossed == 0 && negative == 0 && priority == 0,
        format!(
            "{} days, {steps} replayed events: {crossed} crossed-book, {negative} negative-volume or \
             rejected reductions, {priority} priority violations",
            cohort.len()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn regime_days(preset: &str, seed: u64) -> Vec<(InstrumentDay, GroundTruth)> {
    generate_cohort(6, &[RegimeParams::preset(preset).unwrap()], seed).unwrap()
}

fn criterion_7() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let mut worst_two = 1.0f64;
    let mut worst_atom = 1.0f64;
    for (day, _) in regime_days("large_tick", 77) {
        let a = analyze_day(&day, &SessionConfig::default()).unwrap();
        let spreads: Vec<f64> = a.prior_spreads().iter().map(|&s| s as f64).collect();
        let h = build_histogram(&spreads, &Binning::integer(), None).unwrap();
        let two = h.mass(h.bin_of(2.0).unwrap());
        let rp = build_histogram(
            &a.relative_prices(),
            &Binning::Width { origin: 0.0, width: 0.05 },
            Some(AtomRule::default()),
        )
        .unwrap();
        let atom = rp.atom_mass(0.5);
        worst_two = worst_two.min(two);
        worst_atom = worst_atom.min(atom);
        pass &= two >= 0.9 && atom >= 0.9;
    }
    notes.push(format!(
        "large tick: min prior-spread mass at 2 ticks {worst_two:.3} (>= 0.9), min atom at 0.5 {worst_atom:.3} (>= 0.9)"
    ));

    let mut modes = Vec::new();
    let mut decreasing_days = 0;
    let days = regime_days("small_tick", 78);
    for (day, _) in &days {
        let a = analyze_day(day, &SessionConfig::default()).unwrap();
        let mut by_level = std::collections::BTreeMap::<i64, usize>::new();
        for p in a.placements.iter().filter(|p| p.kind == PlacementKind::InSpread) {
            *by_level.entry(p.offset_ticks).or_default() += 1;
        }
        let mode = by_level.iter().max_by_key(|&(l, c)| (*c, -l)).map(|(l, _)| *l).unwrap();
        modes.push(mode);
        let rp = build_histogram(
            &a.relative_prices(),
            &Binning::Edges(vec![0.0, 0.25, 0.5, 0.75, 1.0]),
            None,
        )
        .unwrap();
        let decreasing = rp.density.windows(2).all(|w| w[0] > w[1]);
        decreasing_days += usize::from(decreasing);
        pass &= mode == 2 && decreasing;
    }
    notes.push(format!(
        "small tick: modal in-spread level per day {modes:?} (want 2), quarter densities decreasing toward 1 on {decreasing_days}/{} days",
        days.len()
    ));
    outcome(pass, notes.join("; "))
}

// ---------------------------------------------------------------- 8

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let regimes: Vec<_> = presets()
        .into_iter()
        .map(|p| RegimeParams {
            hidden_rate: 0.05,
            max_events: Some(30_000),
            ..p
        })
        .collect();
    for (day, _) in generate_cohort(3, &regimes, 88).unwrap() {
        let mut f = fs::File::create(data.join(day.file_name())).unwrap();
        day.write_csv(&mut f).unwrap();
    }
    let inputs = vec![data];
    let run = |name: &str, jobs: usize| -> (Vec<(PathBuf, Vec<u8>)>, Vec<(PathBuf, Vec<u8>)>) {
        let base = RunConfig {
            jobs: Some(jobs),
            pool_days: false,
            ..RunConfig::default()
        };
        let an = tmp.path().join(format!("{name}_analyze"));
        let cl = tmp.path().join(format!("{name}_cluster"));
        cmd_analyze(&inputs, &RunConfig { out: an.clone(), ..base.clone() }).unwrap();
        cmd_cluster(&inputs, &RunConfig { out: cl.clone(), ..base }).unwrap();
        (tree(&an), tree(&cl))
    };
    let first = run("j1a", 1);
    let again = run("j1b", 1);
    let wide = run("j8", 8);
    let files = first.0.len() + first.1.len();
    let same = first == again && first == wide;
    outcome(
        same,
        format!("{files} output files from analyze and cluster: reruns identical and --jobs 1 vs --jobs 8 identical: {same}"),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut rates = Vec::new();
    for name in PRESETS {
        let (day, _) = generate_instrument_day(&RegimeParams::preset(name).unwrap()).unwrap();
        let start = Instant::now();
        let mut events = 0u64;
        while start.elapsed() < Duration::from_millis(400) {
            events += analyze_day(&day, &SessionConfig::default()).unwrap().stats.events;
        }
        rates.push((name, events as f64 / start.elapsed().as_secs_f64()));
    }
    let min = rates.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let listing: Vec<String> = rates.iter().map(|(n, r)| format!("{n} {:.2}M", r / 1e6)).collect();
    outcome(
        min >= 1e6,
        format!("single-thread replay + observables, events/s: {} (floor 1.00M)", listing.join(", ")),
    )
}

fn main() {
    // libtest-style filtering: `cargo test -- <filter>` runs nothing unless the filter names this suite.
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.as_deref().is_some_and(|f| !"acceptance".contains(f)) {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("consolidation oracle equivalence", criterion_1),
        ("ground-truth recovery", criterion_2),
        ("KS correctness", criterion_3),
        ("planted-cluster recovery", criterion_4),
        ("impact-gap identity", criterion_5),
        ("book invariants", criterion_6),
        ("regime phenomenology", criterion_7),
        ("determinism", criterion_8),
        ("throughput", criterion_9),
    ];
    let mut failed = 0;
    println!("acceptance suite");
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        failed += usize::from(!o.pass);
        println!(
            "criterion {} {} {name}: {} [{:.1} s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
