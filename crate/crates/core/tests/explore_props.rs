//! Exploration properties: station bookkeeping by brute force, flow-path
//! order invariance, autocorrelation bounds and period recovery.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use common::weekly_daily_series;
use failpred::explore::{
    autocorrelation, detect_periods, flow_path, line_error_rates, period_report, record_count_series,
    station_stats,
};
use failpred::synth::{generate, SynthConfig};
use failpred::{FeatureId, FeatureKind, SparseRow};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_row(rng: &mut ChaCha8Rng, id: u64) -> SparseRow {
    let mut row = SparseRow::new(id);
    for _ in 0..rng.gen_range(0..8) {
        let (line, station) = (rng.gen_range(0..3), rng.gen_range(0..10));
        let t = rng.gen_range(0..4);
        match rng.gen_range(0..3) {
            0 => row
                .numeric
                .push((Arc::new(FeatureId::new(line, station, FeatureKind::Numeric, t)), rng.gen())),
            1 => row.date.push((
                Arc::new(FeatureId::new(line, station, FeatureKind::Date, t)),
                rng.gen_range(0..500) as f64 / 100.0,
            )),
            _ => row.categorical.push((
                Arc::new(FeatureId::new(line, station, FeatureKind::Categorical, t)),
                "T1".to_string(),
            )),
        }
    }
    row.label = Some(u8::from(rng.gen_bool(0.3)));
    row
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn failures_land_on_exactly_the_visited_stations(seed in any::<u64>(), n in 1usize..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<SparseRow> = (0..n as u64).map(|i| random_row(&mut rng, i)).collect();
        let mut parts: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
        for r in &rows {
            let visited: BTreeSet<u32> = r.features().map(|f| f.station).collect();
            for s in visited {
                let e = parts.entry(s).or_default();
                e.0 += 1;
                e.1 += u64::from(r.label.unwrap());
            }
        }
        let stats = station_stats(&rows).unwrap();
        let got: BTreeMap<u32, (u64, u64)> = stats.iter().map(|s| (s.station, (s.n_parts, s.n_failures))).collect();
        prop_assert_eq!(got, parts);
    }

    #[test]
    fn flow_path_ignores_feature_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let row = random_row(&mut rng, 1);
        let mut shuffled = row.clone();
        shuffled.numeric.shuffle(&mut rng);
        shuffled.date.shuffle(&mut rng);
        shuffled.categorical.shuffle(&mut rng);
        prop_assert_eq!(flow_path(&shuffled), flow_path(&row));
    }

    #[test]
    fn record_counts_sum_to_present_date_cells(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<SparseRow> = (0..n as u64).map(|i| random_row(&mut rng, i)).collect();
        let cells: usize = rows.iter().map(|r| r.date.len()).sum();
        let series = record_count_series(&rows, 0.01).unwrap();
        prop_assert_eq!(series.iter().map(|s| s.1).sum::<u64>() as usize, cells);
    }

    #[test]
    fn autocorrelation_is_bounded(values in prop::collection::vec(-100.0f64..100.0, 2..300)) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let acf = autocorrelation(&values, 0.25).unwrap();
        prop_assert_eq!(acf[0], (0.0, 1.0));
        for &(_, r) in &acf {
            prop_assert!(r.abs() <= 1.0 + 1e-9);
        }
    }
}

#[test]
fn periods_of_a_weekly_and_daily_signal_within_one_tick() {
    let tick = 0.05;
    let acf = autocorrelation(&weekly_daily_series(tick, 40_000), tick).unwrap();
    let (dominant, secondary) = detect_periods(&acf).unwrap();
    assert!((dominant - 16.75).abs() <= tick + 1e-9, "{dominant}");
    assert!((secondary - 2.39).abs() <= tick + 1e-9, "{secondary}");
}

#[test]
fn planted_line_failure_rate_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<SparseRow> = (0..40_000u64)
        .map(|id| {
            let line = (id % 2) as u32 * 3;
            let mut r = SparseRow::new(id);
            r.numeric
                .push((Arc::new(FeatureId::new(line, line, FeatureKind::Numeric, 1)), 0.0));
            let p = if line == 3 { 0.02 } else { 0.005 };
            r.label = Some(u8::from(rng.gen_bool(p)));
            r
        })
        .collect();
    let rates = line_error_rates(&rows).unwrap();
    assert!((rates[&3] - 0.02).abs() <= 0.005, "{rates:?}");
}

#[test]
fn generated_record_counts_show_the_weekly_period() {
    let cfg = SynthConfig::default();
    let data = generate(&cfg).unwrap();
    let counts = record_count_series(data.train.iter().chain(&data.test), 0.25).unwrap();
    let report = period_report(&counts, 0.25).unwrap();
    assert!(
        (report.dominant_period - cfg.weekly_period).abs() <= cfg.tick + 1e-9,
        "{}",
        report.dominant_period
    );
}
