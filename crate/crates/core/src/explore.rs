//! Exploratory analytics over part records: station traffic and failure
//! rates, production flow paths, the `time_diff` feature and periodicity of
//! the date axis.
//!
//! A part passes through a station when it has at least one present cell
//! (of any kind) whose column belongs to that station.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::ingest::{FeatureKind, SparseRow};

/// Lag cap for autocorrelation, in date units.
pub const MAX_LAG_UNITS: f64 = 5000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StationStats {
    pub station: u32,
    pub n_features_nonzero: usize,
    pub n_parts: u64,
    pub n_failures: u64,
    pub error_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ColumnKey {
    line: u32,
    kind: FeatureKind,
    test_id: u32,
}

#[derive(Debug, Default, Clone)]
struct StationCounts {
    columns: HashSet<ColumnKey>,
    n_parts: u64,
    n_failures: u64,
}

/// Single-pass accumulator for station and line statistics.
#[derive(Debug, Default, Clone)]
pub struct StationAccumulator {
    stations: BTreeMap<u32, StationCounts>,
    lines: BTreeMap<u32, (u64, u64)>,
}

impl StationAccumulator {
    pub fn add(&mut self, row: &SparseRow) -> Result<()> {
        let failed = row.require_label()? == 1;
        let mut stations = BTreeSet::new();
        let mut lines = BTreeSet::new();
        for f in row.features() {
            stations.insert(f.station);
            lines.insert(f.line);
            self.stations
                .entry(f.station)
                .or_default()
                .columns
                .insert(ColumnKey {
                    line: f.line,
                    kind: f.kind,
                    test_id: f.test_id,
                });
        }
        for s in stations {
            let c = self.stations.entry(s).or_default();
            c.n_parts += 1;
            c.n_failures += u64::from(failed);
        }
        for l in lines {
            let c = self.lines.entry(l).or_default();
            c.0 += 1;
            c.1 += u64::from(failed);
        }
        Ok(())
    }

    pub fn station_stats(&self) -> Vec<StationStats> {
        self.stations
            .iter()
            .map(|(&station, c)| StationStats {
                station,
                n_features_nonzero: c.columns.len(),
                n_parts: c.n_parts,
                n_failures: c.n_failures,
                error_rate: rate(c.n_failures, c.n_parts),
            })
            .collect()
    }

    pub fn line_error_rates(&self) -> BTreeMap<u32, f64> {
        self.lines
            .iter()
            .map(|(&l, &(parts, failures))| (l, rate(failures, parts)))
            .collect()
    }
}

fn rate(failures: u64, parts: u64) -> f64 {
    if parts == 0 {
        0.0
    } else {
        failures as f64 / parts as f64
    }
}

pub fn station_stats<'a>(rows: impl IntoIterator<Item = &'a SparseRow>) -> Result<Vec<StationStats>> {
    let mut acc = StationAccumulator::default();
    for row in rows {
        acc.add(row)?;
    }
    Ok(acc.station_stats())
}

pub fn line_error_rates<'a>(
    rows: impl IntoIterator<Item = &'a SparseRow>,
) -> Result<BTreeMap<u32, f64>> {
    let mut acc = StationAccumulator::default();
    for row in rows {
        acc.add(row)?;
    }
    Ok(acc.line_error_rates())
}

/// Distinct `(line, station)` pairs visited by a part, ordered by station then line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FlowPath(pub Vec<(u32, u32)>);

impl FlowPath {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for FlowPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (line, station)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(">")?;
            }
            write!(f, "L{line}S{station}")?;
        }
        Ok(())
    }
}

pub fn flow_path(row: &SparseRow) -> FlowPath {
    let visited: BTreeSet<(u32, u32)> = row.features().map(|f| (f.station, f.line)).collect();
    FlowPath(visited.into_iter().map(|(s, l)| (l, s)).collect())
}

pub fn flow_path_census<'a>(
    rows: impl IntoIterator<Item = &'a SparseRow>,
) -> BTreeMap<FlowPath, u64> {
    let mut census = BTreeMap::new();
    for row in rows {
        *census.entry(flow_path(row)).or_insert(0) += 1;
    }
    census
}

/// Span between the earliest and latest date stamp of a part.
pub fn time_diff(row: &SparseRow) -> Option<f64> {
    let mut it = row.date.iter().map(|(_, v)| *v);
    let first = it.next()?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Some(hi - lo)
}

/// Histogram of date stamps at a fixed tick, accumulated row by row.
#[derive(Debug, Clone)]
pub struct DateHistogram {
    tick: f64,
    counts: BTreeMap<i64, u64>,
}

impl DateHistogram {
    pub fn new(tick: f64) -> Result<Self> {
        if !(tick > 0.0) || !tick.is_finite() {
            return Err(Error::InvalidTick(tick));
        }
        Ok(DateHistogram {
            tick,
            counts: BTreeMap::new(),
        })
    }

    pub fn tick(&self) -> f64 {
        self.tick
    }

    pub fn add_value(&mut self, v: f64) {
        let bucket = (v / self.tick).round() as i64;
        *self.counts.entry(bucket).or_insert(0) += 1;
    }

    pub fn add(&mut self, row: &SparseRow) {
        for (_, v) in &row.date {
            self.add_value(*v);
        }
    }

    /// Dense `(tick value, count)` series from the lowest to the highest bucket.
    pub fn series(&self) -> Vec<(f64, u64)> {
        let (Some((&lo, _)), Some((&hi, _))) = (self.counts.first_key_value(), self.counts.last_key_value())
        else {
            return Vec::new();
        };
        (lo..=hi)
            .map(|b| (b as f64 * self.tick, self.counts.get(&b).copied().unwrap_or(0)))
            .collect()
    }
}

pub fn record_count_series<'a>(
    rows: impl IntoIterator<Item = &'a SparseRow>,
    tick: f64,
) -> Result<Vec<(f64, u64)>> {
    let mut h = DateHistogram::new(tick)?;
    for row in rows {
        h.add(row);
    }
    Ok(h.series())
}

/// Normalised sample autocorrelation of `series` for lags `0..=L`, where
/// `L = min(len/2, 5000/step)`. Lags are reported in units of `step`.
pub fn autocorrelation(series: &[f64], step: f64) -> Result<Vec<(f64, f64)>> {
    if series.len() < 2 {
        return Err(Error::DegenerateSeries("series needs at least two points"));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidTick(step));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSeries("series contains non-finite values"));
    }
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let denom: f64 = centered.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::DegenerateSeries("series has zero variance"));
    }
    let max_lag = (n / 2).min((MAX_LAG_UNITS / step).floor() as usize).max(1);

    let acov = if (n as u64) * (max_lag as u64) <= 20_000_000 {
        autocovariance_direct(&centered, max_lag)
    } else {
        autocovariance_fft(&centered, max_lag)
    };
    Ok(acov
        .into_iter()
        .enumerate()
        .map(|(lag, c)| {
            let r = if lag == 0 { 1.0 } else { c / denom };
            (lag as f64 * step, r)
        })
        .collect())
}

fn autocovariance_direct(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum())
        .collect()
}

/// Same sums as the direct form via the Wiener-Khinchin identity on a
/// zero-padded transform (no circular wrap-around).
fn autocovariance_fft(x: &[f64], max_lag: usize) -> Vec<f64> {
    let size = (2 * x.len()).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf.iter()
        .take(max_lag + 1)
        .map(|c| c.re / size as f64)
        .collect()
}

/// Indices of strict local maxima. A plateau counts once, at its leftmost
/// index, when both of its neighbours are strictly lower.
fn local_maxima(values: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < values.len() {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < values.len() && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < values.len() && values[j + 1] < values[i] {
                peaks.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Dominant period (lag of the highest local maximum) and secondary period
/// (mean spacing of the maxima below it, counted from lag 0 up to the
/// dominant lag). With no maxima below the dominant one, both are equal.
pub fn detect_periods(acf: &[(f64, f64)]) -> Result<(f64, f64)> {
    if acf.len() < 3 {
        return Err(Error::NoPeak);
    }
    let values: Vec<f64> = acf.iter().map(|&(_, v)| v).collect();
    let peaks: Vec<usize> = local_maxima(&values)
        .into_iter()
        .filter(|&i| acf[i].0 > 0.0)
        .collect();
    let dominant = peaks
        .iter()
        .copied()
        .reduce(|best, i| if values[i] > values[best] { i } else { best })
        .ok_or(Error::NoPeak)?;
    let dominant_lag = acf[dominant].0;
    let below = peaks.iter().filter(|&&i| i < dominant).count();
    Ok((dominant_lag, dominant_lag / (below + 1) as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodReport {
    pub tick_granularity: f64,
    pub autocorrelation: Vec<(f64, f64)>,
    pub dominant_period: f64,
    pub secondary_period: f64,
}

/// Autocorrelation and periods of a record-count series sampled every `tick`.
pub fn period_report(counts: &[(f64, u64)], tick: f64) -> Result<PeriodReport> {
    let series: Vec<f64> = counts.iter().map(|&(_, c)| c as f64).collect();
    let acf = autocorrelation(&series, tick)?;
    let (dominant_period, secondary_period) = detect_periods(&acf)?;
    Ok(PeriodReport {
        tick_granularity: tick,
        autocorrelation: acf,
        dominant_period,
        secondary_period,
    })
}
