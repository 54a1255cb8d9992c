//! Pearson-correlation machinery, difference-of-means, extrema detection and
//! repetition-based false-positive checks.
//!
//! Correlations use population moments throughout; the normalization cancels
//! in the coefficient anyway. Zero-variance inputs never abort a whole-surface
//! computation: the affected entries are reported as 0 and flagged.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cipher::Block;
use crate::leakage::{HypothesisMatrix, NUM_GUESSES};
use crate::real::Real;
use crate::traceio::TraceSet;

/// Guesses repeating at or above this count are flagged as suspected
/// systematic artifacts.
pub const DEFAULT_REPETITION_THRESHOLD: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("input vectors have different lengths ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("trace set has {traces} traces but the hypothesis matrix has {hypotheses} columns")]
    TraceHypothesisMismatch { traces: usize, hypotheses: usize },
    #[error("selector puts every trace in group {group}; the other group is empty")]
    EmptyGroup { group: u8 },
    #[error("prominence threshold must be positive")]
    NonPositiveProminence,
}

/// Pearson correlation of two equal-length vectors, or `None` when either
/// input is constant (zero variance leaves the coefficient undefined).
pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<Option<T>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewObservations(x.len()));
    }
    if is_constant(x) || is_constant(y) {
        return Ok(None);
    }
    let n = T::from_usize(x.len()).unwrap();
    let mean_x = x.iter().copied().sum::<T>() / n;
    let mean_y = y.iter().copied().sum::<T>() / n;
    let mut cov = T::zero();
    let mut var_x = T::zero();
    let mut var_y = T::zero();
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == T::zero() || var_y == T::zero() {
        return Ok(None);
    }
    Ok(Some(cov / (var_x * var_y).sqrt()))
}

fn is_constant<T: PartialEq>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

/// Pearson coefficients for every key guess at every sample point.
///
/// Entries are 0 where the coefficient is undefined: samples whose trace
/// column is constant are flagged in `zero_variance_mask`, and rows whose
/// hypothesis values are constant are zero without a flag (the mask is
/// per-sample).
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSurface<T> {
    /// Guess-major matrix, `NUM_GUESSES` rows by `num_samples` columns.
    pub rho: Vec<T>,
    pub num_samples: usize,
    pub byte_index: usize,
    pub zero_variance_mask: Vec<bool>,
}

impl<T: Real> CorrelationSurface<T> {
    pub fn row(&self, guess: u8) -> &[T] {
        let k = guess as usize;
        &self.rho[k * self.num_samples..(k + 1) * self.num_samples]
    }

    pub fn entry(&self, guess: u8, sample: usize) -> T {
        self.rho[guess as usize * self.num_samples + sample]
    }
}

// Sample columns are processed in independent blocks of this many columns;
// each column's accumulation runs over traces in ascending order, so the
// result does not depend on how blocks are scheduled.
const COLUMN_BLOCK: usize = 256;

/// Correlate every hypothesis row against every sample column.
pub fn correlation_surface<T: Real>(
    traces: &TraceSet<T>,
    hyp: &HypothesisMatrix,
) -> Result<CorrelationSurface<T>, StatsError> {
    let num_traces = traces.num_traces();
    if num_traces != hyp.num_traces() {
        return Err(StatsError::TraceHypothesisMismatch {
            traces: num_traces,
            hypotheses: hyp.num_traces(),
        });
    }
    if num_traces < 2 {
        return Err(StatsError::TooFewObservations(num_traces));
    }
    let num_samples = traces.num_samples();
    let n = T::from_usize(num_traces).unwrap();

    // Column means, centered copy of the trace matrix, per-column sums of
    // squares and the constant-column mask.
    let mut col_mean = vec![T::zero(); num_samples];
    for t in 0..num_traces {
        for (m, &v) in col_mean.iter_mut().zip(traces.trace(t)) {
            *m += v;
        }
    }
    for m in col_mean.iter_mut() {
        *m /= n;
    }
    let mut centered = Vec::with_capacity(num_traces * num_samples);
    for t in 0..num_traces {
        centered.extend(
            traces
                .trace(t)
                .iter()
                .zip(&col_mean)
                .map(|(&v, &m)| v - m),
        );
    }
    let mut col_sumsq = vec![T::zero(); num_samples];
    for t in 0..num_traces {
        let row = &centered[t * num_samples..(t + 1) * num_samples];
        for (acc, &d) in col_sumsq.iter_mut().zip(row) {
            *acc += d * d;
        }
    }
    let mask: Vec<bool> = (0..num_samples)
        .map(|s| {
            let first = traces.trace(0)[s];
            (1..num_traces).all(|t| traces.trace(t)[s] == first)
        })
        .collect();

    // Centered hypothesis rows and their sums of squares.
    let mut hyp_centered = vec![T::zero(); NUM_GUESSES * num_traces];
    let mut row_sumsq = [T::zero(); NUM_GUESSES];
    let mut row_constant = [false; NUM_GUESSES];
    for k in 0..NUM_GUESSES {
        let row = hyp.row(k as u8);
        let mean = T::from_u32(row.iter().map(|&w| u32::from(w)).sum::<u32>()).unwrap() / n;
        let out = &mut hyp_centered[k * num_traces..(k + 1) * num_traces];
        let mut sumsq = T::zero();
        for (o, &w) in out.iter_mut().zip(row) {
            let d = T::from_u8(w).unwrap() - mean;
            *o = d;
            sumsq += d * d;
        }
        row_sumsq[k] = sumsq;
        row_constant[k] = row.iter().all(|&w| w == row[0]);
    }

    // Cross products, blocked over sample columns. Each block accumulates
    // over traces in ascending order for all 256 guesses; blocks are
    // disjoint, so the parallel result matches the sequential one bitwise.
    let mut rho = vec![T::zero(); NUM_GUESSES * num_samples];
    let block_results: Vec<(usize, Vec<T>)> = (0..num_samples.div_ceil(COLUMN_BLOCK))
        .into_par_iter()
        .map(|b| {
            let s0 = b * COLUMN_BLOCK;
            let s1 = (s0 + COLUMN_BLOCK).min(num_samples);
            let width = s1 - s0;
            let mut dots = vec![T::zero(); NUM_GUESSES * width];
            for k in 0..NUM_GUESSES {
                let h_row = &hyp_centered[k * num_traces..(k + 1) * num_traces];
                let acc = &mut dots[k * width..(k + 1) * width];
                for t in 0..num_traces {
                    let h = h_row[t];
                    let y_row = &centered[t * num_samples + s0..t * num_samples + s1];
                    for (a, &y) in acc.iter_mut().zip(y_row) {
                        *a += h * y;
                    }
                }
            }
            (s0, dots)
        })
        .collect();

    for (s0, dots) in block_results {
        let width = dots.len() / NUM_GUESSES;
        for k in 0..NUM_GUESSES {
            let denom_row = row_sumsq[k];
            let degenerate_row = row_constant[k] || denom_row == T::zero();
            let dst = &mut rho[k * num_samples + s0..k * num_samples + s0 + width];
            let src = &dots[k * width..(k + 1) * width];
            for (i, (d, &dot)) in dst.iter_mut().zip(src).enumerate() {
                let s = s0 + i;
                if mask[s] || degenerate_row || col_sumsq[s] == T::zero() {
                    *d = T::zero();
                } else {
                    *d = dot / (denom_row * col_sumsq[s]).sqrt();
                }
            }
        }
    }

    Ok(CorrelationSurface {
        rho,
        num_samples,
        byte_index: hyp.byte_index(),
        zero_variance_mask: mask,
    })
}

/// Best key guess at one sample point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SampleBest<T> {
    pub sample: usize,
    pub rho: T,
    pub key: u8,
    /// True when the whole column was undefined (constant trace samples).
    pub masked: bool,
}

/// For every sample column, the maximum coefficient and the guess achieving
/// it. Exact ties go to the smaller key value.
pub fn max_rho_per_sample<T: Real>(surface: &CorrelationSurface<T>) -> Vec<SampleBest<T>> {
    let s_count = surface.num_samples;
    let mut best = Vec::with_capacity(s_count);
    for s in 0..s_count {
        if surface.zero_variance_mask[s] {
            best.push(SampleBest {
                sample: s,
                rho: T::zero(),
                key: 0,
                masked: true,
            });
            continue;
        }
        let mut top = surface.entry(0, s);
        let mut top_key = 0u8;
        for k in 1..NUM_GUESSES {
            let v = surface.entry(k as u8, s);
            if v > top {
                top = v;
                top_key = k as u8;
            }
        }
        best.push(SampleBest {
            sample: s,
            rho: top,
            key: top_key,
            masked: false,
        });
    }
    best
}

/// Difference of per-sample means between the two trace groups induced by a
/// selector bit (group 1 mean minus group 0 mean).
pub fn difference_of_means<T: Real>(
    traces: &TraceSet<T>,
    selector: impl Fn(&Block, u8) -> bool,
    key_guess: u8,
) -> Result<Vec<T>, StatsError> {
    let num_samples = traces.num_samples();
    let mut sums = [vec![T::zero(); num_samples], vec![T::zero(); num_samples]];
    let mut counts = [0usize; 2];
    for (t, pt) in traces.plaintexts().iter().enumerate() {
        let group = usize::from(selector(pt, key_guess));
        counts[group] += 1;
        for (acc, &v) in sums[group].iter_mut().zip(traces.trace(t)) {
            *acc += v;
        }
    }
    if counts[0] == 0 {
        return Err(StatsError::EmptyGroup { group: 1 });
    }
    if counts[1] == 0 {
        return Err(StatsError::EmptyGroup { group: 0 });
    }
    let n0 = T::from_usize(counts[0]).unwrap();
    let n1 = T::from_usize(counts[1]).unwrap();
    Ok(sums[1]
        .iter()
        .zip(&sums[0])
        .map(|(&s1, &s0)| s1 / n1 - s0 / n0)
        .collect())
}

/// One detected extremum. `key` carries the winning guess at that sample
/// when the series came from a correlation surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExtremumPoint<T> {
    pub sample: usize,
    pub value: T,
    pub key: Option<u8>,
}

/// Notable peaks and troughs of a series, each exceeding the prominence
/// threshold in both prominence and magnitude.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtremaReport<T> {
    pub peaks: Vec<ExtremumPoint<T>>,
    pub troughs: Vec<ExtremumPoint<T>>,
    pub prominence: T,
}

impl<T> ExtremaReport<T> {
    pub fn peak_keys(&self) -> Vec<u8> {
        self.peaks.iter().filter_map(|p| p.key).collect()
    }

    pub fn trough_keys(&self) -> Vec<u8> {
        self.troughs.iter().filter_map(|p| p.key).collect()
    }
}

/// Interior local maxima of a series, plateau-aware: a run of equal values
/// counts once, represented by its leftmost index, and must fall off on both
/// sides.
fn local_maxima<T: Real>(series: &[T]) -> Vec<usize> {
    let n = series.len();
    let mut maxima = Vec::new();
    let mut i = 1;
    while i < n {
        if series[i] > series[i - 1] {
            let start = i;
            let mut j = i;
            while j + 1 < n && series[j + 1] == series[start] {
                j += 1;
            }
            if j + 1 < n && series[j + 1] < series[start] {
                maxima.push(start);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    maxima
}

/// Topographic prominence of a local maximum: height above the higher of the
/// two lowest points separating it from higher terrain (or the series edge).
fn prominence_of<T: Real>(series: &[T], peak: usize) -> T {
    let v = series[peak];
    let mut left_min = v;
    for j in (0..peak).rev() {
        if series[j] > v {
            break;
        }
        if series[j] < left_min {
            left_min = series[j];
        }
    }
    let mut right_min = v;
    for &x in &series[peak + 1..] {
        if x > v {
            break;
        }
        if x < right_min {
            right_min = x;
        }
    }
    v - left_min.max(right_min)
}

/// Default prominence threshold: the larger of three median absolute
/// deviations and a quarter of the series range.
///
/// The MAD term alone cannot separate signal from chatter: the prominence
/// of noise extrema scales with the MAD itself, so any small multiple keeps
/// a fixed fraction of them and a long noisy series lists thousands. The
/// range term suppresses that chatter whenever genuine spikes stretch the
/// range, while pure-noise series (range a few MADs) still surface their
/// largest extrema for the repetition diagnostics. Constant series fall
/// back to a tiny positive threshold.
pub fn default_prominence<T: Real>(series: &[T]) -> T {
    if series.is_empty() {
        return T::from_f64_rounded(f64::EPSILON);
    }
    let mut sorted: Vec<T> = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN series"));
    let median = sorted[sorted.len() / 2];
    let range = *sorted.last().unwrap() - sorted[0];
    let mut dev: Vec<T> = series.iter().map(|&x| (x - median).abs()).collect();
    dev.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN series"));
    let mad = dev[dev.len() / 2];
    let threshold = (T::from_u8(3).unwrap() * mad).max(range / T::from_u8(4).unwrap());
    if threshold > T::zero() {
        threshold
    } else {
        T::from_f64_rounded(f64::EPSILON)
    }
}

/// Find peaks and troughs whose prominence exceeds `prominence` and whose
/// magnitude reaches it. Keys are left unset; see [`surface_extrema`].
pub fn find_extrema<T: Real>(series: &[T], prominence: T) -> Result<ExtremaReport<T>, StatsError> {
    if prominence <= T::zero() {
        return Err(StatsError::NonPositiveProminence);
    }
    let peaks = local_maxima(series)
        .into_iter()
        .filter(|&i| prominence_of(series, i) > prominence && series[i].abs() >= prominence)
        .map(|i| ExtremumPoint {
            sample: i,
            value: series[i],
            key: None,
        })
        .collect();
    let negated: Vec<T> = series.iter().map(|&x| -x).collect();
    let troughs = local_maxima(&negated)
        .into_iter()
        .filter(|&i| prominence_of(&negated, i) > prominence && series[i].abs() >= prominence)
        .map(|i| ExtremumPoint {
            sample: i,
            value: series[i],
            key: None,
        })
        .collect();
    Ok(ExtremaReport {
        peaks,
        troughs,
        prominence,
    })
}

/// At most this many peaks and troughs survive into a surface's guess
/// table, keeping the most prominent ones. Pure-noise series have local
/// extrema every few samples, so an uncapped table would scale with the
/// trace length instead of with salience.
pub const MAX_SURFACE_EXTREMA: usize = 16;

fn keep_most_prominent<T: Real>(points: &mut Vec<ExtremumPoint<T>>, oriented: &[T]) {
    if points.len() <= MAX_SURFACE_EXTREMA {
        return;
    }
    let mut scored: Vec<(T, ExtremumPoint<T>)> = points
        .drain(..)
        .map(|p| (prominence_of(oriented, p.sample), p))
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("prominences are finite")
            .then(a.1.sample.cmp(&b.1.sample))
    });
    scored.truncate(MAX_SURFACE_EXTREMA);
    scored.sort_by_key(|(_, p)| p.sample);
    points.extend(scored.into_iter().map(|(_, p)| p));
}

/// Extrema of the per-sample maximum-coefficient series of a surface,
/// capped to the [`MAX_SURFACE_EXTREMA`] most prominent of each type and
/// annotated with the winning key guess at each sample. `prominence` falls
/// back to [`default_prominence`] of the series.
pub fn surface_extrema<T: Real>(
    surface: &CorrelationSurface<T>,
    prominence: Option<T>,
) -> Result<ExtremaReport<T>, StatsError> {
    let best = max_rho_per_sample(surface);
    let series: Vec<T> = best.iter().map(|b| b.rho).collect();
    let threshold = prominence.unwrap_or_else(|| default_prominence(&series));
    let mut report = find_extrema(&series, threshold)?;
    keep_most_prominent(&mut report.peaks, &series);
    let negated: Vec<T> = series.iter().map(|&x| -x).collect();
    keep_most_prominent(&mut report.troughs, &negated);
    for p in report.peaks.iter_mut().chain(report.troughs.iter_mut()) {
        p.key = Some(best[p.sample].key);
    }
    Ok(report)
}

/// Frequency table over a guess list with values at or above the threshold
/// flagged as suspected systematic artifacts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RepetitionReport {
    pub counts: BTreeMap<u8, usize>,
    pub flagged: Vec<u8>,
    pub threshold: usize,
}

impl RepetitionReport {
    pub fn has_flags(&self) -> bool {
        !self.flagged.is_empty()
    }
}

/// Count guess repetitions; see [`DEFAULT_REPETITION_THRESHOLD`].
pub fn repetition_check(guesses: &[u8], threshold: usize) -> RepetitionReport {
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for &g in guesses {
        *counts.entry(g).or_insert(0) += 1;
    }
    let flagged = counts
        .iter()
        .filter(|(_, &c)| c >= threshold)
        .map(|(&v, _)| v)
        .collect();
    RepetitionReport {
        counts,
        flagged,
        threshold,
    }
}
