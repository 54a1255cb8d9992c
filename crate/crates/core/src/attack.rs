//! Attack orchestration: full correlation and difference-of-means runs over
//! a trace set, ranked key candidates, extrema guess tables, the
//! non-encryption false-positive control, and key-rank evaluation.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::cipher::{round1_sbox_output_byte, KeyRegister80};
use crate::leakage::{build_hypotheses, LeakageError, LeakageModel, NUM_GUESSES};
use crate::real::Real;
use crate::stats::{
    correlation_surface, difference_of_means, repetition_check, surface_extrema,
    CorrelationSurface, ExtremaReport, RepetitionReport, StatsError,
    DEFAULT_REPETITION_THRESHOLD,
};
use crate::traceio::TraceSet;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AttackError {
    #[error("trace set is empty")]
    EmptyTraceSet,
    #[error("need at least 2 traces, got {0}")]
    TooFewTraces(usize),
    #[error("bit index {0} out of range (bytes have 8 bits)")]
    BitIndexOutOfRange(usize),
    #[error(transparent)]
    Leakage(#[from] LeakageError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// One key guess with its best correlation, by signed value and by
/// magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Candidate<T> {
    pub key: u8,
    /// Highest signed coefficient over all samples.
    pub max_rho: T,
    /// Sample where `max_rho` occurs (earliest on ties).
    pub best_sample: usize,
    /// Highest |coefficient| over all samples.
    pub max_abs_rho: T,
    pub best_abs_sample: usize,
}

/// Attack result for one target byte position.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ByteReport<T> {
    pub byte_index: usize,
    /// All 256 candidates ordered by signed maximum coefficient
    /// (descending; ties go to the smaller key).
    pub candidates: Vec<Candidate<T>>,
    /// Key values ordered by maximum |coefficient| instead, for trough
    /// analysis.
    pub abs_ranking: Vec<u8>,
    /// Peaks and troughs of the per-sample maximum-coefficient series,
    /// labeled with the winning guess at each extremum.
    pub extrema: ExtremaReport<T>,
    pub peak_repetition: RepetitionReport,
    pub trough_repetition: RepetitionReport,
    /// Set when every sample column was constant: the surface is fully
    /// masked and the ranking is vacuous.
    pub degenerate: bool,
}

impl<T: Real> ByteReport<T> {
    pub fn rank_of(&self, key: u8) -> usize {
        1 + self
            .candidates
            .iter()
            .position(|c| c.key == key)
            .expect("rankings cover all 256 keys")
    }

    pub fn rank1(&self) -> &Candidate<T> {
        &self.candidates[0]
    }
}

/// Full correlation-attack report over the selected byte positions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackReport<T> {
    pub model: LeakageModel,
    pub num_traces: usize,
    pub num_samples: usize,
    /// Wall-clock duration of the run. Excluded from reproducibility
    /// comparisons, like any timestamp.
    pub wall_clock_seconds: f64,
    pub bytes: Vec<ByteReport<T>>,
}

fn rank_candidates<T: Real>(surface: &CorrelationSurface<T>) -> Vec<Candidate<T>> {
    let mut candidates: Vec<Candidate<T>> = (0..NUM_GUESSES)
        .map(|k| {
            let row = surface.row(k as u8);
            let mut max_rho = row[0];
            let mut best_sample = 0usize;
            let mut max_abs = row[0].abs();
            let mut best_abs_sample = 0usize;
            for (s, &v) in row.iter().enumerate().skip(1) {
                if v > max_rho {
                    max_rho = v;
                    best_sample = s;
                }
                if v.abs() > max_abs {
                    max_abs = v.abs();
                    best_abs_sample = s;
                }
            }
            Candidate {
                key: k as u8,
                max_rho,
                best_sample,
                max_abs_rho: max_abs,
                best_abs_sample,
            }
        })
        .collect();
    // descending by signed maximum; ties keep ascending key order
    candidates.sort_by(|a, b| {
        b.max_rho
            .partial_cmp(&a.max_rho)
            .expect("coefficients are finite")
            .then(a.key.cmp(&b.key))
    });
    candidates
}

fn abs_ranking<T: Real>(candidates: &[Candidate<T>]) -> Vec<u8> {
    let mut by_abs: Vec<&Candidate<T>> = candidates.iter().collect();
    by_abs.sort_by(|a, b| {
        b.max_abs_rho
            .partial_cmp(&a.max_abs_rho)
            .expect("coefficients are finite")
            .then(a.key.cmp(&b.key))
    });
    by_abs.iter().map(|c| c.key).collect()
}

fn attack_byte<T: Real>(
    ts: &TraceSet<T>,
    byte_index: usize,
    model: LeakageModel,
) -> Result<ByteReport<T>, AttackError> {
    let hyp = build_hypotheses(ts.plaintexts(), byte_index, model)?;
    let surface = correlation_surface(ts, &hyp)?;
    let degenerate = surface.zero_variance_mask.iter().all(|&m| m);
    let candidates = rank_candidates(&surface);
    let abs_ranking = abs_ranking(&candidates);
    let extrema = surface_extrema(&surface, None)?;
    let peak_repetition = repetition_check(&extrema.peak_keys(), DEFAULT_REPETITION_THRESHOLD);
    let trough_repetition = repetition_check(&extrema.trough_keys(), DEFAULT_REPETITION_THRESHOLD);
    Ok(ByteReport {
        byte_index,
        candidates,
        abs_ranking,
        extrema,
        peak_repetition,
        trough_repetition,
        degenerate,
    })
}

fn check_trace_count<T: Real>(ts: &TraceSet<T>) -> Result<(), AttackError> {
    match ts.num_traces() {
        0 => Err(AttackError::EmptyTraceSet),
        1 => Err(AttackError::TooFewTraces(1)),
        _ => Ok(()),
    }
}

/// Run the correlation attack over the given byte positions (deduplicated,
/// processed in ascending order).
pub fn run_cema<T: Real>(
    ts: &TraceSet<T>,
    byte_indices: &[usize],
    model: LeakageModel,
) -> Result<AttackReport<T>, AttackError> {
    check_trace_count(ts)?;
    let started = Instant::now();
    let mut indices: Vec<usize> = byte_indices.to_vec();
    indices.sort_unstable();
    indices.dedup();
    if let Some(&bad) = indices.iter().find(|&&i| i >= 8) {
        return Err(AttackError::Leakage(LeakageError::ByteIndexOutOfRange(bad)));
    }
    let bytes = indices
        .into_iter()
        .map(|i| attack_byte(ts, i, model))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AttackReport {
        model,
        num_traces: ts.num_traces(),
        num_samples: ts.num_samples(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        bytes,
    })
}

/// One guess's differential score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DemaCandidate<T> {
    pub key: u8,
    /// Largest |group-1 mean - group-0 mean| over all samples; zero when a
    /// group was empty.
    pub peak_diff: T,
    pub best_sample: usize,
    /// The guess produced an empty group, so it could not be scored.
    pub empty_group: bool,
}

/// Difference-of-means attack report for one byte and selector bit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemaReport<T> {
    pub byte_index: usize,
    pub bit_index: usize,
    pub num_traces: usize,
    pub num_samples: usize,
    /// Candidates ordered by peak differential, descending.
    pub candidates: Vec<DemaCandidate<T>>,
}

/// Split traces by one bit of the hypothesized round-1 S-box output and
/// rank guesses by the peak magnitude of the group-mean difference.
pub fn run_dema<T: Real>(
    ts: &TraceSet<T>,
    byte_index: usize,
    bit_index: usize,
) -> Result<DemaReport<T>, AttackError> {
    check_trace_count(ts)?;
    if byte_index >= 8 {
        return Err(AttackError::Leakage(LeakageError::ByteIndexOutOfRange(
            byte_index,
        )));
    }
    if bit_index >= 8 {
        return Err(AttackError::BitIndexOutOfRange(bit_index));
    }
    let mut candidates: Vec<DemaCandidate<T>> = (0..NUM_GUESSES)
        .map(|k| {
            let selector = |pt: &crate::cipher::Block, guess: u8| {
                (round1_sbox_output_byte(pt[byte_index], guess) >> bit_index) & 1 == 1
            };
            match difference_of_means(ts, selector, k as u8) {
                Ok(diff) => {
                    let mut peak = T::zero();
                    let mut best_sample = 0usize;
                    for (s, &v) in diff.iter().enumerate() {
                        if v.abs() > peak {
                            peak = v.abs();
                            best_sample = s;
                        }
                    }
                    DemaCandidate {
                        key: k as u8,
                        peak_diff: peak,
                        best_sample,
                        empty_group: false,
                    }
                }
                Err(StatsError::EmptyGroup { .. }) => DemaCandidate {
                    key: k as u8,
                    peak_diff: T::zero(),
                    best_sample: 0,
                    empty_group: true,
                },
                Err(e) => unreachable!("difference_of_means only fails on empty groups here: {e}"),
            }
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.peak_diff
            .partial_cmp(&a.peak_diff)
            .expect("differentials are finite")
            .then(a.key.cmp(&b.key))
    });
    Ok(DemaReport {
        byte_index,
        bit_index,
        num_traces: ts.num_traces(),
        num_samples: ts.num_samples(),
        candidates,
    })
}

/// Verdict of the false-positive control run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlVerdict {
    Clean,
    SuspectedArtifact,
}

/// Result of running the full attack on non-encryption data. Repeated
/// extremum guesses point at systematic artifacts rather than key leakage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseControlReport<T> {
    /// The underlying attack, absent when the set had fewer than 2 traces.
    pub attack: Option<AttackReport<T>>,
    pub verdict: ControlVerdict,
    /// (byte index, flagged key) pairs from peak guess lists.
    pub flagged_peaks: Vec<(usize, u8)>,
    /// (byte index, flagged key) pairs from trough guess lists.
    pub flagged_troughs: Vec<(usize, u8)>,
}

/// Run the full correlation attack on a (presumed) non-encryption set and
/// apply the repetition check to its extremum guess tables. The caller
/// decides what the set actually contains; nothing is inferred from it.
pub fn run_noise_control<T: Real>(ts: &TraceSet<T>) -> Result<NoiseControlReport<T>, AttackError> {
    if ts.num_traces() < 2 {
        return Ok(NoiseControlReport {
            attack: None,
            verdict: ControlVerdict::Clean,
            flagged_peaks: Vec::new(),
            flagged_troughs: Vec::new(),
        });
    }
    let attack = run_cema(ts, &[0, 1, 2, 3, 4, 5, 6, 7], LeakageModel::HammingWeight)?;
    let mut flagged_peaks = Vec::new();
    let mut flagged_troughs = Vec::new();
    for byte in &attack.bytes {
        for &k in &byte.peak_repetition.flagged {
            flagged_peaks.push((byte.byte_index, k));
        }
        for &k in &byte.trough_repetition.flagged {
            flagged_troughs.push((byte.byte_index, k));
        }
    }
    let verdict = if flagged_peaks.is_empty() && flagged_troughs.is_empty() {
        ControlVerdict::Clean
    } else {
        ControlVerdict::SuspectedArtifact
    };
    Ok(NoiseControlReport {
        attack: Some(attack),
        verdict,
        flagged_peaks,
        flagged_troughs,
    })
}

/// Rank of the true round-1 subkey byte in each attacked byte's candidate
/// list (1 = recovered).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ByteRank {
    pub byte_index: usize,
    pub rank: usize,
}

/// Evaluate an attack report against the known key. Bytes missing from the
/// report are omitted.
pub fn key_rank<T: Real>(report: &AttackReport<T>, true_key: &KeyRegister80) -> Vec<ByteRank> {
    let subkey = true_key.round1_subkey();
    report
        .bytes
        .iter()
        .map(|b| ByteRank {
            byte_index: b.byte_index,
            rank: b.rank_of(subkey[b.byte_index]),
        })
        .collect()
}

// Guess rows are capped in the rendered table; the JSON report carries the
// full lists.
const MAX_TABLE_GUESSES: usize = 24;

fn write_guess_row<T: Real>(out: &mut String, label: &str, points: &[crate::stats::ExtremumPoint<T>]) {
    let keys: Vec<String> = points
        .iter()
        .filter_map(|p| p.key)
        .map(|k| format!("{k:02X}"))
        .collect();
    let shown = keys.len().min(MAX_TABLE_GUESSES);
    let suffix = if keys.len() > shown {
        format!(" (+{} more)", keys.len() - shown)
    } else {
        String::new()
    };
    let _ = writeln!(
        out,
        "{label:<8} {:<4} {}{suffix}",
        keys.len(),
        if keys.is_empty() { "-".to_string() } else { keys[..shown].join(" ") }
    );
}

impl<T: Real> AttackReport<T> {
    /// Human-readable summary: per-byte top candidates plus the extremum
    /// guess table (Type / No. / Key Byte Guesses).
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "CEMA over {} traces x {} samples ({:?} model)",
            self.num_traces, self.num_samples, self.model
        );
        let _ = writeln!(out, "byte  rank-1  max rho      at sample  top-5 (signed)");
        for b in &self.bytes {
            let top5: Vec<String> = b
                .candidates
                .iter()
                .take(5)
                .map(|c| format!("{:02X}({:+.3})", c.key, c.max_rho.as_f64()))
                .collect();
            let r1 = b.rank1();
            let _ = writeln!(
                out,
                "{:>4}  {:02X}      {:+.6}  {:>9}  {}{}",
                b.byte_index,
                r1.key,
                r1.max_rho.as_f64(),
                r1.best_sample,
                top5.join(" "),
                if b.degenerate { "  [degenerate: all samples constant]" } else { "" }
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Extremum guess tables");
        for b in &self.bytes {
            let _ = writeln!(out, "byte {}:", b.byte_index);
            let _ = writeln!(out, "Type     No.  Key Byte Guesses");
            write_guess_row(&mut out, "Peaks", &b.extrema.peaks);
            write_guess_row(&mut out, "Troughs", &b.extrema.troughs);
            if b.peak_repetition.has_flags() || b.trough_repetition.has_flags() {
                let fmt = |v: &[u8]| {
                    v.iter()
                        .map(|k| format!("{k:02X}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                let _ = writeln!(
                    out,
                    "repetition flags: peaks [{}] troughs [{}]",
                    fmt(&b.peak_repetition.flagged),
                    fmt(&b.trough_repetition.flagged)
                );
            }
        }
        out
    }
}

impl<T: Real> DemaReport<T> {
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "DEMA byte {} bit {} over {} traces x {} samples",
            self.byte_index, self.bit_index, self.num_traces, self.num_samples
        );
        let _ = writeln!(out, "rank  key  peak |diff|   at sample");
        for (i, c) in self.candidates.iter().take(10).enumerate() {
            let _ = writeln!(
                out,
                "{:>4}  {:02X}   {:>11.6}  {:>9}{}",
                i + 1,
                c.key,
                c.peak_diff.as_f64(),
                c.best_sample,
                if c.empty_group { "  [empty group]" } else { "" }
            );
        }
        out
    }
}

impl<T: Real> NoiseControlReport<T> {
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "False-positive control: {}",
            match self.verdict {
                ControlVerdict::Clean => "clean",
                ControlVerdict::SuspectedArtifact => "systematic artifact suspected",
            }
        );
        let fmt = |pairs: &[(usize, u8)]| {
            if pairs.is_empty() {
                return "-".to_string();
            }
            let shown = pairs.len().min(MAX_TABLE_GUESSES);
            let mut s = pairs[..shown]
                .iter()
                .map(|(b, k)| format!("byte{b}:{k:02X}"))
                .collect::<Vec<_>>()
                .join(" ");
            if pairs.len() > shown {
                let _ = write!(s, " (+{} more)", pairs.len() - shown);
            }
            s
        };
        let _ = writeln!(out, "flagged peak guesses:   {}", fmt(&self.flagged_peaks));
        let _ = writeln!(out, "flagged trough guesses: {}", fmt(&self.flagged_troughs));
        if let Some(attack) = &self.attack {
            let _ = writeln!(out);
            out.push_str(&attack.summary_table());
        }
        out
    }
}
