//! Frequency-domain and distribution diagnostics: one-sided magnitude
//! spectra, short-time spectrograms, pooled-sample histograms and band
//! energies for comparing encryption against non-encryption captures.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::real::Real;
use crate::traceio::TraceSet;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("window length {window} / hop {hop} invalid for {samples} samples")]
    BadWindow {
        window: usize,
        hop: usize,
        samples: usize,
    },
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("band [{f_lo}, {f_hi}] is not within [0, {nyquist}]")]
    BadBand { f_lo: f64, f_hi: f64, nyquist: f64 },
}

/// Windowing function applied to each analysis frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Rectangular,
    Hann,
}

impl WindowKind {
    fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; len],
            WindowKind::Hann => (0..len)
                .map(|n| {
                    if len == 1 {
                        1.0
                    } else {
                        let phase = std::f64::consts::TAU * n as f64 / (len - 1) as f64;
                        0.5 * (1.0 - phase.cos())
                    }
                })
                .collect(),
        }
    }
}

/// One-sided magnitude spectrum of a single trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    /// Bin centers in Hz, strictly increasing from 0 to the Nyquist
    /// frequency.
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<T>,
    pub sample_rate_hz: f64,
    /// Index of the trace this spectrum came from, when applicable.
    pub source_trace: Option<usize>,
}

impl<T: Real> Spectrum<T> {
    pub fn nyquist(&self) -> f64 {
        self.sample_rate_hz / 2.0
    }
}

fn dft_magnitudes<T: Real>(frame: &[Complex<T>], planner: &mut FftPlanner<T>) -> Vec<T> {
    let mut buf = frame.to_vec();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf[..buf.len() / 2 + 1]
        .iter()
        .map(|c| (c.re * c.re + c.im * c.im).sqrt())
        .collect()
}

/// One-sided DFT magnitude of a trace.
pub fn magnitude_spectrum<T: Real>(trace: &[T], sample_rate_hz: f64) -> Result<Spectrum<T>, SpectralError> {
    if trace.len() < 2 {
        return Err(SpectralError::TooShort(trace.len()));
    }
    let n = trace.len();
    let frame: Vec<Complex<T>> = trace.iter().map(|&v| Complex::new(v, T::zero())).collect();
    let mut planner = FftPlanner::new();
    let amplitudes = dft_magnitudes(&frame, &mut planner);
    let frequencies = (0..amplitudes.len())
        .map(|k| k as f64 * sample_rate_hz / n as f64)
        .collect();
    Ok(Spectrum {
        frequencies,
        amplitudes,
        sample_rate_hz,
        source_trace: None,
    })
}

/// Spectrum of one trace of a set, tagged with its index.
pub fn trace_spectrum<T: Real>(ts: &TraceSet<T>, trace_index: usize) -> Result<Spectrum<T>, SpectralError> {
    let mut sp = magnitude_spectrum(ts.trace(trace_index), ts.meta.sample_rate_hz)?;
    sp.source_trace = Some(trace_index);
    Ok(sp)
}

/// Short-time magnitude transform: rows are time bins, columns frequency
/// bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram<T> {
    magnitudes: Vec<T>,
    pub num_time_bins: usize,
    pub num_freq_bins: usize,
    pub window_len: usize,
    pub hop_len: usize,
    pub window: WindowKind,
    pub sample_rate_hz: f64,
}

impl<T: Real> Spectrogram<T> {
    /// Magnitudes of one time bin across all frequency bins.
    pub fn time_bin(&self, t: usize) -> &[T] {
        &self.magnitudes[t * self.num_freq_bins..(t + 1) * self.num_freq_bins]
    }

    pub fn frequency_of_bin(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate_hz / self.window_len as f64
    }

    pub fn time_of_bin(&self, t: usize) -> f64 {
        if self.sample_rate_hz > 0.0 {
            (t * self.hop_len) as f64 / self.sample_rate_hz
        } else {
            (t * self.hop_len) as f64
        }
    }
}

/// Short-time transform over frames fully contained in the trace.
pub fn spectrogram<T: Real>(
    trace: &[T],
    window_len: usize,
    hop_len: usize,
    sample_rate_hz: f64,
    window: WindowKind,
) -> Result<Spectrogram<T>, SpectralError> {
    if window_len < 2 || hop_len == 0 || window_len > trace.len() {
        return Err(SpectralError::BadWindow {
            window: window_len,
            hop: hop_len,
            samples: trace.len(),
        });
    }
    let coeffs: Vec<T> = window
        .coefficients(window_len)
        .into_iter()
        .map(T::from_f64_rounded)
        .collect();
    let num_time_bins = (trace.len() - window_len) / hop_len + 1;
    let num_freq_bins = window_len / 2 + 1;
    let mut planner = FftPlanner::new();
    let mut magnitudes = Vec::with_capacity(num_time_bins * num_freq_bins);
    for frame_idx in 0..num_time_bins {
        let start = frame_idx * hop_len;
        let frame: Vec<Complex<T>> = trace[start..start + window_len]
            .iter()
            .zip(&coeffs)
            .map(|(&v, &w)| Complex::new(v * w, T::zero()))
            .collect();
        magnitudes.extend(dft_magnitudes(&frame, &mut planner));
    }
    Ok(Spectrogram {
        magnitudes,
        num_time_bins,
        num_freq_bins,
        window_len,
        hop_len,
        window,
        sample_rate_hz,
    })
}

/// Equal-width bin counts over all samples of a trace set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramReport {
    /// `num_bins + 1` edges spanning the pooled min..max range.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl HistogramReport {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Histogram over the pooled samples of every trace. The top edge is
/// inclusive so the maximum lands in the last bin; single-valued data lands
/// entirely in bin 0.
pub fn histogram<T: Real>(ts: &TraceSet<T>, num_bins: usize) -> Result<HistogramReport, SpectralError> {
    if num_bins == 0 {
        return Err(SpectralError::NoBins);
    }
    let mut counts = vec![0u64; num_bins];
    let samples = ts.samples();
    if samples.is_empty() {
        return Ok(HistogramReport {
            edges: (0..=num_bins).map(|i| i as f64).collect(),
            counts,
        });
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in samples {
        let v = v.as_f64();
        min = min.min(v);
        max = max.max(v);
    }
    let width = (max - min) / num_bins as f64;
    for &v in samples {
        let v = v.as_f64();
        let bin = if width > 0.0 {
            (((v - min) / width) as usize).min(num_bins - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    let edges = (0..=num_bins).map(|i| min + i as f64 * width).collect();
    Ok(HistogramReport { edges, counts })
}

/// Sum of squared magnitudes over bins within `[f_lo, f_hi)`. The upper
/// edge is exclusive, except that `f_hi` equal to the Nyquist frequency
/// includes the final bin; adjacent bands therefore tile without double
/// counting and the full band captures the whole spectrum.
pub fn band_energy<T: Real>(sp: &Spectrum<T>, f_lo: f64, f_hi: f64) -> Result<T, SpectralError> {
    let nyquist = sp.nyquist();
    if !(0.0..f_hi).contains(&f_lo) || f_hi > nyquist {
        return Err(SpectralError::BadBand { f_lo, f_hi, nyquist });
    }
    let mut acc = T::zero();
    for (f, &a) in sp.frequencies.iter().zip(&sp.amplitudes) {
        let in_band = (*f >= f_lo && *f < f_hi) || (f_hi == nyquist && *f == nyquist);
        if in_band {
            acc += a * a;
        }
    }
    Ok(acc)
}
