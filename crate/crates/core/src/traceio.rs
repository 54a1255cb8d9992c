//! Trace-set container and persistence: a JSON manifest next to a raw
//! little-endian `f32` payload, oscilloscope CSV import, and window trimming.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cipher::{block_from_hex, block_to_hex, Block};
use crate::real::Real;

/// Manifest format version this build reads and writes.
pub const FORMAT_VERSION: u32 = 1;

/// File extension of the sample payload that sits next to the manifest.
pub const PAYLOAD_EXTENSION: &str = "f32le";

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("unsupported trace-set format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("payload holds {actual} bytes but the manifest implies {expected}")]
    DimensionMismatch { expected: u64, actual: u64 },
    #[error("{count} plaintexts supplied for {traces} traces")]
    PlaintextCountMismatch { count: usize, traces: usize },
    #[error("trace {path} has {actual} samples, expected {expected}")]
    InconsistentTraceLength {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("CSV parse error in {path} line {line}: {message}")]
    CsvParse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("invalid trim window [{start}, {end}) for {num_samples} samples")]
    InvalidWindow {
        start: usize,
        end: usize,
        num_samples: usize,
    },
    #[error("sample matrix holds {actual} values, expected {expected}")]
    BadSampleCount { expected: usize, actual: usize },
}

/// Where a trace set came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Simulated,
    Imported,
}

/// Echo of the simulator configuration, persisted in the manifest so a
/// stored set can be regenerated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfigEcho {
    pub key: String,
    pub num_traces: usize,
    pub samples_per_trace: usize,
    pub schedule: String,
    pub leak_offsets: Vec<usize>,
    pub gain: f64,
    pub noise_sigma: f64,
    pub averaging: u32,
    pub seed: u64,
    pub plaintext_mode: String,
}

/// Acquisition metadata carried alongside the sample matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub sample_rate_hz: f64,
    pub source: Source,
    pub averaging_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<String>,
    /// Start of the retained window relative to the original capture,
    /// accumulated across trims.
    #[serde(default)]
    pub trim_offset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_config: Option<SimConfigEcho>,
}

impl TraceMeta {
    pub fn imported(sample_rate_hz: f64) -> Self {
        TraceMeta {
            sample_rate_hz,
            source: Source::Imported,
            averaging_count: 1,
            probe: None,
            trim_offset: 0,
            sim_config: None,
        }
    }
}

/// A matrix of voltage samples (traces x samples) plus the plaintext each
/// trace was captured under. Samples are stored trace-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet<T> {
    samples: Vec<T>,
    num_samples: usize,
    plaintexts: Vec<Block>,
    ciphertexts: Option<Vec<Block>>,
    pub meta: TraceMeta,
}

impl<T: Real> TraceSet<T> {
    pub fn new(
        samples: Vec<T>,
        num_samples: usize,
        plaintexts: Vec<Block>,
        ciphertexts: Option<Vec<Block>>,
        meta: TraceMeta,
    ) -> Result<Self, TraceIoError> {
        let expected = plaintexts.len() * num_samples;
        if samples.len() != expected {
            return Err(TraceIoError::BadSampleCount {
                expected,
                actual: samples.len(),
            });
        }
        if let Some(cts) = &ciphertexts {
            if cts.len() != plaintexts.len() {
                return Err(TraceIoError::PlaintextCountMismatch {
                    count: cts.len(),
                    traces: plaintexts.len(),
                });
            }
        }
        Ok(TraceSet {
            samples,
            num_samples,
            plaintexts,
            ciphertexts,
            meta,
        })
    }

    pub fn num_traces(&self) -> usize {
        self.plaintexts.len()
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn is_empty(&self) -> bool {
        self.plaintexts.is_empty()
    }

    /// One trace's samples.
    pub fn trace(&self, t: usize) -> &[T] {
        &self.samples[t * self.num_samples..(t + 1) * self.num_samples]
    }

    /// The full trace-major sample matrix.
    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn plaintexts(&self) -> &[Block] {
        &self.plaintexts
    }

    pub fn ciphertexts(&self) -> Option<&[Block]> {
        self.ciphertexts.as_deref()
    }

    /// Gather one sample column across all traces.
    pub fn sample_column(&self, s: usize) -> Vec<T> {
        assert!(s < self.num_samples, "sample index {s} out of range");
        (0..self.num_traces()).map(|t| self.trace(t)[s]).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    num_traces: usize,
    num_samples: usize,
    sample_rate_hz: f64,
    source: Source,
    plaintexts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ciphertexts: Option<Vec<String>>,
    payload: String,
    averaging_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probe: Option<String>,
    #[serde(default)]
    trim_offset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sim_config: Option<SimConfigEcho>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TraceIoError + '_ {
    move |source| TraceIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn payload_name(manifest_path: &Path) -> String {
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "traces".to_string());
    format!("{stem}.{PAYLOAD_EXTENSION}")
}

/// Write a file atomically: to a temporary sibling first, then rename.
fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), TraceIoError> {
    let tmp = path.with_extension("tmp");
    let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    let mut writer = BufWriter::new(file);
    write(&mut writer).map_err(io_err(&tmp))?;
    writer.into_inner().map_err(|e| TraceIoError::Io {
        path: tmp.clone(),
        source: e.into_error(),
    })?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Persist a trace set: JSON manifest at `manifest_path`, raw little-endian
/// `f32` payload (trace-major) in a sidecar file next to it.
///
/// Samples are stored in 32-bit precision; wider in-memory scalars are
/// rounded on write.
pub fn write_trace_set<T: Real>(ts: &TraceSet<T>, manifest_path: &Path) -> Result<(), TraceIoError> {
    let payload = payload_name(manifest_path);
    let payload_path = manifest_path.with_file_name(&payload);

    write_atomic(&payload_path, |w| {
        for &v in &ts.samples {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
        Ok(())
    })?;

    let manifest = Manifest {
        version: FORMAT_VERSION,
        num_traces: ts.num_traces(),
        num_samples: ts.num_samples,
        sample_rate_hz: ts.meta.sample_rate_hz,
        source: ts.meta.source,
        plaintexts: ts.plaintexts.iter().map(block_to_hex).collect(),
        ciphertexts: ts
            .ciphertexts
            .as_ref()
            .map(|cts| cts.iter().map(block_to_hex).collect()),
        payload,
        averaging_count: ts.meta.averaging_count,
        probe: ts.meta.probe.clone(),
        trim_offset: ts.meta.trim_offset,
        sim_config: ts.meta.sim_config.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    write_atomic(manifest_path, |w| {
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")
    })
}

fn manifest_err(path: &Path, message: impl Into<String>) -> TraceIoError {
    TraceIoError::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_blocks(path: &Path, hexes: &[String]) -> Result<Vec<Block>, TraceIoError> {
    hexes
        .iter()
        .map(|h| block_from_hex(h).map_err(|e| manifest_err(path, format!("block {h:?}: {e}"))))
        .collect()
}

/// Load a trace set written by [`write_trace_set`].
pub fn read_trace_set<T: Real>(manifest_path: &Path) -> Result<TraceSet<T>, TraceIoError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| manifest_err(manifest_path, e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(TraceIoError::UnsupportedVersion {
            found: manifest.version,
            supported: FORMAT_VERSION,
        });
    }
    if manifest.plaintexts.len() != manifest.num_traces {
        return Err(manifest_err(
            manifest_path,
            format!(
                "{} plaintexts listed for {} traces",
                manifest.plaintexts.len(),
                manifest.num_traces
            ),
        ));
    }
    let plaintexts = parse_blocks(manifest_path, &manifest.plaintexts)?;
    let ciphertexts = manifest
        .ciphertexts
        .as_ref()
        .map(|cts| parse_blocks(manifest_path, cts))
        .transpose()?;

    let payload_path = manifest_path.with_file_name(&manifest.payload);
    let expected_values = manifest.num_traces * manifest.num_samples;
    let expected_bytes = expected_values as u64 * 4;
    let file = fs::File::open(&payload_path).map_err(io_err(&payload_path))?;
    let actual_bytes = file.metadata().map_err(io_err(&payload_path))?.len();
    if actual_bytes != expected_bytes {
        return Err(TraceIoError::DimensionMismatch {
            expected: expected_bytes,
            actual: actual_bytes,
        });
    }
    let mut reader = BufReader::new(file);
    let mut samples = Vec::with_capacity(expected_values);
    let mut buf = [0u8; 4];
    for _ in 0..expected_values {
        reader.read_exact(&mut buf).map_err(io_err(&payload_path))?;
        samples.push(T::from_f64_rounded(f32::from_le_bytes(buf) as f64));
    }

    TraceSet::new(
        samples,
        manifest.num_samples,
        plaintexts,
        ciphertexts,
        TraceMeta {
            sample_rate_hz: manifest.sample_rate_hz,
            source: manifest.source,
            averaging_count: manifest.averaging_count,
            probe: manifest.probe,
            trim_offset: manifest.trim_offset,
            sim_config: manifest.sim_config,
        },
    )
}

/// Parse one oscilloscope CSV export: two comma-separated numeric columns
/// (time in seconds, voltage in volts), optional header row. Returns the
/// voltages and the sample rate inferred from the time span (0 when it
/// cannot be inferred).
fn parse_csv_trace(path: &Path) -> Result<(Vec<f64>, f64), TraceIoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut voltages = Vec::new();
    let mut first_time = None;
    let mut last_time = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line_no = idx as u64 + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(TraceIoError::CsvParse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 2 columns, found {}", fields.len()),
            });
        }
        let parsed: Option<(f64, f64)> = match (fields[0].parse(), fields[1].parse()) {
            (Ok(t), Ok(v)) => Some((t, v)),
            _ => None,
        };
        match parsed {
            Some((t, v)) => {
                if first_time.is_none() {
                    first_time = Some(t);
                }
                last_time = Some(t);
                voltages.push(v);
            }
            // a single non-numeric first row is treated as the header
            None if idx == 0 => continue,
            None => {
                return Err(TraceIoError::CsvParse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("non-numeric cell in {trimmed:?}"),
                });
            }
        }
    }
    let rate = match (first_time, last_time) {
        (Some(t0), Some(t1)) if voltages.len() >= 2 && t1 > t0 => {
            (voltages.len() - 1) as f64 / (t1 - t0)
        }
        _ => 0.0,
    };
    Ok((voltages, rate))
}

/// Import one CSV file per trace. All files must agree on the sample count;
/// the time column is used only to infer the sample rate (from the first
/// file) and then discarded.
pub fn import_oscilloscope_csv<T: Real>(
    paths: &[PathBuf],
    plaintexts: Vec<Block>,
) -> Result<TraceSet<T>, TraceIoError> {
    if plaintexts.len() != paths.len() {
        return Err(TraceIoError::PlaintextCountMismatch {
            count: plaintexts.len(),
            traces: paths.len(),
        });
    }
    let mut samples: Vec<T> = Vec::new();
    let mut num_samples = 0usize;
    let mut sample_rate_hz = 0.0f64;
    for (i, path) in paths.iter().enumerate() {
        let (voltages, rate) = parse_csv_trace(path)?;
        if i == 0 {
            num_samples = voltages.len();
            sample_rate_hz = rate;
        } else if voltages.len() != num_samples {
            return Err(TraceIoError::InconsistentTraceLength {
                path: path.clone(),
                expected: num_samples,
                actual: voltages.len(),
            });
        }
        samples.extend(voltages.into_iter().map(T::from_f64_rounded));
    }
    TraceSet::new(
        samples,
        num_samples,
        plaintexts,
        None,
        TraceMeta::imported(sample_rate_hz),
    )
}

/// Extract the sample window `[start, end)` from every trace. Trace order,
/// plaintexts and metadata are preserved; the cumulative window offset is
/// recorded.
pub fn trim<T: Real>(ts: &TraceSet<T>, start: usize, end: usize) -> Result<TraceSet<T>, TraceIoError> {
    if start >= end || end > ts.num_samples {
        return Err(TraceIoError::InvalidWindow {
            start,
            end,
            num_samples: ts.num_samples,
        });
    }
    let width = end - start;
    let mut samples = Vec::with_capacity(ts.num_traces() * width);
    for t in 0..ts.num_traces() {
        samples.extend_from_slice(&ts.trace(t)[start..end]);
    }
    let mut meta = ts.meta.clone();
    meta.trim_offset += start;
    TraceSet::new(
        samples,
        width,
        ts.plaintexts.clone(),
        ts.ciphertexts.clone(),
        meta,
    )
}
