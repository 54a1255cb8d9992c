//! Synthetic EM-trace generator: Gaussian noise averaged over repeated
//! acquisition cycles, plus a linear Hamming-weight emission of the round-1
//! S-box output injected at configurable sample offsets.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::cipher::{encrypt_with_schedule, key_schedule_80, round1_sbox_output_byte, Block, KeyRegister80, State64};
use crate::leakage::{LeakModelParams, LeakageError, LeakageModel};
use crate::real::Real;
use crate::traceio::{SimConfigEcho, Source, TraceMeta, TraceSet};

/// Sample rate recorded for simulated sets, matching the acquisition rate of
/// the bench the defaults mirror.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 2.5e9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("byte sweep supports at most 256 plaintexts, requested {0}")]
    SweepTooLong(usize),
    #[error("leak offset {offset} out of range for {samples} samples")]
    OffsetOutOfRange { offset: usize, samples: usize },
    #[error("serial schedule requires 8 distinct leak offsets")]
    DuplicateOffsets,
    #[error("averaging count must be at least 1")]
    ZeroAveraging,
    #[error(transparent)]
    Leakage(#[from] LeakageError),
}

/// When each state byte's leakage lands in the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeakSchedule {
    /// The target loop processes one byte at a time, so each byte leaks at
    /// its own sample offset.
    Serial { offsets: [usize; 8] },
    /// All eight bytes contribute to a single sample (summed), as a wide
    /// parallel implementation would.
    Parallel { offset: usize },
}

impl LeakSchedule {
    /// Eight evenly spaced offsets, centered in equal-width segments.
    pub fn serial_evenly_spaced(samples_per_trace: usize) -> Self {
        let mut offsets = [0usize; 8];
        for (j, o) in offsets.iter_mut().enumerate() {
            *o = (2 * j + 1) * samples_per_trace / 16;
        }
        LeakSchedule::Serial { offsets }
    }

    pub fn offsets(&self) -> Vec<usize> {
        match self {
            LeakSchedule::Serial { offsets } => offsets.to_vec(),
            LeakSchedule::Parallel { offset } => vec![*offset],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LeakSchedule::Serial { .. } => "serial",
            LeakSchedule::Parallel { .. } => "parallel",
        }
    }
}

/// How per-trace plaintexts are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlaintextMode {
    /// Block `i` is byte value `i` repeated in all eight positions,
    /// `00..00` through `FF..FF`.
    ByteSweep,
    /// Independent uniform random blocks.
    UniformRandom,
}

impl PlaintextMode {
    fn name(&self) -> &'static str {
        match self {
            PlaintextMode::ByteSweep => "byte_sweep",
            PlaintextMode::UniformRandom => "uniform_random",
        }
    }
}

/// Full description of one simulated acquisition run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig<T> {
    pub key: KeyRegister80,
    pub num_traces: usize,
    pub samples_per_trace: usize,
    pub schedule: LeakSchedule,
    /// Volts per Hamming unit.
    pub gain: T,
    /// Noise standard deviation per acquisition cycle, in volts.
    pub noise_sigma: T,
    /// Encryption cycles averaged into each stored trace.
    pub averaging: u32,
    pub seed: u64,
    pub plaintext_mode: PlaintextMode,
    pub sample_rate_hz: f64,
}

impl<T: Real> SimConfig<T> {
    /// Defaults mirroring the reference acquisition: 256 traces of 8800
    /// samples, five-cycle averaging, serial leak schedule, 1 mV per
    /// Hamming unit.
    pub fn new(key: KeyRegister80, seed: u64) -> Self {
        SimConfig {
            key,
            num_traces: 256,
            samples_per_trace: 8800,
            schedule: LeakSchedule::serial_evenly_spaced(8800),
            gain: T::from_f64_rounded(1e-3),
            noise_sigma: T::from_f64_rounded(2e-3),
            averaging: 5,
            seed,
            plaintext_mode: PlaintextMode::ByteSweep,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        }
    }

    pub fn leak_params(&self) -> LeakModelParams<T> {
        LeakModelParams {
            gain: self.gain,
            noise_sigma: self.noise_sigma,
            model: LeakageModel::HammingWeight,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.leak_params().validate()?;
        if self.averaging == 0 {
            return Err(SimError::ZeroAveraging);
        }
        if matches!(self.plaintext_mode, PlaintextMode::ByteSweep) && self.num_traces > 256 {
            return Err(SimError::SweepTooLong(self.num_traces));
        }
        let offsets = self.schedule.offsets();
        for &offset in &offsets {
            if offset >= self.samples_per_trace {
                return Err(SimError::OffsetOutOfRange {
                    offset,
                    samples: self.samples_per_trace,
                });
            }
        }
        if let LeakSchedule::Serial { offsets } = &self.schedule {
            let mut sorted = *offsets;
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(SimError::DuplicateOffsets);
            }
        }
        Ok(())
    }

    pub fn echo(&self) -> SimConfigEcho {
        SimConfigEcho {
            key: self.key.to_hex(),
            num_traces: self.num_traces,
            samples_per_trace: self.samples_per_trace,
            schedule: self.schedule.name().to_string(),
            leak_offsets: self.schedule.offsets(),
            gain: self.gain.as_f64(),
            noise_sigma: self.noise_sigma.as_f64(),
            averaging: self.averaging,
            seed: self.seed,
            plaintext_mode: self.plaintext_mode.name().to_string(),
        }
    }
}

/// The incrementing plaintext sweep: block `i` is byte `i` in all eight
/// positions.
pub fn gen_plaintexts_byte_sweep(n: usize) -> Result<Vec<Block>, SimError> {
    if n > 256 {
        return Err(SimError::SweepTooLong(n));
    }
    Ok((0..n).map(|i| [i as u8; 8]).collect())
}

fn gen_plaintexts<T: Real>(cfg: &SimConfig<T>, seed: u64) -> Result<Vec<Block>, SimError> {
    match cfg.plaintext_mode {
        PlaintextMode::ByteSweep => gen_plaintexts_byte_sweep(cfg.num_traces),
        PlaintextMode::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..cfg.num_traces)
                .map(|_| {
                    let mut block = [0u8; 8];
                    rng.fill_bytes(&mut block);
                    block
                })
                .collect())
        }
    }
}

fn render_trace<T: Real>(cfg: &SimConfig<T>, gain: T, plaintext: &Block, noise_seed: u64) -> Vec<T> {
    let samples = cfg.samples_per_trace;
    let mut trace = vec![0.0f64; samples];
    let sigma = cfg.noise_sigma.as_f64();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let m = cfg.averaging as f64;
        for v in trace.iter_mut() {
            let mut acc = 0.0f64;
            for _ in 0..cfg.averaging {
                let z: f64 = rng.sample(StandardNormal);
                acc += z * sigma;
            }
            *v = acc / m;
        }
    }
    let params = LeakModelParams {
        gain,
        noise_sigma: cfg.noise_sigma,
        model: LeakageModel::HammingWeight,
    };
    let subkey = cfg.key.round1_subkey();
    match &cfg.schedule {
        LeakSchedule::Serial { offsets } => {
            for (j, &offset) in offsets.iter().enumerate() {
                let emitted = params.emission(round1_sbox_output_byte(plaintext[j], subkey[j]));
                trace[offset] += emitted.as_f64();
            }
        }
        LeakSchedule::Parallel { offset } => {
            let mut total = 0.0f64;
            for j in 0..8 {
                let emitted = params.emission(round1_sbox_output_byte(plaintext[j], subkey[j]));
                total += emitted.as_f64();
            }
            trace[*offset] += total;
        }
    }
    trace.into_iter().map(T::from_f64_rounded).collect()
}

fn simulate_with_gain<T: Real>(cfg: &SimConfig<T>, gain: T) -> Result<TraceSet<T>, SimError> {
    cfg.validate()?;

    // Two logically separate streams are derived from the user seed:
    // plaintext choice and noise. Regenerating with different noise
    // parameters leaves the plaintexts untouched.
    let mut root = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plaintext_seed = root.next_u64();
    let noise_master_seed = root.next_u64();
    let plaintexts = gen_plaintexts(cfg, plaintext_seed)?;

    let mut seeder = ChaCha8Rng::seed_from_u64(noise_master_seed);
    let trace_seeds: Vec<u64> = (0..cfg.num_traces).map(|_| seeder.next_u64()).collect();

    let rows: Vec<Vec<T>> = plaintexts
        .par_iter()
        .zip(trace_seeds.par_iter())
        .map(|(pt, &seed)| render_trace(cfg, gain, pt, seed))
        .collect();
    let mut samples = Vec::with_capacity(cfg.num_traces * cfg.samples_per_trace);
    for row in rows {
        samples.extend(row);
    }

    let schedule = key_schedule_80(&cfg.key);
    let ciphertexts: Vec<Block> = plaintexts
        .iter()
        .map(|pt| encrypt_with_schedule(State64::from_block(pt), &schedule).to_block())
        .collect();

    let meta = TraceMeta {
        sample_rate_hz: cfg.sample_rate_hz,
        source: Source::Simulated,
        averaging_count: cfg.averaging,
        probe: None,
        trim_offset: 0,
        sim_config: Some(cfg.echo()),
    };
    Ok(TraceSet::new(
        samples,
        cfg.samples_per_trace,
        plaintexts,
        Some(ciphertexts),
        meta,
    )
    .expect("dimensions are consistent by construction"))
}

/// Generate a full trace set per the configuration.
pub fn simulate_trace_set<T: Real>(cfg: &SimConfig<T>) -> Result<TraceSet<T>, SimError> {
    simulate_with_gain(cfg, cfg.gain)
}

/// Generate the matching non-encryption control set: identical noise
/// process with the emission gain forced to zero. The plaintext list stays
/// attached so the attack pipeline can consume the set unchanged.
pub fn simulate_noise_only<T: Real>(cfg: &SimConfig<T>) -> Result<TraceSet<T>, SimError> {
    simulate_with_gain(cfg, T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::sbox_byte;
    use crate::leakage::hamming_weight;

    fn test_key() -> KeyRegister80 {
        KeyRegister80::from_hex("ACDEFB21F9234375C0E6").unwrap()
    }

    fn small_cfg(sigma: f64) -> SimConfig<f64> {
        let mut cfg = SimConfig::new(test_key(), 42);
        cfg.num_traces = 16;
        cfg.samples_per_trace = 64;
        cfg.schedule = LeakSchedule::serial_evenly_spaced(64);
        cfg.gain = 1.0;
        cfg.noise_sigma = sigma;
        cfg
    }

    #[test]
    fn sweep_blocks() {
        let pts = gen_plaintexts_byte_sweep(256).unwrap();
        assert_eq!(pts[0], [0x00; 8]);
        assert_eq!(pts[0xAC], [0xAC; 8]);
        assert_eq!(pts[255], [0xFF; 8]);
        assert_eq!(gen_plaintexts_byte_sweep(257), Err(SimError::SweepTooLong(257)));
    }

    #[test]
    fn noiseless_serial_traces_hold_exact_weights() {
        let cfg = small_cfg(0.0);
        let ts = simulate_trace_set(&cfg).unwrap();
        let subkey = cfg.key.round1_subkey();
        let offsets = match cfg.schedule {
            LeakSchedule::Serial { offsets } => offsets,
            _ => unreachable!(),
        };
        for t in 0..ts.num_traces() {
            let pt = ts.plaintexts()[t];
            let trace = ts.trace(t);
            for (j, &offset) in offsets.iter().enumerate() {
                let expected = hamming_weight(sbox_byte(pt[j] ^ subkey[j])) as f64;
                assert_eq!(trace[offset], expected, "trace {t} byte {j}");
            }
            for (s, &v) in trace.iter().enumerate() {
                if !offsets.contains(&s) {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn noiseless_parallel_sums_all_bytes() {
        let key = KeyRegister80::from_hex("5A5A5A5A5A5A5A5A5A5A").unwrap();
        let mut cfg = SimConfig::<f64>::new(key, 1);
        cfg.num_traces = 256;
        cfg.samples_per_trace = 10;
        cfg.schedule = LeakSchedule::Parallel { offset: 4 };
        cfg.gain = 1.0;
        cfg.noise_sigma = 0.0;
        let ts = simulate_trace_set(&cfg).unwrap();
        for (i, pt) in ts.plaintexts().iter().enumerate() {
            let expected = 8.0 * hamming_weight(sbox_byte(pt[0] ^ 0x5A)) as f64;
            assert_eq!(ts.trace(i)[4], expected, "plaintext {i}");
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = small_cfg(1.5);
        let a = simulate_trace_set(&cfg).unwrap();
        let b = simulate_trace_set(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plaintexts_do_not_depend_on_noise_parameters() {
        let a = simulate_trace_set(&small_cfg(0.5)).unwrap();
        let b = simulate_trace_set(&small_cfg(2.0)).unwrap();
        assert_eq!(a.plaintexts(), b.plaintexts());

        let mut random_mode = small_cfg(0.5);
        random_mode.plaintext_mode = PlaintextMode::UniformRandom;
        let mut random_mode2 = random_mode.clone();
        random_mode2.noise_sigma = 3.0;
        random_mode2.averaging = 25;
        let a = simulate_trace_set(&random_mode).unwrap();
        let b = simulate_trace_set(&random_mode2).unwrap();
        assert_eq!(a.plaintexts(), b.plaintexts());
    }

    #[test]
    fn averaging_scales_noise_variance() {
        let variance_at = |m: u32| -> f64 {
            let key = test_key();
            let mut cfg = SimConfig::<f64>::new(key, 7);
            cfg.num_traces = 256;
            cfg.samples_per_trace = 40;
            cfg.schedule = LeakSchedule::Serial {
                offsets: [0, 1, 2, 3, 4, 5, 6, 7],
            };
            cfg.plaintext_mode = PlaintextMode::UniformRandom;
            cfg.gain = 0.0;
            cfg.noise_sigma = 2.0;
            cfg.averaging = m;
            let ts = simulate_trace_set(&cfg).unwrap();
            // pool all samples from non-leak region (offsets 8..40)
            let mut acc = 0.0;
            let mut count = 0usize;
            for t in 0..ts.num_traces() {
                for &v in &ts.trace(t)[8..] {
                    acc += v * v;
                    count += 1;
                }
            }
            acc / count as f64
        };
        let sigma_sq = 4.0;
        for m in [1u32, 5, 25] {
            let var = variance_at(m);
            let expected = sigma_sq / m as f64;
            assert!(
                (var - expected).abs() / expected < 0.10,
                "m={m}: measured {var}, expected {expected}"
            );
        }
    }

    #[test]
    fn noise_only_is_zero_mean_and_silent_at_sigma_zero() {
        let cfg = small_cfg(0.0);
        let ts = simulate_noise_only(&cfg).unwrap();
        assert!(ts.samples().iter().all(|&v| v == 0.0));

        let mut noisy = small_cfg(1.0);
        noisy.num_traces = 256;
        noisy.samples_per_trace = 40;
        noisy.schedule = LeakSchedule::serial_evenly_spaced(40);
        let ts = simulate_noise_only(&noisy).unwrap();
        let n = (ts.num_traces() * ts.num_samples()) as f64;
        let mean: f64 = ts.samples().iter().sum::<f64>() / n;
        let sigma_eff = 1.0 / (noisy.averaging as f64).sqrt();
        assert!(
            mean.abs() < 3.0 * sigma_eff / n.sqrt(),
            "mean {mean} too far from zero"
        );
        // the plaintext list stays attached for the attack pipeline
        assert_eq!(ts.plaintexts().len(), 256);
    }

    /// Attacking pure noise: the whole-surface |rho| maximum stays under
    /// the 5/sqrt(T) null bound in at least 19 of 20 seeds.
    #[test]
    fn noise_only_cema_stays_under_the_null_bound() {
        use crate::leakage::{build_hypotheses, LeakageModel};
        use crate::stats::correlation_surface;
        let bound = 5.0 / 256f64.sqrt();
        let mut under = 0;
        for seed in 0..20u64 {
            let mut cfg = SimConfig::<f64>::new(test_key(), seed);
            cfg.num_traces = 256;
            cfg.samples_per_trace = 64;
            cfg.schedule = LeakSchedule::serial_evenly_spaced(64);
            cfg.noise_sigma = 1.0;
            cfg.averaging = 1;
            let ts = simulate_noise_only(&cfg).unwrap();
            let hyp = build_hypotheses(ts.plaintexts(), 0, LeakageModel::HammingWeight).unwrap();
            let surface = correlation_surface(&ts, &hyp).unwrap();
            let max_abs = surface.rho.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            if max_abs < bound {
                under += 1;
            }
        }
        assert!(under >= 19, "only {under}/20 seeds under {bound}");
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = small_cfg(1.0);
        cfg.schedule = LeakSchedule::Serial {
            offsets: [0, 1, 2, 3, 4, 5, 6, 100],
        };
        assert_eq!(
            cfg.validate(),
            Err(SimError::OffsetOutOfRange { offset: 100, samples: 64 })
        );

        cfg.schedule = LeakSchedule::Serial {
            offsets: [0, 1, 2, 3, 4, 5, 6, 6],
        };
        assert_eq!(cfg.validate(), Err(SimError::DuplicateOffsets));

        let mut cfg = small_cfg(1.0);
        cfg.averaging = 0;
        assert_eq!(cfg.validate(), Err(SimError::ZeroAveraging));

        let mut cfg = small_cfg(1.0);
        cfg.num_traces = 300;
        assert_eq!(cfg.validate(), Err(SimError::SweepTooLong(300)));

        let mut cfg = small_cfg(1.0);
        cfg.noise_sigma = -0.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ciphertexts_match_the_cipher() {
        let cfg = small_cfg(0.0);
        let ts = simulate_trace_set(&cfg).unwrap();
        let cts = ts.ciphertexts().unwrap();
        for (pt, ct) in ts.plaintexts().iter().zip(cts) {
            let expected = crate::cipher::encrypt(State64::from_block(pt), &cfg.key);
            assert_eq!(State64::from_block(ct), expected);
        }
    }

    #[test]
    fn manifest_echo_round_trips_configuration() {
        let cfg = small_cfg(1.25);
        let echo = cfg.echo();
        assert_eq!(echo.key, "ACDEFB21F9234375C0E6");
        assert_eq!(echo.schedule, "serial");
        assert_eq!(echo.leak_offsets.len(), 8);
        assert_eq!(echo.noise_sigma, 1.25);
        assert_eq!(echo.plaintext_mode, "byte_sweep");
        let ts = simulate_trace_set(&cfg).unwrap();
        assert_eq!(ts.meta.sim_config.as_ref().unwrap(), &echo);
    }
}
