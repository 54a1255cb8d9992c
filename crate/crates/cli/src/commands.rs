//! Implementations behind each subcommand. Analysis runs in `f64`; trace
//! payloads on disk are 32-bit floats either way.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use cema::attack::{key_rank, run_cema, run_dema, run_noise_control};
use cema::cipher::{block_from_hex, KeyRegister80};
use cema::leakage::LeakageModel;
use cema::simulate::{simulate_noise_only, simulate_trace_set, LeakSchedule, PlaintextMode, SimConfig};
use cema::spectral::{band_energy, histogram, spectrogram, trace_spectrum, Spectrum, WindowKind};
use cema::stats::max_rho_per_sample;
use cema::traceio::{import_oscilloscope_csv, read_trace_set, trim as trim_set, write_trace_set, TraceSet};

use crate::{
    CemaArgs, CliError, DemaArgs, ImportArgs, InfoArgs, ModelArg, NoiseControlArgs, PlaintextArg,
    ScheduleArg, SemaArgs, SfemaArgs, SimulateArgs, TrimArgs, WindowArg,
};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_key(hex: &str) -> Result<KeyRegister80, CliError> {
    KeyRegister80::from_hex(hex).map_err(|e| usage(format!("key {hex:?}: {e}")))
}

fn load(path: &Path) -> Result<TraceSet<f64>, CliError> {
    Ok(read_trace_set::<f64>(path)?)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("serializing report: {e}")))?;
    json.push('\n');
    write_text(path, &json)
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let key = parse_key(&args.key)?;
    let seed = args.seed.unwrap_or_else(rand::random);
    let schedule = match (args.schedule, &args.offsets) {
        (ScheduleArg::Serial, None) => LeakSchedule::serial_evenly_spaced(args.samples),
        (ScheduleArg::Serial, Some(offs)) => {
            let offsets: [usize; 8] = offs
                .as_slice()
                .try_into()
                .map_err(|_| usage(format!("serial schedule needs 8 offsets, got {}", offs.len())))?;
            LeakSchedule::Serial { offsets }
        }
        (ScheduleArg::Parallel, None) => LeakSchedule::Parallel { offset: args.samples / 2 },
        (ScheduleArg::Parallel, Some(offs)) => match offs.as_slice() {
            [offset] => LeakSchedule::Parallel { offset: *offset },
            _ => return Err(usage(format!("parallel schedule needs 1 offset, got {}", offs.len()))),
        },
    };
    let cfg = SimConfig {
        key,
        num_traces: args.traces,
        samples_per_trace: args.samples,
        schedule,
        gain: args.gain,
        noise_sigma: args.sigma,
        averaging: args.averaging,
        seed,
        plaintext_mode: match args.plaintexts {
            PlaintextArg::Sweep => PlaintextMode::ByteSweep,
            PlaintextArg::Random => PlaintextMode::UniformRandom,
        },
        sample_rate_hz: args.sample_rate,
    };
    let ts = if args.noise_only {
        simulate_noise_only(&cfg)?
    } else {
        simulate_trace_set(&cfg)?
    };
    write_trace_set(&ts, &args.out)?;
    println!(
        "wrote {} traces x {} samples to {} (seed {})",
        ts.num_traces(),
        ts.num_samples(),
        args.out.display(),
        seed
    );
    Ok(())
}

fn dump_surfaces(dir: &Path, ts: &TraceSet<f64>, bytes: &[usize], model: LeakageModel) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for &byte_index in bytes {
        let hyp = cema::leakage::build_hypotheses(ts.plaintexts(), byte_index, model)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let surface = cema::stats::correlation_surface(ts, &hyp)
            .map_err(|e| CliError::Data(e.to_string()))?;

        let path = dir.join(format!("surface_byte{byte_index}.csv"));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "key,sample,rho")?;
        for k in 0..=255u8 {
            for (s, &rho) in surface.row(k).iter().enumerate() {
                writeln!(w, "{k},{s},{rho}")?;
            }
        }
        w.flush()?;

        let path = dir.join(format!("maxrho_byte{byte_index}.csv"));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "sample,rho,key,masked")?;
        for best in max_rho_per_sample(&surface) {
            writeln!(w, "{},{},{},{}", best.sample, best.rho, best.key, best.masked)?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn attack_cema(args: CemaArgs) -> Result<(), CliError> {
    let model = match args.model {
        ModelArg::Hw => LeakageModel::HammingWeight,
        ModelArg::Hd => LeakageModel::HammingDistance { reference: args.hd_reference },
    };
    let true_key = args.true_key.as_deref().map(parse_key).transpose()?;
    let ts = load(&args.input)?;
    let report = run_cema(&ts, &args.bytes, model)?;

    let table = report.summary_table();
    print!("{table}");
    if let Some(path) = &args.table {
        write_text(path, &table)?;
    }
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    if let Some(dir) = &args.dump_dir {
        let indices: Vec<usize> = report.bytes.iter().map(|b| b.byte_index).collect();
        dump_surfaces(dir, &ts, &indices, model)?;
    }
    if let Some(key) = true_key {
        for r in key_rank(&report, &key) {
            println!(
                "true byte {} ({:02X}): rank {}",
                r.byte_index,
                key.round1_subkey()[r.byte_index],
                r.rank
            );
        }
    }
    Ok(())
}

pub fn attack_dema(args: DemaArgs) -> Result<(), CliError> {
    let ts = load(&args.input)?;
    let report = run_dema(&ts, args.byte, args.bit)?;
    let table = report.summary_table();
    print!("{table}");
    if let Some(path) = &args.table {
        write_text(path, &table)?;
    }
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(())
}

pub fn noise_control(args: NoiseControlArgs) -> Result<(), CliError> {
    let ts = load(&args.input)?;
    let report = run_noise_control(&ts)?;
    let table = report.summary_table();
    print!("{table}");
    if let Some(path) = &args.table {
        write_text(path, &table)?;
    }
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(())
}

fn check_trace_index(ts: &TraceSet<f64>, index: usize) -> Result<(), CliError> {
    if index >= ts.num_traces() {
        return Err(usage(format!(
            "trace index {index} out of range ({} traces)",
            ts.num_traces()
        )));
    }
    Ok(())
}

fn write_timeseries(path: &Path, ts: &TraceSet<f64>, index: usize) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "sample,time_seconds,voltage")?;
    let rate = ts.meta.sample_rate_hz;
    for (s, &v) in ts.trace(index).iter().enumerate() {
        let t = if rate > 0.0 { s as f64 / rate } else { s as f64 };
        writeln!(w, "{s},{t:e},{v}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_histogram(path: &Path, ts: &TraceSet<f64>, bins: usize) -> Result<(), CliError> {
    let h = histogram(ts, bins)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "bin_lo,bin_hi,count")?;
    for (i, &count) in h.counts.iter().enumerate() {
        writeln!(w, "{},{},{}", h.edges[i], h.edges[i + 1], count)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sema(args: SemaArgs) -> Result<(), CliError> {
    let ts = load(&args.input)?;
    check_trace_index(&ts, args.trace)?;
    fs::create_dir_all(&args.out_dir)?;
    write_timeseries(&args.out_dir.join(format!("timeseries_trace{}.csv", args.trace)), &ts, args.trace)?;
    write_histogram(&args.out_dir.join("histogram.csv"), &ts, args.bins)?;
    if let Some(other) = &args.compare {
        let other_ts = load(other)?;
        check_trace_index(&other_ts, args.trace)?;
        write_timeseries(
            &args.out_dir.join(format!("timeseries_trace{}_compare.csv", args.trace)),
            &other_ts,
            args.trace,
        )?;
        write_histogram(&args.out_dir.join("histogram_compare.csv"), &other_ts, args.bins)?;
    }
    println!("wrote time-domain diagnostics to {}", args.out_dir.display());
    Ok(())
}

fn db(mag: f64) -> f64 {
    20.0 * mag.max(1e-30).log10()
}

fn write_spectrum(path: &Path, sp: &Spectrum<f64>) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "frequency_hz,magnitude,magnitude_db")?;
    for (f, &a) in sp.frequencies.iter().zip(&sp.amplitudes) {
        writeln!(w, "{f},{a},{}", db(a))?;
    }
    w.flush()?;
    Ok(())
}

fn write_spectrogram(
    path: &Path,
    ts: &TraceSet<f64>,
    index: usize,
    window_len: usize,
    hop_len: usize,
    window: WindowKind,
) -> Result<(), CliError> {
    let sg = spectrogram(ts.trace(index), window_len, hop_len, ts.meta.sample_rate_hz, window)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "time_bin,freq_bin,time_seconds,frequency_hz,magnitude")?;
    for t in 0..sg.num_time_bins {
        for (k, &m) in sg.time_bin(t).iter().enumerate() {
            writeln!(w, "{t},{k},{:e},{},{m}", sg.time_of_bin(t), sg.frequency_of_bin(k))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_bands(specs: &[String]) -> Result<Vec<(f64, f64)>, CliError> {
    specs
        .iter()
        .map(|s| {
            let (lo, hi) = s
                .split_once(':')
                .ok_or_else(|| usage(format!("band {s:?} is not lo:hi")))?;
            let lo: f64 = lo.trim().parse().map_err(|_| usage(format!("bad band edge {lo:?}")))?;
            let hi: f64 = hi.trim().parse().map_err(|_| usage(format!("bad band edge {hi:?}")))?;
            Ok((lo, hi))
        })
        .collect()
}

/// Mean band energy across every trace of a set.
fn mean_band_energy(ts: &TraceSet<f64>, f_lo: f64, f_hi: f64) -> Result<f64, CliError> {
    let mut acc = 0.0;
    for t in 0..ts.num_traces() {
        let sp = trace_spectrum(ts, t)?;
        acc += band_energy(&sp, f_lo, f_hi)?;
    }
    Ok(acc / ts.num_traces().max(1) as f64)
}

pub fn sfema(args: SfemaArgs) -> Result<(), CliError> {
    let ts = load(&args.input)?;
    check_trace_index(&ts, args.trace)?;
    let window = match args.window {
        WindowArg::Hann => WindowKind::Hann,
        WindowArg::Rectangular => WindowKind::Rectangular,
    };
    fs::create_dir_all(&args.out_dir)?;

    let sp = trace_spectrum(&ts, args.trace)?;
    write_spectrum(&args.out_dir.join(format!("spectrum_trace{}.csv", args.trace)), &sp)?;
    write_spectrogram(
        &args.out_dir.join(format!("spectrogram_trace{}.csv", args.trace)),
        &ts,
        args.trace,
        args.window_len,
        args.hop_len,
        window,
    )?;

    let compare = args.compare.as_deref().map(load).transpose()?;
    if let Some(other) = &compare {
        check_trace_index(other, args.trace)?;
        let sp2 = trace_spectrum(other, args.trace)?;
        write_spectrum(&args.out_dir.join(format!("spectrum_trace{}_compare.csv", args.trace)), &sp2)?;
        write_spectrogram(
            &args.out_dir.join(format!("spectrogram_trace{}_compare.csv", args.trace)),
            other,
            args.trace,
            args.window_len,
            args.hop_len,
            window,
        )?;
    }

    if let Some(bands) = &args.bands {
        let bands = parse_bands(bands)?;
        let path = args.out_dir.join("band_energy.csv");
        let mut w = BufWriter::new(fs::File::create(&path)?);
        if compare.is_some() {
            writeln!(w, "f_lo_hz,f_hi_hz,energy,energy_compare,ratio")?;
        } else {
            writeln!(w, "f_lo_hz,f_hi_hz,energy")?;
        }
        for (lo, hi) in bands {
            let e = mean_band_energy(&ts, lo, hi)?;
            match &compare {
                Some(other) => {
                    let e2 = mean_band_energy(other, lo, hi)?;
                    let ratio = if e2 > 0.0 { e / e2 } else { f64::INFINITY };
                    writeln!(w, "{lo},{hi},{e},{e2},{ratio}")?;
                }
                None => writeln!(w, "{lo},{hi},{e}")?,
            }
        }
        w.flush()?;
    }
    println!("wrote frequency-domain diagnostics to {}", args.out_dir.display());
    Ok(())
}

pub fn import(args: ImportArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.plaintexts)?;
    let plaintexts = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| block_from_hex(l).map_err(|e| usage(format!("plaintext {l:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ts: TraceSet<f64> = import_oscilloscope_csv(&args.csv, plaintexts)?;
    ts.meta.probe = args.probe;
    write_trace_set(&ts, &args.out)?;
    println!(
        "imported {} traces x {} samples to {} ({} Sa/s inferred)",
        ts.num_traces(),
        ts.num_samples(),
        args.out.display(),
        ts.meta.sample_rate_hz
    );
    Ok(())
}

pub fn trim(args: TrimArgs) -> Result<(), CliError> {
    let ts = load(&args.input)?;
    let trimmed = trim_set(&ts, args.start, args.end)?;
    write_trace_set(&trimmed, &args.out)?;
    println!(
        "trimmed to {} samples (window [{}, {}), cumulative offset {}) at {}",
        trimmed.num_samples(),
        args.start,
        args.end,
        trimmed.meta.trim_offset,
        args.out.display()
    );
    Ok(())
}

pub fn info(args: InfoArgs) -> Result<(), CliError> {
    let ts = load(&args.input)?;
    println!("traces:        {}", ts.num_traces());
    println!("samples:       {}", ts.num_samples());
    println!("sample rate:   {} Hz", ts.meta.sample_rate_hz);
    println!("source:        {:?}", ts.meta.source);
    println!("averaging:     {}", ts.meta.averaging_count);
    println!("trim offset:   {}", ts.meta.trim_offset);
    println!("probe:         {}", ts.meta.probe.as_deref().unwrap_or("-"));
    println!("ciphertexts:   {}", if ts.ciphertexts().is_some() { "yes" } else { "no" });
    match &ts.meta.sim_config {
        Some(echo) => {
            println!("simulated with:");
            println!("  key:        {}", echo.key);
            println!("  schedule:   {} at {:?}", echo.schedule, echo.leak_offsets);
            println!("  gain:       {} V/HW", echo.gain);
            println!("  sigma:      {} V", echo.noise_sigma);
            println!("  averaging:  {}", echo.averaging);
            println!("  seed:       {}", echo.seed);
            println!("  plaintexts: {}", echo.plaintext_mode);
        }
        None => println!("sim config:    -"),
    }
    Ok(())
}
