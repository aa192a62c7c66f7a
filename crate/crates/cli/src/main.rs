use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qrng_core::analysis::{entropy_peak_frequency, log_frequencies, rate_curve, serial_correlation};
use qrng_core::config::{ExtractorKind, Mode, PipelineConfig};
use qrng_core::io::{self as qio, TagWriter};
use qrng_core::pipeline::{
    run_linospad, run_randy_events, simulate_events, FrameSource, PipelineRun, SimulatedFrames, TagFile,
};
use qrng_core::sampling::sample_events;
use qrng_core::source::PhotonEventStream;
use serde_json::{json, Value};

/// Random bits from simulated photon arrivals.
#[derive(Parser)]
#[command(name = "qrng", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate detections and write them as an event or tag file.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Condition, extract and analyse, from simulation or a file.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        /// Read detections from an event file instead of simulating.
        #[arg(long, conflicts_with = "tags")]
        events: Option<PathBuf>,
        /// Read frames from a tag file instead of simulating.
        #[arg(long)]
        tags: Option<PathBuf>,
        /// Also write the sampled stream before conditioning (single-detector mode).
        #[arg(long)]
        raw: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bias and serial-correlation report of a packed bit file.
    Analyze {
        bits: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_lag: usize,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Entropy and bit rate against sampling frequency.
    RateCurve {
        /// Photon count rate, counts/s.
        #[arg(long, default_value_t = 200e3)]
        rate: f64,
        #[arg(long, default_value_t = 1e4)]
        min_freq: f64,
        #[arg(long, default_value_t = 1e10)]
        max_freq: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Fraction of samples lost to conditioning; adds an approximate effective-rate column.
        #[arg(long)]
        loss: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Built-in parameter set.
    #[arg(long, default_value = "randy")]
    preset: String,
    /// JSON configuration, or a manifest written by an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time, seconds.
    #[arg(long, conflicts_with = "frames", allow_negative_numbers = true)]
    duration: Option<f64>,
    /// Number of frames (array mode).
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long, value_parser = parse_extractor)]
    extractor: Option<ExtractorKind>,
}

fn parse_extractor(s: &str) -> Result<ExtractorKind, String> {
    serde_json::from_value(Value::String(s.into()))
        .map_err(|_| format!("unknown extractor {s:?}; one of peres, von-neumann, zhou-bruck, diff, odeven"))
}

impl RunArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => PipelineConfig::preset(&self.preset)?,
        };
        if let Some(seed) = self.seed {
            cfg.sim.seed = seed;
        }
        if let Some(d) = self.duration {
            cfg.sim.duration = d;
        }
        if let Some(n) = self.frames {
            let array = cfg.array.as_ref().context("--frames needs an array configuration")?;
            cfg.sim.duration = n as f64 * array.frame_time;
        }
        if let Some(x) = self.extractor {
            cfg.extractor = x;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let inner = match value.get("config") {
        Some(c) if value.get("tool").is_some() => c.clone(),
        _ => value,
    };
    Ok(PipelineConfig::from_json(&inner.to_string())?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn clock_hz(cfg: &PipelineConfig) -> f64 {
    match &cfg.array {
        Some(a) => 1.0 / a.clock_period,
        None => 1.0 / (cfg.sample_period as f64 * cfg.sim.tick),
    }
}

fn manifest(command: &str, cfg: &PipelineConfig, observed: f64, files: Value) -> Value {
    let mut m = json!({
        "tool": "qrng",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.sim.seed,
        "photon_rate": cfg.sim.photon_rate,
        "observed_count_rate": observed,
        "clock_hz": clock_hz(cfg),
        "files": files,
        "config": cfg,
    });
    if let Some(a) = &cfg.array {
        m["n_frames"] = json!(a.n_frames(&cfg.sim));
        m["frame_time"] = json!(a.frame_time);
    }
    m
}

fn simulate(args: &RunArgs, out: &Path) -> Result<()> {
    let cfg = args.resolve()?;
    create_dir(out)?;
    let (observed, files) = match cfg.mode {
        Mode::Randy => {
            let events = simulate_events(&cfg)?;
            qio::write_events_file(&out.join("events.bin"), &events)?;
            let mut w = BufWriter::new(File::create(out.join("labels.bin"))?);
            qio::write_labels(&mut w, events.labels.as_deref().unwrap_or(&[]))?;
            w.flush()?;
            log::info!("{} events, {:.1} counts/s", events.len(), events.count_rate());
            (
                events.count_rate(),
                json!({"events": "events.bin", "labels": "labels.bin"}),
            )
        }
        Mode::Linospad => {
            let array = cfg.array.as_ref().expect("validated");
            let file = File::create(out.join("tags.bin"))?;
            let mut writer = TagWriter::new(BufWriter::new(file), array.frame_time, array.n_pixels)?;
            let (mut tags, mut frames) = (0u64, 0u64);
            SimulatedFrames::new(&cfg).visit(&mut |batch| {
                for f in batch {
                    tags += f.n_tags() as u64;
                    frames += 1;
                    writer.write_frame(f)?;
                }
                Ok(())
            })?;
            writer.finish()?;
            let live = frames as f64 * array.frame_time * array.n_pixels as f64;
            let observed = if live > 0.0 { tags as f64 / live } else { 0.0 };
            log::info!("{frames} frames, {tags} tags, {observed:.1} counts/s per pixel");
            (observed, json!({"tags": "tags.bin"}))
        }
    };
    write_json(&out.join("manifest.json"), &manifest("simulate", &cfg, observed, files))?;
    Ok(())
}

fn load_events(cfg: &PipelineConfig, path: &Path) -> Result<PhotonEventStream> {
    let (events, tick) = qio::read_events_file(path).with_context(|| format!("reading {}", path.display()))?;
    if qio::to_fs(tick) != qio::to_fs(cfg.sim.tick) {
        bail!(
            "{}: tick {tick} s does not match sim.tick {} s",
            path.display(),
            cfg.sim.tick
        );
    }
    Ok(PhotonEventStream::new(events, tick, cfg.sim.duration_ticks())?)
}

fn pipeline(args: &RunArgs, events: Option<&Path>, tags: Option<&Path>, raw: bool, out: &Path) -> Result<ExitCode> {
    let cfg = args.resolve()?;
    let mut files = json!({
        "bits": "bits.bin",
        "summary": "summary.json",
        "report": "report.json",
        "rates": "rates.json",
    });
    let run: PipelineRun = match cfg.mode {
        Mode::Randy => {
            if tags.is_some() {
                bail!("--tags needs an array configuration");
            }
            let detected = match events {
                Some(p) => load_events(&cfg, p)?,
                None => simulate_events(&cfg)?,
            };
            create_dir(out)?;
            if raw {
                let s = sample_events(&detected, cfg.sample_period, cfg.detector.pulse_width)?;
                qio::write_bits_file(&out.join("sampled.bin"), &s.bits, s.period_seconds())?;
                files["sampled"] = json!("sampled.bin");
            }
            run_randy_events(&cfg, &detected)?
        }
        Mode::Linospad => {
            if events.is_some() {
                bail!("--events needs a single-detector configuration");
            }
            if raw {
                bail!("--raw applies to single-detector runs");
            }
            let run = match tags {
                Some(p) => {
                    let reader = qio::open_tags(p).with_context(|| format!("reading {}", p.display()))?;
                    let array = cfg.array.as_ref().expect("validated");
                    if reader.n_pixels != array.n_pixels {
                        bail!(
                            "{}: {} pixels, config has {}",
                            p.display(),
                            reader.n_pixels,
                            array.n_pixels
                        );
                    }
                    if qio::to_fs(reader.frame_time) != qio::to_fs(array.frame_time) {
                        bail!(
                            "{}: frame time {} s, config has {} s",
                            p.display(),
                            reader.frame_time,
                            array.frame_time
                        );
                    }
                    run_linospad(&cfg, &TagFile::new(p))?
                }
                None => run_linospad(&cfg, &SimulatedFrames::new(&cfg))?,
            };
            create_dir(out)?;
            run
        }
    };
    let s = &run.summary;
    let period = if cfg.extractor == ExtractorKind::Odeven {
        cfg.odeven_tau as f64 * cfg.sim.tick
    } else {
        0.0
    };
    qio::write_bits_file(&out.join("bits.bin"), &run.bits, period)?;
    write_json(&out.join("summary.json"), s)?;
    write_json(&out.join("report.json"), &s.report)?;
    if let Some(c) = &s.conditioning {
        write_json(&out.join("conditioning.json"), c)?;
        files["conditioning"] = json!("conditioning.json");
    }
    let rates = match &s.rates {
        Some(r) => serde_json::to_value(r)?,
        None => json!({"wall_time": s.wall_time, "output_bits": s.output_bits, "output_rate": s.output_rate}),
    };
    write_json(&out.join("rates.json"), &rates)?;
    if let Some(h) = &run.histogram {
        let mut w = BufWriter::new(File::create(out.join("histogram.csv"))?);
        qio::write_histogram_csv(&mut w, h, 4 * cfg.conditioning.cutoff.max_search)?;
        w.flush()?;
        files["histogram"] = json!("histogram.csv");
    }
    write_json(
        &out.join("manifest.json"),
        &manifest("pipeline", &cfg, s.observed_count_rate, files),
    )?;

    println!(
        "{} bits in {:.3} s of acquisition: {:.4e} bit/s",
        s.output_bits, s.wall_time, s.output_rate
    );
    for c in &s.checks {
        println!("{} {}: {}", if c.pass { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if s.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn analyze(bits: &Path, max_lag: usize, out: Option<&Path>) -> Result<ExitCode> {
    let (b, _) = qio::read_bits_file(bits).with_context(|| format!("reading {}", bits.display()))?;
    let report = serial_correlation(&b, max_lag)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(p) = out {
        fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    if !report.pass {
        eprintln!("serial correlation outside the band at lags {:?}", report.failing_lags);
    }
    if !report.bias_ok {
        eprintln!("bias {:.3e} exceeds {:.3e}", report.bias, report.bias_limit);
    }
    Ok(if report.pass && report.bias_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn rate_curve_cmd(rate: f64, lo: f64, hi: f64, points: usize, loss: Option<f64>, out: &Path) -> Result<()> {
    if !(lo > 0.0 && hi > lo) {
        bail!("frequency range must satisfy 0 < min-freq < max-freq");
    }
    let curve = rate_curve(rate, &log_frequencies(lo, hi, points), loss)?;
    create_dir(out)?;
    let mut w = BufWriter::new(File::create(out.join("rate_curve.csv"))?);
    qio::write_rate_curve_csv(&mut w, &curve)?;
    w.flush()?;
    fs::write(
        out.join("rate_curve.gp"),
        qio::rate_curve_gnuplot("rate_curve.csv", &curve),
    )?;
    let peak = entropy_peak_frequency(rate, lo, hi);
    println!("entropy peaks at {peak:.3} Hz for {rate} counts/s");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { run, out } => simulate(&run, &out).map(|_| ExitCode::SUCCESS),
        Command::Pipeline {
            run,
            events,
            tags,
            raw,
            out,
        } => pipeline(&run, events.as_deref(), tags.as_deref(), raw, &out),
        Command::Analyze { bits, max_lag, out } => analyze(&bits, max_lag, out.as_deref()),
        Command::RateCurve {
            rate,
            min_freq,
            max_freq,
            points,
            loss,
            out,
        } => rate_curve_cmd(rate, min_freq, max_freq, points, loss, &out).map(|_| ExitCode::SUCCESS),
    }
}

/// The error and its causes, skipping causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let s = cause.to_string();
        if !msg.contains(&s) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&s);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
