use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use sensorflow::config::RunConfig;
use sensorflow::diffops::GradCheckReport;
use sensorflow::io::{flow_to_color, read_flo, read_frame_png, write_atomic, write_frame_png, DatasetManifest};
use sensorflow::model::{load_checkpoint, save_checkpoint, Checkpoint, SensorFlowNet};
use sensorflow::train::{evaluate, normalize_sensors, synthesize_view, train, Dataset, NormalizationStats};
use sensorflow::world::{generate_benchmark, write_sequence};
use sensorflow::{gradsuite, Error, ExecMode, Result};

/// Sensor-conditioned optical flow: data generation, training and evaluation.
#[derive(Parser)]
#[command(name = "sensorflow", version)]
struct Cli {
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run config; omitted sections and keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the fully resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic benchmark with frames, sensors, GT flow and a manifest.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the `train` split of a manifest.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for checkpoints and metrics.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Split to evaluate; all triplets when omitted.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize a view `k` steps away from one image.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Averaged displacement twist `vx,vy,vz,wx,wy,wz` (rates times dt), before normalization.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        sensor: Vec<f64>,
        #[arg(long, allow_negative_numbers = true)]
        k: i32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a .flo file with the flow color wheel.
    Viz {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Magnitude mapped to full saturation; the field maximum when omitted.
        #[arg(long)]
        max_mag: Option<f64>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn resolve(args: &ConfigArgs) -> Result<Option<RunConfig>> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(None);
    }
    Ok(Some(cfg))
}

fn gen(cfg: &RunConfig, out: &Path, mode: ExecMode) -> Result<()> {
    let bench = generate_benchmark(&cfg.world, &cfg.dataset, mode)?;
    let mut manifest = DatasetManifest::new(cfg.world.camera);
    for (split, seqs) in [("train", &bench.train), ("test", &bench.test)] {
        for (i, seq) in seqs.iter().enumerate() {
            let rel = format!("{split}/seq_{i:04}");
            let m = write_sequence(seq, &out.join(&rel), &rel, split)?;
            manifest.merge(m, &rel);
        }
    }
    let records: Vec<_> = bench.train.iter().flat_map(|s| s.records.iter().cloned()).collect();
    if !records.is_empty() {
        normalize_sensors(records.iter())?.save(&out.join("normalization.json"))?;
        manifest.normalization = Some("normalization.json".into());
    }
    manifest.save(&out.join("manifest.json"))?;
    info!("wrote {} triplets to {}", manifest.triplets.len(), out.display());
    Ok(())
}

fn train_cmd(cfg: &RunConfig, manifest: &Path, out: &Path, mode: ExecMode) -> Result<()> {
    let data = Dataset::from_manifest(manifest, Some("train"))?;
    let stats = normalize_sensors(data.records())?;
    let net = SensorFlowNet::new(&cfg.model)?;
    let tcfg = cfg.train_config();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?);
    let extra = |step: usize| {
        serde_json::json!({ "normalization": stats, "config": cfg, "step": step })
    };
    let init = net.init(tcfg.seed);
    let result = train(&net, &data, &stats, &tcfg, init, mode, |m, state| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        if state.step % 100 == 0 {
            info!("step {} total {:.3} mask {:.3}", m.step, m.total, m.mask_frac);
        }
        if tcfg.checkpoint_every > 0 && state.step % tcfg.checkpoint_every == 0 {
            let ck = Checkpoint { model: cfg.model.clone(), params: state.params.clone(), extra: extra(state.step) };
            save_checkpoint(&out.join(format!("checkpoint_{:06}.sfck", state.step)), &ck)?;
        }
        Ok(())
    });
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let outcome = match result {
        Err(Error::NonFinite { step, dump }) => {
            let path = out.join("nonfinite_batch.json");
            write_atomic(&path, dump.as_bytes())?;
            return Err(Error::NonFinite { step, dump: format!("batch dumped to {}", path.display()) });
        }
        other => other?,
    };
    if outcome.skipped_timescale > 0 {
        info!("{} two-step draws fell off a sequence edge and used one step", outcome.skipped_timescale);
    }
    let ck = Checkpoint { model: cfg.model.clone(), params: outcome.state.params, extra: extra(outcome.state.step) };
    save_checkpoint(&out.join("checkpoint.sfck"), &ck)
}

fn checkpoint_stats(ck: &Checkpoint, path: &Path) -> Result<NormalizationStats> {
    let v = ck.extra.get("normalization").cloned().ok_or_else(|| Error::Checkpoint {
        path: path.into(),
        message: "no normalization stats stored".into(),
    })?;
    serde_json::from_value(v).map_err(|e| Error::Checkpoint { path: path.into(), message: e.to_string() })
}

fn eval_cmd(checkpoint: &Path, manifest: &Path, split: &str, out: Option<&Path>, mode: ExecMode) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let stats = checkpoint_stats(&ck, checkpoint)?;
    let weights = ck
        .extra
        .get("config")
        .and_then(|c| serde_json::from_value::<RunConfig>(c.clone()).ok())
        .map(|c| c.loss)
        .unwrap_or_default();
    let net = SensorFlowNet::new(&ck.model)?;
    let data = Dataset::from_manifest(manifest, Some(split))?;
    let report = evaluate(&net, &ck.params, &data, &stats, &weights, mode)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match out {
        Some(p) => write_atomic(p, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

fn synth_cmd(checkpoint: &Path, image: &Path, sensor: &[f64], k: i32, out: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let stats = checkpoint_stats(&ck, checkpoint)?;
    let net = SensorFlowNet::new(&ck.model)?;
    let img = read_frame_png(image)?;
    let raw: [f64; 6] = sensor.try_into().map_err(|_| Error::InvalidInput("--sensor needs 6 values".into()))?;
    let s = stats.sensor_vector(&raw, ck.model.units);
    write_frame_png(&synthesize_view(&net, &ck.params, &img, &s, k)?, out)
}

fn print_reports(reports: &[GradCheckReport]) -> bool {
    for r in reports {
        println!("{r}");
    }
    reports.iter().all(|r| r.pass)
}

enum Outcome {
    Ok,
    GradcheckFailed,
}

fn run(cli: Cli) -> Result<Outcome> {
    let mode = if cli.sequential { ExecMode::Sequential } else { ExecMode::default() };
    match cli.command {
        Command::Gen { cfg, out } => {
            if let Some(c) = resolve(&cfg)? {
                gen(&c, &out, mode)?;
            }
        }
        Command::Train { cfg, manifest, out } => {
            if let Some(c) = resolve(&cfg)? {
                train_cmd(&c, &manifest, &out, mode)?;
            }
        }
        Command::Eval { checkpoint, manifest, split, out } => eval_cmd(&checkpoint, &manifest, &split, out.as_deref(), mode)?,
        Command::Synth { checkpoint, image, sensor, k, out } => synth_cmd(&checkpoint, &image, &sensor, k, &out)?,
        Command::Viz { flow, out, max_mag } => write_frame_png(&flow_to_color(&read_flo(&flow)?, max_mag), &out)?,
        Command::Gradcheck { seed } => {
            let mut reports = gradsuite::run(&gradsuite::kernel_checks(seed), gradsuite::STEP, gradsuite::TOLERANCE);
            reports.push(gradsuite::network_probe(seed));
            if !print_reports(&reports) {
                return Ok(Outcome::GradcheckFailed);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Io { .. } => 4,
        Error::BadMagic { .. } | Error::SizeMismatch { .. } | Error::Png { .. } | Error::Checkpoint { .. } | Error::Manifest { .. } => 5,
        Error::NonFinite { .. } => 6,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SENSORFLOW_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::GradcheckFailed) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(7)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
