//! Command-line front end.

pub mod build;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::audio::{read_wav, write_wav, SampleFormat};
use crate::dataset::{read_manifest, QueryClue};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::{load_checkpoint, TseModel};
use crate::room::{deconvolve_sweep, generate_ess};
use crate::train::{finetune, ManifestSource, Relabeled, Trainer};
use config::{
    echo, load, BuildDatasetConfig, DataPaths, EvaluateRunConfig, FinetuneRunConfig, RunConfig, SweepConfig,
    TrainRunConfig,
};

#[derive(Debug, Parser)]
#[command(name = "roomtse", version, about = "Distance and room conditioned target speech extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (or file for `extract` and `sweep-deconv`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Single worker thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate RIRs and write sample manifests.
    BuildDataset {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model from scratch or resume a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory written by `build-dataset`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Continue training a checkpoint with overridden settings.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        r_spk: Option<f64>,
        /// Share of the training set to use.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Score checkpoints on a test manifest.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Repeat to average over several trained models.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        r_spk: Option<f64>,
    },
    /// Extract the speech at a query distance from one mixture.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mono mixture WAV.
        #[arg(long)]
        mixture: PathBuf,
        /// Query distance in metres.
        #[arg(long)]
        d_q: Option<f64>,
        /// Reverberation time in seconds.
        #[arg(long)]
        rt60: Option<f64>,
        /// Microphone-wall distances x, Lx-x, y, Ly-y, z, Lz-z in metres.
        #[arg(long, num_args = 6, value_names = ["X0", "X1", "Y0", "Y1", "Z0", "Z1"], allow_negative_numbers = true)]
        dis_mw: Option<Vec<f64>>,
    },
    /// Recover an impulse response from a sine-sweep recording.
    SweepDeconv {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        f1: Option<f64>,
        #[arg(long)]
        f2: Option<f64>,
        /// Sweep duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Written response length in seconds.
        #[arg(long)]
        rir_secs: Option<f64>,
        /// Fail on band or duration mismatches instead of warning.
        #[arg(long)]
        strict: bool,
    },
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Process exit code for an error: 2 for bad configuration or inputs,
/// 3 for numeric failures, 1 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidInput(_)
        | Error::Infeasible(_)
        | Error::MissingClue(_)
        | Error::MissingFile(_)
        | Error::Manifest { .. }
        | Error::Json(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => 1,
    }
}

/// Parses the process arguments and runs the command.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::BuildDataset { common }
        | Command::Train { common, .. }
        | Command::Finetune { common, .. }
        | Command::Evaluate { common, .. }
        | Command::Extract { common, .. }
        | Command::SweepDeconv { common, .. } => common,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let c = common(&cli.command);
    if c.deterministic {
        // fails only when a pool already exists, which then keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let out = c.out.clone();
    let seed = c.seed;
    match cli.command {
        Command::BuildDataset { common } => {
            let mut cfg: BuildDatasetConfig = load(common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let out = out.unwrap_or_else(|| PathBuf::from("data"));
            build::build_dataset(&cfg, &out)
        }
        Command::Train {
            common,
            checkpoint,
            data,
            epochs,
        } => {
            let mut cfg: TrainRunConfig = load(common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(d) = data {
                cfg.data.dir = d;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            cmd_train(&cfg, checkpoint.as_deref(), &out.unwrap_or_else(|| PathBuf::from("runs/train")))
        }
        Command::Finetune {
            common,
            checkpoint,
            data,
            epochs,
            lr,
            r_spk,
            fraction,
        } => {
            let mut cfg: FinetuneRunConfig = load(common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(d) = data {
                cfg.data.dir = d;
            }
            let o = &mut cfg.overrides;
            o.epochs = epochs.or(o.epochs);
            o.lr = lr.or(o.lr);
            o.r_spk = r_spk.or(o.r_spk);
            o.fraction = fraction.or(o.fraction);
            cfg.validate()?;
            cmd_finetune(&cfg, &checkpoint, &out.unwrap_or_else(|| PathBuf::from("runs/finetune")))
        }
        Command::Evaluate {
            common,
            checkpoint,
            data,
            r_spk,
        } => {
            let mut cfg: EvaluateRunConfig = load(common.config.as_deref())?;
            if !checkpoint.is_empty() {
                cfg.checkpoints = checkpoint;
            }
            if let Some(d) = data {
                cfg.data.dir = d;
            }
            cfg.r_spk = r_spk.or(cfg.r_spk);
            cfg.validate()?;
            cmd_evaluate(&cfg, &out.unwrap_or_else(|| PathBuf::from("runs/eval")))
        }
        Command::Extract {
            common: _,
            checkpoint,
            mixture,
            d_q,
            rt60,
            dis_mw,
        } => {
            let dis_mw = dis_mw.map(|v| <[f64; 6]>::try_from(v).expect("clap enforces six values"));
            let out = out.unwrap_or_else(|| PathBuf::from("estimate.wav"));
            let level = cmd_extract(&checkpoint, &mixture, d_q, dis_mw, rt60, &out)?;
            println!("output RMS {level:.2} dBFS");
            Ok(())
        }
        Command::SweepDeconv {
            common,
            recording,
            f1,
            f2,
            duration,
            rir_secs,
            strict,
        } => {
            let mut cfg: SweepConfig = load(common.config.as_deref())?;
            cfg.f1 = f1.unwrap_or(cfg.f1);
            cfg.f2 = f2.unwrap_or(cfg.f2);
            cfg.duration = duration.unwrap_or(cfg.duration);
            cfg.rir_secs = rir_secs.or(cfg.rir_secs);
            cfg.strict |= strict;
            cfg.validate()?;
            cmd_sweep_deconv(&cfg, &recording, &out.unwrap_or_else(|| PathBuf::from("rir.wav")))
        }
    }
}

fn manifest_source(data: &DataPaths, which: &Path, r_spk: Option<f64>, clue_set: crate::dataset::ClueSet) -> Result<ManifestSource> {
    Ok(ManifestSource {
        entries: read_manifest(&data.dir.join(which))?,
        base: data.dir.clone(),
        r_spk,
        clue_set,
    })
}

pub fn cmd_train(cfg: &TrainRunConfig, resume: Option<&Path>, out: &Path) -> Result<()> {
    let mut trainer = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            if ckpt.model.config() != &cfg.model {
                log::warn!("resuming with the checkpoint's model config; the run config's model section is ignored");
            }
            Trainer::resume(ckpt, cfg.train.clone())?
        }
        None => Trainer::new(TseModel::new(cfg.model.clone(), cfg.train.seed)?, cfg.train.clone())?,
    };
    let clue_set = trainer.model.config().clue_set;
    let r_spk = Some(cfg.train.r_spk);
    let train = manifest_source(&cfg.data, &cfg.data.train, r_spk, clue_set)?;
    let val = manifest_source(&cfg.data, &cfg.data.val, r_spk, clue_set)?;
    echo(cfg, &out.join("config.json"))?;
    let summary = trainer.fit(&train, &val, cfg.train.epochs, Some(out))?;
    if let Some(best) = summary.best_val_loss {
        log::info!("best validation loss {best:.4}");
    }
    Ok(())
}

pub fn cmd_finetune(cfg: &FinetuneRunConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let clue_set = ckpt.model.config().clue_set;
    let train = manifest_source(&cfg.data, &cfg.data.train, None, clue_set)?;
    let val = manifest_source(&cfg.data, &cfg.data.val, None, clue_set)?;
    echo(cfg, &out.join("config.json"))?;
    finetune(ckpt, cfg.train.clone(), &cfg.overrides, &train, &val, Some(out))?;
    Ok(())
}

pub fn cmd_evaluate(cfg: &EvaluateRunConfig, out: &Path) -> Result<()> {
    let mut runs = Vec::with_capacity(cfg.checkpoints.len());
    for (i, path) in cfg.checkpoints.iter().enumerate() {
        let model = load_checkpoint(path)?.model;
        let src = manifest_source(&cfg.data, &cfg.data.test, None, model.config().clue_set)?;
        let report = match cfg.r_spk {
            Some(r) => evaluate(&model, &Relabeled::new(&src, r), cfg.tau_inactive, Some(i as u64))?,
            None => evaluate(&model, &src, cfg.tau_inactive, Some(i as u64))?,
        };
        log::info!("{}: {} samples", path.display(), report.n_samples);
        runs.push(report);
    }
    let report = EvalReport::aggregate(&runs)?;
    echo(cfg, &out.join("config.json"))?;
    echo(&report, &out.join("report.json"))?;
    println!("{}", report.table());
    Ok(())
}

/// Writes the extracted speech to `out` and returns its RMS in dBFS.
pub fn cmd_extract(
    checkpoint: &Path,
    mixture: &Path,
    d_q: Option<f64>,
    dis_mw: Option<[f64; 6]>,
    rt60: Option<f64>,
    out: &Path,
) -> Result<f64> {
    let model = load_checkpoint(checkpoint)?.model;
    let clue = QueryClue::from_parts(d_q, dis_mw, rt60, model.config().clue_set)?;
    let y = read_wav(mixture)?;
    let x_hat = model.forward(&y, &clue)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_wav(out, &x_hat, SampleFormat::Float32)?;
    Ok(x_hat.rms_dbfs())
}

pub fn cmd_sweep_deconv(cfg: &SweepConfig, recording: &Path, out: &Path) -> Result<()> {
    let rec = read_wav(recording)?;
    let rate = rec.rate();
    let mut problems = Vec::new();
    if cfg.f2 > rate as f64 / 2.0 {
        problems.push(format!("f2 {} Hz exceeds the Nyquist frequency of {} Hz", cfg.f2, rate / 2));
    }
    let sweep_len = (cfg.duration * rate as f64).round() as usize;
    if rec.len() < sweep_len {
        problems.push(format!(
            "recording has {} samples, shorter than the {sweep_len}-sample sweep",
            rec.len()
        ));
    }
    for p in &problems {
        if cfg.strict {
            return Err(Error::config(p.clone()));
        }
        log::warn!("{p}");
    }
    let f2 = cfg.f2.min(rate as f64 / 2.0 * 0.999);
    let ess = generate_ess(cfg.f1, f2, cfg.duration, rate)?;
    let mut h = deconvolve_sweep(&rec, &ess.inverse)?;
    if let Some(secs) = cfg.rir_secs {
        h = h.fit_to((secs * rate as f64).round() as usize);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_wav(out, &h, SampleFormat::Float32)?;
    log::info!("wrote {} taps to {}", h.len(), out.display());
    Ok(())
}
