use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rcn_core::data::{load_dataset, load_packed, synth_generate, write_frames, write_packed, Dataset, INDEX_FILE};
use rcn_core::eval::{self, evaluate, run_trials};
use rcn_core::gradcheck::{grad_check, GradCheckOptions};
use rcn_core::recurrent::count_params;
use rcn_core::training::{train, StopReason, TrainEvent, TrainOptions};
use rcn_core::{checkpoint, Architecture, Config, Error, Result};

#[derive(Parser)]
#[command(name = "rcn", version, about = "Recurrent convolutional networks for video re-identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset and write the final checkpoint and loss history.
    Train(TrainArgs),
    /// Rank camera-b sequences against camera-a probes with a checkpoint.
    Evaluate(EvaluateArgs),
    /// Repeated split/train/evaluate rounds with averaged CMC curves.
    Trials(TrialsArgs),
    /// Write a synthetic two-camera dataset.
    Synth(SynthArgs),
    /// Compare backpropagated gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Print parameter counts of a configuration.
    Params(ParamsArgs),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Preset {
    #[default]
    Full,
    Toy,
    GradCheck,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Starting configuration before the config file and overrides.
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    height: Option<String>,
    #[arg(long)]
    width: Option<String>,
    /// Comma-separated channels per recurrent layer.
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    kernel: Option<String>,
    /// stacked, rcn-ind or 9x9-1x1.
    #[arg(long)]
    variant: Option<String>,
    /// last, average or max.
    #[arg(long)]
    pooling_mode: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    /// Frames per training subsequence.
    #[arg(long = "t")]
    seq_len: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    batches_per_epoch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self, seed: Option<u64>) -> Result<Config> {
        let mut cfg = match self.preset {
            Preset::Full => Config::default(),
            Preset::Toy => Config::toy(),
            Preset::GradCheck => Config::grad_check(),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            cfg.apply(&text)?;
        }
        let flags = [
            ("height", &self.height),
            ("width", &self.width),
            ("channels", &self.channels),
            ("kernel", &self.kernel),
            ("variant", &self.variant),
            ("pooling_mode", &self.pooling_mode),
            ("dropout", &self.dropout),
            ("t", &self.seq_len),
            ("batch", &self.batch),
            ("batches_per_epoch", &self.batches_per_epoch),
            ("lr", &self.lr),
            ("rho", &self.rho),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("checkpoint_every", &self.checkpoint_every),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DataArgs {
    /// Frame-layout root, or a packed directory containing index.tsv.
    #[arg(long)]
    data: PathBuf,
}

impl DataArgs {
    fn load(&self, cfg: &Config) -> Result<Dataset> {
        let ds = if self.data.join(INDEX_FILE).is_file() {
            load_packed(&self.data)?
        } else {
            load_dataset(&self.data, (cfg.height, cfg.width))?.1
        };
        ds.validate()?;
        if let Some(res) = ds.resolution() {
            if res != (cfg.height, cfg.width) {
                return Err(Error::Manifest(format!(
                    "{} holds {}×{} frames but the configuration expects {}×{}",
                    self.data.display(),
                    res.0,
                    res.1,
                    cfg.height,
                    cfg.width
                )));
            }
        }
        eprintln!("loaded {} persons, {} frames", ds.persons().len(), ds.total_frames());
        Ok(ds)
    }
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    /// Output directory for `checkpoint/`, `loss.csv` and periodic snapshots.
    #[arg(long)]
    out: PathBuf,
    /// File listing the training identities, one per line; all persons when absent.
    #[arg(long)]
    ids: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    seed: u64,
    /// File listing the test identities; all persons when absent.
    #[arg(long)]
    ids: Option<PathBuf>,
    /// Where to write the `rank,match_rate` table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrialsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    persons: usize,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Write the packed tensor form instead of PNG frames.
    #[arg(long)]
    packed: bool,
}

#[derive(Args)]
struct GradCheckArgs {
    #[command(flatten)]
    config: GradCheckConfig,
    #[arg(long)]
    seed: u64,
    /// Components checked per parameter tensor.
    #[arg(long, default_value_t = 32)]
    samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

#[derive(Args, Clone)]
struct GradCheckConfig {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve(Some(a.seed))?;
    let arch = Architecture::new(&cfg)?;
    let ds = a.data.load(&cfg)?;
    let ids = match &a.ids {
        Some(p) => read_ids(p)?,
        None => ds.persons(),
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let start = Instant::now();
    let mut on_event = |ev: TrainEvent<'_>| match ev {
        TrainEvent::Epoch { epoch, mean_loss } => {
            if epoch == 1 || epoch % 10 == 0 {
                eprintln!("epoch {epoch:>5}  loss {mean_loss:.6}  ({:.1?})", start.elapsed());
            }
        }
        TrainEvent::Checkpoint { epoch, path } => {
            eprintln!("epoch {epoch:>5}  checkpoint {}", path.display());
        }
    };
    let out = train(
        &arch,
        &ds,
        &ids,
        TrainOptions {
            checkpoint_dir: Some(a.out.join("checkpoints")),
            initial: None,
            on_event: Some(&mut on_event),
        },
    )?;
    eval::write_loss_csv(a.out.join("loss.csv"), &out.loss_history)?;
    match out.stop {
        StopReason::NonFinite { epoch, message } => {
            Err(Error::Numeric(format!("training halted at epoch {epoch}: {message}")))
        }
        stop => {
            checkpoint::save(a.out.join("checkpoint"), &cfg, &out.params)?;
            if let StopReason::Plateau { epoch } = stop {
                eprintln!("loss plateaued; stopped after epoch {epoch}");
            }
            println!("checkpoint written to {}", a.out.join("checkpoint").display());
            Ok(())
        }
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let (mut cfg, params) = checkpoint::load(&a.checkpoint)?;
    cfg.seed = a.seed;
    let arch = Architecture::new(&cfg)?;
    arch.check(&params)?;
    let ds = a.data.load(&cfg)?;
    let ids = match &a.ids {
        Some(p) => read_ids(p)?,
        None => ds.persons(),
    };
    let ev = evaluate(&arch, &params, &ds, &ids)?;
    let csv = eval::cmc_csv(&ev.curve);
    match &a.out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    for r in [1, 5, 10, 20] {
        if r <= ev.curve.gallery_size() {
            eprintln!("rank {r:>2}: {:.1}%", ev.curve.rank_at(r)?);
        }
    }
    Ok(())
}

fn cmd_trials(a: TrialsArgs) -> Result<()> {
    let cfg = a.config.resolve(Some(a.seed))?;
    Architecture::new(&cfg)?;
    let ds = a.data.load(&cfg)?;
    let start = Instant::now();
    let report = run_trials(&ds, &cfg, a.trials, Some(&a.out), |t| {
        eprintln!(
            "trial seed {}: rank-1 {:.1}% after {} epochs ({:.1?})",
            t.seed,
            100.0 * t.curve.match_rate[0],
            t.loss_history.len(),
            start.elapsed()
        );
    })?;
    print!("{}", eval::cmc_csv(&report.mean));
    eprintln!("mean rank-1 {:.1}%", report.mean.rank_at(1)?);
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let ds = synth_generate(a.persons, a.frames, (a.height, a.width), a.seed)?;
    if a.packed {
        write_packed(&ds, &a.out)?;
    } else {
        write_frames(&ds, &a.out)?;
    }
    println!("wrote {} sequences to {}", ds.samples.len(), a.out.display());
    Ok(())
}

fn cmd_grad_check(a: GradCheckArgs) -> Result<()> {
    let cfg = ConfigArgs {
        preset: Preset::GradCheck,
        config: a.config.config.clone(),
        sets: a.config.sets.clone(),
        ..Default::default()
    }
    .resolve(Some(a.seed))?;
    let opts = GradCheckOptions {
        samples_per_tensor: a.samples,
        tolerance: a.tolerance,
        ..Default::default()
    };
    let start = Instant::now();
    let report = grad_check(&cfg, a.seed, &opts)?;
    println!("group,checked,refined,max_rel_error,max_abs_grad");
    for g in &report.groups {
        println!("{},{},{},{:.3e},{:.3e}", g.name, g.checked, g.refined, g.max_rel_error, g.max_abs_grad);
    }
    eprintln!("checked {} groups in {:.1?}", report.groups.len(), start.elapsed());
    report.into_result().map(|_| ())
}

fn cmd_params(a: ParamsArgs) -> Result<()> {
    let cfg = a.config.resolve(None)?;
    let arch = Architecture::new(&cfg)?;
    let params = arch.build_params(&mut |s| rcn_core::Tensor::zeros(s));
    println!("recurrent {}", count_params(&arch.stack));
    println!("encoder {}", arch.geometry.param_count());
    println!("total {}", params.scalar_count());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = match &cli.command {
        Command::Train(a) => Some(a.seed),
        Command::Evaluate(a) => Some(a.seed),
        Command::Trials(a) => Some(a.seed),
        Command::Synth(a) => Some(a.seed),
        Command::GradCheck(a) => Some(a.seed),
        Command::Params(_) => None,
    };
    if let Some(s) = seed {
        eprintln!("seed {s}");
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Trials(a) => cmd_trials(a),
        Command::Synth(a) => cmd_synth(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Params(a) => cmd_params(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
