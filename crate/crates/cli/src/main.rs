use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use skd_core::bench::{BenchReport, DEFAULT_ITERS, DEFAULT_WARMUP};
use skd_core::dataset::{self, Split};
use skd_core::distill::{self, DistillConfig, Phase};
use skd_core::metrics;
use skd_core::network::{self, NetworkKind};
use skd_core::{formats, synth, Error, WeightStore32};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const RUN_CONFIG: &str = "run_config.json";
const WEIGHTS: &str = "weights.skdw";

#[derive(Parser)]
#[command(name = "skd", version, about = "Saliency distillation for low-resolution aerial video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Write a synthetic clip corpus.
    GenData(GenData),
    /// Train one phase and write its weights.
    Train(Train),
    /// Score a weight file on a corpus split.
    Eval(Eval),
    /// Time inference over a list of resolutions.
    Bench(Bench),
    /// Held-out NSS of the full pipeline over a grid of mu values.
    SweepMu(SweepMu),
}

#[derive(Args, Serialize)]
struct GenData {
    #[arg(long, default_value_t = 200)]
    clips: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    res: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct Train {
    /// student-spatial, student-temporal or fusion
    #[arg(long)]
    phase: String,
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    #[arg(long, default_value_t = 32)]
    res: usize,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = distill::DEFAULT_BATCH)]
    batch: usize,
    /// Seed of the clip-level train/validation split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long)]
    data: PathBuf,
    /// Student weights for fusion (spatial and temporal, any order), or a
    /// starting point for a student phase.
    #[arg(long, num_args = 1..=2)]
    weights_in: Vec<PathBuf>,
    /// Fusion from randomly initialised streams instead of students.
    #[arg(long)]
    random_streams: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct Eval {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train, val or all
    #[arg(long, default_value = "val")]
    split: String,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Working resolution; defaults to the one recorded next to the weights.
    #[arg(long)]
    res: Option<usize>,
    /// Frame whose ROC curve is exported.
    #[arg(long, default_value_t = 0)]
    roc_frame: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct Bench {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
    res_list: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_ITERS)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SweepMu {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 32)]
    res: usize,
    /// Epochs of each student phase.
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    fusion_epochs: usize,
    #[arg(long, default_value_t = distill::DEFAULT_BATCH)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Everything needed to reproduce an output directory.
#[derive(Serialize)]
struct RunConfig<'a> {
    tool_version: &'static str,
    invocation: &'a Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    distill: Option<&'a DistillConfig>,
}

fn prepare_out(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).with_path(dir))?;
    Ok(())
}

fn write_run_config(dir: &Path, cmd: &Command, distill: Option<&DistillConfig>) -> CliResult {
    let cfg = RunConfig {
        tool_version: env!("CARGO_PKG_VERSION"),
        invocation: cmd,
        distill,
    };
    let path = dir.join(RUN_CONFIG);
    let text = serde_json::to_string_pretty(&cfg).expect("run config serialises");
    std::fs::write(&path, text + "\n").map_err(|e| Error::from(e).with_path(&path))?;
    Ok(())
}

fn check_mu(mu: f64) -> CliResult {
    if !(0.0..=1.0).contains(&mu) {
        return usage(format!("--mu must lie in [0, 1], got {mu}"));
    }
    Ok(())
}

fn log_epoch(tag: &'static str) -> impl FnMut(distill::EpochLoss) {
    move |e| eprintln!("[{tag}] epoch {} loss {:.6}", e.epoch + 1, e.loss)
}

fn gen_data(a: &GenData, cmd: &Command) -> CliResult {
    if a.frames < 2 {
        return usage(format!("--frames must be at least 2, got {}", a.frames));
    }
    if a.clips == 0 {
        return usage("--clips must be positive");
    }
    let clips = synth::generate_synthetic_corpus(a.clips, a.frames, a.res, a.seed)?;
    prepare_out(&a.out)?;
    dataset::save_corpus(&a.out, &clips)?;
    write_run_config(&a.out, cmd, None)?;
    println!("wrote {} clips of {} frames at {}×{} to {}", a.clips, a.frames, a.res, a.res, a.out.display());
    Ok(())
}

fn train(a: &Train, cmd: &Command) -> CliResult {
    let phase: Phase = a.phase.parse().or_else(|e: Error| usage(e.to_string()))?;
    check_mu(a.mu)?;
    if phase == Phase::Fusion && !a.random_streams && a.weights_in.len() != 2 {
        return usage("fusion needs both student weight files via --weights-in (or --random-streams)");
    }
    if phase != Phase::Fusion && a.random_streams {
        return usage("--random-streams only applies to --phase fusion");
    }
    if phase != Phase::Fusion && a.weights_in.len() > 1 {
        return usage("a student phase takes at most one --weights-in");
    }

    let inputs: Vec<WeightStore32> = a
        .weights_in
        .iter()
        .map(formats::load_weights)
        .collect::<Result<_, _>>()?;
    let mut cfg = DistillConfig {
        mu: a.mu,
        resolution: a.res,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        ..Default::default()
    };
    if let Some(w) = inputs.first() {
        cfg.table = network::table_of(&network::infer_spec(w)?);
    }
    cfg.validate().or_else(|e| usage(e.to_string()))?;

    let mut weights = match phase {
        Phase::Fusion if a.random_streams => {
            network::init_random(&network::build_spatiotemporal(&cfg.table)?, cfg.seed.wrapping_add(3))?
        }
        Phase::Fusion => {
            let mut spatial = None;
            let mut temporal = None;
            for w in &inputs {
                match network::infer_spec(w)?.kind {
                    NetworkKind::SpatialStudent => spatial = Some(w),
                    NetworkKind::TemporalStudent => temporal = Some(w),
                    NetworkKind::Spatiotemporal => {}
                }
            }
            let (Some(s), Some(t)) = (spatial, temporal) else {
                return usage("--weights-in must name one spatial and one temporal student");
            };
            let st = network::build_spatiotemporal(&cfg.table)?;
            network::init_from_students(&st, s, t, cfg.seed.wrapping_add(2))?
        }
        _ => match inputs.into_iter().next() {
            Some(w) => {
                if network::infer_spec(&w)?.kind != phase.kind() {
                    return usage(format!("--weights-in does not hold a {:?} network", phase.kind()));
                }
                w
            }
            None => network::init_random(&network::build(phase.kind(), &cfg.table)?, cfg.seed)?,
        },
    };

    let clips = dataset::load_corpus(&a.data)?;
    let samples = dataset::split_samples(&clips, Split::Train, a.split_seed, a.res)?;
    eprintln!("training {phase:?} on {} samples at {}×{}", samples.len(), a.res, a.res);
    let history = distill::train_phase(phase, &mut weights, &samples, &cfg, log_epoch("train"))?;

    prepare_out(&a.out)?;
    formats::save_weights(a.out.join(WEIGHTS), &weights)?;
    distill::write_history_csv(a.out.join("loss_history.csv"), &history)?;
    write_run_config(&a.out, cmd, Some(&cfg))?;
    println!("wrote {}", a.out.join(WEIGHTS).display());
    Ok(())
}

/// Resolution recorded in the run config beside a weight file, if any.
fn recorded_resolution(weights: &Path) -> CliResult<Option<usize>> {
    let path = weights.with_file_name(RUN_CONFIG);
    let Ok(text) = std::fs::read_to_string(&path) else {
        return Ok(None);
    };
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: Some(path.clone()),
        offset: 0,
        msg: e.to_string(),
    })?;
    Ok(v.pointer("/distill/resolution").and_then(|r| r.as_u64()).map(|r| r as usize))
}

fn eval(a: &Eval, cmd: &Command) -> CliResult {
    let split: Split = a.split.parse().or_else(|e: Error| usage(e.to_string()))?;
    let weights = formats::load_weights(&a.weights)?;
    let spec = network::infer_spec(&weights)?;
    let recorded = recorded_resolution(&a.weights)?;
    let res = match (a.res, recorded) {
        (Some(r), Some(t)) if r != t => {
            return Err(Error::Config(format!(
                "weights were trained at {t}×{t} but --res asks for {r}×{r}"
            ))
            .into())
        }
        (Some(r), _) | (None, Some(r)) => r,
        (None, None) => return usage("no run config beside the weights; pass --res"),
    };
    let clips = dataset::load_corpus(&a.data)?;
    let samples = dataset::split_samples(&clips, split, a.split_seed, res)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("split {:?} of {} is empty", split, a.data.display())).into());
    }
    let report = distill::evaluate(&spec, &weights, &samples, a.seed)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    prepare_out(&a.out)?;
    report.write_csv(a.out.join("metrics.csv"))?;
    let Some(roc_sample) = samples.get(a.roc_frame) else {
        return usage(format!("--roc-frame {} is past the {} evaluated frames", a.roc_frame, samples.len()));
    };
    let pred = distill::predict(&spec, &weights, std::slice::from_ref(roc_sample), 1)?;
    let roc = metrics::roc_curve(&pred[0], &roc_sample.fixations)?;
    metrics::write_roc_csv(a.out.join("roc.csv"), &roc)?;
    write_run_config(&a.out, cmd, None)?;
    let m = report.mean();
    println!(
        "{} frames: auc {:.4} sauc {:.4} nss {:.4} sim {:.4} cc {:.4}",
        report.frames.len(),
        m.auc,
        m.sauc,
        m.nss,
        m.sim,
        m.cc
    );
    Ok(())
}

fn bench(a: &Bench, cmd: &Command) -> CliResult {
    if a.res_list.is_empty() || a.iters == 0 {
        return usage("--res-list must be non-empty and --iters positive");
    }
    let weights = formats::load_weights(&a.weights)?;
    let report = BenchReport::run(&weights, &a.res_list, a.warmup, a.iters)?;
    prepare_out(&a.out)?;
    report.write_csv(a.out.join("bench.csv"))?;
    write_run_config(&a.out, cmd, None)?;
    println!("resolution,param_count,weight_memory_mb,peak_activation_mb,ms,fps");
    for r in &report.rows {
        println!(
            "{},{},{:.4},{:.4},{:.3},{:.1}",
            r.resolution, r.param_count, r.weight_memory_mb, r.peak_activation_mb, r.ms, r.fps
        );
    }
    Ok(())
}

fn sweep_mu(a: &SweepMu, cmd: &Command) -> CliResult {
    for &mu in &a.grid {
        check_mu(mu)?;
    }
    if a.repeats == 0 {
        return usage("--repeats must be positive");
    }
    let cfg = DistillConfig {
        resolution: a.res,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        ..Default::default()
    };
    cfg.validate().or_else(|e| usage(e.to_string()))?;
    let clips = dataset::load_corpus(&a.data)?;
    let train = dataset::split_samples(&clips, Split::Train, a.split_seed, a.res)?;
    let val = dataset::split_samples(&clips, Split::Val, a.split_seed, a.res)?;
    if val.is_empty() {
        return Err(Error::Config("validation split is empty; need at least two clips".into()).into());
    }
    let rows = distill::sweep_mu(&train, &val, &a.grid, a.repeats, &cfg, a.fusion_epochs, |r| {
        eprintln!("mu {} nss {:.4} ± {:.4}", r.mu, r.nss_mean, r.nss_std)
    })?;
    prepare_out(&a.out)?;
    distill::write_sweep_csv(a.out.join("sweep.csv"), &rows)?;
    write_run_config(&a.out, cmd, Some(&cfg))?;
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    let cmd = &cli.command;
    match cmd {
        Command::GenData(a) => gen_data(a, cmd),
        Command::Train(a) => train(a, cmd),
        Command::Eval(a) => eval(a, cmd),
        Command::Bench(a) => bench(a, cmd),
        Command::SweepMu(a) => sweep_mu(a, cmd),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(4),
                _ => ExitCode::from(3),
            }
        }
    }
}
