//! Two-phase distillation: students learn from teacher maps and ground
//! truth, then the spatiotemporal model is initialised from both students
//! and fine-tuned on ground truth alone.

use crate::autodiff::{Tape, Var};
use crate::dataset::ClipSample;
use crate::error::{Error, Result};
use crate::metrics::{FrameInput, MetricReport};
use crate::network::{self, LayerTable, NetworkKind, NetworkSpec, ParamVars, SIZE_MULTIPLE};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::Tensor;
use crate::weights::WeightStore;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default mini-batch size.
pub const DEFAULT_BATCH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    StudentSpatial,
    StudentTemporal,
    Fusion,
}

impl Phase {
    pub fn kind(self) -> NetworkKind {
        match self {
            Phase::StudentSpatial => NetworkKind::SpatialStudent,
            Phase::StudentTemporal => NetworkKind::TemporalStudent,
            Phase::Fusion => NetworkKind::Spatiotemporal,
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "student-spatial" => Ok(Phase::StudentSpatial),
            "student-temporal" => Ok(Phase::StudentTemporal),
            "fusion" => Ok(Phase::Fusion),
            _ => Err(Error::Config(format!(
                "unknown phase '{s}' (student-spatial|student-temporal|fusion)"
            ))),
        }
    }
}

/// Hyper-parameters of one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Weight of the teacher term in the student losses.
    pub mu: f64,
    pub resolution: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub table: LayerTable,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            mu: 0.5,
            resolution: 32,
            batch_size: DEFAULT_BATCH,
            epochs: 1,
            seed: 0,
            adam: AdamConfig::default(),
            table: LayerTable::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::Config(format!("mu must lie in [0, 1], got {}", self.mu)));
        }
        if self.resolution < 2 * SIZE_MULTIPLE || !self.resolution.is_multiple_of(SIZE_MULTIPLE) {
            return Err(Error::Config(format!(
                "resolution must be a multiple of {SIZE_MULTIPLE} and at least {}, got {}",
                2 * SIZE_MULTIPLE,
                self.resolution
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        self.table.validate()
    }
}

/// Mean training loss of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

/// `mu · soft + (1 − mu) · hard` on the tape.
pub fn record_mixed_loss(tape: &mut Tape<f32>, pred: Var, soft: Var, hard: Var, mu: f64) -> Result<Var> {
    let ls = tape.mse_normalized(pred, soft)?;
    let lh = tape.mse_normalized(pred, hard)?;
    let a = tape.scale(ls, mu as f32);
    let b = tape.scale(lh, (1.0 - mu) as f32);
    tape.add(a, b)
}

/// Student loss on plain tensors, same arithmetic as the training path.
pub fn student_loss(pred: &Tensor<f32>, teacher: &Tensor<f32>, truth: &Tensor<f32>, mu: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (p, s, h) = (
        tape.constant(pred.clone()),
        tape.constant(teacher.clone()),
        tape.constant(truth.clone()),
    );
    let l = record_mixed_loss(&mut tape, p, s, h, mu)?;
    Ok(tape.value(l).item()?.into())
}

/// Spatiotemporal loss: ground truth only.
pub fn fusion_loss(pred: &Tensor<f32>, truth: &Tensor<f32>) -> Result<f64> {
    let mut tape = Tape::new();
    let (p, h) = (tape.constant(pred.clone()), tape.constant(truth.clone()));
    let l = tape.mse_normalized(p, h)?;
    Ok(tape.value(l).item()?.into())
}

/// Stream inputs of a network for one sample.
pub fn inputs_for(kind: NetworkKind, s: &ClipSample) -> Vec<Tensor<f32>> {
    match kind {
        NetworkKind::SpatialStudent => vec![s.frame.clone()],
        NetworkKind::TemporalStudent => vec![s.pair()],
        NetworkKind::Spatiotemporal => vec![s.frame.clone(), s.pair()],
    }
}

fn teacher(phase: Phase, s: &ClipSample) -> Option<&Tensor<f32>> {
    match phase {
        Phase::StudentSpatial => s.teacher_s.as_ref(),
        Phase::StudentTemporal => s.teacher_t.as_ref(),
        Phase::Fusion => None,
    }
}

struct Prepared {
    inputs: Vec<Vec<Tensor<f32>>>,
    truth: Vec<Tensor<f32>>,
    soft: Vec<Option<Tensor<f32>>>,
}

fn prepare(phase: Phase, samples: &[ClipSample], cfg: &DistillConfig) -> Result<Prepared> {
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let needs_teacher = phase != Phase::Fusion && cfg.mu > 0.0;
    let mut p = Prepared {
        inputs: Vec::with_capacity(samples.len()),
        truth: Vec::with_capacity(samples.len()),
        soft: Vec::with_capacity(samples.len()),
    };
    for (i, s) in samples.iter().enumerate() {
        let (_, _, h, w) = s.frame.dims4()?;
        if (h, w) != (cfg.resolution, cfg.resolution) {
            return Err(Error::Config(format!(
                "sample {i} is {h}×{w}, configured resolution is {}",
                cfg.resolution
            )));
        }
        let soft = teacher(phase, s).cloned();
        if needs_teacher && soft.is_none() {
            return Err(Error::Config(format!("sample {i} has no teacher map for {phase:?}")));
        }
        p.inputs.push(inputs_for(phase.kind(), s));
        p.truth.push(s.density.clone());
        p.soft.push(soft);
    }
    Ok(p)
}

fn stack(items: impl Iterator<Item = Tensor<f32>>) -> Result<Tensor<f32>> {
    let v: Vec<Tensor<f32>> = items.collect();
    Tensor::stack_batch(&v.iter().collect::<Vec<_>>())
}

/// Fixed per-epoch order of sample indices.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mixed = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mixed));
    idx
}

/// Train `weights` in place for `cfg.epochs` epochs of `phase`.
///
/// `on_epoch` sees each epoch's mean loss as soon as it finishes.
pub fn train_phase(
    phase: Phase,
    weights: &mut WeightStore<f32>,
    samples: &[ClipSample],
    cfg: &DistillConfig,
    mut on_epoch: impl FnMut(EpochLoss),
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    let spec = network::build(phase.kind(), &cfg.table)?;
    spec.check_weights(weights)?;
    let data = prepare(phase, samples, cfg)?;
    let mut state = AdamState::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let loss = train_step(&spec, phase, weights, &mut state, &data, batch, cfg)?;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        let rec = EpochLoss {
            epoch,
            loss: total / count as f64,
        };
        on_epoch(rec);
        history.push(rec);
    }
    Ok(history)
}

fn train_step(
    spec: &NetworkSpec,
    phase: Phase,
    weights: &mut WeightStore<f32>,
    state: &mut AdamState<f32>,
    data: &Prepared,
    batch: &[usize],
    cfg: &DistillConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let params = ParamVars::bind(&mut tape, weights, true);
    let n_streams = data.inputs[batch[0]].len();
    let mut xs = Vec::with_capacity(n_streams);
    for k in 0..n_streams {
        let x = stack(batch.iter().map(|&i| data.inputs[i][k].clone()))?;
        xs.push(tape.constant(x));
    }
    let rec = network::record(&mut tape, spec, &params, &xs)?;
    let hard = tape.constant(stack(batch.iter().map(|&i| data.truth[i].clone()))?);
    let loss = if phase == Phase::Fusion {
        tape.mse_normalized(rec.output, hard)?
    } else {
        // with mu = 0 the teacher term vanishes; ground truth stands in for a missing map
        let soft = stack(
            batch
                .iter()
                .map(|&i| data.soft[i].clone().unwrap_or_else(|| data.truth[i].clone())),
        )?;
        let soft = tape.constant(soft);
        record_mixed_loss(&mut tape, rec.output, soft, hard, cfg.mu)?
    };
    let value: f64 = tape.value(loss).item()?.into();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("{phase:?} loss became {value}")));
    }
    tape.backward(loss)?;
    let grads = params.gradients(&mut tape)?;
    adam_step(weights, &grads, state, &cfg.adam)?;
    Ok(value)
}

/// Predicted maps (1×1×r×r each) for every sample, batched for speed.
pub fn predict(spec: &NetworkSpec, weights: &WeightStore<f32>, samples: &[ClipSample], batch: usize) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let per: Vec<Vec<Tensor<f32>>> = chunk.iter().map(|s| inputs_for(spec.kind, s)).collect();
        let xs: Vec<Tensor<f32>> = (0..per[0].len())
            .map(|k| stack(per.iter().map(|p| p[k].clone())))
            .collect::<Result<_>>()?;
        let y = network::forward(spec, weights, &xs.iter().collect::<Vec<_>>())?;
        for i in 0..chunk.len() {
            out.push(y.batch_item(i)?);
        }
    }
    Ok(out)
}

/// Score a network on a set of samples.
pub fn evaluate(spec: &NetworkSpec, weights: &WeightStore<f32>, samples: &[ClipSample], seed: u64) -> Result<MetricReport> {
    let preds = predict(spec, weights, samples, DEFAULT_BATCH)?;
    let frames: Vec<FrameInput<'_, f32>> = samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| FrameInput {
            prediction: p,
            density: &s.density,
            fixations: &s.fixations,
        })
        .collect();
    MetricReport::evaluate(&frames, seed)
}

/// Weights and loss histories of a full two-phase run.
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub spatial: WeightStore<f32>,
    pub temporal: WeightStore<f32>,
    pub fused: WeightStore<f32>,
    pub spatial_history: Vec<EpochLoss>,
    pub temporal_history: Vec<EpochLoss>,
    pub fusion_history: Vec<EpochLoss>,
}

/// Both students with `cfg.mu`, then fusion initialised from them.
pub fn run_pipeline(samples: &[ClipSample], cfg: &DistillConfig, fusion_epochs: usize) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let s_spec = network::build_spatial_student(&cfg.table)?;
    let t_spec = network::build_temporal_student(&cfg.table)?;
    let st_spec = network::build_spatiotemporal(&cfg.table)?;
    let mut spatial = network::init_random(&s_spec, cfg.seed)?;
    let spatial_history = train_phase(Phase::StudentSpatial, &mut spatial, samples, cfg, |_| {})?;
    let mut temporal = network::init_random(&t_spec, cfg.seed.wrapping_add(1))?;
    let temporal_history = train_phase(Phase::StudentTemporal, &mut temporal, samples, cfg, |_| {})?;
    let mut fused = network::init_from_students(&st_spec, &spatial, &temporal, cfg.seed.wrapping_add(2))?;
    let fcfg = DistillConfig {
        epochs: fusion_epochs,
        ..cfg.clone()
    };
    let fusion_history = train_phase(Phase::Fusion, &mut fused, samples, &fcfg, |_| {})?;
    Ok(PipelineOutcome {
        spatial,
        temporal,
        fused,
        spatial_history,
        temporal_history,
        fusion_history,
    })
}

/// Ablation: the spatiotemporal model trained from random streams, fusion phase only.
pub fn run_ablation(samples: &[ClipSample], cfg: &DistillConfig) -> Result<(WeightStore<f32>, Vec<EpochLoss>)> {
    let st_spec = network::build_spatiotemporal(&cfg.table)?;
    let mut w = network::init_random(&st_spec, cfg.seed.wrapping_add(3))?;
    let h = train_phase(Phase::Fusion, &mut w, samples, cfg, |_| {})?;
    Ok((w, h))
}

/// One row of a mu sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mu: f64,
    pub nss_mean: f64,
    pub nss_std: f64,
}

/// Held-out NSS of the full pipeline for each mu, over `repeats` seeds.
///
/// Repeat `r` uses seed `cfg.seed + r` for every mu, so the grid points
/// differ only in mu.
pub fn sweep_mu(
    train: &[ClipSample],
    val: &[ClipSample],
    grid: &[f64],
    repeats: usize,
    cfg: &DistillConfig,
    fusion_epochs: usize,
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() || repeats == 0 {
        return Err(Error::Config("sweep needs a non-empty grid and at least one repeat".into()));
    }
    let st_spec = network::build_spatiotemporal(&cfg.table)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &mu in grid {
        let mut scores = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let c = DistillConfig {
                mu,
                seed: cfg.seed.wrapping_add(r as u64),
                ..cfg.clone()
            };
            let out = run_pipeline(train, &c, fusion_epochs)?;
            scores.push(evaluate(&st_spec, &out.fused, val, c.seed)?.mean().nss);
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
        let row = SweepRow {
            mu,
            nss_mean: mean,
            nss_std: std,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

fn write_rows<R: Serialize>(path: &std::path::Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::metrics::csv_io(e, path))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::from(e).with_path(path))
}

/// `epoch,loss` rows.
pub fn write_history_csv(path: impl AsRef<std::path::Path>, history: &[EpochLoss]) -> Result<()> {
    write_rows(path.as_ref(), history)
}

/// `mu,nss_mean,nss_std` rows.
pub fn write_sweep_csv(path: impl AsRef<std::path::Path>, rows: &[SweepRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}
