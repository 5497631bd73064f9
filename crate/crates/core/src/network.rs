//! The three saliency architectures as declarative layer lists.
//!
//! Each student path is 13 weighted layers: eight 3×3 extractor convs with
//! 2×2 max pools after the 3rd and 5th, then a head of one 1×1 bottleneck
//! conv, two 3×3 convs and two 4×4 stride-2 deconvs. Every conv and the
//! first deconv are followed by ReLU; the last deconv is linear. The
//! spatiotemporal model runs the spatial and temporal extractors side by
//! side, concatenates their features and decodes them with the same head
//! layout (scope `fusion`) whose bottleneck sees twice the channels.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::weights::{ParamName, ParamRole, Scope, WeightStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Parameter budget of the spatiotemporal model.
pub const PARAM_BUDGET: usize = 300_000;
/// Allowed relative deviation from [`PARAM_BUDGET`] for calibrated tables.
pub const PARAM_TOLERANCE: f64 = 0.05;
/// Standard deviation of the truncated normal used for fusion layers.
pub const FUSION_INIT_STD: f64 = 0.05;
/// Number of weighted layers in each student.
pub const STUDENT_DEPTH: usize = 13;
/// Weighted layers shared between a student and a spatiotemporal stream.
pub const STREAM_DEPTH: usize = 8;
/// Spatial extents must be multiples of this (two 2× pools).
pub const SIZE_MULTIPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    SpatialStudent,
    TemporalStudent,
    Spatiotemporal,
}

/// Channel widths shared by all three architectures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTable {
    /// Output widths of the eight 3×3 extractor convs.
    pub extractor: [usize; 8],
    /// Output width of the 1×1 bottleneck conv (layer 9).
    pub bottleneck: usize,
    /// Output widths of the two 3×3 high-level convs (layers 10, 11).
    pub high_level: [usize; 2],
    /// Output width of the first deconv (layer 12); layer 13 emits one map.
    pub decoder: usize,
}

impl Default for LayerTable {
    /// Widths calibrated so the spatiotemporal model holds ≈0.30M parameters.
    fn default() -> Self {
        Self {
            extractor: [16, 16, 32, 32, 48, 64, 64, 64],
            bottleneck: 64,
            high_level: [32, 16],
            decoder: 8,
        }
    }
}

impl LayerTable {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .extractor
            .iter()
            .chain([&self.bottleneck])
            .chain(&self.high_level)
            .chain([&self.decoder]);
        if all.into_iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("layer table has a zero width: {self:?}")));
        }
        Ok(())
    }

    /// Fail unless the spatiotemporal model built from this table is within
    /// ±5% of the 300k parameter budget.
    pub fn check_calibrated(&self) -> Result<usize> {
        let count = build_spatiotemporal(self)?.param_count();
        let dev = (count as f64 - PARAM_BUDGET as f64).abs() / PARAM_BUDGET as f64;
        if dev > PARAM_TOLERANCE {
            return Err(Error::Config(format!(
                "layer table yields {count} parameters, {:.1}% away from the {PARAM_BUDGET} budget",
                dev * 100.0
            )));
        }
        Ok(count)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    /// Square-kernel conv, stride 1, 'same' padding.
    Conv {
        index: usize,
        cin: usize,
        cout: usize,
        kernel: usize,
        relu: bool,
    },
    /// 4×4 stride-2 transposed conv doubling the extents.
    Deconv {
        index: usize,
        cin: usize,
        cout: usize,
        relu: bool,
    },
    /// 2×2 stride-2 max pool.
    Pool,
}

impl Layer {
    fn channels(&self) -> Option<(usize, usize)> {
        match *self {
            Layer::Conv { cin, cout, .. } | Layer::Deconv { cin, cout, .. } => Some((cin, cout)),
            Layer::Pool => None,
        }
    }

    /// Kernel and bias shapes, or `None` for unweighted layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Conv { cin, cout, kernel, .. } => Some((vec![cout, cin, kernel, kernel], vec![cout])),
            Layer::Deconv { cin, cout, .. } => Some((vec![cin, cout, 4, 4], vec![cout])),
            Layer::Pool => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .map(|(k, b)| k.iter().product::<usize>() + b[0])
            .unwrap_or(0)
    }

    fn names(&self, scope: Scope) -> Option<(String, String)> {
        let (index, deconv) = match *self {
            Layer::Conv { index, .. } => (index, false),
            Layer::Deconv { index, .. } => (index, true),
            Layer::Pool => return None,
        };
        Some((
            ParamName::new(scope, deconv, index, ParamRole::Kernel).to_string(),
            ParamName::new(scope, deconv, index, ParamRole::Bias).to_string(),
        ))
    }
}

/// A chain of layers under one naming scope.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub scope: Scope,
    pub input_channels: usize,
    pub layers: Vec<Layer>,
}

impl Block {
    pub fn output_channels(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(Layer::channels)
            .map(|(_, c)| c)
            .unwrap_or(self.input_channels)
    }

    fn check_chain(&self) -> Result<()> {
        let mut c = self.input_channels;
        for layer in &self.layers {
            if let Some((cin, cout)) = layer.channels() {
                if cin != c {
                    return Err(Error::Config(format!(
                        "{}: layer {layer:?} consumes {cin} channels but receives {c}",
                        self.scope.as_str()
                    )));
                }
                if cout == 0 {
                    return Err(Error::Config(format!("{}: zero-width layer", self.scope.as_str())));
                }
                c = cout;
            }
        }
        Ok(())
    }

    fn weighted(&self) -> usize {
        self.layers.iter().filter(|l| l.channels().is_some()).count()
    }
}

/// Complete architecture: zero or more input streams feeding a head.
///
/// Students have a single stream; their input passes straight through the
/// stream then the head. The spatiotemporal model concatenates its two
/// stream outputs along channels before the head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub streams: Vec<Block>,
    pub head: Block,
}

fn extractor(scope: Scope, input_channels: usize, table: &LayerTable) -> Block {
    let mut layers = Vec::with_capacity(10);
    let mut c = input_channels;
    for (i, &w) in table.extractor.iter().enumerate() {
        layers.push(Layer::Conv {
            index: i + 1,
            cin: c,
            cout: w,
            kernel: 3,
            relu: true,
        });
        c = w;
        if i == 2 || i == 4 {
            layers.push(Layer::Pool);
        }
    }
    Block {
        scope,
        input_channels,
        layers,
    }
}

fn head(scope: Scope, input_channels: usize, table: &LayerTable) -> Block {
    let [h1, h2] = table.high_level;
    let layers = vec![
        Layer::Conv {
            index: 9,
            cin: input_channels,
            cout: table.bottleneck,
            kernel: 1,
            relu: true,
        },
        Layer::Conv {
            index: 10,
            cin: table.bottleneck,
            cout: h1,
            kernel: 3,
            relu: true,
        },
        Layer::Conv {
            index: 11,
            cin: h1,
            cout: h2,
            kernel: 3,
            relu: true,
        },
        Layer::Deconv {
            index: 12,
            cin: h2,
            cout: table.decoder,
            relu: true,
        },
        Layer::Deconv {
            index: 13,
            cin: table.decoder,
            cout: 1,
            relu: false,
        },
    ];
    Block {
        scope,
        input_channels,
        layers,
    }
}

fn build_student(kind: NetworkKind, table: &LayerTable) -> Result<NetworkSpec> {
    table.validate()?;
    let (scope, cin) = match kind {
        NetworkKind::SpatialStudent => (Scope::SpatialStream, 3),
        NetworkKind::TemporalStudent => (Scope::TemporalStream, 6),
        NetworkKind::Spatiotemporal => unreachable!(),
    };
    let stream = extractor(scope, cin, table);
    let head = head(Scope::Head, stream.output_channels(), table);
    let spec = NetworkSpec {
        kind,
        streams: vec![stream],
        head,
    };
    spec.validate()?;
    Ok(spec)
}

/// Single-frame student: 3-channel input.
pub fn build_spatial_student(table: &LayerTable) -> Result<NetworkSpec> {
    build_student(NetworkKind::SpatialStudent, table)
}

/// Frame-pair student: 6-channel input (two RGB frames stacked).
pub fn build_temporal_student(table: &LayerTable) -> Result<NetworkSpec> {
    build_student(NetworkKind::TemporalStudent, table)
}

/// Two-stream model whose streams mirror the students' first eight layers.
pub fn build_spatiotemporal(table: &LayerTable) -> Result<NetworkSpec> {
    table.validate()?;
    let s = extractor(Scope::SpatialStream, 3, table);
    let t = extractor(Scope::TemporalStream, 6, table);
    let fused = s.output_channels() + t.output_channels();
    let spec = NetworkSpec {
        kind: NetworkKind::Spatiotemporal,
        streams: vec![s, t],
        head: head(Scope::Fusion, fused, table),
    };
    spec.validate()?;
    Ok(spec)
}

pub fn build(kind: NetworkKind, table: &LayerTable) -> Result<NetworkSpec> {
    match kind {
        NetworkKind::SpatialStudent => build_spatial_student(table),
        NetworkKind::TemporalStudent => build_temporal_student(table),
        NetworkKind::Spatiotemporal => build_spatiotemporal(table),
    }
}

impl NetworkSpec {
    /// Check channel chaining and the 13-layer / pools-after-3-and-5 layout.
    pub fn validate(&self) -> Result<()> {
        let expect_streams = match self.kind {
            NetworkKind::Spatiotemporal => 2,
            _ => 1,
        };
        if self.streams.len() != expect_streams {
            return Err(Error::Config(format!(
                "{:?} needs {expect_streams} stream(s), spec has {}",
                self.kind,
                self.streams.len()
            )));
        }
        for s in &self.streams {
            s.check_chain()?;
            if s.weighted() != STREAM_DEPTH {
                return Err(Error::Config(format!(
                    "stream {} has {} weighted layers, expected {STREAM_DEPTH}",
                    s.scope.as_str(),
                    s.weighted()
                )));
            }
            let mut seen = 0;
            let mut pools_after = Vec::new();
            for l in &s.layers {
                match l {
                    Layer::Pool => pools_after.push(seen),
                    _ => seen += 1,
                }
            }
            if pools_after != [3, 5] {
                return Err(Error::Config(format!(
                    "stream {} pools after layers {pools_after:?}, expected [3, 5]",
                    s.scope.as_str()
                )));
            }
        }
        self.head.check_chain()?;
        let fused: usize = self.streams.iter().map(Block::output_channels).sum();
        if self.head.input_channels != fused {
            return Err(Error::Config(format!(
                "head expects {} channels, streams provide {fused}",
                self.head.input_channels
            )));
        }
        if STREAM_DEPTH + self.head.weighted() != STUDENT_DEPTH {
            return Err(Error::Config("head must hold 5 weighted layers".into()));
        }
        if self.head.output_channels() != 1 {
            return Err(Error::Config("network must emit a single-channel map".into()));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> Vec<usize> {
        self.streams.iter().map(|s| s.input_channels).collect()
    }

    /// All blocks in execution order.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.streams.iter().chain(std::iter::once(&self.head))
    }

    /// `(scope, layer)` for every weighted layer, in execution order.
    pub fn weighted_layers(&self) -> impl Iterator<Item = (Scope, &Layer)> {
        self.blocks()
            .flat_map(|b| b.layers.iter().map(move |l| (b.scope, l)))
            .filter(|(_, l)| !matches!(l, Layer::Pool))
    }

    /// Canonical name and shape of every parameter tensor.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (scope, layer) in self.weighted_layers() {
            let (kn, bn) = layer.names(scope).expect("weighted");
            let (ks, bs) = layer.param_shapes().expect("weighted");
            out.push((kn, ks));
            out.push((bn, bs));
        }
        out
    }

    /// Exact number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.weighted_layers().map(|(_, l)| l.param_count()).sum()
    }

    /// Every declared parameter is present with the right shape and nothing else is.
    pub fn check_weights<T: Scalar>(&self, weights: &WeightStore<T>) -> Result<()> {
        let shapes = self.param_shapes();
        for (name, shape) in &shapes {
            let t = weights.require(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "weight '{name}' has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if weights.len() != shapes.len() {
            let orphan = weights
                .names()
                .find(|n| !shapes.iter().any(|(s, _)| s == n))
                .unwrap_or_default()
                .to_string();
            return Err(Error::Config(format!("orphan weight entry '{orphan}'")));
        }
        Ok(())
    }

    fn check_inputs<T: Scalar>(&self, inputs: &[&Tensor<T>]) -> Result<usize> {
        if inputs.len() != self.streams.len() {
            return Err(Error::shape(format!(
                "{:?} takes {} input(s), got {}",
                self.kind,
                self.streams.len(),
                inputs.len()
            )));
        }
        let (n, _, h, w) = inputs[0].dims4()?;
        for (x, s) in inputs.iter().zip(&self.streams) {
            let (xn, c, xh, xw) = x.dims4()?;
            if c != s.input_channels {
                return Err(Error::shape(format!(
                    "stream {} expects {} channels, input has {c}",
                    s.scope.as_str(),
                    s.input_channels
                )));
            }
            if (xn, xh, xw) != (n, h, w) {
                return Err(Error::shape("stream inputs disagree in batch or extent"));
            }
        }
        if h < SIZE_MULTIPLE || w < SIZE_MULTIPLE || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
            return Err(Error::shape(format!(
                "input extent {h}×{w} must be a positive multiple of {SIZE_MULTIPLE}"
            )));
        }
        Ok(n)
    }
}

/// Recover the architecture and layer table a weight store was built for.
pub fn infer_spec<T: Scalar>(weights: &WeightStore<T>) -> Result<NetworkSpec> {
    let has = |scope: Scope| weights.names().any(|n| n.starts_with(&format!("{}.", scope.as_str())));
    let (kind, stream, head) = if has(Scope::Fusion) {
        (NetworkKind::Spatiotemporal, Scope::SpatialStream, Scope::Fusion)
    } else if has(Scope::SpatialStream) {
        (NetworkKind::SpatialStudent, Scope::SpatialStream, Scope::Head)
    } else if has(Scope::TemporalStream) {
        (NetworkKind::TemporalStudent, Scope::TemporalStream, Scope::Head)
    } else {
        return Err(Error::Config("weights match no known architecture".into()));
    };
    let extent = |scope: Scope, deconv: bool, index: usize, axis: usize| -> Result<usize> {
        let name = ParamName::new(scope, deconv, index, ParamRole::Kernel).to_string();
        weights
            .require(&name)?
            .shape()
            .get(axis)
            .copied()
            .ok_or_else(|| Error::shape(format!("weight '{name}' has too few dimensions")))
    };
    let mut extractor = [0; 8];
    for (i, w) in extractor.iter_mut().enumerate() {
        *w = extent(stream, false, i + 1, 0)?;
    }
    let table = LayerTable {
        extractor,
        bottleneck: extent(head, false, 9, 0)?,
        high_level: [extent(head, false, 10, 0)?, extent(head, false, 11, 0)?],
        decoder: extent(head, true, 12, 1)?,
    };
    let spec = build(kind, &table)?;
    spec.check_weights(weights)?;
    Ok(spec)
}

/// Layer widths of a spec (the first stream's extractor and the head).
pub fn table_of(spec: &NetworkSpec) -> LayerTable {
    let widths = |b: &Block| -> Vec<usize> { b.layers.iter().filter_map(|l| l.channels().map(|c| c.1)).collect() };
    let e = widths(&spec.streams[0]);
    let h = widths(&spec.head);
    LayerTable {
        extractor: e.try_into().expect("validated stream"),
        bottleneck: h[0],
        high_level: [h[1], h[2]],
        decoder: h[3],
    }
}

/// Analytic peak activation memory of one batch-1 f32 forward pass at
/// `res`², in bytes: network inputs, finished stream features and the
/// current layer's input and output are counted as live together.
pub fn peak_activation_bytes(spec: &NetworkSpec, res: usize) -> usize {
    let inputs: usize = spec.streams.iter().map(|s| s.input_channels * res * res).sum();
    let mut peak = 0;
    let mut finished = 0;
    let mut walk = |block: &Block, extent: usize, finished: usize| -> (usize, usize) {
        let (mut c, mut e) = (block.input_channels, extent);
        for l in &block.layers {
            let before = c * e * e;
            match *l {
                Layer::Pool => e = e.div_ceil(2),
                Layer::Conv { cout, .. } => c = cout,
                Layer::Deconv { cout, .. } => {
                    c = cout;
                    e *= 2
                }
            }
            peak = peak.max(inputs + finished + before + c * e * e);
        }
        (c, e)
    };
    let mut feat_extent = res;
    for s in &spec.streams {
        let (c, e) = walk(s, res, finished);
        finished += c * e * e;
        feat_extent = e;
    }
    walk(&spec.head, feat_extent, finished);
    peak * 4
}

/// Tape handles for a bound weight store.
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Record every entry of `weights` on `tape`, as trainable or constant.
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, weights: &WeightStore<T>, trainable: bool) -> Self {
        let vars = weights
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.to_string(), v)
            })
            .collect();
        Self { vars }
    }

    /// Handles for parameters already recorded on a tape, keyed by name.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("no bound parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Collect the gradients of a finished backward pass into a store.
    pub fn gradients<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<WeightStore<T>> {
        let mut out = WeightStore::new();
        for (name, &v) in &self.vars {
            if let Some(g) = tape.take_grad(v) {
                out.insert(name.clone(), g)?;
            }
        }
        Ok(out)
    }
}

/// Handles produced by recording one forward pass.
#[derive(Clone, Debug)]
pub struct Recorded {
    /// N×1×H×W saliency map.
    pub output: Var,
    /// Per-stream layer-8 activations (after ReLU), in stream order.
    pub features: Vec<Var>,
}

fn run_block<T: Scalar>(tape: &mut Tape<T>, block: &Block, params: &ParamVars, mut x: Var) -> Result<Var> {
    for layer in &block.layers {
        x = match layer {
            Layer::Pool => tape.maxpool2(x)?,
            Layer::Conv { relu, .. } | Layer::Deconv { relu, .. } => {
                let (kn, bn) = layer.names(block.scope).expect("weighted");
                let (k, b) = (params.get(&kn)?, params.get(&bn)?);
                let y = match layer {
                    Layer::Conv { .. } => tape.conv2d(x, k, b, 1, Padding::Same)?,
                    _ => tape.deconv2d(x, k, b)?,
                };
                if *relu {
                    tape.relu(y)
                } else {
                    y
                }
            }
        };
    }
    Ok(x)
}

/// Record a forward pass of `spec` on `tape`.
pub fn record<T: Scalar>(
    tape: &mut Tape<T>,
    spec: &NetworkSpec,
    params: &ParamVars,
    inputs: &[Var],
) -> Result<Recorded> {
    let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| tape.value(v)).collect();
    spec.check_inputs(&values)?;
    let mut features = Vec::with_capacity(spec.streams.len());
    for (stream, &x) in spec.streams.iter().zip(inputs) {
        features.push(run_block(tape, stream, params, x)?);
    }
    let mut fused = features[0];
    for &f in &features[1..] {
        fused = tape.concat_channels(fused, f)?;
    }
    let output = run_block(tape, &spec.head, params, fused)?;
    if !tape.value(output).is_finite() {
        return Err(Error::Numeric(format!("{:?} forward produced a non-finite map", spec.kind)));
    }
    Ok(Recorded { output, features })
}

/// Inference: returns the N×1×H×W map for the given stream inputs.
pub fn forward<T: Scalar>(spec: &NetworkSpec, weights: &WeightStore<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let (tape, rec) = forward_traced(spec, weights, inputs)?;
    Ok(tape.value(rec.output).clone())
}

/// Per-stream extractor outputs (the features fed to the head).
pub fn stream_features<T: Scalar>(
    spec: &NetworkSpec,
    weights: &WeightStore<T>,
    inputs: &[&Tensor<T>],
) -> Result<Vec<Tensor<T>>> {
    let (tape, rec) = forward_traced(spec, weights, inputs)?;
    Ok(rec.features.iter().map(|&v| tape.value(v).clone()).collect())
}

fn forward_traced<T: Scalar>(
    spec: &NetworkSpec,
    weights: &WeightStore<T>,
    inputs: &[&Tensor<T>],
) -> Result<(Tape<T>, Recorded)> {
    spec.check_weights(weights)?;
    spec.check_inputs(inputs)?;
    let mut tape = Tape::new();
    let params = ParamVars::bind(&mut tape, weights, false);
    let xs: Vec<Var> = inputs.iter().map(|&x| tape.constant(x.clone())).collect();
    let rec = record(&mut tape, spec, &params, &xs)?;
    Ok((tape, rec))
}

/// Sample from N(0, std²) restricted to ±2·std by resampling.
pub(crate) fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

fn fan_in(layer: &Layer) -> usize {
    match *layer {
        Layer::Conv { cin, kernel, .. } => cin * kernel * kernel,
        // each output pixel of a 4×4 stride-2 deconv sees 2×2 taps per input channel
        Layer::Deconv { cin, .. } => cin * 4,
        Layer::Pool => 1,
    }
}

fn fill_layer<T: Scalar>(
    store: &mut WeightStore<T>,
    scope: Scope,
    layer: &Layer,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let (kn, bn) = layer.names(scope).expect("weighted");
    let (ks, bs) = layer.param_shapes().expect("weighted");
    let kernel = Tensor::from_fn(&ks, |_| T::from_f64_lossy(truncated_normal(rng, std)));
    store.insert(kn, kernel)?;
    store.insert(bn, Tensor::zeros(&bs))?;
    Ok(())
}

/// Fresh weights for any architecture.
///
/// Stream and student-head kernels use a He-scaled truncated normal
/// (σ = √(2 / fan_in)); fusion kernels use σ = [`FUSION_INIT_STD`].
/// Biases start at zero. Deterministic per seed.
pub fn init_random<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<WeightStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for (scope, layer) in spec.weighted_layers() {
        let std = match scope {
            Scope::Fusion => FUSION_INIT_STD,
            _ => (2.0 / fan_in(layer) as f64).sqrt(),
        };
        fill_layer(&mut store, scope, layer, std, &mut rng)?;
    }
    Ok(store)
}

/// Spatiotemporal weights whose streams are copied from trained students.
///
/// Stream entries are copied verbatim; fusion kernels are drawn from the
/// truncated normal with σ = [`FUSION_INIT_STD`], fusion biases are zero.
pub fn init_from_students<T: Scalar>(
    st_spec: &NetworkSpec,
    s_weights: &WeightStore<T>,
    t_weights: &WeightStore<T>,
    seed: u64,
) -> Result<WeightStore<T>> {
    if st_spec.kind != NetworkKind::Spatiotemporal {
        return Err(Error::Config("init_from_students needs a spatiotemporal spec".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for (scope, layer) in st_spec.weighted_layers() {
        let source = match scope {
            Scope::SpatialStream => s_weights,
            Scope::TemporalStream => t_weights,
            _ => {
                fill_layer(&mut store, scope, layer, FUSION_INIT_STD, &mut rng)?;
                continue;
            }
        };
        let (kn, bn) = layer.names(scope).expect("weighted");
        let (ks, bs) = layer.param_shapes().expect("weighted");
        for (name, shape) in [(kn, ks), (bn, bs)] {
            let t = source.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "student weight '{name}' has shape {:?}, stream expects {shape:?}",
                    t.shape()
                )));
            }
            store.insert(name, t.clone())?;
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn student_layout() {
        let spec = build_spatial_student(&LayerTable::default()).unwrap();
        let weighted = spec.weighted_layers().count();
        let pools = spec.blocks().flat_map(|b| &b.layers).filter(|l| matches!(l, Layer::Pool)).count();
        assert_eq!(weighted, 13);
        assert_eq!(pools, 2);
        assert_eq!(spec.input_channels(), vec![3]);
    }

    #[test]
    fn temporal_differs_only_in_first_layer() {
        let t = LayerTable::default();
        let s = build_spatial_student(&t).unwrap();
        let tt = build_temporal_student(&t).unwrap();
        let sl: Vec<_> = s.weighted_layers().map(|(_, l)| l.clone()).collect();
        let tl: Vec<_> = tt.weighted_layers().map(|(_, l)| l.clone()).collect();
        let diffs: Vec<usize> = (0..13).filter(|&i| sl[i] != tl[i]).collect();
        assert_eq!(diffs, vec![0]);
        assert!(matches!(tl[0], Layer::Conv { cin: 6, .. }));
    }

    #[test]
    fn fusion_consumes_doubled_channels() {
        let t = LayerTable::default();
        let st = build_spatiotemporal(&t).unwrap();
        assert_eq!(st.head.input_channels, 2 * t.extractor[7]);
        assert_eq!(st.head.scope, Scope::Fusion);
    }

    #[test]
    fn zero_width_is_rejected() {
        let mut t = LayerTable::default();
        t.high_level[1] = 0;
        assert!(build_spatial_student(&t).is_err());
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut spec = build_spatial_student(&LayerTable::default()).unwrap();
        if let Layer::Conv { cin, .. } = &mut spec.streams[0].layers[1] {
            *cin += 1;
        }
        assert!(spec.validate().is_err());
    }

    #[test]
    fn calibrated_default() {
        let n = LayerTable::default().check_calibrated().unwrap();
        assert!((285_000..=315_000).contains(&n));
        let small = LayerTable {
            extractor: [8; 8],
            bottleneck: 8,
            high_level: [8, 8],
            decoder: 8,
        };
        assert!(small.check_calibrated().is_err());
    }

    #[test]
    fn undersized_and_misaligned_inputs() {
        let spec = build_spatial_student(&LayerTable::default()).unwrap();
        let w = init_random::<f32>(&spec, 1).unwrap();
        assert!(forward(&spec, &w, &[&Tensor::zeros(&[1, 3, 2, 2])]).is_err());
        assert!(forward(&spec, &w, &[&Tensor::zeros(&[1, 3, 10, 8])]).is_err());
        assert!(forward(&spec, &w, &[&Tensor::zeros(&[1, 6, 8, 8])]).is_err());
        assert!(forward(&spec, &w, &[&Tensor::zeros(&[1, 3, 4, 4])]).is_ok());
    }

    #[test]
    fn zero_weights_give_zero_map() {
        let spec = build_temporal_student(&LayerTable::default()).unwrap();
        let mut w = init_random::<f32>(&spec, 3).unwrap();
        for (_, t) in w.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let x = Tensor::from_fn(&[1, 6, 16, 16], |i| (i % 7) as f32);
        let y = forward(&spec, &w, &[&x]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        // a final bias propagates as a constant map
        w.get_mut("head.deconv13.bias").unwrap().data_mut()[0] = 0.25;
        let y = forward(&spec, &w, &[&x]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn init_from_students_copies_and_bounds() {
        let t = LayerTable::default();
        let s = build_spatial_student(&t).unwrap();
        let tt = build_temporal_student(&t).unwrap();
        let st = build_spatiotemporal(&t).unwrap();
        let sw = init_random::<f32>(&s, 10).unwrap();
        let tw = init_random::<f32>(&tt, 11).unwrap();
        let a = init_from_students(&st, &sw, &tw, 5).unwrap();
        let b = init_from_students(&st, &sw, &tw, 5).unwrap();
        assert_eq!(a, b);
        st.check_weights(&a).unwrap();
        assert_eq!(a.get("s_stream.conv3.kernel"), sw.get("s_stream.conv3.kernel"));
        assert_eq!(a.get("t_stream.conv1.kernel"), tw.get("t_stream.conv1.kernel"));
        let bound = 2.0 * FUSION_INIT_STD as f32;
        for (name, v) in a.iter().filter(|(n, _)| n.starts_with("fusion.")) {
            assert!(v.data().iter().all(|x| x.abs() <= bound), "{name}");
        }
        assert!(init_from_students(&st, &tw, &sw, 5).is_err());
        let mut wide = t.clone();
        wide.extractor[0] = 24;
        let sw_wide = init_random::<f32>(&build_spatial_student(&wide).unwrap(), 10).unwrap();
        assert!(matches!(init_from_students(&st, &sw_wide, &tw, 5), Err(Error::Shape(_))));
    }
}
