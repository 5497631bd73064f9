//! Inference cost: parameters, weight memory, activation memory and timing.

use crate::error::{Error, Result};
use crate::network::{self, NetworkSpec};
use crate::tensor::Tensor;
use crate::weights::WeightStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

pub const DEFAULT_WARMUP: usize = 50;
pub const DEFAULT_ITERS: usize = 500;
const MB: f64 = (1 << 20) as f64;

/// One benchmarked resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub resolution: usize,
    pub param_count: usize,
    /// `param_count · 4` bytes in MiB.
    pub weight_memory_mb: f64,
    pub peak_activation_mb: f64,
    /// Median batch-1 forward latency.
    pub ms: f64,
    pub fps: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Bytes needed to hold `params` f32 weights, in MiB.
pub fn weight_memory_mb(params: usize) -> f64 {
    (params * 4) as f64 / MB
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median forward latency in ms over `iters` timed runs after `warmup` untimed ones.
pub fn time_forward(spec: &NetworkSpec, weights: &WeightStore<f32>, res: usize, warmup: usize, iters: usize) -> Result<f64> {
    if iters == 0 {
        return Err(Error::Config("need at least one timed iteration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(res as u64);
    let inputs: Vec<Tensor<f32>> = spec
        .input_channels()
        .iter()
        .map(|&c| Tensor::uniform(&[1, c, res, res], 0.0, 1.0, &mut rng))
        .collect();
    let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
    for _ in 0..warmup {
        network::forward(spec, weights, &refs)?;
    }
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        let y = network::forward(spec, weights, &refs)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(y);
    }
    Ok(median(&mut times))
}

impl BenchReport {
    pub fn run(weights: &WeightStore<f32>, resolutions: &[usize], warmup: usize, iters: usize) -> Result<Self> {
        let spec = network::infer_spec(weights)?;
        let params = spec.param_count();
        let mut rows = Vec::with_capacity(resolutions.len());
        for &res in resolutions {
            let ms = time_forward(&spec, weights, res, warmup, iters)?;
            rows.push(BenchRow {
                resolution: res,
                param_count: params,
                weight_memory_mb: weight_memory_mb(params),
                peak_activation_mb: network::peak_activation_bytes(&spec, res) as f64 / MB,
                ms,
                fps: 1000.0 / ms,
            });
        }
        Ok(Self { rows })
    }

    pub fn fps(&self, res: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.resolution == res).map(|r| r.fps)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::metrics::csv_io(e, path))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::from(e).with_path(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn weight_memory_is_four_bytes_per_param() {
        assert_eq!(weight_memory_mb(1 << 18), 1.0);
    }
}
