//! Saliency evaluation: AUC (Judd), shuffled AUC, NSS, SIM and CC.
//!
//! Maps are read as their last two extents (H×W); fixations are `(x, y)`
//! pixel coordinates in the same grid.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Default number of negative draws averaged by [`sauc`].
pub const SAUC_SHUFFLES: usize = 10;

fn grid<T: Scalar>(map: &Tensor<T>) -> Result<(usize, usize, Vec<f64>)> {
    let s = map.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::shape(format!("expected a single H×W map, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Ok((h, w, map.data().iter().map(|v| v.to_f64_lossy()).collect()))
}

fn fixation_indices(fix: &[(u32, u32)], h: usize, w: usize) -> Result<Vec<usize>> {
    if fix.is_empty() {
        return Err(Error::Config("frame has no fixations".into()));
    }
    fix.iter()
        .map(|&(x, y)| {
            if (x as usize) < w && (y as usize) < h {
                Ok(y as usize * w + x as usize)
            } else {
                Err(Error::Range(format!("fixation ({x}, {y}) outside {w}×{h} map")))
            }
        })
        .collect()
}

/// ROC points of positives vs negatives over every distinct threshold,
/// from (0, 0) to (1, 1).
fn roc(pos: &[f64], neg: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&v| (v, true)).chain(neg.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / nn, tp as f64 / np));
    }
    pts
}

fn trapezoid(pts: &[(f64, f64)]) -> f64 {
    pts.windows(2).map(|p| (p[1].0 - p[0].0) * (p[1].1 + p[0].1) / 2.0).sum()
}

fn judd_sets(map: &[f64], idx: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut fixated = vec![false; map.len()];
    idx.iter().for_each(|&i| fixated[i] = true);
    let pos: Vec<f64> = idx.iter().map(|&i| map[i]).collect();
    let neg: Vec<f64> = map.iter().zip(&fixated).filter(|(_, &f)| !f).map(|(&v, _)| v).collect();
    if neg.is_empty() {
        return Err(Error::Config("every pixel is fixated; AUC has no negatives".into()));
    }
    Ok((pos, neg))
}

/// ROC curve of the Judd AUC as `(fpr, tpr)` points.
pub fn roc_curve<T: Scalar>(map: &Tensor<T>, fix: &[(u32, u32)]) -> Result<Vec<(f64, f64)>> {
    let (h, w, m) = grid(map)?;
    let (pos, neg) = judd_sets(&m, &fixation_indices(fix, h, w)?)?;
    Ok(roc(&pos, &neg))
}

/// Judd AUC: positives are the map values at fixations (repeats count),
/// negatives every non-fixated pixel. A constant map scores 0.5.
pub fn auc<T: Scalar>(map: &Tensor<T>, fix: &[(u32, u32)]) -> Result<f64> {
    Ok(trapezoid(&roc_curve(map, fix)?))
}

/// Shuffled AUC against fixations of other frames.
///
/// For each of `shuffles` rounds, `fix.len()` negatives are drawn without
/// replacement from `pool` (all of it if smaller); the AUCs are averaged.
pub fn sauc<T: Scalar>(
    map: &Tensor<T>,
    fix: &[(u32, u32)],
    pool: &[(u32, u32)],
    shuffles: usize,
    seed: u64,
) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::Config("shuffled AUC needs fixations from other frames, pool is empty".into()));
    }
    if shuffles == 0 {
        return Err(Error::Config("shuffled AUC needs at least one shuffle".into()));
    }
    let (h, w, m) = grid(map)?;
    let pos: Vec<f64> = fixation_indices(fix, h, w)?.iter().map(|&i| m[i]).collect();
    let pool_vals: Vec<f64> = fixation_indices(pool, h, w)?.iter().map(|&i| m[i]).collect();
    let k = fix.len().min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..shuffles {
        let neg: Vec<f64> = rand::seq::index::sample(&mut rng, pool_vals.len(), k)
            .into_iter()
            .map(|i| pool_vals[i])
            .collect();
        acc += trapezoid(&roc(&pos, &neg));
    }
    Ok(acc / shuffles as f64)
}

/// A metric value plus whether it hit a degenerate case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub value: f64,
    pub degenerate: bool,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean of the standardised map (population std) at the fixations.
/// A constant map scores 0 and is flagged degenerate.
pub fn nss<T: Scalar>(map: &Tensor<T>, fix: &[(u32, u32)]) -> Result<Scored> {
    let (h, w, m) = grid(map)?;
    let idx = fixation_indices(fix, h, w)?;
    let (mean, std) = mean_std(&m);
    if std == 0.0 {
        return Ok(Scored { value: 0.0, degenerate: true });
    }
    let value = idx.iter().map(|&i| (m[i] - mean) / std).sum::<f64>() / idx.len() as f64;
    Ok(Scored { value, degenerate: false })
}

/// Histogram intersection of the two maps after each is clipped at zero
/// and normalised to unit sum.
pub fn sim<T: Scalar>(map: &Tensor<T>, density: &Tensor<T>) -> Result<f64> {
    let (h, w, a) = grid(map)?;
    let (h2, w2, b) = grid(density)?;
    if (h, w) != (h2, w2) {
        return Err(Error::shape(format!("SIM of {h}×{w} map against {h2}×{w2} density")));
    }
    let norm = |v: Vec<f64>, what: &str| -> Result<Vec<f64>> {
        let v: Vec<f64> = v.into_iter().map(|x| x.max(0.0)).collect();
        let s: f64 = v.iter().sum();
        if s <= 0.0 {
            return Err(Error::Config(format!("SIM undefined: {what} sums to zero")));
        }
        Ok(v.into_iter().map(|x| x / s).collect())
    };
    let (a, b) = (norm(a, "prediction")?, norm(b, "density")?);
    Ok(a.iter().zip(&b).map(|(x, y)| x.min(*y)).sum())
}

/// Pearson correlation; 0 and flagged degenerate if either map is constant.
pub fn cc<T: Scalar>(map: &Tensor<T>, density: &Tensor<T>) -> Result<Scored> {
    let (h, w, a) = grid(map)?;
    let (h2, w2, b) = grid(density)?;
    if (h, w) != (h2, w2) {
        return Err(Error::shape(format!("CC of {h}×{w} map against {h2}×{w2} density")));
    }
    let (ma, sa) = mean_std(&a);
    let (mb, sb) = mean_std(&b);
    if sa == 0.0 || sb == 0.0 {
        return Ok(Scored { value: 0.0, degenerate: true });
    }
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    Ok(Scored { value: cov / (sa * sb), degenerate: false })
}

/// Scores of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub auc: f64,
    pub sauc: f64,
    pub nss: f64,
    pub sim: f64,
    pub cc: f64,
}

/// One frame to score: prediction, ground truth and fixations.
pub struct FrameInput<'a, T: Scalar> {
    pub prediction: &'a Tensor<T>,
    pub density: &'a Tensor<T>,
    pub fixations: &'a [(u32, u32)],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frames: Vec<FrameMetrics>,
    /// Human-readable notes about degenerate frames.
    pub warnings: Vec<String>,
}

impl MetricReport {
    /// Score every frame; the sAUC pool of a frame is every other frame's fixations.
    pub fn evaluate<T: Scalar>(frames: &[FrameInput<'_, T>], seed: u64) -> Result<Self> {
        let all: Vec<(u32, u32)> = frames.iter().flat_map(|f| f.fixations.iter().copied()).collect();
        let mut report = MetricReport::default();
        let mut start = 0;
        for (i, f) in frames.iter().enumerate() {
            let end = start + f.fixations.len();
            let pool: Vec<(u32, u32)> = all[..start].iter().chain(&all[end..]).copied().collect();
            start = end;
            let n = nss(f.prediction, f.fixations)?;
            let c = cc(f.prediction, f.density)?;
            if n.degenerate {
                report.warnings.push(format!("frame {i}: constant prediction, NSS set to 0"));
            }
            if c.degenerate {
                report.warnings.push(format!("frame {i}: constant map, CC set to 0"));
            }
            report.frames.push(FrameMetrics {
                frame: i,
                auc: auc(f.prediction, f.fixations)?,
                sauc: sauc(f.prediction, f.fixations, &pool, SAUC_SHUFFLES, seed.wrapping_add(i as u64))?,
                nss: n.value,
                sim: sim(f.prediction, f.density)?,
                cc: c.value,
            });
        }
        Ok(report)
    }

    /// Per-metric mean over frames (all zero for an empty report).
    pub fn mean(&self) -> FrameMetrics {
        let n = self.frames.len().max(1) as f64;
        let avg = |g: fn(&FrameMetrics) -> f64| self.frames.iter().map(g).sum::<f64>() / n;
        FrameMetrics {
            frame: self.frames.len(),
            auc: avg(|f| f.auc),
            sauc: avg(|f| f.sauc),
            nss: avg(|f| f.nss),
            sim: avg(|f| f.sim),
            cc: avg(|f| f.cc),
        }
    }

    /// `frame,auc,sauc,nss,sim,cc`, one row per frame.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(e, path))?;
        for f in &self.frames {
            w.serialize(f)?;
        }
        w.flush().map_err(|e| Error::from(e).with_path(path))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(e, path))?;
        let frames = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { frames, warnings: Vec::new() })
    }
}

pub(crate) fn csv_io(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::from(io).with_path(path),
        k => Error::Config(format!("{}: {k:?}", path.display())),
    }
}

/// `fpr,tpr` rows of an ROC curve.
pub fn write_roc_csv(path: impl AsRef<Path>, pts: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::from(e).with_path(path))?);
    let mut body = String::from("fpr,tpr\n");
    for (x, y) in pts {
        body.push_str(&format!("{x},{y}\n"));
    }
    f.write_all(body.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| Error::from(e).with_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[f64], h: usize, w: usize) -> Tensor<f64> {
        Tensor::new(vec![1, 1, h, w], v.to_vec()).unwrap()
    }

    #[test]
    fn constant_map_auc_is_half() {
        let m = map(&[0.3; 16], 4, 4);
        assert!((auc(&m, &[(1, 1), (2, 3)]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_map_auc_is_one() {
        let mut v = vec![0.0; 16];
        v[5] = 1.0;
        let m = map(&v, 4, 4);
        assert_eq!(auc(&m, &[(1, 1)]).unwrap(), 1.0);
        let pts = roc_curve(&m, &[(1, 1)]).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn nss_and_cc_degenerate_cases() {
        let m = map(&[2.0; 4], 2, 2);
        let n = nss(&m, &[(0, 0)]).unwrap();
        assert_eq!((n.value, n.degenerate), (0.0, true));
        let d = map(&[0.0, 1.0, 0.0, 0.0], 2, 2);
        assert!(cc(&m, &d).unwrap().degenerate);
        assert!((cc(&d, &d).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sim_identity_and_zero_sum() {
        let d = map(&[0.0, 1.0, 3.0, 0.0], 2, 2);
        assert!((sim(&d, &d).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(sim(&map(&[0.0; 4], 2, 2), &d), Err(Error::Config(_))));
    }

    #[test]
    fn sauc_requires_pool() {
        let m = map(&[0.1, 0.2, 0.3, 0.4], 2, 2);
        assert!(matches!(sauc(&m, &[(0, 0)], &[], 10, 0), Err(Error::Config(_))));
        assert!(matches!(auc(&m, &[]), Err(Error::Config(_))));
        assert!(matches!(auc(&m, &[(5, 0)]), Err(Error::Range(_))));
    }
}
