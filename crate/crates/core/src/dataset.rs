//! Clip directories, resolution degradation and training samples.
//!
//! Layout of one clip directory:
//!
//! ```text
//! frames/000000.ppm     RGB frame (binary P6)
//! density/000000.skdm   ground-truth fixation density in [0, 1]
//! fixations/000000.txt  "x y" per line
//! teacher_s/000000.skdm spatial teacher map
//! teacher_t/000000.skdm temporal teacher map for the pair (n, n+1)
//! ```
//!
//! Indices are contiguous from 0; `teacher_t` exists for every index except
//! the last.

use crate::error::{Error, Result};
use crate::formats;
use crate::kernels::{resample, Resampler};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};

pub type Fixations = Vec<(u32, u32)>;

/// One clip held in memory at its native resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    /// 1×3×H×W frames in [0, 1].
    pub frames: Vec<Tensor<f32>>,
    /// 1×1×H×W densities.
    pub density: Vec<Tensor<f32>>,
    pub fixations: Vec<Fixations>,
    /// Spatial teacher maps, one per frame (may be empty if absent).
    pub teacher_s: Vec<Tensor<f32>>,
    /// Temporal teacher maps, one per frame pair (may be empty if absent).
    pub teacher_t: Vec<Tensor<f32>>,
}

/// One training/evaluation record at the working resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    /// Frame n, 1×3×r×r.
    pub frame: Tensor<f32>,
    /// Frame n+1, 1×3×r×r.
    pub next_frame: Tensor<f32>,
    /// Ground-truth density for frame n, 1×1×r×r.
    pub density: Tensor<f32>,
    pub teacher_s: Option<Tensor<f32>>,
    pub teacher_t: Option<Tensor<f32>>,
    /// Fixations of frame n in working-resolution pixel coordinates.
    pub fixations: Fixations,
}

impl ClipSample {
    /// The 1×6×r×r frame-pair input of the temporal networks.
    pub fn pair(&self) -> Tensor<f32> {
        crate::kernels::concat_channels(&self.frame, &self.next_frame).expect("frames share extents")
    }
}

/// Resolution reduction: area-average resample to `target × target`.
pub fn degrade<T: Scalar>(x: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4()?;
    if target == 0 || target > h || target > w {
        return Err(Error::Range(format!(
            "cannot degrade {h}×{w} to {target}×{target}: target exceeds source"
        )));
    }
    if h == target && w == target {
        return Ok(x.clone());
    }
    resample(x, &Resampler::area(h, target)?, &Resampler::area(w, target)?)
}

fn scale_fixations(fix: &[(u32, u32)], h: usize, w: usize, target: usize) -> Fixations {
    fix.iter()
        .map(|&(x, y)| {
            let sx = (x as usize * target / w).min(target - 1);
            let sy = (y as usize * target / h).min(target - 1);
            (sx as u32, sy as u32)
        })
        .collect()
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn extent(&self) -> Result<(usize, usize)> {
        let f = self.frames.first().ok_or_else(|| Error::Config("clip has no frames".into()))?;
        let (_, _, h, w) = f.dims4()?;
        Ok((h, w))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if n < 2 {
            return Err(Error::Config(format!("clip needs at least 2 frames, has {n}")));
        }
        let (h, w) = self.extent()?;
        if self.density.len() != n || self.fixations.len() != n {
            return Err(Error::Config("density/fixation count differs from frame count".into()));
        }
        if !self.teacher_s.is_empty() && self.teacher_s.len() != n {
            return Err(Error::Config("teacher_s count differs from frame count".into()));
        }
        if !self.teacher_t.is_empty() && self.teacher_t.len() < n - 1 {
            return Err(Error::Config("teacher_t missing for some frame pair".into()));
        }
        for f in &self.frames {
            if f.shape() != [1, 3, h, w] {
                return Err(Error::shape(format!("frame shape {:?} in {h}×{w} clip", f.shape())));
            }
        }
        for m in self.density.iter().chain(&self.teacher_s).chain(&self.teacher_t) {
            if m.shape() != [1, 1, h, w] {
                return Err(Error::shape(format!("map shape {:?} in {h}×{w} clip", m.shape())));
            }
        }
        for (d, fix) in self.density.iter().zip(&self.fixations) {
            for &(x, y) in fix {
                if x as usize >= w || y as usize >= h {
                    return Err(Error::Range(format!("fixation ({x}, {y}) outside {w}×{h}")));
                }
            }
            if !fix.is_empty() && !d.data().iter().any(|&v| v > 0.0) {
                return Err(Error::Config("density is empty but fixations exist".into()));
            }
        }
        Ok(())
    }

    /// One sample per frame pair, degraded to `resolution`.
    pub fn samples(&self, resolution: usize) -> Result<Vec<ClipSample>> {
        self.validate()?;
        let (h, w) = self.extent()?;
        let deg = |t: &Tensor<f32>| degrade(t, resolution);
        let frames: Vec<_> = self.frames.iter().map(deg).collect::<Result<_>>()?;
        (0..self.frames.len() - 1)
            .map(|n| {
                Ok(ClipSample {
                    frame: frames[n].clone(),
                    next_frame: frames[n + 1].clone(),
                    density: deg(&self.density[n])?,
                    teacher_s: self.teacher_s.get(n).map(deg).transpose()?,
                    teacher_t: self.teacher_t.get(n).map(deg).transpose()?,
                    fixations: scale_fixations(&self.fixations[n], h, w, resolution),
                })
            })
            .collect()
    }
}

fn indexed(dir: &Path, sub: &str, n: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("{n:06}.{ext}"))
}

/// Number of contiguous `000000.<ext>`, `000001.<ext>`, ... files in `dir/sub`.
fn count_indexed(dir: &Path, sub: &str, ext: &str) -> Result<usize> {
    let d = dir.join(sub);
    if !d.is_dir() {
        return Ok(0);
    }
    let mut n = 0;
    while indexed(dir, sub, n, ext).is_file() {
        n += 1;
    }
    let total = fs::read_dir(&d)
        .map_err(|e| Error::from(e).with_path(&d))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == ext))
        .count();
    if total != n {
        return Err(Error::Config(format!(
            "{}: indices are not contiguous from 0 ({total} files, {n} contiguous)",
            d.display()
        )));
    }
    Ok(n)
}

pub fn save_clip(dir: impl AsRef<Path>, clip: &Clip) -> Result<()> {
    let dir = dir.as_ref();
    clip.validate()?;
    for sub in ["frames", "density", "fixations", "teacher_s", "teacher_t"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::from(e).with_path(&d))?;
    }
    for (n, f) in clip.frames.iter().enumerate() {
        formats::save_ppm(indexed(dir, "frames", n, "ppm"), f)?;
        formats::save_map(indexed(dir, "density", n, "skdm"), &clip.density[n])?;
        formats::save_fixations(indexed(dir, "fixations", n, "txt"), &clip.fixations[n])?;
    }
    for (n, m) in clip.teacher_s.iter().enumerate() {
        formats::save_map(indexed(dir, "teacher_s", n, "skdm"), m)?;
    }
    for (n, m) in clip.teacher_t.iter().enumerate() {
        formats::save_map(indexed(dir, "teacher_t", n, "skdm"), m)?;
    }
    Ok(())
}

pub fn load_clip(dir: impl AsRef<Path>) -> Result<Clip> {
    let dir = dir.as_ref();
    let n = count_indexed(dir, "frames", "ppm")?;
    if n < 2 {
        return Err(Error::Config(format!("{}: clip needs at least 2 frames, found {n}", dir.display())));
    }
    let mut clip = Clip {
        frames: Vec::with_capacity(n),
        density: Vec::with_capacity(n),
        fixations: Vec::with_capacity(n),
        teacher_s: Vec::new(),
        teacher_t: Vec::new(),
    };
    for i in 0..n {
        clip.frames.push(formats::load_ppm(indexed(dir, "frames", i, "ppm"))?);
        clip.density.push(formats::load_map(indexed(dir, "density", i, "skdm"))?);
        clip.fixations.push(formats::load_fixations(indexed(dir, "fixations", i, "txt"))?);
    }
    let ns = count_indexed(dir, "teacher_s", "skdm")?;
    if ns > 0 {
        if ns != n {
            return Err(Error::Config(format!("{}: {ns} teacher_s maps for {n} frames", dir.display())));
        }
        for i in 0..n {
            clip.teacher_s.push(formats::load_map(indexed(dir, "teacher_s", i, "skdm"))?);
        }
    }
    let nt = count_indexed(dir, "teacher_t", "skdm")?;
    if nt > 0 {
        if nt < n - 1 {
            return Err(Error::Config(format!(
                "{}: {nt} teacher_t maps for {} frame pairs",
                dir.display(),
                n - 1
            )));
        }
        for i in 0..nt {
            clip.teacher_t.push(formats::load_map(indexed(dir, "teacher_t", i, "skdm"))?);
        }
    }
    clip.validate().map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", dir.display())),
        e => e,
    })?;
    Ok(clip)
}

/// Clip directory names of a corpus, in lexicographic order.
pub fn clip_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::from(e).with_path(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("frames").is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!("{}: no clip directories found", root.display())));
    }
    Ok(dirs)
}

pub fn load_corpus(root: impl AsRef<Path>) -> Result<Vec<Clip>> {
    clip_dirs(root)?.iter().map(load_clip).collect()
}

/// Name of the n-th clip directory inside a corpus root.
pub fn clip_dir_name(n: usize) -> String {
    format!("clip_{n:04}")
}

pub fn save_corpus(root: impl AsRef<Path>, clips: &[Clip]) -> Result<()> {
    let root = root.as_ref();
    for (i, c) in clips.iter().enumerate() {
        save_clip(root.join(clip_dir_name(i)), c)?;
    }
    Ok(())
}

/// Which part of a seeded train/validation split to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    All,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "all" => Ok(Split::All),
            _ => Err(Error::Config(format!("unknown split '{s}' (train|val|all)"))),
        }
    }
}

/// Seeded 80/20 split of clip indices; returns (train, val), each sorted.
///
/// At least one clip goes to validation whenever there are two or more.
pub fn split_clips(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = if n >= 2 { ((n as f64 * 0.2).round() as usize).max(1) } else { 0 };
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

/// Samples of the selected split, clip by clip in index order.
pub fn split_samples(clips: &[Clip], split: Split, split_seed: u64, resolution: usize) -> Result<Vec<ClipSample>> {
    let (train, val) = split_clips(clips.len(), split_seed);
    let chosen: Vec<usize> = match split {
        Split::Train => train,
        Split::Val => val,
        Split::All => (0..clips.len()).collect(),
    };
    let mut out = Vec::new();
    for i in chosen {
        out.extend(clips[i].samples(resolution)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degrade_identity_and_constant() {
        let x = Tensor::<f32>::from_fn(&[1, 3, 8, 8], |i| i as f32);
        assert_eq!(degrade(&x, 8).unwrap(), x);
        let c = Tensor::<f32>::full(&[1, 1, 4, 4], 0.7);
        assert_eq!(degrade(&c, 2).unwrap(), Tensor::full(&[1, 1, 2, 2], 0.7));
        assert!(matches!(degrade(&c, 5), Err(Error::Range(_))));
    }

    #[test]
    fn split_is_seeded_partition() {
        let (a, b) = split_clips(10, 3);
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<_> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_clips(10, 3), (a, b));
        assert_eq!(split_clips(2, 0).1.len(), 1);
        assert_eq!(split_clips(1, 0).1.len(), 0);
    }

    #[test]
    fn fixations_scale_into_bounds() {
        let f = scale_fixations(&[(0, 0), (127, 127), (64, 33)], 128, 128, 32);
        assert_eq!(f, vec![(0, 0), (31, 31), (16, 8)]);
    }
}
