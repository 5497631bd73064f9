//! Procedural aerial-like clips for desk-scale experiments.
//!
//! Each clip shows 1–3 small bright blobs moving over a drifting textured
//! background (global drift stands in for camera motion). Ground truth is a
//! max-normalised sum of Gaussian splats (σ = resolution / 32) at blob
//! centres; fixations are sampled from it.
//!
//! The teacher maps are an emulation of imperfect soft labels, not the
//! output of any real model:
//! * spatial teacher: the density blurred by a further Gaussian with
//!   σ = 2 · resolution / 32;
//! * temporal teacher: splats weighted by each blob's speed over the frame
//!   pair (relative to the fastest blob of the clip), blurred the same way.

use crate::dataset::{Clip, Fixations};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

/// Fixations per frame are drawn uniformly from this range.
pub const FIXATIONS_PER_FRAME: std::ops::RangeInclusive<usize> = 6..=14;

#[derive(Clone, Debug)]
struct Blob {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    radius: f64,
    color: [f64; 3],
}

struct Wave {
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

struct Background {
    base: [f64; 3],
    waves: [Vec<Wave>; 3],
    drift: (f64, f64),
    res: f64,
}

impl Background {
    fn new(rng: &mut ChaCha8Rng, res: usize, scale: f64) -> Self {
        let mut channel = || {
            (0..4)
                .map(|_| Wave {
                    amp: rng.gen_range(0.03..0.09),
                    fx: rng.gen_range(-3.0..3.0),
                    fy: rng.gen_range(-3.0..3.0),
                    phase: rng.gen_range(0.0..TAU),
                })
                .collect::<Vec<_>>()
        };
        let waves = [channel(), channel(), channel()];
        let base = [
            rng.gen_range(0.25..0.45),
            rng.gen_range(0.25..0.45),
            rng.gen_range(0.25..0.45),
        ];
        let drift = (rng.gen_range(-0.5..0.5) * scale, rng.gen_range(-0.5..0.5) * scale);
        Self {
            base,
            waves,
            drift,
            res: res as f64,
        }
    }

    fn sample(&self, ch: usize, x: f64, y: f64, t: usize) -> f64 {
        let (u, v) = (x + self.drift.0 * t as f64, y + self.drift.1 * t as f64);
        let mut acc = self.base[ch];
        for w in &self.waves[ch] {
            acc += w.amp * (TAU * (w.fx * u + w.fy * v) / self.res + w.phase).sin();
        }
        acc
    }
}

fn splat(map: &mut [f64], res: usize, cx: f64, cy: f64, sigma: f64, weight: f64) {
    let r = (3.0 * sigma).ceil() as isize + 1;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let (x0, y0) = (cx.round() as isize, cy.round() as isize);
    for y in (y0 - r).max(0)..=(y0 + r).min(res as isize - 1) {
        for x in (x0 - r).max(0)..=(x0 + r).min(res as isize - 1) {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            map[y as usize * res + x as usize] += weight * (-d2 * inv).exp();
        }
    }
}

/// Separable Gaussian blur with zero padding and a unit-sum kernel.
pub(crate) fn gaussian_blur(map: &[f64], res: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        for y in 0..res {
            for x in 0..res {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let o = j as isize - r;
                    let (sx, sy) = if horizontal {
                        (x as isize + o, y as isize)
                    } else {
                        (x as isize, y as isize + o)
                    };
                    if sx >= 0 && sy >= 0 && (sx as usize) < res && (sy as usize) < res {
                        acc += kv * src[sy as usize * res + sx as usize];
                    }
                }
                out[y * res + x] = acc;
            }
        }
        out
    };
    pass(&pass(map, true), false)
}

fn to_map(v: &[f64], res: usize) -> Tensor<f32> {
    Tensor::from_fn(&[1, 1, res, res], |i| v[i] as f32)
}

fn sample_fixations(rng: &mut ChaCha8Rng, density: &[f64], res: usize) -> Fixations {
    let count = rng.gen_range(FIXATIONS_PER_FRAME);
    let mut cdf = Vec::with_capacity(density.len());
    let mut acc = 0.0;
    for &d in density {
        acc += d.max(0.0);
        cdf.push(acc);
    }
    (0..count)
        .map(|_| {
            let u = rng.gen_range(0.0..acc);
            let i = cdf.partition_point(|&c| c <= u).min(density.len() - 1);
            ((i % res) as u32, (i / res) as u32)
        })
        .collect()
}

fn step_blob(b: &mut Blob, res: f64) {
    let (lo, hi) = (b.radius, res - 1.0 - b.radius);
    b.x += b.vx;
    b.y += b.vy;
    if b.x < lo || b.x > hi {
        b.vx = -b.vx;
        b.x = b.x.clamp(lo, hi);
    }
    if b.y < lo || b.y > hi {
        b.vy = -b.vy;
        b.y = b.y.clamp(lo, hi);
    }
}

/// Render one clip from its own RNG stream.
pub fn generate_clip(frames: usize, res: usize, seed: u64) -> Result<Clip> {
    if frames < 2 {
        return Err(Error::Config(format!("a clip needs at least 2 frames, asked for {frames}")));
    }
    if res < 8 {
        return Err(Error::Config(format!("resolution {res} is too small (minimum 8)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = res as f64 / 32.0;
    let sigma = res as f64 / 32.0;
    let teacher_sigma = 2.0 * scale;
    let bg = Background::new(&mut rng, res, scale);
    let n_blobs = rng.gen_range(1..=3);
    let mut blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| {
            let radius = rng.gen_range(1.0..1.8) * scale;
            let margin = 2.0 * radius;
            let speed = rng.gen_range(0.2..1.5) * scale;
            let dir = rng.gen_range(0.0..TAU);
            Blob {
                x: rng.gen_range(margin..res as f64 - margin),
                y: rng.gen_range(margin..res as f64 - margin),
                vx: speed * dir.cos(),
                vy: speed * dir.sin(),
                radius,
                color: [rng.gen_range(0.8..1.0), rng.gen_range(0.8..1.0), rng.gen_range(0.8..1.0)],
            }
        })
        .collect();

    // positions for every frame, plus one extra step for the last pair's speed
    let mut track = Vec::with_capacity(frames);
    for _ in 0..frames {
        track.push(blobs.clone());
        blobs.iter_mut().for_each(|b| step_blob(b, res as f64));
    }
    let speeds: Vec<Vec<f64>> = (0..frames - 1)
        .map(|t| {
            track[t]
                .iter()
                .zip(&track[t + 1])
                .map(|(a, b)| ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt())
                .collect()
        })
        .collect();
    let max_speed = speeds.iter().flatten().copied().fold(0.0, f64::max).max(1e-9);

    let mut clip = Clip {
        frames: Vec::with_capacity(frames),
        density: Vec::with_capacity(frames),
        fixations: Vec::with_capacity(frames),
        teacher_s: Vec::with_capacity(frames),
        teacher_t: Vec::with_capacity(frames - 1),
    };
    for (t, blobs) in track.iter().enumerate() {
        let mut img = vec![0f32; 3 * res * res];
        for y in 0..res {
            for x in 0..res {
                let mut px = [0.0; 3];
                for (ch, p) in px.iter_mut().enumerate() {
                    *p = bg.sample(ch, x as f64, y as f64, t);
                }
                for b in blobs {
                    let d2 = (x as f64 - b.x).powi(2) + (y as f64 - b.y).powi(2);
                    let a = (-d2 / (2.0 * b.radius * b.radius)).exp();
                    for (p, c) in px.iter_mut().zip(b.color) {
                        *p = *p * (1.0 - a) + c * a;
                    }
                }
                for ch in 0..3 {
                    img[(ch * res + y) * res + x] = px[ch].clamp(0.0, 1.0) as f32;
                }
            }
        }
        clip.frames.push(Tensor::new(vec![1, 3, res, res], img)?);

        let mut dens = vec![0.0; res * res];
        for b in blobs {
            splat(&mut dens, res, b.x, b.y, sigma, 1.0);
        }
        let peak = dens.iter().copied().fold(0.0, f64::max);
        dens.iter_mut().for_each(|v| *v /= peak);
        clip.fixations.push(sample_fixations(&mut rng, &dens, res));
        clip.teacher_s.push(to_map(&gaussian_blur(&dens, res, teacher_sigma), res));

        if t + 1 < frames {
            let mut moving = vec![0.0; res * res];
            for (b, s) in blobs.iter().zip(&speeds[t]) {
                splat(&mut moving, res, b.x, b.y, sigma, s / max_speed);
            }
            moving.iter_mut().for_each(|v| *v /= peak);
            clip.teacher_t.push(to_map(&gaussian_blur(&moving, res, teacher_sigma), res));
        }
        clip.density.push(to_map(&dens, res));
    }
    Ok(clip)
}

/// `n_clips` clips of `frames_per_clip` frames at `resolution`², deterministic per seed.
pub fn generate_synthetic_corpus(n_clips: usize, frames_per_clip: usize, resolution: usize, seed: u64) -> Result<Vec<Clip>> {
    if n_clips == 0 {
        return Err(Error::Config("need at least one clip".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n_clips).map(|_| master.gen()).collect();
    seeds.into_iter().map(|s| generate_clip(frames_per_clip, resolution, s)).collect()
}

/// Blob centres of a generated clip are not stored; this recovers the
/// local maxima of a density map (values ≥ `floor` that dominate their 3×3
/// neighbourhood), as `(x, y)`.
pub fn density_peaks(density: &Tensor<f32>, floor: f32) -> Vec<(usize, usize)> {
    let s = density.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let d = density.data();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = d[y * w + x];
            if v < floor {
                continue;
            }
            let mut is_max = true;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if (dy, dx) != (0, 0) && yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && d[yy as usize * w + xx as usize] > v {
                        is_max = false;
                    }
                }
            }
            if is_max {
                out.push((x, y));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_shapes_and_invariants() {
        let c = generate_clip(5, 32, 9).unwrap();
        c.validate().unwrap();
        assert_eq!(c.frames.len(), 5);
        assert_eq!(c.teacher_t.len(), 4);
        for (d, fix) in c.density.iter().zip(&c.fixations) {
            let max = d.data().iter().copied().fold(f32::MIN, f32::max);
            assert!((max - 1.0).abs() < 1e-6);
            assert!(d.data().iter().all(|&v| v >= 0.0));
            assert!(FIXATIONS_PER_FRAME.contains(&fix.len()));
            assert!(fix.iter().all(|&(x, y)| x < 32 && y < 32));
        }
        assert!(c.frames.iter().all(|f| f.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn rejects_single_frame() {
        assert!(generate_clip(1, 32, 0).is_err());
        assert!(generate_synthetic_corpus(0, 4, 32, 0).is_err());
    }

    #[test]
    fn blur_keeps_interior_mass() {
        let mut m = vec![0.0; 32 * 32];
        m[16 * 32 + 16] = 1.0;
        let b = gaussian_blur(&m, 32, 2.0);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(b[16 * 32 + 16] < 0.05);
    }
}
