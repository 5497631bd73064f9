//! Forward and adjoint kernels for the layer types used by the networks.
//!
//! These functions are tape-free; [`crate::autodiff`] wires them together.
//! Convolutions lower to one GEMM per call over the whole batch (im2col
//! columns laid side by side), so per-element reduction order depends only
//! on the tensor extents.

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Spatial padding policy for [`conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2`; preserves extents at stride 1 for odd kernels.
    Same,
    Explicit(usize),
}

impl Padding {
    fn resolve(self, kh: usize, kw: usize) -> Result<usize> {
        match self {
            Padding::Explicit(p) => Ok(p),
            Padding::Same => {
                if kh != kw || kh.is_multiple_of(2) {
                    return Err(Error::shape(format!(
                        "'same' padding needs a square odd kernel, got {kh}×{kw}"
                    )));
                }
                Ok((kh - 1) / 2)
            }
        }
    }
}

/// Geometry of one sliding-window pass over a C×H×W image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geom {
    pub fn new(
        c: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape("stride must be positive"));
        }
        let span_h = h + 2 * pad;
        let span_w = w + 2 * pad;
        if span_h < kh || span_w < kw {
            return Err(Error::shape(format!(
                "kernel {kh}×{kw} does not fit padded input {span_h}×{span_w}"
            )));
        }
        let oh = (span_h - kh) / stride + 1;
        let ow = (span_w - kw) / stride + 1;
        Ok(Self {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Scatter one image into columns `[rows, ld]` starting at column `col0`.
    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T], ld: usize, col0: usize) {
        let (p, s) = (self.pad as isize, self.stride as isize);
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * ld + col0..row * ld + col0 + self.positions()];
                    for oy in 0..self.oh {
                        let y = oy as isize * s + i as isize - p;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if y < 0 || y >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let x = ox as isize * s + j as isize - p;
                            *d = if x < 0 || x >= self.w as isize {
                                T::zero()
                            } else {
                                src[x as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Accumulate columns `[rows, ld]` (from `col0`) back into one image.
    fn col2im<T: Scalar>(&self, cols: &[T], ld: usize, col0: usize, img: &mut [T]) {
        let (p, s) = (self.pad as isize, self.stride as isize);
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * ld + col0..row * ld + col0 + self.positions()];
                    for oy in 0..self.oh {
                        let y = oy as isize * s + i as isize - p;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let x = ox as isize * s + j as isize - p;
                            if x >= 0 && x < self.w as isize {
                                dst[x as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Columns for every batch item, side by side: `[rows, n * positions]`.
    fn im2col_batch<T: Scalar>(&self, x: &[T], n: usize) -> Vec<T> {
        let ld = n * self.positions();
        let mut cols = vec![T::zero(); self.rows() * ld];
        let per = self.c * self.h * self.w;
        for b in 0..n {
            self.im2col(&x[b * per..(b + 1) * per], &mut cols, ld, b * self.positions());
        }
        cols
    }

    fn col2im_batch<T: Scalar>(&self, cols: &[T], n: usize) -> Vec<T> {
        let ld = n * self.positions();
        let per = self.c * self.h * self.w;
        let mut img = vec![T::zero(); n * per];
        for b in 0..n {
            self.col2im(cols, ld, b * self.positions(), &mut img[b * per..(b + 1) * per]);
        }
        img
    }
}

/// `[N, C, P]` → `[C, N*P]`.
fn to_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            out[ch * n * p + b * p..ch * n * p + (b + 1) * p]
                .copy_from_slice(&x[(b * c + ch) * p..(b * c + ch + 1) * p]);
        }
    }
    out
}

/// `[C, N*P]` → `[N, C, P]`, adding `bias[c]` when given.
fn from_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize, bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let dst = &mut out[(b * c + ch) * p..(b * c + ch + 1) * p];
            let src = &x[ch * n * p + b * p..ch * n * p + (b + 1) * p];
            match bias {
                Some(bias) => {
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = s + bias[ch];
                    }
                }
                None => dst.copy_from_slice(src),
            }
        }
    }
    out
}

/// Per-channel sum of an `[N, C, P]` buffer, reduced in (n, p) order.
fn channel_sums<T: Scalar>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            for &v in &x[(b * c + ch) * p..(b * c + ch + 1) * p] {
                *acc += v;
            }
        }
    }
    out
}

fn check_bias<T: Scalar>(bias: &Tensor<T>, cout: usize) -> Result<()> {
    if bias.shape() != [cout] {
        return Err(Error::shape(format!(
            "bias shape {:?} does not match {cout} output channels",
            bias.shape()
        )));
    }
    Ok(())
}

fn conv_geom<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, Geom)> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, kcin, kh, kw) = kernel.dims4()?;
    if cin != kcin {
        return Err(Error::shape(format!(
            "conv2d: input has {cin} channels, kernel expects {kcin}"
        )));
    }
    let pad = padding.resolve(kh, kw)?;
    Ok((n, cout, Geom::new(cin, h, w, kh, kw, stride, pad)?))
}

/// 2-D cross-correlation with bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (n, cout, g) = conv_geom(input, kernel, stride, padding)?;
    check_bias(bias, cout)?;
    let p = g.positions();
    let pointwise = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
    let cols = if pointwise {
        to_channel_major(input.data(), n, g.c, p)
    } else {
        g.im2col_batch(input.data(), n)
    };
    let mut out = vec![T::zero(); cout * n * p];
    gemm(
        T::one(),
        MatRef::new(kernel.data(), cout, g.rows()),
        MatRef::new(&cols, g.rows(), n * p),
        T::zero(),
        &mut out,
    );
    let data = from_channel_major(&out, n, cout, p, Some(bias.data()));
    Ok(Tensor::from_parts(vec![n, cout, g.oh, g.ow], data))
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, cout, g) = conv_geom(input, kernel, stride, padding)?;
    if grad_out.shape() != [n, cout, g.oh, g.ow] {
        return Err(Error::shape("conv2d_backward: grad_out shape mismatch"));
    }
    let p = g.positions();
    let pointwise = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
    let cols = if pointwise {
        to_channel_major(input.data(), n, g.c, p)
    } else {
        g.im2col_batch(input.data(), n)
    };
    let dy = to_channel_major(grad_out.data(), n, cout, p);

    let mut dk = vec![T::zero(); cout * g.rows()];
    gemm(
        T::one(),
        MatRef::new(&dy, cout, n * p),
        MatRef::new(&cols, g.rows(), n * p).t(),
        T::zero(),
        &mut dk,
    );
    let db = channel_sums(grad_out.data(), n, cout, p);

    let mut dcols = vec![T::zero(); g.rows() * n * p];
    gemm(
        T::one(),
        MatRef::new(kernel.data(), cout, g.rows()).t(),
        MatRef::new(&dy, cout, n * p),
        T::zero(),
        &mut dcols,
    );
    let dx = if pointwise {
        from_channel_major(&dcols, n, g.c, p, None)
    } else {
        g.col2im_batch(&dcols, n)
    };
    Ok((
        Tensor::from_parts(input.shape().to_vec(), dx),
        Tensor::from_parts(kernel.shape().to_vec(), dk),
        Tensor::from_parts(vec![cout], db),
    ))
}

/// Fixed transposed-convolution geometry: 4×4 kernel, stride 2, padding 1.
pub const DECONV_KERNEL: usize = 4;
pub const DECONV_STRIDE: usize = 2;
pub const DECONV_PAD: usize = 1;

fn deconv_geom<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<(usize, usize, usize, Geom)> {
    let (n, cin, h, w) = input.dims4()?;
    let (kcin, cout, kh, kw) = kernel.dims4()?;
    if kcin != cin {
        return Err(Error::shape(format!(
            "deconv2d: input has {cin} channels, kernel expects {kcin}"
        )));
    }
    if kh != DECONV_KERNEL || kw != DECONV_KERNEL {
        return Err(Error::shape(format!(
            "deconv2d: kernel must be {DECONV_KERNEL}×{DECONV_KERNEL}, got {kh}×{kw}"
        )));
    }
    // Output-space geometry: a stride-2 conv over the 2H×2W output maps back onto H×W.
    let g = Geom::new(cout, 2 * h, 2 * w, kh, kw, DECONV_STRIDE, DECONV_PAD)?;
    debug_assert_eq!((g.oh, g.ow), (h, w));
    Ok((n, cin, cout, g))
}

/// Transposed convolution doubling the spatial extents.
///
/// Kernel layout is Cin×Cout×4×4; the op is the adjoint of a stride-2,
/// padding-1 [`conv2d`] whose kernel is the same buffer read as Cout'=Cin.
pub fn deconv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, cin, cout, g) = deconv_geom(input, kernel)?;
    check_bias(bias, cout)?;
    let p = g.positions();
    let x = to_channel_major(input.data(), n, cin, p);
    let mut cols = vec![T::zero(); g.rows() * n * p];
    gemm(
        T::one(),
        MatRef::new(kernel.data(), cin, g.rows()).t(),
        MatRef::new(&x, cin, n * p),
        T::zero(),
        &mut cols,
    );
    let mut y = g.col2im_batch(&cols, n);
    let plane = g.h * g.w;
    for (i, chunk) in y.chunks_mut(plane).enumerate() {
        let b = bias.data()[i % cout];
        for v in chunk {
            *v += b;
        }
    }
    Ok(Tensor::from_parts(vec![n, cout, g.h, g.w], y))
}

/// Gradients of [`deconv2d`] with respect to input, kernel and bias.
pub fn deconv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, cin, cout, g) = deconv_geom(input, kernel)?;
    if grad_out.shape() != [n, cout, g.h, g.w] {
        return Err(Error::shape("deconv2d_backward: grad_out shape mismatch"));
    }
    let p = g.positions();
    let cols = g.im2col_batch(grad_out.data(), n);
    let x = to_channel_major(input.data(), n, cin, p);

    let mut dx = vec![T::zero(); cin * n * p];
    gemm(
        T::one(),
        MatRef::new(kernel.data(), cin, g.rows()),
        MatRef::new(&cols, g.rows(), n * p),
        T::zero(),
        &mut dx,
    );
    let mut dk = vec![T::zero(); cin * g.rows()];
    gemm(
        T::one(),
        MatRef::new(&x, cin, n * p),
        MatRef::new(&cols, g.rows(), n * p).t(),
        T::zero(),
        &mut dk,
    );
    let db = channel_sums(grad_out.data(), n, cout, g.h * g.w);
    Ok((
        Tensor::from_parts(input.shape().to_vec(), from_channel_major(&dx, n, cin, p, None)),
        Tensor::from_parts(kernel.shape().to_vec(), dk),
        Tensor::from_parts(vec![cout], db),
    ))
}

/// 2×2 stride-2 max pooling. Odd extents behave as if padded with −∞.
///
/// Returns the pooled tensor and, per output element, the flat input index
/// of the selected maximum (first occurrence in row-major window order).
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("maxpool2 needs H,W ≥ 2, got {h}×{w}")));
    }
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let (y, xx) = (2 * oy + dy, 2 * ox + dx);
                    if y < h && xx < w {
                        let idx = base + y * w + xx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], out), arg))
}

pub fn maxpool2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    dx
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    Tensor::from_parts(
        input.shape().to_vec(),
        input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect(),
    )
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape(format!(
            "concat_channels: {:?} and {:?} disagree outside the channel axis",
            a.shape(),
            b.shape()
        )));
    }
    let (pa, pb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(n * (pa + pb));
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * pa..(i + 1) * pa]);
        out.extend_from_slice(&b.data()[i * pb..(i + 1) * pb]);
    }
    Ok(Tensor::from_parts(vec![n, ca + cb, h, w], out))
}

/// Channels `[start, start + len)` of an N×C×H×W tensor.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if len == 0 || start + len > c {
        return Err(Error::shape(format!(
            "channel slice {start}..{} out of {c}",
            start + len
        )));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    for i in 0..n {
        let base = (i * c + start) * plane;
        out.extend_from_slice(&x.data()[base..base + len * plane]);
    }
    Ok(Tensor::from_parts(vec![n, len, h, w], out))
}

/// Per-axis linear resampling weights: output index → (input index, weight).
#[derive(Clone, Debug, PartialEq)]
pub struct Resampler {
    input: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

impl Resampler {
    /// Box-filter (area-average) downsampling from `input` to `output` samples.
    pub fn area(input: usize, output: usize) -> Result<Self> {
        if output == 0 || output > input {
            return Err(Error::Range(format!(
                "area resampling needs 1 ≤ output ≤ input, got {input} → {output}"
            )));
        }
        let scale = input as f64 / output as f64;
        let taps = (0..output)
            .map(|i| {
                if input.is_multiple_of(output) {
                    let k = input / output;
                    let w = 1.0 / k as f64;
                    return (i * k..(i + 1) * k).map(|j| (j, w)).collect();
                }
                let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(input);
                (first..last)
                    .filter_map(|j| {
                        let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                        (overlap > 0.0).then_some((j, overlap / scale))
                    })
                    .collect()
            })
            .collect();
        Ok(Self { input, taps })
    }

    /// Half-pixel-centred bilinear interpolation (used for upsampling).
    pub fn bilinear(input: usize, output: usize) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(Error::Range("bilinear resampling of empty axis".into()));
        }
        let scale = input as f64 / output as f64;
        let taps = (0..output)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(input - 1);
                let frac = src - lo as f64;
                if hi == lo || frac == 0.0 {
                    vec![(lo, 1.0)]
                } else {
                    vec![(lo, 1.0 - frac), (hi, frac)]
                }
            })
            .collect();
        Ok(Self { input, taps })
    }

    /// Area for shrinking, bilinear for growing, identity otherwise.
    pub fn auto(input: usize, output: usize) -> Result<Self> {
        if output <= input {
            Self::area(input, output)
        } else {
            Self::bilinear(input, output)
        }
    }

    pub fn output(&self) -> usize {
        self.taps.len()
    }
}

/// Separable resampling of the last two axes of an N×C×H×W tensor.
pub fn resample<T: Scalar>(x: &Tensor<T>, rows: &Resampler, cols: &Resampler) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if rows.input != h || cols.input != w {
        return Err(Error::shape(format!(
            "resampler built for {}×{}, input is {h}×{w}",
            rows.input, cols.input
        )));
    }
    let (oh, ow) = (rows.output(), cols.output());
    let mut out = vec![T::zero(); n * c * oh * ow];
    let mut tmp = vec![T::zero(); h * ow];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for (j, taps) in cols.taps.iter().enumerate() {
                let mut acc = T::zero();
                for &(xi, wt) in taps {
                    acc += src[y * w + xi] * T::from_f64_lossy(wt);
                }
                tmp[y * ow + j] = acc;
            }
        }
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for (i, taps) in rows.taps.iter().enumerate() {
            for j in 0..ow {
                let mut acc = T::zero();
                for &(yi, wt) in taps {
                    acc += tmp[yi * ow + j] * T::from_f64_lossy(wt);
                }
                dst[i * ow + j] = acc;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

/// Adjoint of [`resample`]: scatters each output gradient back over its taps.
pub fn resample_backward<T: Scalar>(
    input_shape: &[usize],
    rows: &Resampler,
    cols: &Resampler,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (h, w) = (rows.input, cols.input);
    let (oh, ow) = (rows.output(), cols.output());
    let planes = grad_out.numel() / (oh * ow);
    let mut dx = vec![T::zero(); planes * h * w];
    let mut tmp = vec![T::zero(); h * ow];
    for plane in 0..planes {
        let g = &grad_out.data()[plane * oh * ow..(plane + 1) * oh * ow];
        tmp.fill(T::zero());
        for (i, taps) in rows.taps.iter().enumerate() {
            for &(yi, wt) in taps {
                let wt = T::from_f64_lossy(wt);
                for j in 0..ow {
                    tmp[yi * ow + j] += g[i * ow + j] * wt;
                }
            }
        }
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for (j, taps) in cols.taps.iter().enumerate() {
                let gv = tmp[y * ow + j];
                for &(xi, wt) in taps {
                    dst[y * w + xi] += gv * T::from_f64_lossy(wt);
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Area-average resize of the last two axes (bilinear when growing).
pub fn resize_area<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4()?;
    resample(x, &Resampler::auto(h, out_h)?, &Resampler::auto(w, out_w)?)
}
