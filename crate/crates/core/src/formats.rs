//! On-disk formats: raw f32 maps (`SKDM`), weight bags (`SKDW`), binary
//! PPM frames and fixation lists.
//!
//! All integers and floats are little-endian. Loaders validate the magic,
//! version and payload length and reject non-finite values, reporting the
//! byte offset of the problem.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::weights::WeightStore;
use std::fs;
use std::path::Path;

pub const MAP_MAGIC: &[u8; 4] = b"SKDM";
pub const WEIGHT_MAGIC: &[u8; 4] = b"SKDW";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.buf.len() as u64,
                format!(
                    "truncated {what}: need {n} bytes at offset {}, file ends at {}",
                    self.pos,
                    self.buf.len()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != want {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(want)
                ),
            ));
        }
        let at = self.pos as u64;
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::format(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let start = self.pos;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(start as u64, "extent overflow"))?, what)?;
        let mut out = Vec::with_capacity(n);
        for (i, c) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(
                    (start + 4 * i) as u64,
                    format!("non-finite value {v} in {what}"),
                ));
            }
            out.push(v);
        }
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Encode an H×W map (any leading extents of 1 are dropped).
pub fn encode_map(map: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = map_extent(map)?;
    if !map.is_finite() {
        return Err(Error::Numeric("refusing to store a non-finite map".into()));
    }
    let mut out = Vec::with_capacity(16 + 4 * h * w);
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn map_extent(map: &Tensor<f32>) -> Result<(usize, usize)> {
    let s = map.shape();
    let r = s.len();
    if r < 2 || s[..r - 2].iter().any(|&e| e != 1) {
        return Err(Error::shape(format!("a map must be H×W (with unit leading extents), got {s:?}")));
    }
    Ok((s[r - 2], s[r - 1]))
}

/// Decode to a 1×1×H×W tensor.
pub fn decode_map(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(MAP_MAGIC)?;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    if h == 0 || w == 0 {
        return Err(Error::format(8, format!("empty map extent {h}×{w}")));
    }
    let data = r.f32s(h * w, "map payload")?;
    r.finish()?;
    Tensor::new(vec![1, 1, h, w], data)
}

pub fn save_map(path: impl AsRef<Path>, map: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_map(map)?).map_err(|e| Error::from(e).with_path(path))
}

pub fn load_map(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).with_path(path))?;
    decode_map(&bytes).map_err(|e| e.with_path(path))
}

pub fn encode_weights(store: &WeightStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * store.numel() + 64 * store.len());
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len()).map_err(|_| Error::Config(format!("name too long: {name}")))?;
        let ndim = u8::try_from(t.ndim()).map_err(|_| Error::shape("too many dimensions"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(nb);
        out.push(ndim);
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| Error::shape("extent exceeds u32"))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        if !t.is_finite() {
            return Err(Error::Numeric(format!("refusing to store non-finite weight '{name}'")));
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightStore<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(WEIGHT_MAGIC)?;
    let count = r.u32("entry count")?;
    let mut store = WeightStore::new();
    for _ in 0..count {
        let at = r.pos as u64;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at + 2, "entry name is not UTF-8"))?
            .to_string();
        let ndim = r.u8("ndim")? as usize;
        if ndim == 0 {
            return Err(Error::format(r.pos as u64 - 1, format!("'{name}' has zero dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let e = r.u32("extent")? as usize;
            if e == 0 {
                return Err(Error::format(r.pos as u64 - 4, format!("'{name}' has a zero extent")));
            }
            shape.push(e);
        }
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let n = n.ok_or_else(|| Error::format(r.pos as u64, "extent product overflows"))?;
        let data = r.f32s(n, "weight payload")?;
        if store.get(&name).is_some() {
            return Err(Error::format(at, format!("duplicate entry '{name}'")));
        }
        store
            .insert(name, Tensor::new(shape, data)?)
            .map_err(|e| Error::format(at, e.to_string()))?;
    }
    r.finish()?;
    Ok(store)
}

pub fn save_weights(path: impl AsRef<Path>, store: &WeightStore<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(store)?).map_err(|e| Error::from(e).with_path(path))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).with_path(path))?;
    decode_weights(&bytes).map_err(|e| e.with_path(path))
}

/// Binary P6 PPM of a 3-channel image with values in [0, 1].
pub fn encode_ppm(frame: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = frame.shape();
    let (c, h, w) = match *s {
        [1, c, h, w] | [c, h, w] => (c, h, w),
        _ => return Err(Error::shape(format!("frame must be [1,]3×H×W, got {s:?}"))),
    };
    if c != 3 {
        return Err(Error::shape(format!("PPM frames need 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = frame.data();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = d[(ch * h + y) * w + x];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

/// Decode a P6 PPM (maxval 255) into a 1×3×H×W tensor scaled by 1/255.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(start as u64, "truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P6" {
        return Err(Error::format(0, "bad magic, expected P6"));
    }
    let num = |pos: &mut usize| -> Result<usize> {
        let at = *pos;
        token(pos)?
            .parse::<usize>()
            .map_err(|_| Error::format(at as u64, "malformed PPM header number"))
    };
    let w = num(&mut pos)?;
    let h = num(&mut pos)?;
    let maxval = num(&mut pos)?;
    if maxval != 255 {
        return Err(Error::format(pos as u64, format!("unsupported maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::format(pos as u64, "empty PPM"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated PPM raster: need {need} bytes from offset {pos}"),
        ));
    }
    let raster = &bytes[pos..pos + need];
    let mut data = vec![0f32; need];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                data[(ch * h + y) * w + x] = raster[(y * w + x) * 3 + ch] as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![1, 3, h, w], data)
}

pub fn save_ppm(path: impl AsRef<Path>, frame: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(frame)?).map_err(|e| Error::from(e).with_path(path))
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).with_path(path))?;
    decode_ppm(&bytes).map_err(|e| e.with_path(path))
}

/// One `x y` integer pair per line.
pub fn encode_fixations(fix: &[(u32, u32)]) -> String {
    fix.iter().map(|(x, y)| format!("{x} {y}\n")).collect()
}

pub fn decode_fixations(text: &str) -> Result<Vec<(u32, u32)>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let mut it = trimmed.split_whitespace();
            let parsed = match (it.next(), it.next(), it.next()) {
                (Some(x), Some(y), None) => x.parse().ok().zip(y.parse().ok()),
                _ => None,
            };
            out.push(parsed.ok_or_else(|| Error::format(offset, format!("bad fixation line '{trimmed}'")))?);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

pub fn save_fixations(path: impl AsRef<Path>, fix: &[(u32, u32)]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_fixations(fix)).map_err(|e| Error::from(e).with_path(path))
}

pub fn load_fixations(path: impl AsRef<Path>) -> Result<Vec<(u32, u32)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).with_path(path))?;
    decode_fixations(&text).map_err(|e| e.with_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_roundtrip_and_truncation() {
        let m = Tensor::from_fn(&[1, 1, 3, 5], |i| i as f32 * 0.25 - 1.0);
        let bytes = encode_map(&m).unwrap();
        assert_eq!(bytes.len(), 16 + 4 * 15);
        assert_eq!(decode_map(&bytes).unwrap(), m);

        let err = decode_map(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Format { offset, msg, .. } => {
                assert_eq!(offset, (bytes.len() - 3) as u64);
                assert!(msg.contains("truncated"), "{msg}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn map_rejects_bad_magic_version_and_nan() {
        let m = Tensor::<f32>::ones(&[1, 1, 2, 2]);
        let mut bytes = encode_map(&m).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_map(&bytes), Err(Error::Format { offset: 0, .. })));

        let mut bytes = encode_map(&m).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_map(&bytes), Err(Error::Format { offset: 4, .. })));

        let mut bytes = encode_map(&m).unwrap();
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_map(&bytes), Err(Error::Format { offset: 20, .. })));

        let mut bytes = encode_map(&m).unwrap();
        bytes.push(0);
        assert!(decode_map(&bytes).is_err());
    }

    #[test]
    fn weights_roundtrip_and_errors() {
        let mut w = WeightStore::new();
        w.insert("s_stream.conv1.kernel", Tensor::from_fn(&[2, 3, 3, 3], |i| i as f32)).unwrap();
        w.insert("s_stream.conv1.bias", Tensor::from_fn(&[2], |i| -(i as f32))).unwrap();
        let bytes = encode_weights(&w).unwrap();
        assert_eq!(decode_weights(&bytes).unwrap(), w);
        assert!(decode_weights(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_weights(&bytes[..10]).is_err());
    }

    #[test]
    fn ppm_scale_and_roundtrip() {
        let bytes = b"P6\n2 1\n255\n\x00\x80\xff\xff\xff\xff".to_vec();
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[2], 128.0 / 255.0);
        assert_eq!(t.data()[4], 1.0);
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(encode_ppm(&t).unwrap(), bytes);
        assert!(decode_ppm(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_ppm(b"P5\n1 1\n255\n\x00").is_err());
    }

    #[test]
    fn fixation_text() {
        let f = vec![(1, 2), (30, 0)];
        assert_eq!(decode_fixations(&encode_fixations(&f)).unwrap(), f);
        assert!(matches!(
            decode_fixations("1 2\n3\n"),
            Err(Error::Format { offset: 4, .. })
        ));
    }
}
