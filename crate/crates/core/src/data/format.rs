//! Flat little-endian dataset file.
//!
//! ```text
//! magic "SRDS" | version u32 | count u64 | height u32 | width u32 | vocab u32
//! per sample:
//!   template u8 | n_tokens u32 | tokens u32 × n | gt f64 × 4 | target u32
//!   n_objects u32 | (shape u8, color u8, x0 u32, y0 u32, size u32) × n
//!   pixels f64 × height·width·3
//! ```

use std::path::Path;

use super::scene::{Color, Image, Object, SceneSpec, Shape};
use super::{vocab, Sample, Template};
use crate::error::{Error, Result};
use crate::losses::BBox;

pub const DATASET_MAGIC: &[u8; 4] = b"SRDS";
pub const DATASET_VERSION: u32 = 1;

const MAX_SIDE: usize = 4096;

pub fn encode_samples(samples: &[Sample]) -> Result<Vec<u8>> {
    let (h, w) = samples.first().map_or((0, 0), |s| (s.image.height, s.image.width));
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    put_u32(&mut out, h)?;
    put_u32(&mut out, w)?;
    put_u32(&mut out, vocab::vocab_size())?;
    for s in samples {
        if s.image.height != h || s.image.width != w {
            return Err(Error::Input("samples in one file must share image dimensions".into()));
        }
        out.push(s.template.code());
        put_u32(&mut out, s.tokens.len())?;
        for &t in &s.tokens {
            put_u32(&mut out, t)?;
        }
        for v in s.gt.as_array() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, s.target)?;
        put_u32(&mut out, s.scene.objects.len())?;
        for o in &s.scene.objects {
            out.push(o.shape.code());
            out.push(o.color.code());
            put_u32(&mut out, o.x0)?;
            put_u32(&mut out, o.y0)?;
            put_u32(&mut out, o.size)?;
        }
        for &p in &s.image.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Input(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("dataset", detail)
}

pub fn decode_samples(bytes: &[u8]) -> Result<Vec<Sample>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != DATASET_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = r.u64()?;
    let h = r.u32()?;
    let w = r.u32()?;
    let vocab_size = r.u32()?;
    if vocab_size != vocab::vocab_size() {
        return Err(bad(format!("vocabulary size {vocab_size} differs from {}", vocab::vocab_size())));
    }
    if count > 0 && (h == 0 || w == 0 || h > MAX_SIDE || w > MAX_SIDE) {
        return Err(bad(format!("image size {h}x{w}")));
    }
    let pixel_bytes = h * w * 3 * 8;
    // Every record holds at least its pixels plus the fixed fields.
    let min_record = pixel_bytes + 1 + 4 + 32 + 8;
    if count as u128 * min_record as u128 > r.remaining() as u128 {
        return Err(bad(format!("{count} samples cannot fit in {} bytes", r.remaining())));
    }
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let ctx = |e: Error| match e {
            Error::Format { what, detail } => Error::Format {
                what,
                detail: format!("sample {i}: {detail}"),
            },
            e => e,
        };
        out.push(read_sample(&mut r, h, w).map_err(ctx)?);
    }
    if r.remaining() != 0 {
        return Err(bad(format!("{} trailing bytes", r.remaining())));
    }
    Ok(out)
}

fn read_sample(r: &mut Reader<'_>, h: usize, w: usize) -> Result<Sample> {
    let code = r.u8()?;
    let template = Template::from_code(code).ok_or_else(|| bad(format!("template code {code}")))?;
    let n_tokens = r.u32()?;
    if n_tokens * 4 > r.remaining() {
        return Err(bad("token count exceeds file"));
    }
    let tokens = (0..n_tokens).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    if let Some(t) = tokens.iter().find(|&&t| t >= vocab::vocab_size()) {
        return Err(bad(format!("token id {t} out of vocabulary")));
    }
    let g = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
    let gt = BBox {
        x: g[0],
        y: g[1],
        w: g[2],
        h: g[3],
    };
    if !gt.is_valid() {
        return Err(bad(format!("invalid box {g:?}")));
    }
    let target = r.u32()?;
    let n_obj = r.u32()?;
    if n_obj * 14 > r.remaining() {
        return Err(bad("object count exceeds file"));
    }
    let mut objects = Vec::with_capacity(n_obj);
    for _ in 0..n_obj {
        let (s, c) = (r.u8()?, r.u8()?);
        objects.push(Object {
            shape: Shape::from_code(s).ok_or_else(|| bad(format!("shape code {s}")))?,
            color: Color::from_code(c).ok_or_else(|| bad(format!("color code {c}")))?,
            x0: r.u32()?,
            y0: r.u32()?,
            size: r.u32()?,
        });
    }
    if target >= objects.len() {
        return Err(bad(format!("target {target} with {} objects", objects.len())));
    }
    let scene = SceneSpec {
        height: h,
        width: w,
        objects,
    };
    scene.validate().map_err(|e| bad(e.to_string()))?;
    let raw = r.take(h * w * 3 * 8)?;
    let pixels = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Sample {
        template,
        tokens,
        scene,
        target,
        gt,
        image: Image {
            height: h,
            width: w,
            pixels,
        },
    })
}

pub fn save_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::write(path, encode_samples(samples)?)?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    decode_samples(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;

    #[test]
    fn round_trip_is_bit_exact() {
        let d = generate_dataset(2, 7, 3).unwrap();
        let bytes = encode_samples(&d.train).unwrap();
        let back = decode_samples(&bytes).unwrap();
        assert_eq!(back, d.train);
        assert_eq!(encode_samples(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let d = generate_dataset(2, 2, 1).unwrap();
        let bytes = encode_samples(&d.train).unwrap();
        for cut in [0, 3, 10, 30, bytes.len() - 1] {
            assert!(matches!(decode_samples(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(decode_samples(&b).is_err());
        let mut b = bytes.clone();
        b.push(0);
        assert!(decode_samples(&b).is_err());
        let mut b = bytes;
        b[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_samples(&b).is_err());
    }

    #[test]
    fn empty_file_round_trips() {
        let bytes = encode_samples(&[]).unwrap();
        assert!(decode_samples(&bytes).unwrap().is_empty());
    }
}
