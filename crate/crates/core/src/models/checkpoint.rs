//! Binary checkpoint: `"LIDM"`, `u32` version, `u8` architecture tag,
//! `u32` class count, `u32` tensor count, then per tensor a `u16` name length,
//! the UTF-8 name, a `u8` rank, `u32` dims and little-endian `f32` data.
//!
//! Hyperparameters that do not fit the header travel as `meta.*` tensors
//! written before the parameters. Integers in them are exact: small values
//! directly, 64-bit counters as four 16-bit limbs.

use std::fs;
use std::path::Path;

use super::{ArchTag, Architecture, ConvSpec, Model, PoolSpec};
use crate::error::{format_err, Error, Result};
use crate::tensor::{Padding, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LIDM";
pub const CHECKPOINT_VERSION: u32 = 1;

const META_NAMES: [&str; 7] = [
    "meta.conv",
    "meta.pool",
    "meta.padding",
    "meta.input",
    "meta.lstm_units",
    "meta.step",
    "meta.seed",
];

fn limbs(v: u64) -> Vec<f32> {
    (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f32).collect()
}

fn from_limbs(v: &[f32]) -> Option<u64> {
    let mut out = 0u64;
    for (i, &x) in v.iter().enumerate() {
        if !(0.0..65536.0).contains(&x) || x.fract() != 0.0 {
            return None;
        }
        out |= (x as u64) << (16 * i);
    }
    Some(out)
}

fn meta_tensors(model: &Model<f32>) -> Vec<(&'static str, Vec<usize>, Vec<f32>)> {
    let a = &model.arch;
    let conv: Vec<f32> = a
        .conv_spec
        .iter()
        .flat_map(|c| [c.kernel as f32, c.filters as f32])
        .collect();
    let padding = match a.padding {
        Padding::Valid => 0.0,
        Padding::Same => 1.0,
    };
    vec![
        ("meta.conv", vec![a.conv_spec.len(), 2], conv),
        ("meta.pool", vec![2], vec![a.pool.size as f32, a.pool.stride as f32]),
        ("meta.padding", vec![1], vec![padding]),
        ("meta.input", vec![2], vec![a.input_frames as f32, a.input_coefs as f32]),
        ("meta.lstm_units", vec![1], vec![a.lstm_units as f32]),
        ("meta.step", vec![4], limbs(model.step)),
        ("meta.seed", vec![4], limbs(model.seed)),
    ]
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &Model<f32>) -> Vec<u8> {
    let meta = meta_tensors(model);
    let params = model.named_params();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(model.tag().code());
    buf.extend_from_slice(&(model.n_classes() as u32).to_le_bytes());
    buf.extend_from_slice(&((meta.len() + params.len()) as u32).to_le_bytes());
    for (name, shape, data) in &meta {
        put_tensor(&mut buf, name, shape, data);
    }
    for (name, t) in &params {
        put_tensor(&mut buf, name, t.shape(), t.data());
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(
                self.buf.len() as u64,
                format!("file truncated while reading {what}"),
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

    /// Reads one tensor record; `expected` names it in errors.
    fn tensor(&mut self, expected: &str) -> Result<(String, Tensor<f32>)> {
        let ctx = format!("tensor '{expected}'");
        let start = self.pos as u64;
        let len = self.u16(&ctx)? as usize;
        let name = std::str::from_utf8(self.take(len, &ctx)?)
            .map_err(|_| format_err(start + 2, format!("{ctx}: name is not UTF-8")))?
            .to_string();
        if name != expected {
            return Err(format_err(start + 2, format!("expected tensor '{expected}', found '{name}'")));
        }
        let rank = self.u8(&ctx)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(&ctx)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| format_err(self.pos as u64, format!("{ctx}: dimensions overflow")))?;
        let data = self
            .take(n, &ctx)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).expect("length checked");
        Ok((name, t))
    }
}

fn meta_usize(t: &Tensor<f32>, name: &str, offset: u64) -> Result<Vec<usize>> {
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0 {
                Ok(v as usize)
            } else {
                Err(format_err(offset, format!("{name} holds a non-integer value {v}")))
            }
        })
        .collect()
}

/// Parses a checkpoint. With `expected` set, a different architecture tag is
/// an [`Error::ArchitectureMismatch`].
pub fn decode_checkpoint(bytes: &[u8], expected: Option<ArchTag>) -> Result<Model<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(format_err(0, "bad checkpoint magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(4, format!("unsupported checkpoint version {version}")));
    }
    let code = r.u8("architecture tag")?;
    let tag = ArchTag::from_code(code)
        .ok_or_else(|| format_err(8, format!("unknown architecture tag {code}")))?;
    if let Some(want) = expected {
        if want != tag {
            return Err(Error::ArchitectureMismatch {
                expected: want.to_string(),
                found: tag.to_string(),
            });
        }
    }
    let n_classes = r.u32("class count")? as usize;
    let count = r.u32("tensor count")? as usize;

    let mut meta = Vec::with_capacity(META_NAMES.len());
    for (i, name) in META_NAMES.iter().enumerate() {
        if i >= count {
            return Err(format_err(r.pos as u64, format!("missing tensor '{name}'")));
        }
        let at = r.pos as u64;
        let (_, t) = r.tensor(name)?;
        meta.push((at, t));
    }
    let get = |i: usize| meta_usize(&meta[i].1, META_NAMES[i], meta[i].0);
    let conv = get(0)?;
    let pool = get(1)?;
    let padding = get(2)?;
    let input = get(3)?;
    let units = get(4)?;
    let bad = |i: usize, what: &str| format_err(meta[i].0, format!("{}: {what}", META_NAMES[i]));
    if conv.len() % 2 != 0 || pool.len() != 2 || input.len() != 2 || units.len() != 1 || padding.len() != 1 {
        return Err(bad(0, "malformed metadata shape"));
    }
    let step = from_limbs(meta[5].1.data()).ok_or_else(|| bad(5, "invalid counter"))?;
    let seed = from_limbs(meta[6].1.data()).ok_or_else(|| bad(6, "invalid counter"))?;
    let arch = Architecture {
        tag,
        conv_spec: conv
            .chunks_exact(2)
            .map(|c| ConvSpec { kernel: c[0], filters: c[1] })
            .collect(),
        pool: PoolSpec { size: pool[0], stride: pool[1] },
        lstm_units: units[0],
        n_classes,
        padding: match padding[0] {
            0 => Padding::Valid,
            1 => Padding::Same,
            _ => return Err(bad(2, "unknown padding code")),
        },
        input_frames: input[0],
        input_coefs: input[1],
    };
    arch.validate()
        .map_err(|e| format_err(meta[0].0, format!("invalid architecture: {e}")))?;

    let mut model = Model::<f32>::new(arch, seed)?;
    model.step = step;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if count != META_NAMES.len() + names.len() {
        let missing = names
            .get(count.saturating_sub(META_NAMES.len()))
            .map_or("<none>", String::as_str);
        return Err(format_err(
            17,
            format!(
                "tensor count {count} does not match {} expected (first missing: '{missing}')",
                META_NAMES.len() + names.len()
            ),
        ));
    }
    for (name, slot) in names.iter().zip(model.params_mut()) {
        let at = r.pos as u64;
        let (_, t) = r.tensor(name)?;
        if t.shape() != slot.shape() {
            return Err(format_err(
                at,
                format!("tensor '{name}' has shape {:?}, expected {:?}", t.shape(), slot.shape()),
            ));
        }
        slot.data_mut().copy_from_slice(t.data());
    }
    if r.pos != bytes.len() {
        return Err(format_err(r.pos as u64, "trailing bytes after last tensor"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: Option<ArchTag>) -> Result<Model<f32>> {
    decode_checkpoint(&fs::read(path)?, expected)
}
