//! On-disk feature cache: `"MFC1"`, `u32 rows`, `u32 cols`, `u32 n_valid_frames`,
//! then `rows * cols` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{format_err, invalid, Result};

pub const FEATURE_CACHE_MAGIC: &[u8; 4] = b"MFC1";
const HEADER_LEN: usize = 16;

pub fn encode_feature_cache(features: &FeatureMatrix<f32>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + features.values.len() * 4);
    buf.extend_from_slice(FEATURE_CACHE_MAGIC);
    buf.extend_from_slice(&(features.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(features.cols as u32).to_le_bytes());
    buf.extend_from_slice(&(features.n_valid_frames as u32).to_le_bytes());
    for v in &features.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_feature_cache(bytes: &[u8]) -> Result<FeatureMatrix<f32>> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len() as u64, "feature cache header truncated"));
    }
    if &bytes[..4] != FEATURE_CACHE_MAGIC {
        return Err(format_err(0, "bad feature cache magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols, n_valid) = (word(4), word(8), word(12));
    if n_valid > rows {
        return Err(format_err(12, format!("n_valid_frames {n_valid} exceeds rows {rows}")));
    }
    let want = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err(4, "feature cache dimensions overflow"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != want {
        return Err(format_err(
            (HEADER_LEN + body.len().min(want)) as u64,
            format!("expected {want} payload bytes, found {}", body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMatrix {
        rows,
        cols,
        values,
        n_valid_frames: n_valid,
    })
}

pub fn write_feature_cache(path: &Path, features: &FeatureMatrix<f32>) -> Result<()> {
    if features.values.len() != features.rows * features.cols {
        return Err(invalid("feature matrix shape does not match its buffer"));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode_feature_cache(features))?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureMatrix<f32>> {
    decode_feature_cache(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let fm = FeatureMatrix {
            rows: 2,
            cols: 1,
            values: vec![1.0f32, -2.5],
            n_valid_frames: 1,
        };
        let b = encode_feature_cache(&fm);
        assert_eq!(&b[..4], b"MFC1");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(decode_feature_cache(b"MFC1").is_err());
        assert!(decode_feature_cache(b"XXXX\0\0\0\0\0\0\0\0\0\0\0\0").is_err());
        let fm = FeatureMatrix {
            rows: 2,
            cols: 2,
            values: vec![0.0f32; 4],
            n_valid_frames: 2,
        };
        let mut b = encode_feature_cache(&fm);
        b.pop();
        assert!(matches!(
            decode_feature_cache(&b),
            Err(crate::Error::Format { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip(rows in 0usize..6, cols in 0usize..5, seed in any::<u32>()) {
            let values: Vec<f32> = (0..rows * cols)
                .map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed)) as f32 / 1e6)
                .collect();
            let fm = FeatureMatrix { rows, cols, values, n_valid_frames: rows / 2 };
            let back = decode_feature_cache(&encode_feature_cache(&fm)).unwrap();
            prop_assert_eq!(back, fm);
        }
    }
}
