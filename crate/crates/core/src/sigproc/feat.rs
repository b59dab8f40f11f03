//! FEAT1: `FEAT`, version byte, u32 T, u32 F, then little-endian f32 rows.

use std::path::Path;

use ndarray::Array2;

use crate::util::{read_file, write_file};
use crate::{Error, Result};

pub const FEAT_MAGIC: &[u8; 4] = b"FEAT";
pub const FEAT_VERSION: u8 = 1;
const HEADER: usize = 4 + 1 + 4 + 4;

pub fn encode_feat(frames: &Array2<f32>) -> Vec<u8> {
    let (t, f) = frames.dim();
    let mut out = Vec::with_capacity(HEADER + 4 * t * f);
    out.extend_from_slice(FEAT_MAGIC);
    out.push(FEAT_VERSION);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(f as u32).to_le_bytes());
    for v in frames.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_feat(bytes: &[u8], path: &Path) -> Result<Array2<f32>> {
    if bytes.len() < HEADER || &bytes[..4] != FEAT_MAGIC {
        return Err(Error::format(path, "missing FEAT magic"));
    }
    if bytes[4] != FEAT_VERSION {
        return Err(Error::Unsupported {
            path: path.into(),
            message: format!("FEAT version {}", bytes[4]),
        });
    }
    let t = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER..];
    if payload.len() != 4 * t * f {
        return Err(Error::format(
            path,
            format!("payload has {} bytes, header says {t}x{f}", payload.len()),
        ));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((t, f), values).expect("length checked"))
}

pub fn write_feat(path: impl AsRef<Path>, frames: &Array2<f32>) -> Result<()> {
    write_file(path.as_ref(), &encode_feat(frames))
}

pub fn read_feat(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    decode_feat(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = Array2::from_shape_vec((2, 3), vec![1.0f32, 2., 3., 4., 5., 6.]).unwrap();
        let b = encode_feat(&m);
        assert_eq!(&b[..5], b"FEAT\x01");
        assert_eq!(&b[5..9], &2u32.to_le_bytes());
        assert_eq!(&b[9..13], &3u32.to_le_bytes());
        assert_eq!(&b[13..17], &1.0f32.to_le_bytes());
        assert_eq!(&b[17..21], &2.0f32.to_le_bytes());
        assert_eq!(b.len(), 13 + 24);
    }

    #[test]
    fn truncated_payload_rejected() {
        let m = Array2::<f32>::zeros((4, 4));
        let mut b = encode_feat(&m);
        b.pop();
        assert!(matches!(
            decode_feat(&b, Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip(t in 1usize..20, f in 1usize..10, seed in any::<u32>()) {
            let m = Array2::from_shape_fn((t, f), |(i, j)| (seed as f32) * 1e-3 + (i * f + j) as f32 * 0.25);
            let back = decode_feat(&encode_feat(&m), Path::new("x")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
