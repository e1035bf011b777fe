use std::fs;
use std::path::Path;

use crate::fields::Field3D;
use crate::scalar::Scalar;
use crate::{Error, Result};

pub const BGRID_MAGIC: &[u8; 4] = b"BGRD";
pub const BGRID_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Serializes a field: magic, version, C, H, W (u32 LE) then f32 LE payload.
pub fn encode_bgrid<S: Scalar>(field: &Field3D<S>) -> Vec<u8> {
    let (c, h, w) = field.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * c * h * w);
    out.extend_from_slice(BGRID_MAGIC);
    for v in [BGRID_VERSION, c as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in field.as_slice() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

/// Parses a `.bgrid` payload. `path` is only used in diagnostics.
pub fn decode_bgrid(bytes: &[u8], path: &Path) -> Result<Field3D<f64>> {
    if bytes.len() < 4 || &bytes[..4] != BGRID_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != BGRID_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let (c, h, w) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let count = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * count {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, header {c}x{h}x{w} needs {}",
                payload.len(),
                4 * count
            ),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Field3D::from_vec(c, h, w, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_bgrid<S: Scalar>(path: impl AsRef<Path>, field: &Field3D<S>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_bgrid(field)).map_err(|e| Error::io(path, e))
}

pub fn read_bgrid(path: impl AsRef<Path>) -> Result<Field3D<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bgrid(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let f = Field3D::from_vec(1, 1, 2, vec![1.0f64, -2.5]).unwrap();
        let bytes = encode_bgrid(&f);
        assert_eq!(&bytes[..4], b"BGRD");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[24..28], &(-2.5f32).to_le_bytes());
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = Path::new("x.bgrid");
        let err = decode_bgrid(b"XXXX\x01\0\0\0", p).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
        let f = Field3D::<f64>::zeros(2, 2, 2);
        let mut bytes = encode_bgrid(&f);
        bytes.pop();
        assert!(matches!(decode_bgrid(&bytes, p), Err(Error::Format { .. })));
        let mut bytes = encode_bgrid(&f);
        bytes[4] = 9;
        assert!(decode_bgrid(&bytes, p).unwrap_err().to_string().contains("version"));
    }

    proptest! {
        #[test]
        fn f32_representable_values_round_trip(
            c in 1usize..3, h in 1usize..4, w in 1usize..4,
            seed in proptest::collection::vec(-1e6f32..1e6, 36),
        ) {
            let data: Vec<f64> = seed[..c * h * w].iter().map(|v| *v as f64).collect();
            let f = Field3D::from_vec(c, h, w, data).unwrap();
            let back = decode_bgrid(&encode_bgrid(&f), Path::new("t")).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
