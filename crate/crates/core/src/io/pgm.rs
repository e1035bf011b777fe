use std::fs;
use std::path::Path;

use crate::fields::Field2D;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Encodes a field as binary PGM (P5). Values map linearly from `[min, max]`
/// to `[0, 255]`, clamped, rounding half up.
pub fn encode_pgm<S: Scalar>(field: &Field2D<S>, min: S, max: S) -> Result<Vec<u8>> {
    if !(max > min) {
        return Err(Error::InvalidParameter(format!(
            "pgm range requires max > min, got [{min}, {max}]"
        )));
    }
    let (h, w) = field.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let scale = S::of(255.0) / (max - min);
    out.extend(field.as_slice().iter().map(|v| {
        let level = ((*v - min) * scale + S::of(0.5)).floor();
        level.max(S::zero()).min(S::of(255.0)).to_u8().unwrap_or(0)
    }));
    Ok(out)
}

pub fn write_pgm<S: Scalar>(field: &Field2D<S>, path: impl AsRef<Path>, min: S, max: S) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(field, min, max)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixels(bytes: &[u8]) -> &[u8] {
        // header is three newline-terminated lines
        let mut seen = 0;
        let start = bytes
            .iter()
            .position(|b| {
                if *b == b'\n' {
                    seen += 1;
                }
                seen == 3
            })
            .unwrap();
        &bytes[start + 1..]
    }

    #[test]
    fn constant_fields_and_midpoint() {
        let f = Field2D::filled(2, 3, 0.0f64);
        let b = encode_pgm(&f, 0.0, 1.0).unwrap();
        assert!(b.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(pixels(&b), &[0u8; 6]);
        let f = Field2D::filled(2, 3, 1.0f64);
        assert_eq!(pixels(&encode_pgm(&f, 0.0, 1.0).unwrap()), &[255u8; 6]);
        let f = Field2D::filled(1, 1, 0.5f64);
        assert_eq!(pixels(&encode_pgm(&f, 0.0, 1.0).unwrap()), &[128u8]);
    }

    #[test]
    fn clamps_and_validates_range() {
        let f = Field2D::from_vec(1, 2, vec![-5.0f64, 7.0]).unwrap();
        assert_eq!(pixels(&encode_pgm(&f, 0.0, 1.0).unwrap()), &[0u8, 255]);
        assert!(encode_pgm(&f, 1.0, 1.0).is_err());
    }
}
