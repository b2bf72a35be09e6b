//! IDX (MNIST) file format, unsigned-byte payloads only.
//!
//! Layout: 4-byte big-endian magic (`0x00000801` for 1-D label files,
//! `0x00000803` for 3-D image files), one big-endian `u32` per dimension,
//! then the row-major payload.

use std::path::Path;

use thiserror::Error;

pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_IMAGES: u32 = 0x0000_0803;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("truncated input at byte {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown magic number {magic:#010x} at byte 0")]
    UnknownMagic { magic: u32 },
    #[error("dimension product overflows at byte {offset}")]
    DimOverflow { offset: usize },
    #[error("payload at byte {offset}: expected {expected} bytes, found {found}")]
    PayloadLength {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid tensor: {0}")]
    Invariant(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self, IdxError> {
        let t = Self { dims, data };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<(), IdxError> {
        if self.dims.len() != 1 && self.dims.len() != 3 {
            return Err(IdxError::Invariant(format!(
                "dims must have length 1 or 3, got {}",
                self.dims.len()
            )));
        }
        if self.dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(IdxError::Invariant("dimension exceeds u32".into()));
        }
        let product = self
            .dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| IdxError::Invariant("dimension product overflows".into()))?;
        if product != self.data.len() {
            return Err(IdxError::Invariant(format!(
                "dims product {product} != data length {}",
                self.data.len()
            )));
        }
        Ok(())
    }

    /// Image `i` of a 3-D tensor as a row-major slice.
    pub fn item(&self, i: usize) -> &[u8] {
        let stride: usize = self.dims[1..].iter().product();
        &self.data[i * stride..(i + 1) * stride]
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(IdxError::Truncated {
            offset: bytes.len(),
            needed: end - bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    let magic = read_u32(bytes, 0)?;
    let ndims = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        _ => return Err(IdxError::UnknownMagic { magic }),
    };
    let mut dims = Vec::with_capacity(ndims);
    let mut product = 1usize;
    for k in 0..ndims {
        let offset = 4 + 4 * k;
        let d = read_u32(bytes, offset)? as usize;
        product = product
            .checked_mul(d)
            .ok_or(IdxError::DimOverflow { offset })?;
        dims.push(d);
    }
    let header = 4 + 4 * ndims;
    let found = bytes.len() - header;
    if found != product {
        return Err(IdxError::PayloadLength {
            offset: header,
            expected: product,
            found,
        });
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn serialize_idx(t: &IdxTensor) -> Result<Vec<u8>, IdxError> {
    t.check()?;
    let magic = if t.dims.len() == 1 {
        MAGIC_LABELS
    } else {
        MAGIC_IMAGES
    };
    let mut out = Vec::with_capacity(4 + 4 * t.dims.len() + t.data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&t.data);
    Ok(out)
}

pub fn read_idx_file(path: &Path) -> Result<IdxTensor, IdxError> {
    let bytes =
        std::fs::read(path).map_err(|e| IdxError::Io(format!("{}: {e}", path.display())))?;
    parse_idx(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_label_file() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 2, 5, 9];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims, vec![2]);
        assert_eq!(t.data, vec![5, 9]);
    }

    #[test]
    fn parses_image_file() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims, vec![1, 2, 2]);
        assert_eq!(t.item(0), &[1, 2, 3, 4]);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        assert_eq!(
            parse_idx(&[0, 0, 8]),
            Err(IdxError::Truncated {
                offset: 3,
                needed: 1
            })
        );
        assert_eq!(
            parse_idx(&[0, 0, 8, 2, 0, 0, 0, 0]),
            Err(IdxError::UnknownMagic { magic: 0x0802 })
        );
        assert_eq!(
            parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 1]),
            Err(IdxError::PayloadLength {
                offset: 8,
                expected: 3,
                found: 1
            })
        );
        assert_eq!(
            parse_idx(&[0, 0, 8, 3, 0, 0, 0, 1, 0, 0]),
            Err(IdxError::Truncated {
                offset: 10,
                needed: 2
            })
        );
    }

    #[test]
    fn serialize_checks_invariants() {
        let empty = IdxTensor {
            dims: vec![],
            data: vec![],
        };
        assert!(matches!(serialize_idx(&empty), Err(IdxError::Invariant(_))));
        let mismatch = IdxTensor {
            dims: vec![3],
            data: vec![1],
        };
        assert!(matches!(
            serialize_idx(&mismatch),
            Err(IdxError::Invariant(_))
        ));
        let one = IdxTensor {
            dims: vec![1],
            data: vec![0],
        };
        assert_eq!(serialize_idx(&one).unwrap().len(), 9);
    }
}
