//! Binary checkpoints for [`MlpModel`].
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 8 | magic `b"FDIVMLP\0"` |
//! | 8 | 4 | format version (`u32`, currently 1) |
//! | 12 | 4 | `d_in` (`u32`) |
//! | 16 | 4 | `hidden` (`u32`) |
//! | 20 | 4 | `classes` (`u32`) |
//! | 24 | 8 * P | parameters as `f64`: `W1` (`hidden x d_in`, row-major), `b1`, `W2` (`classes x hidden`, row-major), `b2` |

use std::io::{Read, Write};
use std::path::Path;

use super::mlp::MlpModel;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FDIVMLP\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * model.n_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [model.d_in, model.hidden, model.classes] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<MlpModel> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checkpoint(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let (d, h, c) = (
        u32_at(12) as usize,
        u32_at(16) as usize,
        u32_at(20) as usize,
    );
    let n = MlpModel::n_params_for(d, h, c);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * n {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes for {d}x{h}x{c}, found {}",
            8 * n,
            body.len()
        )));
    }
    let params = body
        .chunks_exact(8)
        .map(|ch| f64::from_le_bytes(ch.try_into().expect("8 bytes")))
        .collect();
    MlpModel::from_params(d, h, c, params)
}

pub fn save(model: &MlpModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MlpModel> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::RngStream;

    #[test]
    fn roundtrip_is_bitwise() {
        let m = MlpModel::init(7, 5, 3, &RngStream::new(1, 0));
        let bytes = encode(&m);
        assert_eq!(bytes.len(), HEADER_LEN + 8 * m.n_params());
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let m = MlpModel::init(3, 2, 2, &RngStream::new(2, 0));
        let mut bytes = encode(&m);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
        let mut v = encode(&m);
        v[8] = 9;
        assert!(matches!(decode(&v), Err(Error::Checkpoint(_))));
    }
}
