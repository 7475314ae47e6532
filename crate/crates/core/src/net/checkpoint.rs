//! Flat binary checkpoints: magic, version, layer dims, then little-endian
//! f64 weights (row-major, `fan_in × fan_out`) and biases per layer.

use std::io::{Read, Write};

use super::{Layer, MlpModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"CFITMLP\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &MlpModel, mut w: W) -> Result<()> {
    let io = |e| Error::io("checkpoint", e);
    let dims = model.dims();
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        buf.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for layer in model.layers() {
        for v in layer.weight.as_slice().iter().chain(&layer.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<MlpModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("checkpoint", e))?;
    let bad = |why: &str| Error::format("checkpoint", why.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n_dims = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    if !(2..=1024).contains(&n_dims) {
        return Err(bad("implausible layer count"));
    }
    let dims = (0..n_dims)
        .map(|_| Ok(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize))
        .collect::<Result<Vec<usize>>>()?;
    if dims.iter().any(|&d| d == 0 || d > 1 << 24) {
        return Err(bad("implausible layer width"));
    }
    let mut floats = |n: usize| -> Result<Vec<f64>> {
        let raw = take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let mut layers = Vec::with_capacity(n_dims - 1);
    for w in dims.windows(2) {
        let weight = Matrix::from_vec(w[0], w[1], floats(w[0] * w[1])?);
        let bias = floats(w[1])?;
        layers.push(Layer { weight, bias });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    MlpModel::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let m = MlpModel::new(6, 5, 3, 2, 11).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"CFITMLP\0");
        assert_eq!(buf.len(), 8 + 4 + 4 + 4 * 8 + 8 * (6 * 5 + 5 + 5 * 5 + 5 + 5 * 2 + 2));
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let m = MlpModel::new(2, 3, 2, 1, 0).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
        buf[0] = b'X';
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
