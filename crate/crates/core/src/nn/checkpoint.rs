//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "IDBCKPT\0"
//! version    u32      CHECKPOINT_VERSION
//! kind_len   u32, kind bytes (UTF-8 tag, e.g. "mlp", "state", "multi", "meta")
//! n_nets     u32
//! per network:
//!   n_sizes  u32, sizes u64 × n_sizes
//!   n_params u64, params f64 × n_params
//! n_ids      u32, sequence ids u64 × n_ids   (multi-value: id of network i)
//! ```

use std::io::{Read, Write};

use super::{MlpConfig, MlpParams};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"IDBCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub networks: Vec<MlpParams>,
    pub sequence_ids: Vec<u64>,
}

impl Checkpoint {
    pub fn single(kind: impl Into<String>, params: MlpParams) -> Self {
        Self {
            kind: kind.into(),
            networks: vec![params],
            sequence_ids: Vec::new(),
        }
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(ckpt.kind.len() as u32).to_le_bytes())?;
    w.write_all(ckpt.kind.as_bytes())?;
    w.write_all(&(ckpt.networks.len() as u32).to_le_bytes())?;
    for net in &ckpt.networks {
        let sizes = &net.config().layer_sizes;
        w.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for &s in sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        w.write_all(&(net.len() as u64).to_le_bytes())?;
        for p in net.flat() {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.write_all(&(ckpt.sequence_ids.len() as u32).to_le_bytes())?;
    for id in &ckpt.sequence_ids {
        w.write_all(&id.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

const MAX_LEN: u64 = 1 << 28;

fn bounded(n: u64, what: &str) -> Result<usize> {
    if n > MAX_LEN {
        return Err(Error::Checkpoint(format!("implausible {what} count {n}")));
    }
    Ok(n as usize)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind_len = bounded(read_u32(&mut r)? as u64, "kind byte")?;
    let mut kind = vec![0u8; kind_len];
    r.read_exact(&mut kind)?;
    let kind = String::from_utf8(kind).map_err(|_| Error::Checkpoint("kind is not UTF-8".into()))?;
    let n_nets = bounded(read_u32(&mut r)? as u64, "network")?;
    let mut networks = Vec::with_capacity(n_nets);
    for _ in 0..n_nets {
        let n_sizes = bounded(read_u32(&mut r)? as u64, "layer")?;
        let sizes = (0..n_sizes)
            .map(|_| read_u64(&mut r).and_then(|s| bounded(s, "unit")))
            .collect::<Result<Vec<_>>>()?;
        let config = MlpConfig::new(sizes)?;
        let n_params = bounded(read_u64(&mut r)?, "parameter")?;
        let flat = (0..n_params)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        networks.push(MlpParams::from_flat(config, flat)?);
    }
    let n_ids = bounded(read_u32(&mut r)? as u64, "sequence id")?;
    let sequence_ids = (0..n_ids)
        .map(|_| read_u64(&mut r))
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        kind,
        networks,
        sequence_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bitwise(seed in any::<u64>(), hidden in 1usize..12, ids in prop::collection::vec(any::<u64>(), 0..4)) {
            let mut rng = rng_from(seed, &[]);
            let nets = vec![
                MlpParams::glorot(MlpConfig::new(vec![3, hidden, 2]).unwrap(), &mut rng),
                MlpParams::glorot(MlpConfig::new(vec![4, hidden, hidden, 1]).unwrap(), &mut rng),
            ];
            let ckpt = Checkpoint { kind: "multi".into(), networks: nets, sequence_ids: ids };
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &ckpt).unwrap();
            let back = read_checkpoint(&buf[..]).unwrap();
            prop_assert_eq!(back, ckpt);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_checkpoint(&b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let ckpt = Checkpoint::single("mlp", MlpParams::zeros(MlpConfig::new(vec![2, 2]).unwrap()));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    }
}
