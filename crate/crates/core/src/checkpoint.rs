//! Versioned binary checkpoint container.
//!
//! All integers are little-endian. Strings are a `u32` byte length followed
//! by UTF-8 bytes.
//!
//! | field        | encoding                                              |
//! |--------------|-------------------------------------------------------|
//! | magic        | 8 bytes `HOSPCKPT`                                    |
//! | version      | `u32`, currently 1                                    |
//! | precision    | `u8` byte width of stored reals (4 or 8), 3 zero bytes |
//! | iteration    | `u64`                                                 |
//! | val_acc      | `f64` bits                                            |
//! | config_hash  | string, hex SHA-256 of `config`                       |
//! | rng          | 32-byte seed, `u64` stream, `u128` word position      |
//! | config       | string, `TrainConfig` as JSON                         |
//! | input_dim    | `u64`                                                 |
//! | tensor count | `u32`                                                 |
//! | tensors      | name string, `u32` rank, `u64` dims, then raw reals   |
//! | checksum     | 32 bytes, SHA-256 of every preceding byte             |
//!
//! Tensors appear in parameter-store order, so a checkpoint restores only
//! into the layout its config describes.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{ModelParams, NamedTensor};
use crate::tensor::{Precision, Real, Tensor};
use crate::trainer::{Checkpoint, RngState, TrainConfig};

const MAGIC: &[u8; 8] = b"HOSPCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// A checkpoint at whichever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn precision(&self) -> Precision {
        match self {
            AnyCheckpoint::F32(_) => Precision::F32,
            AnyCheckpoint::F64(_) => Precision::F64,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        match self {
            AnyCheckpoint::F32(c) => &c.config,
            AnyCheckpoint::F64(c) => &c.config,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            AnyCheckpoint::F32(c) => c.params.config().input_dim,
            AnyCheckpoint::F64(c) => c.params.config().input_dim,
        }
    }
}

fn width<T: Real>() -> u8 {
    match T::NAME {
        "f32" => 4,
        _ => 8,
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode<T: Real>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&[width::<T>(), 0, 0, 0]);
    out.extend_from_slice(&ckpt.iteration.to_le_bytes());
    out.extend_from_slice(&ckpt.val_acc.to_bits().to_le_bytes());
    put_str(&mut out, &ckpt.config_hash);
    out.extend_from_slice(&ckpt.rng.seed);
    out.extend_from_slice(&ckpt.rng.stream.to_le_bytes());
    out.extend_from_slice(&ckpt.rng.word_pos.to_le_bytes());
    let json = serde_json::to_string(&ckpt.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    put_str(&mut out, &json);
    out.extend_from_slice(&(ckpt.params.config().input_dim as u64).to_le_bytes());
    out.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for t in ckpt.params.named() {
        put_str(&mut out, &t.name);
        out.extend_from_slice(&(t.tensor.rank() as u32).to_le_bytes());
        for &d in t.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.tensor.data() {
            if width::<T>() == 4 {
                out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

fn decode_as<T: Real>(r: &mut Reader<'_>, header: Header) -> Result<Checkpoint<T>> {
    let mut named = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let name = r.string("tensor name")?;
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("tensor `{name}` has implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u64("tensor dim").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` size overflows")))?;
        let bytes = r.take(
            len.checked_mul(usize::from(width::<T>()))
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
            "tensor data",
        )?;
        let data = if width::<T>() == 4 {
            bytes
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f64::from(f32::from_le_bytes(c.try_into().unwrap()))))
                .collect()
        } else {
            bytes
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect()
        };
        named.push(NamedTensor {
            name,
            tensor: Tensor::new(shape, data)?,
        });
    }
    let params = ModelParams::from_named(header.config.model_config(header.input_dim), named)?;
    Ok(Checkpoint {
        config: header.config,
        params,
        iteration: header.iteration,
        val_acc: header.val_acc,
        config_hash: header.config_hash,
        rng: header.rng,
    })
}

struct Header {
    iteration: u64,
    val_acc: f64,
    config_hash: String,
    rng: RngState,
    config: TrainConfig,
    input_dim: usize,
    count: usize,
}

pub fn decode(bytes: &[u8]) -> Result<AnyCheckpoint> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch; file is corrupt".into()));
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let [w, _, _, _] = r.array::<4>("precision")?;
    let iteration = r.u64("iteration")?;
    let val_acc = f64::from_bits(r.u64("val_acc")?);
    let config_hash = r.string("config hash")?;
    let rng = RngState {
        seed: r.array("rng seed")?,
        stream: r.u64("rng stream")?,
        word_pos: u128::from_le_bytes(r.array("rng position")?),
    };
    let json = r.string("config")?;
    let config: TrainConfig =
        serde_json::from_str(&json).map_err(|e| Error::Checkpoint(format!("config JSON: {e}")))?;
    if config.hash() != config_hash {
        return Err(Error::Checkpoint(format!(
            "stored config hash {config_hash} does not match its config ({})",
            config.hash()
        )));
    }
    let header = Header {
        iteration,
        val_acc,
        config_hash,
        rng,
        config,
        input_dim: r.u64("input dim")? as usize,
        count: r.u32("tensor count")? as usize,
    };
    let ckpt = match w {
        4 => AnyCheckpoint::F32(decode_as(&mut r, header)?),
        8 => AnyCheckpoint::F64(decode_as(&mut r, header)?),
        other => return Err(Error::Checkpoint(format!("unknown real width {other}"))),
    };
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(ckpt)
}

pub fn save<T: Real>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<AnyCheckpoint> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::seeded_stream;

    fn sample<T: Real>() -> Checkpoint<T> {
        let config = TrainConfig {
            layers: 2,
            hidden_dim: 4,
            metric_hidden: 5,
            ..TrainConfig::default()
        };
        let mut rng = seeded_stream(3, 0);
        let params = ModelParams::init(config.model_config(6), &mut rng).unwrap();
        Checkpoint {
            config_hash: config.hash(),
            config,
            params,
            iteration: 17,
            val_acc: 0.8125,
            rng: RngState::capture(&rng),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c64 = sample::<f64>();
        assert_eq!(decode(&encode(&c64).unwrap()).unwrap(), AnyCheckpoint::F64(c64));
        let c32 = sample::<f32>();
        assert_eq!(decode(&encode(&c32).unwrap()).unwrap(), AnyCheckpoint::F32(c32));
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&sample::<f64>()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(decode(&bytes).unwrap_err().to_string().contains("checksum"));
        assert!(decode(b"nonsense").is_err());
        let good = encode(&sample::<f64>()).unwrap();
        assert!(decode(&good[..good.len() - 1]).is_err());
    }

    #[test]
    fn future_versions_are_rejected() {
        let mut bytes = encode(&sample::<f32>()).unwrap();
        bytes[8] = 9;
        let n = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        assert!(decode(&bytes).unwrap_err().to_string().contains("version 9"));
    }
}
