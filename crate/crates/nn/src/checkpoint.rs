//! Binary checkpoint format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        8 bytes  "CIRLNET1"
//! version      u32
//! role         u32 length + UTF-8
//! config_hash  u32 length + UTF-8
//! n_networks   u32
//! per network: name (u32 length + UTF-8), n_layers u32,
//!              per layer: kind u8, in_dim u32, out_dim u32
//! payload:     per network, per affine layer in declaration order:
//!              weight f64 × (out·in), bias f64 × out
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::network::{LayerKind, LayerSpec, Network};
use crate::param::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CIRLNET1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A set of named networks plus the role tag they were saved under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: String,
    pub config_hash: String,
    pub networks: Vec<(String, Network)>,
}

impl Checkpoint {
    pub fn new(role: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self { role: role.into(), config_hash: config_hash.into(), networks: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, net: &Network) {
        let mut net = net.clone();
        net.clear_tape();
        self.networks.push((name.into(), net));
    }

    pub fn get(&self, name: &str) -> Option<&Network> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, net)| net)
    }

    /// Copies the parameters of `name` into `target`, which must have the
    /// same layer layout.
    pub fn load_into(&self, name: &str, target: &mut Network) -> Result<()> {
        let src = self
            .get(name)
            .ok_or_else(|| NnError::Checkpoint(format!("no network named {name:?}")))?;
        if src.specs() != target.specs() {
            return Err(NnError::shape(
                "checkpoint layer specs",
                format!("{:?}", target.specs()),
                format!("{:?}", src.specs()),
            ));
        }
        for (d, s) in target.params_mut().into_iter().zip(src.params()) {
            d.values.copy_from_slice(&s.values);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.role);
        put_str(&mut out, &self.config_hash);
        out.extend_from_slice(&(self.networks.len() as u32).to_le_bytes());
        for (name, net) in &self.networks {
            put_str(&mut out, name);
            let specs = net.specs();
            out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
            for s in specs {
                out.push(s.kind.code());
                out.extend_from_slice(&(s.in_dim as u32).to_le_bytes());
                out.extend_from_slice(&(s.out_dim as u32).to_le_bytes());
            }
        }
        for (_, net) in &self.networks {
            for p in net.params() {
                for v in &p.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = get_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let role = get_str(&mut r)?;
        let config_hash = get_str(&mut r)?;
        let n = get_u32(&mut r)? as usize;
        let mut layouts = Vec::with_capacity(n);
        for _ in 0..n {
            let name = get_str(&mut r)?;
            let n_layers = get_u32(&mut r)? as usize;
            let mut specs = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let mut code = [0u8; 1];
                r.read_exact(&mut code).map_err(truncated)?;
                let kind = LayerKind::from_code(code[0])
                    .ok_or_else(|| NnError::Checkpoint(format!("unknown layer kind {}", code[0])))?;
                let in_dim = get_u32(&mut r)? as usize;
                let out_dim = get_u32(&mut r)? as usize;
                specs.push(LayerSpec { kind, in_dim, out_dim });
            }
            layouts.push((name, specs));
        }
        let mut networks = Vec::with_capacity(n);
        for (name, specs) in layouts {
            let mut net = Network::new(&specs)?;
            for p in net.params_mut() {
                for v in &mut p.values {
                    let mut b = [0u8; 8];
                    r.read_exact(&mut b).map_err(truncated)?;
                    *v = f64::from_le_bytes(b);
                }
            }
            networks.push((name, net));
        }
        if !r.is_empty() {
            return Err(NnError::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { role, config_hash, networks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn truncated(_: std::io::Error) -> NnError {
    NnError::Checkpoint("truncated file".into())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn get_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str(r: &mut &[u8]) -> Result<String> {
    let len = get_u32(r)? as usize;
    if len > r.len() {
        return Err(truncated(std::io::ErrorKind::UnexpectedEof.into()));
    }
    let (s, rest) = r.split_at(len);
    *r = rest;
    String::from_utf8(s.to_vec()).map_err(|e| NnError::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(seed: u64, hidden: usize) -> Network {
        Network::seeded(
            &[
                LayerSpec::affine(5, hidden),
                LayerSpec::activation(LayerKind::Relu, hidden),
                LayerSpec::affine(hidden, 3),
                LayerSpec::activation(LayerKind::Tanh, 3),
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut ck = Checkpoint::new("actor", "abc123");
        ck.push("trunk", &net(1, 8));
        ck.push("head", &net(2, 4));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.role, "actor");
        assert_eq!(back.config_hash, "abc123");
        for ((_, a), (_, b)) in ck.networks.iter().zip(&back.networks) {
            for (pa, pb) in a.params().iter().zip(b.params()) {
                let ba: Vec<u64> = pa.values.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = pb.values.iter().map(|v| v.to_bits()).collect();
                assert_eq!(ba, bb);
            }
        }
    }

    #[test]
    fn load_into_different_dims_is_rejected() {
        let mut ck = Checkpoint::new("actor", "");
        ck.push("trunk", &net(1, 8));
        let mut other = net(3, 9);
        let err = ck.load_into("trunk", &mut other).unwrap_err();
        assert!(matches!(err, NnError::Shape { .. }));
        let mut same = net(3, 8);
        ck.load_into("trunk", &mut same).unwrap();
        assert_eq!(&same, ck.get("trunk").unwrap());
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut ck = Checkpoint::new("critic", "");
        ck.push("q", &net(4, 4));
        let mut bytes = ck.to_bytes();
        bytes[8] = 9;
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().to_string().contains("version"));
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut ck = Checkpoint::new("critic", "");
        ck.push("q", &net(4, 4));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
