//! Binary tensor archive:
//!
//! ```text
//! "DAGM" | version u32 | count u32 | count x tensor
//! tensor = name_len u16 | name (UTF-8) | rank u8 | extents u32 x rank | f32 x numel
//! ```
//!
//! All integers and floats are little-endian. A model checkpoint stores the
//! network configuration as JSON bytes in the `__config__` tensor, parameters
//! under `param/`, normalisation buffers under `buffer/` and optimizer state
//! under `adam/`.

use super::adam::AdamState;
use crate::error::{Error, Result};
use crate::network::{init_params, ModelParams, NetworkConfig};
use crate::tensor::Tensor;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"DAGM";
pub const VERSION: u32 = 1;

pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count =
        u32::try_from(tensors.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    let mut seen = BTreeSet::new();
    for (name, t) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(Error::Checkpoint(format!("duplicate tensor name {name:?}")));
        }
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("name too long: {name:?}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::Checkpoint(format!("{name}: rank too large")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &e in t.shape() {
            let e = u32::try_from(e)
                .map_err(|_| Error::Checkpoint(format!("{name}: extent too large")))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected \"DAGM\""
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let l = r.take(2, "name length")?;
        let len = u16::from_le_bytes([l[0], l[1]]) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("duplicate tensor name {name:?}")));
        }
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let numel = numel
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: extents overflow")))?;
        let payload = r.take(numel * 4, &format!("payload of {name}"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

/// Network configuration, weights and (optionally) optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
}

const CONFIG: &str = "__config__";

impl Checkpoint {
    pub fn to_tensors(&self) -> Result<Vec<(String, Tensor)>> {
        let json = serde_json::to_vec(&self.config).expect("config serialises");
        let mut out = vec![(
            CONFIG.to_string(),
            Tensor::new(&[json.len()], json.iter().map(|&b| f64::from(b)).collect())?,
        )];
        for (k, t) in &self.params.tensors {
            out.push((format!("param/{k}"), t.clone()));
        }
        for (k, t) in &self.params.buffers {
            out.push((format!("buffer/{k}"), t.clone()));
        }
        if let Some(a) = &self.adam {
            out.push((
                "adam/step".to_string(),
                Tensor::new(&[2], split_step(a.step))?,
            ));
            for (k, t) in &a.m {
                out.push((format!("adam/m/{k}"), t.clone()));
            }
            for (k, t) in &a.v {
                out.push((format!("adam/v/{k}"), t.clone()));
            }
        }
        Ok(out)
    }

    pub fn from_tensors(tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut config = None;
        let mut params = ModelParams::default();
        let mut adam = AdamState::default();
        let mut has_adam = false;
        for (name, t) in tensors {
            if name == CONFIG {
                let bytes: Vec<u8> = t.data().iter().map(|&v| v as u8).collect();
                let cfg: NetworkConfig = serde_json::from_slice(&bytes)
                    .map_err(|e| Error::Checkpoint(format!("invalid embedded config: {e}")))?;
                config = Some(cfg);
            } else if let Some(k) = name.strip_prefix("param/") {
                params.tensors.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix("buffer/") {
                params.buffers.insert(k.to_string(), t);
            } else if name == "adam/step" {
                has_adam = true;
                adam.step = join_step(t.data())?;
            } else if let Some(k) = name.strip_prefix("adam/m/") {
                adam.m.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix("adam/v/") {
                adam.v.insert(k.to_string(), t);
            } else {
                return Err(Error::Checkpoint(format!("unexpected tensor {name:?}")));
            }
        }
        let config = config.ok_or_else(|| Error::Checkpoint(format!("missing {CONFIG} tensor")))?;
        Ok(Checkpoint {
            config,
            params,
            adam: has_adam.then_some(adam),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = encode_tensors(&self.to_tensors()?)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt = Checkpoint::from_tensors(decode_tensors(&bytes)?)?;
        check_compatible(&ckpt.config, &ckpt.params)?;
        Ok(ckpt)
    }
}

// f32 holds integers exactly only up to 2^24, so the counter is split
fn split_step(step: u64) -> Vec<f64> {
    vec![(step >> 24) as f64, (step & 0xFF_FFFF) as f64]
}

fn join_step(v: &[f64]) -> Result<u64> {
    match v {
        [hi, lo] if *hi >= 0.0 && *lo >= 0.0 => Ok(((*hi as u64) << 24) | *lo as u64),
        _ => Err(Error::Checkpoint("malformed adam/step".into())),
    }
}

/// Checks that `params` has exactly the names and shapes `cfg` builds.
pub fn check_compatible(cfg: &NetworkConfig, params: &ModelParams) -> Result<()> {
    let expected = init_params(cfg, 0)?;
    for (kind, want, got) in [
        ("parameter", &expected.tensors, &params.tensors),
        ("buffer", &expected.buffers, &params.buffers),
    ] {
        compare(kind, want, got)?;
    }
    Ok(())
}

fn compare(
    kind: &str,
    want: &BTreeMap<String, Tensor>,
    got: &BTreeMap<String, Tensor>,
) -> Result<()> {
    if let Some(k) = want.keys().find(|k| !got.contains_key(*k)) {
        return Err(Error::Checkpoint(format!("missing {kind} {k}")));
    }
    if let Some(k) = got.keys().find(|k| !want.contains_key(*k)) {
        return Err(Error::Checkpoint(format!(
            "unexpected {kind} {k} for this configuration"
        )));
    }
    for (k, t) in want {
        if got[k].shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{kind} {k} has shape {:?}, configuration needs {:?}",
                got[k].shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}
