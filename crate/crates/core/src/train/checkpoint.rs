//! Versioned binary checkpoint container.
//!
//! ```text
//! magic        8 bytes  "BPDECKPT"
//! version      u32      1
//! config       u32 length + UTF-8 canonical config text
//! step         u64
//! rng states   u32 count, then (u32 name length, name, 56-byte state)
//! data stream  u8 present flag, then epoch u64, cursor u64, two 56-byte states
//! adam         u8 present flag, then update count u64
//! arrays       u32 count, then per array:
//!              u32 name length, name, u8 dtype tag (0 = f32, 1 = f64),
//!              u32 rank, rank x u64 extents, row-major little-endian payload
//! ```
//!
//! Integers are little-endian. Adam moments are stored as arrays named
//! `adam.m.<param>` and `adam.v.<param>`.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use super::optim::AdamState;
use crate::config::Config;
use crate::data::StreamState;
use crate::error::{Error, Result};
use crate::rng::{RngState, RNG_STATE_BYTES};
use crate::tensor::{DType, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"BPDECKPT";
pub const FORMAT_VERSION: u32 = 1;

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub step: u64,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
    pub rngs: BTreeMap<String, RngState>,
    pub stream: Option<StreamState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_array(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_str(out, name);
    out.push(t.dtype().tag());
    put_u32(out, t.rank() as u32);
    for &e in t.shape() {
        put_u64(out, e as u64);
    }
    match t.dtype() {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|&x| out.extend_from_slice(&(x as f32).to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|&x| out.extend_from_slice(&x.to_le_bytes())),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("name is not UTF-8"))
    }

    fn rng(&mut self) -> Result<RngState> {
        RngState::from_bytes(self.take(RNG_STATE_BYTES)?)
    }

    fn array(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let dtype = DType::from_tag(self.u8()?).ok_or_else(|| malformed(format!("bad dtype tag for {name}")))?;
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| malformed(format!("extent overflow for {name}")))?;
        let data: Vec<f64> = match dtype {
            DType::F32 => self
                .take(n.checked_mul(4).ok_or_else(|| malformed("payload overflow"))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => self
                .take(n.checked_mul(8).ok_or_else(|| malformed("payload overflow"))?)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        Ok((name, Tensor::new(shape, data)?.to_dtype(dtype)))
    }
}

impl Checkpoint {
    /// Freshly initialized parameters with no optimizer or run state.
    pub fn initial(config: Config, scope: crate::transformer::ParamScope, seed: u64) -> Result<Self> {
        let params = super::init::init_params(&config.model, scope, seed)?;
        Ok(Self {
            config,
            step: 0,
            params,
            adam: None,
            rngs: BTreeMap::new(),
            stream: None,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_str(&mut out, &self.config.to_text());
        put_u64(&mut out, self.step);
        put_u32(&mut out, self.rngs.len() as u32);
        for (name, st) in &self.rngs {
            put_str(&mut out, name);
            out.extend_from_slice(&st.to_bytes());
        }
        match &self.stream {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                put_u64(&mut out, s.epoch);
                put_u64(&mut out, s.cursor);
                out.extend_from_slice(&s.data_at_epoch_start.to_bytes());
                out.extend_from_slice(&s.masking.to_bytes());
            }
        }
        let mut arrays: Vec<(String, &Tensor)> =
            self.params.iter().map(|(n, t)| (n.clone(), t)).collect();
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                put_u64(&mut out, a.step);
                arrays.extend(a.m.iter().map(|(n, t)| (format!("{ADAM_M}{n}"), t)));
                arrays.extend(a.v.iter().map(|(n, t)| (format!("{ADAM_V}{n}"), t)));
            }
        }
        put_u32(&mut out, arrays.len() as u32);
        for (name, t) in arrays {
            put_array(&mut out, &name, t);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(malformed("bad magic; not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(malformed(format!("unsupported format version {version}")));
        }
        let config = Config::parse(&r.string()?)?;
        let step = r.u64()?;
        let mut rngs = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            rngs.insert(name, r.rng()?);
        }
        let stream = match r.u8()? {
            0 => None,
            1 => Some(StreamState {
                epoch: r.u64()?,
                cursor: r.u64()?,
                data_at_epoch_start: r.rng()?,
                masking: r.rng()?,
            }),
            f => return Err(malformed(format!("bad stream flag {f}"))),
        };
        let adam_step = match r.u8()? {
            0 => None,
            1 => Some(r.u64()?),
            f => return Err(malformed(format!("bad adam flag {f}"))),
        };
        let mut params = ParamStore::new();
        let mut adam = adam_step.map(|step| AdamState {
            step,
            ..Default::default()
        });
        for _ in 0..r.u32()? {
            let (name, t) = r.array()?;
            if let Some(p) = name.strip_prefix(ADAM_M) {
                let a = adam.as_mut().ok_or_else(|| malformed(format!("{name} without adam state")))?;
                a.m.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix(ADAM_V) {
                let a = adam.as_mut().ok_or_else(|| malformed(format!("{name} without adam state")))?;
                a.v.insert(p.to_string(), t);
            } else {
                params.insert(name, t)?;
            }
        }
        if r.pos != buf.len() {
            return Err(malformed(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let ckpt = Self {
            config,
            step,
            params,
            adam,
            rngs,
            stream,
        };
        ckpt.check()?;
        Ok(ckpt)
    }

    /// Structural consistency: moments shape-match their parameters.
    pub fn check(&self) -> Result<()> {
        if let Some(a) = &self.adam {
            for (name, p) in self.params.iter() {
                for (kind, map) in [("m", &a.m), ("v", &a.v)] {
                    let t = map
                        .get(name)
                        .ok_or_else(|| malformed(format!("missing adam.{kind} for {name}")))?;
                    if t.shape() != p.shape() {
                        return Err(malformed(format!("adam.{kind} shape mismatch for {name}")));
                    }
                }
            }
            if a.m.len() != self.params.len() || a.v.len() != self.params.len() {
                return Err(malformed("adam moments for unknown parameters"));
            }
        }
        Ok(())
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
