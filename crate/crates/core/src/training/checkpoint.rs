use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::io::{atomic_write, put_string, put_u32, read_file, Reader};
use crate::params::{ParamGroup, ParamStore};

use super::adam::AdamState;
use super::config::{Stage, TrainConfig};

const MAGIC: &[u8; 4] = b"MTCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

/// Serialized ChaCha generator position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub stage: Stage,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParamStore,
    pub optimizer: AdamState,
    pub rng: RngState,
}

fn put_tensor(out: &mut Vec<u8>, t: &Array2<f64>) {
    out.push(DTYPE_F64);
    put_u32(out, 2);
    for d in t.shape() {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in t.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_tensor(r: &mut Reader<'_>, path: &Path, name: &str) -> Result<Array2<f64>> {
    let dtype = r.u8()?;
    if dtype != DTYPE_F64 {
        return Err(Error::format(path, format!("tensor `{name}`: unknown dtype tag {dtype}")));
    }
    let ndim = r.u32()?;
    if ndim != 2 {
        return Err(Error::format(path, format!("tensor `{name}`: expected 2 dimensions, found {ndim}")));
    }
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let count = rows
        .checked_mul(cols)
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| Error::format(path, format!("tensor `{name}`: absurd shape")))?;
    let raw = r.take(count * 8)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("sized above"))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_string(&mut out, &self.config.to_text());
        out.push(self.stage.code());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        put_u32(&mut out, self.params.len() as u32);
        for (name, p) in self.params.iter() {
            put_string(&mut out, name);
            put_string(&mut out, p.group.tag());
            put_tensor(&mut out, &p.value);
        }
        out.extend_from_slice(&self.optimizer.step.to_le_bytes());
        put_u32(&mut out, self.optimizer.m.len() as u32);
        for (name, m) in &self.optimizer.m {
            put_string(&mut out, name);
            put_tensor(&mut out, m);
            put_tensor(&mut out, &self.optimizer.v[name]);
        }
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::InvalidCheckpoint(format!(
                "{}: format version {version}, this build reads version {CHECKPOINT_VERSION}",
                path.display()
            )));
        }
        let config = TrainConfig::parse(&r.string()?).map_err(|e| Error::format(path, e.to_string()))?;
        let code = r.u8()?;
        let stage = Stage::from_code(code).ok_or_else(|| Error::format(path, format!("unknown stage code {code}")))?;
        let epoch = r.u64()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let tag = r.string()?;
            let group = ParamGroup::from_tag(&tag)
                .ok_or_else(|| Error::format(path, format!("tensor `{name}`: unknown group `{tag}`")))?;
            let value = read_tensor(&mut r, path, &name)?;
            params
                .insert(&name, group, value)
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        let step = r.u64()?;
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            m.insert(name.clone(), read_tensor(&mut r, path, &name)?);
            v.insert(name.clone(), read_tensor(&mut r, path, &name)?);
        }
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        r.finish()?;
        Ok(Self {
            config,
            stage,
            epoch,
            params,
            optimizer: AdamState { step, m, v },
            rng: RngState { seed, stream, word_pos },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, path)
    }

    /// Copies this checkpoint's tensors of the given groups into `target`,
    /// which must already hold tensors of the same names and shapes.
    pub fn restore_into(&self, target: &mut ParamStore, groups: impl Fn(ParamGroup) -> bool) -> Result<()> {
        let wanted: Vec<String> = target
            .iter()
            .filter(|(_, p)| groups(p.group))
            .map(|(n, _)| n.to_owned())
            .collect();
        for name in wanted {
            let value = self.params.get(&name).ok_or_else(|| {
                Error::InvalidCheckpoint(format!("checkpoint has no tensor `{name}`"))
            })?;
            target.set(&name, value.clone())?;
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
