use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use pac_algo::{Learner, LearnerConfig};
use pac_autodiff::{Adam, Tensor};
use pac_envs::EnvSpec;
use pac_nets::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"PACCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: magic {0:?}")]
    BadMagic(Vec<u8>),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint lacks tensor `{0}`")]
    Missing(String),
    #[error("checkpoint tensor `{0}` does not belong to the model")]
    Unexpected(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

pub fn encode(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(tensors.len()).map_err(|_| CheckpointError::Malformed("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len =
            u16::try_from(name.len()).map_err(|_| CheckpointError::Malformed(format!("name `{name}` too long")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank =
            u8::try_from(t.shape().len()).map_err(|_| CheckpointError::Malformed(format!("rank of `{name}`")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| CheckpointError::Malformed(format!("extent of `{name}`")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a whole checkpoint before returning anything.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c
        .take(8, "magic")
        .map_err(|_| CheckpointError::BadMagic(bytes.to_vec()))?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic.to_vec()));
    }
    let count = c.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let len = u16::from_le_bytes(c.take(2, &format!("name length of tensor {i}"))?.try_into().unwrap());
        let name = std::str::from_utf8(c.take(len as usize, &format!("name of tensor {i}"))?)
            .map_err(|_| CheckpointError::Malformed(format!("name of tensor {i} is not UTF-8")))?
            .to_string();
        let rank = c.take(1, &format!("rank of `{name}`"))?[0] as usize;
        let shape = (0..rank)
            .map(|_| c.u32(&format!("shape of `{name}`")).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CheckpointError::Malformed(format!("extent of `{name}` overflows")))?;
        let raw = c.take(numel, &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        out.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}

/// Writes through a temporary sibling so readers never see a partial file.
pub fn save_tensors(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode(tensors)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode(&fs::read(path)?)
}

/// Counters are stored as four exact 16-bit limbs.
fn counter(v: u64) -> Tensor {
    let limbs: Vec<f32> = (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f32).collect();
    Tensor::new(vec![4], limbs).expect("limb shape")
}

fn read_counter(t: &Tensor, name: &str) -> Result<u64> {
    let d = t.data();
    if t.shape() != [4] || d.iter().any(|&x| !(0.0..65536.0).contains(&x) || x.fract() != 0.0) {
        return Err(CheckpointError::Malformed(format!("counter `{name}`")));
    }
    Ok(d.iter().enumerate().map(|(i, &x)| (x as u64) << (16 * i)).sum())
}

fn store_entries(prefix: &str, store: &ParamStore, out: &mut Vec<(String, Tensor)>) {
    for (n, t) in store.names().iter().zip(store.tensors()) {
        out.push((format!("{prefix}/{n}"), t.clone()));
    }
}

fn adam_entries(prefix: &str, adam: &Adam, names: &[String], out: &mut Vec<(String, Tensor)>) {
    for (n, m) in names.iter().zip(adam.first_moments()) {
        out.push((format!("{prefix}/m/{n}"), m.clone()));
    }
    for (n, v) in names.iter().zip(adam.second_moments()) {
        out.push((format!("{prefix}/v/{n}"), v.clone()));
    }
    out.push((format!("meta/{prefix}_step"), counter(adam.step_count())));
}

/// Online and target parameters, temperature, both optimiser states and
/// the update counter.
pub fn learner_tensors(learner: &Learner) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    store_entries("online", &learner.params, &mut out);
    store_entries("target", &learner.target, &mut out);
    store_entries("temperature", &learner.log_alpha, &mut out);
    adam_entries("adam", &learner.adam, learner.params.names(), &mut out);
    adam_entries("alpha_adam", &learner.alpha_adam, learner.log_alpha.names(), &mut out);
    out.push(("meta/updates".into(), counter(learner.updates)));
    out
}

pub fn save_learner(path: &Path, learner: &Learner) -> Result<()> {
    save_tensors(path, &learner_tensors(learner))
}

struct Table(HashMap<String, Tensor>);

impl Table {
    fn take(&mut self, name: &str, like: &Tensor) -> Result<Tensor> {
        let t = self
            .0
            .remove(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
        if t.shape() != like.shape() {
            return Err(CheckpointError::Shape {
                name: name.to_string(),
                expected: like.shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    fn store(&mut self, prefix: &str, layout: &ParamStore) -> Result<ParamStore> {
        let mut s = layout.clone();
        for (i, n) in layout.names().iter().enumerate() {
            s.tensors_mut()[i] = self.take(&format!("{prefix}/{n}"), &layout.tensors()[i])?;
        }
        Ok(s)
    }

    fn adam(&mut self, prefix: &str, layout: &ParamStore, template: &Adam) -> Result<Adam> {
        let mut moments = |kind: &str| {
            layout
                .names()
                .iter()
                .zip(layout.tensors())
                .map(|(n, t)| self.take(&format!("{prefix}/{kind}/{n}"), t))
                .collect::<Result<Vec<_>>>()
        };
        let m = moments("m")?;
        let v = moments("v")?;
        let step_name = format!("meta/{prefix}_step");
        let step = self.counter(&step_name)?;
        Adam::from_parts(template.config, step, m, v).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }

    fn counter(&mut self, name: &str) -> Result<u64> {
        let t = self
            .0
            .remove(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
        read_counter(&t, name)
    }
}

/// Rebuilds a learner for `cfg` on `spec` from checkpoint tensors. Every
/// tensor must match the model layout by name and shape.
pub fn restore_learner(cfg: LearnerConfig, spec: &EnvSpec, tensors: Vec<(String, Tensor)>) -> Result<Learner> {
    let layout = Learner::new(cfg, spec, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let mut table = Table(HashMap::with_capacity(tensors.len()));
    for (n, t) in tensors {
        if table.0.insert(n.clone(), t).is_some() {
            return Err(CheckpointError::Malformed(format!("duplicate tensor `{n}`")));
        }
    }
    let params = table.store("online", &layout.params)?;
    let target = table.store("target", &layout.params)?;
    let log_alpha = table.store("temperature", &layout.log_alpha)?;
    let adam = table.adam("adam", &layout.params, &layout.adam)?;
    let alpha_adam = table.adam("alpha_adam", &layout.log_alpha, &layout.alpha_adam)?;
    let updates = table.counter("meta/updates")?;
    if let Some(extra) = table.0.keys().min() {
        return Err(CheckpointError::Unexpected(extra.clone()));
    }
    Ok(Learner::from_parts(
        layout.model,
        params,
        target,
        log_alpha,
        Some(adam),
        Some(alpha_adam),
        updates,
    ))
}

pub fn load_learner(path: &Path, cfg: LearnerConfig, spec: &EnvSpec) -> Result<Learner> {
    restore_learner(cfg, spec, load_tensors(path)?)
}
