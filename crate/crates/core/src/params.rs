//! Trainable-parameter registry: named tensors with gradient accumulators,
//! Adam state, grouped learning rates and a binary snapshot format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{FloatWidth, Scalar};
use crate::tensor::{Shape, Tensor};

/// Index into a [`ParameterStore`]; stable for the lifetime of the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Learning-rate group. Embedding tables train slower than the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Embedding,
    Other,
}

#[derive(Debug, Clone)]
pub struct Param<S: Scalar> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    moment1: Tensor<S>,
    moment2: Tensor<S>,
}

/// Adam hyperparameters with per-group learning rates and L2 weight decay.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr_embeddings: f64,
    pub lr_other: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Clip the global L2 norm of the accumulated gradient; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr_embeddings: 1e-5,
            lr_other: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParameterStore<S: Scalar> {
    params: Vec<Param<S>>,
    by_name: BTreeMap<String, ParamId>,
    step: u64,
}

impl<S: Scalar> Default for ParameterStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn register(&mut self, name: &str, group: ParamGroup, value: Tensor<S>) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "parameter {name:?} registered twice"
        );
        let id = ParamId(self.params.len() as u32);
        let shape = value.shape();
        self.params.push(Param {
            name: name.to_string(),
            group,
            value,
            grad: Tensor::zeros(shape),
            moment1: Tensor::zeros(shape),
            moment2: Tensor::zeros(shape),
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn param(&self, id: ParamId) -> &Param<S> {
        &self.params[id.index()]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.index()].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.index()].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.index()].grad
    }

    /// Parameters in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i as u32), p))
    }

    /// Sum a batch gradient buffer into the store accumulators.
    pub fn accumulate(&mut self, buffer: &GradBuffer<S>) {
        for (i, g) in buffer.grads.iter().enumerate() {
            if let Some(g) = g {
                self.params[i].grad.add_assign(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    /// One Adam update over every parameter from the accumulated gradients.
    ///
    /// L2 decay enters as `grad += weight_decay * value` before the moment
    /// update; bias-corrected moments; gradients are zeroed afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);

        let clip_scale = match cfg.grad_clip {
            Some(max_norm) => {
                let mut sq = 0.0f64;
                for p in &self.params {
                    for g in p.grad.data() {
                        let g = g.to_f64_lossy();
                        sq += g * g;
                    }
                }
                let norm = sq.sqrt();
                if norm > max_norm && norm > 0.0 {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        for p in &mut self.params {
            let lr = match p.group {
                ParamGroup::Embedding => cfg.lr_embeddings,
                ParamGroup::Other => cfg.lr_other,
            };
            let n = p.value.len();
            let value = p.value.data_mut();
            let grad = p.grad.data_mut();
            let m1 = p.moment1.data_mut();
            let m2 = p.moment2.data_mut();
            for i in 0..n {
                let g = grad[i].to_f64_lossy() * clip_scale
                    + cfg.weight_decay * value[i].to_f64_lossy();
                let m = cfg.beta1 * m1[i].to_f64_lossy() + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * m2[i].to_f64_lossy() + (1.0 - cfg.beta2) * g * g;
                m1[i] = S::from_f64_lossy(m);
                m2[i] = S::from_f64_lossy(v);
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                let upd = lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
                value[i] = S::from_f64_lossy(value[i].to_f64_lossy() - upd);
                grad[i] = S::zero();
            }
        }
    }

    /// Copy all parameter values (not moments) from another store with the
    /// same registration layout.
    pub fn load_values_from(&mut self, other: &ParameterStore<S>) {
        assert_eq!(self.params.len(), other.params.len());
        for (dst, src) in self.params.iter_mut().zip(other.params.iter()) {
            assert_eq!(dst.name, src.name);
            dst.value = src.value.clone();
        }
    }

    /// Overwrite one parameter's values by name, checking the shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Snapshot(format!("no parameter named {name:?}")))?;
        let p = &mut self.params[id.index()];
        if p.value.shape() != value.shape() {
            return Err(Error::Snapshot(format!(
                "shape mismatch for {name:?}: store has {}, snapshot has {}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Episode gradient buffers

/// Per-thread (or per-episode) gradient sink, summed into the store before
/// the optimizer step. Slots are allocated lazily.
#[derive(Debug, Clone)]
pub struct GradBuffer<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> GradBuffer<S> {
    pub fn new(store: &ParameterStore<S>) -> Self {
        GradBuffer {
            grads: vec![None; store.len()],
        }
    }

    pub fn slot(&mut self, id: ParamId, shape: Shape) -> &mut Tensor<S> {
        let entry = &mut self.grads[id.index()];
        entry.get_or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.grads[id.index()].as_ref()
    }

    /// Gradient coordinate, zero when the slot was never touched.
    pub fn coord(&self, id: ParamId, idx: usize) -> S {
        self.grads[id.index()]
            .as_ref()
            .map(|t| t.data()[idx])
            .unwrap_or_else(S::zero)
    }

    pub fn merge(&mut self, other: &GradBuffer<S>) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (dst, src) in self.grads.iter_mut().zip(other.grads.iter()) {
            if let Some(src) = src {
                match dst {
                    Some(d) => d.add_assign(src),
                    None => *dst = Some(src.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, c: S) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(c);
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|t| t.data().iter().all(|v| *v == S::zero()))
    }
}

// ---------------------------------------------------------------------------
// Snapshot format
//
// Little-endian layout:
//   magic  b"KGPSNAP1"
//   width  u8 (4 or 8)
//   count  u32
//   per parameter, sorted by name:
//     name_len u16, name bytes, group u8, ndim u8, dims u64 each, payload

const SNAPSHOT_MAGIC: &[u8; 8] = b"KGPSNAP1";

impl<S: Scalar> ParameterStore<S> {
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.push(S::WIDTH.bytes() as u8);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for id in self.by_name.values() {
            let p = &self.params[id.index()];
            let name = p.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(match p.group {
                ParamGroup::Embedding => 0,
                ParamGroup::Other => 1,
            });
            let dims = p.value.shape().dims();
            out.push(dims.len() as u8);
            for d in dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                v.write_le(&mut out);
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Load a snapshot into a fresh store. Moments start at zero.
    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut store = ParameterStore::new();
        let mut cur = Cursor::new(&bytes);
        let magic = cur.take(8)?;
        if magic != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let width = cur.take(1)?[0] as usize;
        if width != S::WIDTH.bytes() {
            return Err(Error::Snapshot(format!(
                "snapshot stores {width}-byte floats but a {}-byte store was requested",
                S::WIDTH.bytes()
            )));
        }
        let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        for _ in 0..count {
            let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Snapshot("parameter name is not utf-8".into()))?;
            let group = match cur.take(1)?[0] {
                0 => ParamGroup::Embedding,
                1 => ParamGroup::Other,
                g => return Err(Error::Snapshot(format!("unknown group tag {g}"))),
            };
            let ndim = cur.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize);
            }
            let shape = match dims.as_slice() {
                [n] => Shape::Vector(*n),
                [r, c] => Shape::Matrix(*r, *c),
                _ => return Err(Error::Snapshot(format!("unsupported rank {ndim}"))),
            };
            let n = shape.len();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(S::read_le(cur.take(width)?));
            }
            store.register(&name, group, Tensor::from_vec(shape, data));
        }
        Ok(store)
    }
}

/// Peek at the float width of a snapshot without loading it.
pub fn snapshot_width(path: &Path) -> Result<FloatWidth> {
    let mut header = [0u8; 9];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut header))
        .map_err(|e| Error::io(path, e))?;
    if &header[..8] != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    match header[8] {
        4 => Ok(FloatWidth::F32),
        8 => Ok(FloatWidth::F64),
        w => Err(Error::Snapshot(format!("unknown float width {w}"))),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Snapshot("truncated snapshot".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
