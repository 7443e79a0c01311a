use std::io::{Read, Write};
use std::ops::Index;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::optim::{adamw_step, AdamWConfig, Moments, ScheduleState};
use crate::numerics::tensor::Tensor;

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in declaration order.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors, kept in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

/// Graph nodes for every tensor of a [`ParamSet`], indexable by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        self.values[id.0] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Registers every tensor as a graph leaf, trainable or constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .values
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// SHA-256 over the little-endian bytes of every tensor, in order.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Writes raw `f64` arrays in declaration order (shapes are implied by the owner's config).
    pub fn write_raw<W: Write>(&self, w: &mut W) -> Result<()> {
        for v in &self.values {
            for x in v.data() {
                w.write_f64::<LittleEndian>(*x)?;
            }
        }
        Ok(())
    }

    /// Overwrites every tensor with values read in declaration order.
    pub fn read_raw<R: Read>(&mut self, r: &mut R) -> Result<()> {
        for v in self.values.iter_mut() {
            let mut data = vec![0.0; v.numel()];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(|e| Error::Format {
                what: "parameter array",
                detail: e.to_string(),
            })?;
            *v = Tensor::new(v.shape(), data)?;
        }
        Ok(())
    }
}

/// AdamW state for a whole [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: AdamWConfig,
    moments: Vec<Moments>,
}

impl Optimizer {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Self {
        Self {
            config,
            moments: params.values.iter().map(Moments::for_tensor).collect(),
        }
    }

    /// Applies one update; `grads[i]` is `None` for parameters the loss did not reach.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>], state: &ScheduleState) -> Result<f64> {
        adamw_step(
            &params.names,
            &mut params.values,
            grads,
            &mut self.moments,
            state,
            &self.config,
        )
    }
}
