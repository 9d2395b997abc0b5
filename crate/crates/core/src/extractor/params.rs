//! Flat parameter storage with named tensor views.
//!
//! Every trainable tensor lives in one contiguous `Vec<f64>`, which keeps the
//! optimiser and gradient accumulation trivial and gives the model file a
//! stable tensor order.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, Default)]
pub struct LayoutBuilder {
    tensors: Vec<TensorInfo>,
    len: usize,
}

impl LayoutBuilder {
    /// Register a tensor and return its offset into the flat buffer.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len;
        let info = TensorInfo {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.len += info.len();
        self.tensors.push(info);
        offset
    }

    pub fn finish(self) -> Vec<TensorInfo> {
        self.tensors
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    tensors: Vec<TensorInfo>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn zeros(tensors: Vec<TensorInfo>) -> Self {
        let len = tensors.iter().map(TensorInfo::len).sum();
        Self {
            tensors,
            data: vec![0.0; len],
        }
    }

    pub fn uniform(tensors: Vec<TensorInfo>, scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(tensors);
        for v in &mut p.data {
            *v = rng.gen_range(-scale..scale);
        }
        p
    }

    pub fn from_parts(tensors: Vec<TensorInfo>, data: Vec<f64>) -> Option<Self> {
        let len: usize = tensors.iter().map(TensorInfo::len).sum();
        (len == data.len()).then_some(Self { tensors, data })
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn info(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.info(name).map(|t| &self.data[t.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
