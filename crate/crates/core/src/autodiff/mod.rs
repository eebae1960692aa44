//! Tape-based reverse-mode automatic differentiation over `ndarray`.
//!
//! The tape is rebuilt every step (define-by-run). Nodes are stored in
//! creation order, which is already a topological order, so the backward
//! pass is a single reverse sweep. The element type is generic over f32
//! and f64: training runs in f32, gradient checking in f64 where centered
//! finite differences are actually meaningful.
//!
//! Reductions, normalization statistics, and softmax run their inner
//! accumulation in f64 regardless of the element type.

mod conv;
mod gradcheck;
mod ops;

pub use conv::PadMode;
pub use gradcheck::{grad_check, GradCheckReport};

use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape { op: &'static str, expected: String, got: Vec<usize> },
    #[error("{op}: index {index} out of bounds for length {len}")]
    IndexOutOfBounds { op: &'static str, index: usize, len: usize },
    #[error("backward target must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
}

/// Element scalar for tapes: f32 or f64.
pub trait Elem:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::fmt::Debug
    + std::fmt::Display
    + PartialOrd
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Elem for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Elem for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// A named tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter<E: Elem> {
    pub data: ArrayD<E>,
    pub grad: ArrayD<E>,
    pub trainable: bool,
}

/// Ordered collection of named parameters. Iteration order is insertion
/// order, which keeps optimizer updates and checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<E: Elem> {
    map: IndexMap<String, Parameter<E>>,
}

impl<E: Elem> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet { map: IndexMap::new() }
    }

    pub fn insert(&mut self, name: &str, data: ArrayD<E>) {
        let grad = ArrayD::zeros(data.raw_dim());
        self.map.insert(name.to_string(), Parameter { data, grad, trainable: true });
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<E>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<E>> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<E>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<E>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for p in self.map.values_mut() {
            p.grad.fill(E::zero());
        }
    }

    /// Total number of scalar elements across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.map.values().map(|p| p.data.len()).sum()
    }
}

pub(crate) enum Op<E: Elem> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, E),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, b: Var, pad: PadMode },
    AvgPool2(Var),
    UpsampleBilinear { x: Var, factor: usize },
    Relu(Var),
    Silu(Var),
    SigmoidTau { x: Var, tau: f64 },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, mean: ArrayD<f64>, inv_std: ArrayD<f64> },
    TemporalAttention { q: Var, k: Var, v: Var, frames: usize, attn: ArrayD<f64> },
    Mean(Var),
    Sum(Var),
    SumAxis(Var, usize),
    Reshape(Var),
    ConcatChannels { parts: Vec<Var> },
    StopGradient(#[allow(dead_code)] Var),
    GatherRows { x: Var, idx: Vec<usize> },
    GatherPixels { x: Var, frame: usize, pixels: Vec<(usize, usize)> },
    L2NormalizeRows(Var),
    CosineRows(Var, Var),
}

/// Reverse-mode tape. Build ops through the methods; call [`Graph::backward`]
/// on a scalar node; read leaf gradients back via [`Graph::write_grads`].
pub struct Graph<E: Elem> {
    pub(crate) datas: Vec<ArrayD<E>>,
    pub(crate) grads: Vec<Option<ArrayD<E>>>,
    pub(crate) ops: Vec<Op<E>>,
    pub(crate) needs: Vec<bool>,
    bindings: IndexMap<String, Var>,
}

impl<E: Elem> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Graph<E> {
    pub fn new() -> Self {
        Graph {
            datas: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            needs: Vec::new(),
            bindings: IndexMap::new(),
        }
    }

    pub(crate) fn push(&mut self, data: ArrayD<E>, op: Op<E>, needs: bool) -> Var {
        // Kernels index node data as flat slices; keep every node standard
        // layout (ops always produce it, leaves might not).
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().to_owned()
        };
        self.datas.push(data);
        self.grads.push(None);
        self.ops.push(op);
        self.needs.push(needs);
        Var(self.datas.len() - 1)
    }

    /// Constant input: no gradient is tracked through it.
    pub fn leaf(&mut self, data: ArrayD<E>) -> Var {
        self.push(data, Op::Leaf, false)
    }

    /// Differentiable input.
    pub fn leaf_grad(&mut self, data: ArrayD<E>) -> Var {
        self.push(data, Op::Leaf, true)
    }

    /// 0-d constant.
    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), E::from_f64(v)))
    }

    /// Bind a named parameter as a leaf. Binding the same name twice
    /// returns the same node, so gradient contributions accumulate.
    pub fn param(&mut self, ps: &ParamSet<E>, name: &str) -> Result<Var, AutodiffError> {
        if let Some(v) = self.bindings.get(name) {
            return Ok(*v);
        }
        let p = ps.get(name).ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        let v = if p.trainable {
            self.leaf_grad(p.data.clone())
        } else {
            self.leaf(p.data.clone())
        };
        self.bindings.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn data(&self, v: Var) -> &ArrayD<E> {
        &self.datas[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&ArrayD<E>> {
        self.grads[v.0].as_ref()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.datas[v.0].shape()
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    /// Value of a 0-d (or single-element) node as f64.
    pub fn scalar_value(&self, v: Var) -> Result<f64, AutodiffError> {
        let d = &self.datas[v.0];
        if d.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(d.shape().to_vec()));
        }
        Ok(d.iter().next().unwrap().as_f64())
    }

    /// Reverse sweep from a scalar node. Gradients land on every node that
    /// needs them; read parameter gradients with [`Graph::write_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let l = self.scalar_value(loss)?;
        if !l.is_finite() {
            return Err(AutodiffError::NonFiniteLoss(l));
        }
        self.grads[loss.0] = Some(ArrayD::from_elem(self.datas[loss.0].raw_dim(), E::one()));
        for id in (0..=loss.0).rev() {
            if self.grads[id].is_none() || !self.needs[id] {
                continue;
            }
            ops::backward_node(self, id)?;
        }
        Ok(())
    }

    /// Accumulate computed gradients into the parameter set. Returns the
    /// names that received a gradient this sweep, in binding order.
    pub fn write_grads(&self, ps: &mut ParamSet<E>) -> Vec<String> {
        let mut touched = Vec::new();
        for (name, var) in &self.bindings {
            if let Some(g) = &self.grads[var.0] {
                if let Some(p) = ps.get_mut(name) {
                    p.grad += g;
                    touched.push(name.clone());
                }
            }
        }
        touched
    }

    pub(crate) fn accum_grad(&mut self, v: Var, delta: ArrayD<E>) {
        if !self.needs[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }
}
