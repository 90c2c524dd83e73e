//! Reverse-mode differentiation on a recorded operation tape.
//!
//! All network computation runs through a [`Graph`]: operations execute
//! eagerly, and every differentiable operation appends a record holding the
//! adjoint closure needed to propagate gradients backwards. Records are
//! appended in execution order, so the tape is topologically sorted by
//! construction and a single reverse sweep populates every gradient.

use std::rc::Rc;

use crate::error::{Error, Result};

/// Handle to a tensor stored in a [`Graph`].
pub type TensorId = usize;

/// A plain shape + payload pair, detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorData {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} implies {} elements, payload has {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(TensorData { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        TensorData {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn scalar(v: f64) -> Self {
        TensorData {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Total element count implied by a shape. The empty shape is a scalar.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

struct Entry {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    requires_grad: bool,
    is_leaf: bool,
    grad: Option<Vec<f64>>,
}

/// Adjoint callback: receives the output gradient and hands per-input
/// gradient contributions to the sink.
type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink)>;

struct Record {
    out: TensorId,
    backward: BackwardFn,
}

/// Accumulates gradient contributions during one reverse sweep. Sweep
/// buffers are transient; only leaf gradients persist on the graph.
pub struct GradSink<'a> {
    entries: &'a [Entry],
    sweep: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    /// True when the target participates in differentiation; callers may
    /// skip computing a contribution entirely when this is false.
    pub fn wants(&self, id: TensorId) -> bool {
        self.entries[id].requires_grad
    }

    fn buf(&mut self, id: TensorId) -> &mut [f64] {
        let n = self.entries[id].data.len();
        self.sweep[id].get_or_insert_with(|| vec![0.0; n])
    }

    /// Elementwise `grad[id] += contribution`.
    pub fn add(&mut self, id: TensorId, contribution: &[f64]) {
        if !self.wants(id) {
            return;
        }
        let buf = self.buf(id);
        debug_assert_eq!(buf.len(), contribution.len());
        for (g, c) in buf.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Runs `f` over the target's gradient buffer for scatter-style adjoints.
    pub fn add_with(&mut self, id: TensorId, f: impl FnOnce(&mut [f64])) {
        if !self.wants(id) {
            return;
        }
        f(self.buf(id));
    }
}

/// Execution tape: tensor storage plus the ordered record of operations.
#[derive(Default)]
pub struct Graph {
    entries: Vec<Entry>,
    records: Vec<Record>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Number of tensors currently stored.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of recorded differentiable operations.
    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    /// Insert an input tensor.
    pub fn leaf(&mut self, t: TensorData, requires_grad: bool) -> TensorId {
        self.push(t.shape, Rc::new(t.data), requires_grad, true)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, t: TensorData) -> TensorId {
        self.leaf(t, false)
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        data: Rc<Vec<f64>>,
        requires_grad: bool,
        is_leaf: bool,
    ) -> TensorId {
        // Values are deliberately not screened for finiteness here: a
        // diverging optimisation is a runtime condition the training loop
        // reports, not a programming error.
        debug_assert_eq!(numel(&shape), data.len());
        let id = self.entries.len();
        self.entries.push(Entry {
            shape,
            data,
            requires_grad,
            is_leaf,
            grad: None,
        });
        id
    }

    /// Record the output of an operation together with its adjoint. The
    /// record is dropped when no input requires gradients.
    pub(crate) fn push_op(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs_require_grad: bool,
        backward: impl Fn(&[f64], &mut GradSink) + 'static,
    ) -> TensorId {
        self.push_op_rc(shape, Rc::new(data), inputs_require_grad, backward)
    }

    /// Like [`Graph::push_op`] but shares an existing payload (views such as
    /// reshape reuse storage instead of copying).
    pub(crate) fn push_op_rc(
        &mut self,
        shape: Vec<usize>,
        data: Rc<Vec<f64>>,
        inputs_require_grad: bool,
        backward: impl Fn(&[f64], &mut GradSink) + 'static,
    ) -> TensorId {
        let id = self.push(shape, data, inputs_require_grad, false);
        if inputs_require_grad {
            self.records.push(Record {
                out: id,
                backward: Box::new(backward),
            });
        }
        id
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.entries[id].shape
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.entries[id].data
    }

    pub(crate) fn data_rc(&self, id: TensorId) -> Rc<Vec<f64>> {
        Rc::clone(&self.entries[id].data)
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.entries[id].requires_grad
    }

    /// Gradient accumulated on a leaf by [`Graph::backward`]. Intermediate
    /// tensors never retain gradients.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.entries[id].grad.as_deref()
    }

    /// Copy a tensor out of the graph.
    pub fn detach(&self, id: TensorId) -> TensorData {
        TensorData {
            shape: self.entries[id].shape.clone(),
            data: self.entries[id].data.as_ref().clone(),
        }
    }

    /// Clear all gradient buffers.
    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`] resets them.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.entries[loss].data.len() != 1 {
            return Err(Error::usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.entries[loss].shape
            )));
        }
        let mut sweep: Vec<Option<Vec<f64>>> = self.entries.iter().map(|_| None).collect();
        sweep[loss] = Some(vec![1.0]);
        {
            let mut sink = GradSink {
                entries: &self.entries,
                sweep: &mut sweep,
            };
            for rec in self.records.iter().rev() {
                // Tape order guarantees every consumer of this output has
                // already deposited its contribution, so the buffer can be
                // taken rather than cloned.
                let out_grad = match sink.sweep[rec.out].take() {
                    Some(g) => g,
                    None => continue, // not reachable from the loss
                };
                (rec.backward)(&out_grad, &mut sink);
            }
        }
        for (entry, s) in self.entries.iter_mut().zip(sweep) {
            if !(entry.is_leaf && entry.requires_grad) {
                continue;
            }
            if let Some(sv) = s {
                let g = entry.grad.get_or_insert_with(|| vec![0.0; sv.len()]);
                for (a, b) in g.iter_mut().zip(&sv) {
                    *a += b;
                }
            }
        }
        Ok(())
    }
}
