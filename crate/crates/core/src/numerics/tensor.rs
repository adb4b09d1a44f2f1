//! Dense row-major tensors with a recorded computation graph.
//!
//! A `Tensor` is a cheap shared handle. Ops allocate fresh outputs and, when
//! gradients are enabled, attach a backward closure plus parent links to the
//! output. `backward` walks that graph once in reverse topological order and
//! accumulates adjoints into each tensor's `grad` buffer. Graph edges are
//! consumed by the walk, so a finished tape frees itself.

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Runs `f` with gradient recording disabled. Ops inside produce plain
/// tensors with no graph attached, regardless of `requires_grad` flags.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = NO_GRAD.with(|c| c.replace(true));
    let out = f();
    NO_GRAD.with(|c| c.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    NO_GRAD.with(|c| !c.get())
}

pub(crate) struct Node {
    pub parents: Vec<Tensor>,
    /// Receives the adjoint of the output and accumulates into parents.
    pub backward: Box<dyn Fn(&[f64])>,
}

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Vec<f64>>,
    requires_grad: bool,
    node: RefCell<Option<Node>>,
}

/// Shared handle to a dense `f64` tensor. Clones alias the same storage.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let n = data.len();
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(if requires_grad { vec![0.0; n] } else { Vec::new() }),
                requires_grad,
                node: RefCell::new(None),
            }),
        }
    }

    /// Checked construction: shape must match the data length and every entry
    /// must be finite.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} expects {} values, got {}",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite tensor entry {bad}"
            )));
        }
        Ok(Tensor::build(shape.to_vec(), data, false))
    }

    /// Trainable tensor: participates in gradient accumulation.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, data)?;
        Ok(Tensor::build(
            t.inner.shape.clone(),
            t.inner.data.borrow().clone(),
            true,
        ))
    }

    /// Unchecked internal constructor for op outputs.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, node: Option<Node>) -> Tensor {
        let requires_grad = node.is_some();
        let t = Tensor::build(shape, data, requires_grad);
        *t.inner.node.borrow_mut() = node;
        t
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), vec![0.0; shape.iter().product()], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::build(shape.to_vec(), vec![value; shape.iter().product()], false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(vec![1], vec![value], false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.borrow().len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data.borrow()[0]
    }

    /// Accumulated gradient; zeros if backward has not touched this tensor.
    pub fn grad(&self) -> Vec<f64> {
        let g = self.inner.grad.borrow();
        if g.is_empty() {
            vec![0.0; self.numel()]
        } else {
            g.clone()
        }
    }

    pub fn zero_grad(&self) {
        for g in self.inner.grad.borrow_mut().iter_mut() {
            *g = 0.0;
        }
    }

    /// In-place data overwrite. Only for parameter updates and perturbation;
    /// any recorded graph referencing this tensor must already be consumed.
    pub fn set_data(&self, data: &[f64]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), data.len(), "set_data length mismatch");
        d.copy_from_slice(data);
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut g = self.inner.grad.borrow_mut();
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub(crate) fn has_node(&self) -> bool {
        self.inner.node.borrow().is_some()
    }

    /// Detached copy of this tensor's values as a fresh constant.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.inner.shape.clone(), self.to_vec(), false)
    }
}

/// Reverse pass over the graph reachable from one scalar output.
///
/// Holds the recorded operations in topological order; `run` visits each
/// node exactly once, newest first, consuming graph edges as it goes.
pub struct GradTape {
    order: Vec<Tensor>,
}

impl GradTape {
    /// Collects the graph below `root` in topological order (parents before
    /// children).
    pub fn trace(root: &Tensor) -> GradTape {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // Iterative DFS with an explicit done-marker to get postorder.
        let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.inner.node.borrow().as_ref() {
                for p in &node.parents {
                    if !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        GradTape { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn run(self, root: &Tensor) {
        {
            let mut g = root.inner.grad.borrow_mut();
            if g.is_empty() {
                *g = vec![1.0];
            } else {
                g[0] = 1.0;
            }
        }
        for t in self.order.iter().rev() {
            let node = t.inner.node.borrow_mut().take();
            if let Some(node) = node {
                let g = if t.inner.grad.borrow().is_empty() {
                    vec![0.0; t.numel()]
                } else {
                    t.inner.grad.borrow().clone()
                };
                (node.backward)(&g);
            }
        }
    }
}

/// Populates gradients of every tensor reachable from `loss` and clears the
/// recorded graph. `loss` must be a single-element tensor.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::contract(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    GradTape::trace(loss).run(loss);
    Ok(())
}
