use super::Tensor;
use crate::error::{Error, Result};
use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;

/// Maps the gradient of a node's output to gradients of its parents, in parent order.
/// `None` marks a parent that receives no gradient from this node.
pub(crate) type BackwardFn = Box<dyn FnOnce(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Wengert list of recorded operations.
///
/// Nodes are appended in execution order, so every parent index is smaller
/// than its child's. A tape is single-threaded and owned by one training step;
/// [`Tape::backward`] consumes the recorded closures.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
    grad_enabled: bool,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            grad_enabled: true,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// A tape that records values only; no backward closures are kept.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Enable or disable the NaN/Inf check on every recorded value.
    /// On by default in debug builds.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, self.grad_enabled)
    }

    /// Register a constant input (no gradient).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Record an operation. The backward closure is only built when some
    /// parent participates in differentiation.
    pub(crate) fn record(
        &self,
        op: &'static str,
        value: Tensor,
        parents: &[usize],
        backward: impl FnOnce() -> BackwardFn,
    ) -> Result<Var<'_>> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(format!("output of `{op}`")));
        }
        let requires_grad =
            self.grad_enabled && parents.iter().any(|&p| self.requires_grad(p));
        let backward = if requires_grad { Some(backward()) } else { None };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value: Rc::new(value),
            parents: parents.to_vec(),
            backward,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse pass from a scalar loss. Returns gradients for every trainable
    /// leaf (zeros for leaves the loss does not depend on).
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::InvalidArgument("loss belongs to another tape".into()));
        }
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let loss_value = self.value(loss.id);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.consumed.set(true);

        let mut nodes = self.nodes.borrow_mut();
        let n = nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.id] = Some(Tensor::ones(loss_value.shape()));

        for id in (0..=loss.id).rev() {
            let node = &mut nodes[id];
            let Some(backward) = node.backward.take() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_grads = backward(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "op {}", node.op);
            let parents = node.parents.clone();
            for (p, pg) in parents.into_iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                if self.check_finite && !pg.all_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient flowing into `{}` from `{}`",
                        nodes[p].op, nodes[id].op
                    )));
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let mut leaf_grads = Vec::with_capacity(n);
        for (id, node) in nodes.iter().enumerate() {
            let is_trainable_leaf = node.parents.is_empty() && node.requires_grad;
            leaf_grads.push(if is_trainable_leaf {
                Some(grads[id].take().unwrap_or_else(|| Tensor::zeros(node.value.shape())))
            } else {
                None
            });
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

/// Gradients of trainable leaves, indexed by the leaf's [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        Ref::map(self.tape.nodes.borrow(), |n| n[self.id].value.shape()).to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}
