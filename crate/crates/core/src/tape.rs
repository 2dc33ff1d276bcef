//! Reverse-mode gradient tape.
//!
//! Every differentiable operation appends one node holding its output value,
//! the indices of its inputs and a closure mapping the output gradient to
//! one gradient per input. [`Tape::backward`] replays the nodes in reverse
//! order. Nodes also carry the op name and the scope that was active when
//! they were recorded, so callers can count which blocks actually executed.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

pub(crate) type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Tensor> + Send + Sync>;

struct Node {
    value: Tensor,
    op: &'static str,
    scope: String,
    inputs: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Factor applied to the input gradients of a sabotaged op.
const SABOTAGE_FACTOR: f64 = 1.5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    scopes: Vec<String>,
    scope: String,
    params: Vec<(usize, ParamId)>,
    buffer_updates: Vec<(String, Tensor)>,
    sabotage: Option<String>,
    bn_momentum: Option<f64>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose backward rule for `op` is deliberately wrong. Only used to
    /// prove that the gradient checker notices broken rules.
    pub fn with_sabotage(op: impl Into<String>) -> Self {
        Tape {
            sabotage: Some(op.into()),
            ..Self::default()
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that gradients flow into.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, "leaf", Vec::new(), None, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, "constant", Vec::new(), None, false)
    }

    /// Load a parameter's current value as a leaf bound to `id`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push_node(store.get(id).value.clone(), "param", Vec::new(), None, true);
        self.params.push((v.0, id));
        v
    }

    pub fn push_scope(&mut self, name: &str) {
        self.scopes.push(name.to_string());
        self.scope = self.scopes.join(".");
    }

    pub fn pop_scope(&mut self) {
        self.scopes.pop();
        self.scope = self.scopes.join(".");
    }

    /// `(op, scope)` for every recorded node, in execution order.
    pub fn ops(&self) -> impl Iterator<Item = (&'static str, &str)> {
        self.nodes.iter().map(|n| (n.op, n.scope.as_str()))
    }

    /// Number of non-leaf nodes recorded under `scope_prefix`.
    pub fn count_ops_in_scope(&self, scope_prefix: &str) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.backward.is_some() || !n.inputs.is_empty())
            .filter(|n| n.scope.starts_with(scope_prefix))
            .count()
    }

    pub fn count_ops_named(&self, op: &str) -> usize {
        self.nodes.iter().filter(|n| n.op == op).count()
    }

    pub(crate) fn push_buffer_update(&mut self, name: String, value: Tensor) {
        self.buffer_updates.push((name, value));
    }

    /// Override the batch-norm running-statistic momentum for this tape.
    /// Momentum 1 replaces the running statistics with the batch statistics.
    pub fn set_bn_momentum(&mut self, momentum: f64) {
        self.bn_momentum = Some(momentum);
    }

    pub(crate) fn bn_momentum(&self) -> Option<f64> {
        self.bn_momentum
    }

    /// Running-statistic updates produced by train-mode forwards.
    pub fn take_buffer_updates(&mut self) -> Vec<(String, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Record the result of an op. Fails if the output is not finite.
    pub(crate) fn record(
        &mut self,
        op: &'static str,
        value: Tensor,
        inputs: &[Var],
        backward: BackwardFn,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "{op} produced a non-finite value (scope '{}')",
                self.scope
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let inputs = inputs.iter().map(|v| v.0).collect();
        Ok(self.push_node(value, op, inputs, Some(backward), requires_grad))
    }

    fn push_node(
        &mut self,
        value: Tensor,
        op: &'static str,
        inputs: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            scope: self.scope.clone(),
            inputs,
            backward,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagate gradients from a one-element `loss` back to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let out = &self.nodes[loss.0].value;
        if out.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(out.shape())?);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let mut input_grads = backward(&g);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
            if self.sabotage.as_deref() == Some(node.op) {
                for ig in &mut input_grads {
                    ig.data_mut().iter_mut().for_each(|x| *x *= SABOTAGE_FACTOR);
                }
            }
            for (&input, ig) in node.inputs.iter().zip(input_grads) {
                if !self.nodes[input].requires_grad {
                    continue;
                }
                debug_assert_eq!(
                    ig.shape(),
                    self.nodes[input].value.shape(),
                    "gradient shape from {}",
                    node.op
                );
                match &mut grads[input] {
                    Some(acc) => acc.data_mut().iter_mut().zip(ig.data()).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(ig),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Add the gradients of every parameter leaf into the store.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for &(node, id) in &self.params {
            if let Some(g) = &grads.grads[node] {
                let p = store.get_mut(id);
                p.gradient
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b);
            }
        }
    }
}
