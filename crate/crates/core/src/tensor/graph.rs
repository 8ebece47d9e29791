use std::hash::Hasher;

use super::param::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Result, VinetError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded op.
///
/// `needs[i]` tells whether input `i` wants a gradient; entries for inputs
/// that do not may be returned as `None`.
pub trait Function {
    fn name(&self) -> &'static str;

    fn backward(&self, grad_out: &Tensor, inputs: &[&Tensor], output: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;

    /// Feeds the discrete choices of the forward pass (relu signs, pooling
    /// winners, sampler cells) to `state`. Two evaluations with equal keys
    /// lie on the same smooth piece of every piecewise op.
    fn branch_key(&self, _inputs: &[&Tensor], _state: &mut dyn Hasher) {}
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    func: Option<Box<dyn Function>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// A single-use tape. Nodes are appended in execution order, which is
/// already a topological order, so backward is one reverse sweep.
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: true }
    }

    /// A graph that records values only; nothing on it requires a gradient.
    pub fn no_grad() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Constant input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Node { value, inputs: Vec::new(), func: None, requires_grad: false, param: None })
    }

    /// Leaf that requires a gradient (used for gradient checks on inputs).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = self.grad_enabled;
        self.push(Node { value, inputs: Vec::new(), func: None, requires_grad, param: None })
    }

    /// Copies a parameter's current value onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let requires_grad = self.grad_enabled && p.trainable;
        self.push(Node { value: p.value.clone(), inputs: Vec::new(), func: None, requires_grad, param: Some(id) })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an op output. The backward rule is kept only when some input
    /// participates in differentiation.
    pub fn apply(&mut self, func: Box<dyn Function>, inputs: &[Var], output: Tensor) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Node {
            value: output,
            inputs: inputs.to_vec(),
            func: if requires_grad { Some(func) } else { None },
            requires_grad,
            param: None,
        })
    }

    /// Hash of the branch keys of every recorded op. Ops are only kept on
    /// graphs that record gradients, so build the graph with [`Graph::new`].
    pub fn branch_key(&self) -> u64 {
        let mut state = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            if let Some(func) = &node.func {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                func.branch_key(&inputs, &mut state);
            }
        }
        state.finish()
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate additively
    /// where a value fans out; each node is visited exactly once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(VinetError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss_node.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !loss_node.requires_grad {
            return Ok(Gradients { grads, params: Vec::new() });
        }
        grads[loss.0] = Some(Tensor::ones(loss_node.value.shape()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(func) = node.func.as_ref() else { continue };
            let Some(grad_out) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let in_grads = func.backward(&grad_out, &inputs, &node.value, &needs);
            debug_assert_eq!(in_grads.len(), node.inputs.len(), "{}", func.name());
            for ((v, g), need) in node.inputs.iter().zip(in_grads).zip(&needs) {
                let (Some(g), true) = (g, *need) else { continue };
                debug_assert_eq!(g.shape(), self.nodes[v.0].value.shape(), "{}", func.name());
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }

        let params = self.nodes.iter().enumerate().filter_map(|(i, n)| n.param.map(|p| (p, i))).collect();
        Ok(Gradients { grads, params })
    }

    /// Backward, then add every parameter gradient into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward(loss)?.accumulate_into(store);
        Ok(())
    }
}

/// Leaf gradients produced by one [`Graph::backward`] call.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn accumulate_into(self, store: &mut ParamStore) {
        let mut grads = self.grads;
        for (id, node) in self.params {
            if let Some(g) = grads[node].take() {
                store.accumulate_grad(id, &g);
            }
        }
    }
}
