use std::collections::{HashMap, HashSet};

use super::{Scalar, Tensor, TensorId};
use crate::error::{Error, Result};

/// Gradients of a scalar loss with respect to leaf tensors that require them.
#[derive(Clone, Debug, Default)]
pub struct GradientMap<T: Scalar = f32> {
    grads: HashMap<TensorId, Tensor<T>>,
}

impl<T: Scalar> GradientMap<T> {
    pub fn get(&self, tensor: &Tensor<T>) -> Option<&Tensor<T>> {
        self.grads.get(&tensor.id())
    }

    pub fn get_id(&self, id: TensorId) -> Option<&Tensor<T>> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn contains(&self, tensor: &Tensor<T>) -> bool {
        self.grads.contains_key(&tensor.id())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TensorId, &Tensor<T>)> {
        self.grads.iter()
    }

    pub fn insert(&mut self, id: TensorId, grad: Tensor<T>) {
        self.grads.insert(id, grad);
    }
}

/// Post-order over the part of the graph that requires gradients.
fn topo_order<T: Scalar>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    // (tensor, children pushed?)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = t.node() {
            for input in node.inputs.iter().rev() {
                if input.requires_grad() && !visited.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

fn accumulate<T: Scalar>(slot: &mut [T], g: Vec<T>) {
    for (a, b) in slot.iter_mut().zip(g) {
        *a = *a + b;
    }
}

/// Reverse-mode differentiation of a one-element `loss`.
///
/// Every node is visited exactly once; a tensor used on several paths
/// receives the sum of the path gradients. Leaves that do not require
/// gradients are absent from the result.
pub fn backward<T: Scalar>(loss: &Tensor<T>) -> Result<GradientMap<T>> {
    if loss.numel() != 1 {
        return Err(Error::InvalidArgument(format!(
            "backward needs a one-element loss, got shape {:?}",
            loss.shape()
        )));
    }
    let mut out = GradientMap::default();
    if !loss.requires_grad() {
        return Ok(out);
    }

    let order = topo_order(loss);
    let mut pending: HashMap<TensorId, Vec<T>> = HashMap::new();
    pending.insert(loss.id(), vec![T::one()]);

    for t in order.iter().rev() {
        let Some(grad) = pending.remove(&t.id()) else {
            continue;
        };
        match t.node() {
            None => {
                out.insert(t.id(), Tensor::leaf(grad, t.shape().to_vec(), false));
            }
            Some(node) => {
                let needs: Vec<bool> = node.inputs.iter().map(|i| i.requires_grad()).collect();
                let input_grads = (node.backward)(&grad, &needs);
                debug_assert_eq!(input_grads.len(), node.inputs.len());
                for ((input, g), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                    let (Some(g), true) = (g, *need) else {
                        continue;
                    };
                    debug_assert_eq!(g.len(), input.numel());
                    match pending.get_mut(&input.id()) {
                        Some(slot) => accumulate(slot, g),
                        None => {
                            pending.insert(input.id(), g);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
