use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::tensor::{DType, Tensor};

/// Maps the output gradient to one gradient per parent. `needs[i]` is false
/// when parent `i` does not require a gradient; the rule may return `None`
/// for it.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Append-only record of a forward pass. Dropped after `backward`.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a leaf. Gradients are tracked when `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        let requires_grad = t.requires_grad();
        self.push(Node {
            value: Rc::new(t.detached()),
            parents: vec![],
            backward: None,
            requires_grad,
        })
    }

    /// Records a leaf that always tracks gradients.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(t.detached()),
            parents: vec![],
            backward: None,
            requires_grad: true,
        })
    }

    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(t.detached()),
            parents: vec![],
            backward: None,
            requires_grad: false,
        })
    }

    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor,
        parents: &[Var<'t>],
        backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Var<'t> {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let node = Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
        };
        self.push(node)
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    /// Each recorded node is visited at most once, in reverse order.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(shape_err!("loss was recorded on a different tape"));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(pg), true) = (pg, need) else {
                    continue;
                };
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&pg) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let meta = nodes
            .iter()
            .map(|n| (n.value.shape().to_vec(), n.value.dtype()))
            .collect();
        Ok(Gradients { grads, meta })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dtype(&self) -> DType {
        self.tape.nodes.borrow()[self.id].value.dtype()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Copy of the value detached from the tape.
    pub fn to_tensor(&self) -> Tensor {
        self.value().detached()
    }

    /// Same value re-recorded as a constant; gradients stop here.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.to_tensor())
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    meta: Vec<(Vec<usize>, DType)>,
}

impl Gradients {
    pub fn raw(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        let g = self.raw(var)?;
        let (shape, dtype) = &self.meta[var.id];
        Some(Tensor::from_parts(shape.clone(), g.to_vec(), *dtype))
    }

    /// Adds the gradient of `var` into `target`'s gradient buffer.
    pub fn accumulate_into(&self, var: Var<'_>, target: &mut Tensor) -> Result<()> {
        if let Some(g) = self.raw(var) {
            target.accumulate_grad(g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = Tensor::from_f64(&[3], vec![1., 2., 3.])
            .unwrap()
            .with_requires_grad(true);
        let v = tape.leaf(&x);
        let loss = v.sum_all();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[1., 1., 1.]);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = Tensor::from_f64(&[2], vec![1., 2.])
            .unwrap()
            .with_requires_grad(true);
        let v = tape.leaf(&x);
        let loss = v.mul(v).unwrap().sum_all();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = Tensor::zeros(&[2], DType::F64).with_requires_grad(true);
        let v = tape.leaf(&x);
        assert!(matches!(tape.backward(v), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn no_grad_leaf_has_none() {
        let tape = Tape::new();
        let x = Tensor::from_f64(&[2], vec![1., 2.]).unwrap();
        let y = Tensor::from_f64(&[2], vec![3., 4.])
            .unwrap()
            .with_requires_grad(true);
        let (vx, vy) = (tape.leaf(&x), tape.leaf(&y));
        let loss = vx.mul(vy).unwrap().sum_all();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(vx).is_none());
        assert_eq!(g.get(vy).unwrap().data(), &[1., 2.]);
        let mut xc = x.clone();
        g.accumulate_into(vx, &mut xc).unwrap();
        assert!(xc.grad().is_none());
    }

    #[test]
    fn two_backward_passes_double_gradient() {
        let mut x = Tensor::from_f64(&[3], vec![0.5, -1.0, 2.0])
            .unwrap()
            .with_requires_grad(true);
        for _ in 0..2 {
            let tape = Tape::new();
            let v = tape.leaf(&x);
            let loss = v.mul(v).unwrap().gelu().sum_all();
            let g = tape.backward(loss).unwrap();
            g.accumulate_into(v, &mut x).unwrap();
        }
        let once = {
            let tape = Tape::new();
            let v = tape.leaf(&x);
            let loss = v.mul(v).unwrap().gelu().sum_all();
            tape.backward(loss).unwrap().get(v).unwrap()
        };
        let twice = x.grad().unwrap();
        for (a, b) in twice.data().iter().zip(once.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::new();
        let x = Tensor::from_f64(&[1], vec![3.0])
            .unwrap()
            .with_requires_grad(true);
        let v = tape.leaf(&x);
        let y = v.add(v).unwrap().mul(v).unwrap(); // 2x^2
        let g = tape.backward(y.sum_all()).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[12.0]);
    }
}
