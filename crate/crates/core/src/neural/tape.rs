//! Dense tensors and a reverse-mode tape.
//!
//! Every op pushes its output together with a closure that maps the output
//! gradient to gradients of its inputs. [`Tape::backward`] walks the nodes in
//! reverse creation order, which is a valid topological order.

use std::rc::Rc;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![v; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-d tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-d tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

type Backward = Box<dyn Fn(&[f64], &mut Grads)>;

struct Node {
    value: Rc<Tensor>,
    needs_grad: bool,
    back: Option<Backward>,
}

/// Accumulated gradients, one slot per node.
pub struct Grads {
    slots: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
    needs: Vec<bool>,
}

impl Grads {
    pub fn wants(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    /// Runs `f` on the gradient buffer of `v`, creating it as zeros.
    pub fn add(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs[v.0] {
            return;
        }
        let len = self.lens[v.0];
        f(self.slots[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    pub fn add_slice(&mut self, v: Var, g: &[f64]) {
        self.add(v, |buf| buf.iter_mut().zip(g).for_each(|(a, b)| *a += b));
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.slots[v.0].as_deref()
    }

    /// Gradient of `v`, zeros if nothing reached it.
    pub fn get_or_zero(&self, v: Var) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Rc::new(t), needs_grad: true, back: None });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Rc::new(t), needs_grad: false, back: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub(crate) fn rc(&self, v: Var) -> Rc<Tensor> {
        self.nodes[v.0].value.clone()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn push(&mut self, t: Tensor, inputs: &[Var], back: Backward) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let back = if needs_grad { Some(back) } else { None };
        self.nodes.push(Node { value: Rc::new(t), needs_grad, back });
        Var(self.nodes.len() - 1)
    }

    /// Propagates the seed gradients back to every node.
    pub fn backward(&self, seeds: &[(Var, &[f64])]) -> Grads {
        let mut g = Grads {
            slots: vec![None; self.nodes.len()],
            lens: self.nodes.iter().map(|n| n.value.len()).collect(),
            needs: self.nodes.iter().map(|n| n.needs_grad).collect(),
        };
        for (v, s) in seeds {
            assert_eq!(s.len(), g.lens[v.0], "seed gradient length");
            g.add_slice(*v, s);
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(back) = &self.nodes[i].back else { continue };
            if let Some(out) = g.slots[i].take() {
                back(&out, &mut g);
                g.slots[i] = Some(out);
            }
        }
        g
    }
}
