//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Nodes
//! are appended in evaluation order, so walking the node list backwards is a
//! valid reverse topological order. Parameter matrices are referenced by id
//! rather than copied onto the tape; their gradients accumulate straight into
//! a [`Gradients`] buffer during [`Tape::backprop`].

use crate::error::{Error, Result};
use crate::numerics::tensor::{self, log_sum_exp, sigmoid_scalar, tanh_scalar};
use crate::numerics::{Gradients, ParamId, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Row { param: ParamId, row: usize },
    MatVecParam { w: ParamId, x: Var },
    MatVec { w: Var, x: Var },
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    ScaleBy { scalars: Var, index: usize, v: Var },
    Concat(Vec<Var>),
    Dot(Var, Var),
    LogSoftmaxAt { logits: Var, target: usize },
    Sum(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

/// Result of a backward pass: parameter gradients plus the adjoint of every node.
pub struct Backward {
    pub params: Gradients,
    adjoints: Vec<Option<Vec<f64>>>,
}

impl Backward {
    /// Gradient of the loss with respect to any recorded node (zeros if unreached).
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.adjoints.get(v.0).and_then(|a| a.as_deref())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; its adjoint is still reported by [`Backward::wrt`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        self.push(value, Op::Param(id))
    }

    /// Row `row` of a parameter table, as a vector.
    pub fn row(&mut self, param: ParamId, row: usize) -> Result<Var> {
        let table = self.params.get(param);
        if table.shape().len() != 2 || row >= table.rows() {
            return Err(Error::Lookup {
                role: "table row",
                id: format!("{}[{row}]", self.params.name(param)),
            });
        }
        let value = Tensor::vector(table.row(row).to_vec());
        Ok(self.push(value, Op::Row { param, row }))
    }

    pub fn matvec_param(&mut self, w: ParamId, x: Var) -> Result<Var> {
        let wt = self.params.get(w);
        let value = tensor::matvec(wt, &self.nodes[x.0].value)?;
        Ok(self.push(value, Op::MatVecParam { w, x }))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let value = tensor::matvec(&self.nodes[w.0].value, &self.nodes[x.0].value)?;
        Ok(self.push(value, Op::MatVec { w, x }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_raw(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| 1.0 - x);
        self.push(value, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(sigmoid_scalar);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(tanh_scalar);
        self.push(value, Op::Tanh(a))
    }

    /// `v` scaled by element `index` of `scalars`.
    pub fn scale_by(&mut self, scalars: Var, index: usize, v: Var) -> Result<Var> {
        let s = self.nodes[scalars.0].value.data().get(index).copied().ok_or_else(|| {
            Error::Shape {
                op: "scale_by",
                left: self.nodes[scalars.0].value.shape().to_vec(),
                right: vec![index],
            }
        })?;
        let value = self.nodes[v.0].value.map(|x| s * x);
        Ok(self.push(value, Op::ScaleBy { scalars, index, v }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|p| self.nodes[p.0].value.data().iter().copied())
            .collect();
        let value = Tensor::vector(data);
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let v = tensor::dot(self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b)))
    }

    /// `log softmax(logits)[target]` as a scalar node.
    pub fn log_softmax_at(&mut self, logits: Var, target: usize) -> Result<Var> {
        let x = self.nodes[logits.0].value.data();
        if target >= x.len() {
            return Err(Error::Lookup {
                role: "output token",
                id: target.to_string(),
            });
        }
        let v = x[target] - log_sum_exp(x);
        Ok(self.push(Tensor::scalar(v), Op::LogSoftmaxAt { logits, target }))
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("sum of zero nodes"))?;
        let mut acc = self.nodes[first.0].value.clone();
        for p in &parts[1..] {
            let t = &self.nodes[p.0].value;
            if t.shape() != acc.shape() {
                return Err(shape_err("sum", &acc, t));
            }
            acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b);
        }
        Ok(self.push(acc, Op::Sum(parts.to_vec())))
    }

    /// Reverse sweep from a scalar `loss`; parameter gradients land in a fresh buffer.
    pub fn backprop(&self, loss: Var) -> Result<Backward> {
        let mut grads = self.params.zero_grads();
        let adjoints = self.backprop_into(loss, &mut grads)?;
        Ok(Backward {
            params: grads,
            adjoints,
        })
    }

    /// Reverse sweep accumulating (adding) parameter gradients into `grads`.
    pub fn backprop_into(
        &self,
        loss: Var,
        grads: &mut Gradients,
    ) -> Result<Vec<Option<Vec<f64>>>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("loss node is not on this tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::Shape {
                op: "backprop",
                left: vec![grads.len()],
                right: vec![self.params.len()],
            });
        }

        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; n])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.data();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    grads
                        .get_mut(*id)
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::Row { param, row } => {
                    grads
                        .get_mut(*param)
                        .row_mut(*row)
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::MatVecParam { w, x } => {
                    let wt = self.params.get(*w);
                    let cols = wt.cols();
                    let xv = self.nodes[x.0].value.data();
                    let gw = grads.get_mut(*w).data_mut();
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            let row = &mut gw[r * cols..(r + 1) * cols];
                            row.iter_mut().zip(xv).for_each(|(a, b)| *a += gr * b);
                        }
                    }
                    let gx = acc(&mut adj, *x, cols);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            let row = wt.row(r);
                            gx.iter_mut().zip(row).for_each(|(a, b)| *a += gr * b);
                        }
                    }
                }
                Op::MatVec { w, x } => {
                    let wt = &self.nodes[w.0].value;
                    let cols = wt.cols();
                    let xv = self.nodes[x.0].value.data();
                    let mut gw = vec![0.0; wt.len()];
                    let mut gx = vec![0.0; cols];
                    for (r, &gr) in g.iter().enumerate() {
                        for c in 0..cols {
                            gw[r * cols + c] += gr * xv[c];
                            gx[c] += gr * wt.data()[r * cols + c];
                        }
                    }
                    add_into(acc(&mut adj, *w, wt.len()), &gw);
                    add_into(acc(&mut adj, *x, cols), &gx);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut adj, *a, g.len()), &g);
                    add_into(acc(&mut adj, *b, g.len()), &g);
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.data();
                    let bv = self.nodes[b.0].value.data();
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    add_into(acc(&mut adj, *a, g.len()), &ga);
                    add_into(acc(&mut adj, *b, g.len()), &gb);
                }
                Op::OneMinus(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for ((x, gy), s) in ga.iter_mut().zip(&g).zip(y) {
                        *x += gy * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for ((x, gy), t) in ga.iter_mut().zip(&g).zip(y) {
                        *x += gy * (1.0 - t * t);
                    }
                }
                Op::ScaleBy { scalars, index, v } => {
                    let s_len = self.nodes[scalars.0].value.len();
                    let s = self.nodes[scalars.0].value.data()[*index];
                    let vv = self.nodes[v.0].value.data();
                    let gs = tensor::dot(&g, vv);
                    acc(&mut adj, *scalars, s_len)[*index] += gs;
                    let gv = acc(&mut adj, *v, g.len());
                    gv.iter_mut().zip(&g).for_each(|(x, y)| *x += s * y);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        add_into(acc(&mut adj, *p, n), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Dot(a, b) => {
                    let av = self.nodes[a.0].value.data();
                    let bv = self.nodes[b.0].value.data();
                    let ga: Vec<f64> = bv.iter().map(|v| g[0] * v).collect();
                    let gb: Vec<f64> = av.iter().map(|v| g[0] * v).collect();
                    add_into(acc(&mut adj, *a, ga.len()), &ga);
                    add_into(acc(&mut adj, *b, gb.len()), &gb);
                }
                Op::LogSoftmaxAt { logits, target } => {
                    let x = self.nodes[logits.0].value.data();
                    let p = tensor::softmax_slice(x);
                    let gl = acc(&mut adj, *logits, x.len());
                    for (k, (a, pk)) in gl.iter_mut().zip(&p).enumerate() {
                        let onehot = if k == *target { 1.0 } else { 0.0 };
                        *a += g[0] * (onehot - pk);
                    }
                }
                Op::Sum(parts) => {
                    for p in parts {
                        add_into(acc(&mut adj, *p, g.len()), &g);
                    }
                }
            }
            adj[i] = Some(g);
        }
        Ok(adj)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient() {
        let mut ps = ParamSet::new();
        let w = ps.register("w", Tensor::vector(vec![5.0]));
        let mut tape = Tape::new(&ps);
        let x = tape.input(Tensor::vector(vec![2.0]));
        let wv = tape.param(w);
        let loss = tape.dot(wv, x).unwrap();
        let back = tape.backprop(loss).unwrap();
        assert_eq!(back.params.get(w).data(), &[2.0]);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let ps = ParamSet::new();
        let c = 3.0;
        let mut tape = Tape::new(&ps);
        let x = tape.input(Tensor::scalar(0.0));
        let s = tape.sigmoid(x);
        let k = tape.input(Tensor::scalar(c));
        let loss = tape.mul(s, k).unwrap();
        let back = tape.backprop(loss).unwrap();
        assert_eq!(back.wrt(x).unwrap(), &[0.25 * c]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut ps = ParamSet::new();
        let used = ps.register("used", Tensor::vector(vec![1.0, 2.0]));
        let unused = ps.register("unused", Tensor::zeros(&[3, 2]));
        let mut tape = Tape::new(&ps);
        let u = tape.param(used);
        let loss = tape.dot(u, u).unwrap();
        let back = tape.backprop(loss).unwrap();
        assert_eq!(back.params.get(used).data(), &[2.0, 4.0]);
        assert!(back.params.get(unused).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let ps = ParamSet::new();
        let mut tape = Tape::new(&ps);
        let x = tape.input(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backprop(x), Err(Error::Contract(_))));
    }

    #[test]
    fn matvec_param_matches_generic_matvec() {
        let mut ps = ParamSet::new();
        let w = ps.register("w", Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5]).unwrap());
        let mut tape = Tape::new(&ps);
        let x = tape.input(Tensor::vector(vec![0.3, -0.7, 1.1]));
        let y1 = tape.matvec_param(w, x).unwrap();
        let wv = tape.param(w);
        let y2 = tape.matvec(wv, x).unwrap();
        let a = tape.dot(y1, y1).unwrap();
        let b = tape.dot(y2, y2).unwrap();
        let loss = tape.sum(&[a, b]).unwrap();
        assert_eq!(tape.value(y1), tape.value(y2));
        let back = tape.backprop(loss).unwrap();
        // Both paths contribute identical halves.
        let direct = 2.0 * 2.0 * tape.value(y1).data()[0] * 0.3;
        assert!((back.params.get(w).data()[0] - direct).abs() < 1e-12);
    }
}
