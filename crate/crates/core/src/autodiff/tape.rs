use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a (r×c) + row (1×c)` broadcast over rows.
    AddRow(Var, Var),
    MulRow(Var, Var),
    /// `a (r×c) * col (r×1)` broadcast over columns.
    MulCol(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    SumRows(Var),
    SumCols(Var),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Reshape(Var),
    RowNorm(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape over dense 2-D tensors. Nodes are appended in
/// evaluation order, so the node list is already topologically sorted.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient, or zeros shaped like the node when nothing reached it.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Tensor::zeros(r, c)
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = broadcast_row(self.value(a), self.value(row), |x, y| x + y);
        let rg = self.rg(&[a, row]);
        self.push(v, Op::AddRow(a, row), rg)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = broadcast_row(self.value(a), self.value(row), |x, y| x * y);
        let rg = self.rg(&[a, row]);
        self.push(v, Op::MulRow(a, row), rg)
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let v = broadcast_col(self.value(a), self.value(col));
        let rg = self.rg(&[a, col]);
        self.push(v, Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn add_const(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        let rg = self.rg(&[a]);
        self.push(v, Op::AddConst(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).map(|x| pow(x, p));
        let rg = self.rg(&[a]);
        self.push(v, Op::Powf(a, p), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.powf(a, 2.0)
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(&[a]);
        self.push(v, Op::Clamp(a, lo, hi), rg)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_rows();
        let rg = self.rg(&[a]);
        self.push(v, Op::SumRows(a), rg)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_cols();
        let rg = self.rg(&[a]);
        self.push(v, Op::SumCols(a), rg)
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let r = self.sum_rows(a);
        self.sum_cols(r)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn gather(&mut self, a: Var, index: Arc<[usize]>) -> Var {
        let v = self.value(a).gather_rows(&index);
        let rg = self.rg(&[a]);
        self.push(v, Op::Gather(a, index), rg)
    }

    pub fn scatter_add(&mut self, a: Var, index: Arc<[usize]>, out_rows: usize) -> Var {
        assert!(index.iter().all(|&i| i < out_rows), "scatter index out of range");
        let v = self.value(a).scatter_add_rows(&index, out_rows);
        let rg = self.rg(&[a]);
        self.push(v, Op::ScatterAdd(a, index), rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v = Tensor::concat_cols(&parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>());
        let rg = self.rg(parts);
        self.push(v, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_cols(start, end);
        let rg = self.rg(&[a]);
        self.push(v, Op::Slice(a, start, end), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a).clone().reshaped(rows, cols);
        let rg = self.rg(&[a]);
        self.push(v, Op::Reshape(a), rg)
    }

    /// Euclidean norm of each row (r×1). The gradient at a zero row is zero.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::column(
            (0..t.rows())
                .map(|r| t.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect(),
        );
        let rg = self.rg(&[a]);
        self.push(v, Op::RowNorm(a), rg)
    }

    /// Pattern of non-differentiable points visited by the forward pass
    /// (ReLU signs, clamp activity, zero-norm rows). Two inputs with equal
    /// signatures lie in the same smooth piece of the graph.
    pub fn kink_signature(&self) -> Vec<u8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) => sig.extend(self.value(a).data().iter().map(|&x| (x > 0.0) as u8)),
                Op::Clamp(a, lo, hi) => sig.extend(self.value(a).data().iter().map(|&x| {
                    if x < lo {
                        0
                    } else if x > hi {
                        2
                    } else {
                        1
                    }
                })),
                Op::RowNorm(_) => sig.extend(node.value.data().iter().map(|&x| (x > 0.0) as u8)),
                _ => {}
            }
        }
        sig
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward root must be scalar, got {}x{}",
                rv.rows(),
                rv.cols()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, d: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_t(self.value(*b)));
                acc(*b, self.value(*a).t_matmul(g));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_rows());
            }
            Op::MulRow(a, row) => {
                acc(*a, broadcast_row(g, self.value(*row), |x, y| x * y));
                acc(*row, g.zip_map(self.value(*a), |x, y| x * y).sum_rows());
            }
            Op::MulCol(a, col) => {
                acc(*a, broadcast_col(g, self.value(*col)));
                acc(*col, g.zip_map(self.value(*a), |x, y| x * y).sum_cols());
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::Relu(a) => acc(*a, g.zip_map(self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 })),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |d, s| d * s * (1.0 - s))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |d, e| d * e)),
            Op::Powf(a, p) => {
                let p = *p;
                acc(*a, g.zip_map(self.value(*a), |d, x| d * p * pow(x, p - 1.0)))
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    *a,
                    g.zip_map(self.value(*a), |d, x| if x > lo && x < hi { d } else { 0.0 }),
                )
            }
            Op::SumRows(a) => {
                let (r, _) = self.value(*a).shape();
                acc(*a, Tensor::from_fn(r, g.cols(), |_, c| g.get(0, c)));
            }
            Op::SumCols(a) => {
                let (_, c) = self.value(*a).shape();
                acc(*a, Tensor::from_fn(g.rows(), c, |r, _| g.get(r, 0)));
            }
            Op::Gather(a, index) => {
                let rows = self.value(*a).rows();
                acc(*a, g.scatter_add_rows(index, rows));
            }
            Op::ScatterAdd(a, index) => acc(*a, g.gather_rows(index)),
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, g.slice_cols(start, start + w));
                    start += w;
                }
            }
            Op::Slice(a, start, end) => {
                let (r, c) = self.value(*a).shape();
                let (start, end) = (*start, *end);
                acc(
                    *a,
                    Tensor::from_fn(r, c, |i, j| if j >= start && j < end { g.get(i, j - start) } else { 0.0 }),
                );
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, g.clone().reshaped(r, c));
            }
            Op::RowNorm(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                        let n = node.value.get(r, 0);
                        if n > 0.0 {
                            g.get(r, 0) * x.get(r, c) / n
                        } else {
                            0.0
                        }
                    }),
                );
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn pow(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

fn broadcast_row(a: &Tensor, row: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert!(
        row.rows() == 1 && row.cols() == a.cols(),
        "row broadcast expects 1x{}, got {}x{}",
        a.cols(),
        row.rows(),
        row.cols()
    );
    Tensor::from_fn(a.rows(), a.cols(), |r, c| f(a.get(r, c), row.get(0, c)))
}

fn broadcast_col(a: &Tensor, col: &Tensor) -> Tensor {
    assert!(
        col.cols() == 1 && col.rows() == a.rows(),
        "column broadcast expects {}x1, got {}x{}",
        a.rows(),
        col.rows(),
        col.cols()
    );
    Tensor::from_fn(a.rows(), a.cols(), |r, c| a.get(r, c) * col.get(r, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_gradient_is_outer_product() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::new(2, 3, vec![1., 2., 3., 4., 5., 6.]));
        let x = tape.constant(Tensor::column(vec![0.5, -1.0, 2.0]));
        let y = tape.matmul(w, x);
        let root = tape.sum_all(y);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(w).unwrap(), &Tensor::new(2, 3, vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]));
        assert!(g.get(x).is_none());
    }

    #[test]
    fn inactive_relu_blocks_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(-3.0));
        let r = tape.relu(a);
        let g = tape.backward(r).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(2, 1));
        assert!(matches!(tape.backward(a), Err(Error::Shape(_))));
    }

    #[test]
    fn shared_node_accumulates() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(3.0));
        let b = tape.mul(a, a);
        let c = tape.add(b, a);
        let g = tape.backward(c).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[7.0]);
    }

    #[test]
    fn row_norm_of_zero_row_has_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::new(2, 2, vec![0., 0., 3., 4.]));
        let n = tape.row_norm(a);
        let s = tape.sum_all(n);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0., 0., 0.6, 0.8]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }
}
