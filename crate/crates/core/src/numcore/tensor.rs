use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// How a node was produced; parents are kept alive through the handles so
/// the graph is implicit in the tensors themselves.
#[derive(Clone)]
enum Op {
    Leaf,
    Add(Tensor, Tensor),
    /// [m,n] + [n], the second operand broadcast across rows.
    AddRow(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Matmul(Tensor, Tensor),
    Exp(Tensor),
    Log(Tensor),
    Softplus(Tensor),
    Sigmoid(Tensor),
    Tanh(Tensor),
    Relu(Tensor),
    Clamp(Tensor, f64, f64),
    Sum(Tensor),
    Mean(Tensor),
    RowSum(Tensor),
    LogSumExp(Tensor),
    RowLogSumExp(Tensor),
    ConcatCols(Tensor, Tensor),
    IndexSelect(Tensor, Rc<Vec<usize>>),
    Reshape(Tensor),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Matmul(..) => "matmul",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::LogSumExp(..) => "logsumexp",
            Op::RowLogSumExp(..) => "row_logsumexp",
            Op::ConcatCols(..) => "concat_cols",
            Op::IndexSelect(..) => "index_select",
            Op::Reshape(..) => "reshape",
        }
    }

    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Matmul(a, b)
            | Op::ConcatCols(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::LogSumExp(a)
            | Op::RowLogSumExp(a)
            | Op::IndexSelect(a, _)
            | Op::Reshape(a) => vec![a],
        }
    }
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Dense row-major f64 tensor. Cloning is cheap (shared storage); the
/// computation graph hangs off result tensors, and `backward` on a scalar
/// accumulates into the `grad` buffer of every reachable tensor that
/// requires gradients. Callers zero gradients explicitly between steps.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        assert_eq!(
            numel(&shape),
            values.len(),
            "shape {:?} does not match {} values",
            shape,
            values.len()
        );
        let grad = requires_grad.then(|| vec![0.0; values.len()]);
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values,
                grad,
                requires_grad,
                op,
            })),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], values: Vec<f64>) -> Tensor {
        Tensor::build(shape.to_vec(), values, false, Op::Leaf)
    }

    /// Trainable leaf: allocates a same-shape gradient accumulator.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Tensor {
        Tensor::build(shape.to_vec(), values, true, Op::Leaf)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(shape, vec![0.0; numel(shape)])
    }

    pub fn zeros_param(shape: &[usize]) -> Tensor {
        Tensor::param(shape, vec![0.0; numel(shape)])
    }

    pub fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    pub fn values_ref(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |i| i.values.as_slice())
    }

    /// Gradient accumulator contents; None if the tensor does not require
    /// gradients.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.inner.borrow_mut().grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Overwrite stored values in place (used by optimizers). Shape is
    /// preserved; length must match.
    pub fn set_values(&self, values: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.values.len(), values.len(), "set_values length mismatch");
        inner.values.copy_from_slice(values);
    }

    pub(crate) fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.borrow_mut().values);
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.values.len(), 1, "item() on non-scalar tensor");
        inner.values[0]
    }

    /// Same values as a fresh constant leaf: gradients stop here.
    pub fn detach(&self) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::new(&inner.shape, inner.values.clone())
    }

    fn unary(
        &self,
        op: impl FnOnce(Tensor) -> Op,
        f: impl Fn(f64) -> f64,
    ) -> Tensor {
        let (shape, values, rg) = {
            let inner = self.inner.borrow();
            (
                inner.shape.clone(),
                inner.values.iter().map(|&x| f(x)).collect::<Vec<_>>(),
                inner.requires_grad,
            )
        };
        Tensor::build(shape, values, rg, op(self.clone()))
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        let (shape, values, rg) = {
            let a = self.inner.borrow();
            let b = rhs.inner.borrow();
            assert_eq!(a.shape, b.shape, "add shape mismatch");
            let values = a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| x + y)
                .collect();
            (a.shape.clone(), values, a.requires_grad || b.requires_grad)
        };
        Tensor::build(shape, values, rg, Op::Add(self.clone(), rhs.clone()))
    }

    /// Row-broadcast add: self is [m, n], rhs is [n].
    pub fn add_row(&self, rhs: &Tensor) -> Tensor {
        let (shape, values, rg) = {
            let a = self.inner.borrow();
            let b = rhs.inner.borrow();
            assert_eq!(a.shape.len(), 2, "add_row lhs must be 2-d");
            let (m, n) = (a.shape[0], a.shape[1]);
            assert_eq!(b.values.len(), n, "add_row rhs length mismatch");
            let mut values = a.values.clone();
            for r in 0..m {
                for c in 0..n {
                    values[r * n + c] += b.values[c];
                }
            }
            (a.shape.clone(), values, a.requires_grad || b.requires_grad)
        };
        Tensor::build(shape, values, rg, Op::AddRow(self.clone(), rhs.clone()))
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        let (shape, values, rg) = {
            let a = self.inner.borrow();
            let b = rhs.inner.borrow();
            assert_eq!(a.shape, b.shape, "sub shape mismatch");
            let values = a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| x - y)
                .collect();
            (a.shape.clone(), values, a.requires_grad || b.requires_grad)
        };
        Tensor::build(shape, values, rg, Op::Sub(self.clone(), rhs.clone()))
    }

    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        let (shape, values, rg) = {
            let a = self.inner.borrow();
            let b = rhs.inner.borrow();
            assert_eq!(a.shape, b.shape, "mul shape mismatch");
            let values = a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| x * y)
                .collect();
            (a.shape.clone(), values, a.requires_grad || b.requires_grad)
        };
        Tensor::build(shape, values, rg, Op::Mul(self.clone(), rhs.clone()))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let (shape, values, rg) = {
            let a = self.inner.borrow();
            (
                a.shape.clone(),
                a.values.iter().map(|&x| x * c).collect(),
                a.requires_grad,
            )
        };
        Tensor::build(shape, values, rg, Op::Scale(self.clone(), c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(Op::AddScalar, |x| x + c)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// [m,k] x [k,n] -> [m,n].
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        let (shape, values, rg) = {
            let a = self.inner.borrow();
            let b = rhs.inner.borrow();
            assert_eq!(a.shape.len(), 2, "matmul lhs must be 2-d");
            assert_eq!(b.shape.len(), 2, "matmul rhs must be 2-d");
            let (m, k) = (a.shape[0], a.shape[1]);
            let (k2, n) = (b.shape[0], b.shape[1]);
            assert_eq!(k, k2, "matmul inner dimension mismatch");
            let values = matmul_raw(&a.values, &b.values, m, k, n);
            (vec![m, n], values, a.requires_grad || b.requires_grad)
        };
        Tensor::build(shape, values, rg, Op::Matmul(self.clone(), rhs.clone()))
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn log(&self) -> Tensor {
        self.unary(Op::Log, f64::ln)
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(Op::Softplus, softplus)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Op::Relu, |x| x.max(0.0))
    }

    /// Hard clamp; the gradient passes only where the input was strictly
    /// inside (lo, hi).
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        assert!(lo < hi, "clamp bounds out of order");
        self.unary(|t| Op::Clamp(t, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&self) -> Tensor {
        let (v, rg) = {
            let a = self.inner.borrow();
            (a.values.iter().sum::<f64>(), a.requires_grad)
        };
        Tensor::build(vec![1], vec![v], rg, Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let (v, rg) = {
            let a = self.inner.borrow();
            assert!(!a.values.is_empty(), "mean of empty tensor");
            (
                a.values.iter().sum::<f64>() / a.values.len() as f64,
                a.requires_grad,
            )
        };
        Tensor::build(vec![1], vec![v], rg, Op::Mean(self.clone()))
    }

    /// [m,n] -> [m], summing each row.
    pub fn row_sum(&self) -> Tensor {
        let (m, values, rg) = {
            let a = self.inner.borrow();
            assert_eq!(a.shape.len(), 2, "row_sum needs a 2-d tensor");
            let (m, n) = (a.shape[0], a.shape[1]);
            let values = (0..m)
                .map(|r| a.values[r * n..(r + 1) * n].iter().sum())
                .collect();
            (m, values, a.requires_grad)
        };
        Tensor::build(vec![m], values, rg, Op::RowSum(self.clone()))
    }

    /// Overflow-safe log-sum-exp over all elements.
    pub fn logsumexp(&self) -> Tensor {
        let (v, rg) = {
            let a = self.inner.borrow();
            (logsumexp_slice(&a.values), a.requires_grad)
        };
        Tensor::build(vec![1], vec![v], rg, Op::LogSumExp(self.clone()))
    }

    /// [m,n] -> [m], overflow-safe log-sum-exp per row.
    pub fn row_logsumexp(&self) -> Tensor {
        let (m, values, rg) = {
            let a = self.inner.borrow();
            assert_eq!(a.shape.len(), 2, "row_logsumexp needs a 2-d tensor");
            let (m, n) = (a.shape[0], a.shape[1]);
            let values = (0..m)
                .map(|r| logsumexp_slice(&a.values[r * n..(r + 1) * n]))
                .collect();
            (m, values, a.requires_grad)
        };
        Tensor::build(vec![m], values, rg, Op::RowLogSumExp(self.clone()))
    }

    /// [m,a] ++ [m,b] -> [m,a+b], self first.
    pub fn concat_cols(&self, rhs: &Tensor) -> Tensor {
        let (shape, values, rg) = {
            let a = self.inner.borrow();
            let b = rhs.inner.borrow();
            assert_eq!(a.shape.len(), 2, "concat_cols lhs must be 2-d");
            assert_eq!(b.shape.len(), 2, "concat_cols rhs must be 2-d");
            assert_eq!(a.shape[0], b.shape[0], "concat_cols row count mismatch");
            let (m, na, nb) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut values = Vec::with_capacity(m * (na + nb));
            for r in 0..m {
                values.extend_from_slice(&a.values[r * na..(r + 1) * na]);
                values.extend_from_slice(&b.values[r * nb..(r + 1) * nb]);
            }
            (
                vec![m, na + nb],
                values,
                a.requires_grad || b.requires_grad,
            )
        };
        Tensor::build(shape, values, rg, Op::ConcatCols(self.clone(), rhs.clone()))
    }

    /// Gather rows of a [n,d] tensor (or elements of a vector); the
    /// gradient scatter-adds back, so repeated indices accumulate.
    pub fn index_select(&self, indices: &[usize]) -> Tensor {
        let (shape, values, rg) = {
            let a = self.inner.borrow();
            let (n, d) = match a.shape.len() {
                1 => (a.shape[0], 1),
                2 => (a.shape[0], a.shape[1]),
                _ => panic!("index_select needs a 1-d or 2-d tensor"),
            };
            let mut values = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                assert!(i < n, "index_select index {i} out of range {n}");
                values.extend_from_slice(&a.values[i * d..(i + 1) * d]);
            }
            let shape = if a.shape.len() == 1 {
                vec![indices.len()]
            } else {
                vec![indices.len(), d]
            };
            (shape, values, a.requires_grad)
        };
        Tensor::build(
            shape,
            values,
            rg,
            Op::IndexSelect(self.clone(), Rc::new(indices.to_vec())),
        )
    }

    /// Same storage order, different shape. Gradient is a pass-through.
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let (values, rg) = {
            let a = self.inner.borrow();
            assert_eq!(numel(shape), a.values.len(), "reshape element count mismatch");
            (a.values.clone(), a.requires_grad)
        };
        Tensor::build(shape.to_vec(), values, rg, Op::Reshape(self.clone()))
    }

    /// Reverse-mode gradient accumulation from a scalar root. Each call
    /// computes the full gradient of the root and adds it into the
    /// persistent `grad` buffer of every reachable `requires_grad` tensor;
    /// callers zero those buffers between optimizer steps. Returns an error
    /// naming the node if a non-finite value or gradient shows up.
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.inner.borrow();
            assert_eq!(
                inner.values.len(),
                1,
                "backward on a non-scalar root is a contract violation"
            );
            if !inner.requires_grad {
                // Nothing reachable requires gradients: empty gradient set.
                return Ok(());
            }
        }

        // Creation ids increase from parents to children, so descending id
        // order is a topological order of the graph.
        let mut nodes: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            let id = t.id();
            if !seen.insert(id) {
                continue;
            }
            let inner = t.inner.borrow();
            if !inner.requires_grad {
                continue; // constant subgraph: no gradients below
            }
            for p in inner.op.parents() {
                stack.push(p.clone());
            }
            drop(inner);
            nodes.push(t);
        }
        nodes.sort_by_key(|t| std::cmp::Reverse(t.id()));

        // Propagate through transient buffers so repeated backward calls
        // re-derive the same gradient instead of compounding stale ones,
        // then fold each node's share into its persistent accumulator.
        let mut flowing: HashMap<u64, Vec<f64>> = HashMap::new();
        flowing.insert(self.id(), vec![1.0]);

        for node in &nodes {
            let out_grad = match flowing.remove(&node.id()) {
                Some(g) => g,
                None => continue, // no gradient reached this node
            };
            let (op, out_values) = {
                let inner = node.inner.borrow();
                (inner.op.clone(), inner.values.clone())
            };
            if let Some(bad) = out_values.iter().position(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite value in node {} (op {}, flat index {})",
                    node.id(),
                    op.name(),
                    bad
                )));
            }
            if let Some(bad) = out_grad.iter().position(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in node {} (op {}, flat index {})",
                    node.id(),
                    op.name(),
                    bad
                )));
            }
            {
                let mut inner = node.inner.borrow_mut();
                if let Some(g) = inner.grad.as_mut() {
                    for (gi, ci) in g.iter_mut().zip(&out_grad) {
                        *gi += ci;
                    }
                }
            }
            propagate(&op, &out_grad, &out_values, &mut flowing)?;
        }
        Ok(())
    }
}

fn accumulate(flowing: &mut HashMap<u64, Vec<f64>>, target: &Tensor, contribution: &[f64]) {
    if !target.requires_grad() {
        return;
    }
    let entry = flowing
        .entry(target.id())
        .or_insert_with(|| vec![0.0; target.len()]);
    for (gi, ci) in entry.iter_mut().zip(contribution) {
        *gi += ci;
    }
}

fn propagate(
    op: &Op,
    og: &[f64],
    out_values: &[f64],
    flowing: &mut HashMap<u64, Vec<f64>>,
) -> Result<()> {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(flowing, a, og);
            accumulate(flowing, b, og);
        }
        Op::AddRow(a, b) => {
            accumulate(flowing, a, og);
            let n = b.len();
            let mut gb = vec![0.0; n];
            for (i, &g) in og.iter().enumerate() {
                gb[i % n] += g;
            }
            accumulate(flowing, b, &gb);
        }
        Op::Sub(a, b) => {
            accumulate(flowing, a, og);
            let gb: Vec<f64> = og.iter().map(|&g| -g).collect();
            accumulate(flowing, b, &gb);
        }
        Op::Mul(a, b) => {
            let av = a.values();
            let bv = b.values();
            let ga: Vec<f64> = og.iter().zip(&bv).map(|(&g, &y)| g * y).collect();
            let gb: Vec<f64> = og.iter().zip(&av).map(|(&g, &x)| g * x).collect();
            accumulate(flowing, a, &ga);
            accumulate(flowing, b, &gb);
        }
        Op::Scale(a, c) => {
            let ga: Vec<f64> = og.iter().map(|&g| g * c).collect();
            accumulate(flowing, a, &ga);
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            accumulate(flowing, a, og);
        }
        Op::Matmul(a, b) => {
            let (m, k) = {
                let s = a.shape();
                (s[0], s[1])
            };
            let n = b.shape()[1];
            let av = a.values();
            let bv = b.values();
            // dA = dC . B^T
            let mut ga = vec![0.0; m * k];
            for i in 0..m {
                for j in 0..n {
                    let g = og[i * n + j];
                    if g != 0.0 {
                        for p in 0..k {
                            ga[i * k + p] += g * bv[p * n + j];
                        }
                    }
                }
            }
            // dB = A^T . dC
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let x = av[i * k + p];
                    if x != 0.0 {
                        for j in 0..n {
                            gb[p * n + j] += x * og[i * n + j];
                        }
                    }
                }
            }
            accumulate(flowing, a, &ga);
            accumulate(flowing, b, &gb);
        }
        Op::Exp(a) => {
            // out = e^x, so d/dx = out
            let ga: Vec<f64> = og.iter().zip(out_values).map(|(&g, &y)| g * y).collect();
            accumulate(flowing, a, &ga);
        }
        Op::Log(a) => {
            let av = a.values();
            let ga: Vec<f64> = og.iter().zip(&av).map(|(&g, &x)| g / x).collect();
            accumulate(flowing, a, &ga);
        }
        Op::Softplus(a) => {
            let av = a.values();
            let ga: Vec<f64> = og
                .iter()
                .zip(&av)
                .map(|(&g, &x)| g * sigmoid(x))
                .collect();
            accumulate(flowing, a, &ga);
        }
        Op::Sigmoid(a) => {
            let ga: Vec<f64> = og
                .iter()
                .zip(out_values)
                .map(|(&g, &s)| g * s * (1.0 - s))
                .collect();
            accumulate(flowing, a, &ga);
        }
        Op::Tanh(a) => {
            let ga: Vec<f64> = og
                .iter()
                .zip(out_values)
                .map(|(&g, &t)| g * (1.0 - t * t))
                .collect();
            accumulate(flowing, a, &ga);
        }
        Op::Relu(a) => {
            let av = a.values();
            let ga: Vec<f64> = og
                .iter()
                .zip(&av)
                .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                .collect();
            accumulate(flowing, a, &ga);
        }
        Op::Clamp(a, lo, hi) => {
            let av = a.values();
            let ga: Vec<f64> = og
                .iter()
                .zip(&av)
                .map(|(&g, &x)| if x > *lo && x < *hi { g } else { 0.0 })
                .collect();
            accumulate(flowing, a, &ga);
        }
        Op::Sum(a) => {
            let ga = vec![og[0]; a.len()];
            accumulate(flowing, a, &ga);
        }
        Op::Mean(a) => {
            let ga = vec![og[0] / a.len() as f64; a.len()];
            accumulate(flowing, a, &ga);
        }
        Op::RowSum(a) => {
            let s = a.shape();
            let (m, n) = (s[0], s[1]);
            let mut ga = vec![0.0; m * n];
            for r in 0..m {
                for c in 0..n {
                    ga[r * n + c] = og[r];
                }
            }
            accumulate(flowing, a, &ga);
        }
        Op::LogSumExp(a) => {
            // d/dx_i = softmax(x)_i
            let av = a.values();
            let lse = out_values[0];
            let ga: Vec<f64> = av.iter().map(|&x| og[0] * (x - lse).exp()).collect();
            accumulate(flowing, a, &ga);
        }
        Op::RowLogSumExp(a) => {
            let s = a.shape();
            let (m, n) = (s[0], s[1]);
            let av = a.values();
            let mut ga = vec![0.0; m * n];
            for r in 0..m {
                let lse = out_values[r];
                for c in 0..n {
                    ga[r * n + c] = og[r] * (av[r * n + c] - lse).exp();
                }
            }
            accumulate(flowing, a, &ga);
        }
        Op::ConcatCols(a, b) => {
            let (m, na) = {
                let s = a.shape();
                (s[0], s[1])
            };
            let nb = b.shape()[1];
            let n = na + nb;
            let mut ga = vec![0.0; m * na];
            let mut gb = vec![0.0; m * nb];
            for r in 0..m {
                ga[r * na..(r + 1) * na].copy_from_slice(&og[r * n..r * n + na]);
                gb[r * nb..(r + 1) * nb].copy_from_slice(&og[r * n + na..(r + 1) * n]);
            }
            accumulate(flowing, a, &ga);
            accumulate(flowing, b, &gb);
        }
        Op::IndexSelect(a, indices) => {
            let s = a.shape();
            let d = if s.len() == 1 { 1 } else { s[1] };
            let mut ga = vec![0.0; a.len()];
            for (row, &i) in indices.iter().enumerate() {
                for c in 0..d {
                    ga[i * d + c] += og[row * d + c];
                }
            }
            accumulate(flowing, a, &ga);
        }
    }
    Ok(())
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let x = a[i * k + p];
            if x != 0.0 {
                let row = &b[p * n..(p + 1) * n];
                let out = &mut c[i * n..(i + 1) * n];
                for (o, &y) in out.iter_mut().zip(row) {
                    *o += x * y;
                }
            }
        }
    }
    c
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

pub fn logsumexp_slice(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "logsumexp of empty slice");
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let w = Tensor::param(&[3], vec![1.0, 2.0, 3.0]);
        let root = w.mul(&w).sum();
        root.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_root_yields_empty_gradient_set() {
        let c = Tensor::scalar(5.0);
        c.backward().unwrap();
        assert!(c.grad().is_none());
    }

    #[test]
    #[should_panic(expected = "non-scalar root")]
    fn non_scalar_root_panics() {
        let w = Tensor::param(&[2], vec![1.0, 2.0]);
        let y = w.mul(&w);
        let _ = y.backward();
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let w = Tensor::param(&[2], vec![1.0, 1.0]);
        let root = w.sum();
        root.backward().unwrap();
        root.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 2.0]);
        w.zero_grad();
        assert_eq!(w.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn matmul_forward_and_backward() {
        let a = Tensor::param(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::param(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let c = a.matmul(&b);
        assert_eq!(c.values(), vec![4.0, 5.0, 10.0, 11.0]);
        c.sum().backward().unwrap();
        // dC = ones; dA = ones.B^T, dB = A^T.ones
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0, 2.0, 1.0, 1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }

    #[test]
    fn logsumexp_is_overflow_safe() {
        let x = Tensor::new(&[2], vec![1000.0, 1000.0]);
        let v = x.logsumexp().item();
        assert!((v - (1000.0 + 2.0_f64.ln())).abs() < 1e-12);
        assert!(v.is_finite());
    }

    #[test]
    fn index_select_scatter_adds_repeated_rows() {
        let e = Tensor::param(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let sel = e.index_select(&[1, 1, 0]);
        assert_eq!(sel.values(), vec![3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        sel.sum().backward().unwrap();
        assert_eq!(e.grad().unwrap(), vec![1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_cols_orders_left_then_right() {
        let a = Tensor::new(&[2, 1], vec![1.0, 2.0]);
        let b = Tensor::new(&[2, 2], vec![10.0, 11.0, 20.0, 21.0]);
        let c = a.concat_cols(&b);
        assert_eq!(c.shape(), vec![2, 3]);
        assert_eq!(c.values(), vec![1.0, 10.0, 11.0, 2.0, 20.0, 21.0]);
    }

    #[test]
    fn detach_blocks_gradients() {
        let w = Tensor::param(&[2], vec![1.0, 2.0]);
        let d = w.mul(&w).detach();
        let root = d.sum();
        root.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn nan_value_is_reported_with_node_name() {
        let w = Tensor::param(&[1], vec![-1.0]);
        // log of a negative number is NaN
        let root = w.log().sum();
        let err = root.backward().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-finite"), "{msg}");
        assert!(msg.contains("op "), "{msg}");
    }
}
