use std::cell::{Ref, RefCell};
use std::fmt;

use super::{Real, Tensor, TensorError, TensorResult};

/// One recorded primitive. Indices refer to earlier nodes on the same tape.
#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    /// `a[i, j] + row[j]`
    AddRow { a: usize, row: usize, cols: usize },
    /// `a[i, j] * row[j]`
    MulRow { a: usize, row: usize, cols: usize },
    /// `a[i, j] * col[i]`
    ScaleRows { a: usize, col: usize, cols: usize },
    /// `scale * a + shift`
    Affine { a: usize, scale: T },
    Sigmoid { a: usize },
    LeakyRelu { a: usize, slope: T },
    Abs { a: usize },
    Log { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    SumCols { a: usize, cols: usize },
    RowNorm { a: usize, cols: usize },
    SoftmaxRows { a: usize, cols: usize },
    LogSoftmaxRows { a: usize, cols: usize },
    ConcatCols { parts: Vec<(usize, usize)>, rows: usize },
    GatherRows { a: usize, idx: Vec<usize>, cols: usize },
    Gather { a: usize, idx: Vec<usize> },
    StandardizeCols { a: usize, rows: usize, cols: usize, eps: T },
    Reshape { a: usize },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
    pub(crate) is_param: bool,
}

/// Ordered record of primitive operations for one computation.
///
/// A tape is single-threaded; independent computations (one per episode)
/// each get their own tape.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a value that gradients are not tracked for.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false, false)
    }

    /// Records a trainable leaf (`requires_grad = true`).
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true, true)
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool, is_param: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
            is_param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node<T>>> {
        self.nodes.borrow()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> TensorResult<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![T::one()]);
        for idx in (0..=loss.id).rev() {
            if !nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            propagate(&nodes, idx, &g, &mut grads);
            // only leaves are read back; interior adjoints are dropped early
            if matches!(nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to the leaf `var`, if any path reached it.
    /// Interior nodes always return `None`.
    pub fn get(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        let shape = var.tape.nodes()[var.id].value.shape().to_vec();
        self.grads
            .get(var.id)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::new(shape, g.clone()).expect("gradient matches value shape"))
    }

    /// Like [`get`](Self::get) but zero-filled for variables the loss does not depend on.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var).unwrap_or_else(|| {
            let shape = var.tape.nodes()[var.id].value.shape().to_vec();
            Tensor::zeros(shape)
        })
    }
}

fn slot<'g, T: Real>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], id: usize) -> Option<&'g mut Vec<T>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![T::zero(); len]))
}

fn propagate<T: Real>(nodes: &[Node<T>], idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = nodes[idx].value.data();
    match &nodes[idx].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            if let Some(da) = slot(grads, nodes, a) {
                // dA += dC * B^T
                T::gemm(m, n, k, T::one(), (g, n, 1), (bv, 1, n), T::one(), da);
            }
            if let Some(db) = slot(grads, nodes, b) {
                // dB += A^T * dC
                T::gemm(k, m, n, T::one(), (av, 1, k), (g, n, 1), T::one(), db);
            }
        }
        &Op::Add { a, b } => {
            for id in [a, b] {
                if let Some(d) = slot(grads, nodes, id) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g);
                }
            }
        }
        &Op::Sub { a, b } => {
            if let Some(d) = slot(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g);
            }
            if let Some(d) = slot(grads, nodes, b) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d - g);
            }
        }
        &Op::Mul { a, b } => {
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            if let Some(d) = slot(grads, nodes, a) {
                d.iter_mut().zip(g).zip(bv).for_each(|((d, &g), &b)| *d = *d + g * b);
            }
            if let Some(d) = slot(grads, nodes, b) {
                d.iter_mut().zip(g).zip(av).for_each(|((d, &g), &a)| *d = *d + g * a);
            }
        }
        &Op::Div { a, b } => {
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            if let Some(d) = slot(grads, nodes, a) {
                for i in 0..d.len() {
                    d[i] = d[i] + g[i] / bv[i];
                }
            }
            if let Some(d) = slot(grads, nodes, b) {
                for i in 0..d.len() {
                    d[i] = d[i] - g[i] * av[i] / (bv[i] * bv[i]);
                }
            }
        }
        &Op::AddRow { a, row, cols } => {
            if let Some(d) = slot(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g);
            }
            if let Some(d) = slot(grads, nodes, row) {
                for gr in g.chunks(cols) {
                    d.iter_mut().zip(gr).for_each(|(d, &g)| *d = *d + g);
                }
            }
        }
        &Op::MulRow { a, row, cols } => {
            let av = nodes[a].value.data();
            let rv = nodes[row].value.data();
            if let Some(d) = slot(grads, nodes, a) {
                for i in 0..d.len() {
                    d[i] = d[i] + g[i] * rv[i % cols];
                }
            }
            if let Some(d) = slot(grads, nodes, row) {
                for (i, &gi) in g.iter().enumerate() {
                    d[i % cols] = d[i % cols] + gi * av[i];
                }
            }
        }
        &Op::ScaleRows { a, col, cols } => {
            let av = nodes[a].value.data();
            let cv = nodes[col].value.data();
            if let Some(d) = slot(grads, nodes, a) {
                for i in 0..d.len() {
                    d[i] = d[i] + g[i] * cv[i / cols];
                }
            }
            if let Some(d) = slot(grads, nodes, col) {
                for (i, &gi) in g.iter().enumerate() {
                    d[i / cols] = d[i / cols] + gi * av[i];
                }
            }
        }
        &Op::Affine { a, scale } => {
            if let Some(d) = slot(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + scale * g);
            }
        }
        &Op::Sigmoid { a } => {
            if let Some(d) = slot(grads, nodes, a) {
                for ((d, &g), &y) in d.iter_mut().zip(g).zip(out) {
                    *d = *d + g * y * (T::one() - y);
                }
            }
        }
        &Op::LeakyRelu { a, slope } => {
            let av = nodes[a].value.data();
            if let Some(d) = slot(grads, nodes, a) {
                for ((d, &g), &a) in d.iter_mut().zip(g).zip(av) {
                    *d = *d + if a > T::zero() { g } else { g * slope };
                }
            }
        }
        &Op::Abs { a } => {
            let av = nodes[a].value.data();
            if let Some(d) = slot(grads, nodes, a) {
                for i in 0..d.len() {
                    let s = if av[i] > T::zero() {
                        T::one()
                    } else if av[i] < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    d[i] = d[i] + g[i] * s;
                }
            }
        }
        &Op::Log { a } => {
            let av = nodes[a].value.data();
            if let Some(d) = slot(grads, nodes, a) {
                for i in 0..d.len() {
                    d[i] = d[i] + g[i] / av[i];
                }
            }
        }
        &Op::Sum { a } => {
            if let Some(d) = slot(grads, nodes, a) {
                d.iter_mut().for_each(|d| *d = *d + g[0]);
            }
        }
        &Op::Mean { a } => {
            if let Some(d) = slot(grads, nodes, a) {
                let scale = g[0] / T::from_usize(d.len()).unwrap();
                d.iter_mut().for_each(|d| *d = *d + scale);
            }
        }
        &Op::SumCols { a, cols } => {
            if let Some(d) = slot(grads, nodes, a) {
                for i in 0..d.len() {
                    d[i] = d[i] + g[i / cols];
                }
            }
        }
        &Op::RowNorm { a, cols } => {
            let av = nodes[a].value.data();
            if let Some(d) = slot(grads, nodes, a) {
                for i in 0..d.len() {
                    let norm = out[i / cols];
                    if norm > T::zero() {
                        d[i] = d[i] + g[i / cols] * av[i] / norm;
                    }
                }
            }
        }
        &Op::SoftmaxRows { a, cols } => {
            if let Some(d) = slot(grads, nodes, a) {
                for (r, (yr, gr)) in out.chunks(cols).zip(g.chunks(cols)).enumerate() {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    for c in 0..cols {
                        let i = r * cols + c;
                        d[i] = d[i] + yr[c] * (gr[c] - dot);
                    }
                }
            }
        }
        &Op::LogSoftmaxRows { a, cols } => {
            if let Some(d) = slot(grads, nodes, a) {
                for (r, (yr, gr)) in out.chunks(cols).zip(g.chunks(cols)).enumerate() {
                    let total: T = gr.iter().copied().sum();
                    for c in 0..cols {
                        let i = r * cols + c;
                        d[i] = d[i] + gr[c] - yr[c].exp() * total;
                    }
                }
            }
        }
        Op::ConcatCols { parts, rows } => {
            let total: usize = parts.iter().map(|p| p.1).sum();
            let mut offset = 0;
            for &(id, cols) in parts {
                if let Some(d) = slot(grads, nodes, id) {
                    for r in 0..*rows {
                        for c in 0..cols {
                            d[r * cols + c] = d[r * cols + c] + g[r * total + offset + c];
                        }
                    }
                }
                offset += cols;
            }
        }
        Op::GatherRows { a, idx, cols } => {
            let cols = *cols;
            if let Some(d) = slot(grads, nodes, *a) {
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..cols {
                        d[src * cols + c] = d[src * cols + c] + g[r * cols + c];
                    }
                }
            }
        }
        Op::Gather { a, idx } => {
            if let Some(d) = slot(grads, nodes, *a) {
                for (i, &src) in idx.iter().enumerate() {
                    d[src] = d[src] + g[i];
                }
            }
        }
        &Op::StandardizeCols { a, rows, cols, eps } => {
            let av = nodes[a].value.data();
            if let Some(d) = slot(grads, nodes, a) {
                let n = T::from_usize(rows).unwrap();
                for c in 0..cols {
                    let mean = (0..rows).map(|r| av[r * cols + c]).sum::<T>() / n;
                    let var = (0..rows)
                        .map(|r| (av[r * cols + c] - mean).powi(2))
                        .sum::<T>()
                        / n;
                    let inv_std = T::one() / (var + eps).sqrt();
                    let g_mean = (0..rows).map(|r| g[r * cols + c]).sum::<T>() / n;
                    let gx_mean = (0..rows)
                        .map(|r| g[r * cols + c] * out[r * cols + c])
                        .sum::<T>()
                        / n;
                    for r in 0..rows {
                        let i = r * cols + c;
                        d[i] = d[i] + inv_std * (g[i] - g_mean - out[i] * gx_mean);
                    }
                }
            }
        }
        &Op::Reshape { a } => {
            if let Some(d) = slot(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g);
            }
        }
    }
}
