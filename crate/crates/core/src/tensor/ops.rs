use super::tape::{Node, Op};
use super::{Real, Tape, Tensor, TensorError, TensorResult, Var};

fn rank2<T: Real>(op: &'static str, t: &Tensor<T>) -> TensorResult<(usize, usize)> {
    match t.shape()[..] {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::Rank {
            op,
            expected: 2,
            shape: t.shape().to_vec(),
        }),
    }
}

/// Treats rank-1 tensors as a single row.
fn rows_cols<T: Real>(op: &'static str, t: &Tensor<T>) -> TensorResult<(usize, usize)> {
    match t.shape()[..] {
        [n] => Ok((1, n)),
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::Rank {
            op,
            expected: 2,
            shape: t.shape().to_vec(),
        }),
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes()[self.id].value.shape().to_vec()
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes()[self.id].value.clone()
    }

    /// Borrowing access to the forward value.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.nodes()[self.id].value)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes()[self.id].is_param
    }

    fn needs_grad(nodes: &[Node<T>], ids: &[usize]) -> bool {
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn unary(
        &self,
        f: impl Fn(&Tensor<T>) -> TensorResult<Tensor<T>>,
        op: impl FnOnce() -> Op<T>,
    ) -> TensorResult<Var<'t, T>> {
        let (value, needs_grad) = {
            let nodes = self.tape.nodes();
            (f(&nodes[self.id].value)?, nodes[self.id].needs_grad)
        };
        Ok(self.tape.push(value, op(), needs_grad, false))
    }

    fn binary(
        &self,
        rhs: &Var<'t, T>,
        f: impl Fn(&Tensor<T>, &Tensor<T>) -> TensorResult<Tensor<T>>,
        op: Op<T>,
    ) -> TensorResult<Var<'t, T>> {
        debug_assert!(std::ptr::eq(self.tape, rhs.tape), "vars from different tapes");
        let (value, needs_grad) = {
            let nodes = self.tape.nodes();
            (
                f(&nodes[self.id].value, &nodes[rhs.id].value)?,
                Self::needs_grad(&nodes, &[self.id, rhs.id]),
            )
        };
        Ok(self.tape.push(value, op, needs_grad, false))
    }

    fn zip_with(&self, rhs: &Var<'t, T>, name: &'static str, op: Op<T>, f: impl Fn(T, T) -> T) -> TensorResult<Var<'t, T>> {
        self.binary(
            rhs,
            |a, b| {
                same_shape(name, a, b)?;
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape(), data)
            },
            op,
        )
    }

    /// Matrix product `[m x k] * [k x n]`.
    pub fn matmul(&self, rhs: &Var<'t, T>) -> TensorResult<Var<'t, T>> {
        let (m, k, n) = {
            let nodes = self.tape.nodes();
            let (m, k) = rank2("matmul", &nodes[self.id].value)?;
            let (k2, n) = rank2("matmul", &nodes[rhs.id].value)?;
            if k != k2 {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    lhs: vec![m, k],
                    rhs: vec![k2, n],
                });
            }
            (m, k, n)
        };
        self.binary(
            rhs,
            |a, b| {
                let mut out = vec![T::zero(); m * n];
                T::gemm(m, k, n, T::one(), (a.data(), k, 1), (b.data(), n, 1), T::zero(), &mut out);
                Tensor::new([m, n], out)
            },
            Op::MatMul { a: self.id, b: rhs.id, m, k, n },
        )
    }

    pub fn add(&self, rhs: &Var<'t, T>) -> TensorResult<Var<'t, T>> {
        self.zip_with(rhs, "add", Op::Add { a: self.id, b: rhs.id }, |x, y| x + y)
    }

    pub fn sub(&self, rhs: &Var<'t, T>) -> TensorResult<Var<'t, T>> {
        self.zip_with(rhs, "sub", Op::Sub { a: self.id, b: rhs.id }, |x, y| x - y)
    }

    pub fn mul(&self, rhs: &Var<'t, T>) -> TensorResult<Var<'t, T>> {
        self.zip_with(rhs, "mul", Op::Mul { a: self.id, b: rhs.id }, |x, y| x * y)
    }

    /// Element-wise division; any zero denominator is a numeric error.
    pub fn div(&self, rhs: &Var<'t, T>) -> TensorResult<Var<'t, T>> {
        self.binary(
            rhs,
            |a, b| {
                same_shape("div", a, b)?;
                if let Some(pos) = b.data().iter().position(|v| v.is_zero()) {
                    return Err(TensorError::Numeric {
                        op: "div",
                        detail: format!("division by zero at flat index {pos}"),
                    });
                }
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x / y).collect();
                Tensor::new(a.shape(), data)
            },
            Op::Div { a: self.id, b: rhs.id },
        )
    }

    fn row_broadcast(
        &self,
        row: &Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(usize) -> Op<T>,
    ) -> TensorResult<Var<'t, T>> {
        let cols = {
            let nodes = self.tape.nodes();
            let (_, cols) = rank2(name, &nodes[self.id].value)?;
            if nodes[row.id].value.shape() != [cols] {
                return Err(TensorError::ShapeMismatch {
                    op: name,
                    lhs: nodes[self.id].value.shape().to_vec(),
                    rhs: nodes[row.id].value.shape().to_vec(),
                });
            }
            cols
        };
        self.binary(
            row,
            |a, r| {
                let rd = r.data();
                let data = a.data().iter().enumerate().map(|(i, &x)| f(x, rd[i % cols])).collect();
                Tensor::new(a.shape(), data)
            },
            op(cols),
        )
    }

    /// Adds `row` (length = column count) to every row.
    pub fn add_row(&self, row: &Var<'t, T>) -> TensorResult<Var<'t, T>> {
        let (a, r) = (self.id, row.id);
        self.row_broadcast(row, "add_row", |x, y| x + y, |cols| Op::AddRow { a, row: r, cols })
    }

    /// Multiplies every row element-wise by `row`.
    pub fn mul_row(&self, row: &Var<'t, T>) -> TensorResult<Var<'t, T>> {
        let (a, r) = (self.id, row.id);
        self.row_broadcast(row, "mul_row", |x, y| x * y, |cols| Op::MulRow { a, row: r, cols })
    }

    /// Scales row `i` by `col[i]`.
    pub fn scale_rows(&self, col: &Var<'t, T>) -> TensorResult<Var<'t, T>> {
        let (rows, cols) = {
            let nodes = self.tape.nodes();
            let (rows, cols) = rank2("scale_rows", &nodes[self.id].value)?;
            if nodes[col.id].value.shape() != [rows] {
                return Err(TensorError::ShapeMismatch {
                    op: "scale_rows",
                    lhs: vec![rows, cols],
                    rhs: nodes[col.id].value.shape().to_vec(),
                });
            }
            (rows, cols)
        };
        let _ = rows;
        self.binary(
            col,
            |a, c| {
                let cd = c.data();
                let data = a.data().iter().enumerate().map(|(i, &x)| x * cd[i / cols]).collect();
                Tensor::new(a.shape(), data)
            },
            Op::ScaleRows { a: self.id, col: col.id, cols },
        )
    }

    /// `scale * self + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> TensorResult<Var<'t, T>> {
        let (s, b) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        self.unary(|a| Ok(a.map(|x| s * x + b)), || Op::Affine { a: self.id, scale: s })
    }

    pub fn scale(&self, c: f64) -> TensorResult<Var<'t, T>> {
        self.affine(c, 0.0)
    }

    pub fn add_scalar(&self, c: f64) -> TensorResult<Var<'t, T>> {
        self.affine(1.0, c)
    }

    pub fn neg(&self) -> TensorResult<Var<'t, T>> {
        self.affine(-1.0, 0.0)
    }

    /// `1 - self`.
    pub fn one_minus(&self) -> TensorResult<Var<'t, T>> {
        self.affine(-1.0, 1.0)
    }

    pub fn sigmoid(&self) -> TensorResult<Var<'t, T>> {
        self.unary(
            |a| {
                Ok(a.map(|x| {
                    if x >= T::zero() {
                        T::one() / (T::one() + (-x).exp())
                    } else {
                        let e = x.exp();
                        e / (T::one() + e)
                    }
                }))
            },
            || Op::Sigmoid { a: self.id },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> TensorResult<Var<'t, T>> {
        let s = T::from_f64_lossy(slope);
        self.unary(
            |a| Ok(a.map(|x| if x > T::zero() { x } else { s * x })),
            || Op::LeakyRelu { a: self.id, slope: s },
        )
    }

    pub fn abs(&self) -> TensorResult<Var<'t, T>> {
        self.unary(|a| Ok(a.map(|x| x.abs())), || Op::Abs { a: self.id })
    }

    /// Natural log; non-positive inputs are a numeric error.
    pub fn log(&self) -> TensorResult<Var<'t, T>> {
        self.unary(
            |a| {
                if let Some(pos) = a.data().iter().position(|&v| !(v > T::zero())) {
                    return Err(TensorError::Numeric {
                        op: "log",
                        detail: format!("non-positive input {} at flat index {pos}", a.data()[pos]),
                    });
                }
                Ok(a.map(|x| x.ln()))
            },
            || Op::Log { a: self.id },
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self) -> TensorResult<Var<'t, T>> {
        self.unary(|a| Ok(Tensor::scalar(a.data().iter().copied().sum())), || Op::Sum { a: self.id })
    }

    pub fn mean(&self) -> TensorResult<Var<'t, T>> {
        self.unary(
            |a| {
                if a.is_empty() {
                    return Err(TensorError::Numeric {
                        op: "mean",
                        detail: "mean of an empty tensor".into(),
                    });
                }
                let n = T::from_usize(a.len()).unwrap();
                Ok(Tensor::scalar(a.data().iter().copied().sum::<T>() / n))
            },
            || Op::Mean { a: self.id },
        )
    }

    /// Per-row sums of a matrix: `[m x n] -> [m]`.
    pub fn sum_cols(&self) -> TensorResult<Var<'t, T>> {
        let cols = rank2("sum_cols", &self.tape.nodes()[self.id].value)?.1;
        self.unary(
            |a| {
                let data = a.data().chunks(cols.max(1)).map(|r| r.iter().copied().sum()).collect();
                Tensor::new([a.shape()[0]], data)
            },
            || Op::SumCols { a: self.id, cols },
        )
    }

    /// Euclidean norm of each row: `[m x d] -> [m]`.
    pub fn row_l2_norm(&self) -> TensorResult<Var<'t, T>> {
        let cols = rank2("row_l2_norm", &self.tape.nodes()[self.id].value)?.1;
        self.unary(
            |a| {
                let data = a
                    .data()
                    .chunks(cols.max(1))
                    .map(|r| r.iter().map(|&x| x * x).sum::<T>().sqrt())
                    .collect();
                Tensor::new([a.shape()[0]], data)
            },
            || Op::RowNorm { a: self.id, cols },
        )
    }

    /// Row-wise softmax with max subtraction. Rank-1 input is one row.
    pub fn softmax(&self) -> TensorResult<Var<'t, T>> {
        let cols = rows_cols("softmax", &self.tape.nodes()[self.id].value)?.1;
        self.unary(
            |a| {
                check_finite("softmax", a)?;
                let mut data = Vec::with_capacity(a.len());
                for row in a.data().chunks(cols) {
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
                    let total: T = exps.iter().copied().sum();
                    data.extend(exps.into_iter().map(|e| e / total));
                }
                Tensor::new(a.shape(), data)
            },
            || Op::SoftmaxRows { a: self.id, cols },
        )
    }

    /// Row-wise log-softmax. Rank-1 input is one row.
    pub fn log_softmax(&self) -> TensorResult<Var<'t, T>> {
        let cols = rows_cols("log_softmax", &self.tape.nodes()[self.id].value)?.1;
        self.unary(
            |a| {
                check_finite("log_softmax", a)?;
                let mut data = Vec::with_capacity(a.len());
                for row in a.data().chunks(cols) {
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
                    data.extend(row.iter().map(|&x| x - lse));
                }
                Tensor::new(a.shape(), data)
            },
            || Op::LogSoftmaxRows { a: self.id, cols },
        )
    }

    /// Picks rows `idx` of a matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> TensorResult<Var<'t, T>> {
        let (rows, cols) = rank2("gather_rows", &self.tape.nodes()[self.id].value)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Index {
                op: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        self.unary(
            |a| {
                let mut data = Vec::with_capacity(idx.len() * cols);
                for &i in idx {
                    data.extend_from_slice(a.row(i));
                }
                Tensor::new([idx.len(), cols], data)
            },
            || Op::GatherRows {
                a: self.id,
                idx: idx.to_vec(),
                cols,
            },
        )
    }

    /// Flat gather: `out.flat[n] = self.flat[idx[n]]`, reshaped to `shape`.
    pub fn gather(&self, idx: &[usize], shape: impl Into<Vec<usize>>) -> TensorResult<Var<'t, T>> {
        let shape = shape.into();
        let len = self.tape.nodes()[self.id].value.len();
        if let Some(&bad) = idx.iter().find(|&&i| i >= len) {
            return Err(TensorError::Index {
                op: "gather",
                index: bad,
                len,
            });
        }
        self.unary(
            |a| Tensor::new(shape.clone(), idx.iter().map(|&i| a.data()[i]).collect()),
            || Op::Gather {
                a: self.id,
                idx: idx.to_vec(),
            },
        )
    }

    /// Per-column standardization over rows: `(x - mean) / sqrt(var + eps)`.
    pub fn standardize_cols(&self, eps: f64) -> TensorResult<Var<'t, T>> {
        let (rows, cols) = rank2("standardize_cols", &self.tape.nodes()[self.id].value)?;
        let eps = T::from_f64_lossy(eps);
        self.unary(
            |a| {
                let n = T::from_usize(rows.max(1)).unwrap();
                let d = a.data();
                let mut out = vec![T::zero(); d.len()];
                for c in 0..cols {
                    let mean = (0..rows).map(|r| d[r * cols + c]).sum::<T>() / n;
                    let var = (0..rows).map(|r| (d[r * cols + c] - mean).powi(2)).sum::<T>() / n;
                    let inv = T::one() / (var + eps).sqrt();
                    for r in 0..rows {
                        out[r * cols + c] = (d[r * cols + c] - mean) * inv;
                    }
                }
                Tensor::new(a.shape(), out)
            },
            || Op::StandardizeCols {
                a: self.id,
                rows,
                cols,
                eps,
            },
        )
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> TensorResult<Var<'t, T>> {
        let shape = shape.into();
        self.unary(|a| a.clone().reshape(shape.clone()), || Op::Reshape { a: self.id })
    }
}

fn check_finite<T: Real>(op: &'static str, a: &Tensor<T>) -> TensorResult<()> {
    if let Some(pos) = a.data().iter().position(|v| !v.is_finite()) {
        return Err(TensorError::Numeric {
            op,
            detail: format!("non-finite input {} at flat index {pos}", a.data()[pos]),
        });
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    /// Concatenates matrices with equal row counts along the feature axis.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, T>]) -> TensorResult<Var<'t, T>> {
        let (value, needs_grad, layout, rows) = {
            let nodes = self.nodes();
            let first = parts.first().ok_or(TensorError::Numeric {
                op: "concat_cols",
                detail: "nothing to concatenate".into(),
            })?;
            let rows = rank2("concat_cols", &nodes[first.id].value)?.0;
            let mut layout = Vec::with_capacity(parts.len());
            for p in parts {
                let (r, c) = rank2("concat_cols", &nodes[p.id].value)?;
                if r != rows {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat_cols",
                        lhs: nodes[first.id].value.shape().to_vec(),
                        rhs: nodes[p.id].value.shape().to_vec(),
                    });
                }
                layout.push((p.id, c));
            }
            let total: usize = layout.iter().map(|p| p.1).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &(id, _) in &layout {
                    data.extend_from_slice(nodes[id].value.row(r));
                }
            }
            let ids: Vec<usize> = layout.iter().map(|p| p.0).collect();
            (
                Tensor::new([rows, total], data)?,
                Var::needs_grad(&nodes, &ids),
                layout,
                rows,
            )
        };
        Ok(self.push(value, Op::ConcatCols { parts: layout, rows }, needs_grad, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let tape = Tape::<f64>::new();
        let i = tape.constant(Tensor::identity(2));
        assert_eq!(i.matmul(&i).unwrap().value(), Tensor::identity(2));
        let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        assert_eq!(a.matmul(&i).unwrap().value(), t(&[2, 2], &[1., 2., 3., 4.]));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 3]));
        assert!(matches!(a.matmul(&b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn row_norms() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 2], &[0., 0., 3., 4.]));
        assert_eq!(a.row_l2_norm().unwrap().value().data(), &[0.0, 5.0]);
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::<f64>::new();
        let s = tape.constant(t(&[3], &[0., 0., 0.])).softmax().unwrap().value();
        for &v in s.data() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let c = 7.25;
        let s = tape
            .constant(t(&[2], &[c, c + 2f64.ln()]))
            .softmax()
            .unwrap()
            .value();
        assert_abs_diff_eq!(s.data()[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.data()[1], 2.0 / 3.0, epsilon = 1e-12);
        let s = tape.constant(t(&[2], &[0.9, 0.1])).softmax().unwrap().value();
        // 1 / (1 + e^-0.8)
        assert_abs_diff_eq!(s.data()[0], 0.690, epsilon = 1e-3);
        assert_abs_diff_eq!(s.data()[1], 0.310, epsilon = 1e-3);
    }

    #[test]
    fn softmax_rejects_nan() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[f64::NAN, 0.0]));
        assert!(matches!(a.softmax(), Err(TensorError::Numeric { .. })));
    }

    #[test]
    fn activations() {
        let tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::scalar(0.0));
        assert_eq!(z.sigmoid().unwrap().value().item(), 0.5);
        let m = tape.constant(Tensor::scalar(-1.0));
        assert_abs_diff_eq!(m.leaky_relu(0.01).unwrap().value().item(), -0.01);
    }

    #[test]
    fn concat_shape_law() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros([4, 2]));
        let b = tape.constant(Tensor::full([4, 3], 1.0));
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(c.shape(), vec![4, 5]);
        assert_eq!(c.value().row(1), &[0., 0., 1., 1., 1.]);
    }

    #[test]
    fn division_by_zero() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[1., 2.]));
        let b = tape.constant(t(&[2], &[1., 0.]));
        assert!(matches!(a.div(&b), Err(TensorError::Numeric { .. })));
    }

    #[test]
    fn sum_backward_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.param(t(&[2, 3], &[1., -2., 3., 0.5, 0., 9.]));
        let loss = x.sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_backward_is_two_x() {
        let tape = Tape::<f64>::new();
        let data = [1., -2., 3., 0.5];
        let x = tape.param(t(&[4], &data));
        let loss = x.mul(&x).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        let expected: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.wrt(x).data(), &expected[..]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros([3]));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        let c = tape.constant(t(&[2], &[3., 4.]));
        let loss = x.mul(&c).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x).data(), &[3., 4.]);
    }
}
