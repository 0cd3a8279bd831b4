//! Core differentiable operations on [`Var`].

use super::{check_finite, gemm, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Right-hand side of an elementwise op: a same-shape tensor or a scalar.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'g, S: Scalar> {
    Var(Var<'g, S>),
    Scalar(S),
}

impl<'g, S: Scalar> From<Var<'g, S>> for Operand<'g, S> {
    fn from(v: Var<'g, S>) -> Self {
        Operand::Var(v)
    }
}

impl<S: Scalar> From<S> for Operand<'_, S> {
    fn from(v: S) -> Self {
        Operand::Scalar(v)
    }
}

#[inline]
fn apply<S: Scalar>(op: ElemOp, a: S, b: S) -> S {
    match op {
        ElemOp::Add => a + b,
        ElemOp::Sub => a - b,
        ElemOp::Mul => a * b,
        ElemOp::Div => a / b,
        ElemOp::Pow => a.powf(b),
    }
}

/// Partial derivatives (d/da, d/db) of `op` at (a, b) with output y.
#[inline]
fn partials<S: Scalar>(op: ElemOp, a: S, b: S, y: S) -> (S, S) {
    match op {
        ElemOp::Add => (S::one(), S::one()),
        ElemOp::Sub => (S::one(), -S::one()),
        ElemOp::Mul => (b, a),
        ElemOp::Div => (S::one() / b, -a / (b * b)),
        ElemOp::Pow => {
            let da = if b == S::zero() {
                S::zero()
            } else {
                b * a.powf(b - S::one())
            };
            let db = if a > S::zero() { y * a.ln() } else { S::zero() };
            (da, db)
        }
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    /// Elementwise `self (op) rhs`, where `rhs` is a same-shape var or a scalar.
    pub fn elementwise(self, op: ElemOp, rhs: impl Into<Operand<'g, S>>) -> Result<Var<'g, S>> {
        let g = self.graph();
        match rhs.into() {
            Operand::Scalar(b) => {
                if op == ElemOp::Div && b == S::zero() {
                    return Err(Error::Numeric("division by zero".into()));
                }
                let out = {
                    let a = self.value();
                    let data: Vec<S> = a.data().iter().map(|&x| apply(op, x, b)).collect();
                    check_finite(&data, "elementwise")?;
                    Tensor::new(a.shape().to_vec(), data)?
                };
                Ok(g.record(
                    out,
                    &[self],
                    Box::new(move |args| {
                        let a = args.inputs[0].data();
                        let y = args.output.data();
                        let ga = args
                            .grad
                            .iter()
                            .zip(a)
                            .zip(y)
                            .map(|((&gr, &x), &yv)| gr * partials(op, x, b, yv).0)
                            .collect();
                        vec![Some(ga)]
                    }),
                ))
            }
            Operand::Var(other) => {
                let out = {
                    let a = self.value();
                    let b = other.value();
                    if a.shape() != b.shape() {
                        return Err(Error::dim(format!(
                            "elementwise {op:?} on shapes {:?} and {:?}",
                            a.shape(),
                            b.shape()
                        )));
                    }
                    if op == ElemOp::Div && b.data().iter().any(|&v| v == S::zero()) {
                        return Err(Error::Numeric("division by zero".into()));
                    }
                    let data: Vec<S> = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(&x, &y)| apply(op, x, y))
                        .collect();
                    check_finite(&data, "elementwise")?;
                    Tensor::new(a.shape().to_vec(), data)?
                };
                Ok(g.record(
                    out,
                    &[self, other],
                    Box::new(move |args| {
                        let a = args.inputs[0].data();
                        let b = args.inputs[1].data();
                        let y = args.output.data();
                        let n = a.len();
                        let mut ga = Vec::with_capacity(n);
                        let mut gb = Vec::with_capacity(n);
                        for i in 0..n {
                            let (da, db) = partials(op, a[i], b[i], y[i]);
                            ga.push(args.grad[i] * da);
                            gb.push(args.grad[i] * db);
                        }
                        vec![Some(ga), Some(gb)]
                    }),
                ))
            }
        }
    }

    pub fn add(self, rhs: impl Into<Operand<'g, S>>) -> Result<Var<'g, S>> {
        self.elementwise(ElemOp::Add, rhs)
    }

    pub fn sub(self, rhs: impl Into<Operand<'g, S>>) -> Result<Var<'g, S>> {
        self.elementwise(ElemOp::Sub, rhs)
    }

    pub fn mul(self, rhs: impl Into<Operand<'g, S>>) -> Result<Var<'g, S>> {
        self.elementwise(ElemOp::Mul, rhs)
    }

    pub fn div(self, rhs: impl Into<Operand<'g, S>>) -> Result<Var<'g, S>> {
        self.elementwise(ElemOp::Div, rhs)
    }

    pub fn pow(self, rhs: impl Into<Operand<'g, S>>) -> Result<Var<'g, S>> {
        self.elementwise(ElemOp::Pow, rhs)
    }

    /// Elementwise map with a derivative expressed through input and output.
    fn unary(
        self,
        name: &'static str,
        f: impl Fn(S) -> S,
        df: fn(S, S) -> S,
    ) -> Result<Var<'g, S>> {
        let out = {
            let a = self.value();
            let data: Vec<S> = a.data().iter().map(|&x| f(x)).collect();
            check_finite(&data, name)?;
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(move |args| {
                let x = args.inputs[0].data();
                let y = args.output.data();
                let gx = (0..x.len())
                    .map(|i| args.grad[i] * df(x[i], y[i]))
                    .collect();
                vec![Some(gx)]
            }),
        ))
    }

    pub fn neg(self) -> Var<'g, S> {
        self.unary("neg", |x| -x, |_, _| -S::one())
            .expect("negation is total")
    }

    pub fn exp(self) -> Result<Var<'g, S>> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Result<Var<'g, S>> {
        if self.value().data().iter().any(|&v| v <= S::zero()) {
            return Err(Error::Numeric("logarithm of a non-positive value".into()));
        }
        self.unary("ln", |x| x.ln(), |x, _| S::one() / x)
    }

    pub fn relu(self) -> Var<'g, S> {
        self.unary(
            "relu",
            |x| if x > S::zero() { x } else { S::zero() },
            |x, _| if x > S::zero() { S::one() } else { S::zero() },
        )
        .expect("relu is total")
    }

    pub fn sigmoid(self) -> Var<'g, S> {
        self.unary(
            "sigmoid",
            |x| {
                if x >= S::zero() {
                    S::one() / (S::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (S::one() + e)
                }
            },
            |_, y| y * (S::one() - y),
        )
        .expect("sigmoid is total")
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(self, lo: S, hi: S) -> Var<'g, S> {
        let out = {
            let a = self.value();
            let data = a.data().iter().map(|&x| x.max(lo).min(hi)).collect();
            Tensor::new(a.shape().to_vec(), data).expect("same shape")
        };
        self.graph().record(
            out,
            &[self],
            Box::new(move |args| {
                let x = args.inputs[0].data();
                let gx = x
                    .iter()
                    .zip(args.grad)
                    .map(|(&v, &g)| if v >= lo && v <= hi { g } else { S::zero() })
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn sum(self) -> Var<'g, S> {
        let (out, n) = {
            let a = self.value();
            (Tensor::scalar(a.data().iter().copied().sum()), a.numel())
        };
        self.graph().record(
            out,
            &[self],
            Box::new(move |args| vec![Some(vec![args.grad[0]; n])]),
        )
    }

    pub fn mean(self) -> Result<Var<'g, S>> {
        let n = self.value().numel();
        if n == 0 {
            return Err(Error::Numeric("mean of an empty tensor".into()));
        }
        self.sum().mul(S::one() / S::lit(n as f64))
    }

    /// Sum of squared elements.
    pub fn sum_squares(self) -> Var<'g, S> {
        let out = Tensor::scalar(self.value().sum_squares());
        self.graph().record(
            out,
            &[self],
            Box::new(|args| {
                let two = S::lit(2.0);
                let g = args.grad[0];
                vec![Some(
                    args.inputs[0].data().iter().map(|&x| two * x * g).collect(),
                )]
            }),
        )
    }

    /// Inner product with a same-shape constant weight array.
    pub fn weighted_sum(self, weights: &[S]) -> Result<Var<'g, S>> {
        let out = {
            let a = self.value();
            if a.numel() != weights.len() {
                return Err(Error::dim(format!(
                    "weighted_sum of {} elements with {} weights",
                    a.numel(),
                    weights.len()
                )));
            }
            Tensor::scalar(a.data().iter().zip(weights).map(|(&x, &w)| x * w).sum())
        };
        let w = weights.to_vec();
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(move |args| vec![Some(w.iter().map(|&wi| wi * args.grad[0]).collect())]),
        ))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'g, S>> {
        let out = self
            .value()
            .clone()
            .with_requires_grad(false)
            .reshape(shape)?;
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(|args| vec![Some(args.grad.to_vec())]),
        ))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(self, rhs: Var<'g, S>) -> Result<Var<'g, S>> {
        let (out, m, k, n) = {
            let a = self.value();
            let b = rhs.value();
            let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
                return Err(Error::dim(format!(
                    "matmul needs rank-2 operands, got {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            };
            if k != k2 {
                return Err(Error::dim(format!(
                    "matmul inner dimensions differ: {:?} x {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut c = vec![S::zero(); m * n];
            gemm(
                false,
                false,
                m,
                k,
                n,
                S::one(),
                a.data(),
                b.data(),
                S::zero(),
                &mut c,
            );
            (Tensor::new([m, n], c)?, m, k, n)
        };
        Ok(self.graph().record(
            out,
            &[self, rhs],
            Box::new(move |args| {
                let a = args.inputs[0].data();
                let b = args.inputs[1].data();
                let g = args.grad;
                let mut ga = vec![S::zero(); m * k];
                gemm(false, true, m, n, k, S::one(), g, b, S::zero(), &mut ga);
                let mut gb = vec![S::zero(); k * n];
                gemm(true, false, k, m, n, S::one(), a, g, S::zero(), &mut gb);
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, S>> {
        let (out, shape) = {
            let a = self.value();
            let shape = a.shape().to_vec();
            if axis >= shape.len() || start + len > shape[axis] {
                return Err(Error::dim(format!(
                    "narrow({axis}, {start}, {len}) on shape {shape:?}"
                )));
            }
            let (outer, inner) = split_axis(&shape, axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * shape[axis] * inner + start * inner;
                data.extend_from_slice(&a.data()[base..base + len * inner]);
            }
            let mut out_shape = shape.clone();
            out_shape[axis] = len;
            (Tensor::new(out_shape, data)?, shape)
        };
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(move |args| {
                let (outer, inner) = split_axis(&shape, axis);
                let mut gx = vec![S::zero(); shape.iter().product()];
                for o in 0..outer {
                    let base = o * shape[axis] * inner + start * inner;
                    let src = &args.grad[o * len * inner..(o + 1) * len * inner];
                    gx[base..base + len * inner].copy_from_slice(src);
                }
                vec![Some(gx)]
            }),
        ))
    }
}

/// Concatenates vars along `axis`; all other dimensions must agree.
pub fn concat<'g, S: Scalar>(parts: &[Var<'g, S>], axis: usize) -> Result<Var<'g, S>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat of nothing"))?;
    let graph: &'g Graph<S> = first.graph();
    let (out, sizes, base_shape) = {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base_shape = values[0].shape().to_vec();
        if axis >= base_shape.len() {
            return Err(Error::dim(format!(
                "concat axis {axis} on shape {base_shape:?}"
            )));
        }
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!("concat of {base_shape:?} and {s:?}")));
            }
        }
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let (outer, inner) = split_axis(&base_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &len) in values.iter().zip(&sizes) {
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base_shape.clone();
        shape[axis] = total;
        (Tensor::new(shape, data)?, sizes, base_shape)
    };
    Ok(graph.record(
        out,
        parts,
        Box::new(move |args| {
            let (outer, inner) = split_axis(&base_shape, axis);
            let total: usize = sizes.iter().sum();
            let mut grads: Vec<Vec<S>> = sizes
                .iter()
                .map(|&len| Vec::with_capacity(outer * len * inner))
                .collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (gp, &len) in grads.iter_mut().zip(&sizes) {
                    gp.extend_from_slice(&args.grad[off..off + len * inner]);
                    off += len * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }),
    ))
}

/// Sum of several same-shape vars.
pub fn sum_all<'g, S: Scalar>(parts: &[Var<'g, S>]) -> Result<Var<'g, S>> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::dim("sum of nothing"))?;
    rest.iter().try_fold(*first, |acc, &p| acc.add(p))
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}
