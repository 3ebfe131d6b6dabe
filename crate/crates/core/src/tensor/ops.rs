use super::kernels::{gemm, gemm_view, View};
use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Binary elementwise operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Unary elementwise operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Neg,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    // Branch keeps exp() from overflowing for large |x|.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tensor<T> {
    /// Elementwise binary op. Shapes must match, or one side must hold a
    /// single element (scalar broadcast).
    pub fn binary(&self, op: BinaryOp, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (a, b) = (self, rhs);
        let (shape, a_scalar, b_scalar) = if a.shape() == b.shape() {
            (a.shape().to_vec(), false, false)
        } else if b.numel() == 1 {
            (a.shape().to_vec(), false, true)
        } else if a.numel() == 1 {
            (b.shape().to_vec(), true, false)
        } else {
            return Err(shape_err!(
                "{op:?} of shapes {:?} and {:?}",
                a.shape(),
                b.shape()
            ));
        };
        let n: usize = shape.iter().product();
        let av = |i: usize| if a_scalar { a.data()[0] } else { a.data()[i] };
        let bv = |i: usize| if b_scalar { b.data()[0] } else { b.data()[i] };
        let data: Vec<T> = (0..n)
            .map(|i| match op {
                BinaryOp::Add => av(i) + bv(i),
                BinaryOp::Sub => av(i) - bv(i),
                BinaryOp::Mul => av(i) * bv(i),
            })
            .collect();

        let (ac, bc) = (a.clone(), b.clone());
        let backward = Box::new(move |g: &[T], needs: &[bool]| {
            let reduce = |full: Vec<T>, scalar: bool| {
                if scalar {
                    vec![full.into_iter().fold(T::zero(), |s, v| s + v)]
                } else {
                    full
                }
            };
            let ga = needs[0].then(|| {
                let full: Vec<T> = match op {
                    BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
                    BinaryOp::Mul => g
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * if b_scalar { bc.data()[0] } else { bc.data()[i] })
                        .collect(),
                };
                reduce(full, a_scalar)
            });
            let gb = needs[1].then(|| {
                let full: Vec<T> = match op {
                    BinaryOp::Add => g.to_vec(),
                    BinaryOp::Sub => g.iter().map(|&v| -v).collect(),
                    BinaryOp::Mul => g
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * if a_scalar { ac.data()[0] } else { ac.data()[i] })
                        .collect(),
                };
                reduce(full, b_scalar)
            });
            vec![ga, gb]
        });
        Ok(Tensor::from_op(
            data,
            shape,
            vec![a.clone(), b.clone()],
            backward,
        ))
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryOp::Add, rhs)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryOp::Sub, rhs)
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryOp::Mul, rhs)
    }

    /// Elementwise unary op.
    pub fn unary(&self, op: UnaryOp) -> Tensor<T> {
        let f = |x: T| -> T {
            match op {
                UnaryOp::Relu => x.max(T::zero()),
                UnaryOp::LeakyRelu(alpha) => {
                    if x > T::zero() {
                        x
                    } else {
                        x * T::from_f64(alpha)
                    }
                }
                UnaryOp::Tanh => x.tanh(),
                UnaryOp::Sigmoid => sigmoid(x),
                UnaryOp::Neg => -x,
            }
        };
        let data: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        let y = data.clone();
        let backward = Box::new(move |g: &[T], _: &[bool]| {
            let dx: Vec<T> = g
                .iter()
                .zip(x.data())
                .zip(&y)
                .map(|((&g, &xi), &yi)| match op {
                    UnaryOp::Relu => {
                        if xi > T::zero() {
                            g
                        } else {
                            T::zero()
                        }
                    }
                    UnaryOp::LeakyRelu(alpha) => {
                        if xi > T::zero() {
                            g
                        } else {
                            g * T::from_f64(alpha)
                        }
                    }
                    UnaryOp::Tanh => g * (T::one() - yi * yi),
                    UnaryOp::Sigmoid => g * yi * (T::one() - yi),
                    UnaryOp::Neg => -g,
                })
                .collect();
            vec![Some(dx)]
        });
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], backward)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(UnaryOp::Relu)
    }

    pub fn leaky_relu(&self, alpha: f64) -> Tensor<T> {
        self.unary(UnaryOp::LeakyRelu(alpha))
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(UnaryOp::Tanh)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(UnaryOp::Sigmoid)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(UnaryOp::Neg)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, k: f64) -> Tensor<T> {
        let kt = T::from_f64(k);
        let data = self.data().iter().map(|&v| v * kt).collect();
        let backward =
            Box::new(move |g: &[T], _: &[bool]| vec![Some(g.iter().map(|&v| v * kt).collect())]);
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], backward)
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&self, k: f64) -> Tensor<T> {
        let kt = T::from_f64(k);
        let data = self.data().iter().map(|&v| v + kt).collect();
        let backward = Box::new(move |g: &[T], _: &[bool]| vec![Some(g.to_vec())]);
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], backward)
    }

    /// Sum of all elements, shape `[1]`. Sequential left-to-right.
    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let n = self.numel();
        let backward = Box::new(move |g: &[T], _: &[bool]| vec![Some(vec![g[0]; n])]);
        Tensor::from_op(vec![s], vec![1], vec![self.clone()], backward)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&self) -> Tensor<T> {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) || n != self.numel() {
            return Err(shape_err!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            ));
        }
        let backward = Box::new(|g: &[T], _: &[bool]| vec![Some(g.to_vec())]);
        Ok(Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            backward,
        ))
    }

    /// Collapses all but the first axis: `[n, ...] -> [n, prod(...)]`.
    pub fn flatten(&self) -> Result<Tensor<T>> {
        let n = *self
            .shape()
            .first()
            .ok_or_else(|| shape_err!("flatten of a rank-0 tensor"))?;
        self.reshape(&[n, self.numel() / n])
    }

    /// Matrix product `[m,k]·[k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (a, b) = (self, rhs);
        let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
            return Err(shape_err!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                a.shape(),
                b.shape()
            ));
        };
        if k != k2 {
            return Err(shape_err!("matmul inner dims {k} != {k2}"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, a.data(), b.data(), &mut out);
        let (ac, bc) = (a.clone(), b.clone());
        let backward = Box::new(move |g: &[T], needs: &[bool]| {
            // dA = G·Bᵀ, dB = Aᵀ·G
            let ga = needs[0].then(|| {
                let mut d = vec![T::zero(); m * k];
                gemm_view(
                    View::new(g, m, n),
                    View::new(bc.data(), k, n).t(),
                    &mut d,
                    false,
                );
                d
            });
            let gb = needs[1].then(|| {
                let mut d = vec![T::zero(); k * n];
                gemm_view(
                    View::new(ac.data(), m, k).t(),
                    View::new(g, m, n),
                    &mut d,
                    false,
                );
                d
            });
            vec![ga, gb]
        });
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![a.clone(), b.clone()],
            backward,
        ))
    }
}
