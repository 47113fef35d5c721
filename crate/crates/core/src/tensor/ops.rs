//! Pointwise arithmetic and activations.

use super::broadcast::{binary_map, broadcast_shape, reduce_to_shape};
use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Sin,
    Cos,
    Gelu,
    Neg,
    Sqrt,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(
            self,
            ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul | ElementwiseOp::Div
        )
    }
}

#[inline]
fn gelu<T: Element>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

#[inline]
fn gelu_grad<T: Element>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf());
    let pdf = (-half * x * x).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

impl<T: Element> Tensor<T> {
    /// Dispatches one of the pointwise operations; binary operations need `b`.
    pub fn elementwise(
        op: ElementwiseOp,
        a: &Tensor<T>,
        b: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        match (op.is_binary(), b) {
            (true, None) => Err(Error::invalid(format!("{op:?} needs two operands"))),
            (false, Some(_)) => Err(Error::invalid(format!("{op:?} takes one operand"))),
            (true, Some(b)) => match op {
                ElementwiseOp::Add => a.add(b),
                ElementwiseOp::Sub => a.sub(b),
                ElementwiseOp::Mul => a.mul(b),
                ElementwiseOp::Div => a.div(b),
                _ => unreachable!(),
            },
            (false, None) => Ok(match op {
                ElementwiseOp::Exp => a.exp(),
                ElementwiseOp::Sin => a.sin(),
                ElementwiseOp::Cos => a.cos(),
                ElementwiseOp::Gelu => a.gelu(),
                ElementwiseOp::Neg => a.neg(),
                ElementwiseOp::Sqrt => a.sqrt(),
                _ => unreachable!(),
            }),
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = broadcast_shape(self.shape(), other.shape())
            .map_err(|_| Error::shape("add", self.shape(), other.shape()))?;
        let data = binary_map(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &out_shape,
            |x, y| x + y,
        );
        let shape = out_shape.clone();
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone(), other.clone()],
            "add",
            Box::new(move |g, p, _| {
                p.iter()
                    .map(|t| {
                        t.requires_grad()
                            .then(|| reduce_to_shape(g, &shape, t.shape()))
                    })
                    .collect()
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = broadcast_shape(self.shape(), other.shape())
            .map_err(|_| Error::shape("sub", self.shape(), other.shape()))?;
        let data = binary_map(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &out_shape,
            |x, y| x - y,
        );
        let shape = out_shape.clone();
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone(), other.clone()],
            "sub",
            Box::new(move |g, p, _| {
                let ga = p[0]
                    .requires_grad()
                    .then(|| reduce_to_shape(g, &shape, p[0].shape()));
                let gb = p[1].requires_grad().then(|| {
                    let mut r = reduce_to_shape(g, &shape, p[1].shape());
                    r.iter_mut().for_each(|v| *v = -*v);
                    r
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = broadcast_shape(self.shape(), other.shape())
            .map_err(|_| Error::shape("mul", self.shape(), other.shape()))?;
        let data = binary_map(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &out_shape,
            |x, y| x * y,
        );
        let shape = out_shape.clone();
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone(), other.clone()],
            "mul",
            Box::new(move |g, p, _| {
                let (a, b) = (&p[0], &p[1]);
                let ga = a.requires_grad().then(|| {
                    let full = binary_map(g, &shape, b.data(), b.shape(), &shape, |g, y| g * y);
                    reduce_to_shape(&full, &shape, a.shape())
                });
                let gb = b.requires_grad().then(|| {
                    let full = binary_map(g, &shape, a.data(), a.shape(), &shape, |g, x| g * x);
                    reduce_to_shape(&full, &shape, b.shape())
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = broadcast_shape(self.shape(), other.shape())
            .map_err(|_| Error::shape("div", self.shape(), other.shape()))?;
        let data = binary_map(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &out_shape,
            |x, y| x / y,
        );
        let shape = out_shape.clone();
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone(), other.clone()],
            "div",
            Box::new(move |g, p, out| {
                let (a, b) = (&p[0], &p[1]);
                let ga = a.requires_grad().then(|| {
                    let full = binary_map(g, &shape, b.data(), b.shape(), &shape, |g, y| g / y);
                    reduce_to_shape(&full, &shape, a.shape())
                });
                let gb = b.requires_grad().then(|| {
                    // d(a/b)/db = -(a/b)/b
                    let q: Vec<T> = g.iter().zip(out).map(|(&g, &o)| -g * o).collect();
                    let full = binary_map(&q, &shape, b.data(), b.shape(), &shape, |v, y| v / y);
                    reduce_to_shape(&full, &shape, b.shape())
                });
                vec![ga, gb]
            }),
        ))
    }

    fn unary(&self, op: &'static str, f: impl Fn(T) -> T, df: fn(T, T) -> T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            op,
            Box::new(move |g, p, out| {
                let x = p[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter().zip(out))
                        .map(|(&g, (&x, &y))| g * df(x, y))
                        .collect(),
                )]
            }),
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", T::exp, |_, y| y)
    }

    pub fn sin(&self) -> Tensor<T> {
        self.unary("sin", T::sin, |x, _| x.cos())
    }

    pub fn cos(&self) -> Tensor<T> {
        self.unary("cos", T::cos, |x, _| -x.sin())
    }

    pub fn gelu(&self) -> Tensor<T> {
        self.unary("gelu", gelu, |x, _| gelu_grad(x))
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    /// Square root; the gradient at zero is taken as zero.
    pub fn sqrt(&self) -> Tensor<T> {
        self.unary("sqrt", T::sqrt, |_, y| {
            if y > T::zero() {
                T::one() / (y + y)
            } else {
                T::zero()
            }
        })
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let c = T::of(c);
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            "scale",
            Box::new(move |g, _, _| vec![Some(g.iter().map(|&g| g * c).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::of(c);
        let data = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            "add_scalar",
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_small_vectors() {
        let a = Tensor::<f32>::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let b = Tensor::<f32>::from_vec(vec![3.0, 4.0], &[2]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        let c = Tensor::elementwise(ElementwiseOp::Add, &a, Some(&b)).unwrap();
        assert_eq!(c.data(), &[4.0, 6.0]);
    }

    #[test]
    fn multiply_by_zeros_annihilates() {
        let x = Tensor::<f64>::param(vec![0.4, -1.2, 3.0], &[3]).unwrap();
        let y = x.mul(&x.zeros_like()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2]);
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn operand_count_checked() {
        let a = Tensor::<f32>::zeros(&[2]);
        assert!(Tensor::elementwise(ElementwiseOp::Mul, &a, None).is_err());
        assert!(Tensor::elementwise(ElementwiseOp::Exp, &a, Some(&a)).is_err());
    }

    #[test]
    fn gelu_matches_reference_values() {
        let x = Tensor::<f64>::from_vec(vec![-1.0, 0.0, 1.0, 2.0], &[4]).unwrap();
        let y = x.gelu();
        let expected = [
            -0.158_655_253_931_457,
            0.0,
            0.841_344_746_068_543,
            1.954_499_736_103_642,
        ];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let a = Tensor::<f64>::param(vec![1.0; 6], &[2, 3]).unwrap();
        let b = Tensor::<f64>::param(vec![1.0; 3], &[3]).unwrap();
        a.add(&b).unwrap().sum_all().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0; 3]);
        assert_eq!(a.grad().unwrap(), vec![1.0; 6]);
    }
}
