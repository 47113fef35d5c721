//! Named parameters and the small layers the operator is assembled from.

use std::cell::RefCell;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

struct ParamSlot<T: Element> {
    name: String,
    value: RefCell<Tensor<T>>,
}

/// Shared handle to a trainable tensor. Layers hold handles; the optimizer
/// swaps in updated leaves through the same handle.
pub struct Param<T: Element>(Rc<ParamSlot<T>>);

impl<T: Element> Clone for Param<T> {
    fn clone(&self) -> Self {
        Param(Rc::clone(&self.0))
    }
}

impl<T: Element> Param<T> {
    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn get(&self) -> Tensor<T> {
        self.0.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.value.borrow().numel()
    }

    /// Replaces the value with a fresh trainable leaf (dropping any gradient).
    pub fn set(&self, data: Vec<T>) -> Result<()> {
        let shape = self.shape();
        *self.0.value.borrow_mut() = Tensor::param(data, &shape)?;
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.value.borrow().grad()
    }

    pub fn zero_grad(&self) {
        self.0.value.borrow().zero_grad();
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-b, b]`.
    Uniform(f64),
    Normal(f64),
}

/// Registry of every parameter in creation order, plus the RNG used to
/// initialize them.
pub struct ParamStore<T: Element> {
    params: Vec<Param<T>>,
    rng: ChaCha8Rng,
}

impl<T: Element> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn create(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Param<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Uniform(b) => (0..n).map(|_| T::of(self.rng.gen_range(-b..=b))).collect(),
            Init::Normal(s) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    T::of(s * z)
                })
                .collect(),
        };
        self.create_with(name, shape, data)
    }

    pub fn create_with(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        data: Vec<T>,
    ) -> Param<T> {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name() != name),
            "duplicate parameter {name}"
        );
        let p = Param(Rc::new(ParamSlot {
            name,
            value: RefCell::new(Tensor::param(data, shape).expect("init data matches shape")),
        }));
        self.params.push(p.clone());
        p
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name() == name)
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Param::zero_grad);
    }
}

/// Per-call forward state: train/eval switch and the dropout stream.
pub struct ForwardCtx {
    pub training: bool,
    pub rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64) -> Self {
        ForwardCtx {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dropout<T: Element>(&mut self, x: &Tensor<T>, p: f64) -> Result<Tensor<T>> {
        if self.training && p > 0.0 {
            x.dropout(p, &mut self.rng)
        } else {
            Ok(x.clone())
        }
    }
}

/// `y = x·W + b` over the last axis; `W` is stored `[in, out]`.
pub struct Linear<T: Element> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl<T: Element> Linear<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Linear {
            weight: store.create(
                format!("{name}.weight"),
                &[fan_in, fan_out],
                Init::Uniform(bound),
            ),
            bias: store.create(format!("{name}.bias"), &[fan_out], Init::Zeros),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().last() != Some(&self.fan_in) {
            return Err(Error::shape(
                "linear",
                x.shape(),
                &[self.fan_in, self.fan_out],
            ));
        }
        x.matmul(&self.weight.get())?.add(&self.bias.get())
    }
}

/// Dense stack with GELU between layers and optional dropout after each
/// hidden activation.
pub struct Mlp<T: Element> {
    layers: Vec<Linear<T>>,
    dropout: f64,
}

impl<T: Element> Mlp<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        dropout: f64,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid(format!(
                "{name}: an MLP needs at least two widths, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Ok(Mlp { layers, dropout })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = ctx.dropout(&h.gelu(), self.dropout)?;
            }
        }
        Ok(h)
    }
}

pub struct LayerNorm<T: Element> {
    pub gain: Param<T>,
    pub bias: Param<T>,
    pub eps: f64,
}

impl<T: Element> LayerNorm<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.create(format!("{name}.gain"), &[dim], Init::Ones),
            bias: store.create(format!("{name}.bias"), &[dim], Init::Zeros),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(&self.gain.get(), &self.bias.get(), self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_counts_and_shapes() {
        let mut store = ParamStore::<f32>::new(0);
        let lin = Linear::new(&mut store, "l", 3, 5);
        assert_eq!(store.num_params(), 20);
        let y = lin.forward(&Tensor::ones(&[2, 7, 3])).unwrap();
        assert_eq!(y.shape(), &[2, 7, 5]);
        assert!(lin.forward(&Tensor::ones(&[2, 4])).is_err());
    }

    #[test]
    fn param_set_drops_gradient() {
        let mut store = ParamStore::<f64>::new(1);
        let p = store.create("w", &[2], Init::Ones);
        p.get().sum_all().backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![1.0, 1.0]);
        p.set(vec![3.0, 4.0]).unwrap();
        assert!(p.grad().is_none());
        assert_eq!(p.get().data(), &[3.0, 4.0]);
    }

    #[test]
    fn same_seed_same_init() {
        let mut a = ParamStore::<f32>::new(9);
        let mut b = ParamStore::<f32>::new(9);
        let pa = a.create("w", &[16], Init::Uniform(0.5));
        let pb = b.create("w", &[16], Init::Uniform(0.5));
        assert_eq!(pa.get().data(), pb.get().data());
    }
}
