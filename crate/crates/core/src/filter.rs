//! Implicit long filters: `h(t) = ψ(t) · FFN(γ(t))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Param, ParamStore};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyenaFilterSpec {
    pub order: usize,
    pub seq_len: usize,
    pub channels: usize,
    pub freqs: usize,
    /// Full width list, `2K+1` first and `N·D` last.
    pub ffn_widths: Vec<usize>,
    pub omega: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub window_bias: f64,
}

impl HyenaFilterSpec {
    pub fn new(order: usize, seq_len: usize, channels: usize) -> Self {
        let freqs = 8;
        HyenaFilterSpec {
            order,
            seq_len,
            channels,
            freqs,
            ffn_widths: vec![2 * freqs + 1, 64, 64, order * channels],
            omega: 10.0,
            alpha_min: 0.3,
            alpha_max: 8.0,
            window_bias: 0.01,
        }
    }

    /// Returns a copy with the hidden FFN widths replaced.
    pub fn with_hidden(mut self, hidden: &[usize]) -> Self {
        self.ffn_widths = std::iter::once(2 * self.freqs + 1)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(self.order * self.channels))
            .collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.channels == 0 || self.seq_len == 0 || self.freqs == 0 {
            return Err(Error::invalid(
                "filter spec: order, channels, seq_len and freqs must be positive",
            ));
        }
        if self.ffn_widths.len() < 2
            || self.ffn_widths[0] != 2 * self.freqs + 1
            || *self.ffn_widths.last().unwrap() != self.order * self.channels
        {
            return Err(Error::invalid(format!(
                "filter spec: ffn widths {:?} must run from {} to {}",
                self.ffn_widths,
                2 * self.freqs + 1,
                self.order * self.channels
            )));
        }
        if !(self.alpha_min > 0.0 && self.alpha_max >= self.alpha_min) {
            return Err(Error::invalid(format!(
                "filter spec: decay range [{}, {}] must be positive",
                self.alpha_min, self.alpha_max
            )));
        }
        if self.window_bias < 0.0 {
            return Err(Error::invalid(
                "filter spec: window bias must be non-negative",
            ));
        }
        Ok(())
    }

    /// Initial decay rates, log-spaced over `[alpha_min, alpha_max]`.
    pub fn initial_alpha(&self) -> Vec<f64> {
        let c = self.order * self.channels;
        let (lo, hi) = (self.alpha_min.ln(), self.alpha_max.ln());
        (0..c)
            .map(|i| {
                let f = if c == 1 {
                    0.0
                } else {
                    i as f64 / (c - 1) as f64
                };
                (lo + f * (hi - lo)).exp()
            })
            .collect()
    }
}

/// Rows `[t/L, cos(2πkt/L)…, sin(2πkt/L)…]` for `t < L`, `k = 1..=K`.
pub fn positional_encoding<T: Element>(len: usize, freqs: usize) -> Tensor<T> {
    let w = 2 * freqs + 1;
    let mut data = Vec::with_capacity(len * w);
    for t in 0..len {
        let x = t as f64 / len as f64;
        data.push(T::of(x));
        for k in 1..=freqs {
            data.push(T::of((2.0 * std::f64::consts::PI * k as f64 * x).cos()));
        }
        for k in 1..=freqs {
            data.push(T::of((2.0 * std::f64::consts::PI * k as f64 * x).sin()));
        }
    }
    Tensor::from_vec(data, &[len, w]).expect("encoding shape")
}

/// `ψ[c, t] = exp(-alpha[c]·t/L) + bias`, shape `[C, L]`.
pub fn window<T: Element>(len: usize, alpha: &Tensor<T>, bias: f64) -> Result<Tensor<T>> {
    if alpha.rank() != 1 {
        return Err(Error::invalid(format!(
            "window: alpha must be a vector, got {:?}",
            alpha.shape()
        )));
    }
    if let Some(a) = alpha.data().iter().find(|a| !(**a > T::zero())) {
        return Err(Error::invalid(format!(
            "window: decay rate {} is not positive",
            a.to_f64_lossy()
        )));
    }
    if bias < 0.0 {
        return Err(Error::invalid("window: bias must be non-negative"));
    }
    let c = alpha.numel();
    let t = Tensor::from_fn(&[1, len], |i| T::of(i as f64 / len as f64));
    Ok(alpha
        .reshape(&[c, 1])?
        .mul(&t)?
        .neg()
        .exp()
        .add_scalar(bias))
}

/// Learnable filter generator. Decay rates are stored as `ln α` so they stay
/// positive under unconstrained updates.
pub struct HyenaFilter<T: Element> {
    pub spec: HyenaFilterSpec,
    layers: Vec<Linear<T>>,
    pub log_alpha: Param<T>,
}

impl<T: Element> HyenaFilter<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, spec: HyenaFilterSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .ffn_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let pos = if i == 0 {
                    Layer::First
                } else if i + 2 == spec.ffn_widths.len() {
                    Layer::Last
                } else {
                    Layer::Hidden
                };
                sine_layer(
                    store,
                    &format!("{name}.ffn.{i}"),
                    w[0],
                    w[1],
                    spec.omega,
                    pos,
                )
            })
            .collect();
        let log_alpha = spec
            .initial_alpha()
            .into_iter()
            .map(|a| T::of(a.ln()))
            .collect();
        let log_alpha = store.create_with(
            format!("{name}.log_alpha"),
            &[spec.order * spec.channels],
            log_alpha,
        );
        Ok(HyenaFilter {
            spec,
            layers,
            log_alpha,
        })
    }

    /// `exp(θ)`, offset by 1e-30 so an underflowing exponent stays positive.
    pub fn alpha(&self) -> Tensor<T> {
        self.log_alpha.get().exp().add_scalar(1e-30)
    }

    /// `FFN(γ(t))` for every position, shape `[L, N·D]`.
    pub fn ffn(&self, encoding: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = encoding.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.scale(self.spec.omega).sin();
            }
        }
        Ok(h)
    }

    /// Filters `[N, D, len]`, regenerated from the parameters on each call.
    pub fn generate(&self, len: usize) -> Result<Tensor<T>> {
        let (n, d) = (self.spec.order, self.spec.channels);
        let pe = positional_encoding(len, self.spec.freqs);
        let values = self.ffn(&pe)?.transpose(0, 1)?;
        let psi = window(len, &self.alpha(), self.spec.window_bias)?;
        values.mul(&psi)?.reshape(&[n, d, len])
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.numel() + l.bias.numel())
            .sum::<usize>()
            + self.log_alpha.numel()
    }
}

#[derive(Clone, Copy)]
enum Layer {
    First,
    Hidden,
    Last,
}

/// Sine-network initialization: the first layer spreads inputs over a few
/// periods, hidden layers keep `ω·x` of unit scale and the output layer
/// gives filter values of unit variance.
fn sine_layer<T: Element>(
    store: &mut ParamStore<T>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    omega: f64,
    pos: Layer,
) -> Linear<T> {
    let bound = match pos {
        Layer::First => 1.0 / fan_in as f64,
        Layer::Hidden => (6.0 / fan_in as f64).sqrt() / omega,
        Layer::Last => (6.0 / fan_in as f64).sqrt(),
    };
    Linear {
        weight: store.create(
            format!("{name}.weight"),
            &[fan_in, fan_out],
            Init::Uniform(bound),
        ),
        bias: store.create(
            format!("{name}.bias"),
            &[fan_out],
            Init::Uniform(1.0 / (fan_in as f64).sqrt()),
        ),
        fan_in,
        fan_out,
    }
}

/// Free-function form of [`HyenaFilter::generate`] at the configured sequence length.
pub fn generate_filters<T: Element>(filter: &HyenaFilter<T>) -> Result<Tensor<T>> {
    filter.generate(filter.spec.seq_len)
}
