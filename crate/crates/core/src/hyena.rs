//! The Hyena operator and the residual block wrapped around it.

use serde::{Deserialize, Serialize};

use crate::conv::{fft_conv, short_conv};
use crate::error::{Error, Result};
use crate::filter::{HyenaFilter, HyenaFilterSpec};
use crate::nn::{ForwardCtx, Init, LayerNorm, Linear, Mlp, Param, ParamStore};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyenaBlockSpec {
    pub dim: usize,
    pub order: usize,
    pub seq_len: usize,
    pub filter: HyenaFilterSpec,
    /// Post-block feed-forward widths, `dim` at both ends.
    pub ffn_widths: Vec<usize>,
    pub dropout: f64,
    pub short_width: usize,
}

impl HyenaBlockSpec {
    pub fn new(dim: usize, order: usize, seq_len: usize) -> Self {
        HyenaBlockSpec {
            dim,
            order,
            seq_len,
            filter: HyenaFilterSpec::new(order, seq_len, dim),
            ffn_widths: vec![dim, 2 * dim, dim],
            dropout: 0.03,
            short_width: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        if self.filter.channels != self.dim || self.filter.order != self.order {
            return Err(Error::invalid(format!(
                "block spec: filter is {}x{} but block is order {} width {}",
                self.filter.order, self.filter.channels, self.order, self.dim
            )));
        }
        if self.ffn_widths.first() != Some(&self.dim) || self.ffn_widths.last() != Some(&self.dim) {
            return Err(Error::invalid(format!(
                "block spec: ffn widths {:?} must start and end at {}",
                self.ffn_widths, self.dim
            )));
        }
        if self.short_width % 2 == 0 {
            return Err(Error::invalid("block spec: short filter width must be odd"));
        }
        Ok(())
    }
}

/// Projections, short filters, implicit long filters and output map.
pub struct HyenaOperator<T: Element> {
    pub dim: usize,
    pub order: usize,
    pub in_proj: Linear<T>,
    pub short: Param<T>,
    pub filter: HyenaFilter<T>,
    pub out_proj: Linear<T>,
}

impl<T: Element> HyenaOperator<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, spec: &HyenaBlockSpec) -> Result<Self> {
        spec.validate()?;
        let (d, n, w) = (spec.dim, spec.order, spec.short_width);
        let in_proj = Linear::new(store, &format!("{name}.in_proj"), d, (n + 1) * d);
        let short = store.create(
            format!("{name}.short"),
            &[(n + 1) * d, w],
            Init::Uniform(1.0 / (w as f64).sqrt()),
        );
        let filter = HyenaFilter::new(store, &format!("{name}.filter"), spec.filter.clone())?;
        let out_proj = Linear::new(store, &format!("{name}.out_proj"), d, d);
        Ok(HyenaOperator {
            dim: d,
            order: n,
            in_proj,
            short,
            filter,
            out_proj,
        })
    }

    /// `(v, ξ¹…ξᴺ)`, each `[B, D, L]`.
    pub fn project_inputs(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if x.rank() != 3 || x.shape()[2] != self.dim {
            return Err(Error::shape("project_inputs", x.shape(), &[self.dim]));
        }
        let z = self.in_proj.forward(x)?.transpose(1, 2)?;
        short_conv(&z, &self.short.get())?.chunk(1, self.dim)
    }

    /// Long filters for length `len`, scaled by `1/len` so the causal sum
    /// behaves like an integral over the unit interval.
    pub fn filters(&self, len: usize) -> Result<Vec<Tensor<T>>> {
        let h = self.filter.generate(len)?.scale(1.0 / len as f64);
        (0..self.order)
            .map(|i| h.narrow(0, i, 1)?.reshape(&[self.dim, len]))
            .collect()
    }

    /// `x: [B, L, D] → [B, L, D]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let len = x.shape().get(1).copied().unwrap_or(0);
        let mut proj = self.project_inputs(x)?;
        let v = proj.remove(0);
        let z = hyena_recurrence(&v, &proj, &self.filters(len)?)?;
        self.out_proj.forward(&z.transpose(1, 2)?)
    }
}

/// `z¹ = v`, `zⁿ⁺¹ = ξⁿ ⊙ (hⁿ * zⁿ)`; returns `zᴺ⁺¹`.
pub fn hyena_recurrence<T: Element>(
    v: &Tensor<T>,
    gates: &[Tensor<T>],
    filters: &[Tensor<T>],
) -> Result<Tensor<T>> {
    if gates.len() != filters.len() || gates.is_empty() {
        return Err(Error::invalid(format!(
            "hyena_recurrence: {} gates but {} filters",
            gates.len(),
            filters.len()
        )));
    }
    let mut z = v.clone();
    for (xi, h) in gates.iter().zip(filters) {
        if xi.shape() != v.shape() {
            return Err(Error::shape("hyena_recurrence", xi.shape(), v.shape()));
        }
        z = xi.mul(&fft_conv(h, &z)?)?;
    }
    Ok(z)
}

/// `u' = u + Norm(Hyena(u))`, then `FFN(u')`.
pub struct HyenaBlock<T: Element> {
    pub op: HyenaOperator<T>,
    pub norm: LayerNorm<T>,
    pub ffn: Mlp<T>,
}

impl<T: Element> HyenaBlock<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, spec: &HyenaBlockSpec) -> Result<Self> {
        let op = HyenaOperator::new(store, &format!("{name}.hyena"), spec)?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), spec.dim);
        let ffn = Mlp::new(
            store,
            &format!("{name}.ffn"),
            &spec.ffn_widths,
            spec.dropout,
        )?;
        Ok(HyenaBlock { op, norm, ffn })
    }

    pub fn forward(&self, u: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        let mid = u.add(&self.norm.forward(&self.op.forward(u)?)?)?;
        self.ffn.forward(&mid, ctx)
    }
}

pub fn block_forward<T: Element>(
    block: &HyenaBlock<T>,
    u: &Tensor<T>,
    ctx: &mut ForwardCtx,
) -> Result<Tensor<T>> {
    block.forward(u, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::direct_conv;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn identity_pass_and_annihilation() {
        let v = rand_tensor(&[2, 3, 8], 1);
        let mut imp = vec![0.0; 24];
        (0..3).for_each(|d| imp[d * 8] = 1.0);
        let h = Tensor::from_vec(imp, &[3, 8]).unwrap();
        let y = hyena_recurrence(&v, &[Tensor::ones(&[2, 3, 8])], &[h.clone()]).unwrap();
        y.data()
            .iter()
            .zip(v.data())
            .for_each(|(a, b)| assert!((a - b).abs() < 1e-12));
        let z = hyena_recurrence(&v, &[Tensor::zeros(&[2, 3, 8])], &[h]).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn order_mismatch_rejected() {
        let v = rand_tensor(&[1, 2, 4], 0);
        assert!(hyena_recurrence(&v, &[v.clone(), v.clone()], &[Tensor::zeros(&[2, 4])]).is_err());
    }

    #[test]
    fn recurrence_matches_direct_composition() {
        for len in [1usize, 5, 16, 33, 64] {
            let v = rand_tensor(&[2, 3, len], len as u64);
            let gates = [
                rand_tensor(&[2, 3, len], 100 + len as u64),
                rand_tensor(&[2, 3, len], 200 + len as u64),
            ];
            let filt = [
                rand_tensor(&[3, len], 300 + len as u64),
                rand_tensor(&[3, len], 400 + len as u64),
            ];
            let got = hyena_recurrence(&v, &gates, &filt).unwrap();
            let z2 = gates[0].mul(&direct_conv(&filt[0], &v).unwrap()).unwrap();
            let want = gates[1].mul(&direct_conv(&filt[1], &z2).unwrap()).unwrap();
            let num: f64 = got
                .data()
                .iter()
                .zip(want.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let den: f64 = want.data().iter().map(|b| b * b).sum();
            assert!((num / den.max(1e-300)).sqrt() < 1e-10, "len {len}");
        }
    }

    #[test]
    fn projections_have_expected_shapes() {
        let mut store = ParamStore::<f64>::new(4);
        let op = HyenaOperator::new(&mut store, "h", &HyenaBlockSpec::new(4, 2, 8)).unwrap();
        let parts = op.project_inputs(&rand_tensor(&[1, 8, 4], 2)).unwrap();
        assert_eq!(parts.len(), 3);
        assert!(parts.iter().all(|p| p.shape() == [1, 4, 8]));
        assert!(op.project_inputs(&rand_tensor(&[1, 8, 5], 2)).is_err());
    }

    #[test]
    fn block_is_causal() {
        let mut store = ParamStore::<f64>::new(5);
        let block = HyenaBlock::new(&mut store, "b", &HyenaBlockSpec::new(4, 2, 16)).unwrap();
        let u = rand_tensor(&[1, 16, 4], 3);
        let mut bumped = u.to_vec();
        (0..4).for_each(|c| bumped[9 * 4 + c] += 0.5);
        let u2 = Tensor::from_vec(bumped, &[1, 16, 4]).unwrap();
        let mut ctx = ForwardCtx::eval();
        let a = block.forward(&u, &mut ctx).unwrap();
        let b = block.forward(&u2, &mut ctx).unwrap();
        for t in 0..16 {
            let diff: f64 = (0..4)
                .map(|c| (a.data()[t * 4 + c] - b.data()[t * 4 + c]).abs())
                .sum();
            if t < 9 {
                assert!(diff < 1e-12, "position {t} saw the future");
            } else if t == 9 {
                assert!(diff > 1e-6);
            }
        }
    }
}
