//! The full operator: encoder, latent Hyena stack, query encoder,
//! cross-attention decoder, propagator and output head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::CrossAttention;
use crate::error::{Error, Result};
use crate::filter::HyenaFilterSpec;
use crate::hyena::{HyenaBlock, HyenaBlockSpec, HyenaOperator};
use crate::nn::{ForwardCtx, Mlp, ParamStore};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    DiffusionReaction1d,
    NavierStokes2d,
}

impl Problem {
    pub fn grid_channels(self) -> usize {
        match self {
            Problem::DiffusionReaction1d => 1,
            Problem::NavierStokes2d => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub problem: Problem,
    pub input_channels: usize,
    pub grid_channels: usize,
    pub output_channels: usize,
    pub seq_len: usize,
    pub order: usize,
    pub filter_freqs: usize,
    pub filter_hidden: Vec<usize>,
    pub dropout: f64,
    /// Embedding widths, `input_channels + grid_channels` first.
    pub encoder_top_widths: Vec<usize>,
    pub encoder_blocks: usize,
    pub encoder_ffn_widths: Vec<usize>,
    /// Projection to the latent width.
    pub latent_widths: Vec<usize>,
    pub latent_blocks: usize,
    pub latent_ffn_widths: Vec<usize>,
    /// `grid_channels`, then the Fourier feature width, then the query MLP.
    pub query_top_widths: Vec<usize>,
    pub rff_scale: f64,
    pub cross_attn_dim: usize,
    pub cross_attn_heads: usize,
    pub cross_attn_ffn_widths: Vec<usize>,
    pub decoder_hyena_blocks: usize,
    /// Empty when the propagator runs at the query width.
    pub query_bottom_widths: Vec<usize>,
    pub propagator_widths: Vec<usize>,
    /// Number of distinct propagator MLPs; with `propagator_shared` one MLP
    /// is applied once per output step.
    pub propagator_count: usize,
    pub propagator_shared: bool,
    pub decoder_widths: Vec<usize>,
    pub max_horizon: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Diffusion-reaction model at the published widths.
    pub fn paper_1d() -> Self {
        ModelConfig {
            problem: Problem::DiffusionReaction1d,
            input_channels: 1,
            grid_channels: 1,
            output_channels: 1,
            seq_len: 256,
            order: 2,
            filter_freqs: 8,
            filter_hidden: vec![64, 64],
            dropout: 0.03,
            encoder_top_widths: vec![2, 128],
            encoder_blocks: 8,
            encoder_ffn_widths: vec![128, 256, 128],
            latent_widths: vec![128, 128],
            latent_blocks: 24,
            latent_ffn_widths: vec![128, 256, 128],
            query_top_widths: vec![1, 128, 128],
            rff_scale: 1.0,
            cross_attn_dim: 128,
            cross_attn_heads: 8,
            cross_attn_ffn_widths: vec![128, 256, 128],
            decoder_hyena_blocks: 3,
            query_bottom_widths: vec![],
            propagator_widths: vec![128, 128, 128],
            propagator_count: 3,
            propagator_shared: false,
            decoder_widths: vec![128, 64, 1],
            max_horizon: 1,
            seed: 0,
        }
    }

    /// Navier-Stokes model at the published widths: 10 input snapshots plus
    /// two grid coordinates on a flattened 32×32 grid.
    pub fn paper_2d() -> Self {
        ModelConfig {
            problem: Problem::NavierStokes2d,
            input_channels: 10,
            grid_channels: 2,
            output_channels: 1,
            seq_len: 1024,
            order: 2,
            filter_freqs: 8,
            filter_hidden: vec![64, 64],
            dropout: 0.03,
            encoder_top_widths: vec![12, 96],
            encoder_blocks: 8,
            encoder_ffn_widths: vec![96, 192, 96],
            latent_widths: vec![96, 192],
            latent_blocks: 22,
            latent_ffn_widths: vec![192, 384, 192],
            query_top_widths: vec![2, 192, 192],
            rff_scale: 1.0,
            cross_attn_dim: 192,
            cross_attn_heads: 4,
            cross_attn_ffn_widths: vec![192, 384, 192],
            decoder_hyena_blocks: 3,
            query_bottom_widths: vec![192, 384],
            propagator_widths: vec![384, 384, 384],
            propagator_count: 1,
            propagator_shared: true,
            decoder_widths: vec![384, 192, 96, 1],
            max_horizon: 10,
            seed: 0,
        }
    }

    /// Same topology as [`ModelConfig::paper_1d`] with every width set to
    /// `width` and one block per stack.
    pub fn desk_1d(width: usize) -> Self {
        let w = width;
        ModelConfig {
            filter_hidden: vec![32, 32],
            encoder_top_widths: vec![2, w],
            encoder_blocks: 2,
            encoder_ffn_widths: vec![w, 2 * w, w],
            latent_widths: vec![w, w],
            latent_blocks: 1,
            latent_ffn_widths: vec![w, 2 * w, w],
            query_top_widths: vec![1, w, w],
            cross_attn_dim: w,
            cross_attn_heads: 2,
            cross_attn_ffn_widths: vec![w, 2 * w, w],
            decoder_hyena_blocks: 1,
            propagator_widths: vec![w, w, w],
            propagator_count: 1,
            decoder_widths: vec![w, w / 2, 1],
            ..Self::paper_1d()
        }
    }

    /// Small 2D model with `steps_in` input snapshots and up to `horizon`
    /// predicted snapshots on an `n × n` grid.
    pub fn desk_2d(width: usize, n: usize, steps_in: usize, horizon: usize) -> Self {
        let w = width;
        ModelConfig {
            input_channels: steps_in,
            seq_len: n * n,
            filter_hidden: vec![32, 32],
            encoder_top_widths: vec![steps_in + 2, w],
            encoder_blocks: 1,
            encoder_ffn_widths: vec![w, 2 * w, w],
            latent_widths: vec![w, w],
            latent_blocks: 1,
            latent_ffn_widths: vec![w, 2 * w, w],
            query_top_widths: vec![2, w, w],
            cross_attn_dim: w,
            cross_attn_heads: 1,
            cross_attn_ffn_widths: vec![w, 2 * w, w],
            decoder_hyena_blocks: 1,
            query_bottom_widths: vec![w, w],
            propagator_widths: vec![w, w, w],
            decoder_widths: vec![w, w / 2, 1],
            max_horizon: horizon,
            ..Self::paper_2d()
        }
    }

    pub fn with_seq_len(mut self, len: usize) -> Self {
        self.seq_len = len;
        self
    }

    pub fn hyena_dim(&self) -> usize {
        *self.encoder_top_widths.last().unwrap_or(&0)
    }

    pub fn latent_dim(&self) -> usize {
        *self.latent_widths.last().unwrap_or(&0)
    }

    pub fn query_dim(&self) -> usize {
        *self.query_top_widths.last().unwrap_or(&0)
    }

    fn propagator_dim(&self) -> usize {
        self.query_bottom_widths
            .last()
            .copied()
            .unwrap_or_else(|| self.query_dim())
    }

    pub fn block_spec(&self, dim: usize, seq_len: usize, ffn: &[usize]) -> HyenaBlockSpec {
        HyenaBlockSpec {
            dim,
            order: self.order,
            seq_len,
            filter: HyenaFilterSpec {
                freqs: self.filter_freqs,
                ..HyenaFilterSpec::new(self.order, seq_len, dim)
            }
            .with_hidden(&self.filter_hidden),
            ffn_widths: ffn.to_vec(),
            dropout: self.dropout,
            short_width: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.grid_channels != self.problem.grid_channels() {
            return bad(format!(
                "grid_channels {} does not match the problem",
                self.grid_channels
            ));
        }
        if self.encoder_top_widths.first() != Some(&(self.input_channels + self.grid_channels)) {
            return bad(format!(
                "encoder_top_widths {:?} must start at input_channels + grid_channels = {}",
                self.encoder_top_widths,
                self.input_channels + self.grid_channels
            ));
        }
        let d = self.hyena_dim();
        let ends =
            |w: &[usize], a: usize, b: usize| w.len() >= 2 && w[0] == a && w[w.len() - 1] == b;
        if !ends(&self.encoder_ffn_widths, d, d) {
            return bad(format!(
                "encoder_ffn_widths {:?} must run {d} -> {d}",
                self.encoder_ffn_widths
            ));
        }
        if !ends(&self.latent_widths, d, self.latent_dim()) {
            return bad(format!(
                "latent_widths {:?} must start at {d}",
                self.latent_widths
            ));
        }
        let l = self.latent_dim();
        if !ends(&self.latent_ffn_widths, l, l) {
            return bad(format!(
                "latent_ffn_widths {:?} must run {l} -> {l}",
                self.latent_ffn_widths
            ));
        }
        let q = self.query_dim();
        if self.query_top_widths.len() < 3
            || self.query_top_widths[0] != self.grid_channels
            || self.query_top_widths[1] % 2 != 0
        {
            return bad(format!(
                "query_top_widths {:?} must be [grid_channels, even feature width, ...]",
                self.query_top_widths
            ));
        }
        if !ends(&self.cross_attn_ffn_widths, q, q) {
            return bad(format!(
                "cross_attn_ffn_widths {:?} must run {q} -> {q}",
                self.cross_attn_ffn_widths
            ));
        }
        if self.cross_attn_heads == 0 || self.cross_attn_dim % self.cross_attn_heads != 0 {
            return bad(format!(
                "{} heads do not divide cross-attention width {}",
                self.cross_attn_heads, self.cross_attn_dim
            ));
        }
        if !self.query_bottom_widths.is_empty()
            && !ends(&self.query_bottom_widths, q, self.propagator_dim())
        {
            return bad(format!(
                "query_bottom_widths {:?} must start at {q}",
                self.query_bottom_widths
            ));
        }
        let p = self.propagator_dim();
        if !ends(&self.propagator_widths, p, p) {
            return bad(format!(
                "propagator_widths {:?} must run {p} -> {p}",
                self.propagator_widths
            ));
        }
        if !ends(&self.decoder_widths, p, self.output_channels) {
            return bad(format!(
                "decoder_widths {:?} must run {p} -> {}",
                self.decoder_widths, self.output_channels
            ));
        }
        if self.max_horizon == 0 || (!self.propagator_shared && self.max_horizon != 1) {
            return bad(
                "max_horizon must be 1 for unshared propagators and positive otherwise".into(),
            );
        }
        if self.propagator_count == 0 || (self.propagator_shared && self.propagator_count != 1) {
            return bad("propagator_count must be positive, and 1 when shared".into());
        }
        if self.order == 0 || self.seq_len == 0 {
            return bad("order and seq_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.rff_scale > 0.0) {
            return bad("dropout must lie in [0, 1) and rff_scale must be positive".into());
        }
        Ok(())
    }
}

/// Encoder output `u_L`, `[B, L, latent_dim]`.
pub struct LatentState<T: Element> {
    pub u: Tensor<T>,
}

/// Frozen Gaussian projection `B: [G, m]` with features
/// `[cos(2π x·B), sin(2π x·B)]`.
pub struct RandomFourierFeatures<T: Element> {
    pub matrix: Tensor<T>,
}

impl<T: Element> RandomFourierFeatures<T> {
    pub fn new(grid_channels: usize, map_size: usize, scale: f64, seed: u64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::invalid("fourier features: scale must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d_cafe_0001);
        let normal = Normal::new(0.0, scale).map_err(|e| Error::invalid(e.to_string()))?;
        let data = (0..grid_channels * map_size)
            .map(|_| T::of(normal.sample(&mut rng)))
            .collect();
        Ok(RandomFourierFeatures {
            matrix: Tensor::from_vec(data, &[grid_channels, map_size])?,
        })
    }

    pub fn map_size(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn forward(&self, coords: &Tensor<T>) -> Result<Tensor<T>> {
        let phase = coords
            .matmul(&self.matrix)?
            .scale(2.0 * std::f64::consts::PI);
        Tensor::concat(&[phase.cos(), phase.sin()], phase.rank() - 1)
    }
}

pub fn random_fourier_features<T: Element>(
    coords: &Tensor<T>,
    map_size: usize,
    scale: f64,
    seed: u64,
) -> Result<Tensor<T>> {
    let g = *coords
        .shape()
        .last()
        .ok_or_else(|| Error::invalid("fourier features of a scalar"))?;
    RandomFourierFeatures::new(g, map_size, scale, seed)?.forward(coords)
}

pub struct HnoModel<T: Element = f32> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    embed: Mlp<T>,
    encoder: Vec<HyenaBlock<T>>,
    to_latent: Mlp<T>,
    latent: Vec<HyenaBlock<T>>,
    rff: RandomFourierFeatures<T>,
    query: Mlp<T>,
    attn: CrossAttention<T>,
    decoder_hyena: Vec<HyenaOperator<T>>,
    attn_ffn: Mlp<T>,
    query_bottom: Option<Mlp<T>>,
    propagators: Vec<Mlp<T>>,
    head: Mlp<T>,
}

impl<T: Element> HnoModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new(c.seed);
        let s = &mut store;
        let embed = Mlp::new(s, "encoder.embed", &c.encoder_top_widths, 0.0)?;
        let spec = c.block_spec(c.hyena_dim(), c.seq_len, &c.encoder_ffn_widths);
        let encoder = (0..c.encoder_blocks)
            .map(|i| HyenaBlock::new(s, &format!("encoder.block{i}"), &spec))
            .collect::<Result<_>>()?;
        let to_latent = Mlp::new(s, "encoder.to_latent", &c.latent_widths, 0.0)?;
        let spec = c.block_spec(c.latent_dim(), c.seq_len, &c.latent_ffn_widths);
        let latent = (0..c.latent_blocks)
            .map(|i| HyenaBlock::new(s, &format!("latent.block{i}"), &spec))
            .collect::<Result<_>>()?;
        let rff = RandomFourierFeatures::new(
            c.grid_channels,
            c.query_top_widths[1] / 2,
            c.rff_scale,
            c.seed,
        )?;
        let query = Mlp::new(s, "decoder.query", &c.query_top_widths[1..], 0.0)?;
        let q = c.query_dim();
        let attn = CrossAttention::new(
            s,
            "decoder.attn",
            q,
            c.latent_dim(),
            c.cross_attn_dim,
            c.cross_attn_heads,
        )?;
        let spec = c.block_spec(q, c.seq_len, &[q, q]);
        let decoder_hyena = (0..c.decoder_hyena_blocks)
            .map(|i| HyenaOperator::new(s, &format!("decoder.hyena{i}"), &spec))
            .collect::<Result<_>>()?;
        let attn_ffn = Mlp::new(s, "decoder.attn_ffn", &c.cross_attn_ffn_widths, c.dropout)?;
        let query_bottom = if c.query_bottom_widths.is_empty() {
            None
        } else {
            Some(Mlp::new(
                s,
                "decoder.query_bottom",
                &c.query_bottom_widths,
                0.0,
            )?)
        };
        let propagators = (0..c.propagator_count)
            .map(|i| Mlp::new(s, &format!("propagator{i}"), &c.propagator_widths, 0.0))
            .collect::<Result<_>>()?;
        let head = Mlp::new(s, "head", &c.decoder_widths, 0.0)?;
        Ok(HnoModel {
            config,
            store,
            embed,
            encoder,
            to_latent,
            latent,
            rff,
            query,
            attn,
            decoder_hyena,
            attn_ffn,
            query_bottom,
            propagators,
            head,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// `fields: [B, L, C]`, `grid: [L, G]`.
    pub fn encode(
        &self,
        fields: &Tensor<T>,
        grid: &Tensor<T>,
        ctx: &mut ForwardCtx,
    ) -> Result<LatentState<T>> {
        let c = &self.config;
        if fields.rank() != 3 || fields.shape()[2] != c.input_channels {
            return Err(Error::shape("encode", fields.shape(), &[c.input_channels]));
        }
        let (b, l) = (fields.shape()[0], fields.shape()[1]);
        if grid.shape() != [l, c.grid_channels] {
            return Err(Error::shape("encode", grid.shape(), &[l, c.grid_channels]));
        }
        let grid =
            grid.reshape(&[1, l, c.grid_channels])?
                .broadcast_to(&[b, l, c.grid_channels])?;
        let mut u = self
            .embed
            .forward(&Tensor::concat(&[fields.clone(), grid], 2)?, ctx)?;
        let mut agg: Option<Tensor<T>> = None;
        for block in &self.encoder {
            u = block.forward(&u, ctx)?;
            agg = Some(match agg {
                Some(a) => a.add(&u)?,
                None => u.clone(),
            });
        }
        let mut u = self.to_latent.forward(&agg.unwrap_or(u), ctx)?;
        let mut agg: Option<Tensor<T>> = None;
        for block in &self.latent {
            u = block.forward(&u, ctx)?;
            agg = Some(match agg {
                Some(a) => a.add(&u)?,
                None => u.clone(),
            });
        }
        Ok(LatentState {
            u: agg.unwrap_or(u),
        })
    }

    /// Query embedding `p⁰` for coordinates `[L_out, G]`, shape `[L_out, q]`.
    pub fn query_embedding(&self, coords: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        if coords.rank() != 2 || coords.shape()[1] != self.config.grid_channels {
            return Err(Error::shape(
                "query",
                coords.shape(),
                &[self.config.grid_channels],
            ));
        }
        self.query.forward(&self.rff.forward(coords)?, ctx)
    }

    pub fn fourier_features(&self) -> &RandomFourierFeatures<T> {
        &self.rff
    }

    /// Output `[B, L_out, output_channels · horizon]`, step-major.
    pub fn decode(
        &self,
        coords: &Tensor<T>,
        latent: &LatentState<T>,
        horizon: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor<T>> {
        let c = &self.config;
        if horizon == 0 || horizon > c.max_horizon {
            return Err(Error::invalid(format!(
                "horizon {horizon} outside 1..={}",
                c.max_horizon
            )));
        }
        let b = latent.u.shape()[0];
        let p0 = self.query_embedding(coords, ctx)?;
        let (lq, q) = (p0.shape()[0], p0.shape()[1]);
        let p0 = p0.reshape(&[1, lq, q])?.broadcast_to(&[b, lq, q])?;
        let mut p = p0.add(&self.attn.forward(&p0, &latent.u)?)?;
        for op in &self.decoder_hyena {
            p = p.add(&op.forward(&p)?)?;
        }
        p = p.add(&self.attn_ffn.forward(&p, ctx)?)?;
        let mut z = match &self.query_bottom {
            Some(m) => m.forward(&p, ctx)?,
            None => p,
        };
        if c.propagator_shared {
            let mut outs = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                z = z.add(&self.propagators[0].forward(&z, ctx)?)?;
                outs.push(self.head.forward(&z, ctx)?);
            }
            Tensor::concat(&outs, 2)
        } else {
            for m in &self.propagators {
                z = z.add(&m.forward(&z, ctx)?)?;
            }
            self.head.forward(&z, ctx)
        }
    }

    /// Encode then decode at the input grid.
    pub fn forward(
        &self,
        fields: &Tensor<T>,
        grid: &Tensor<T>,
        horizon: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor<T>> {
        if horizon == 0 || horizon > self.config.max_horizon {
            return Err(Error::invalid(format!(
                "horizon {horizon} outside 1..={}",
                self.config.max_horizon
            )));
        }
        let latent = self.encode(fields, grid, ctx)?;
        self.decode(grid, &latent, horizon, ctx)
    }
}

pub fn model_forward<T: Element>(
    model: &HnoModel<T>,
    fields: &Tensor<T>,
    grid: &Tensor<T>,
    horizon: usize,
    ctx: &mut ForwardCtx,
) -> Result<Tensor<T>> {
    model.forward(fields, grid, horizon, ctx)
}

/// Uniform grid on `[0, 1)` with `n` points, shape `[n, 1]`.
pub fn grid_1d<T: Element>(n: usize) -> Tensor<T> {
    Tensor::from_fn(&[n, 1], |i| T::of(i as f64 / n as f64))
}

/// Row-major `n × n` grid on `[0, 1)²`, shape `[n², 2]` with `(x, y)` rows.
pub fn grid_2d<T: Element>(n: usize) -> Tensor<T> {
    Tensor::from_fn(&[n * n, 2], |i| {
        let (p, c) = (i / 2, i % 2);
        let v = if c == 0 { p % n } else { p / n };
        T::of(v as f64 / n as f64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            filter_hidden: vec![8],
            filter_freqs: 2,
            ..ModelConfig::desk_1d(8)
        }
        .with_seq_len(16)
    }

    #[test]
    fn presets_validate() {
        for c in [
            ModelConfig::paper_1d(),
            ModelConfig::paper_2d(),
            ModelConfig::desk_1d(16),
            ModelConfig::desk_2d(16, 8, 4, 3),
        ] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn shapes_and_eval_determinism() {
        let m = HnoModel::<f64>::new(tiny()).unwrap();
        let x = Tensor::from_fn(&[2, 16, 1], |i| (i as f64 * 0.3).sin());
        let g = grid_1d(16);
        let mut ctx = ForwardCtx::eval();
        assert_eq!(m.encode(&x, &g, &mut ctx).unwrap().u.shape(), &[2, 16, 8]);
        let a = m.forward(&x, &g, 1, &mut ctx).unwrap();
        let b = m.forward(&x, &g, 1, &mut ctx).unwrap();
        assert_eq!(a.shape(), &[2, 16, 1]);
        assert_eq!(a.data(), b.data());
        assert!(m.forward(&x, &g, 2, &mut ctx).is_err());
    }

    #[test]
    fn shared_propagator_emits_one_channel_per_step() {
        let c = ModelConfig {
            filter_hidden: vec![8],
            ..ModelConfig::desk_2d(8, 4, 3, 5)
        };
        let m = HnoModel::<f32>::new(c).unwrap();
        let x = Tensor::ones(&[1, 16, 3]);
        let y = m
            .forward(&x, &grid_2d(4), 4, &mut ForwardCtx::eval())
            .unwrap();
        assert_eq!(y.shape(), &[1, 16, 4]);
    }

    #[test]
    fn fourier_features_at_origin() {
        let f = random_fourier_features::<f64>(&Tensor::zeros(&[3, 2]), 4, 1.0, 7).unwrap();
        assert_eq!(f.shape(), &[3, 8]);
        for row in f.data().chunks(8) {
            assert_eq!(&row[..4], &[1.0; 4]);
            assert_eq!(&row[4..], &[0.0; 4]);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let m = HnoModel::<f32>::new(tiny()).unwrap();
        let x = Tensor::ones(&[1, 16, 2]);
        assert!(m.encode(&x, &grid_1d(16), &mut ForwardCtx::eval()).is_err());
    }
}
