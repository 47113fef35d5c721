//! Central finite-difference checks of reverse-mode gradients (f64).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::{direct_conv, fft_conv, short_conv};
use crate::error::{Error, Result};
use crate::filter::{window, HyenaFilter, HyenaFilterSpec};
use crate::hyena::{hyena_recurrence, HyenaBlock, HyenaBlockSpec, HyenaOperator};
use crate::nn::{ForwardCtx, Param, ParamStore};
use crate::tensor::{no_grad, Tensor};

const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradReport {
    /// Largest `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖, 1e-6)` over the checked
    /// parameters. The floor keeps parameters whose gradient sits at the
    /// finite-difference noise level from dominating.
    pub max_rel_err: f64,
    pub worst: String,
    pub probes: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares the gradient of the scalar `loss()` with respect to every `param`
/// against central differences with step `h`. At most `max_probes` entries
/// per parameter are perturbed, spread evenly over the tensor.
pub fn check_params(
    params: &[Param<f64>],
    loss: impl Fn() -> Result<Tensor<f64>>,
    h: f64,
    max_probes: usize,
) -> Result<GradReport> {
    params.iter().for_each(Param::zero_grad);
    let root = loss()?;
    if root.numel() != 1 {
        return Err(Error::NonScalarRoot(root.shape().to_vec()));
    }
    root.backward()?;
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: String::new(),
        probes: 0,
    };
    for p in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let base = p.get().to_vec();
        let n = base.len();
        let stride = n.div_ceil(max_probes.max(1)).max(1);
        let (mut diff2, mut ad2, mut fd2) = (0.0, 0.0, 0.0);
        for i in (0..n).step_by(stride) {
            let eval = |delta: f64| -> Result<f64> {
                let mut d = base.clone();
                d[i] += delta;
                p.set(d)?;
                no_grad(|| loss().and_then(|t| t.item()))
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            diff2 += (analytic[i] - fd).powi(2);
            ad2 += analytic[i].powi(2);
            fd2 += fd * fd;
            report.probes += 1;
        }
        p.set(base)?;
        let rel = diff2.sqrt() / ad2.max(fd2).sqrt().max(GRAD_FLOOR);
        if rel >= report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = p.name().to_string();
        }
    }
    Ok(report)
}

/// Fixed pseudo-random weights so `Σ w ⊙ y` exercises every output entry.
pub fn projection(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut s = seed ^ 0x9e37_79b9_7f4a_7c15;
    Tensor::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

/// `Σ w ⊙ y` with [`projection`] weights.
pub fn project(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    Ok(y.mul(&projection(y.shape(), seed))?.sum_all())
}

fn leaf(store: &mut ParamStore<f64>, name: &str, shape: &[usize], lo: f64, hi: f64) -> Param<f64> {
    let seed = store.num_params() as u64 + 17;
    let w = projection(shape, seed);
    let data = w
        .data()
        .iter()
        .map(|v| lo + (v + 0.5) * (hi - lo))
        .collect();
    store.create_with(name, shape, data)
}

/// Gradient checks for every differentiable primitive and one full Hyena
/// block (`B=1, L=16, D=8, N=2`).
pub fn op_suite() -> Result<Vec<(&'static str, GradReport)>> {
    type Case = (
        &'static str,
        Vec<Param<f64>>,
        Box<dyn Fn() -> Result<Tensor<f64>>>,
    );
    let h = 1e-5;
    let mut s = ParamStore::<f64>::new(0);
    let mut cases: Vec<Case> = Vec::new();

    let a = leaf(&mut s, "a", &[3, 4], -1.0, 1.0);
    let b = leaf(&mut s, "b", &[4], -1.0, 1.0);
    let pos = leaf(&mut s, "pos", &[3, 4], 0.5, 2.0);
    let col = leaf(&mut s, "col", &[3, 1], 0.5, 2.0);
    macro_rules! case {
        ($name:expr, [$($p:ident),*], $body:expr) => {{
            $(let $p = $p.clone();)*
            let params = vec![$($p.clone()),*];
            cases.push(($name, params, Box::new(move || { $(let $p = $p.get();)* $body })));
        }};
    }
    case!("add", [a, b], project(&a.add(&b)?, 1));
    case!("sub", [a, col], project(&a.sub(&col)?, 2));
    case!("mul", [a, b], project(&a.mul(&b)?, 3));
    case!("div", [a, pos], project(&a.div(&pos)?, 4));
    case!("div_broadcast", [a, col], project(&a.div(&col)?, 5));
    case!("exp", [a], project(&a.exp(), 6));
    case!("sin", [a], project(&a.sin(), 7));
    case!("cos", [a], project(&a.cos(), 8));
    case!("gelu", [a], project(&a.gelu(), 9));
    case!("neg", [a], project(&a.neg(), 10));
    case!("sqrt", [pos], project(&pos.sqrt(), 11));
    case!("scale", [a], project(&a.scale(-2.5), 12));
    case!("add_scalar", [a], project(&a.mul(&a)?.add_scalar(0.3), 13));
    case!(
        "reshape",
        [a],
        project(&a.reshape(&[2, 6])?.mul(&a.reshape(&[2, 6])?)?, 14)
    );
    case!("permute", [a], {
        let x = a.reshape(&[3, 2, 2])?.permute(&[2, 0, 1])?;
        project(&x.mul(&x.sin())?, 15)
    });
    case!("transpose", [a], project(&a.transpose(0, 1)?.exp(), 16));
    case!("narrow", [a], project(&a.narrow(1, 1, 2)?.exp(), 17));
    case!("chunk", [a], {
        let parts = a.chunk(1, 2)?;
        project(&parts[0].mul(&parts[1])?, 18)
    });
    case!(
        "concat",
        [a, pos],
        project(&Tensor::concat(&[a.clone(), pos.exp()], 0)?.sin(), 19)
    );
    case!(
        "broadcast_to",
        [col],
        project(&col.broadcast_to(&[2, 3, 4])?.sin(), 20)
    );
    case!("sum_all", [a], Ok(a.exp().sum_all()));
    case!("mean_all", [a], Ok(a.sin().mean_all()));
    case!("sum_axis", [a], project(&a.exp().sum_axis(0, false)?, 21));
    case!("mean_axis", [a], project(&a.exp().mean_axis(1, true)?, 22));

    let m = leaf(&mut s, "m", &[2, 3, 5], -1.0, 1.0);
    let w = leaf(&mut s, "w", &[5, 4], -1.0, 1.0);
    let wb = leaf(&mut s, "wb", &[2, 5, 4], -1.0, 1.0);
    case!("matmul", [m, w], project(&m.matmul(&w)?, 23));
    case!("matmul_batched", [m, wb], project(&m.matmul(&wb)?, 24));

    let x = leaf(&mut s, "x", &[3, 6], -2.0, 2.0);
    let gain = leaf(&mut s, "gain", &[6], 0.5, 1.5);
    let bias = leaf(&mut s, "bias", &[6], -0.5, 0.5);
    case!(
        "layer_norm",
        [x, gain, bias],
        project(&x.layer_norm(&gain, &bias, 1e-5)?, 25)
    );
    case!("softmax", [x], project(&x.softmax(1)?, 26));
    case!("softmax_axis0", [x], project(&x.softmax(0)?, 27));
    case!("dropout", [x], {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        project(&x.dropout(0.3, &mut rng)?, 28)
    });

    let hf = leaf(&mut s, "hf", &[3, 13], -1.0, 1.0);
    let u = leaf(&mut s, "u", &[2, 3, 13], -1.0, 1.0);
    let k = leaf(&mut s, "k", &[3, 3], -1.0, 1.0);
    case!("fft_conv", [hf, u], project(&fft_conv(&hf, &u)?, 29));
    case!("direct_conv", [hf, u], project(&direct_conv(&hf, &u)?, 30));
    case!("short_conv", [u, k], project(&short_conv(&u, &k)?, 31));

    let alpha = leaf(&mut s, "alpha", &[4], 0.3, 3.0);
    case!("window", [alpha], project(&window(9, &alpha, 0.01)?, 32));

    let mut results = Vec::new();
    for (name, params, f) in &cases {
        results.push((*name, check_params(params, f, h, 64)?));
    }

    let mut fs = ParamStore::<f64>::new(1);
    let spec = HyenaFilterSpec::new(2, 12, 3).with_hidden(&[8, 8]);
    let filter = HyenaFilter::new(&mut fs, "filter", spec)?;
    let report = check_params(fs.params(), || project(&filter.generate(12)?, 33), h, 64)?;
    results.push(("generate_filters", report));

    let mut ps = ParamStore::<f64>::new(2);
    let spec = HyenaBlockSpec::new(4, 2, 8);
    let spec = HyenaBlockSpec {
        filter: spec.filter.clone().with_hidden(&[8]),
        ..spec
    };
    let op = HyenaOperator::new(&mut ps, "op", &spec)?;
    let xin = leaf(&mut ps, "x", &[1, 8, 4], -1.0, 1.0);
    let report = check_params(
        ps.params(),
        || {
            let parts = op.project_inputs(&xin.get())?;
            let mut acc = Tensor::scalar(0.0);
            for (i, p) in parts.iter().enumerate() {
                acc = acc.add(&project(p, 40 + i as u64)?)?;
            }
            Ok(acc)
        },
        h,
        64,
    )?;
    results.push(("project_inputs", report));

    let mut rs = ParamStore::<f64>::new(3);
    let v = leaf(&mut rs, "v", &[2, 3, 10], -1.0, 1.0);
    let g1 = leaf(&mut rs, "g1", &[2, 3, 10], -1.0, 1.0);
    let g2 = leaf(&mut rs, "g2", &[2, 3, 10], -1.0, 1.0);
    let h1 = leaf(&mut rs, "h1", &[3, 10], -1.0, 1.0);
    let h2 = leaf(&mut rs, "h2", &[3, 10], -1.0, 1.0);
    let report = check_params(
        rs.params(),
        || {
            project(
                &hyena_recurrence(&v.get(), &[g1.get(), g2.get()], &[h1.get(), h2.get()])?,
                50,
            )
        },
        h,
        64,
    )?;
    results.push(("hyena_recurrence", report));

    results.push(("hyena_block", check_block(1, 16, 8, 2)?));
    Ok(results)
}

/// Checks a full block (eval mode) with respect to its input and every
/// parameter.
pub fn check_block(batch: usize, len: usize, dim: usize, order: usize) -> Result<GradReport> {
    let mut store = ParamStore::<f64>::new(11);
    let block = HyenaBlock::new(&mut store, "block", &HyenaBlockSpec::new(dim, order, len))?;
    let u = leaf(&mut store, "u", &[batch, len, dim], -1.0, 1.0);
    check_params(
        store.params(),
        || project(&block.forward(&u.get(), &mut ForwardCtx::eval())?, 60),
        1e-5,
        48,
    )
}
