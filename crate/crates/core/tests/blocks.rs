use hno_core::conv::direct_conv;
use hno_core::hyena::{hyena_recurrence, HyenaBlock, HyenaBlockSpec, HyenaOperator};
use hno_core::nn::{ForwardCtx, ParamStore};
use hno_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let num: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let den: f64 = b.data().iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

#[test]
fn gates_depend_on_the_input() {
    let mut store = ParamStore::<f64>::new(0);
    let op = HyenaOperator::new(&mut store, "h", &HyenaBlockSpec::new(4, 2, 16)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = op.project_inputs(&random(&[1, 16, 4], &mut rng)).unwrap();
    let b = op.project_inputs(&random(&[1, 16, 4], &mut rng)).unwrap();
    for (ga, gb) in a[1..].iter().zip(&b[1..]) {
        assert!(rel_err(ga, gb) > 1e-3);
    }
}

#[test]
fn spectral_recurrence_matches_direct_for_all_short_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for len in 1..=64 {
        let v = random(&[2, 3, len], &mut rng);
        let gates: Vec<_> = (0..2).map(|_| random(&[2, 3, len], &mut rng)).collect();
        let filters: Vec<_> = (0..2).map(|_| random(&[3, len], &mut rng)).collect();
        let fast = hyena_recurrence(&v, &gates, &filters).unwrap();
        let mut z = v.clone();
        for (g, h) in gates.iter().zip(&filters) {
            z = g.mul(&direct_conv(h, &z).unwrap()).unwrap();
        }
        assert!(rel_err(&fast, &z) < 1e-4, "len {len}");
    }
}

#[test]
fn identity_wiring_passes_input_through() {
    let mut store = ParamStore::<f64>::new(3);
    let op = HyenaOperator::new(&mut store, "h", &HyenaBlockSpec::new(3, 1, 8)).unwrap();
    let mut w = vec![0.0; 3 * 6];
    (0..3).for_each(|i| w[i * 6 + i] = 1.0);
    op.in_proj.weight.set(w).unwrap();
    let mut k = vec![0.0; 6 * 3];
    (0..6).for_each(|c| k[c * 3 + 2] = 1.0);
    op.short.set(k).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 8, 3], &mut rng);
    let parts = op.project_inputs(&x).unwrap();
    assert_eq!(parts[0].data(), x.transpose(1, 2).unwrap().data());
}

#[test]
fn zero_hyena_path_reduces_to_ffn() {
    let mut store = ParamStore::<f64>::new(5);
    let block = HyenaBlock::new(&mut store, "b", &HyenaBlockSpec::new(4, 2, 8)).unwrap();
    block.op.out_proj.weight.set(vec![0.0; 16]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let u = random(&[1, 8, 4], &mut rng);
    let mut ctx = ForwardCtx::eval();
    let got = block.forward(&u, &mut ctx).unwrap();
    let want = block.ffn.forward(&u, &mut ctx).unwrap();
    assert!(rel_err(&got, &want) < 1e-12);
}

#[test]
fn training_mode_applies_dropout_and_eval_does_not() {
    let mut store = ParamStore::<f64>::new(7);
    let block = HyenaBlock::new(&mut store, "b", &HyenaBlockSpec::new(8, 2, 16)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u = random(&[2, 16, 8], &mut rng);
    let e1 = block.forward(&u, &mut ForwardCtx::eval()).unwrap();
    let e2 = block.forward(&u, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(e1.data(), e2.data());
    let t = block.forward(&u, &mut ForwardCtx::train(1)).unwrap();
    assert_ne!(t.data(), e1.data());
}
