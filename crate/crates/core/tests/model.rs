use hno_core::gradcheck::{check_params, project};
use hno_core::model::{grid_1d, grid_2d, HnoModel, ModelConfig};
use hno_core::nn::ForwardCtx;
use hno_core::Tensor;

fn tiny_1d() -> ModelConfig {
    ModelConfig {
        filter_hidden: vec![8],
        filter_freqs: 3,
        ..ModelConfig::desk_1d(8)
    }
    .with_seq_len(16)
}

#[test]
fn paper_presets_match_published_sizes() {
    let one = HnoModel::<f32>::new(ModelConfig::paper_1d())
        .unwrap()
        .num_params() as f64;
    let two = HnoModel::<f32>::new(ModelConfig::paper_2d())
        .unwrap()
        .num_params() as f64;
    assert!((one / 5.61e6 - 1.0).abs() < 0.10, "1d {one}");
    assert!((two / 9.22e6 - 1.0).abs() < 0.10, "2d {two}");
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let model = HnoModel::<f64>::new(ModelConfig {
        dropout: 0.0,
        ..tiny_1d()
    })
    .unwrap();
    let x = Tensor::from_fn(&[2, 16, 1], |i| 0.5 + 0.4 * (i as f64 * 0.7).sin());
    let g = grid_1d(16);
    let report = check_params(
        model.store.params(),
        || project(&model.forward(&x, &g, 1, &mut ForwardCtx::eval())?, 3),
        1e-5,
        6,
    )
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn loss_reaches_embedding_weights() {
    let model = HnoModel::<f32>::new(tiny_1d()).unwrap();
    let x = Tensor::from_fn(&[1, 16, 1], |i| (i as f32 * 0.3).cos());
    let y = model
        .forward(&x, &grid_1d(16), 1, &mut ForwardCtx::train(0))
        .unwrap();
    y.mul(&y).unwrap().sum_all().backward().unwrap();
    let grad = model
        .store
        .get("encoder.embed.0.weight")
        .unwrap()
        .grad()
        .unwrap();
    assert!(grad.iter().any(|g| *g != 0.0));
}

#[test]
fn fourier_features_follow_the_seed() {
    let coords = grid_2d::<f64>(4);
    let feats = |seed| {
        let m = HnoModel::<f64>::new(ModelConfig {
            seed,
            filter_hidden: vec![8],
            ..ModelConfig::desk_2d(8, 4, 2, 2)
        })
        .unwrap();
        m.fourier_features().forward(&coords).unwrap().to_vec()
    };
    let a = feats(1);
    assert_eq!(a, feats(1));
    assert_ne!(a, feats(2));
    for row in a.chunks(8) {
        let s: f64 = (0..4)
            .map(|j| row[j] * row[j] + row[4 + j] * row[4 + j])
            .sum();
        assert!((s - 4.0).abs() < 1e-12);
    }
}

#[test]
fn rebuilt_at_double_length_keeps_parameter_count() {
    let small = HnoModel::<f32>::new(ModelConfig::desk_1d(16).with_seq_len(64)).unwrap();
    let big = HnoModel::<f32>::new(ModelConfig::desk_1d(16).with_seq_len(128)).unwrap();
    assert_eq!(small.num_params(), big.num_params());
    let x = Tensor::ones(&[1, 128, 1]);
    let y = big
        .forward(&x, &grid_1d(128), 1, &mut ForwardCtx::eval())
        .unwrap();
    assert_eq!(y.shape(), &[1, 128, 1]);
    assert!(y.data().iter().all(|v| v.is_finite()));
}

#[test]
fn two_dimensional_preset_shapes() {
    let c = ModelConfig {
        filter_hidden: vec![8],
        ..ModelConfig::desk_2d(8, 8, 10, 4)
    };
    let m = HnoModel::<f32>::new(c).unwrap();
    let x = Tensor::ones(&[2, 64, 10]);
    let mut ctx = ForwardCtx::eval();
    assert_eq!(
        m.encode(&x, &grid_2d(8), &mut ctx).unwrap().u.shape(),
        &[2, 64, 8]
    );
    assert_eq!(
        m.forward(&x, &grid_2d(8), 3, &mut ctx).unwrap().shape(),
        &[2, 64, 3]
    );
    assert!(m.forward(&x, &grid_2d(8), 5, &mut ctx).is_err());
}
