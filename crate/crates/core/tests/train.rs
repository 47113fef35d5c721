use hno_core::nn::ParamStore;
use hno_core::pde::*;
use hno_core::train::*;
use hno_core::{Error, Tensor};

fn t64(data: &[f64], shape: &[usize]) -> Tensor<f64> {
    Tensor::from_vec(data.to_vec(), shape).unwrap()
}

#[test]
fn relative_l2_hand_values() {
    let target = [0.3f32, -1.2, 2.0, 0.7];
    assert_eq!(mean_relative_l2(&target, &target, 2).unwrap(), 0.0);
    assert_eq!(mean_relative_l2(&[0.0; 4], &target, 2).unwrap(), 1.0);
    let r = mean_relative_l2(&[1.0, 0.0], &[0.0, 1.0], 2).unwrap();
    assert!((r - 2f64.sqrt()).abs() < 1e-12);

    let t = t64(&[0.3, -1.2, 2.0, 0.7], &[2, 2]);
    assert!(relative_l2(&t, &t).unwrap().item().unwrap() < 1e-10);
    let zero = relative_l2(&Tensor::zeros(&[2, 2]), &t)
        .unwrap()
        .item()
        .unwrap();
    assert!((zero - 1.0).abs() < 1e-10);
    let r = relative_l2(&t64(&[1.0, 0.0], &[1, 2]), &t64(&[0.0, 1.0], &[1, 2]))
        .unwrap()
        .item()
        .unwrap();
    assert!((r - std::f64::consts::SQRT_2).abs() < 1e-10);
}

#[test]
fn relative_l2_is_scale_aware() {
    let base = [0.5f32, -0.25, 1.5, 3.0, -2.0, 0.125];
    for c in [1e-3f32, -2.0, 7.5, 1e4] {
        let t: Vec<f32> = base.iter().map(|v| v * c).collect();
        assert_eq!(mean_relative_l2(&t, &t, 3).unwrap(), 0.0);
        assert_eq!(mean_relative_l2(&[0.0; 6], &t, 3).unwrap(), 1.0);
    }
}

#[test]
fn zero_norm_targets_are_excluded() {
    let target = [0.0f32, 0.0, 1.0, 1.0];
    let pred = [5.0f32, 5.0, 1.0, 0.0];
    let per = relative_l2_samples(&pred, &target, 2).unwrap();
    assert_eq!(per[0], None);
    assert!((mean_relative_l2(&pred, &target, 2).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    let loss = relative_l2(
        &t64(&[5.0, 5.0, 1.0, 0.0], &[2, 2]),
        &t64(&[0.0, 0.0, 1.0, 1.0], &[2, 2]),
    )
    .unwrap();
    assert!((loss.item().unwrap() - 0.5f64.sqrt()).abs() < 1e-10);
    assert!(relative_l2(&Tensor::<f64>::ones(&[1, 2]), &Tensor::zeros(&[1, 2])).is_err());
    assert!(relative_l2(&Tensor::<f64>::ones(&[1, 2]), &Tensor::zeros(&[2, 1])).is_err());
}

#[test]
fn relative_l2_gradient_matches_finite_differences() {
    let mut store = ParamStore::<f64>::new(0);
    let p = store.create_with("p", &[2, 3], vec![0.1, -0.4, 0.9, 1.3, 0.2, -0.7]);
    let target = t64(&[0.5, 0.5, -1.0, 1.0, 0.0, 2.0], &[2, 3]);
    let report = hno_core::gradcheck::check_params(
        store.params(),
        || relative_l2(&p.get(), &target),
        1e-6,
        16,
    )
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

/// Textbook Adam on a scalar, written independently of the library.
fn reference_adam(theta0: f64, grads: &[f64], lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut theta) = (0.0, 0.0, theta0);
    let mut trace = Vec::new();
    for (i, g) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1.powi(t));
        let vhat = v / (1.0 - b2.powi(t));
        theta -= lr * mhat / (vhat.sqrt() + eps);
        trace.push(theta);
    }
    trace
}

#[test]
fn adam_matches_scalar_reference_trace() {
    let grads = [0.5, -1.25, 3.0, 0.01, -0.3, 2.2, -4.0, 0.75, 1e-3, -0.6];
    let want = reference_adam(1.5, &grads, 1e-2);
    let mut theta = [1.5f64];
    let mut slot = AdamSlot::zeros(1);
    for (i, g) in grads.iter().enumerate() {
        adam_step(
            &mut theta,
            &[*g],
            &mut slot,
            i as u64 + 1,
            1e-2,
            &AdamConfig::default(),
        );
        assert!(
            (theta[0] - want[i]).abs() < 1e-12,
            "step {i}: {} vs {}",
            theta[0],
            want[i]
        );
    }
}

#[test]
fn adam_constant_gradient_steps_by_lr() {
    let mut theta = [0.0f64];
    let mut slot = AdamSlot::zeros(1);
    let lr = 1e-3;
    let mut prev = 0.0;
    for t in 1..=2000u64 {
        adam_step(
            &mut theta,
            &[0.37],
            &mut slot,
            t,
            lr,
            &AdamConfig::default(),
        );
        let step = prev - theta[0];
        prev = theta[0];
        assert!((step - lr).abs() < 1e-3 * lr || t < 2);
    }
}

#[test]
fn adam_zero_gradient_is_a_fixed_point_and_nan_aborts() {
    let mut store = ParamStore::<f64>::new(0);
    let p = store.create_with("w", &[3], vec![1.0, -2.0, 0.5]);
    let mut adam = Adam::new(store.params(), AdamConfig::default());
    adam.apply(store.params(), &[vec![0.0; 3]], 0.1).unwrap();
    assert_eq!(p.get().to_vec(), vec![1.0, -2.0, 0.5]);
    match adam.apply(store.params(), &[vec![0.0, f64::NAN, 0.0]], 0.1) {
        Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "w"),
        other => panic!("expected a non-finite gradient error, got {other:?}"),
    }
    assert_eq!(adam.step, 1);
    assert_eq!(p.get().to_vec(), vec![1.0, -2.0, 0.5]);
}

#[test]
fn gradient_clipping_bounds_the_global_norm() {
    let mut g = vec![vec![3.0f64, 0.0], vec![4.0]];
    assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
    assert!((grad_norm(&g) - 1.0).abs() < 1e-12);
    let mut g2 = vec![vec![0.3f64]];
    clip_grad_norm(&mut g2, 0.0);
    assert_eq!(g2[0][0], 0.3);
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(0, 1000, 1e-4, 1e-8), 1e-4);
    assert!((cosine_lr(1000, 1000, 1e-4, 1e-8) - 1e-8).abs() < 1e-20);
    assert!((cosine_lr(500, 1000, 1e-4, 1e-8) - (1e-4 + 1e-8) / 2.0).abs() < 1e-18);
    let trace: Vec<f64> = (0..=1000).map(|s| cosine_lr(s, 1000, 1e-4, 1e-8)).collect();
    assert!(trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn curriculum_schedule() {
    assert_eq!(curriculum_horizon(0, 100, 0.5, 20, 0.5), 10);
    assert_eq!(curriculum_horizon(50, 100, 0.5, 20, 0.5), 20);
    assert_eq!(curriculum_horizon(99, 100, 0.5, 20, 0.5), 20);
    for (g, t, f) in [
        (0.5, 20, 0.5),
        (0.1, 10, 1.0),
        (1.0, 7, 0.3),
        (0.33, 1, 0.8),
    ] {
        let trace: Vec<usize> = (0..200)
            .map(|e| curriculum_horizon(e, 200, g, t, f))
            .collect();
        assert!(trace.windows(2).all(|w| w[0] <= w[1]));
        assert!(trace.iter().all(|&h| (1..=t).contains(&h)));
        assert_eq!(*trace.last().unwrap(), t);
    }
}

#[test]
fn config_parsing() {
    let cfg = TrainConfig::from_text(
        "# desk\nlr0 = 0.001\n\nepochs=3\nmodel = desk\ncurriculum = false\n",
    )
    .unwrap();
    assert_eq!(
        (cfg.lr0, cfg.epochs, cfg.model, cfg.curriculum),
        (1e-3, 3, ModelPreset::Desk, false)
    );
    assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    match TrainConfig::from_text("lr0 = 1e-3\nlearning_rate = 2\n") {
        Err(Error::Config(msg)) => assert!(msg.contains("learning_rate")),
        other => panic!("{other:?}"),
    }
    assert!(TrainConfig::from_text("epochs = many").is_err());
    assert!(TrainConfig::from_text("curriculum_gamma0 = 0").is_err());
    assert!(TrainConfig::from_text("lr_floor = 1").is_err());
    assert!(TrainConfig::from_text("just words").is_err());
}

#[test]
fn published_schedule_defaults() {
    let d = TrainConfig::default();
    assert_eq!(
        (d.lr0, d.lr_floor, d.dropout, d.curriculum_gamma0),
        (1e-4, 1e-8, 0.03, 0.5)
    );
    assert_eq!(TrainConfig::paper_1d().epochs, 200);
    assert_eq!(TrainConfig::paper_1d().batch_size, 20);
    assert_eq!(TrainConfig::paper_2d().batch_size, 4);
    assert_eq!(TrainConfig::paper_2d().total_steps(1000), 125_000);
}

fn tiny_1d(train: usize, test: usize, nx: usize) -> (PdeDataset, PdeDataset) {
    let cfg = ProblemConfig::DiffusionReaction {
        solver: DiffusionReactionConfig {
            nx,
            ..Default::default()
        },
        modes: 4,
    };
    (
        build_split(&cfg, Split::Train, train, 1).unwrap(),
        build_split(&cfg, Split::Test, test, 1).unwrap(),
    )
}

fn tiny_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr0: 1e-3,
        epochs,
        batch_size: 4,
        model: ModelPreset::Desk,
        width: 8,
        record_wall_time: false,
        ..Default::default()
    }
}

#[test]
fn lr_trace_is_the_cosine_schedule() {
    let (tr, te) = tiny_1d(10, 4, 32);
    let cfg = tiny_cfg(3);
    let out = train(&tr, &te, &cfg, TrainOptions::default()).unwrap();
    let total = cfg.total_steps(tr.len());
    assert_eq!(out.log.steps.len(), total);
    for (i, s) in out.log.steps.iter().enumerate() {
        assert_eq!(s.step, i);
        assert_eq!(s.lr, cosine_lr(i, total, cfg.lr0, cfg.lr_floor));
    }
    assert_eq!(out.log.epochs.len(), 3);
    assert!(out.log.horizon_trace().iter().all(|&h| h == 1));
    let csv = out.log.to_csv();
    assert_eq!(
        csv.lines().next().unwrap(),
        "epoch,step,lr,horizon,train_rel_l2,val_rel_l2,wall_s"
    );
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let (tr, te) = tiny_1d(8, 4, 32);
    let cfg = TrainConfig {
        dropout: 0.1,
        ..tiny_cfg(4)
    };
    let dir = tempfile::tempdir().unwrap();
    let full = train(&tr, &te, &cfg, TrainOptions::default()).unwrap();
    let part = TrainOptions {
        out: Some(dir.path()),
        stop_after: Some(2),
        ..Default::default()
    };
    let half = train(&tr, &te, &cfg, part).unwrap();
    assert_eq!(half.last.manifest.epoch, 2);
    let last = Checkpoint::read(&dir.path().join("last.ckpt")).unwrap();
    assert_eq!(last, half.last);
    let best = Checkpoint::read(&dir.path().join("best.ckpt")).ok();
    let resumed = train(
        &tr,
        &te,
        &cfg,
        TrainOptions {
            resume: Some(Resume { last, best }),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(resumed.log.steps.len(), full.log.steps.len());
    for (a, b) in resumed
        .log
        .steps
        .iter()
        .zip(&full.log.steps)
        .skip(half.log.steps.len())
    {
        assert_eq!((a.step, a.lr), (b.step, b.lr));
        assert!((a.loss - b.loss).abs() < 1e-6);
    }
    assert_eq!(resumed.log.to_csv(), full.log.to_csv());
    assert_eq!(resumed.last.params, full.last.params);
}

#[test]
fn checkpoint_round_trip_and_model_rebuild() {
    let (tr, te) = tiny_1d(6, 3, 32);
    let out = train(&tr, &te, &tiny_cfg(1), TrainOptions::default()).unwrap();
    let bytes = out.last.to_bytes().unwrap();
    assert_eq!(&bytes[..4], b"HNOC");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, out.last);
    assert_eq!(back.num_params(), out.model.num_params());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    let model = back.build_model().unwrap();
    let norm = &back.manifest.normalization;
    let a = evaluate(&out.model, norm, &te, 2).unwrap();
    let b = evaluate(&model, norm, &te, 3).unwrap();
    assert_eq!(a.per_sample, b.per_sample);
    let json = a.to_json().unwrap();
    assert_eq!(EvalReport::from_json(&json).unwrap(), a);
}

#[test]
fn evaluation_rejects_mismatched_data() {
    let (tr, te) = tiny_1d(6, 3, 32);
    let out = train(&tr, &te, &tiny_cfg(1), TrainOptions::default()).unwrap();
    let ns = ProblemConfig::NavierStokes(
        NavierStokesData {
            solver: NavierStokesConfig {
                n: 16,
                ..Default::default()
            },
            resolution: 8,
            steps_in: 2,
            horizon: 2,
            ..Default::default()
        }
        .normalized(),
    );
    let other = build_split(&ns, Split::Test, 1, 0).unwrap();
    let norm = &out.last.manifest.normalization;
    assert!(matches!(
        evaluate(&out.model, norm, &other, 1),
        Err(Error::Config(_))
    ));
    let (_, finer) = tiny_1d(1, 2, 64);
    assert_eq!(evaluate(&out.model, norm, &finer, 2).unwrap().samples, 2);
}

#[test]
fn exploding_learning_rate_is_caught() {
    let (tr, te) = tiny_1d(8, 2, 32);
    let cfg = TrainConfig {
        lr0: 1e6,
        clip_norm: 0.0,
        epochs: 6,
        ..tiny_cfg(6)
    };
    match train(&tr, &te, &cfg, TrainOptions::default()) {
        Err(Error::Diverged { .. }) | Err(Error::NonFiniteGradient(_)) => {}
        Ok(out) => panic!("no divergence reported: {:?}", out.log.epochs),
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn curriculum_horizon_drives_training_slices() {
    let ns = ProblemConfig::NavierStokes(
        NavierStokesData {
            solver: NavierStokesConfig {
                n: 16,
                ..Default::default()
            },
            resolution: 8,
            steps_in: 2,
            horizon: 4,
            ..Default::default()
        }
        .normalized(),
    );
    let tr = build_split(&ns, Split::Train, 4, 0).unwrap();
    let te = build_split(&ns, Split::Test, 2, 0).unwrap();
    let cfg = TrainConfig {
        batch_size: 2,
        curriculum_end_fraction: 0.75,
        ..tiny_cfg(4)
    };
    let out = train(&tr, &te, &cfg, TrainOptions::default()).unwrap();
    let trace = out.log.horizon_trace();
    assert_eq!(trace[0], 2);
    assert_eq!(*trace.last().unwrap(), 4);
    assert!(trace.windows(2).all(|w| w[0] <= w[1]));
    let flat = train(
        &tr,
        &te,
        &TrainConfig {
            curriculum: false,
            ..cfg
        },
        TrainOptions::default(),
    )
    .unwrap();
    assert!(flat.log.horizon_trace().iter().all(|&h| h == 4));
    let report = evaluate(&out.model, &out.last.manifest.normalization, &te, 2).unwrap();
    assert_eq!(report.per_step.unwrap().len(), 4);
}

#[test]
fn desk_run_reduces_training_error_tenfold() {
    let cfg = ProblemConfig::DiffusionReaction {
        solver: DiffusionReactionConfig::default(),
        modes: 8,
    };
    let tr = build_split(&cfg, Split::Train, 200, 0).unwrap();
    let te = build_split(&cfg, Split::Test, 50, 0).unwrap();
    let tc = TrainConfig {
        lr0: 1e-3,
        epochs: 40,
        batch_size: 20,
        model: ModelPreset::Desk,
        width: 32,
        curriculum: false,
        ..Default::default()
    };
    let out = train(&tr, &te, &tc, TrainOptions::default()).unwrap();
    let first = out.log.epochs[0].train_rel_l2;
    let last = out.log.epochs.last().unwrap().train_rel_l2;
    assert!(last < 0.1 * first, "train rel L2 {first} -> {last}");
}
