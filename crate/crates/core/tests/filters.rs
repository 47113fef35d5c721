use hno_core::filter::{positional_encoding, window, HyenaFilter, HyenaFilterSpec};
use hno_core::nn::ParamStore;
use hno_core::Tensor;

fn filter(seed: u64, len: usize) -> (ParamStore<f64>, HyenaFilter<f64>) {
    let mut store = ParamStore::new(seed);
    let f = HyenaFilter::new(&mut store, "f", HyenaFilterSpec::new(2, len, 4)).unwrap();
    (store, f)
}

#[test]
fn filter_factorizes_into_window_times_ffn() {
    let (_, f) = filter(1, 64);
    let h = f.generate(64).unwrap();
    assert_eq!(h.shape(), &[2, 4, 64]);
    let ffn = f.ffn(&positional_encoding(64, 8)).unwrap();
    let psi = window(64, &f.alpha(), 0.01).unwrap();
    for c in 0..8 {
        for t in 0..64 {
            let v = ffn.data()[t * 8 + c];
            if v.abs() > 1e-6 {
                let ratio = h.data()[c * 64 + t] / v;
                assert!((ratio - psi.data()[c * 64 + t]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn envelope_bounds_every_filter() {
    let (_, f) = filter(2, 128);
    let h = f.generate(128).unwrap();
    let ffn = f.ffn(&positional_encoding(128, 8)).unwrap();
    let a_min = f
        .alpha()
        .data()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    for c in 0..8 {
        let peak = (0..128)
            .map(|t| ffn.data()[t * 8 + c].abs())
            .fold(0.0, f64::max);
        for t in 0..128 {
            let bound = ((-a_min * t as f64 / 128.0).exp() + 0.01) * peak;
            assert!(h.data()[c * 128 + t].abs() <= bound + 1e-12);
        }
    }
}

#[test]
fn window_is_monotone() {
    let alpha =
        Tensor::<f64>::from_vec(HyenaFilterSpec::new(2, 32, 4).initial_alpha(), &[8]).unwrap();
    let w = window(32, &alpha, 0.01).unwrap();
    for row in w.data().chunks(32) {
        assert!(row.windows(2).all(|p| p[1] <= p[0]));
    }
}

#[test]
fn parameter_count_is_independent_of_length() {
    let (short, _) = filter(3, 64);
    let (long, f) = filter(3, 4096);
    assert_eq!(short.num_params(), long.num_params());
    assert_eq!(f.num_params(), long.num_params());
}

#[test]
fn identical_seeds_give_identical_filters() {
    let (_, a) = filter(5, 64);
    let (_, b) = filter(5, 64);
    let (_, c) = filter(6, 64);
    let ha = a.generate(64).unwrap();
    assert_eq!(ha.data(), b.generate(64).unwrap().data());
    assert_ne!(ha.data(), c.generate(64).unwrap().data());
}

#[test]
fn unit_ffn_leaves_the_window() {
    let (_, f) = filter(7, 16);
    let psi = window(16, &f.alpha(), 0.01).unwrap();
    let ones = Tensor::<f64>::ones(&[8, 16]);
    let h = ones.mul(&psi).unwrap();
    assert_eq!(h.data(), psi.data());
}
