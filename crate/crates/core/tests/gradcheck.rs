//! Central finite differences against `Model::backward`, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wrinkleforge::micronet::{build, Model, Tensor4, UNetSpec};

/// Loss = sum(r * output); its gradient w.r.t. the output is r.
fn loss(model: &Model<f64>, x: &Tensor4<f64>, r: &[f64]) -> f64 {
    let out = model.infer(x).unwrap();
    out.values().iter().zip(r).map(|(o, w)| o * w).sum()
}

fn check(spec: UNetSpec, size: usize, samples: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: Model<f64> = build(spec).unwrap();
    // Nonzero biases so ReLU kinks are not all at the same place.
    for p in model.params_mut().iter_mut().skip(1).step_by(2) {
        for v in p.values_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    let n = 2;
    let x = Tensor4::from_vec(
        [n, spec.in_channels, size, size],
        (0..n * spec.in_channels * size * size)
            .map(|_| rng.gen())
            .collect(),
    )
    .unwrap();
    let out = model.forward(&x).unwrap();
    let r: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    model.zero_grad();
    model
        .backward(&Tensor4::from_vec(out.dims(), r.clone()).unwrap())
        .unwrap();

    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..samples {
        let mut flat = rng.gen_range(0..total);
        let mut t = 0;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        let analytic = model.params()[t].grad().unwrap()[flat];
        let orig = model.params()[t].values()[flat];
        model.params_mut()[t].values_mut()[flat] = orig + h;
        let up = loss(&model, &x, &r);
        model.params_mut()[t].values_mut()[flat] = orig - h;
        let dn = loss(&model, &x, &r);
        model.params_mut()[t].values_mut()[flat] = orig;
        let numeric = (up - dn) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        if scale > 1e-7 {
            worst = worst.max((analytic - numeric).abs() / scale);
        }
        checked += 1;
    }
    (checked, worst)
}

#[test]
fn regression_head_gradients() {
    let (n, worst) = check(UNetSpec::new(3, 1, 2, 1, 5), 8, 150, 1);
    assert!(n >= 100);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn logit_head_gradients() {
    let (n, worst) = check(UNetSpec::new(4, 2, 2, 1, 6), 8, 150, 2);
    assert!(n >= 100);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn deeper_network_gradients() {
    let (_, worst) = check(UNetSpec::new(3, 2, 2, 2, 7), 8, 200, 3);
    assert!(worst < 1e-3, "worst relative error {worst}");
}
