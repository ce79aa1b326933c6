use fima_core::nn::{loss_and_grad, Batch, LossKind, ModelSpec, ParamVector, Targets};
use fima_core::rng::rng_from;
use ndarray::Array2;
use rand::Rng as _;

/// Largest relative error of backprop against central differences.
pub fn max_fd_error(spec: &ModelSpec, seed: u64) -> f64 {
    let mut rng = rng_from(seed);
    let params = super::random_params(spec, 0.8, seed + 1);
    let n = 7;
    let x = Array2::from_shape_fn((n, spec.input_dim()), |_| rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_fn((n, spec.output_dim()), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.output_dim())).collect();
    let batch = || Batch {
        inputs: x.view(),
        targets: match spec.loss_kind() {
            LossKind::Mse => Targets::Dense(y.view()),
            LossKind::SoftmaxCrossEntropy => Targets::Classes(&labels),
        },
    };
    let (_, grad) = loss_and_grad(&params, spec, batch()).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let shifted = |s: f64| {
            let mut v = params.values.clone();
            v[i] += s;
            loss_and_grad(&ParamVector::new(v, params.spec_fingerprint), spec, batch()).unwrap().0
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
