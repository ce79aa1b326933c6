use fima_core::data::{gen_synthetic_classification, partition_iid, Dataset};
use fima_core::decomposition::{EnsembleSource, JointEnsemble};
use fima_core::nn::{forward, Activation, LossKind, ModelSpec};

/// Random MSE ensemble over an iid split of a synthetic set of `n` points.
pub fn random_ensemble(
    k: usize,
    s: usize,
    n_per_class: usize,
    seed: u64,
) -> (ModelSpec, Dataset, JointEnsemble) {
    let spec = ModelSpec::mlp(&[3, 6, 3], Activation::Relu, LossKind::Mse).unwrap();
    let data = gen_synthetic_classification(seed, 3, n_per_class, 3, 2.0).unwrap();
    let part = partition_iid(&data, k, seed).unwrap();
    let base = super::random_params(&spec, 0.7, seed * 31 + 1);
    let samples = (0..s)
        .map(|si| {
            (0..k)
                .map(|kk| super::perturbed(&base, 0.3, seed * 1000 + (si * k + kk) as u64))
                .collect()
        })
        .collect();
    let ens = JointEnsemble::with_counts(samples, part.client_indices, EnsembleSource::Custom).unwrap();
    (spec, data, ens)
}

/// `mean_s mean_i ||y_i - sum_k p_k f_{s,k}(x_i)||^2`, one point at a time.
pub fn brute_force_wens_loss(ens: &JointEnsemble, spec: &ModelSpec, data: &Dataset) -> f64 {
    let mut total = 0.0;
    for draw in &ens.samples {
        for i in 0..data.len() {
            let x = data.features.slice(ndarray::s![i..i + 1, ..]);
            let mut combined = vec![0.0; spec.output_dim()];
            for (m, p) in draw.iter().zip(&ens.weights) {
                let out = forward(m, spec, x).unwrap();
                for (c, o) in combined.iter_mut().zip(out.row(0)) {
                    *c += p * o;
                }
            }
            for (j, c) in combined.iter().enumerate() {
                let r = data.one_hot_targets[[i, j]] - c;
                total += r * r;
            }
        }
    }
    total / (ens.samples.len() * data.len()) as f64
}
