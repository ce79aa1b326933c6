use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{forward, ModelSpec, ParamVector};

pub(crate) fn check_weights(weights: &[f64], k: usize) -> Result<()> {
    if weights.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: weights.len(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one model".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "weights must be non-negative and sum to 1, got sum {sum}"
        )));
    }
    Ok(())
}

/// Weighted parameter average `sum_k p_k w_k` (the FMA model).
pub fn weighted_average(models: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    check_weights(weights, models.len())?;
    let mut out = vec![0.0; models[0].len()];
    for (m, p) in models.iter().zip(weights) {
        models[0].check_compatible(m)?;
        for (o, v) in out.iter_mut().zip(&m.values) {
            *o += p * v;
        }
    }
    Ok(ParamVector::new(out, models[0].spec_fingerprint))
}

/// Weighted ensemble of model outputs, `sum_k p_k f_{w_k}(x)` per row.
pub fn wens_output(
    models: &[ParamVector],
    weights: &[f64],
    spec: &ModelSpec,
    inputs: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_weights(weights, models.len())?;
    let mut acc = Array2::zeros((inputs.nrows(), spec.output_dim()));
    for (m, &p) in models.iter().zip(weights) {
        let out = forward(m, spec, inputs)?;
        acc.scaled_add(p, &out);
    }
    Ok(acc)
}

/// Output gap between parameter averaging and output averaging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmaWensGap {
    /// Mean over inputs of `||f_{w_fma}(x) - f_wens(x)||_2`.
    pub gap: f64,
    /// Locality: `max_k ||w_k - w_fma||_2`.
    pub delta: f64,
}

pub fn fma_wens_gap(
    models: &[ParamVector],
    weights: &[f64],
    spec: &ModelSpec,
    eval_inputs: ArrayView2<f64>,
) -> Result<FmaWensGap> {
    if eval_inputs.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let fma = weighted_average(models, weights)?;
    let ens = wens_output(models, weights, spec, eval_inputs)?;
    let direct = forward(&fma, spec, eval_inputs)?;
    let gap = (&direct - &ens)
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .sum::<f64>()
        / eval_inputs.nrows() as f64;
    let delta = models
        .iter()
        .map(|m| m.l2_distance(&fma))
        .fold(0.0, f64::max);
    Ok(FmaWensGap { gap, delta })
}

/// `w_fma + s * (w_k - w_fma)` for every model.
pub fn contract_towards_average(
    models: &[ParamVector],
    weights: &[f64],
    s: f64,
) -> Result<Vec<ParamVector>> {
    let fma = weighted_average(models, weights)?;
    Ok(models
        .iter()
        .map(|m| {
            let values = m
                .values
                .iter()
                .zip(&fma.values)
                .map(|(w, c)| c + s * (w - c))
                .collect();
            ParamVector::new(values, m.spec_fingerprint)
        })
        .collect())
}
