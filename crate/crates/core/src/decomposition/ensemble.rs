//! Empirical bias / variance / covariance decomposition of the expected loss
//! of a weighted ensemble of client models under MSE.
//!
//! Expectations over client models are means over the `S` joint samples of
//! the ensemble, with population (1/S) normalization. With that choice
//!
//! ```text
//! mean_s mean_x ||y - sum_k p_k f_{s,k}(x)||^2
//!     = bias_term + variance_term + covariance_term
//! ```
//!
//! holds exactly, up to rounding.

use ndarray::{Array2, Array3};

use super::wens::{check_weights, fma_wens_gap, weighted_average};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward, LossKind, ModelSpec, ParamVector};

/// How the joint samples were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleSource {
    /// Client models of consecutive rounds; the K models of a sample are
    /// correlated through their shared starting point.
    RoundClients,
    /// Independently seeded local trainings from one broadcast model.
    SeedReplicas,
    /// Built by hand (tests, external tools).
    Custom,
}

impl EnsembleSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleSource::RoundClients => "round_clients",
            EnsembleSource::SeedReplicas => "seed_replicas",
            EnsembleSource::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointEnsemble {
    /// `samples[s][k]` is client `k`'s model in joint draw `s`.
    pub samples: Vec<Vec<ParamVector>>,
    /// Aggregation weights `n_k / n`.
    pub weights: Vec<f64>,
    /// Indices of each client's samples in the global dataset.
    pub client_indices: Vec<Vec<usize>>,
    pub source: EnsembleSource,
}

impl JointEnsemble {
    pub fn new(
        samples: Vec<Vec<ParamVector>>,
        weights: Vec<f64>,
        client_indices: Vec<Vec<usize>>,
        source: EnsembleSource,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one joint sample".into()));
        }
        let k = weights.len();
        check_weights(&weights, k)?;
        if client_indices.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: client_indices.len(),
            });
        }
        let reference = &samples[0][0];
        for draw in &samples {
            if draw.len() != k {
                return Err(Error::LengthMismatch {
                    expected: k,
                    actual: draw.len(),
                });
            }
            for m in draw {
                reference.check_compatible(m)?;
            }
        }
        Ok(JointEnsemble {
            samples,
            weights,
            client_indices,
            source,
        })
    }

    /// Weights from client sample counts.
    pub fn with_counts(
        samples: Vec<Vec<ParamVector>>,
        client_indices: Vec<Vec<usize>>,
        source: EnsembleSource,
    ) -> Result<Self> {
        let total: usize = client_indices.iter().map(Vec::len).sum();
        if total == 0 {
            return Err(Error::InvalidArgument("clients hold no samples".into()));
        }
        let weights = client_indices
            .iter()
            .map(|c| c.len() as f64 / total as f64)
            .collect();
        Self::new(samples, weights, client_indices, source)
    }

    pub fn num_clients(&self) -> usize {
        self.weights.len()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionReport {
    pub bias_term: f64,
    /// Mean over the dataset of `||sum_k p_k TrainBias_k||^2`.
    pub train_bias_mean_sq: f64,
    /// Mean over the dataset of `||sum_k p_k HeterBias_k||^2`.
    pub heter_bias_mean_sq: f64,
    pub variance_term: f64,
    pub covariance_term: f64,
    /// `bias + variance + covariance`.
    pub wens_expected_loss: f64,
    /// Expected MSE of the weighted output ensemble, computed directly.
    pub direct_expected_loss: f64,
    /// MSE of the parameter-averaged model of the last joint sample.
    pub fma_loss: f64,
    pub locality_delta: f64,
    pub approx_gap: f64,
}

/// Per-sample second moments shared by all reports.
struct Moments {
    /// `mean_s f_{s,k}(x_i)`, shape `(K, n, c)`.
    mean: Array3<f64>,
    /// Coordinate-summed covariance `cov[i, k, k']`, diagonal = variance.
    cov: Array3<f64>,
    /// Per-sample outputs `outputs[s][k]`.
    outputs: Vec<Vec<Array2<f64>>>,
}

fn require_mse(spec: &ModelSpec) -> Result<()> {
    if spec.loss_kind() != LossKind::Mse {
        return Err(Error::InvalidArgument(
            "the loss decomposition is defined for MSE models only".into(),
        ));
    }
    Ok(())
}

fn moments(ensemble: &JointEnsemble, spec: &ModelSpec, data: &Dataset) -> Result<Moments> {
    require_mse(spec)?;
    if spec.output_dim() != data.n_classes {
        return Err(Error::DimensionMismatch {
            expected: data.n_classes,
            actual: spec.output_dim(),
        });
    }
    let (k, n, c) = (ensemble.num_clients(), data.len(), spec.output_dim());
    let s_count = ensemble.num_samples();
    let outputs: Vec<Vec<Array2<f64>>> = ensemble
        .samples
        .iter()
        .map(|draw| {
            draw.iter()
                .map(|m| forward(m, spec, data.features.view()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let inv_s = 1.0 / s_count as f64;
    let mut mean = Array3::zeros((k, n, c));
    for draw in &outputs {
        for (kk, out) in draw.iter().enumerate() {
            let mut slot = mean.index_axis_mut(ndarray::Axis(0), kk);
            slot += out;
        }
    }
    mean.mapv_inplace(|v| v * inv_s);
    let mut cov = Array3::zeros((n, k, k));
    let mut centered = vec![0.0; k * c];
    for draw in &outputs {
        for i in 0..n {
            for kk in 0..k {
                for j in 0..c {
                    centered[kk * c + j] = draw[kk][[i, j]] - mean[[kk, i, j]];
                }
            }
            for a in 0..k {
                for b in a..k {
                    let dot: f64 = (0..c).map(|j| centered[a * c + j] * centered[b * c + j]).sum();
                    cov[[i, a, b]] += dot;
                }
            }
        }
    }
    for i in 0..n {
        for a in 0..k {
            for b in a..k {
                let v = cov[[i, a, b]] * inv_s;
                cov[[i, a, b]] = v;
                cov[[i, b, a]] = v;
            }
        }
    }
    Ok(Moments { mean, cov, outputs })
}

fn membership(ensemble: &JointEnsemble, n: usize) -> Result<Vec<Vec<bool>>> {
    ensemble
        .client_indices
        .iter()
        .map(|idx| {
            let mut inside = vec![false; n];
            for &i in idx {
                if i >= n {
                    return Err(Error::InvalidArgument(format!(
                        "client index {i} outside dataset of {n}"
                    )));
                }
                inside[i] = true;
            }
            Ok(inside)
        })
        .collect()
}

pub fn decompose(ensemble: &JointEnsemble, spec: &ModelSpec, data: &Dataset) -> Result<DecompositionReport> {
    let mom = moments(ensemble, spec, data)?;
    report_from(ensemble, spec, data, &mom)
}

fn report_from(
    ensemble: &JointEnsemble,
    spec: &ModelSpec,
    data: &Dataset,
    mom: &Moments,
) -> Result<DecompositionReport> {
    let (k, n, c) = (ensemble.num_clients(), data.len(), spec.output_dim());
    let p = &ensemble.weights;
    let inside = membership(ensemble, n)?;
    let y = &data.one_hot_targets;

    let (mut bias, mut train, mut heter, mut var, mut cov) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut total = vec![0.0; c];
    let mut train_v = vec![0.0; c];
    let mut heter_v = vec![0.0; c];
    for i in 0..n {
        total.iter_mut().for_each(|v| *v = 0.0);
        train_v.iter_mut().for_each(|v| *v = 0.0);
        heter_v.iter_mut().for_each(|v| *v = 0.0);
        for kk in 0..k {
            let target = if inside[kk][i] { &mut train_v } else { &mut heter_v };
            for j in 0..c {
                let r = p[kk] * (y[[i, j]] - mom.mean[[kk, i, j]]);
                total[j] += r;
                target[j] += r;
            }
        }
        bias += total.iter().map(|v| v * v).sum::<f64>();
        train += train_v.iter().map(|v| v * v).sum::<f64>();
        heter += heter_v.iter().map(|v| v * v).sum::<f64>();
        for a in 0..k {
            var += p[a] * p[a] * mom.cov[[i, a, a]];
            for b in 0..k {
                if a != b {
                    cov += p[a] * p[b] * mom.cov[[i, a, b]];
                }
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    let (bias, var, cov) = (bias * inv_n, var * inv_n, cov * inv_n);

    let mut direct = 0.0;
    for draw in &mom.outputs {
        let mut ens = Array2::<f64>::zeros((n, c));
        for (out, &pk) in draw.iter().zip(p) {
            ens.scaled_add(pk, out);
        }
        direct += (y - &ens).mapv(|r| r * r).sum() * inv_n;
    }
    direct /= mom.outputs.len() as f64;

    let last = ensemble.samples.last().unwrap();
    let fma = weighted_average(last, p)?;
    let fma_out = forward(&fma, spec, data.features.view())?;
    let fma_loss = (y - &fma_out).mapv(|r| r * r).sum() * inv_n;
    let gap = fma_wens_gap(last, p, spec, data.features.view())?;

    Ok(DecompositionReport {
        bias_term: bias,
        train_bias_mean_sq: train * inv_n,
        heter_bias_mean_sq: heter * inv_n,
        variance_term: var,
        covariance_term: cov,
        wens_expected_loss: bias + var + cov,
        direct_expected_loss: direct,
        fma_loss,
        locality_delta: gap.delta,
        approx_gap: gap.gap,
    })
}

fn require_equal_weights(ensemble: &JointEnsemble) -> Result<()> {
    let k = ensemble.num_clients() as f64;
    if ensemble.weights.iter().any(|w| (w - 1.0 / k).abs() > 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "equal client weights required, got {:?}",
            ensemble.weights
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqualWeightReport {
    pub report: DecompositionReport,
    /// Mean over data of `sum_k Var_k / K`.
    pub mean_variance: f64,
    /// Mean over data of `sum_{k != k'} Cov_{k,k'} / (K (K - 1))`; zero for K = 1.
    pub mean_covariance: f64,
    /// `mean_variance / K + (K - 1) / K * mean_covariance`.
    pub total: f64,
}

/// Decomposition with equal client weights, exposing the mean-variance /
/// mean-covariance structure of the ensemble spread.
pub fn decompose_equal_weights(
    ensemble: &JointEnsemble,
    spec: &ModelSpec,
    data: &Dataset,
) -> Result<EqualWeightReport> {
    require_equal_weights(ensemble)?;
    let mom = moments(ensemble, spec, data)?;
    let report = report_from(ensemble, spec, data, &mom)?;
    let (k, n) = (ensemble.num_clients(), data.len());
    let (mut mv, mut mc) = (0.0, 0.0);
    for i in 0..n {
        for a in 0..k {
            mv += mom.cov[[i, a, a]];
            for b in 0..k {
                if a != b {
                    mc += mom.cov[[i, a, b]];
                }
            }
        }
    }
    let kf = k as f64;
    let mean_variance = mv / (n as f64 * kf);
    let mean_covariance = if k > 1 {
        mc / (n as f64 * kf * (kf - 1.0))
    } else {
        0.0
    };
    Ok(EqualWeightReport {
        report,
        mean_variance,
        mean_covariance,
        total: mean_variance / kf + (kf - 1.0) / kf * mean_covariance,
    })
}

/// Both sides of the covariance lower bound for equal client weights:
/// `lhs = mean_x (1/K^2) sum_{k,k'} Cov` and
/// `rhs = mean_x ((K-1)/K) min_{k != k'} Cov`.
pub fn covariance_lower_bound_check(
    ensemble: &JointEnsemble,
    spec: &ModelSpec,
    data: &Dataset,
) -> Result<(f64, f64)> {
    require_equal_weights(ensemble)?;
    let mom = moments(ensemble, spec, data)?;
    let (k, n) = (ensemble.num_clients(), data.len());
    let kf = k as f64;
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for i in 0..n {
        let mut min_pair = f64::INFINITY;
        for a in 0..k {
            for b in 0..k {
                let v = mom.cov[[i, a, b]];
                lhs += v;
                if a != b {
                    min_pair = min_pair.min(v);
                }
            }
        }
        if k > 1 {
            rhs += (kf - 1.0) / kf * min_pair;
        }
    }
    Ok((lhs / (kf * kf * n as f64), rhs / n as f64))
}
