//! Server-side aggregation rules.

use std::collections::VecDeque;

use super::client::ClientUpdate;
use super::config::AdaptiveParams;
use crate::error::{Error, Result};
use crate::nn::ParamVector;

pub(crate) fn check_updates(updates: &[ClientUpdate], init: &ParamVector) -> Result<()> {
    if updates.is_empty() {
        return Err(Error::InvalidArgument("no client updates to aggregate".into()));
    }
    for u in updates {
        init.check_compatible(&u.final_params)?;
        if u.delta.len() != init.len() {
            return Err(Error::LengthMismatch {
                expected: init.len(),
                actual: u.delta.len(),
            });
        }
    }
    Ok(())
}

/// Sample-count weights `n_k / sum(n)`.
pub fn client_weights(updates: &[ClientUpdate]) -> Vec<f64> {
    let total: usize = updates.iter().map(|u| u.n_k).sum();
    updates
        .iter()
        .map(|u| u.n_k as f64 / total as f64)
        .collect()
}

/// Weighted mean of client deltas, the pseudo-gradient of adaptive servers.
pub fn weighted_delta(updates: &[ClientUpdate]) -> Vec<f64> {
    let weights = client_weights(updates);
    let mut out = vec![0.0; updates[0].delta.len()];
    for (u, p) in updates.iter().zip(&weights) {
        for (o, d) in out.iter_mut().zip(&u.delta) {
            *o += p * d;
        }
    }
    out
}

/// Federated model averaging: `sum_k (n_k / n) * w_k`.
pub fn fma_aggregate(updates: &[ClientUpdate], init: &ParamVector) -> Result<ParamVector> {
    check_updates(updates, init)?;
    let weights = client_weights(updates);
    let mut out = vec![0.0; init.len()];
    for (u, p) in updates.iter().zip(&weights) {
        for (o, w) in out.iter_mut().zip(&u.final_params.values) {
            *o += p * w;
        }
    }
    Ok(ParamVector::new(out, init.spec_fingerprint))
}

/// FedNova: client deltas normalized by their local step counts, rescaled by
/// the effective step count `sum_k p_k tau_k`.
pub fn fednova_aggregate(updates: &[ClientUpdate], init: &ParamVector) -> Result<ParamVector> {
    check_updates(updates, init)?;
    if let Some(u) = updates.iter().find(|u| u.tau_k == 0) {
        return Err(Error::InvalidArgument(format!(
            "client with n_k={} reported zero local steps",
            u.n_k
        )));
    }
    // equal step counts: the normalization is the identity
    if updates.iter().all(|u| u.tau_k == updates[0].tau_k) {
        return fma_aggregate(updates, init);
    }
    let weights = client_weights(updates);
    let tau_eff: f64 = updates
        .iter()
        .zip(&weights)
        .map(|(u, p)| p * u.tau_k as f64)
        .sum();
    let mut step = vec![0.0; init.len()];
    for (u, p) in updates.iter().zip(&weights) {
        let scale = p / u.tau_k as f64;
        for (s, d) in step.iter_mut().zip(&u.delta) {
            *s += scale * d;
        }
    }
    let values = init
        .values
        .iter()
        .zip(&step)
        .map(|(w, s)| w + tau_eff * s)
        .collect();
    Ok(ParamVector::new(values, init.spec_fingerprint))
}

/// FedGMA sign-agreement mask over the weighted-mean delta.
///
/// Coordinate `j` survives when the fraction of clients whose delta has the
/// same (nonzero) sign as the weighted mean is at least `epsilon`.
pub fn fedgma_mask(updates: &[ClientUpdate], epsilon: f64) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::InvalidArgument("no client updates to mask".into()));
    }
    let mean = weighted_delta(updates);
    let k = updates.len() as f64;
    Ok(mean
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let agree = updates
                .iter()
                .filter(|u| {
                    let d = u.delta[j];
                    d != 0.0 && m != 0.0 && d.signum() == m.signum()
                })
                .count() as f64;
            if agree / k >= epsilon {
                m
            } else {
                0.0
            }
        })
        .collect())
}

/// Applies a pseudo-gradient step `init + lr * step`.
pub fn apply_step(init: &ParamVector, step: &[f64], lr: f64) -> Result<ParamVector> {
    if step.len() != init.len() {
        return Err(Error::LengthMismatch {
            expected: init.len(),
            actual: step.len(),
        });
    }
    let values = init
        .values
        .iter()
        .zip(step)
        .map(|(w, s)| w + lr * s)
        .collect();
    Ok(ParamVector::new(values, init.spec_fingerprint))
}

/// First and second moment buffers of FedAdam/FedYogi.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl ServerMoments {
    pub fn zeros(len: usize) -> Self {
        ServerMoments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondMoment {
    Adam,
    Yogi,
}

/// One adaptive server step; returns the updated model.
pub fn adaptive_step(
    global: &ParamVector,
    moments: &mut ServerMoments,
    pseudo_grad: &[f64],
    hp: AdaptiveParams,
    rule: SecondMoment,
) -> Result<ParamVector> {
    let n = global.len();
    for len in [pseudo_grad.len(), moments.m.len(), moments.v.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, actual: len });
        }
    }
    let mut values = global.values.clone();
    for (((w, m), v), &d) in values
        .iter_mut()
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
        .zip(pseudo_grad)
    {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * d;
        let d2 = d * d;
        *v = match rule {
            SecondMoment::Adam => hp.beta2 * *v + (1.0 - hp.beta2) * d2,
            SecondMoment::Yogi => {
                let diff = *v - d2;
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *v - (1.0 - hp.beta2) * d2 * sign
            }
        };
        *w += hp.eta * *m / (v.sqrt() + hp.tau);
    }
    Ok(ParamVector::new(values, global.spec_fingerprint))
}

pub fn fedadam_step(
    global: &ParamVector,
    moments: &mut ServerMoments,
    pseudo_grad: &[f64],
    hp: AdaptiveParams,
) -> Result<ParamVector> {
    adaptive_step(global, moments, pseudo_grad, hp, SecondMoment::Adam)
}

pub fn fedyogi_step(
    global: &ParamVector,
    moments: &mut ServerMoments,
    pseudo_grad: &[f64],
    hp: AdaptiveParams,
) -> Result<ParamVector> {
    adaptive_step(global, moments, pseudo_grad, hp, SecondMoment::Yogi)
}

/// Unweighted mean of the newest `window` models (`history` newest first).
pub fn ima_average(history: &VecDeque<ParamVector>, window: usize) -> Result<ParamVector> {
    if window == 0 || history.len() < window {
        return Err(Error::InvalidArgument(format!(
            "IMA window {window} needs that many models, have {}",
            history.len()
        )));
    }
    let mut acc = history[0].values.clone();
    for model in history.iter().take(window).skip(1) {
        history[0].check_compatible(model)?;
        for (a, v) in acc.iter_mut().zip(&model.values) {
            *a += v;
        }
    }
    let inv = window as f64;
    acc.iter_mut().for_each(|a| *a /= inv);
    Ok(ParamVector::new(acc, history[0].spec_fingerprint))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn update(init: &ParamVector, params: Vec<f64>, n_k: usize, tau_k: usize) -> ClientUpdate {
        let final_params = ParamVector::new(params, init.spec_fingerprint);
        ClientUpdate {
            delta: final_params.sub(init),
            n_k,
            tau_k,
            final_params,
        }
    }

    fn random_vec(rng: &mut crate::rng::Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn fma_of_identical_clients() {
        let init = ParamVector::new(vec![0.0; 3], 1);
        let p = vec![0.3, -1.7, 2.2];
        let ups: Vec<_> = [1, 5, 9].iter().map(|&n| update(&init, p.clone(), n, 3)).collect();
        let out = fma_aggregate(&ups, &init).unwrap();
        for (a, b) in out.values.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fma_weighted_mean() {
        let init = ParamVector::new(vec![0.0; 2], 1);
        let v = vec![4.0, -8.0];
        let ups = vec![update(&init, vec![0.0, 0.0], 1, 1), update(&init, v, 3, 1)];
        assert_eq!(fma_aggregate(&ups, &init).unwrap().values, vec![3.0, -6.0]);
    }

    #[test]
    fn fma_matches_loop_oracle() {
        let mut rng = crate::rng::rng_from(17);
        let init = ParamVector::new(random_vec(&mut rng, 12), 1);
        let ns = [3usize, 7, 1, 12, 5];
        let ups: Vec<_> = ns
            .iter()
            .map(|&n| update(&init, random_vec(&mut rng, 12), n, 2))
            .collect();
        let out = fma_aggregate(&ups, &init).unwrap();
        let total: usize = ns.iter().sum();
        for j in 0..12 {
            let mut acc = 0.0;
            for u in &ups {
                acc += u.n_k as f64 * u.final_params.values[j];
            }
            assert!((out.values[j] - acc / total as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregation_errors() {
        let init = ParamVector::new(vec![0.0; 2], 1);
        assert!(fma_aggregate(&[], &init).is_err());
        let foreign = ClientUpdate {
            delta: vec![0.0; 2],
            n_k: 1,
            tau_k: 1,
            final_params: ParamVector::new(vec![0.0; 2], 2),
        };
        assert!(matches!(
            fma_aggregate(&[foreign], &init),
            Err(Error::FingerprintMismatch { .. })
        ));
        let zero_tau = update(&init, vec![1.0, 1.0], 1, 0);
        assert!(fednova_aggregate(&[zero_tau], &init).is_err());
        assert!(fedgma_mask(&[], 0.8).is_err());
    }

    #[test]
    fn fednova_equal_tau_is_fedavg() {
        let mut rng = crate::rng::rng_from(3);
        let init = ParamVector::new(random_vec(&mut rng, 8), 1);
        let ups: Vec<_> = [4usize, 9, 2]
            .iter()
            .map(|&n| update(&init, random_vec(&mut rng, 8), n, 6))
            .collect();
        assert_eq!(
            fednova_aggregate(&ups, &init).unwrap(),
            fma_aggregate(&ups, &init).unwrap()
        );
    }

    #[test]
    fn fednova_single_client() {
        let init = ParamVector::new(vec![1.0, 2.0], 1);
        let up = update(&init, vec![1.5, 1.0], 4, 7);
        let out = fednova_aggregate(&[up], &init).unwrap();
        assert_eq!(out.values, vec![1.5, 1.0]);
    }

    #[test]
    fn fednova_hand_evaluation() {
        let init = ParamVector::new(vec![1.0, -1.0], 1);
        let d = [0.4, 0.2];
        let p: Vec<f64> = init.values.iter().zip(&d).map(|(w, d)| w + d).collect();
        let ups = vec![update(&init, p.clone(), 5, 1), update(&init, p, 5, 4)];
        let out = fednova_aggregate(&ups, &init).unwrap();
        for j in 0..2 {
            let expected = init.values[j] + 2.5 * (d[j] / 1.0 + d[j] / 4.0) / 2.0;
            assert!((out.values[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn fedgma_full_agreement_and_threshold_off() {
        let init = ParamVector::new(vec![0.0; 3], 1);
        let ups = vec![
            update(&init, vec![1.0, -2.0, 0.5], 2, 1),
            update(&init, vec![3.0, -1.0, 0.1], 6, 1),
        ];
        let fma = fma_aggregate(&ups, &init).unwrap();
        let masked = apply_step(&init, &fedgma_mask(&ups, 0.8).unwrap(), 1.0).unwrap();
        for (a, b) in masked.values.iter().zip(&fma.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let mixed = vec![
            update(&init, vec![1.0, -2.0, 0.5], 2, 1),
            update(&init, vec![-3.0, 1.0, 0.1], 6, 1),
        ];
        let fma = fma_aggregate(&mixed, &init).unwrap();
        let unmasked = apply_step(&init, &fedgma_mask(&mixed, 0.0).unwrap(), 1.0).unwrap();
        for (a, b) in unmasked.values.iter().zip(&fma.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fedgma_opposite_deltas_cancel() {
        let init = ParamVector::new(vec![0.0; 2], 1);
        let ups = vec![
            update(&init, vec![1.0, -2.0], 3, 1),
            update(&init, vec![-1.0, 2.0], 3, 1),
        ];
        assert_eq!(fedgma_mask(&ups, 0.8).unwrap(), vec![0.0, 0.0]);
        // one of two clients agreeing (0.5) is below 0.8
        let ups = vec![
            update(&init, vec![1.0, -2.0], 3, 1),
            update(&init, vec![-0.5, 1.0], 3, 1),
        ];
        assert_eq!(fedgma_mask(&ups, 0.8).unwrap(), vec![0.0, 0.0]);
        assert_eq!(fedgma_mask(&ups, 0.5).unwrap(), vec![0.25, -0.5]);
    }

    #[test]
    fn adam_without_momentum() {
        let hp = AdaptiveParams { eta: 0.1, beta1: 0.0, beta2: 1.0, tau: 0.01 };
        let g = ParamVector::new(vec![1.0, 2.0, 3.0], 1);
        let c = 4.0;
        let mut mom = ServerMoments { m: vec![0.0; 3], v: vec![c; 3] };
        let delta = [0.5, -1.0, 0.25];
        let out = fedadam_step(&g, &mut mom, &delta, hp).unwrap();
        for j in 0..3 {
            let expected = g.values[j] + 0.1 * delta[j] / (c.sqrt() + 0.01);
            assert!((out.values[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn yogi_matches_adam_from_zero_state() {
        // v = 0 <= d^2 puts Yogi on its additive branch, which coincides with Adam
        let mut rng = crate::rng::rng_from(8);
        let hp = AdaptiveParams::default();
        let g = ParamVector::new(random_vec(&mut rng, 16), 1);
        let mut a = ServerMoments::zeros(16);
        let mut y = ServerMoments::zeros(16);
        let delta = random_vec(&mut rng, 16);
        let out_a = fedadam_step(&g, &mut a, &delta, hp).unwrap();
        let out_y = fedyogi_step(&g, &mut y, &delta, hp).unwrap();
        for (p, q) in out_a.values.iter().zip(&out_y.values) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(a, y);
    }

    #[test]
    fn yogi_second_moment_branches() {
        let mut rng = crate::rng::rng_from(9);
        let hp = AdaptiveParams::default();
        let n = 16;
        let delta = random_vec(&mut rng, n);
        let v: Vec<f64> = delta.iter().map(|d| d * d + rng.random_range(0.01..1.0)).collect();
        let g = ParamVector::new(vec![0.0; n], 1);
        let mut a = ServerMoments { m: vec![0.0; n], v: v.clone() };
        let mut y = ServerMoments { m: vec![0.0; n], v: v.clone() };
        fedadam_step(&g, &mut a, &delta, hp).unwrap();
        fedyogi_step(&g, &mut y, &delta, hp).unwrap();
        for j in 0..n {
            let d2 = delta[j] * delta[j];
            // v >= d^2: Yogi subtracts (1-b2) d^2, Adam moves (1-b2) of the way to d^2
            assert!((y.v[j] - (v[j] - (1.0 - hp.beta2) * d2)).abs() < 1e-15);
            let gap = (y.v[j] - a.v[j]) - (1.0 - hp.beta2) * (v[j] - 2.0 * d2);
            assert!(gap.abs() < 1e-15);
        }
        // with b2 = 1 both keep v unchanged and agree exactly
        let hp1 = AdaptiveParams { beta2: 1.0, ..hp };
        let mut a = ServerMoments { m: vec![0.0; n], v: v.clone() };
        let mut y = ServerMoments { m: vec![0.0; n], v };
        let out_a = fedadam_step(&g, &mut a, &delta, hp1).unwrap();
        let out_y = fedyogi_step(&g, &mut y, &delta, hp1).unwrap();
        assert_eq!(out_a, out_y);
    }

    #[test]
    fn ima_window() {
        let v = vec![1.0, -2.0, 0.5];
        let h: VecDeque<ParamVector> = VecDeque::from(vec![
            ParamVector::new(v.iter().map(|x| 3.0 * x).collect(), 1),
            ParamVector::new(v.clone(), 1),
        ]);
        assert_eq!(ima_average(&h, 1).unwrap(), h[0]);
        assert_eq!(ima_average(&h, 2).unwrap().values, vec![2.0, -4.0, 1.0]);
        assert!(ima_average(&h, 3).is_err());
    }

    #[test]
    fn ima_matches_naive_mean() {
        let mut rng = crate::rng::rng_from(21);
        let h: VecDeque<ParamVector> = (0..7)
            .map(|_| ParamVector::new(random_vec(&mut rng, 10), 4))
            .collect();
        let out = ima_average(&h, 5).unwrap();
        for j in 0..10 {
            let mut s = 0.0;
            for i in 0..5 {
                s += h[i].values[j];
            }
            assert!((out.values[j] - s / 5.0).abs() < 1e-12);
        }
    }
}
