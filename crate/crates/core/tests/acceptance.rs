//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::time::{Duration, Instant};

use common::ensembles::{brute_force_wens_loss, random_ensemble};
use common::grad::max_fd_error;
use fima_core::data::{gen_synthetic_classification, partition_dirichlet, Dataset, Partition};
use fima_core::decomposition::{
    cka_similarity, contract_towards_average, decompose, fma_wens_gap, mmd_rbf, mmd_rbf_biased,
};
use fima_core::federation::{
    apply_step, fedadam_step, fedgma_mask, fednova_aggregate, fedyogi_step, fma_aggregate,
    local_train, run_federation, AdaptiveParams, Aggregator, ClientUpdate, FederationConfig,
    FederationOutcome, FederationTask, ImaConfig, LocalTraining, MildExploration, ServerMoments,
};
use fima_core::landscape::{build_plane, default_ranges, eval_plane, interpolate_1d, reconstruct_at};
use fima_core::nn::{evaluate, init_params, Activation, LossKind, LrSchedule, ModelSpec, ParamVector};
use fima_core::rng::rng_from;
use ndarray::Array2;
use rand::Rng as _;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn timed(limit: Duration, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let v = f();
    let took = start.elapsed();
    let within = took <= limit;
    verdict(
        v.pass && within,
        format!("{} [{:.2}s, limit {}s]", v.detail, took.as_secs_f64(), limit.as_secs()),
    )
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn decomposition_identity() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (spec, data, ens) = random_ensemble(3, 4, 40, 1000 + seed);
        assert!(spec.param_count() <= 100 && data.len() == 120);
        let r = decompose(&ens, &spec, &data).unwrap();
        let direct = brute_force_wens_loss(&ens, &spec, &data);
        worst = worst.max((r.bias_term + r.variance_term + r.covariance_term - direct).abs());
    }
    verdict(worst < 1e-9, format!("max |bias+var+cov - direct| = {worst:.2e} over 20 ensembles"))
}

fn contraction_scaling() -> Verdict {
    let spec = ModelSpec::mlp(&[4, 10, 3], Activation::Relu, LossKind::Mse).unwrap();
    let data = gen_synthetic_classification(21, 3, 30, 4, 2.0).unwrap();
    let weights = [0.4, 0.35, 0.25];
    let mut slopes = Vec::new();
    for seed in 0..5 {
        let base = common::random_params(&spec, 0.8, 200 + seed);
        let models: Vec<_> = (0..3).map(|k| common::perturbed(&base, 0.25, 300 + 3 * seed + k)).collect();
        let pts: Vec<(f64, f64)> = [1.0, 0.5, 0.25, 0.125]
            .iter()
            .map(|&s| {
                let c = contract_towards_average(&models, &weights, s).unwrap();
                let g = fma_wens_gap(&c, &weights, &spec, data.features.view()).unwrap();
                (s.ln(), g.gap.ln())
            })
            .collect();
        slopes.push(ls_slope(&pts));
    }
    let linear = ModelSpec::mlp(&[4, 3], Activation::Identity, LossKind::Mse).unwrap();
    let lin_models: Vec<_> = (0..3).map(|k| common::random_params(&linear, 1.0, 400 + k)).collect();
    let lin_gap = fma_wens_gap(&lin_models, &weights, &linear, data.features.view()).unwrap().gap;
    let pass = slopes.iter().all(|s| (1.75..=2.25).contains(s)) && lin_gap < 1e-12;
    verdict(pass, format!("slopes {slopes:.3?}, linear gap {lin_gap:.2e}"))
}

/// Criterion-3 task for one seed and heterogeneity level.
struct TrendTask {
    spec: ModelSpec,
    train: Dataset,
    test: Dataset,
    partition: Partition,
}

impl TrendTask {
    fn new(seed: u64, alpha: f64) -> Self {
        let train = gen_synthetic_classification(seed, 4, 150, 8, 2.5).unwrap();
        let test = gen_synthetic_classification(seed + 10_000, 4, 150, 8, 2.5).unwrap();
        let partition = partition_dirichlet(&train, 20, alpha, seed).unwrap();
        let spec = ModelSpec::mlp(&[8, 32, 4], Activation::Relu, LossKind::SoftmaxCrossEntropy).unwrap();
        TrendTask { spec, train, test, partition }
    }

    fn task(&self) -> FederationTask<'_> {
        FederationTask {
            spec: &self.spec,
            train: &self.train,
            partition: &self.partition,
            test: &self.test,
        }
    }
}

fn trend_config(seed: u64, ima: bool) -> FederationConfig {
    FederationConfig {
        num_clients: 20,
        participation: 0.25,
        rounds: 120,
        local_epochs: 3,
        batch_size: 20,
        lr_schedule: LrSchedule::Exponential { lr0: 0.05, rate: 0.01 },
        momentum: 0.9,
        aggregator: Aggregator::FedAvg,
        prox_mu: 0.0,
        ima: ima.then_some(ImaConfig {
            start_round: 90,
            window: 5,
            mild: MildExploration::Decay { rate: 0.03 },
        }),
        checkpoint_every: 0,
        seed,
    }
}

fn last10(o: &FederationOutcome) -> f64 {
    let t = &o.trajectory;
    t[t.len() - 10..].iter().map(|r| r.test_acc).sum::<f64>() / 10.0
}

/// Runs of the first seed at the strongest heterogeneity, reused by the
/// basin and locality checks.
struct TrendRuns {
    task: TrendTask,
    fma: FederationOutcome,
    ima: FederationOutcome,
}

fn ima_trend() -> (Verdict, TrendRuns) {
    let alphas = [0.1, 1.0, 10.0];
    let mut gains = Vec::new();
    let mut accs = Vec::new();
    let mut kept = None;
    for &alpha in &alphas {
        let mut g = Vec::new();
        let (mut fa, mut ia) = (0.0, 0.0);
        for seed in 0..5 {
            let tt = TrendTask::new(seed, alpha);
            let fma = run_federation(&trend_config(seed, false), tt.task()).unwrap();
            let ima = run_federation(&trend_config(seed, true), tt.task()).unwrap();
            g.push(last10(&ima) - last10(&fma));
            fa += last10(&fma) / 5.0;
            ia += last10(&ima) / 5.0;
            if alpha == 0.1 && seed == 0 {
                kept = Some(TrendRuns { task: tt, fma, ima });
            }
        }
        gains.push(g.iter().sum::<f64>() / 5.0);
        accs.push((fa, ia));
    }
    let pass = gains[0] > 0.0 && gains[0] >= gains[2];
    let detail = alphas
        .iter()
        .zip(&gains)
        .zip(&accs)
        .map(|((a, g), (f, i))| format!("alpha {a}: fma {:.2}% ima {:.2}% gain {:+.2} pts", 100.0 * f, 100.0 * i, 100.0 * g))
        .collect::<Vec<_>>()
        .join("; ");
    (verdict(pass, detail), kept.unwrap())
}

fn window_one_equivalence() -> Verdict {
    let tt = TrendTask::new(0, 0.1);
    let plain = trend_config(0, false);
    let mut ima = plain.clone();
    ima.ima = Some(ImaConfig { start_round: 90, window: 1, mild: MildExploration::Base });
    let a = run_federation(&plain, tt.task()).unwrap();
    let b = run_federation(&ima, tt.task()).unwrap();
    let same_rows = a.trajectory.iter().zip(&b.trajectory).all(|(x, y)| {
        x.lr.to_bits() == y.lr.to_bits()
            && x.test_loss.to_bits() == y.test_loss.to_bits()
            && x.test_acc.to_bits() == y.test_acc.to_bits()
            && x.locality.to_bits() == y.locality.to_bits()
            && x.clients == y.clients
    });
    let same_model = a.state.global == b.state.global;
    verdict(
        same_rows && same_model,
        format!("120 rounds, trajectory bit-identical: {same_rows}, final model bit-identical: {same_model}"),
    )
}

fn equal_step_updates() -> (ParamVector, Vec<ClientUpdate>) {
    let spec = ModelSpec::mlp(&[4, 6, 3], Activation::Relu, LossKind::SoftmaxCrossEntropy).unwrap();
    let start = init_params(&spec, 5);
    let hp = LocalTraining { epochs: 2, batch_size: 10, lr: 0.05, momentum: 0.9, prox_mu: 0.0 };
    // 13, 17 and 20 samples all take ceil(n / 10) = 2 steps per epoch
    let updates = [13, 17, 20]
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let data = gen_synthetic_classification(50 + k as u64, 3, n, 4, 2.0).unwrap();
            let idx: Vec<usize> = (0..n).collect();
            let data = data.subset(&idx).unwrap();
            local_train(&start, &spec, &data, hp, &mut rng_from(60 + k as u64)).unwrap()
        })
        .collect::<Vec<_>>();
    (start, updates)
}

fn aggregator_consistency() -> Verdict {
    let (start, updates) = equal_step_updates();
    assert!(updates.iter().all(|u| u.tau_k == updates[0].tau_k));
    let fedavg = fma_aggregate(&updates, &start).unwrap();
    let nova = fednova_aggregate(&updates, &start).unwrap();
    let nova_ok = nova == fedavg;

    let gma = apply_step(&start, &fedgma_mask(&updates, 0.0).unwrap(), 1.0).unwrap();
    let gma_diff = gma
        .values
        .iter()
        .zip(&fedavg.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // previous second moments at or above the squared pseudo-gradient
    let mut rng = rng_from(77);
    let n = start.len();
    let delta: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
    let v_prev: Vec<f64> = delta.iter().map(|d| d * d * rng.random_range(1.0..4.0)).collect();
    let m_prev: Vec<f64> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
    let hp = AdaptiveParams::default();
    let mut adam_state = ServerMoments { m: m_prev.clone(), v: v_prev.clone() };
    let mut yogi_state = ServerMoments { m: m_prev, v: v_prev };
    let adam = fedadam_step(&start, &mut adam_state, &delta, hp).unwrap();
    let yogi = fedyogi_step(&start, &mut yogi_state, &delta, hp).unwrap();
    let yogi_diff = adam
        .values
        .iter()
        .zip(&yogi.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let pass = nova_ok && gma_diff < 1e-12 && yogi_diff < 1e-12;
    verdict(
        pass,
        format!(
            "fednova==fedavg bitwise: {nova_ok}; fedgma(eps=0) max diff {gma_diff:.2e}; fedyogi vs fedadam max diff {yogi_diff:.2e}"
        ),
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn landscape_geometry() -> Verdict {
    let spec = ModelSpec::mlp(&[4, 6, 3], Activation::Relu, LossKind::SoftmaxCrossEntropy).unwrap();
    let (mut ortho, mut recon): (f64, f64) = (0.0, 0.0);
    for seed in 0..20 {
        let w: Vec<_> = (0..3).map(|i| common::random_params(&spec, 1.0, 500 + 3 * seed + i)).collect();
        let b = build_plane(&w[0], &w[1], &w[2]).unwrap();
        ortho = ortho.max(dot(&b.u_hat, &b.v_hat).abs());
        for (anchor, (x, y)) in [(&w[0], (0.0, 0.0)), (&w[1], b.coords_w2), (&w[2], b.coords_w3)] {
            let r = reconstruct_at(&b, x, y);
            for (p, q) in r.values.iter().zip(&anchor.values) {
                recon = recon.max((p - q).abs());
            }
        }
    }

    let data = gen_synthetic_classification(8, 3, 20, 4, 2.0).unwrap();
    let (w1, w2) = (common::random_params(&spec, 1.0, 600), common::random_params(&spec, 1.0, 601));
    let betas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let line = interpolate_1d(&w1, &w2, &betas, &spec, &data).unwrap();
    let eval = |w: &ParamVector| {
        evaluate(w, &spec, data.features.view(), data.one_hot_targets.view(), &data.labels).unwrap()
    };
    let ends_exact = line.loss[[0, 10]] == eval(&w1).0 && line.loss[[0, 0]] == eval(&w2).0;

    let linear = ModelSpec::mlp(&[4, 3], Activation::Identity, LossKind::Mse).unwrap();
    let w: Vec<_> = (0..3).map(|i| common::random_params(&linear, 1.0, 700 + i)).collect();
    let b = build_plane(&w[0], &w[1], &w[2]).unwrap();
    let (ar, br) = default_ranges(&b);
    let g = eval_plane(&b, ar, br, 9, 8, &linear, &data).unwrap();
    let (nb, na) = g.loss.dim();
    let mut d2a = Vec::new();
    let mut d2b = Vec::new();
    for ib in 0..nb {
        for ia in 1..na - 1 {
            d2a.push(g.loss[[ib, ia + 1]] - 2.0 * g.loss[[ib, ia]] + g.loss[[ib, ia - 1]]);
        }
    }
    for ib in 1..nb - 1 {
        for ia in 0..na {
            d2b.push(g.loss[[ib + 1, ia]] - 2.0 * g.loss[[ib, ia]] + g.loss[[ib - 1, ia]]);
        }
    }
    let spread = |d: &[f64]| d.iter().map(|v| (v - d[0]).abs()).fold(0.0, f64::max);
    let quad = spread(&d2a).max(spread(&d2b));

    let pass = ortho < 1e-9 && recon < 1e-9 && ends_exact && quad < 1e-6;
    verdict(
        pass,
        format!(
            "max |<u,v>| {ortho:.2e}, max anchor error {recon:.2e}, endpoints exact: {ends_exact}, second-difference spread {quad:.2e}"
        ),
    )
}

fn basin_observation(runs: &TrendRuns) -> Verdict {
    let spec = &runs.task.spec;
    let test = &runs.task.test;
    let betas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let global = &runs.ima.state.global;
    let mut monotone = 0;
    for (_, u) in &runs.ima.last_round {
        // beta = 1 is the client, beta = 0 the global model
        let l = interpolate_1d(&u.final_params, global, &betas, spec, test).unwrap().loss;
        if (0..10).all(|i| l[[0, i]] <= l[[0, i + 1]]) {
            monotone += 1;
        }
    }
    let ima_model = runs.ima.state.ima_model.as_ref().unwrap();
    let grid = interpolate_1d(global, ima_model, &betas, spec, test).unwrap();
    let l = &grid.loss;
    let argmin = (0..11).min_by(|&i, &j| l[[0, i]].total_cmp(&l[[0, j]])).unwrap();
    let err_argmin = (0..11).min_by(|&i, &j| grid.error[[0, i]].total_cmp(&grid.error[[0, j]])).unwrap();
    // index 10 is the FMA end
    let inside_or_ima = argmin < 10;
    let clients = runs.ima.last_round.len();
    verdict(
        monotone >= 3 && inside_or_ima,
        format!(
            "clients non-increasing toward global: {monotone}/{clients}; FMA->IMA loss argmin at beta={} (FMA {:.4}, IMA {:.4}; beta=1 is FMA); error argmin at beta={} (informational)",
            betas[argmin],
            l[[0, 10]],
            l[[0, 0]],
            betas[err_argmin]
        ),
    )
}

fn locality_stabilization(runs: &TrendRuns) -> Verdict {
    let loc: Vec<f64> = runs.fma.trajectory.iter().map(|r| r.locality).collect();
    let r = loc.len();
    let fifth = r / 5;
    let mut mid = loc[2 * fifth..3 * fifth].to_vec();
    mid.sort_by(f64::total_cmp);
    let m = mid.len();
    let median = if m.is_multiple_of(2) { 0.5 * (mid[m / 2 - 1] + mid[m / 2]) } else { mid[m / 2] };
    let late = loc[r - fifth..].iter().copied().fold(0.0, f64::max);
    verdict(
        late <= 2.0 * median,
        format!("max late locality {late:.4} vs 2 x middle median {:.4}", 2.0 * median),
    )
}

/// Orthogonal matrix from Gram-Schmidt on a random square matrix.
fn random_orthogonal(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from(seed);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        cols.push(v.iter().map(|x| x / norm).collect());
    }
    Array2::from_shape_fn((n, n), |(i, j)| cols[j][i])
}

fn similarity_diagnostics() -> Verdict {
    let mut rng = rng_from(88);
    let a = Array2::from_shape_fn((40, 5), |_| rng.random_range(-1.0..1.0));
    let q = random_orthogonal(5, 89);
    let self_sim = cka_similarity(a.view(), a.view()).unwrap();
    let ortho = cka_similarity(a.view(), a.dot(&q).view()).unwrap();
    let scaled = cka_similarity(a.view(), (&a * 3.7).view()).unwrap();
    let cka_err = (self_sim - 1.0).abs().max((ortho - self_sim).abs()).max((scaled - 1.0).abs());

    let same = mmd_rbf_biased(a.view(), a.view(), None).unwrap().raw.abs();
    let blob = |center: f64, seed: u64| {
        let mut r = rng_from(seed);
        let normal = rand_distr::StandardNormal;
        Array2::from_shape_fn((50, 2), |(_, j)| if j == 0 { center } else { 0.0 } + r.sample::<f64, _>(normal))
    };
    let sep = mmd_rbf(blob(0.0, 90).view(), blob(10.0, 91).view(), None).unwrap();
    let pass = cka_err < 1e-9 && same < 1e-9 && sep.value > 0.5;
    verdict(
        pass,
        format!(
            "max CKA deviation {cka_err:.2e}, MMD^2 identical {same:.2e}, MMD^2 separated {:.3} (bandwidth {:.2})",
            sep.value, sep.bandwidth
        ),
    )
}

fn gradient_oracle() -> Verdict {
    let nets = [
        ModelSpec::mlp(&[3, 5, 2], Activation::Relu, LossKind::Mse).unwrap(),
        ModelSpec::mlp(&[2, 6, 3], Activation::Relu, LossKind::SoftmaxCrossEntropy).unwrap(),
        ModelSpec::mlp(&[5, 4], Activation::Identity, LossKind::Mse).unwrap(),
        ModelSpec::mlp(&[3, 3, 3, 2], Activation::Relu, LossKind::SoftmaxCrossEntropy).unwrap(),
        ModelSpec::mlp(&[4, 4, 3], Activation::Relu, LossKind::Mse).unwrap(),
    ];
    let errs: Vec<f64> = nets.iter().enumerate().map(|(i, s)| max_fd_error(s, 800 + i as u64)).collect();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} over 5 nets"))
}

fn main() {
    let secs = Duration::from_secs;
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    results.push(("1 decomposition identity", timed(secs(10), decomposition_identity)));
    results.push(("2 averaging gap scaling", timed(secs(10), contraction_scaling)));
    let start = Instant::now();
    let (trend, runs) = ima_trend();
    let took = start.elapsed();
    results.push((
        "3 IMA gain vs heterogeneity",
        verdict(
            trend.pass && took <= secs(300),
            format!("{} [{:.2}s, limit 300s]", trend.detail, took.as_secs_f64()),
        ),
    ));
    results.push(("4 window-one equivalence", timed(secs(60), window_one_equivalence)));
    results.push(("5 aggregator consistency", timed(secs(10), aggregator_consistency)));
    results.push(("6 landscape geometry", timed(secs(30), landscape_geometry)));
    results.push(("7 basin observation", basin_observation(&runs)));
    results.push(("8 locality stabilization", locality_stabilization(&runs)));
    results.push(("9 CKA/MMD diagnostics", timed(secs(10), similarity_diagnostics)));
    results.push(("10 gradient oracle", timed(secs(5), gradient_oracle)));

    let mut failed = 0;
    for (name, v) in &results {
        println!("criterion {name}: {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
