//! Subcommand implementations. Each writes its outputs under `out` and
//! returns the relative paths it produced.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use fima_core::decomposition::{decompose as decompose_ensemble, DecompositionReport, EnsembleSource, JointEnsemble};
use fima_core::federation::{
    run_federation, run_federation_observed, train_replica, train_round_clients, ClientUpdate,
    FederationConfig, FederationOutcome, FederationTask, GlobalState, ModelKind, RoundObserver,
};
use fima_core::landscape::{build_plane, default_ranges, eval_plane, interpolate_1d, lattice};
use fima_core::nn::{save_checkpoint, LossKind, ParamVector};
use fima_core::smoothing::smooth_series;
use rayon::prelude::*;

use crate::config::{
    json_diff, AggregatorConfig, EnsembleSourceConfig, ExperimentConfig, LrConfig, MildConfig,
};
use crate::error::{CliError, CliResult};
use crate::experiment::{create_dir, load_model, write_file, Experiment};
use crate::manifest::{unix_now, RunManifest};

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<String>> {
    let started = unix_now();
    create_dir(out)?;
    let (train, test) = crate::experiment::load_datasets(cfg)?;
    write_file(&out.join("train.csv"), |w| train.write_csv(w))?;
    write_file(&out.join("test.csv"), |w| test.write_csv(w))?;
    let files = vec!["train.csv".to_string(), "test.csv".to_string()];
    RunManifest::new("gen-data", cfg.hash(), cfg.seed, started).finish(out, &files)?;
    Ok(files)
}

pub fn partition(cfg: &ExperimentConfig, out: &Path) -> CliResult<(Vec<String>, String)> {
    let started = unix_now();
    create_dir(out)?;
    let exp = Experiment::build(cfg)?;
    let report = fima_core::data::validate_partition(&exp.train, &exp.partition);
    write_file(&out.join("partition.csv"), |w| exp.partition.write_csv(w))?;
    let text = report.to_string();
    let path = out.join("partition_report.txt");
    std::fs::write(&path, format!("{text}\n")).map_err(|e| CliError::io(&path, e))?;
    let files = vec!["partition.csv".to_string(), "partition_report.txt".to_string()];
    RunManifest::new("partition", cfg.hash(), cfg.seed, started).finish(out, &files)?;
    Ok((files, text))
}

pub const METRICS_HEADER: &str = "round,lr,test_loss,test_acc,locality_l2,broadcast_kind,aggregator";

pub fn write_metrics(path: &Path, cfg: &ExperimentConfig, outcome: &FederationOutcome) -> CliResult<()> {
    let name = cfg.federation.aggregator.to_core().name();
    let every = cfg.federation.eval_every;
    let last = cfg.federation.rounds;
    write_file(path, |w| {
        writeln!(w, "{METRICS_HEADER}")?;
        for r in outcome.trajectory.iter().filter(|r| r.round % every == 0 || r.round == last) {
            writeln!(
                w,
                "{},{:?},{:?},{:?},{:?},{},{name}",
                r.round,
                r.lr,
                r.test_loss,
                r.test_acc,
                r.locality,
                r.broadcast_kind.as_str()
            )?;
        }
        Ok(())
    })
}

pub struct RunResult {
    pub files: Vec<String>,
    pub outcome: FederationOutcome,
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> CliResult<RunResult> {
    let started = unix_now();
    create_dir(&out.join("checkpoints"))?;
    let exp = Experiment::build(cfg)?;
    let fed = cfg.federation_config()?;
    let outcome = run_federation(&fed, exp.task())?;

    let config_path = out.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml_string()).map_err(|e| CliError::io(&config_path, e))?;
    write_metrics(&out.join("metrics.csv"), cfg, &outcome)?;
    let mut files = vec!["config.toml".to_string(), "metrics.csv".to_string()];
    for c in &outcome.checkpoints {
        let rel = format!("checkpoints/{}", c.file_name());
        let path = out.join(&rel);
        save_checkpoint(&path, &c.params).map_err(|e| match e {
            fima_core::Error::Io(source) => CliError::io(&path, source),
            other => other.into(),
        })?;
        files.push(rel);
    }
    RunManifest::new("run", cfg.hash(), cfg.seed, started).finish(out, &files)?;
    Ok(RunResult { files, outcome })
}

pub const DECOMPOSITION_HEADER: &str = "round,bias_term,train_bias_mean_sq,heter_bias_mean_sq,variance_term,covariance_term,locality,approx_gap,direct_loss,fma_loss";

/// Builds a joint ensemble at every decomposition round while the run
/// proceeds.
struct Decomposer<'a> {
    fed: &'a FederationConfig,
    task: FederationTask<'a>,
    source: EnsembleSourceConfig,
    every: u32,
    recent: VecDeque<(u32, ParamVector)>,
    rows: Vec<(u32, DecompositionReport)>,
    error: Option<CliError>,
}

impl Decomposer<'_> {
    fn ensemble_at(&self, round: u32) -> CliResult<Option<JointEnsemble>> {
        let finals = |ups: Vec<ClientUpdate>| ups.into_iter().map(|u| u.final_params).collect::<Vec<_>>();
        let (samples, source) = match self.source {
            EnsembleSourceConfig::RoundClients { samples } => {
                if self.recent.len() < samples {
                    return Ok(None);
                }
                let draws = self
                    .recent
                    .iter()
                    .map(|(r, b)| train_round_clients(self.fed, self.task, b, *r).map(finals))
                    .collect::<fima_core::Result<Vec<_>>>()?;
                (draws, EnsembleSource::RoundClients)
            }
            EnsembleSourceConfig::SeedReplicas { samples } => {
                let broadcast = &self.recent[0].1;
                let draws = (0..samples)
                    .map(|s| train_replica(self.fed, self.task, broadcast, round, s).map(finals))
                    .collect::<fima_core::Result<Vec<_>>>()?;
                (draws, EnsembleSource::SeedReplicas)
            }
        };
        let indices = self.task.partition.client_indices.clone();
        Ok(Some(JointEnsemble::with_counts(samples, indices, source)?))
    }
}

impl RoundObserver for Decomposer<'_> {
    fn on_broadcast(&mut self, round: u32, _kind: ModelKind, model: &ParamVector) {
        let keep = match self.source {
            EnsembleSourceConfig::RoundClients { samples } => samples,
            EnsembleSourceConfig::SeedReplicas { .. } => 1,
        };
        self.recent.push_front((round, model.clone()));
        self.recent.truncate(keep);
    }

    fn on_round_end(&mut self, round: u32, _b: &ParamVector, _u: &[(usize, ClientUpdate)], _s: &GlobalState) {
        if self.error.is_some() || !round.is_multiple_of(self.every) {
            return;
        }
        let result = self.ensemble_at(round).and_then(|ens| match ens {
            Some(e) => Ok(Some(decompose_ensemble(&e, self.task.spec, self.task.train)?)),
            None => Ok(None),
        });
        match result {
            Ok(Some(r)) => self.rows.push((round, r)),
            Ok(None) => {}
            Err(e) => self.error = Some(e),
        }
    }
}

/// Re-runs the federation, decomposing at the configured cadence. With
/// `run_dir`, the stored manifest and final model must match the re-run.
pub fn decompose(cfg: &ExperimentConfig, out: &Path, run_dir: Option<&Path>) -> CliResult<Vec<String>> {
    let started = unix_now();
    let block = cfg
        .decomposition
        .as_ref()
        .filter(|d| d.enabled)
        .ok_or_else(|| CliError::Config("no enabled [decomposition] block".into()))?;
    let exp = Experiment::build(cfg)?;
    if exp.spec.loss_kind() != LossKind::Mse {
        return Err(CliError::Config("decomposition needs model.loss = \"mse\"".into()));
    }
    if let Some(dir) = run_dir {
        let m = RunManifest::load(&dir.join("manifest.json"))?;
        if m.config_hash != cfg.hash() {
            return Err(CliError::Invariant(format!(
                "run in {} used config {}, this config hashes to {}",
                dir.display(),
                m.config_hash,
                cfg.hash()
            )));
        }
    }
    create_dir(out)?;
    let fed = cfg.federation_config()?;
    let mut obs = Decomposer {
        fed: &fed,
        task: exp.task(),
        source: block.source,
        every: block.every,
        recent: VecDeque::new(),
        rows: Vec::new(),
        error: None,
    };
    let outcome = run_federation_observed(&fed, exp.task(), &mut obs)?;
    if let Some(e) = obs.error {
        return Err(e);
    }
    if let Some(dir) = run_dir {
        let stored = load_model(&dir.join("checkpoints/final_fma.fima"), &exp.spec)?;
        if stored != outcome.state.global {
            return Err(CliError::Invariant(format!(
                "re-run final model differs from {}",
                dir.join("checkpoints/final_fma.fima").display()
            )));
        }
    }
    write_file(&out.join("decomposition.csv"), |w| {
        writeln!(w, "{DECOMPOSITION_HEADER}")?;
        for (round, r) in &obs.rows {
            writeln!(
                w,
                "{round},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.bias_term,
                r.train_bias_mean_sq,
                r.heter_bias_mean_sq,
                r.variance_term,
                r.covariance_term,
                r.locality_delta,
                r.approx_gap,
                r.direct_expected_loss,
                r.fma_loss
            )?;
        }
        Ok(())
    })?;
    let files = vec!["decomposition.csv".to_string()];
    RunManifest::new("decompose", cfg.hash(), cfg.seed, started).finish(out, &files)?;
    Ok(files)
}

fn anchors(cfg: &ExperimentConfig, given: &[PathBuf], need: usize) -> CliResult<Vec<PathBuf>> {
    let list = if given.is_empty() {
        cfg.landscape.as_ref().map(|l| l.anchors.clone()).unwrap_or_default()
    } else {
        given.to_vec()
    };
    if list.len() != need {
        return Err(CliError::Config(format!("expected {need} anchor checkpoints, got {}", list.len())));
    }
    Ok(list)
}

fn landscape_block(cfg: &ExperimentConfig) -> crate::config::LandscapeBlock {
    cfg.landscape.clone().unwrap_or_else(|| {
        toml::from_str("").expect("landscape defaults parse")
    })
}

pub fn landscape_1d(cfg: &ExperimentConfig, out: &Path, given: &[PathBuf]) -> CliResult<Vec<String>> {
    let started = unix_now();
    let paths = anchors(cfg, given, 2)?;
    let exp = Experiment::build(cfg)?;
    let w1 = load_model(&paths[0], &exp.spec)?;
    let w2 = load_model(&paths[1], &exp.spec)?;
    let block = landscape_block(cfg);
    let betas = lattice((block.beta_range[0], block.beta_range[1]), block.points);
    let grid = interpolate_1d(&w1, &w2, &betas, &exp.spec, &exp.test)?;
    create_dir(out)?;
    write_file(&out.join("landscape_1d.csv"), |w| grid.write_csv(w))?;
    let files = vec!["landscape_1d.csv".to_string()];
    RunManifest::new("landscape-1d", cfg.hash(), cfg.seed, started).finish(out, &files)?;
    Ok(files)
}

pub fn landscape_2d(cfg: &ExperimentConfig, out: &Path, given: &[PathBuf]) -> CliResult<Vec<String>> {
    let started = unix_now();
    let paths = anchors(cfg, given, 3)?;
    let exp = Experiment::build(cfg)?;
    let w: Vec<ParamVector> = paths.iter().map(|p| load_model(p, &exp.spec)).collect::<CliResult<_>>()?;
    let basis = build_plane(&w[0], &w[1], &w[2])?;
    let block = landscape_block(cfg);
    let (da, db) = default_ranges(&basis);
    let a = block.a_range.map_or(da, |r| (r[0], r[1]));
    let b = block.b_range.map_or(db, |r| (r[0], r[1]));
    let grid = eval_plane(&basis, a, b, block.resolution[0], block.resolution[1], &exp.spec, &exp.test)?;
    create_dir(out)?;
    write_file(&out.join("landscape_2d.csv"), |w| grid.write_csv(w))?;
    let files = vec!["landscape_2d.csv".to_string()];
    RunManifest::new("landscape-2d", cfg.hash(), cfg.seed, started).finish(out, &files)?;
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CompareAxis {
    Aggregator,
    Ima,
    Decay,
}

impl CompareAxis {
    /// Config paths an arm may change.
    fn allowed_prefix(self) -> &'static str {
        match self {
            CompareAxis::Aggregator => "federation.aggregator",
            CompareAxis::Ima => "ima",
            CompareAxis::Decay => "ima.mild",
        }
    }
}

fn parse_numbers(fields: &[&str], want: usize, value: &str) -> CliResult<Vec<f64>> {
    if fields.len() != want {
        return Err(CliError::Config(format!("'{value}' needs {want} numeric fields")));
    }
    fields
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| CliError::Config(format!("bad number '{f}' in '{value}'"))))
        .collect()
}

/// `base`, `decay:RATE`, `constant:LR`, `exponential:LR0:RATE`,
/// `cyclic:HI:LO:PERIOD` or `epoch:LR:EPOCHS0:ROUNDS_PER_DROP`.
pub fn parse_mild(value: &str) -> CliResult<MildConfig> {
    let mut parts = value.split(':');
    let head = parts.next().unwrap_or_default();
    let rest: Vec<&str> = parts.collect();
    let schedule = |lr| MildConfig::Schedule { schedule: lr };
    Ok(match head {
        "base" if rest.is_empty() => MildConfig::Base,
        "decay" => MildConfig::Decay { rate: parse_numbers(&rest, 1, value)?[0] },
        "constant" => schedule(LrConfig::Constant { lr: parse_numbers(&rest, 1, value)?[0] }),
        "exponential" => {
            let n = parse_numbers(&rest, 2, value)?;
            schedule(LrConfig::Exponential { lr0: n[0], rate: n[1] })
        }
        "cyclic" => {
            let n = parse_numbers(&rest, 3, value)?;
            schedule(LrConfig::Cyclic { lr_hi: n[0], lr_lo: n[1], period: n[2] as u32 })
        }
        "epoch" => {
            let n = parse_numbers(&rest, 3, value)?;
            schedule(LrConfig::EpochDecay { lr: n[0], epochs0: n[1] as u32, rounds_per_drop: n[2] as u32 })
        }
        _ => return Err(CliError::Config(format!("unknown decay scheme '{value}'"))),
    })
}

fn parse_aggregator(value: &str, base: AggregatorConfig) -> CliResult<AggregatorConfig> {
    let fresh: AggregatorConfig = toml::from_str(&format!("kind = {value:?}"))
        .map_err(|_| CliError::Config(format!("unknown aggregator '{value}'")))?;
    // keep tuned hyperparameters when the base config already uses this rule
    Ok(if std::mem::discriminant(&fresh) == std::mem::discriminant(&base) { base } else { fresh })
}

/// Arm configs for `values` along `axis`, all sharing the base seed.
pub fn compare_arms(base: &ExperimentConfig, axis: CompareAxis, values: &[String]) -> CliResult<Vec<ExperimentConfig>> {
    if values.is_empty() {
        return Err(CliError::Config("compare needs at least one arm value".into()));
    }
    let arms = values
        .iter()
        .map(|v| {
            let mut c = base.clone();
            match axis {
                CompareAxis::Aggregator => c.federation.aggregator = parse_aggregator(v, base.federation.aggregator)?,
                CompareAxis::Ima => match v.as_str() {
                    "on" => {
                        if c.ima.is_none() {
                            return Err(CliError::Config("arm 'on' needs an [ima] block".into()));
                        }
                    }
                    "off" => c.ima = None,
                    other => return Err(CliError::Config(format!("ima arm must be on or off, got '{other}'"))),
                },
                CompareAxis::Decay => {
                    let ima = c.ima.as_mut().ok_or_else(|| CliError::Config("decay arms need an [ima] block".into()))?;
                    ima.mild = parse_mild(v)?;
                }
            }
            c.validate()?;
            Ok(c)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let reference = arms[0].canonical_json();
    for (arm, v) in arms.iter().zip(values) {
        let prefix = axis.allowed_prefix();
        let stray: Vec<String> = json_diff(&reference, &arm.canonical_json())
            .into_iter()
            .filter(|p| p != prefix && !p.starts_with(&format!("{prefix}.")))
            .collect();
        if !stray.is_empty() {
            return Err(CliError::Invariant(format!("arm '{v}' differs outside '{prefix}': {stray:?}")));
        }
    }
    Ok(arms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSeedResult {
    pub arm: String,
    pub seed: u64,
    pub final_acc: f64,
    pub last10_acc: f64,
    pub rounds_to_target: Option<u32>,
}

/// Mean broadcast-model accuracy over the final ten rounds.
pub fn last10_accuracy(outcome: &FederationOutcome) -> f64 {
    let t = &outcome.trajectory;
    let tail = &t[t.len().saturating_sub(10)..];
    tail.iter().map(|r| r.test_acc).sum::<f64>() / tail.len() as f64
}

/// First round whose Savitzky-Golay smoothed accuracy (window 10, order 2)
/// reaches `target`.
pub fn rounds_to_target(outcome: &FederationOutcome, target: f64) -> CliResult<Option<u32>> {
    let acc: Vec<f64> = outcome.trajectory.iter().map(|r| r.test_acc).collect();
    let smooth = smooth_series(&acc, 10, 2).map_err(|e| CliError::Config(format!("rounds-to-target: {e}")))?;
    Ok(smooth
        .iter()
        .zip(&outcome.trajectory)
        .find(|(s, _)| **s >= target)
        .map(|(_, r)| r.round))
}

pub struct CompareResult {
    pub files: Vec<String>,
    pub runs: Vec<ArmSeedResult>,
    pub summary: String,
}

pub fn compare(
    base: &ExperimentConfig,
    out: &Path,
    axis: CompareAxis,
    values: &[String],
    seeds: &[u64],
    target: Option<f64>,
) -> CliResult<CompareResult> {
    let started = unix_now();
    if seeds.is_empty() {
        return Err(CliError::Config("compare needs at least one seed".into()));
    }
    let arms = compare_arms(base, axis, values)?;
    let jobs: Vec<(usize, u64)> = (0..arms.len()).flat_map(|a| seeds.iter().map(move |&s| (a, s))).collect();
    let runs: Vec<ArmSeedResult> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let mut cfg = arms[a].clone();
            cfg.seed = seed;
            let exp = Experiment::build(&cfg)?;
            let outcome = run_federation(&cfg.federation_config()?, exp.task())?;
            Ok(ArmSeedResult {
                arm: values[a].clone(),
                seed,
                final_acc: outcome.trajectory.last().map_or(0.0, |r| r.test_acc),
                last10_acc: last10_accuracy(&outcome),
                rounds_to_target: target.map(|t| rounds_to_target(&outcome, t)).transpose()?.flatten(),
            })
        })
        .collect::<CliResult<_>>()?;

    create_dir(out)?;
    let opt = |r: Option<u32>| r.map_or(String::new(), |v| v.to_string());
    write_file(&out.join("compare_runs.csv"), |w| {
        writeln!(w, "arm,seed,final_acc,last10_acc,rounds_to_target")?;
        for r in &runs {
            writeln!(w, "{},{},{:?},{:?},{}", r.arm, r.seed, r.final_acc, r.last10_acc, opt(r.rounds_to_target))?;
        }
        Ok(())
    })?;

    let n = seeds.len() as f64;
    let per_arm: Vec<(String, f64, f64, Option<f64>, usize)> = values
        .iter()
        .map(|v| {
            let rs: Vec<&ArmSeedResult> = runs.iter().filter(|r| &r.arm == v).collect();
            let reached: Vec<u32> = rs.iter().filter_map(|r| r.rounds_to_target).collect();
            let mean_rounds = (!reached.is_empty()).then(|| reached.iter().map(|&x| f64::from(x)).sum::<f64>() / reached.len() as f64);
            (
                v.clone(),
                rs.iter().map(|r| r.final_acc).sum::<f64>() / n,
                rs.iter().map(|r| r.last10_acc).sum::<f64>() / n,
                mean_rounds,
                reached.len(),
            )
        })
        .collect();
    let reference = per_arm[0].2;
    let mut summary = String::from("arm,final_acc_mean,last10_acc_mean,last10_diff_vs_first,rounds_to_target_mean,seeds_reaching_target\n");
    for (arm, fin, l10, rounds, reached) in &per_arm {
        summary += &format!(
            "{arm},{fin:?},{l10:?},{:?},{},{}\n",
            l10 - reference,
            rounds.map_or(String::new(), |r| format!("{r:?}")),
            if target.is_some() { reached.to_string() } else { String::new() }
        );
    }
    let path = out.join("compare_summary.csv");
    std::fs::write(&path, &summary).map_err(|e| CliError::io(&path, e))?;
    let files = vec!["compare_runs.csv".to_string(), "compare_summary.csv".to_string()];
    RunManifest::new("compare", base.hash(), base.seed, started).finish(out, &files)?;
    Ok(CompareResult { files, runs, summary })
}
