//! Synthetic evaluation protocol: structure families, error metric,
//! train/evaluate loops over sample sizes, and sequence classification.

mod classify;
mod families;

pub use classify::{classify_sequences, parse_splice, sequence_dataset, ClassifyResult, SpliceRecord};
pub use families::{gen_model, gen_structure, Family, FamilyParams};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::em::{em_train, online_em_train, EMConfig};
use crate::error::{Error, Result};
use crate::model::LatentJTModel;
use crate::spectral::{self, EmpiricalMoments, LearnOptions, ObservedSetPlan};
use crate::structure::RootedJunctionTree;

/// `|estimate - truth| / truth`; `None` when the truth is zero.
pub fn relative_error(estimate: f64, truth: f64) -> Option<f64> {
    (truth > 0.0).then(|| (estimate - truth).abs() / truth)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Learner {
    #[serde(rename = "spectral")]
    Spectral,
    #[serde(rename = "em")]
    Em,
    #[serde(rename = "online-em")]
    OnlineEm,
}

impl Learner {
    pub const ALL: [Learner; 3] = [Learner::Spectral, Learner::Em, Learner::OnlineEm];
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Learner::Spectral => "spectral",
            Learner::Em => "em",
            Learner::OnlineEm => "online-em",
        })
    }
}

impl FromStr for Learner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Learner::ALL
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown learner {s:?}")))
    }
}

/// A model fitted by one of the learners, able to score full observations.
pub enum Fitted {
    Spectral(spectral::ObservableParams),
    Model(LatentJTModel),
}

impl Fitted {
    /// Estimated `P(O = o)` for every row, negative spectral estimates
    /// clamped at zero; also the number of negative raw estimates.
    pub fn score(&self, data: &Dataset) -> Result<(Vec<f64>, usize)> {
        match self {
            Fitted::Spectral(p) => {
                let est = spectral::infer_dataset(p, data)?;
                let neg = est.iter().filter(|e| e.raw < 0.0).count();
                Ok((est.into_iter().map(|e| e.clamped).collect(), neg))
            }
            Fitted::Model(m) => {
                let p = (0..data.len())
                    .into_par_iter()
                    .map(|i| m.exact_marginal(&data.assignment(i)))
                    .collect::<Result<Vec<f64>>>()?;
                Ok((p, 0))
            }
        }
    }
}

/// What a training call produced besides the fitted model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialDiagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_run: Option<String>,
    /// Test queries whose raw spectral estimate was negative.
    pub negative_estimates: usize,
}

/// Fits one learner; returns the fit, diagnostics, and training wall-time
/// (the learner call only).
pub fn train(
    learner: Learner,
    tree: &RootedJunctionTree,
    plan: Option<&ObservedSetPlan>,
    data: &Dataset,
    em: &EMConfig,
) -> Result<(Fitted, TrialDiagnostics, f64)> {
    match learner {
        Learner::Spectral => {
            let owned;
            let plan = match plan {
                Some(p) => p,
                None => {
                    owned = spectral::plan_observed_sets(tree)?;
                    &owned
                }
            };
            let start = Instant::now();
            let params = spectral::learn_with(tree, plan, &EmpiricalMoments::new(data), &LearnOptions::default())?;
            let secs = start.elapsed().as_secs_f64();
            Ok((Fitted::Spectral(params), TrialDiagnostics::default(), secs))
        }
        Learner::Em | Learner::OnlineEm => {
            let r = if learner == Learner::Em {
                em_train(tree, data, em)?
            } else {
                online_em_train(tree, data, em)?
            };
            let d = TrialDiagnostics {
                log_likelihood: Some(r.log_likelihood),
                iterations: Some(r.runs[r.selected].iterations),
                selected_run: Some(r.runs[r.selected].label.clone()),
                negative_estimates: 0,
            };
            Ok((Fitted::Model(r.model), d, r.seconds))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub family: Family,
    #[serde(flatten)]
    pub structure: FamilyParams,
    pub n_grid: Vec<usize>,
    pub test_size: usize,
    pub parameter_sets: usize,
    pub seed: u64,
    pub learners: Vec<Learner>,
    pub em: EMConfig,
    /// Directory for `results.json`, `series.csv` and `timings.csv`; not
    /// echoed into the results so that reruns elsewhere compare equal.
    #[serde(skip_serializing)]
    pub output: Option<std::path::PathBuf>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            family: Family::Hmm2,
            structure: FamilyParams::default(),
            n_grid: vec![100, 1_000, 10_000, 100_000],
            test_size: 1000,
            parameter_sets: 10,
            seed: 0,
            learners: Learner::ALL.to_vec(),
            em: EMConfig::default(),
            output: None,
        }
    }
}

impl BenchmarkConfig {
    pub fn check(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.contains(&0) || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("N grid must be non-empty, positive and strictly ascending".into()));
        }
        if self.test_size == 0 || self.parameter_sets == 0 || self.learners.is_empty() {
            return Err(Error::Config("test size, parameter sets and learners must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub learner: Learner,
    pub n: usize,
    pub parameter_set: usize,
    /// FNV-1a digests of the training prefix and of the test queries, so
    /// that runs can be audited for identical inputs across learners.
    pub train_digest: u64,
    pub test_digest: u64,
    /// Relative error per test query with non-zero truth, in test order.
    pub errors: Vec<f64>,
    /// Test queries with zero true probability, left out of `errors`.
    pub excluded: usize,
    pub mean_error: Option<f64>,
    pub median_error: Option<f64>,
    /// Wall-time of the training call; kept out of the results document.
    #[serde(skip_serializing, default)]
    pub train_seconds: f64,
    pub diagnostics: TrialDiagnostics,
    /// Set when the learner failed; the run carries on.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub n: usize,
    pub learner: Learner,
    /// Median over parameter sets of the mean test error.
    pub median_error: Option<f64>,
    #[serde(skip_serializing, default)]
    pub mean_time_seconds: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub trials: Vec<TrialResult>,
    pub series: Vec<SeriesPoint>,
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// splitmix64 of `a` combined with `b`, for independent per-trial seeds.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn digest(data: &Dataset) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in data.rows().flatten() {
        for b in (*x as u64).to_le_bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Runs every learner on every (parameter set, N). Per parameter set one
/// training sample of size `max N` is drawn and its prefixes are used, so
/// all learners and sizes see nested, identical data; test queries are a
/// separate sample scored against the generating model's exact marginals.
/// Trials run one after another so that wall-times are not skewed by
/// sharing cores; each learner parallelizes internally.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.check()?;
    let (_, tree) = gen_structure(cfg.family, cfg.structure)?;
    let plan = if cfg.learners.contains(&Learner::Spectral) {
        Some(spectral::plan_observed_sets(&tree))
    } else {
        None
    };
    let n_max = *cfg.n_grid.last().expect("checked");
    let mut trials = Vec::new();
    for p in 0..cfg.parameter_sets {
        let truth_model = gen_model(cfg.family, &tree, derive_seed(cfg.seed, 3 * p as u64))?;
        let train_all = truth_model.sample(n_max, derive_seed(cfg.seed, 3 * p as u64 + 1));
        let test = truth_model.sample(cfg.test_size, derive_seed(cfg.seed, 3 * p as u64 + 2));
        let truth: Vec<f64> = (0..test.len())
            .into_par_iter()
            .map(|i| truth_model.exact_marginal(&test.assignment(i)))
            .collect::<Result<_>>()?;
        let test_digest = digest(&test);
        let em = EMConfig {
            seed: derive_seed(cfg.em.seed, p as u64),
            ..cfg.em.clone()
        };
        for &n in &cfg.n_grid {
            let train_n = train_all.head(n);
            let train_digest = digest(&train_n);
            for &learner in &cfg.learners {
                let plan_ref = match &plan {
                    Some(Err(e)) if learner == Learner::Spectral => {
                        trials.push(failed(learner, n, p, (train_digest, test_digest), e.to_string()));
                        continue;
                    }
                    Some(Ok(pl)) => Some(pl),
                    _ => None,
                };
                let outcome = train(learner, &tree, plan_ref, &train_n, &em)
                    .and_then(|(fit, diag, secs)| fit.score(&test).map(|s| (s, diag, secs)));
                match outcome {
                    Ok(((est, neg), mut diag, secs)) => {
                        diag.negative_estimates = neg;
                        let errors: Vec<f64> = est
                            .iter()
                            .zip(&truth)
                            .filter_map(|(&e, &t)| relative_error(e, t))
                            .collect();
                        trials.push(TrialResult {
                            learner,
                            n,
                            parameter_set: p,
                            train_digest,
                            test_digest,
                            excluded: truth.len() - errors.len(),
                            mean_error: mean(&errors),
                            median_error: median(&errors),
                            errors,
                            train_seconds: secs,
                            diagnostics: diag,
                            failure: None,
                        });
                    }
                    Err(e) => trials.push(failed(learner, n, p, (train_digest, test_digest), e.to_string())),
                }
            }
        }
    }
    let series = summarize(cfg, &trials);
    let report = BenchmarkReport {
        config: cfg.clone(),
        trials,
        series,
    };
    if let Some(dir) = &cfg.output {
        write_report(&report, dir)?;
    }
    Ok(report)
}

fn failed(learner: Learner, n: usize, p: usize, digests: (u64, u64), why: String) -> TrialResult {
    TrialResult {
        learner,
        n,
        parameter_set: p,
        train_digest: digests.0,
        test_digest: digests.1,
        errors: Vec::new(),
        excluded: 0,
        mean_error: None,
        median_error: None,
        train_seconds: 0.0,
        diagnostics: TrialDiagnostics::default(),
        failure: Some(why),
    }
}

fn summarize(cfg: &BenchmarkConfig, trials: &[TrialResult]) -> Vec<SeriesPoint> {
    let mut out = Vec::new();
    for &learner in &cfg.learners {
        for &n in &cfg.n_grid {
            let ts: Vec<&TrialResult> = trials.iter().filter(|t| t.learner == learner && t.n == n).collect();
            let means: Vec<f64> = ts.iter().filter_map(|t| t.mean_error).collect();
            let ok: Vec<f64> = ts.iter().filter(|t| t.failure.is_none()).map(|t| t.train_seconds).collect();
            out.push(SeriesPoint {
                n,
                learner,
                median_error: median(&means),
                mean_time_seconds: mean(&ok).unwrap_or(f64::NAN),
                failures: ts.iter().filter(|t| t.failure.is_some()).count(),
            });
        }
    }
    out
}

/// Writes `results.json` (deterministic: no timings), `series.csv`
/// (N, learner, median_error, mean_time_seconds) and `timings.csv`
/// (one row per trial).
pub fn write_report(report: &BenchmarkReport, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.json"), serde_json::to_string_pretty(report)? + "\n")?;
    let fmt_opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:e}"));
    let mut w = csv::Writer::from_path(dir.join("series.csv"))?;
    w.write_record(["N", "learner", "median_error", "mean_time_seconds"])?;
    for s in &report.series {
        w.write_record([
            s.n.to_string(),
            s.learner.to_string(),
            fmt_opt(s.median_error),
            format!("{:e}", s.mean_time_seconds),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("timings.csv"))?;
    w.write_record(["N", "learner", "parameter_set", "train_seconds"])?;
    for t in &report.trials {
        w.write_record([
            t.n.to_string(),
            t.learner.to_string(),
            t.parameter_set.to_string(),
            format!("{:e}", t.train_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_formula() {
        assert_eq!(relative_error(0.3, 0.3), Some(0.0));
        assert!((relative_error(0.02, 0.01).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(relative_error(0.0, 0.25), Some(1.0));
        assert_eq!(relative_error(0.1, 0.0), None);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn config_rejects_unsorted_grid() {
        let cfg = BenchmarkConfig {
            n_grid: vec![1000, 100],
            ..Default::default()
        };
        assert!(matches!(cfg.check(), Err(Error::Config(_))));
    }
}
