//! Maximum-likelihood baselines: batch EM with random restarts and
//! stepwise online EM over a grid of step-size exponents.

mod engine;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{conditional_from_joint, potential_labels, random_model, LatentJTModel};
use crate::structure::RootedJunctionTree;
use crate::tensor::{num_states, LabeledTensor};
use engine::Engine;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EMConfig {
    pub restarts: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Online EM step sizes are `(k + 2)^-a` for each `a` here.
    pub step_exponents: Vec<f64>,
    pub batch_size: usize,
    /// Passes over the data for online EM.
    pub epochs: usize,
    pub seed: u64,
}

impl Default for EMConfig {
    fn default() -> Self {
        EMConfig {
            restarts: 5,
            tolerance: 1e-4,
            max_iterations: 500,
            step_exponents: vec![0.6, 0.7, 0.8, 0.9, 1.0],
            batch_size: 10,
            epochs: 1,
            seed: 0,
        }
    }
}

impl EMConfig {
    fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.restarts == 0 || self.max_iterations == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("restarts, iterations, batch size and epochs must be >= 1".into()));
        }
        if self.step_exponents.is_empty() || self.step_exponents.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::Config("step exponents must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One restart or one step-size run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: LatentJTModel,
    /// Log-likelihood of the training data before each update of the
    /// selected run (batch EM), or after each epoch (online EM).
    pub trace: Vec<f64>,
    /// Training log-likelihood of the returned model.
    pub log_likelihood: f64,
    /// Index of the selected restart or step exponent.
    pub selected: usize,
    pub runs: Vec<RunSummary>,
    /// Traces of every run, for auditing.
    pub traces: Vec<Vec<f64>>,
    pub seconds: f64,
}

/// `|f(t) - f(t-1)| / |avg(f(t), f(t-1))| <= tol`.
pub fn converged(prev: f64, cur: f64, tol: f64) -> bool {
    let avg = 0.5 * (prev.abs() + cur.abs());
    if avg == 0.0 {
        return prev == cur;
    }
    (cur - prev).abs() / avg <= tol
}

/// Renormalizes expected clique counts into conditional tables.
fn m_step(tree: &RootedJunctionTree, counts: Vec<Vec<f64>>) -> LatentJTModel {
    let pots = counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let joint = LabeledTensor::new(potential_labels(tree, i), c).expect("engine layout");
            conditional_from_joint(&joint, tree.remainder(i).len())
        })
        .collect();
    LatentJTModel::from_parts(tree.clone(), pots)
}

struct Prepared {
    engine: Engine,
    rows: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

fn prepare(tree: &RootedJunctionTree, data: &Dataset) -> Result<Prepared> {
    if data.is_empty() {
        return Err(Error::EmptySamples);
    }
    let engine = Engine::new(tree, data.vars())?;
    let (rows, weights) = data.patterns();
    Ok(Prepared { engine, rows, weights })
}

/// Expected counts of every clique configuration under `model`, summed over
/// the records of `data`, as tables in conditional-table mode order; plus
/// the total log-likelihood.
pub fn expected_counts(model: &LatentJTModel, data: &Dataset) -> Result<(Vec<LabeledTensor>, f64)> {
    let tree = model.tree();
    let p = prepare(tree, data)?;
    let (counts, ll) = p.engine.expected_counts(model, &p.rows, &p.weights);
    let tables = counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| LabeledTensor::new(potential_labels(tree, i), c).expect("engine layout"))
        .collect();
    Ok((tables, ll))
}

pub fn log_likelihood(model: &LatentJTModel, data: &Dataset) -> Result<f64> {
    let p = prepare(model.tree(), data)?;
    Ok(p.engine.log_likelihood(model, &p.rows, &p.weights))
}

fn batch_run(tree: &RootedJunctionTree, p: &Prepared, init: LatentJTModel, cfg: &EMConfig) -> (LatentJTModel, Vec<f64>, f64, bool) {
    let mut model = init;
    let mut trace: Vec<f64> = Vec::new();
    let mut done = false;
    for _ in 0..cfg.max_iterations {
        let (counts, ll) = p.engine.expected_counts(&model, &p.rows, &p.weights);
        if let Some(&prev) = trace.last() {
            if converged(prev, ll, cfg.tolerance) {
                trace.push(ll);
                done = true;
                break;
            }
        }
        trace.push(ll);
        model = m_step(tree, counts);
    }
    let ll = if done {
        *trace.last().expect("non-empty")
    } else {
        p.engine.log_likelihood(&model, &p.rows, &p.weights)
    };
    (model, trace, ll, done)
}

/// Batch EM: flat-Dirichlet restarts seeded `seed + r`, each iterated to the
/// relative-change criterion; the restart with the highest training
/// log-likelihood wins (lowest index on ties).
pub fn em_train(tree: &RootedJunctionTree, data: &Dataset, cfg: &EMConfig) -> Result<TrainResult> {
    cfg.check()?;
    let start = Instant::now();
    let p = prepare(tree, data)?;
    let runs: Vec<(LatentJTModel, Vec<f64>, f64, bool)> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| batch_run(tree, &p, random_model(tree, cfg.seed.wrapping_add(r as u64)), cfg))
        .collect();
    let seconds = start.elapsed().as_secs_f64();
    let summaries = runs
        .iter()
        .enumerate()
        .map(|(r, (_, t, ll, c))| RunSummary {
            label: format!("restart {r}"),
            iterations: t.len() - usize::from(*c),
            log_likelihood: *ll,
            converged: *c,
        })
        .collect();
    Ok(select(runs.into_iter().map(|(m, t, ll, _)| (m, t, ll)).collect(), summaries, seconds))
}

fn select(runs: Vec<(LatentJTModel, Vec<f64>, f64)>, summaries: Vec<RunSummary>, seconds: f64) -> TrainResult {
    let mut best = 0;
    for (k, r) in runs.iter().enumerate() {
        if r.2 > runs[best].2 || (runs[best].2.is_nan() && !r.2.is_nan()) {
            best = k;
        }
    }
    let traces: Vec<Vec<f64>> = runs.iter().map(|r| r.1.clone()).collect();
    let (model, trace, ll) = runs.into_iter().nth(best).expect("at least one run");
    TrainResult {
        model,
        trace,
        log_likelihood: ll,
        selected: best,
        runs: summaries,
        traces,
        seconds,
    }
}

/// Stepwise online EM: after mini-batch `k` (counted across epochs) the
/// running statistics move to `(1 - η) μ + η s_k` with `η = (k + 2)^-a`, where
/// `s_k` are the batch's per-record expected counts, and the tables are
/// re-estimated from `μ`. `μ_0` is the initial model with a uniform separator
/// marginal, so `a = 1` gives the plain running average of `μ_0, s_0, s_1, …`.
fn online_run(tree: &RootedJunctionTree, data: &Dataset, engine: &Engine, a: f64, seed: u64, cfg: &EMConfig, full: &Prepared) -> (LatentJTModel, Vec<f64>, f64) {
    let mut model = random_model(tree, seed);
    let mut mu: Vec<Vec<f64>> = model
        .potentials()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let ns = num_states(tree.separator(i)) as f64;
            p.values().iter().map(|v| v / ns).collect()
        })
        .collect();
    let rows: Vec<Vec<usize>> = data.rows().map(|r| r.to_vec()).collect();
    let mut trace = Vec::new();
    let mut k = 0usize;
    for _ in 0..cfg.epochs {
        for batch in rows.chunks(cfg.batch_size) {
            let w = vec![1.0 / batch.len() as f64; batch.len()];
            let (s, _) = engine.expected_counts(&model, batch, &w);
            let eta = ((k + 2) as f64).powf(-a);
            for (m, sk) in mu.iter_mut().zip(&s) {
                for (x, y) in m.iter_mut().zip(sk) {
                    *x = (1.0 - eta) * *x + eta * y;
                }
            }
            model = m_step(tree, mu.clone());
            k += 1;
        }
        trace.push(engine.log_likelihood(&model, &full.rows, &full.weights));
    }
    let ll = *trace.last().expect("at least one epoch");
    (model, trace, ll)
}

/// One online run per step exponent (seeded `seed + index`); the run with the
/// highest final training log-likelihood is returned.
pub fn online_em_train(tree: &RootedJunctionTree, data: &Dataset, cfg: &EMConfig) -> Result<TrainResult> {
    cfg.check()?;
    let start = Instant::now();
    let p = prepare(tree, data)?;
    let runs: Vec<(LatentJTModel, Vec<f64>, f64)> = cfg
        .step_exponents
        .par_iter()
        .enumerate()
        .map(|(g, &a)| online_run(tree, data, &p.engine, a, cfg.seed.wrapping_add(g as u64), cfg, &p))
        .collect();
    let seconds = start.elapsed().as_secs_f64();
    let summaries = runs
        .iter()
        .zip(&cfg.step_exponents)
        .map(|((_, t, ll), a)| RunSummary {
            label: format!("a={a}"),
            iterations: t.len(),
            log_likelihood: *ll,
            converged: true,
        })
        .collect();
    Ok(select(runs, summaries, seconds))
}
