//! Spectral quantities entering the sample-complexity bound.

use serde::{Deserialize, Serialize};

use super::plan::ObservedSetPlan;
use crate::error::Result;
use crate::linalg;
use crate::model::{clique_multiplicities, conditional_from_joint, LatentJTModel};
use crate::tensor::{num_states, LabeledTensor, Var};

/// Singular values below this fraction of the largest count as zero.
const SNAP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnostics {
    pub node: usize,
    /// Order of the embedded clique tensor.
    pub order: usize,
    /// Modes of the embedded tensor that carry observed variables.
    pub observed_modes: usize,
    /// `τ_i`; `None` at the root.
    pub tau: Option<usize>,
    /// `σ_τ(P(θ_i, θ_{i-}))`.
    pub sigma_moment: Option<f64>,
    /// `σ_τ(P(θ_i | S_i))`.
    pub sigma_conditional: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub nodes: Vec<NodeDiagnostics>,
    pub alpha: f64,
    pub beta: f64,
    pub d_max: usize,
    pub e_max: usize,
    pub treewidth: usize,
    pub cliques: usize,
    pub k_h: usize,
    pub k_o: usize,
}

impl Diagnostics {
    /// `(4 k_h² / (3 β²))^{d_max} · k_o^{e_max} · ln(|C|/δ) · |C|² / (ε² α⁴)`,
    /// without the hidden constant; infinite when α or β vanishes.
    pub fn sample_bound(&self, epsilon: f64, delta: f64) -> f64 {
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return f64::INFINITY;
        }
        let c = self.cliques as f64;
        let kh = self.k_h as f64;
        (4.0 * kh * kh / (3.0 * self.beta * self.beta)).powi(self.d_max as i32)
            * (self.k_o as f64).powi(self.e_max as i32)
            * (c / delta).ln()
            * c
            * c
            / (epsilon * epsilon * self.alpha.powi(4))
    }
}

/// `τ`-th largest singular value of `t` matricized with `rows` as rows;
/// zero when the matrix is too small or the value is numerically zero.
fn sigma_tau(t: &LabeledTensor, rows: &[Var], tau: usize) -> Result<f64> {
    let s = linalg::singular_values(&t.matricize(rows)?.matrix);
    let top = s.first().copied().unwrap_or(0.0);
    Ok(match s.get(tau.wrapping_sub(1)) {
        Some(&x) if x > SNAP * top => x,
        _ => 0.0,
    })
}

/// Population diagnostics of `model` under `plan`, using the first
/// `θ_{i-}` candidate of every node.
pub fn diagnostics(model: &LatentJTModel, plan: &ObservedSetPlan) -> Result<Diagnostics> {
    let tree = model.tree();
    let dom = model.domain();
    let mut nodes = Vec::with_capacity(tree.len());
    for i in 0..tree.len() {
        let mult = clique_multiplicities(tree, i);
        let order = mult.iter().map(|(_, d)| d).sum();
        let observed_modes = mult
            .iter()
            .filter(|(v, _)| dom.is_observed(v.id))
            .map(|(_, d)| d)
            .sum();
        let (mut tau, mut sigma_moment, mut sigma_conditional) = (None, None, None);
        if i != plan.root {
            let a = &plan.nodes[i];
            let sep = tree.separator(i);
            let t = num_states(sep);
            let mut vars = a.theta.clone();
            vars.extend_from_slice(&a.minus[0]);
            sigma_moment = Some(sigma_tau(&model.marginal(&vars)?, &a.theta, t)?);
            let mut vars = a.theta.clone();
            vars.extend_from_slice(sep);
            let f = conditional_from_joint(&model.marginal(&vars)?, a.theta.len());
            sigma_conditional = Some(sigma_tau(&f, &a.theta, t)?);
            tau = Some(t);
        }
        nodes.push(NodeDiagnostics {
            node: i,
            order,
            observed_modes,
            tau,
            sigma_moment,
            sigma_conditional,
        });
    }
    let min = |f: fn(&NodeDiagnostics) -> Option<f64>| {
        nodes.iter().filter_map(f).fold(f64::INFINITY, f64::min)
    };
    let max_card = |vs: Vec<Var>| vs.iter().map(|v| v.card).max().unwrap_or(1);
    Ok(Diagnostics {
        alpha: min(|n| n.sigma_moment),
        beta: min(|n| n.sigma_conditional),
        d_max: nodes.iter().map(|n| n.order).max().unwrap_or(0),
        e_max: nodes.iter().map(|n| n.observed_modes).max().unwrap_or(0),
        treewidth: tree.treewidth(),
        cliques: tree.len(),
        k_h: max_card(dom.hidden()),
        k_o: max_card(dom.observed()),
        nodes,
    })
}
