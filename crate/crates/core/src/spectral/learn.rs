use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::moments::MomentSource;
use super::plan::{projected_var, ObservedSetPlan};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::structure::RootedJunctionTree;
use crate::tensor::{self, num_states, LabeledTensor, Var};

#[derive(Clone, Debug)]
pub struct LearnOptions {
    /// Relative singular-value cutoff for the per-node inversions.
    pub rcond: f64,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions {
            rcond: linalg::DEFAULT_RCOND,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    /// `P̂(C_i)`, labeled by the child projected modes (or `θ_l` at a leaf)
    /// followed by this node's projected mode (absent at the root).
    pub tensor: LabeledTensor,
    /// `U_i` labeled `θ_i ++ [ω_i]`; absent at the root.
    pub projector: Option<LabeledTensor>,
}

/// The learned model: observable tensors plus the plan they were built on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableParams {
    pub observed: Vec<Var>,
    pub children: Vec<Vec<usize>>,
    pub plan: ObservedSetPlan,
    pub nodes: Vec<NodeParams>,
}

impl ObservableParams {
    pub fn root(&self) -> usize {
        self.plan.root
    }

    pub fn projectors(&self) -> Vec<Option<LabeledTensor>> {
        self.nodes.iter().map(|n| n.projector.clone()).collect()
    }
}

/// Raw estimate and its value clamped at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub raw: f64,
    pub clamped: f64,
}

/// The linear system a node's tensor solves: `X · lhs = rhs`, one column
/// block per `θ_{i-}` candidate.
#[derive(Clone, Debug)]
pub struct NodeSystem {
    pub node: usize,
    pub rows: Vec<Var>,
    pub omega: Option<Var>,
    /// Projected anchor moments `U_iᵀ P(θ_i, θ_{i-})`; absent at the root.
    pub lhs: Option<DMatrix<f64>>,
    /// Child-projected moments `P(θ_{i1}, …, θ_{i-}) ×U_{i1} …`.
    pub rhs: DMatrix<f64>,
    anchors: Vec<String>,
}

impl NodeSystem {
    /// Least-squares solution through the right pseudo-inverse of `lhs`.
    pub fn solve(&self, rcond: f64) -> Result<LabeledTensor> {
        match (&self.lhs, self.omega) {
            (Some(w), Some(omega)) => {
                let g = linalg::right_pinv(w, rcond).map_err(|e| Error::NodeInversion {
                    node: self.node,
                    anchors: self.anchors.clone(),
                    source: Box::new(e),
                })?;
                LabeledTensor::from_matrix(self.rows.clone(), vec![omega], &(&self.rhs * g))
            }
            _ => LabeledTensor::from_matrix(self.rows.clone(), Vec::new(), &self.rhs),
        }
    }

    /// Frobenius norm of `X · lhs - rhs` for a candidate node tensor.
    pub fn residual(&self, x: &LabeledTensor) -> Result<f64> {
        let xm = x.matricize(&self.rows)?.matrix;
        Ok(match &self.lhs {
            Some(w) => (xm * w - &self.rhs).norm(),
            None => (xm - &self.rhs).norm(),
        })
    }
}

fn moment_of(moments: &dyn MomentSource, vars: &[Var]) -> Result<LabeledTensor> {
    moments.moment(vars)
}

/// `U_i`: top-`τ_i` left singular vectors of the anchor moments
/// `[P(θ_i, θ_{i-}^(1)) … P(θ_i, θ_{i-}^(K))]`; the identity when `θ_i` has
/// exactly `τ_i` states, so nothing needs projecting.
fn projector(
    node: usize,
    theta: &[Var],
    candidates: &[Vec<Var>],
    tau: usize,
    moments: &dyn MomentSource,
) -> Result<LabeledTensor> {
    let omega = projected_var(node, tau);
    let rows = num_states(theta);
    if rows == tau {
        return LabeledTensor::from_matrix(theta.to_vec(), vec![omega], &DMatrix::identity(tau, tau));
    }
    let mats: Vec<DMatrix<f64>> = candidates
        .iter()
        .map(|m| {
            let mut vars = theta.to_vec();
            vars.extend_from_slice(m);
            Ok(moment_of(moments, &vars)?.matricize(theta)?.matrix)
        })
        .collect::<Result<_>>()?;
    let cols: usize = mats.iter().map(|m| m.ncols()).sum();
    if tau > rows.min(cols) {
        return Err(Error::RankTooLarge { rank: tau, rows, cols });
    }
    let mut stacked = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for m in &mats {
        stacked.columns_mut(at, m.ncols()).copy_from(m);
        at += m.ncols();
    }
    let u = linalg::svd(&stacked).u.columns(0, tau).into_owned();
    LabeledTensor::from_matrix(theta.to_vec(), vec![omega], &u)
}

/// Builds the stacked system of node `node` for the given `θ_{i-}`
/// candidates, using already computed projectors.
pub fn node_system(
    tree: &RootedJunctionTree,
    plan: &ObservedSetPlan,
    node: usize,
    candidates: &[Vec<Var>],
    projectors: &[Option<LabeledTensor>],
    moments: &dyn MomentSource,
) -> Result<NodeSystem> {
    let a = &plan.nodes[node];
    let is_root = node == plan.root;
    let is_leaf = tree.is_leaf(node);
    let kids = tree.children(node);
    let proj = |c: usize| {
        projectors[c]
            .as_ref()
            .ok_or_else(|| Error::ShapeMismatch(format!("node {c} has no projector")))
    };
    let rows: Vec<Var> = if is_leaf {
        a.theta.clone()
    } else {
        kids.iter().map(|&c| Ok(*proj(c)?.labels().last().expect("ω"))).collect::<Result<_>>()?
    };
    let empty = [Vec::new()];
    let candidates: &[Vec<Var>] = if is_root { &empty } else { candidates };
    if candidates.is_empty() {
        return Err(Error::Planning {
            node,
            reason: "no θ- candidate".into(),
        });
    }
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for minus in candidates {
        let mut vars: Vec<Var> = if is_leaf {
            a.theta.clone()
        } else {
            a.child_anchors.concat()
        };
        vars.extend_from_slice(minus);
        let mut y = moment_of(moments, &vars)?;
        if !is_leaf {
            for (k, &c) in kids.iter().enumerate() {
                y = tensor::multiply(&y, proj(c)?, &a.child_anchors[k])?;
            }
        }
        ys.push(y.matricize(&rows)?.matrix);
        if !is_root {
            let mut vars = a.theta.clone();
            vars.extend_from_slice(minus);
            let m = moment_of(moments, &vars)?;
            let w = tensor::multiply(&m, proj(node)?, &a.theta)?;
            let omega = *proj(node)?.labels().last().expect("ω");
            ws.push(w.matricize(&[omega])?.matrix);
        }
    }
    let hcat = |ms: &[DMatrix<f64>]| {
        let r = ms[0].nrows();
        let c: usize = ms.iter().map(|m| m.ncols()).sum();
        let mut out = DMatrix::zeros(r, c);
        let mut at = 0;
        for m in ms {
            out.columns_mut(at, m.ncols()).copy_from(m);
            at += m.ncols();
        }
        out
    };
    let dom = tree.domain();
    Ok(NodeSystem {
        node,
        rows,
        omega: (!is_root).then(|| projected_var(node, a.rank)),
        lhs: (!is_root).then(|| hcat(&ws)),
        rhs: hcat(&ys),
        anchors: candidates.iter().map(|m| dom.names(m).join(",")).collect(),
    })
}

/// Solves the stacked system for several `θ_{i-}` candidates in least
/// squares. With one candidate this is exactly the single-anchor formula.
pub fn combine_minus_candidates(
    tree: &RootedJunctionTree,
    plan: &ObservedSetPlan,
    node: usize,
    candidates: &[Vec<Var>],
    projectors: &[Option<LabeledTensor>],
    moments: &dyn MomentSource,
    rcond: f64,
) -> Result<LabeledTensor> {
    if node != plan.root && candidates.is_empty() {
        return Err(Error::Planning {
            node,
            reason: "no θ- candidate".into(),
        });
    }
    node_system(tree, plan, node, candidates, projectors, moments)?.solve(rcond)
}

pub fn learn(
    tree: &RootedJunctionTree,
    plan: &ObservedSetPlan,
    moments: &dyn MomentSource,
) -> Result<ObservableParams> {
    learn_with(tree, plan, moments, &LearnOptions::default())
}

/// Projectors for every non-root node, then every node's observable
/// tensor; both stages run in parallel over nodes.
pub fn learn_with(
    tree: &RootedJunctionTree,
    plan: &ObservedSetPlan,
    moments: &dyn MomentSource,
    opts: &LearnOptions,
) -> Result<ObservableParams> {
    if plan.nodes.len() != tree.len() || plan.root != tree.root() {
        return Err(Error::ShapeMismatch("plan does not belong to this tree".into()));
    }
    let projectors: Vec<Option<LabeledTensor>> = (0..tree.len())
        .into_par_iter()
        .map(|i| {
            if i == plan.root {
                return Ok(None);
            }
            let a = &plan.nodes[i];
            projector(i, &a.theta, &a.minus, a.rank, moments).map(Some)
        })
        .collect::<Result<_>>()?;
    let tensors: Vec<LabeledTensor> = (0..tree.len())
        .into_par_iter()
        .map(|i| {
            combine_minus_candidates(tree, plan, i, &plan.nodes[i].minus, &projectors, moments, opts.rcond)
        })
        .collect::<Result<_>>()?;
    Ok(ObservableParams {
        observed: tree.domain().observed(),
        children: (0..tree.len()).map(|i| tree.children(i).to_vec()).collect(),
        plan: plan.clone(),
        nodes: tensors
            .into_iter()
            .zip(projectors)
            .map(|(tensor, projector)| NodeParams { tensor, projector })
            .collect(),
    })
}

/// Transformed message passing: leaves slice their anchors at the observed
/// values, internal nodes contract child messages along projected modes,
/// and the root yields the estimate of `P(O = o)`.
pub fn infer(params: &ObservableParams, assignment: &[(Var, usize)]) -> Result<Estimate> {
    for &(v, _) in assignment {
        if !params.observed.contains(&v) {
            return Err(Error::UnknownVariable(v.to_string()));
        }
    }
    for v in &params.observed {
        if !assignment.iter().any(|(w, _)| w == v) {
            return Err(Error::IncompleteAssignment(v.to_string()));
        }
    }
    let n = params.nodes.len();
    let mut order = vec![params.root()];
    let mut k = 0;
    while k < order.len() {
        order.extend(params.children[order[k]].iter().copied());
        k += 1;
    }
    if order.len() != n {
        return Err(Error::ShapeMismatch("children lists do not form a tree".into()));
    }
    let shape = |e: Error| Error::ShapeMismatch(e.to_string());
    let mut msgs: Vec<Option<LabeledTensor>> = vec![None; n];
    for &i in order.iter().rev() {
        let p = &params.nodes[i].tensor;
        let t = if params.children[i].is_empty() {
            let fix: Vec<(Var, usize)> = assignment
                .iter()
                .filter(|(v, _)| params.plan.nodes[i].theta.contains(v))
                .copied()
                .collect();
            tensor::fix_index(p, &fix).map_err(shape)?
        } else {
            let mut t = p.clone();
            for &c in &params.children[i] {
                let m = msgs[c].take().expect("children first");
                let sigma = m.labels().to_vec();
                t = tensor::multiply(&t, &m, &sigma).map_err(shape)?;
            }
            t
        };
        msgs[i] = Some(t);
    }
    let raw = msgs[params.root()]
        .take()
        .and_then(|t| t.as_scalar())
        .ok_or_else(|| Error::ShapeMismatch("root message is not a scalar".into()))?;
    Ok(Estimate {
        raw,
        clamped: raw.max(0.0),
    })
}

/// [`infer`] on every row of `data`, in parallel.
pub fn infer_dataset(params: &ObservableParams, data: &Dataset) -> Result<Vec<Estimate>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| infer(params, &data.assignment(i)))
        .collect()
}
