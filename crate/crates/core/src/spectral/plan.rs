//! Choice of observed anchor sets for every separator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{random_model, LatentJTModel};
use crate::structure::RootedJunctionTree;
use crate::tensor::{num_states, Var};

/// Ids at or above this value label projected modes, never model variables.
pub const PROJECTED_BASE: u32 = 1 << 30;

/// Label of the projected mode `ω_i` of node `node`.
pub fn projected_var(node: usize, rank: usize) -> Var {
    Var::new(PROJECTED_BASE + node as u32, rank)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAnchors {
    pub node: usize,
    /// `θ_i`: observed variables in the subtree below the node. Empty at the root.
    pub theta: Vec<Var>,
    /// Candidate sets for `θ_{i-}`, outside the subtree; the first is the
    /// default. Empty at the root.
    pub minus: Vec<Vec<Var>>,
    /// `θ` of each child, in child order.
    pub child_anchors: Vec<Vec<Var>>,
    /// `τ_i = #states(S_i)`; 1 at the root.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedSetPlan {
    pub root: usize,
    pub nodes: Vec<NodeAnchors>,
}

impl ObservedSetPlan {
    pub fn node(&self, i: usize) -> &NodeAnchors {
        &self.nodes[i]
    }
}

#[derive(Clone, Debug)]
pub struct PlanOptions {
    /// How many disjoint `θ_{i-}` candidates to gather per node (at least 1).
    pub minus_candidates: usize,
    /// Keep adding anchors until the rank condition holds on a random probe
    /// model, not just the state-count condition.
    pub verify_rank: bool,
    pub probe_seed: u64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            minus_candidates: 1,
            verify_rank: true,
            probe_seed: 0x5eed,
        }
    }
}

/// Nearest-first anchor planning with default options.
pub fn plan_observed_sets(tree: &RootedJunctionTree) -> Result<ObservedSetPlan> {
    plan_with(tree, &PlanOptions::default())
}

/// Observed variables reachable from `start` within `allowed` nodes, ordered
/// by clique hops and then id.
fn by_distance(tree: &RootedJunctionTree, start: usize, allowed: &[bool]) -> Vec<Var> {
    let adj = tree.neighbors();
    let mut dist = vec![usize::MAX; tree.len()];
    dist[start] = 0;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if allowed[w] && dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    let dom = tree.domain();
    let mut found: Vec<(usize, Var)> = Vec::new();
    for (i, &d) in dist.iter().enumerate() {
        if d == usize::MAX {
            continue;
        }
        for &v in tree.clique(i) {
            if !dom.is_observed(v.id) {
                continue;
            }
            match found.iter_mut().find(|(_, w)| *w == v) {
                Some(e) => e.0 = e.0.min(d),
                None => found.push((d, v)),
            }
        }
    }
    found.sort_by_key(|&(d, v)| (d, v.id));
    found.into_iter().map(|(_, v)| v).collect()
}

/// Numerical rank of `P(anchors, S)` matricized with anchors as rows.
fn anchor_rank(probe: &LatentJTModel, anchors: &[Var], sep: &[Var]) -> Result<usize> {
    let mut vars = anchors.to_vec();
    vars.extend_from_slice(sep);
    let joint = probe.marginal(&vars)?;
    let s = linalg::singular_values(&joint.matricize(anchors)?.matrix);
    let top = s.first().copied().unwrap_or(0.0);
    Ok(s.iter().filter(|&&x| x > 1e-9 * top).count())
}

/// Greedy prefix of `pool` meeting the state-count (and optionally rank)
/// requirement; consumed variables are removed from `pool`.
fn gather(
    pool: &mut Vec<Var>,
    tau: usize,
    sep: &[Var],
    probe: Option<&LatentJTModel>,
) -> Result<Option<Vec<Var>>> {
    let mut chosen = Vec::new();
    for k in 0..pool.len() {
        chosen.push(pool[k]);
        if num_states(&chosen) < tau {
            continue;
        }
        let ok = match probe {
            Some(p) => anchor_rank(p, &chosen, sep)? == tau,
            None => true,
        };
        if ok {
            pool.drain(..=k);
            chosen.sort_by_key(|v| v.id);
            return Ok(Some(chosen));
        }
    }
    Ok(None)
}

/// Plans `θ_i`, `θ_{i-}` and child anchors for every node.
///
/// Observed variables must sit in leaf remainders only; separators are then
/// purely hidden. A leaf anchors on its whole remainder. Internal anchors are
/// gathered breadth-first by clique hops into the subtree, `θ_{i-}` the same
/// way outside it starting from the parent, nearest first and lowest id on
/// ties, until `#states >= #states(S_i)` and the anchored moment has full
/// rank on a random probe model.
pub fn plan_with(tree: &RootedJunctionTree, opts: &PlanOptions) -> Result<ObservedSetPlan> {
    let dom = tree.domain();
    for i in 0..tree.len() {
        for &v in tree.clique(i) {
            if dom.is_observed(v.id) && !(tree.is_leaf(i) && tree.remainder(i).contains(&v)) {
                return Err(Error::Planning {
                    node: i,
                    reason: format!("observed variable {} outside a leaf remainder", dom.name(v.id)),
                });
            }
        }
    }
    let probe = opts.verify_rank.then(|| random_model(tree, opts.probe_seed));
    let names = |vs: &[Var]| dom.names(vs).join(",");
    let mut nodes: Vec<NodeAnchors> = Vec::with_capacity(tree.len());
    for i in 0..tree.len() {
        if i == tree.root() {
            nodes.push(NodeAnchors {
                node: i,
                theta: Vec::new(),
                minus: Vec::new(),
                child_anchors: Vec::new(),
                rank: 1,
            });
            continue;
        }
        let sep = tree.separator(i);
        let tau = num_states(sep);
        let mut inside = vec![false; tree.len()];
        for j in tree.subtree(i) {
            inside[j] = true;
        }
        let theta = if tree.is_leaf(i) {
            let theta = tree.remainder(i).to_vec();
            if num_states(&theta) < tau {
                return Err(Error::Planning {
                    node: i,
                    reason: format!(
                        "leaf anchors {} have {} states, separator needs {tau}",
                        names(&theta),
                        num_states(&theta)
                    ),
                });
            }
            if let Some(p) = &probe {
                if anchor_rank(p, &theta, sep)? < tau {
                    return Err(Error::Planning {
                        node: i,
                        reason: format!("leaf anchors {} are rank deficient", names(&theta)),
                    });
                }
            }
            theta
        } else {
            let mut pool = by_distance(tree, i, &inside);
            gather(&mut pool, tau, sep, probe.as_ref())?.ok_or_else(|| Error::Planning {
                node: i,
                reason: format!("observed variables below the node cannot anchor {tau} separator states"),
            })?
        };
        let outside: Vec<bool> = inside.iter().map(|b| !b).collect();
        let parent = tree.parent(i).expect("non-root");
        let mut pool = by_distance(tree, parent, &outside);
        let mut minus = Vec::new();
        while minus.len() < opts.minus_candidates.max(1) {
            match gather(&mut pool, tau, sep, probe.as_ref())? {
                Some(c) => minus.push(c),
                None => break,
            }
        }
        if minus.is_empty() {
            return Err(Error::Planning {
                node: i,
                reason: format!("observed variables outside the subtree cannot anchor {tau} separator states"),
            });
        }
        nodes.push(NodeAnchors {
            node: i,
            theta,
            minus,
            child_anchors: Vec::new(),
            rank: tau,
        });
    }
    for i in 0..tree.len() {
        nodes[i].child_anchors = tree.children(i).iter().map(|&c| nodes[c].theta.clone()).collect();
    }
    Ok(ObservedSetPlan {
        root: tree.root(),
        nodes,
    })
}
