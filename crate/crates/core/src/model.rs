//! Latent junction-tree models parameterized by one conditional table
//! `P(R_i | S_i)` per clique, with sampling and exact inference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::structure::{Domain, RootChoice, RootedJunctionTree};
use crate::tensor::{self, num_states, LabeledTensor, Var};

/// Largest hidden state space the enumeration oracle will walk.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Mode order of the conditional table at `node`: remainder variables, then
/// separator variables, each ascending by id.
pub fn potential_labels(tree: &RootedJunctionTree, node: usize) -> Vec<Var> {
    let mut l = tree.remainder(node).to_vec();
    l.extend_from_slice(tree.separator(node));
    l
}

/// Number of modes each clique variable occupies in the embedded tensor:
/// one per incident separator containing it (parent and children), and at
/// least one.
pub fn clique_multiplicities(tree: &RootedJunctionTree, node: usize) -> Vec<(Var, usize)> {
    tree.clique(node)
        .iter()
        .map(|&v| {
            let mut d = usize::from(tree.separator(node).contains(&v));
            d += tree
                .children(node)
                .iter()
                .filter(|&&c| tree.separator(c).contains(&v))
                .count();
            (v, d.max(1))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct LatentJTModel {
    tree: RootedJunctionTree,
    potentials: Vec<LabeledTensor>,
}

impl LatentJTModel {
    /// Checks shapes and normalization; tables may list their modes in any
    /// order and are stored in [`potential_labels`] order.
    pub fn new(tree: RootedJunctionTree, potentials: Vec<LabeledTensor>) -> Result<Self> {
        if potentials.len() != tree.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tables for {} cliques",
                potentials.len(),
                tree.len()
            )));
        }
        let mut out = Vec::with_capacity(potentials.len());
        for (i, p) in potentials.into_iter().enumerate() {
            let want = potential_labels(&tree, i);
            if p.order() != want.len() {
                return Err(Error::ShapeMismatch(format!(
                    "table {i} has order {}, clique has {} variables",
                    p.order(),
                    want.len()
                )));
            }
            let perm = p
                .select_modes(&want)
                .map_err(|e| Error::ShapeMismatch(format!("table {i}: {e}")))?;
            let p = p.permute(&perm);
            let ns = num_states(tree.separator(i));
            let nr = num_states(tree.remainder(i));
            if p.values().iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::ShapeMismatch(format!("table {i} has negative or non-finite entries")));
            }
            for s in 0..ns {
                let total: f64 = (0..nr).map(|r| p.values()[r * ns + s]).sum();
                if (total - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::ShapeMismatch(format!(
                        "table {i} column {s} sums to {total}"
                    )));
                }
            }
            out.push(p);
        }
        Ok(LatentJTModel { tree, potentials: out })
    }

    /// Trusted constructor for tables already in [`potential_labels`] order.
    pub(crate) fn from_parts(tree: RootedJunctionTree, potentials: Vec<LabeledTensor>) -> Self {
        debug_assert!((0..tree.len()).all(|i| potentials[i].labels() == potential_labels(&tree, i)));
        LatentJTModel { tree, potentials }
    }

    pub fn tree(&self) -> &RootedJunctionTree {
        &self.tree
    }

    pub fn domain(&self) -> &Domain {
        self.tree.domain()
    }

    pub fn potentials(&self) -> &[LabeledTensor] {
        &self.potentials
    }

    pub fn potential(&self, node: usize) -> &LabeledTensor {
        &self.potentials[node]
    }

    /// Observed variables ascending by id; the column order of samples.
    pub fn observed(&self) -> Vec<Var> {
        self.domain().observed()
    }

    /// `P(C_i)` of the tensor representation: the conditional table with
    /// every variable replicated over its incident separators.
    pub fn embed_clique(&self, node: usize) -> LabeledTensor {
        tensor::diag_embed(&self.potentials[node], &clique_multiplicities(&self.tree, node))
            .expect("table labels match clique")
    }

    fn evidence(&self, assignment: &[(Var, usize)]) -> Result<Vec<(Var, usize)>> {
        let dom = self.domain();
        for &(v, x) in assignment {
            if v.id as usize >= dom.len() || dom.var(v.id) != v || !dom.is_observed(v.id) {
                return Err(Error::UnknownVariable(v.to_string()));
            }
            if x >= v.card {
                return Err(Error::IndexOutOfRange {
                    label: dom.name(v.id).to_string(),
                    index: x,
                    cardinality: v.card,
                });
            }
        }
        dom.observed()
            .into_iter()
            .map(|v| {
                assignment
                    .iter()
                    .find(|(w, _)| *w == v)
                    .copied()
                    .ok_or_else(|| Error::IncompleteAssignment(dom.name(v.id).to_string()))
            })
            .collect()
    }

    /// `P(O = o)` by tensor message passing over the embedded clique tensors:
    /// observed modes are sliced, child messages are multiplied in along
    /// their separators, and leftover variables are summed out locally.
    pub fn exact_marginal(&self, assignment: &[(Var, usize)]) -> Result<f64> {
        let ev = self.evidence(assignment)?;
        let mut msgs: Vec<Option<LabeledTensor>> = vec![None; self.tree.len()];
        for &i in self.tree.order().iter().rev() {
            let t = self.embed_clique(i);
            let fix: Vec<(Var, usize)> = ev.iter().filter(|(v, _)| t.count(v.id) > 0).copied().collect();
            let mut t = tensor::fix_index(&t, &fix)?;
            for &c in self.tree.children(i) {
                let m = msgs[c].take().expect("children are processed first");
                let sigma = m.labels().to_vec();
                t = tensor::multiply(&t, &m, &sigma)?;
            }
            let sep = self.tree.separator(i);
            let extra: Vec<Var> = t.labels().iter().filter(|v| !sep.contains(v)).copied().collect();
            if !extra.is_empty() {
                t = t.sum_out(&extra)?;
            }
            msgs[i] = Some(t);
        }
        let root = msgs[self.tree.root()].take().expect("root message");
        root.as_scalar()
            .ok_or_else(|| Error::Malformed("root message is not a scalar".into()))
    }

    /// `P(O = o)` by enumerating every hidden configuration.
    pub fn brute_force_joint(&self, assignment: &[(Var, usize)]) -> Result<f64> {
        let ev = self.evidence(assignment)?;
        let dom = self.domain();
        let hidden = dom.hidden();
        let space: u128 = hidden.iter().map(|v| v.card as u128).product();
        if space > BRUTE_FORCE_LIMIT {
            return Err(Error::StateSpaceTooLarge(space));
        }
        let mut state = vec![0usize; dom.len()];
        for &(v, x) in &ev {
            state[v.id as usize] = x;
        }
        let strides: Vec<Vec<usize>> = self.potentials.iter().map(|p| p.strides()).collect();
        let dims: Vec<usize> = hidden.iter().map(|v| v.card).collect();
        let mut idx = vec![0usize; hidden.len()];
        let mut total = 0.0;
        loop {
            for (v, &x) in hidden.iter().zip(&idx) {
                state[v.id as usize] = x;
            }
            let mut p = 1.0;
            for (t, s) in self.potentials.iter().zip(&strides) {
                let off: usize = t.labels().iter().zip(s).map(|(l, st)| state[l.id as usize] * st).sum();
                p *= t.values()[off];
            }
            total += p;
            if !tensor::increment(&mut idx, &dims) {
                break;
            }
        }
        Ok(total)
    }

    /// Exact joint marginal of `vars` (hidden or observed, pairwise
    /// distinct) by sum-product over the tree, labeled in the given order.
    pub fn marginal(&self, vars: &[Var]) -> Result<LabeledTensor> {
        let dom = self.domain();
        for v in vars {
            if v.id as usize >= dom.len() || dom.var(v.id) != *v {
                return Err(Error::UnknownVariable(v.to_string()));
            }
        }
        let mut msgs: Vec<Option<LabeledTensor>> = vec![None; self.tree.len()];
        for &i in self.tree.order().iter().rev() {
            let kids: Vec<LabeledTensor> = self
                .tree
                .children(i)
                .iter()
                .map(|&c| msgs[c].take().expect("children first"))
                .collect();
            let mut factors: Vec<&LabeledTensor> = vec![&self.potentials[i]];
            factors.extend(kids.iter());
            let keep: Vec<Var> = if i == self.tree.root() {
                vars.to_vec()
            } else {
                let sep = self.tree.separator(i);
                let mut keep: Vec<Var> = sep.to_vec();
                for f in &factors {
                    for l in f.labels() {
                        if vars.contains(l) && !keep.contains(l) {
                            keep.push(*l);
                        }
                    }
                }
                keep
            };
            msgs[i] = Some(tensor::sum_product(&factors, &keep)?);
        }
        Ok(msgs[self.tree.root()].take().expect("root message"))
    }

    /// Ancestral sampling: each remainder is drawn given its separator in
    /// topological order. Columns are the observed variables by id.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = &self.tree;
        struct Node {
            rem: Vec<Var>,
            sep: Vec<Var>,
            sep_strides: Vec<usize>,
            nr: usize,
            cum: Vec<f64>,
        }
        let nodes: Vec<Node> = (0..t.len())
            .map(|i| {
                let rem = t.remainder(i).to_vec();
                let sep = t.separator(i).to_vec();
                let (nr, ns) = (num_states(&rem), num_states(&sep));
                let vals = self.potentials[i].values();
                let mut cum = vec![0.0; nr * ns];
                for s in 0..ns {
                    let mut acc = 0.0;
                    for r in 0..nr {
                        acc += vals[r * ns + s];
                        cum[s * nr + r] = acc;
                    }
                }
                let sep_strides = tensor::strides_of(&sep.iter().map(|v| v.card).collect::<Vec<_>>());
                Node {
                    rem,
                    sep,
                    sep_strides,
                    nr,
                    cum,
                }
            })
            .collect();
        let observed = self.observed();
        let mut out = Vec::with_capacity(n * observed.len());
        let mut state = vec![0usize; self.domain().len()];
        for _ in 0..n {
            for &i in t.order() {
                let nd = &nodes[i];
                let s: usize = nd
                    .sep
                    .iter()
                    .zip(&nd.sep_strides)
                    .map(|(v, st)| state[v.id as usize] * st)
                    .sum();
                let col = &nd.cum[s * nd.nr..(s + 1) * nd.nr];
                let u = rng.random::<f64>() * col[nd.nr - 1];
                let mut r = col.iter().position(|&c| c > u).unwrap_or(nd.nr - 1);
                for v in nd.rem.iter().rev() {
                    state[v.id as usize] = r % v.card;
                    r /= v.card;
                }
            }
            out.extend(observed.iter().map(|v| state[v.id as usize]));
        }
        Dataset::from_flat(observed, out).expect("sampled states are in range")
    }

    /// Re-expresses the model on another tree over the same cliques, such as
    /// a normalized version of this one. Tables are reused where a node's
    /// separator and remainder match a node here; copies with an empty
    /// remainder get all-ones tables.
    pub fn transfer(&self, tree: RootedJunctionTree) -> Result<Self> {
        let same = |a: &[Var], b: &[Var]| a.len() == b.len() && a.iter().all(|v| b.contains(v));
        let mut pots = Vec::with_capacity(tree.len());
        for i in 0..tree.len() {
            let src = (0..self.tree.len()).find(|&j| {
                same(self.tree.separator(j), tree.separator(i)) && same(self.tree.remainder(j), tree.remainder(i))
            });
            match src {
                Some(j) => pots.push(self.potentials[j].clone()),
                None if tree.remainder(i).is_empty() => {
                    pots.push(LabeledTensor::filled(tree.separator(i).to_vec(), 1.0))
                }
                None => {
                    return Err(Error::InvalidStructure(format!(
                        "node {i} has no counterpart with the same separator"
                    )))
                }
            }
        }
        LatentJTModel::new(tree, pots)
    }

    /// The same distribution factorized from another root: every table is
    /// recomputed as `P(C_i) / P(S_i)` from exact clique marginals.
    pub fn rerooted(&self, root: RootChoice) -> Result<Self> {
        let tree = RootedJunctionTree::orient(&self.tree.unrooted(), root)?.normalize();
        let mut pots = Vec::with_capacity(tree.len());
        for i in 0..tree.len() {
            let labels = potential_labels(&tree, i);
            let joint = self.marginal(&labels)?;
            pots.push(conditional_from_joint(&joint, tree.remainder(i).len()));
        }
        LatentJTModel::new(tree, pots)
    }
}

/// Turns a joint table whose first `n_rem` modes are the conditioned-on
/// variables' complements into a conditional over those leading modes.
/// Zero-mass columns become uniform.
pub fn conditional_from_joint(joint: &LabeledTensor, n_rem: usize) -> LabeledTensor {
    let labels = joint.labels().to_vec();
    let nr = num_states(&labels[..n_rem]);
    let ns = num_states(&labels[n_rem..]);
    let mut vals = joint.values().to_vec();
    for s in 0..ns {
        let total: f64 = (0..nr).map(|r| vals[r * ns + s]).sum();
        for r in 0..nr {
            vals[r * ns + s] = if total > 0.0 {
                vals[r * ns + s] / total
            } else {
                1.0 / nr as f64
            };
        }
    }
    LabeledTensor::new(labels, vals).expect("same shape")
}

/// A draw from the flat Dirichlet on the `k`-simplex.
pub fn dirichlet(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = x.iter().sum();
    if total > 0.0 {
        x.iter_mut().for_each(|v| *v /= total);
    } else {
        x.iter_mut().for_each(|v| *v = 1.0 / k as f64);
    }
    x
}

/// Conditional table over `rem ++ sep` with independent flat-Dirichlet
/// columns.
pub fn random_conditional(rem: &[Var], sep: &[Var], rng: &mut impl Rng) -> LabeledTensor {
    let (nr, ns) = (num_states(rem), num_states(sep));
    let mut vals = vec![0.0; nr * ns];
    for s in 0..ns {
        for (r, p) in dirichlet(rng, nr).into_iter().enumerate() {
            vals[r * ns + s] = p;
        }
    }
    let mut labels = rem.to_vec();
    labels.extend_from_slice(sep);
    LabeledTensor::new(labels, vals).expect("consistent shape")
}

/// Random parameters for `tree`, deterministic in `seed`.
pub fn random_model(tree: &RootedJunctionTree, seed: u64) -> LatentJTModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pots = (0..tree.len())
        .map(|i| random_conditional(tree.remainder(i), tree.separator(i), &mut rng))
        .collect();
    LatentJTModel::new(tree.clone(), pots).expect("random tables are normalized")
}
