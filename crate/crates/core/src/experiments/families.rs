//! Latent structures used in the synthetic evaluation.
//!
//! Every family is laid out directly as a junction tree whose internal
//! cliques are hidden and have exactly three neighbours, with each
//! observation in its own leaf. With all internal degrees equal to three a
//! tree has two more leaves than internal nodes, which dictates where the
//! emissions hang.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dirichlet, potential_labels, random_conditional, random_model, LatentJTModel};
use crate::structure::{
    build_junction_tree, root_and_normalize, Domain, GraphStructure, GraphicalModelSpec, RootChoice,
    RootedJunctionTree, VarDecl,
};
use crate::tensor::{LabeledTensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "hmm2")]
    Hmm2,
    #[serde(rename = "hmm3")]
    Hmm3,
    #[serde(rename = "factorial2")]
    Factorial2,
    #[serde(rename = "synthetic-jt")]
    SyntheticJt,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Hmm2, Family::Hmm3, Family::Factorial2, Family::SyntheticJt];

    /// (size, k_h, k_o) defaults: chain length, time steps, or tree depth.
    pub fn defaults(self) -> (usize, usize, usize) {
        match self {
            Family::Hmm2 | Family::Hmm3 => (8, 2, 4),
            Family::Factorial2 => (6, 2, 16),
            Family::SyntheticJt => (3, 2, 16),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Hmm2 => "hmm2",
            Family::Hmm3 => "hmm3",
            Family::Factorial2 => "factorial2",
            Family::SyntheticJt => "synthetic-jt",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown structure family {s:?}")))
    }
}

/// Overrides for a family's size and cardinalities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyParams {
    pub size: Option<usize>,
    pub k_h: Option<usize>,
    pub k_o: Option<usize>,
}

struct Builder {
    decls: Vec<VarDecl>,
    cliques: Vec<Vec<u32>>,
    edges: Vec<(usize, usize)>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            decls: Vec::new(),
            cliques: Vec::new(),
            edges: Vec::new(),
        }
    }

    fn var(&mut self, name: String, card: usize, observed: bool) -> u32 {
        self.decls.push(VarDecl {
            name,
            cardinality: card,
            observed,
        });
        (self.decls.len() - 1) as u32
    }

    fn clique(&mut self, vars: Vec<u32>, parent: Option<usize>) -> usize {
        self.cliques.push(vars);
        let id = self.cliques.len() - 1;
        if let Some(p) = parent {
            self.edges.push((p, id));
        }
        id
    }

    fn finish(self, root: usize) -> Result<(GraphicalModelSpec, RootedJunctionTree)> {
        let spec = GraphicalModelSpec {
            domain: Domain::new(self.decls)?,
            structure: GraphStructure::Cliques {
                cliques: self.cliques,
                tree_edges: Some(self.edges),
            },
            root: Some(root),
        };
        let tree = root_and_normalize(&build_junction_tree(&spec)?, RootChoice::Clique(root))?;
        Ok((spec, tree))
    }
}

fn require(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(what.to_string()))
    }
}

/// Builds the model specification and its rooted junction tree.
pub fn gen_structure(family: Family, params: FamilyParams) -> Result<(GraphicalModelSpec, RootedJunctionTree)> {
    let (size, kh, ko) = family.defaults();
    let size = params.size.unwrap_or(size);
    let kh = params.k_h.unwrap_or(kh);
    let ko = params.k_o.unwrap_or(ko);
    require(kh >= 1 && ko >= 1, "cardinalities must be positive")?;
    match family {
        Family::Hmm2 => hmm2(size, kh, ko),
        Family::Hmm3 => hmm3(size, kh, ko),
        Family::Factorial2 => factorial2(size, kh, ko),
        Family::SyntheticJt => synthetic(size, kh, ko),
    }
}

/// Second-order chain: triples `{H_{t-2}, H_{t-1}, H_t}` for `t = 3..T`, the
/// first one the root. End triples carry two emission leaves, the others one.
fn hmm2(t: usize, kh: usize, ko: usize) -> Result<(GraphicalModelSpec, RootedJunctionTree)> {
    require(t >= 4, "hmm2 needs length >= 4")?;
    let mut b = Builder::new();
    let h: Vec<u32> = (1..=t).map(|i| b.var(format!("H{i}"), kh, false)).collect();
    let e: Vec<u32> = (1..=t).map(|i| b.var(format!("E{i}"), ko, true)).collect();
    // triple index k covers steps k, k+1, k+2 (0-based)
    let mut prev = None;
    let mut triples = Vec::new();
    for k in 0..t - 2 {
        let id = b.clique(vec![h[k], h[k + 1], h[k + 2]], prev);
        triples.push(id);
        prev = Some(id);
    }
    let last = triples.len() - 1;
    let leaf = |b: &mut Builder, step: usize, at: usize| {
        b.clique(vec![h[step], e[step]], Some(triples[at]));
    };
    leaf(&mut b, 0, 0);
    leaf(&mut b, 1, 0);
    for k in 1..last {
        leaf(&mut b, k + 1, k);
    }
    leaf(&mut b, t - 2, last);
    leaf(&mut b, t - 1, last);
    b.finish(triples[0])
}

/// Third-order chain. Quadruples `Q_t = {H_{t-3}..H_t}` for `t = 6..T`
/// hang below a root over steps 1–5; a pair node at each end (`{H_1, H_2}`
/// and `{H_{T-1}, H_T}`) carries two emissions, so that every three-variable
/// separator has enough observations on both sides.
fn hmm3(t: usize, kh: usize, ko: usize) -> Result<(GraphicalModelSpec, RootedJunctionTree)> {
    require(t >= 6, "hmm3 needs length >= 6")?;
    let mut b = Builder::new();
    let h: Vec<u32> = (1..=t).map(|i| b.var(format!("H{i}"), kh, false)).collect();
    let e: Vec<u32> = (1..=t).map(|i| b.var(format!("E{i}"), ko, true)).collect();
    let root = b.clique(h[..5].to_vec(), None);
    let mut chain = vec![root];
    for k in 5..t {
        let id = b.clique(h[k - 3..=k].to_vec(), Some(*chain.last().expect("root")));
        chain.push(id);
    }
    let head = b.clique(vec![h[0], h[1]], Some(root));
    b.clique(vec![h[0], e[0]], Some(head));
    b.clique(vec![h[1], e[1]], Some(head));
    b.clique(vec![h[2], e[2]], Some(root));
    let last = chain.len() - 1;
    // chain[k] (k >= 1) spans steps k+1..k+4 (0-based); interior ones carry emission k+2
    for (k, &node) in chain.iter().enumerate().take(last).skip(1) {
        b.clique(vec![h[k + 2], e[k + 2]], Some(node));
    }
    let tail = chain[last];
    b.clique(vec![h[t - 3], e[t - 3]], Some(tail));
    let pair = b.clique(vec![h[t - 2], h[t - 1]], Some(tail));
    b.clique(vec![h[t - 2], e[t - 2]], Some(pair));
    b.clique(vec![h[t - 1], e[t - 1]], Some(pair));
    b.finish(root)
}

/// Two hidden chains `A_t`, `B_t` with emissions `E_t | A_t, B_t`. The root
/// merges steps 1–3; chain cliques `{A_t, B_t, A_{t+1}, B_{t+1}}` follow.
fn factorial2(t: usize, kh: usize, ko: usize) -> Result<(GraphicalModelSpec, RootedJunctionTree)> {
    require(t >= 4, "factorial2 needs at least 4 steps")?;
    let mut b = Builder::new();
    let a: Vec<u32> = (1..=t).map(|i| b.var(format!("A{i}"), kh, false)).collect();
    let c: Vec<u32> = (1..=t).map(|i| b.var(format!("B{i}"), kh, false)).collect();
    let e: Vec<u32> = (1..=t).map(|i| b.var(format!("E{i}"), ko, true)).collect();
    let root = b.clique(vec![a[0], c[0], a[1], c[1], a[2], c[2]], None);
    let mut chain = vec![root];
    for k in 2..t - 1 {
        let id = b.clique(vec![a[k], c[k], a[k + 1], c[k + 1]], Some(*chain.last().expect("root")));
        chain.push(id);
    }
    let leaf = |b: &mut Builder, step: usize, at: usize| {
        b.clique(vec![a[step], c[step], e[step]], Some(at));
    };
    leaf(&mut b, 0, root);
    leaf(&mut b, 1, root);
    let last = chain.len() - 1;
    for (k, &node) in chain.iter().enumerate().take(last).skip(1) {
        leaf(&mut b, k + 1, node);
    }
    leaf(&mut b, t - 2, chain[last]);
    leaf(&mut b, t - 1, chain[last]);
    b.finish(root)
}

/// Binary latent tree with `depth` levels of latent nodes, two hidden
/// variables per node; cliques join a node's variables with its parent's,
/// and every bottom node emits two observations.
fn synthetic(depth: usize, kh: usize, ko: usize) -> Result<(GraphicalModelSpec, RootedJunctionTree)> {
    require((2..=6).contains(&depth), "synthetic-jt depth must be 2..=6")?;
    let mut b = Builder::new();
    // latent nodes in heap order: 1 is the root, children 2v and 2v+1
    let count = (1usize << depth) - 1;
    let z: Vec<[u32; 2]> = (1..=count)
        .map(|v| [b.var(format!("Z{v}a"), kh, false), b.var(format!("Z{v}b"), kh, false)])
        .collect();
    let mut clique_of = vec![usize::MAX; count + 1];
    // the first child of the latent root hosts the junction-tree root
    for v in 2..=count {
        let p = v / 2;
        let parent_clique = if v == 2 {
            None
        } else if p == 1 {
            Some(clique_of[2])
        } else {
            Some(clique_of[p])
        };
        let vars = vec![z[p - 1][0], z[p - 1][1], z[v - 1][0], z[v - 1][1]];
        clique_of[v] = b.clique(vars, parent_clique);
    }
    let first_bottom = 1 << (depth - 1);
    let mut k = 0;
    for v in first_bottom..=count {
        for _ in 0..2 {
            k += 1;
            let o = b.var(format!("O{k}"), ko, true);
            b.clique(vec![z[v - 1][0], z[v - 1][1], o], Some(clique_of[v]));
        }
    }
    b.finish(clique_of[2])
}

/// Random parameters for a family. The factorial family draws per-chain
/// transitions and assembles the clique tables from them; the others use
/// independent flat-Dirichlet tables per clique (nonhomogeneous).
pub fn gen_model(family: Family, tree: &RootedJunctionTree, seed: u64) -> Result<LatentJTModel> {
    match family {
        Family::Factorial2 => factorial_model(tree, seed),
        _ => Ok(random_model(tree, seed)),
    }
}

fn factorial_model(tree: &RootedJunctionTree, seed: u64) -> Result<LatentJTModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dom = tree.domain();
    let hidden = dom.hidden();
    // per hidden variable: its chain predecessor (same letter, previous step)
    let pred = |v: Var| -> Option<Var> {
        let name = dom.name(v.id);
        let (letter, step) = name.split_at(1);
        let step: usize = step.parse().ok()?;
        (step > 1).then(|| dom.by_name(&format!("{letter}{}", step - 1))).flatten()
    };
    // one conditional table per hidden variable: P(X_t | X_{t-1}) or P(X_1)
    let tables: Vec<(Var, Option<Var>, Vec<f64>)> = hidden
        .iter()
        .map(|&v| {
            let p = pred(v);
            let ns = p.map_or(1, |q| q.card);
            let mut vals = vec![0.0; v.card * ns];
            for s in 0..ns {
                for (r, x) in dirichlet(&mut rng, v.card).into_iter().enumerate() {
                    vals[r * ns + s] = x;
                }
            }
            (v, p, vals)
        })
        .collect();
    let mut pots = Vec::with_capacity(tree.len());
    for i in 0..tree.len() {
        let rem = tree.remainder(i);
        let sep = tree.separator(i);
        let labels = potential_labels(tree, i);
        if rem.iter().any(|v| dom.is_observed(v.id)) {
            pots.push(random_conditional(rem, sep, &mut rng));
            continue;
        }
        // product of chain factors for the remainder variables
        let t = LabeledTensor::from_fn(labels.clone(), |idx| {
            let state = |v: &Var| labels.iter().position(|l| l == v).map(|p| idx[p]);
            rem.iter()
                .map(|v| {
                    let (_, p, vals) = tables.iter().find(|(w, _, _)| w == v).expect("hidden table");
                    let x = state(v).expect("remainder variable");
                    match p {
                        Some(q) => vals[x * q.card + state(q).expect("predecessor in clique")],
                        None => vals[x],
                    }
                })
                .product()
        });
        pots.push(t);
    }
    LatentJTModel::new(tree.clone(), pots)
}
