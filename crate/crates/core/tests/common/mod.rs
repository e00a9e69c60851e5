#![allow(dead_code)]

use latent_jt::model::{random_model, LatentJTModel};
use latent_jt::spectral::{diagnostics, plan_observed_sets, ObservedSetPlan};
use latent_jt::structure::{
    build_junction_tree, root_and_normalize, Domain, GraphStructure, GraphicalModelSpec, RootChoice,
    RootedJunctionTree, VarDecl,
};
use latent_jt::tensor::Var;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn decl(name: &str, card: usize, observed: bool) -> VarDecl {
    VarDecl {
        name: name.to_string(),
        cardinality: card,
        observed,
    }
}

/// The nine-variable example: hidden A–E, observed F, G, H, I, with clique
/// {B,C,D,E} below the root {A,C,E} and above leaves {B,D,G} and {B,C,F}.
pub fn example_spec() -> GraphicalModelSpec {
    let domain = Domain::new(vec![
        decl("A", 2, false),
        decl("B", 2, false),
        decl("C", 2, false),
        decl("D", 2, false),
        decl("E", 4, false),
        decl("F", 4, true),
        decl("G", 4, true),
        decl("H", 8, true),
        decl("I", 2, true),
    ])
    .unwrap();
    GraphicalModelSpec {
        domain,
        structure: GraphStructure::Cliques {
            cliques: vec![
                vec![0, 2, 4],    // A C E
                vec![1, 3, 6],    // B D G
                vec![1, 2, 3, 4], // B C D E
                vec![1, 2, 5],    // B C F
                vec![2, 4, 7],    // C E H
                vec![0, 8],       // A I
            ],
            tree_edges: Some(vec![(0, 2), (0, 4), (0, 5), (2, 1), (2, 3)]),
        },
        root: Some(0),
    }
}

pub fn example_tree() -> RootedJunctionTree {
    let jt = build_junction_tree(&example_spec()).unwrap();
    root_and_normalize(&jt, RootChoice::Clique(0)).unwrap()
}

/// Every joint assignment of `vars`, first variable slowest.
pub fn all_assignments(vars: &[Var]) -> Vec<Vec<(Var, usize)>> {
    let mut out = vec![Vec::new()];
    for &v in vars {
        out = out
            .into_iter()
            .flat_map(|a| {
                (0..v.card).map(move |x| {
                    let mut b = a.clone();
                    b.push((v, x));
                    b
                })
            })
            .collect();
    }
    out
}

/// Random rooted tree grown clique by clique from fresh variables.
///
/// In `general` mode, cliques may carry observed variables anywhere and
/// nodes get 0–3 children. Otherwise the tree has the shape the learner
/// needs: a root with three children, internal nodes with two, hidden
/// internal cliques, and leaves holding one fresh observed variable.
pub fn random_tree(rng: &mut impl Rng, general: bool) -> RootedJunctionTree {
    loop {
        if let Some(t) = try_random_tree(rng, general) {
            return t;
        }
    }
}

fn try_random_tree(rng: &mut impl Rng, general: bool) -> Option<RootedJunctionTree> {
    const MAX_VARS: usize = 8;
    let mut decls: Vec<VarDecl> = Vec::new();
    let fresh = |decls: &mut Vec<VarDecl>, observed: bool, rng: &mut dyn rand::RngCore| {
        let card = if observed { rng.random_range(2..=4) } else { rng.random_range(2..=3) };
        let id = decls.len() as u32;
        decls.push(decl(&format!("{}{id}", if observed { "O" } else { "H" }), card, observed));
        id
    };
    let mut cliques: Vec<Vec<u32>> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut parent: Vec<Option<usize>> = Vec::new();
    let internal_budget = if general { rng.random_range(1..=4) } else { rng.random_range(1..=3) };
    // root
    let root_hidden = rng.random_range(1..=2);
    let mut root = Vec::new();
    for _ in 0..root_hidden {
        root.push(fresh(&mut decls, false, rng));
    }
    if general && rng.random_bool(0.3) {
        root.push(fresh(&mut decls, true, rng));
    }
    cliques.push(root);
    parent.push(None);
    let mut open = vec![0usize];
    let mut internals = 1;
    while let Some(v) = open.pop() {
        let slots = if general {
            rng.random_range(1..=3)
        } else if parent[v].is_none() {
            3
        } else {
            2
        };
        for _ in 0..slots {
            let pc = cliques[v].clone();
            let hidden_pc: Vec<u32> = pc.iter().copied().filter(|&i| !decls[i as usize].observed).collect();
            let pool = if hidden_pc.is_empty() { pc.clone() } else { hidden_pc };
            let mut sep: Vec<u32> = pool.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
            if sep.is_empty() {
                sep.push(pool[rng.random_range(0..pool.len())]);
            }
            let make_internal = internals < internal_budget && decls.len() + 2 <= MAX_VARS && rng.random_bool(0.6);
            let mut c = sep;
            if make_internal {
                c.push(fresh(&mut decls, false, rng));
                if general && rng.random_bool(0.3) && decls.len() < MAX_VARS {
                    c.push(fresh(&mut decls, true, rng));
                }
                internals += 1;
            } else {
                if decls.len() >= MAX_VARS {
                    return None;
                }
                let observed = !general || rng.random_bool(0.8);
                c.push(fresh(&mut decls, observed, rng));
            }
            let id = cliques.len();
            cliques.push(c);
            parent.push(Some(v));
            edges.push((v, id));
            if make_internal {
                open.push(id);
            }
        }
    }
    if decls.len() > MAX_VARS {
        return None;
    }
    let spec = GraphicalModelSpec {
        domain: Domain::new(decls).unwrap(),
        structure: GraphStructure::Cliques {
            cliques,
            tree_edges: Some(edges),
        },
        root: Some(0),
    };
    let jt = build_junction_tree(&spec).ok()?;
    latent_jt::structure::RootedJunctionTree::orient(&jt, RootChoice::Clique(0)).ok()
}

/// Random model on a learner-shaped tree whose plan exists and whose
/// population anchor moments are comfortably full rank.
pub fn feasible_model(rng: &mut ChaCha8Rng) -> (LatentJTModel, ObservedSetPlan) {
    loop {
        let tree = random_tree(rng, false);
        let Ok(plan) = plan_observed_sets(&tree) else { continue };
        let model = random_model(&tree, rng.random());
        let d = diagnostics(&model, &plan).unwrap();
        if d.alpha > 1e-4 && d.beta > 1e-4 {
            return (model, plan);
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
