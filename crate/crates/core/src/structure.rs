//! Junction-tree construction, rooting, normalization and validation.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{num_states, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarDecl {
    pub name: String,
    pub cardinality: usize,
    pub observed: bool,
}

/// Variable declarations; a variable's id is its index.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    vars: Vec<VarDecl>,
}

impl Domain {
    pub fn new(vars: Vec<VarDecl>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for v in &vars {
            if v.cardinality == 0 {
                return Err(Error::InvalidStructure(format!("{} has cardinality 0", v.name)));
            }
            if !names.insert(v.name.as_str()) {
                return Err(Error::InvalidStructure(format!("duplicate variable {}", v.name)));
            }
        }
        Ok(Domain { vars })
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn decls(&self) -> &[VarDecl] {
        &self.vars
    }

    pub fn var(&self, id: u32) -> Var {
        Var::new(id, self.vars[id as usize].cardinality)
    }

    pub fn vars(&self) -> Vec<Var> {
        (0..self.vars.len() as u32).map(|i| self.var(i)).collect()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.vars[id as usize].name
    }

    pub fn names(&self, vars: &[Var]) -> Vec<String> {
        vars.iter().map(|v| self.name(v.id).to_string()).collect()
    }

    pub fn is_observed(&self, id: u32) -> bool {
        self.vars[id as usize].observed
    }

    pub fn by_name(&self, name: &str) -> Option<Var> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .map(|i| self.var(i as u32))
    }

    pub fn observed(&self) -> Vec<Var> {
        self.vars().into_iter().filter(|v| self.is_observed(v.id)).collect()
    }

    pub fn hidden(&self) -> Vec<Var> {
        self.vars().into_iter().filter(|v| !self.is_observed(v.id)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphStructure {
    /// Undirected edges between variable ids.
    Undirected(Vec<(u32, u32)>),
    /// Parent list of every variable, indexed by id.
    Directed(Vec<Vec<u32>>),
    /// Explicit cliques, optionally with explicit tree edges between them.
    Cliques {
        cliques: Vec<Vec<u32>>,
        tree_edges: Option<Vec<(usize, usize)>>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphicalModelSpec {
    pub domain: Domain,
    pub structure: GraphStructure,
    pub root: Option<usize>,
}

/// Unrooted junction tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JunctionTree {
    pub domain: Domain,
    /// Clique variable sets, each sorted by id.
    pub cliques: Vec<Vec<Var>>,
    pub edges: Vec<(usize, usize)>,
}

impl JunctionTree {
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.cliques.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for n in adj.iter_mut() {
            n.sort_unstable();
        }
        adj
    }

    pub fn treewidth(&self) -> usize {
        self.cliques.iter().map(Vec::len).max().unwrap_or(1).saturating_sub(1)
    }
}

fn check_ids(domain: &Domain, ids: &[u32]) -> Result<()> {
    for &i in ids {
        if i as usize >= domain.len() {
            return Err(Error::UnknownVariable(format!("id {i}")));
        }
    }
    Ok(())
}

fn adjacency(n: usize, edges: &[(u32, u32)]) -> Result<Vec<BTreeSet<u32>>> {
    let mut adj = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        if a == b {
            return Err(Error::InvalidStructure(format!("self-loop on variable id {a}")));
        }
        adj[a as usize].insert(b);
        adj[b as usize].insert(a);
    }
    Ok(adj)
}

fn connected(adj: &[BTreeSet<u32>]) -> bool {
    if adj.is_empty() {
        return true;
    }
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0u32];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v as usize] {
            if !seen[w as usize] {
                seen[w as usize] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Min-fill elimination (ties broken by lowest id); returns the maximal
/// elimination cliques in order of discovery.
fn triangulate(adj: &[BTreeSet<u32>]) -> Vec<BTreeSet<u32>> {
    let mut g: Vec<BTreeSet<u32>> = adj.to_vec();
    let mut alive: BTreeSet<u32> = (0..adj.len() as u32).collect();
    let mut cliques: Vec<BTreeSet<u32>> = Vec::new();
    while !alive.is_empty() {
        let fill = |v: u32| -> usize {
            let nb: Vec<u32> = g[v as usize].iter().copied().collect();
            let mut missing = 0;
            for (i, &a) in nb.iter().enumerate() {
                for &b in &nb[i + 1..] {
                    if !g[a as usize].contains(&b) {
                        missing += 1;
                    }
                }
            }
            missing
        };
        let v = *alive
            .iter()
            .min_by_key(|&&v| (fill(v), v))
            .expect("non-empty");
        let nb: Vec<u32> = g[v as usize].iter().copied().collect();
        for (i, &a) in nb.iter().enumerate() {
            for &b in &nb[i + 1..] {
                g[a as usize].insert(b);
                g[b as usize].insert(a);
            }
        }
        let mut clique: BTreeSet<u32> = nb.iter().copied().collect();
        clique.insert(v);
        for &a in &nb {
            g[a as usize].remove(&v);
        }
        g[v as usize].clear();
        alive.remove(&v);
        if !cliques.iter().any(|c| clique.is_subset(c)) {
            cliques.retain(|c| !c.is_subset(&clique));
            cliques.push(clique);
        }
    }
    cliques
}

/// Maximum-weight spanning tree over separator sizes (Kruskal, ties by index).
fn max_spanning_tree(cliques: &[Vec<Var>]) -> Result<Vec<(usize, usize)>> {
    let n = cliques.len();
    let mut cand = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let w = cliques[i].iter().filter(|v| cliques[j].contains(v)).count();
            if w > 0 {
                cand.push((w, i, j));
            }
        }
    }
    cand.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut uf: Vec<usize> = (0..n).collect();
    fn find(uf: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while uf[r] != r {
            r = uf[r];
        }
        let mut y = x;
        while uf[y] != r {
            let nx = uf[y];
            uf[y] = r;
            y = nx;
        }
        r
    }
    let mut edges = Vec::new();
    for (_, i, j) in cand {
        let (ri, rj) = (find(&mut uf, i), find(&mut uf, j));
        if ri != rj {
            uf[ri] = rj;
            edges.push((i, j));
        }
    }
    if n > 0 && edges.len() != n - 1 {
        return Err(Error::Disconnected);
    }
    Ok(edges)
}

/// Moralizes (if directed), triangulates by min-fill, extracts maximal
/// cliques and connects them by a maximum-weight spanning tree.
pub fn build_junction_tree(spec: &GraphicalModelSpec) -> Result<JunctionTree> {
    let domain = spec.domain.clone();
    let n = domain.len();
    let to_vars = |c: &BTreeSet<u32>| -> Vec<Var> { c.iter().map(|&i| domain.var(i)).collect() };
    let cliques: Vec<Vec<Var>> = match &spec.structure {
        GraphStructure::Undirected(edges) => {
            for &(a, b) in edges {
                check_ids(&domain, &[a, b])?;
            }
            let adj = adjacency(n, edges)?;
            if !connected(&adj) {
                return Err(Error::Disconnected);
            }
            triangulate(&adj).iter().map(to_vars).collect()
        }
        GraphStructure::Directed(parents) => {
            if parents.len() != n {
                return Err(Error::InvalidStructure(format!(
                    "parent lists for {} of {n} variables",
                    parents.len()
                )));
            }
            let mut edges = Vec::new();
            for (child, ps) in parents.iter().enumerate() {
                check_ids(&domain, ps)?;
                for (k, &p) in ps.iter().enumerate() {
                    edges.push((child as u32, p));
                    for &q in &ps[k + 1..] {
                        if p != q {
                            edges.push((p, q));
                        }
                    }
                }
            }
            let adj = adjacency(n, &edges)?;
            if !connected(&adj) {
                return Err(Error::Disconnected);
            }
            triangulate(&adj).iter().map(to_vars).collect()
        }
        GraphStructure::Cliques { cliques, tree_edges } => {
            let mut out = Vec::with_capacity(cliques.len());
            for c in cliques {
                check_ids(&domain, c)?;
                let set: BTreeSet<u32> = c.iter().copied().collect();
                if set.is_empty() {
                    return Err(Error::InvalidStructure("empty clique".into()));
                }
                out.push(to_vars(&set));
            }
            let covered: BTreeSet<u32> = cliques.iter().flatten().copied().collect();
            if covered.len() != n {
                return Err(Error::InvalidStructure(
                    "some variables belong to no clique".into(),
                ));
            }
            if let Some(edges) = tree_edges {
                if edges.len() + 1 != out.len() {
                    return Err(Error::InvalidStructure(format!(
                        "{} tree edges for {} cliques",
                        edges.len(),
                        out.len()
                    )));
                }
                let mut adj = vec![BTreeSet::new(); out.len()];
                for &(a, b) in edges {
                    if a >= out.len() || b >= out.len() || a == b {
                        return Err(Error::InvalidStructure(format!("bad tree edge ({a}, {b})")));
                    }
                    adj[a].insert(b as u32);
                    adj[b].insert(a as u32);
                }
                if !connected(&adj) {
                    return Err(Error::Disconnected);
                }
                return Ok(JunctionTree {
                    domain,
                    cliques: out,
                    edges: edges.clone(),
                });
            }
            out
        }
    };
    let edges = max_spanning_tree(&cliques)?;
    Ok(JunctionTree {
        domain,
        cliques,
        edges,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RootChoice {
    /// Among cliques with exactly three neighbours (falling back to non-leaf
    /// cliques, then all), the one with most observed variables; lowest index
    /// on ties.
    #[default]
    Auto,
    Clique(usize),
}

/// A junction tree oriented away from a root clique.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootedJunctionTree {
    domain: Domain,
    cliques: Vec<Vec<Var>>,
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    separators: Vec<Vec<Var>>,
    remainders: Vec<Vec<Var>>,
    order: Vec<usize>,
    origin: Vec<usize>,
}

impl RootedJunctionTree {
    /// Orients `jt` away from the chosen root without restructuring it.
    pub fn orient(jt: &JunctionTree, root: RootChoice) -> Result<Self> {
        let n = jt.cliques.len();
        if n == 0 {
            return Err(Error::InvalidStructure("junction tree has no cliques".into()));
        }
        if jt.edges.len() + 1 != n {
            return Err(Error::InvalidStructure("clique graph is not a tree".into()));
        }
        let adj = jt.neighbors();
        let root = match root {
            RootChoice::Clique(r) => {
                if r >= n {
                    return Err(Error::InvalidStructure(format!("root {r} is not a clique")));
                }
                r
            }
            RootChoice::Auto => auto_root(jt, &adj),
        };
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some(v);
                    children[v].push(w);
                    queue.push_back(w);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Disconnected);
        }
        let mut t = RootedJunctionTree {
            domain: jt.domain.clone(),
            cliques: jt.cliques.clone(),
            root,
            parent,
            children,
            separators: Vec::new(),
            remainders: Vec::new(),
            order,
            origin: (0..n).collect(),
        };
        t.recompute();
        Ok(t)
    }

    fn recompute(&mut self) {
        let n = self.cliques.len();
        self.separators = (0..n)
            .map(|i| match self.parent[i] {
                Some(p) => self.cliques[i]
                    .iter()
                    .filter(|v| self.cliques[p].contains(v))
                    .copied()
                    .collect(),
                None => Vec::new(),
            })
            .collect();
        self.remainders = (0..n)
            .map(|i| {
                self.cliques[i]
                    .iter()
                    .filter(|v| !self.separators[i].contains(v))
                    .copied()
                    .collect()
            })
            .collect();
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([self.root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            queue.extend(self.children[v].iter().copied());
        }
        self.order = order;
    }

    /// Splits every node with more than three neighbours into a chain of
    /// copies joined by full-clique separators, each with three neighbours.
    pub fn normalize(mut self) -> Self {
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            let keep = if self.parent[v].is_none() { 2 } else { 1 };
            let max_children = keep + 1;
            if self.children[v].len() > max_children {
                let copy = self.cliques.len();
                self.cliques.push(self.cliques[v].clone());
                self.origin.push(self.origin[v]);
                let moved: Vec<usize> = self.children[v].split_off(keep);
                for &c in &moved {
                    self.parent[c] = Some(copy);
                }
                self.parent.push(Some(v));
                self.children.push(moved);
                self.children[v].push(copy);
            }
            stack.extend(self.children[v].iter().copied());
        }
        self.recompute();
        self
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.cliques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cliques.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn clique(&self, i: usize) -> &[Var] {
        &self.cliques[i]
    }

    pub fn cliques(&self) -> &[Vec<Var>] {
        &self.cliques
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn separator(&self, i: usize) -> &[Var] {
        &self.separators[i]
    }

    pub fn remainder(&self, i: usize) -> &[Var] {
        &self.remainders[i]
    }

    /// Topological order, root first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Index of the clique this node was copied from (itself when not a copy).
    pub fn origin(&self, i: usize) -> usize {
        self.origin[i]
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        i != self.root && self.children[i].is_empty()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.children[i].len() + usize::from(self.parent[i].is_some())
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .filter_map(|i| self.parent[i].map(|p| (p, i)))
            .collect()
    }

    pub fn treewidth(&self) -> usize {
        self.cliques.iter().map(Vec::len).max().unwrap_or(1).saturating_sub(1)
    }

    /// Nodes of the subtree rooted at `i`, in breadth-first order.
    pub fn subtree(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        let mut k = 0;
        while k < out.len() {
            out.extend(self.children[out[k]].iter().copied());
            k += 1;
        }
        out
    }

    pub fn separator_states(&self, i: usize) -> usize {
        num_states(&self.separators[i])
    }

    /// Undirected neighbours of every node.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        (0..self.len())
            .map(|i| {
                let mut v: Vec<usize> = self.parent[i].into_iter().collect();
                v.extend(self.children[i].iter().copied());
                v
            })
            .collect()
    }

    pub fn unrooted(&self) -> JunctionTree {
        JunctionTree {
            domain: self.domain.clone(),
            cliques: self.cliques.clone(),
            edges: self.edges(),
        }
    }

    /// Clique containing every variable of `vars`, if any.
    pub fn clique_containing(&self, vars: &[Var]) -> Option<usize> {
        self.order
            .iter()
            .copied()
            .find(|&i| vars.iter().all(|v| self.cliques[i].contains(v)))
    }
}

fn auto_root(jt: &JunctionTree, adj: &[Vec<usize>]) -> usize {
    let n = jt.cliques.len();
    let observed = |i: usize| {
        jt.cliques[i]
            .iter()
            .filter(|v| jt.domain.is_observed(v.id))
            .count()
    };
    let tiers: [&dyn Fn(usize) -> bool; 3] = [&|i| adj[i].len() == 3, &|i| adj[i].len() >= 2, &|_| true];
    for tier in tiers {
        let best = (0..n)
            .filter(|&i| tier(i))
            .max_by_key(|&i| (observed(i), std::cmp::Reverse(i)));
        if let Some(b) = best {
            return b;
        }
    }
    0
}

/// Orients the tree at the chosen root and splits high-degree nodes.
pub fn root_and_normalize(jt: &JunctionTree, root: RootChoice) -> Result<RootedJunctionTree> {
    Ok(RootedJunctionTree::orient(jt, root)?.normalize())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    RunningIntersection { variable: String },
    InternalDegree { node: usize, degree: usize },
    HiddenLeafRemainder { node: usize, variables: Vec<String> },
    EmptySeparator { parent: usize, child: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RunningIntersection { variable } => {
                write!(f, "cliques containing {variable} are not connected")
            }
            Violation::InternalDegree { node, degree } => {
                write!(f, "internal node {node} has {degree} neighbours, expected 3")
            }
            Violation::HiddenLeafRemainder { node, variables } => {
                write!(f, "leaf {node} has hidden remainder variables {variables:?}")
            }
            Violation::EmptySeparator { parent, child } => {
                write!(f, "edge {parent}-{child} has an empty separator")
            }
        }
    }
}

/// Structural diagnostics; an empty list means the tree is well-formed.
pub fn validate(t: &RootedJunctionTree) -> Vec<Violation> {
    let mut out = Vec::new();
    let edges = t.edges();
    for v in t.domain.vars() {
        let holders = t.cliques.iter().filter(|c| c.contains(&v)).count();
        if holders == 0 {
            continue;
        }
        let linked = edges
            .iter()
            .filter(|&&(a, b)| t.cliques[a].contains(&v) && t.cliques[b].contains(&v))
            .count();
        if linked + 1 != holders {
            out.push(Violation::RunningIntersection {
                variable: t.domain.name(v.id).to_string(),
            });
        }
    }
    for i in 0..t.len() {
        if !t.is_leaf(i) && t.degree(i) != 3 {
            out.push(Violation::InternalDegree {
                node: i,
                degree: t.degree(i),
            });
        }
        if t.is_leaf(i) {
            let hidden: Vec<String> = t.remainders[i]
                .iter()
                .filter(|v| !t.domain.is_observed(v.id))
                .map(|v| t.domain.name(v.id).to_string())
                .collect();
            if !hidden.is_empty() {
                out.push(Violation::HiddenLeafRemainder {
                    node: i,
                    variables: hidden,
                });
            }
        }
    }
    for (p, c) in edges {
        if t.separators[c].is_empty() {
            out.push(Violation::EmptySeparator { parent: p, child: c });
        }
    }
    out
}
