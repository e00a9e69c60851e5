//! Junction-tree sum-product over flat clique tables with precomputed index
//! maps, specialised for repeated E-steps on one tree.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{potential_labels, LatentJTModel};
use crate::structure::RootedJunctionTree;
use crate::tensor::{num_states, strides_of, Var};

/// Patterns per parallel work unit; fixed so that sums are reduced in the
/// same order whatever the thread count.
const CHUNK: usize = 512;

struct Node {
    size: usize,
    /// Entries `r * sep_size + s`: the parent-separator index is `x % sep_size`.
    sep_size: usize,
    /// Per child: clique entry -> child separator index.
    child_sep: Vec<Vec<u32>>,
    /// Observed variables of the clique: data column and clique entry -> state.
    evidence: Vec<(usize, Vec<u16>)>,
}

pub(crate) struct Engine {
    root: usize,
    /// Root first.
    order: Vec<usize>,
    children: Vec<Vec<usize>>,
    nodes: Vec<Node>,
}

/// Per-worker buffers.
struct Scratch {
    beta: Vec<Vec<f64>>,
    up: Vec<Vec<f64>>,
    down: Vec<Vec<f64>>,
    belief: Vec<f64>,
}

impl Engine {
    /// `columns` gives the data column of every observed variable.
    pub(crate) fn new(tree: &RootedJunctionTree, columns: &[Var]) -> Result<Self> {
        let dom = tree.domain();
        for v in dom.observed() {
            if !columns.contains(&v) {
                return Err(Error::ShapeMismatch(format!("samples lack column {}", dom.name(v.id))));
            }
        }
        let nodes = (0..tree.len())
            .map(|i| {
                let labels = potential_labels(tree, i);
                let dims: Vec<usize> = labels.iter().map(|v| v.card).collect();
                let strides = strides_of(&dims);
                let size = num_states(&labels);
                let state_of = |v: &Var, x: usize| {
                    let p = labels.iter().position(|l| l == v).expect("clique variable");
                    (x / strides[p]) % dims[p]
                };
                let child_sep = tree
                    .children(i)
                    .iter()
                    .map(|&c| {
                        let sep = tree.separator(c);
                        let sst = strides_of(&sep.iter().map(|v| v.card).collect::<Vec<_>>());
                        (0..size)
                            .map(|x| sep.iter().zip(&sst).map(|(v, s)| state_of(v, x) * s).sum::<usize>() as u32)
                            .collect()
                    })
                    .collect();
                let evidence = labels
                    .iter()
                    .filter(|v| dom.is_observed(v.id))
                    .map(|v| {
                        let col = columns.iter().position(|c| c == v).expect("checked above");
                        (col, (0..size).map(|x| state_of(v, x) as u16).collect())
                    })
                    .collect();
                Node {
                    size,
                    sep_size: num_states(tree.separator(i)),
                    child_sep,
                    evidence,
                }
            })
            .collect();
        Ok(Engine {
            root: tree.root(),
            order: tree.order().to_vec(),
            children: (0..tree.len()).map(|i| tree.children(i).to_vec()).collect(),
            nodes,
        })
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            beta: self.nodes.iter().map(|n| vec![0.0; n.size]).collect(),
            up: self.nodes.iter().map(|n| vec![0.0; n.sep_size]).collect(),
            down: self.nodes.iter().map(|n| vec![0.0; n.sep_size]).collect(),
            belief: Vec::new(),
        }
    }

    pub(crate) fn zero_counts(&self) -> Vec<Vec<f64>> {
        self.nodes.iter().map(|n| vec![0.0; n.size]).collect()
    }

    /// Upward pass for one record; returns `ln P(o)`. Leaves `beta` and `up`
    /// filled, with upward messages rescaled to sum to one.
    fn upward(&self, tables: &[&[f64]], row: &[usize], s: &mut Scratch) -> f64 {
        let mut log_scale = 0.0;
        for &i in self.order.iter().rev() {
            let nd = &self.nodes[i];
            let beta = &mut s.beta[i];
            beta.copy_from_slice(tables[i]);
            for (col, states) in &nd.evidence {
                let o = row[*col] as u16;
                for (b, &st) in beta.iter_mut().zip(states) {
                    if st != o {
                        *b = 0.0;
                    }
                }
            }
            for (k, &c) in self.children[i].iter().enumerate() {
                let m = &s.up[c];
                for (b, &j) in beta.iter_mut().zip(&nd.child_sep[k]) {
                    *b *= m[j as usize];
                }
            }
            if i == self.root {
                continue;
            }
            let up = &mut s.up[i];
            up.iter_mut().for_each(|u| *u = 0.0);
            for (x, &b) in beta.iter().enumerate() {
                up[x % nd.sep_size] += b;
            }
            let z: f64 = up.iter().sum();
            if z > 0.0 {
                up.iter_mut().for_each(|u| *u /= z);
                log_scale += z.ln();
            } else {
                return f64::NEG_INFINITY;
            }
        }
        let z: f64 = s.beta[self.root].iter().sum();
        z.ln() + log_scale
    }

    /// Full two-pass inference for one record; adds `weight` times the clique
    /// posteriors to `counts` and returns `ln P(o)`.
    fn accumulate(&self, tables: &[&[f64]], row: &[usize], weight: f64, s: &mut Scratch, counts: &mut [Vec<f64>]) -> f64 {
        let ll = self.upward(tables, row, s);
        if !ll.is_finite() {
            return ll;
        }
        for &i in &self.order {
            let nd = &self.nodes[i];
            // belief = beta * downward message
            s.belief.clear();
            s.belief.extend_from_slice(&s.beta[i]);
            if i != self.root {
                let d = &s.down[i];
                for (x, b) in s.belief.iter_mut().enumerate() {
                    *b *= d[x % nd.sep_size];
                }
            }
            let z: f64 = s.belief.iter().sum();
            let mut nonzero = s.belief.iter().enumerate().filter(|(_, &b)| b > 0.0);
            match (nonzero.next(), nonzero.next()) {
                // a fully determined clique gets the weight exactly
                (Some((x, _)), None) => counts[i][x] += weight,
                _ if z > 0.0 => {
                    let f = weight / z;
                    for (c, &b) in counts[i].iter_mut().zip(&s.belief) {
                        *c += f * b;
                    }
                }
                _ => {}
            }
            // downward messages: everything at this clique except the child's own message
            for (k, &c) in self.children[i].iter().enumerate() {
                let mut msg = vec![0.0; self.nodes[c].sep_size];
                let own = &s.up[c];
                for (x, &b) in s.belief.iter().enumerate() {
                    if b == 0.0 {
                        continue;
                    }
                    let j = nd.child_sep[k][x] as usize;
                    if own[j] > 0.0 {
                        msg[j] += b / own[j];
                    }
                }
                let z: f64 = msg.iter().sum();
                if z > 0.0 {
                    msg.iter_mut().for_each(|m| *m /= z);
                }
                s.down[c] = msg;
            }
        }
        ll
    }

    /// Expected clique counts and total log-likelihood over weighted records.
    pub(crate) fn expected_counts(
        &self,
        model: &LatentJTModel,
        rows: &[Vec<usize>],
        weights: &[f64],
    ) -> (Vec<Vec<f64>>, f64) {
        let tables: Vec<&[f64]> = model.potentials().iter().map(|p| p.values()).collect();
        let parts: Vec<(Vec<Vec<f64>>, f64)> = rows
            .par_chunks(CHUNK)
            .zip(weights.par_chunks(CHUNK))
            .map(|(rs, ws)| {
                let mut s = self.scratch();
                let mut counts = self.zero_counts();
                let mut ll = 0.0;
                for (r, &w) in rs.iter().zip(ws) {
                    ll += w * self.accumulate(&tables, r, w, &mut s, &mut counts);
                }
                (counts, ll)
            })
            .collect();
        let mut counts = self.zero_counts();
        let mut ll = 0.0;
        for (c, l) in parts {
            ll += l;
            for (acc, part) in counts.iter_mut().zip(c) {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
        }
        (counts, ll)
    }

    /// Log-likelihood only (upward pass).
    pub(crate) fn log_likelihood(&self, model: &LatentJTModel, rows: &[Vec<usize>], weights: &[f64]) -> f64 {
        let tables: Vec<&[f64]> = model.potentials().iter().map(|p| p.values()).collect();
        let parts: Vec<f64> = rows
            .par_chunks(CHUNK)
            .zip(weights.par_chunks(CHUNK))
            .map(|(rs, ws)| {
                let mut s = self.scratch();
                rs.iter().zip(ws).map(|(r, &w)| w * self.upward(&tables, r, &mut s)).sum()
            })
            .collect();
        parts.into_iter().sum()
    }
}
