//! Observed-variable sample sets.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Var;

/// Row-major table of state indices, one column per observed variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    vars: Vec<Var>,
    values: Vec<usize>,
}

impl Dataset {
    pub fn new(vars: Vec<Var>, rows: &[Vec<usize>]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * vars.len());
        for r in rows {
            if r.len() != vars.len() {
                return Err(Error::ShapeMismatch(format!(
                    "record has {} fields, expected {}",
                    r.len(),
                    vars.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::from_flat(vars, values)
    }

    pub fn from_flat(vars: Vec<Var>, values: Vec<usize>) -> Result<Self> {
        let w = vars.len();
        if w == 0 {
            return Err(Error::ShapeMismatch("dataset without columns".into()));
        }
        if values.len() % w != 0 {
            return Err(Error::ShapeMismatch("ragged sample table".into()));
        }
        for (k, &x) in values.iter().enumerate() {
            let v = vars[k % w];
            if x >= v.card {
                return Err(Error::IndexOutOfRange {
                    label: v.to_string(),
                    index: x,
                    cardinality: v.card,
                });
            }
        }
        Ok(Dataset { vars, values })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        let w = self.vars.len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.values.chunks_exact(self.vars.len())
    }

    /// Row `i` as (variable, state) pairs.
    pub fn assignment(&self, i: usize) -> Vec<(Var, usize)> {
        self.vars.iter().copied().zip(self.row(i).iter().copied()).collect()
    }

    pub fn column(&self, var: Var) -> Option<usize> {
        self.vars.iter().position(|v| *v == var)
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            vars: self.vars.clone(),
            values: self.values[..n * self.vars.len()].to_vec(),
        }
    }

    /// Distinct rows with their multiplicities, in order of first appearance.
    pub fn patterns(&self) -> (Vec<Vec<usize>>, Vec<f64>) {
        let mut index: HashMap<&[usize], usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for r in self.rows() {
            match index.get(r) {
                Some(&k) => counts[k] += 1.0,
                None => {
                    index.insert(r, rows.len());
                    rows.push(r.to_vec());
                    counts.push(1.0);
                }
            }
        }
        (rows, counts)
    }
}
