//! Dense tensors whose modes are labeled by random variables.
//!
//! Mode order carries no meaning beyond storage: values are laid out row-major
//! over the label sequence, and operations match modes by variable rather
//! than by position. A variable may label several modes of one tensor; the
//! occurrence index of a mode is its rank among the modes carrying the same
//! variable, counted left to right. Every operation that selects modes by
//! variable takes the lowest occurrences first.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Handle of a discrete random variable together with its number of states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var {
    pub id: u32,
    pub card: usize,
}

impl Var {
    pub const fn new(id: u32, card: usize) -> Self {
        Var { id, card }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "X{}", self.id)
    }
}

/// A mode label: the variable plus which copy of it this mode is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeLabel {
    pub var: Var,
    pub occurrence: usize,
}

/// Product of cardinalities.
pub fn num_states(vars: &[Var]) -> usize {
    vars.iter().map(|v| v.card).product()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTensor {
    labels: Vec<Var>,
    values: Vec<f64>,
}

impl LabeledTensor {
    pub fn new(labels: Vec<Var>, values: Vec<f64>) -> Result<Self> {
        if labels.iter().any(|v| v.card == 0) {
            return Err(Error::Malformed("zero cardinality label".into()));
        }
        let n = num_states(&labels);
        if values.len() != n {
            return Err(Error::Malformed(format!(
                "expected {n} values for dims {:?}, got {}",
                labels.iter().map(|v| v.card).collect::<Vec<_>>(),
                values.len()
            )));
        }
        Ok(LabeledTensor { labels, values })
    }

    pub fn scalar(value: f64) -> Self {
        LabeledTensor {
            labels: Vec::new(),
            values: vec![value],
        }
    }

    pub fn zeros(labels: Vec<Var>) -> Self {
        let n = num_states(&labels);
        LabeledTensor {
            labels,
            values: vec![0.0; n],
        }
    }

    pub fn filled(labels: Vec<Var>, value: f64) -> Self {
        let n = num_states(&labels);
        LabeledTensor {
            labels,
            values: vec![value; n],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(labels: Vec<Var>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let dims: Vec<usize> = labels.iter().map(|v| v.card).collect();
        let n = num_states(&labels);
        let mut values = Vec::with_capacity(n);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..n {
            values.push(f(&idx));
            increment(&mut idx, &dims);
        }
        LabeledTensor { labels, values }
    }

    pub fn labels(&self) -> &[Var] {
        &self.labels
    }

    pub fn dims(&self) -> Vec<usize> {
        self.labels.iter().map(|v| v.card).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn order(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value of an order-0 tensor.
    pub fn as_scalar(&self) -> Option<f64> {
        (self.labels.is_empty()).then(|| self.values[0])
    }

    pub fn mode_labels(&self) -> Vec<ModeLabel> {
        let mut seen: Vec<(u32, usize)> = Vec::new();
        self.labels
            .iter()
            .map(|&var| {
                let occurrence = match seen.iter_mut().find(|(id, _)| *id == var.id) {
                    Some((_, c)) => {
                        *c += 1;
                        *c - 1
                    }
                    None => {
                        seen.push((var.id, 1));
                        0
                    }
                };
                ModeLabel { var, occurrence }
            })
            .collect()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims())
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let off: usize = idx
            .iter()
            .zip(self.strides())
            .map(|(i, s)| i * s)
            .sum();
        self.values[off]
    }

    pub fn count(&self, var_id: u32) -> usize {
        self.labels.iter().filter(|v| v.id == var_id).count()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scale(mut self, factor: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn relabel(mut self, from: Var, to: Var) -> Result<Self> {
        if from.card != to.card {
            return Err(Error::DimensionMismatch {
                label: from.to_string(),
                left: from.card,
                right: to.card,
            });
        }
        for l in self.labels.iter_mut() {
            if l.id == from.id {
                *l = to;
            }
        }
        Ok(self)
    }

    /// Reorders modes: mode `k` of the result is mode `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> LabeledTensor {
        let src = self.strides();
        let dims: Vec<usize> = perm.iter().map(|&p| self.labels[p].card).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
        LabeledTensor {
            labels: perm.iter().map(|&p| self.labels[p]).collect(),
            values: gather(&self.values, &dims, &strides, 0),
        }
    }

    /// Positions of the modes selected by `vars` (repeats request further
    /// occurrences), lowest occurrence first.
    pub fn select_modes(&self, vars: &[Var]) -> Result<Vec<usize>> {
        let mut used = vec![false; self.labels.len()];
        let mut out = Vec::with_capacity(vars.len());
        for v in vars {
            let pos = self
                .labels
                .iter()
                .enumerate()
                .find(|(i, l)| l.id == v.id && !used[*i])
                .map(|(i, _)| i);
            match pos {
                Some(p) => {
                    if self.labels[p].card != v.card {
                        return Err(Error::DimensionMismatch {
                            label: v.to_string(),
                            left: self.labels[p].card,
                            right: v.card,
                        });
                    }
                    used[p] = true;
                    out.push(p);
                }
                None => {
                    let available = self.count(v.id);
                    if available == 0 {
                        return Err(Error::MissingLabel(v.to_string()));
                    }
                    let requested = vars.iter().filter(|w| w.id == v.id).count();
                    return Err(Error::MultiplicityExceeded {
                        label: v.to_string(),
                        requested,
                        available,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Flattens the modes selected by `rows` into matrix rows and the remaining
    /// modes (in their stored order) into columns.
    pub fn matricize(&self, rows: &[Var]) -> Result<Matricized> {
        let row_pos = self.select_modes(rows)?;
        let col_pos: Vec<usize> = (0..self.order()).filter(|p| !row_pos.contains(p)).collect();
        let row_labels: Vec<Var> = row_pos.iter().map(|&p| self.labels[p]).collect();
        let col_labels: Vec<Var> = col_pos.iter().map(|&p| self.labels[p]).collect();
        let perm: Vec<usize> = row_pos.iter().chain(col_pos.iter()).copied().collect();
        let vals = self.permute(&perm).values;
        let (r, c) = (num_states(&row_labels), num_states(&col_labels));
        Ok(Matricized {
            matrix: DMatrix::from_row_slice(r, c, &vals),
            row_labels,
            col_labels,
        })
    }

    /// Inverse of [`matricize`](Self::matricize).
    pub fn from_matrix(row_labels: Vec<Var>, col_labels: Vec<Var>, m: &DMatrix<f64>) -> Result<Self> {
        let (r, c) = (num_states(&row_labels), num_states(&col_labels));
        if m.shape() != (r, c) {
            return Err(Error::Malformed(format!(
                "matrix shape {:?} does not match labels ({r}, {c})",
                m.shape()
            )));
        }
        let mut values = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                values.push(m[(i, j)]);
            }
        }
        let mut labels = row_labels;
        labels.extend(col_labels);
        LabeledTensor::new(labels, values)
    }

    /// Contracts the modes in `vars` against all-ones vectors.
    pub fn sum_out(&self, vars: &[Var]) -> Result<LabeledTensor> {
        let ones = LabeledTensor::filled(vars.to_vec(), 1.0);
        multiply(self, &ones, vars)
    }

    pub fn max_abs_diff(&self, other: &LabeledTensor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub struct Matricized {
    pub matrix: DMatrix<f64>,
    pub row_labels: Vec<Var>,
    pub col_labels: Vec<Var>,
}

pub(crate) fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Row-major odometer step; returns false after wrapping around.
pub(crate) fn increment(idx: &mut [usize], dims: &[usize]) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return true;
        }
        idx[k] = 0;
    }
    false
}

/// Reads `values` at `base + sum(idx * strides)` for every row-major `idx` over `dims`.
fn gather(values: &[f64], dims: &[usize], strides: &[usize], base: usize) -> Vec<f64> {
    let n: usize = dims.iter().product();
    let mut out = Vec::with_capacity(n);
    if dims.is_empty() {
        out.push(values[base]);
        return out;
    }
    let last = dims.len() - 1;
    let (dl, sl) = (dims[last], strides[last]);
    let mut idx = vec![0usize; dims.len()];
    let mut off = base;
    loop {
        for i in 0..dl {
            out.push(values[off + i * sl]);
        }
        // advance all but the innermost mode
        let mut k = last;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            off += strides[k];
            if idx[k] < dims[k] {
                break;
            }
            off -= strides[k] * dims[k];
            idx[k] = 0;
        }
    }
}

/// Multiplies `a` and `b` along the variables in `sigma`.
///
/// A variable repeated `m` times in `sigma` contracts `m` occurrences on each
/// side, lowest occurrences first. Surviving modes of `a` come first, then
/// those of `b`, each in stored order.
pub fn multiply(a: &LabeledTensor, b: &LabeledTensor, sigma: &[Var]) -> Result<LabeledTensor> {
    let pa = a.select_modes(sigma)?;
    let pb = b.select_modes(sigma)?;
    for (&i, &j) in pa.iter().zip(&pb) {
        if a.labels[i].card != b.labels[j].card {
            return Err(Error::DimensionMismatch {
                label: a.labels[i].to_string(),
                left: a.labels[i].card,
                right: b.labels[j].card,
            });
        }
    }
    let fa: Vec<usize> = (0..a.order()).filter(|p| !pa.contains(p)).collect();
    let fb: Vec<usize> = (0..b.order()).filter(|p| !pb.contains(p)).collect();

    let sa = a.strides();
    let sb = b.strides();
    let m: usize = fa.iter().map(|&p| a.labels[p].card).product();
    let k: usize = pa.iter().map(|&p| a.labels[p].card).product();
    let n: usize = fb.iter().map(|&p| b.labels[p].card).product();

    let a_dims: Vec<usize> = fa.iter().chain(&pa).map(|&p| a.labels[p].card).collect();
    let a_str: Vec<usize> = fa.iter().chain(&pa).map(|&p| sa[p]).collect();
    let am = gather(&a.values, &a_dims, &a_str, 0);
    let b_dims: Vec<usize> = pb.iter().chain(&fb).map(|&p| b.labels[p].card).collect();
    let b_str: Vec<usize> = pb.iter().chain(&fb).map(|&p| sb[p]).collect();
    let bm = gather(&b.values, &b_dims, &b_str, 0);

    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = am[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &bm[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    let labels = fa
        .iter()
        .map(|&p| a.labels[p])
        .chain(fb.iter().map(|&p| b.labels[p]))
        .collect();
    Ok(LabeledTensor { labels, values: out })
}

/// Identity tensor with respect to `sigma`: labels `sigma ++ sigma`, whose
/// first-block by second-block matricization is the identity matrix.
pub fn identity(sigma: &[Var]) -> Result<LabeledTensor> {
    if sigma.is_empty() {
        return Err(Error::Malformed("identity over an empty label set".into()));
    }
    let n = num_states(sigma);
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
    }
    let mut labels = sigma.to_vec();
    labels.extend_from_slice(sigma);
    LabeledTensor::new(labels, values)
}

/// Inverse of `f` with respect to the modes `omega`.
///
/// The remaining modes form the block `sigma`. The result carries labels
/// `omega ++ sigma` and satisfies `multiply(f, inv, omega) ≅ identity(sigma)`.
/// Computed as the right pseudo-inverse of the `sigma x omega` matricization;
/// fails if that matrix does not have full row rank at relative cutoff `rcond`.
pub fn invert(f: &LabeledTensor, omega: &[Var], rcond: f64) -> Result<LabeledTensor> {
    let pos = f.select_modes(omega)?;
    let sigma_pos: Vec<usize> = (0..f.order()).filter(|p| !pos.contains(p)).collect();
    let sigma: Vec<Var> = sigma_pos.iter().map(|&p| f.labels[p]).collect();
    let omega_labels: Vec<Var> = pos.iter().map(|&p| f.labels[p]).collect();
    let perm: Vec<usize> = sigma_pos.iter().chain(&pos).copied().collect();
    let vals = f.permute(&perm).values;
    let m = DMatrix::from_row_slice(num_states(&sigma), num_states(&omega_labels), &vals);
    let g = linalg::right_pinv(&m, rcond)?;
    LabeledTensor::from_matrix(omega_labels, sigma, &g)
}

/// Diagonal embedding: a variable with multiplicity `d` is replicated over
/// `d` adjacent modes with δ structure. Variables absent from the map keep a
/// single mode.
pub fn diag_embed(base: &LabeledTensor, multiplicities: &[(Var, usize)]) -> Result<LabeledTensor> {
    for (v, d) in multiplicities {
        if *d == 0 {
            return Err(Error::InvalidMultiplicity(v.to_string()));
        }
        match base.count(v.id) {
            1 => {}
            0 => return Err(Error::MissingLabel(v.to_string())),
            _ => {
                return Err(Error::Malformed(format!(
                    "{v} labels more than one mode of the base tensor"
                )))
            }
        }
    }
    let reps: Vec<usize> = base
        .labels
        .iter()
        .map(|l| {
            multiplicities
                .iter()
                .find(|(v, _)| v.id == l.id)
                .map_or(1, |(_, d)| *d)
        })
        .collect();
    let mut labels = Vec::new();
    for (l, &d) in base.labels.iter().zip(&reps) {
        labels.extend(std::iter::repeat_n(*l, d));
    }
    let out_strides = strides_of(&labels.iter().map(|v| v.card).collect::<Vec<_>>());
    // stride of the diagonal walk for each base mode
    let mut diag_strides = Vec::with_capacity(reps.len());
    let mut pos = 0;
    for &d in &reps {
        diag_strides.push(out_strides[pos..pos + d].iter().sum::<usize>());
        pos += d;
    }
    let mut values = vec![0.0; num_states(&labels)];
    let dims = base.dims();
    let mut idx = vec![0usize; dims.len()];
    for &v in &base.values {
        let off: usize = idx.iter().zip(&diag_strides).map(|(i, s)| i * s).sum();
        values[off] = v;
        increment(&mut idx, &dims);
    }
    LabeledTensor::new(labels, values)
}

/// Slices every occurrence of each assigned variable at its state index.
pub fn fix_index(t: &LabeledTensor, assignment: &[(Var, usize)]) -> Result<LabeledTensor> {
    let mut fixed: Vec<Option<usize>> = vec![None; t.order()];
    for &(v, state) in assignment {
        if t.count(v.id) == 0 {
            return Err(Error::UnknownVariable(v.to_string()));
        }
        for (p, l) in t.labels.iter().enumerate() {
            if l.id != v.id {
                continue;
            }
            if state >= l.card {
                return Err(Error::IndexOutOfRange {
                    label: v.to_string(),
                    index: state,
                    cardinality: l.card,
                });
            }
            if let Some(prev) = fixed[p] {
                if prev != state {
                    return Err(Error::Malformed(format!("{v} assigned twice")));
                }
            }
            fixed[p] = Some(state);
        }
    }
    let strides = t.strides();
    let base: usize = fixed
        .iter()
        .zip(&strides)
        .filter_map(|(f, s)| f.map(|i| i * s))
        .sum();
    let free: Vec<usize> = (0..t.order()).filter(|&p| fixed[p].is_none()).collect();
    let dims: Vec<usize> = free.iter().map(|&p| t.labels[p].card).collect();
    let fstr: Vec<usize> = free.iter().map(|&p| strides[p]).collect();
    Ok(LabeledTensor {
        labels: free.iter().map(|&p| t.labels[p]).collect(),
        values: gather(&t.values, &dims, &fstr, base),
    })
}

/// Stable permutation sorting modes by variable id (occurrence order kept).
fn canonical_perm(t: &LabeledTensor) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..t.order()).collect();
    perm.sort_by_key(|&p| (t.labels[p].id, t.labels[p].card));
    perm
}

const MAX_DUPLICATE_PERMUTATIONS: usize = 40_320;

/// Label-aware equivalence: equal label multisets and entries equal within
/// `tol` under some label-aligned mode permutation. Modes are first aligned by
/// canonical sorting; copies of a duplicated variable are then also tried in
/// every relative order.
pub fn equivalent(a: &LabeledTensor, b: &LabeledTensor, tol: f64) -> bool {
    if a.order() != b.order() {
        return false;
    }
    let ca = a.permute(&canonical_perm(a));
    let cb = b.permute(&canonical_perm(b));
    if ca.labels != cb.labels {
        return false;
    }
    let close = |x: &LabeledTensor| x.max_abs_diff(&ca) <= tol;
    if close(&cb) {
        return true;
    }
    // duplicate groups as (start, len) in canonical order
    let mut groups = Vec::new();
    let mut s = 0;
    while s < cb.order() {
        let mut e = s + 1;
        while e < cb.order() && cb.labels[e].id == cb.labels[s].id {
            e += 1;
        }
        if e - s > 1 {
            groups.push((s, e - s));
        }
        s = e;
    }
    if groups.is_empty() {
        return false;
    }
    let total: usize = groups
        .iter()
        .map(|&(_, n)| (1..=n).product::<usize>())
        .product();
    if total > MAX_DUPLICATE_PERMUTATIONS {
        return false;
    }
    let group_perms: Vec<Vec<Vec<usize>>> = groups.iter().map(|&(_, n)| permutations(n)).collect();
    let mut choice = vec![0usize; groups.len()];
    let radix: Vec<usize> = group_perms.iter().map(|g| g.len()).collect();
    loop {
        let mut perm: Vec<usize> = (0..cb.order()).collect();
        for (g, &(start, _)) in groups.iter().enumerate() {
            for (k, &q) in group_perms[g][choice[g]].iter().enumerate() {
                perm[start + k] = start + q;
            }
        }
        if close(&cb.permute(&perm)) {
            return true;
        }
        if !increment(&mut choice, &radix) {
            return false;
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Top-`rank` left singular vectors of the `row_labels x rest` matricization,
/// returned as a tensor labeled `row_labels ++ [projected]`.
pub fn svd_projector(
    t: &LabeledTensor,
    row_labels: &[Var],
    rank: usize,
    projected: Var,
) -> Result<LabeledTensor> {
    let mat = t.matricize(row_labels)?;
    let (r, c) = mat.matrix.shape();
    if rank == 0 || rank > r.min(c) {
        return Err(Error::RankTooLarge { rank, rows: r, cols: c });
    }
    if projected.card != rank {
        return Err(Error::Malformed(format!(
            "projected label cardinality {} differs from rank {rank}",
            projected.card
        )));
    }
    let dec = linalg::svd(&mat.matrix);
    let u = dec.u.columns(0, rank).into_owned();
    LabeledTensor::from_matrix(mat.row_labels, vec![projected], &u)
}

/// Pointwise product of factors whose shared variables are identified
/// (each factor labels a variable at most once), summed down to `keep`.
///
/// This is plain einsum over distinct labels, used for marginals and
/// moment computation; the result is labeled exactly `keep`.
pub fn sum_product(factors: &[&LabeledTensor], keep: &[Var]) -> Result<LabeledTensor> {
    let mut union: Vec<Var> = Vec::new();
    for f in factors {
        for (k, l) in f.labels.iter().enumerate() {
            if f.labels[..k].iter().any(|m| m.id == l.id) {
                return Err(Error::Malformed(format!("{l} labels two modes of one factor")));
            }
            match union.iter().find(|u| u.id == l.id) {
                Some(u) if u.card != l.card => {
                    return Err(Error::DimensionMismatch {
                        label: l.to_string(),
                        left: u.card,
                        right: l.card,
                    })
                }
                Some(_) => {}
                None => union.push(*l),
            }
        }
    }
    for (k, v) in keep.iter().enumerate() {
        if keep[..k].iter().any(|w| w.id == v.id) {
            return Err(Error::Malformed(format!("{v} kept twice")));
        }
        if !union.contains(v) {
            return Err(Error::MissingLabel(v.to_string()));
        }
    }
    // kept variables lead, so the output offset is the flat index / inner size
    let mut order: Vec<Var> = keep.to_vec();
    order.extend(union.iter().filter(|u| !keep.contains(u)));
    let dims: Vec<usize> = order.iter().map(|v| v.card).collect();
    let inner: usize = dims[keep.len()..].iter().product();
    let fstrides: Vec<Vec<usize>> = factors
        .iter()
        .map(|f| {
            let s = f.strides();
            order
                .iter()
                .map(|v| f.labels.iter().position(|l| l.id == v.id).map_or(0, |p| s[p]))
                .collect()
        })
        .collect();
    let mut out = vec![0.0; num_states(keep)];
    let mut offs = vec![0usize; factors.len()];
    let mut idx = vec![0usize; dims.len()];
    let total = num_states(&order);
    for flat in 0..total {
        let mut p = 1.0;
        for (f, &o) in factors.iter().zip(&offs) {
            p *= f.values[o];
            if p == 0.0 {
                break;
            }
        }
        out[flat / inner] += p;
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            for (o, s) in offs.iter_mut().zip(&fstrides) {
                *o += s[k];
            }
            if idx[k] < dims[k] {
                break;
            }
            for (o, s) in offs.iter_mut().zip(&fstrides) {
                *o -= s[k] * dims[k];
            }
            idx[k] = 0;
        }
    }
    LabeledTensor::new(keep.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const X: Var = Var::new(0, 2);
    const Y: Var = Var::new(1, 2);

    /// Independent oracle: loop over every pair of entries and accumulate
    /// those whose contracted indices agree.
    fn nested_loop_multiply(a: &LabeledTensor, b: &LabeledTensor, sigma: &[Var]) -> LabeledTensor {
        let pa = a.select_modes(sigma).unwrap();
        let pb = b.select_modes(sigma).unwrap();
        let fa: Vec<usize> = (0..a.order()).filter(|p| !pa.contains(p)).collect();
        let fb: Vec<usize> = (0..b.order()).filter(|p| !pb.contains(p)).collect();
        let labels: Vec<Var> = fa
            .iter()
            .map(|&p| a.labels()[p])
            .chain(fb.iter().map(|&p| b.labels()[p]))
            .collect();
        let mut out = LabeledTensor::zeros(labels);
        let ostr = out.strides();
        let (da, db) = (a.dims(), b.dims());
        let mut ia = vec![0; a.order()];
        for x in a.values() {
            let mut ib = vec![0; b.order()];
            for y in b.values() {
                if pa.iter().zip(&pb).all(|(&p, &q)| ia[p] == ib[q]) {
                    let oi: Vec<usize> = fa.iter().map(|&p| ia[p]).chain(fb.iter().map(|&q| ib[q])).collect();
                    let off: usize = oi.iter().zip(&ostr).map(|(i, s)| i * s).sum();
                    out.values_mut()[off] += x * y;
                }
                increment(&mut ib, &db);
            }
            increment(&mut ia, &da);
        }
        out
    }

    fn arb_tensor(max_order: usize) -> impl Strategy<Value = LabeledTensor> {
        // labels drawn from 4 variables, duplicates allowed
        const CARDS: [usize; 4] = [2, 3, 1, 4];
        (1..=max_order)
            .prop_flat_map(|order| proptest::collection::vec(0u32..4, order))
            .prop_flat_map(|ids| {
                let labels: Vec<Var> = ids.iter().map(|&i| Var::new(i, CARDS[i as usize])).collect();
                let n = num_states(&labels);
                proptest::collection::vec(-1.0f64..1.0, n)
                    .prop_map(move |vals| LabeledTensor::new(labels.clone(), vals).unwrap())
            })
    }

    #[test]
    fn sum_product_matches_pairwise_contraction() {
        let a = LabeledTensor::from_fn(vec![X, Y], |i| (1 + i[0] * 2 + i[1]) as f64);
        let b = LabeledTensor::from_fn(vec![Y, Var::new(7, 3)], |i| (i[0] + 3 * i[1]) as f64 * 0.5);
        let z = Var::new(7, 3);
        let got = sum_product(&[&a, &b], &[z, X]).unwrap();
        let want = multiply(&a, &b, &[Y]).unwrap();
        assert!(equivalent(&got, &want, 1e-12));
        // pointwise product keeps the shared variable
        let kept = sum_product(&[&a, &b], &[X, Y, z]).unwrap();
        assert_eq!(kept.get(&[1, 1, 2]), a.get(&[1, 1]) * b.get(&[1, 2]));
        assert!(sum_product(&[&a], &[z]).is_err());
    }

    #[test]
    fn identity_leaves_vector_unchanged() {
        let a = LabeledTensor::new(vec![X], vec![0.3, 0.7]).unwrap();
        let i = identity(&[X]).unwrap();
        let r = multiply(&a, &i, &[X]).unwrap();
        assert!(equivalent(&r, &a, 0.0));
    }

    #[test]
    fn contract_rows_of_matrix() {
        let a = LabeledTensor::new(vec![X, Y], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = LabeledTensor::new(vec![X], vec![1.0, 1.0]).unwrap();
        let r = multiply(&a, &b, &[X]).unwrap();
        let expected = nested_loop_multiply(&a, &b, &[X]);
        assert_eq!(r.labels(), &[Y]);
        assert_eq!(r.values(), &[4.0, 6.0]);
        assert_eq!(r, expected);
    }

    #[test]
    fn multiply_errors() {
        let a = LabeledTensor::new(vec![X], vec![1.0, 1.0]).unwrap();
        let b = LabeledTensor::new(vec![Y], vec![1.0, 1.0]).unwrap();
        assert!(matches!(multiply(&a, &b, &[X]), Err(Error::MissingLabel(_))));
        let z3 = Var::new(0, 3);
        let c = LabeledTensor::filled(vec![z3], 1.0);
        assert!(matches!(
            multiply(&a, &c, &[X]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            multiply(&a, &a, &[X, X]),
            Err(Error::MultiplicityExceeded { requested: 2, available: 1, .. })
        ));
    }

    #[test]
    fn identity_matricizes_to_identity_matrix() {
        let i = identity(&[X]).unwrap();
        assert_eq!(i.labels(), &[X, X]);
        assert_eq!(i.values(), &[1.0, 0.0, 0.0, 1.0]);

        let y3 = Var::new(1, 3);
        let i2 = identity(&[X, y3]).unwrap();
        assert_eq!(i2.order(), 4);
        let m = i2.matricize(&[X, y3]).unwrap().matrix;
        assert_eq!(m, DMatrix::identity(6, 6));
    }

    #[test]
    fn invert_diagonal() {
        let f = LabeledTensor::new(vec![X, Y], vec![0.5, 0.0, 0.0, 0.25]).unwrap();
        let inv = invert(&f, &[Y], linalg::DEFAULT_RCOND).unwrap();
        assert_eq!(inv.labels(), &[Y, X]);
        let expected = LabeledTensor::new(vec![Y, X], vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        assert!(inv.max_abs_diff(&expected) < 1e-12);
        let prod = multiply(&f, &inv, &[Y]).unwrap();
        assert!(equivalent(&prod, &identity(&[X]).unwrap(), 1e-12));
    }

    #[test]
    fn identity_is_self_inverse() {
        let i = identity(&[X]).unwrap();
        let inv = invert(&i, &[X], linalg::DEFAULT_RCOND).unwrap();
        assert!(equivalent(&inv, &i, 1e-12));
    }

    #[test]
    fn invert_random_full_rank_matches_matrix_inverse() {
        // 4x4 matricization over two binary variables on each side
        let z = Var::new(2, 2);
        let w = Var::new(3, 2);
        let vals: Vec<f64> = (0..16).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 + if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
        let f = LabeledTensor::new(vec![X, Y, z, w], vals.clone()).unwrap();
        let inv = invert(&f, &[z, w], linalg::DEFAULT_RCOND).unwrap();
        let m = DMatrix::from_row_slice(4, 4, &vals);
        let oracle = m.try_inverse().unwrap();
        let got = inv.matricize(&[z, w]).unwrap().matrix;
        assert!((got - oracle).abs().max() < 1e-10);
    }

    #[test]
    fn invert_reports_rank_deficiency() {
        let f = LabeledTensor::new(vec![X, Y], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        match invert(&f, &[Y], linalg::DEFAULT_RCOND) {
            Err(Error::RankDeficient { required: 2, singular_values }) => {
                assert!(singular_values[1] < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn diag_embed_vector() {
        let base = LabeledTensor::new(vec![X], vec![0.4, 0.6]).unwrap();
        let d = diag_embed(&base, &[(X, 2)]).unwrap();
        assert_eq!(d.labels(), &[X, X]);
        assert_eq!(d.values(), &[0.4, 0.0, 0.0, 0.6]);
        assert_eq!(diag_embed(&base, &[(X, 1)]).unwrap(), base);
        assert_eq!(diag_embed(&base, &[]).unwrap(), base);
        assert!(matches!(diag_embed(&base, &[(X, 0)]), Err(Error::InvalidMultiplicity(_))));
        assert!(matches!(diag_embed(&base, &[(Y, 2)]), Err(Error::MissingLabel(_))));
    }

    #[test]
    fn diag_embed_conditional_follows_delta_formula() {
        let y3 = Var::new(1, 3);
        let base = LabeledTensor::new(vec![X, y3], vec![0.1, 0.5, 0.3, 0.9, 0.5, 0.7]).unwrap();
        let d = diag_embed(&base, &[(X, 2), (y3, 2)]).unwrap();
        assert_eq!(d.labels(), &[X, X, y3, y3]);
        for i1 in 0..2 {
            for i2 in 0..2 {
                for j1 in 0..3 {
                    for j2 in 0..3 {
                        let delta = (i1 == i2 && j1 == j2) as u8 as f64;
                        assert_eq!(d.get(&[i1, i2, j1, j2]), delta * base.get(&[i1, j1]));
                    }
                }
            }
        }
    }

    #[test]
    fn fix_index_slices() {
        let p = LabeledTensor::new(vec![X, Y], vec![0.2, 0.7, 0.8, 0.3]).unwrap();
        let row = fix_index(&p, &[(X, 1)]).unwrap();
        assert_eq!(row.labels(), &[Y]);
        assert_eq!(row.values(), &[0.8, 0.3]);

        let d = diag_embed(&LabeledTensor::new(vec![X], vec![0.4, 0.6]).unwrap(), &[(X, 2)]).unwrap();
        assert_eq!(fix_index(&d, &[(X, 1)]).unwrap().as_scalar(), Some(0.6));

        assert!(matches!(fix_index(&p, &[(X, 2)]), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(fix_index(&p, &[(Var::new(9, 2), 0)]), Err(Error::UnknownVariable(_))));
    }

    #[test]
    fn equivalence_of_transpose_and_label_mismatch() {
        let a = LabeledTensor::new(vec![X, Y], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let at = a.permute(&[1, 0]);
        assert!(equivalent(&a, &at, 0.0));
        let b = LabeledTensor::new(vec![X, X], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(!equivalent(&a, &b, 1e9));
        // duplicated copies may swap among themselves
        assert!(equivalent(&b, &b.permute(&[1, 0]), 0.0));
    }

    #[test]
    fn svd_projector_identity_is_orthonormal() {
        let i = identity(&[X]).unwrap();
        let p = Var::new(100, 2);
        let u = svd_projector(&i, &[X], 2, p).unwrap();
        let um = u.matricize(&[X]).unwrap().matrix;
        assert!((um.transpose() * &um - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        assert!(matches!(
            svd_projector(&i, &[X], 3, Var::new(100, 3)),
            Err(Error::RankTooLarge { .. })
        ));
    }

    #[test]
    fn full_rank_projection_reconstructs() {
        let z = Var::new(2, 3);
        let vals = vec![0.3, 0.1, 0.2, 0.05, 0.4, 0.9, 0.7, 0.2, 0.1];
        let t = LabeledTensor::new(vec![Var::new(0, 3), z], vals).unwrap();
        let u = svd_projector(&t, &[Var::new(0, 3)], 3, Var::new(100, 3)).unwrap();
        let um = u.matricize(&[Var::new(0, 3)]).unwrap().matrix;
        let m = t.matricize(&[Var::new(0, 3)]).unwrap().matrix;
        let recon = &um * um.transpose() * &m;
        assert!((recon - m).abs().max() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn multiply_matches_nested_loop(a in arb_tensor(4), b in arb_tensor(3)) {
            // contract every variable that both carry, once
            let mut sigma: Vec<Var> = Vec::new();
            for l in a.labels() {
                if b.count(l.id) > 0 && !sigma.iter().any(|s| s.id == l.id) && b.labels().iter().any(|x| x == l) {
                    sigma.push(*l);
                }
            }
            let fast = multiply(&a, &b, &sigma).unwrap();
            let slow = nested_loop_multiply(&a, &b, &sigma);
            prop_assert!(fast.max_abs_diff(&slow) <= 1e-12);
            prop_assert_eq!(fast.labels(), slow.labels());
        }

        #[test]
        fn multiply_by_identity_is_neutral(a in arb_tensor(5)) {
            let mut sigma: Vec<Var> = Vec::new();
            for l in a.labels() {
                if !sigma.iter().any(|s| s.id == l.id) { sigma.push(*l); }
            }
            let r = multiply(&a, &identity(&sigma).unwrap(), &sigma).unwrap();
            prop_assert!(equivalent(&r, &a, 1e-12));
        }

        #[test]
        fn multiply_is_symmetric(a in arb_tensor(3), b in arb_tensor(3)) {
            let sigma: Vec<Var> = a.labels().iter().filter(|l| b.labels().contains(l)).take(1).copied().collect();
            let ab = multiply(&a, &b, &sigma).unwrap();
            let ba = multiply(&b, &a, &sigma).unwrap();
            prop_assert!(equivalent(&ab, &ba, 1e-12));
        }

        #[test]
        fn equivalent_under_random_permutation(a in arb_tensor(5), seed in any::<u64>()) {
            let mut perm: Vec<usize> = (0..a.order()).collect();
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert!(equivalent(&a, &a.permute(&perm), 0.0));
        }

        #[test]
        fn diag_embed_then_sum_one_copy_recovers_base(vals in proptest::collection::vec(0.0f64..1.0, 6), d in 2usize..4) {
            let y3 = Var::new(1, 3);
            let base = LabeledTensor::new(vec![X, y3], vals).unwrap();
            let e = diag_embed(&base, &[(X, d)]).unwrap();
            // contracting any d-1 copies with ones recovers the base
            let ones: Vec<Var> = std::iter::repeat_n(X, d - 1).collect();
            let r = e.sum_out(&ones).unwrap();
            prop_assert!(equivalent(&r, &base, 1e-12));
        }

        #[test]
        fn contracting_any_duplicate_copy_agrees(vals in proptest::collection::vec(-1.0f64..1.0, 2), w in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let y3 = Var::new(1, 3);
            let e = diag_embed(&LabeledTensor::new(vec![X], vals).unwrap(), &[(X, 3)]).unwrap();
            let other = LabeledTensor::new(vec![X, y3], w).unwrap();
            let lowest = multiply(&e, &other, &[X]).unwrap();
            // move the highest copy to the front so it gets contracted instead
            let moved = e.permute(&[2, 0, 1]);
            let highest = multiply(&moved, &other, &[X]).unwrap();
            prop_assert!(equivalent(&lowest, &highest, 1e-12));
        }
    }
}
