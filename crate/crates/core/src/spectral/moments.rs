//! Joint moments of observed variables, from samples or from a known model.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::LatentJTModel;
use crate::tensor::{num_states, LabeledTensor, Var};

/// Source of joint probability tables over observed variables.
pub trait MomentSource: Sync {
    fn moment(&self, vars: &[Var]) -> Result<LabeledTensor>;
}

/// Normalized co-occurrence counts.
pub struct EmpiricalMoments<'a> {
    data: &'a Dataset,
}

impl<'a> EmpiricalMoments<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        EmpiricalMoments { data }
    }
}

impl MomentSource for EmpiricalMoments<'_> {
    fn moment(&self, vars: &[Var]) -> Result<LabeledTensor> {
        estimate_moment(self.data, vars)
    }
}

/// Exact marginals of a ground-truth model; refuses hidden variables.
pub struct PopulationMoments<'a> {
    model: &'a LatentJTModel,
}

impl<'a> PopulationMoments<'a> {
    pub fn new(model: &'a LatentJTModel) -> Self {
        PopulationMoments { model }
    }
}

impl MomentSource for PopulationMoments<'_> {
    fn moment(&self, vars: &[Var]) -> Result<LabeledTensor> {
        let dom = self.model.domain();
        for v in vars {
            if v.id as usize >= dom.len() || !dom.is_observed(v.id) {
                return Err(Error::UnknownVariable(format!("{v} is not an observed variable")));
            }
        }
        self.model.marginal(vars)
    }
}

/// Empirical joint distribution of `vars` over the rows of `data`.
pub fn estimate_moment(data: &Dataset, vars: &[Var]) -> Result<LabeledTensor> {
    if data.is_empty() {
        return Err(Error::EmptySamples);
    }
    let cols: Vec<usize> = vars
        .iter()
        .map(|v| data.column(*v).ok_or_else(|| Error::UnknownVariable(v.to_string())))
        .collect::<Result<_>>()?;
    let mut strides = vec![1usize; vars.len()];
    for k in (0..vars.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * vars[k + 1].card;
    }
    let mut counts = vec![0u64; num_states(vars)];
    for row in data.rows() {
        let off: usize = cols.iter().zip(&strides).map(|(&c, s)| row[c] * s).sum();
        counts[off] += 1;
    }
    let n = data.len() as f64;
    LabeledTensor::new(vars.to_vec(), counts.into_iter().map(|c| c as f64 / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_is_a_point_mass() {
        let (a, b) = (Var::new(0, 2), Var::new(1, 2));
        let d = Dataset::new(vec![a, b], &[vec![0, 0]]).unwrap();
        let m = estimate_moment(&d, &[a, b]).unwrap();
        assert_eq!(m.values(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empirical_moment_sums_to_one() {
        let (a, b) = (Var::new(0, 3), Var::new(1, 2));
        let d = Dataset::new(vec![a, b], &[vec![0, 1], vec![2, 0], vec![2, 1]]).unwrap();
        let m = estimate_moment(&d, &[b, a]).unwrap();
        assert!((m.sum() - 1.0).abs() < 1e-15);
        assert!((m.get(&[1, 2]) - 1.0 / 3.0).abs() < 1e-15);
    }
}
