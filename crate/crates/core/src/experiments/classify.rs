//! Sequence classification with one latent model per class.

use serde::{Deserialize, Serialize};

use super::{train, Learner};
use crate::data::Dataset;
use crate::em::EMConfig;
use crate::error::{Error, Result};
use crate::spectral;
use crate::structure::RootedJunctionTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResult {
    /// Predicted class index per test sequence.
    pub labels: Vec<usize>,
    /// Per test sequence, the (clamped) likelihood under each class model.
    pub scores: Vec<Vec<f64>>,
    /// Fraction of correct labels when the true classes are known.
    pub accuracy: Option<f64>,
}

/// Lays sequences out as records over the tree's observed variables, in
/// id order (step `t` of a sequence goes to the `t`-th observed variable).
pub fn sequence_dataset(tree: &RootedJunctionTree, seqs: &[Vec<usize>]) -> Result<Dataset> {
    let vars = tree.domain().observed();
    if let Some(s) = seqs.iter().find(|s| s.len() != vars.len()) {
        return Err(Error::ShapeMismatch(format!(
            "sequence of length {} for a model of length {}",
            s.len(),
            vars.len()
        )));
    }
    Dataset::new(vars, seqs)
}

/// Trains one model per class on `train[c]` and labels each test record by
/// the class with the highest likelihood (lowest index on ties).
pub fn classify_sequences(
    tree: &RootedJunctionTree,
    train_sets: &[Dataset],
    test: &Dataset,
    truth: Option<&[usize]>,
    learner: Learner,
    em: &EMConfig,
) -> Result<ClassifyResult> {
    if train_sets.is_empty() {
        return Err(Error::Config("no training classes".into()));
    }
    let observed = tree.domain().observed();
    for d in train_sets.iter().chain([test]) {
        if d.vars().len() != observed.len() || !observed.iter().all(|v| d.column(*v).is_some()) {
            return Err(Error::ShapeMismatch("sequence length does not match the model".into()));
        }
    }
    if let Some(t) = truth {
        if t.len() != test.len() {
            return Err(Error::ShapeMismatch("one true class per test sequence required".into()));
        }
    }
    let plan = match learner {
        Learner::Spectral => Some(spectral::plan_observed_sets(tree)?),
        _ => None,
    };
    let per_class: Vec<Vec<f64>> = train_sets
        .iter()
        .map(|d| {
            let (fit, _, _) = train(learner, tree, plan.as_ref(), d, em)?;
            Ok(fit.score(test)?.0)
        })
        .collect::<Result<_>>()?;
    let scores: Vec<Vec<f64>> = (0..test.len())
        .map(|i| per_class.iter().map(|s| s[i]).collect())
        .collect();
    let labels: Vec<usize> = scores
        .iter()
        .map(|s| {
            let mut best = 0;
            for (c, &x) in s.iter().enumerate() {
                if x > s[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    let accuracy = truth.map(|t| {
        let hit = labels.iter().zip(t).filter(|(a, b)| a == b).count();
        hit as f64 / t.len().max(1) as f64
    });
    Ok(ClassifyResult { labels, scores, accuracy })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpliceRecord {
    pub class: String,
    pub name: String,
    /// Nucleotides as states: A, C, G, T -> 0..=3.
    pub sequence: Vec<usize>,
}

/// Parses the comma-separated `class, name, sequence` format. Records with
/// letters other than A/C/G/T (ambiguity codes) are skipped; the number
/// skipped is returned alongside.
pub fn parse_splice(text: &str) -> Result<(Vec<SpliceRecord>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected 3 fields, found {}", k + 1, fields.len())));
        }
        let seq: Option<Vec<usize>> = fields[2]
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'A' => Some(0),
                'C' => Some(1),
                'G' => Some(2),
                'T' => Some(3),
                _ => None,
            })
            .collect();
        match seq {
            Some(sequence) => out.push(SpliceRecord {
                class: fields[0].to_string(),
                name: fields[1].to_string(),
                sequence,
            }),
            None => skipped += 1,
        }
    }
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splice_lines_parse() {
        let text = "EI,  A-1,  ACGTTGCA\nN, B-2, ACGNTGCA\n\nIE , C-3 , tttt\n";
        let (recs, skipped) = parse_splice(text).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].class, "EI");
        assert_eq!(recs[0].sequence, vec![0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(recs[1].sequence, vec![3; 4]);
        assert!(parse_splice("EI,ACGT").is_err());
    }
}
