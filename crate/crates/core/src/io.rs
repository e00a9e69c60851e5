//! File formats: model documents (JSON), sample tables (CSV), learned
//! observable parameters (JSON).
//!
//! A model document names its variables and gives exactly one of `edges`
//! (undirected), `parents` (directed) or `cliques` (with optional
//! `tree_edges` between clique indices), plus an optional `root` clique and
//! optional `potentials`. Potentials are listed per node of the rooted,
//! normalized junction tree, so documents carrying them use `cliques` and
//! `tree_edges`, which [`ModelFile::from_model`] writes out.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::LatentJTModel;
use crate::spectral::ObservableParams;
use crate::structure::{
    build_junction_tree, root_and_normalize, Domain, GraphStructure, GraphicalModelSpec, RootChoice,
    RootedJunctionTree, VarDecl,
};
use crate::tensor::{LabeledTensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableEntry {
    pub name: String,
    pub cardinality: usize,
    #[serde(default)]
    pub observed: bool,
}

/// One conditional table `P(R_i | S_i)`: mode names and row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialEntry {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub variables: Vec<VariableEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[String; 2]>>,
    /// Child name -> parent names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parents: Option<BTreeMap<String, Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cliques: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potentials: Option<Vec<PotentialEntry>>,
}

impl ModelFile {
    pub fn domain(&self) -> Result<Domain> {
        Domain::new(
            self.variables
                .iter()
                .map(|v| VarDecl {
                    name: v.name.clone(),
                    cardinality: v.cardinality,
                    observed: v.observed,
                })
                .collect(),
        )
    }

    pub fn to_spec(&self) -> Result<GraphicalModelSpec> {
        let domain = self.domain()?;
        let id = |n: &str| {
            domain
                .by_name(n)
                .map(|v| v.id)
                .ok_or_else(|| Error::UnknownVariable(n.to_string()))
        };
        let given = [self.edges.is_some(), self.parents.is_some(), self.cliques.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(Error::Parse("give exactly one of `edges`, `parents`, `cliques`".into()));
        }
        if self.tree_edges.is_some() && self.cliques.is_none() {
            return Err(Error::Parse("`tree_edges` requires `cliques`".into()));
        }
        let structure = if let Some(edges) = &self.edges {
            GraphStructure::Undirected(
                edges
                    .iter()
                    .map(|[a, b]| Ok((id(a)?, id(b)?)))
                    .collect::<Result<_>>()?,
            )
        } else if let Some(parents) = &self.parents {
            let mut lists = vec![Vec::new(); domain.len()];
            for (child, ps) in parents {
                lists[id(child)? as usize] = ps.iter().map(|p| id(p)).collect::<Result<_>>()?;
            }
            GraphStructure::Directed(lists)
        } else {
            let cliques = self.cliques.as_ref().expect("checked above");
            GraphStructure::Cliques {
                cliques: cliques
                    .iter()
                    .map(|c| c.iter().map(|n| id(n)).collect::<Result<_>>())
                    .collect::<Result<_>>()?,
                tree_edges: self
                    .tree_edges
                    .as_ref()
                    .map(|es| es.iter().map(|[a, b]| (*a, *b)).collect()),
            }
        };
        Ok(GraphicalModelSpec {
            domain,
            structure,
            root: self.root,
        })
    }

    pub fn from_spec(spec: &GraphicalModelSpec) -> Self {
        let dom = &spec.domain;
        let name = |i: u32| dom.name(i).to_string();
        let mut f = ModelFile {
            variables: variables(dom),
            root: spec.root,
            ..Default::default()
        };
        match &spec.structure {
            GraphStructure::Undirected(es) => f.edges = Some(es.iter().map(|&(a, b)| [name(a), name(b)]).collect()),
            GraphStructure::Directed(ps) => {
                f.parents = Some(
                    ps.iter()
                        .enumerate()
                        .filter(|(_, p)| !p.is_empty())
                        .map(|(c, p)| (name(c as u32), p.iter().map(|&q| name(q)).collect()))
                        .collect(),
                )
            }
            GraphStructure::Cliques { cliques, tree_edges } => {
                f.cliques = Some(cliques.iter().map(|c| c.iter().map(|&i| name(i)).collect()).collect());
                f.tree_edges = tree_edges.as_ref().map(|es| es.iter().map(|&(a, b)| [a, b]).collect());
            }
        }
        f
    }

    /// The rooted, normalized junction tree of the document: `root` when
    /// given, otherwise the automatic choice.
    pub fn tree(&self) -> Result<RootedJunctionTree> {
        let spec = self.to_spec()?;
        let root = spec.root.map_or(RootChoice::Auto, RootChoice::Clique);
        root_and_normalize(&build_junction_tree(&spec)?, root)
    }

    /// The parameterized model; requires `potentials`.
    pub fn model(&self) -> Result<LatentJTModel> {
        let tree = self.tree()?;
        let pots = self
            .potentials
            .as_ref()
            .ok_or_else(|| Error::Parse("model document has no `potentials`".into()))?;
        let dom = tree.domain();
        let tables = pots
            .iter()
            .map(|p| {
                let labels: Vec<Var> = p
                    .labels
                    .iter()
                    .map(|n| dom.by_name(n).ok_or_else(|| Error::UnknownVariable(n.clone())))
                    .collect::<Result<_>>()?;
                LabeledTensor::new(labels, p.values.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        LatentJTModel::new(tree, tables)
    }

    /// Document for a parameterized model, with the tree written out clique
    /// by clique so that reading it back reproduces the same nodes.
    pub fn from_model(model: &LatentJTModel) -> Self {
        let tree = model.tree();
        let dom = tree.domain();
        ModelFile {
            variables: variables(dom),
            cliques: Some(tree.cliques().iter().map(|c| dom.names(c)).collect()),
            tree_edges: Some(tree.edges().into_iter().map(|(a, b)| [a, b]).collect()),
            root: Some(tree.root()),
            potentials: Some(
                model
                    .potentials()
                    .iter()
                    .map(|p| PotentialEntry {
                        labels: dom.names(p.labels()),
                        values: p.values().to_vec(),
                    })
                    .collect(),
            ),
            ..Default::default()
        }
    }

    pub fn read(r: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn write(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        writeln!(w)?;
        Ok(())
    }
}

fn variables(dom: &Domain) -> Vec<VariableEntry> {
    dom.decls()
        .iter()
        .map(|d| VariableEntry {
            name: d.name.clone(),
            cardinality: d.cardinality,
            observed: d.observed,
        })
        .collect()
}

/// Reads a sample table whose header names observed variables of `domain`
/// (in any order).
pub fn read_samples(r: impl Read, domain: &Domain) -> Result<Dataset> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let vars: Vec<Var> = rd
        .headers()?
        .iter()
        .map(|h| match domain.by_name(h) {
            Some(v) if domain.is_observed(v.id) => Ok(v),
            Some(_) => Err(Error::Parse(format!("column {h} is a hidden variable"))),
            None => Err(Error::UnknownVariable(h.to_string())),
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        for field in rec.iter() {
            let x = field
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("record {}: {field:?} is not a state index", k + 1)))?;
            values.push(x);
        }
    }
    Dataset::from_flat(vars, values)
}

pub fn write_samples(w: impl Write, domain: &Domain, data: &Dataset) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(domain.names(data.vars()))?;
    for row in data.rows() {
        wr.write_record(row.iter().map(|x| x.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn load_samples(path: &Path, domain: &Domain) -> Result<Dataset> {
    read_samples(std::io::BufReader::new(std::fs::File::open(path)?), domain)
}

pub fn save_samples(path: &Path, domain: &Domain, data: &Dataset) -> Result<()> {
    write_samples(std::fs::File::create(path)?, domain, data)
}

pub fn load_params(path: &Path) -> Result<ObservableParams> {
    Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
}

pub fn save_params(path: &Path, params: &ObservableParams) -> Result<()> {
    std::fs::write(path, serde_json::to_string(params)? + "\n")?;
    Ok(())
}
