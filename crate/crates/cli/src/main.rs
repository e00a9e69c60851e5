use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use latent_jt::em::EMConfig;
use latent_jt::experiments::{
    self, classify_sequences, gen_model, gen_structure, parse_splice, run_benchmark, sequence_dataset,
    BenchmarkConfig, Family, FamilyParams, Fitted, Learner,
};
use latent_jt::io::{self, ModelFile};
use latent_jt::spectral::{self, diagnostics, plan_observed_sets};
use latent_jt::structure::validate;
use latent_jt::Dataset;

#[derive(Parser)]
#[command(name = "ljt", version, about = "Spectral learning for latent junction trees")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "LJT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a structure family, optionally with random parameters.
    Gen(GenArgs),
    /// Draw observed samples from a parameterized model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to samples.
    Train {
        /// Model or structure document; potentials, if any, are ignored.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value = "spectral")]
        learner: Learner,
        #[command(flatten)]
        em: EmArgs,
        /// Spectral parameters (JSON) or a model document for the EM learners.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the probability of every sample row.
    Infer {
        /// Learned spectral parameters.
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        params: Option<PathBuf>,
        /// Parameterized model document (exact inference).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Structure the samples refer to, when using `--params`.
        #[arg(long)]
        structure: Option<PathBuf>,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Run the synthetic evaluation protocol from a JSON config.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label sequences with per-class models.
    Classify(ClassifyArgs),
    /// Structural checks and spectral conditioning of a model.
    Diagnostics {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    family: Family,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    k_h: Option<usize>,
    #[arg(long)]
    k_o: Option<usize>,
    /// Parameter seed; without it only the structure is written.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmArgs {
    /// JSON file with EM settings; the flags below override it.
    #[arg(long)]
    em_config: Option<PathBuf>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    em_seed: Option<u64>,
}

impl EmArgs {
    fn config(&self) -> Result<EMConfig> {
        let mut c = match &self.em_config {
            Some(p) => serde_json::from_str(&read(p)?)?,
            None => EMConfig::default(),
        };
        if let Some(r) = self.restarts {
            c.restarts = r;
        }
        if let Some(m) = self.max_iterations {
            c.max_iterations = m;
        }
        if let Some(s) = self.em_seed {
            c.seed = s;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct ClassifyArgs {
    /// Structure for the sequences (defaults to a second-order chain of the
    /// sequence length with 4 symbols).
    #[arg(long)]
    model: Option<PathBuf>,
    /// `CLASS=samples.csv`, one per class, in class order.
    #[arg(long = "train")]
    train: Vec<String>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// True class names of the test rows, one per line.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Splice-format file: split per class into train and test.
    #[arg(long, conflicts_with_all = ["train", "test"])]
    splice: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value = "spectral")]
    learner: Learner,
    #[arg(long, default_value_t = 2)]
    k_h: usize,
    #[command(flatten)]
    em: EmArgs,
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.cmd {
        Cmd::Gen(a) => {
            let params = FamilyParams {
                size: a.size,
                k_h: a.k_h,
                k_o: a.k_o,
            };
            let (spec, tree) = gen_structure(a.family, params)?;
            let doc = match a.seed {
                Some(seed) => ModelFile::from_model(&gen_model(a.family, &tree, seed)?),
                None => ModelFile::from_spec(&spec),
            };
            doc.save(&a.out)?;
            eprintln!("{}: {} cliques, treewidth {}", a.family, tree.len(), tree.treewidth());
        }
        Cmd::Sample { model, n, seed, out } => {
            let m = ModelFile::load(&model)?.model()?;
            io::save_samples(&out, m.domain(), &m.sample(n, seed))?;
        }
        Cmd::Train {
            model,
            samples,
            learner,
            em,
            out,
        } => {
            let tree = ModelFile::load(&model)?.tree()?;
            let data = io::load_samples(&samples, tree.domain())?;
            let (fit, diag, secs) = experiments::train(learner, &tree, None, &data, &em.config()?)?;
            match fit {
                Fitted::Spectral(p) => io::save_params(&out, &p)?,
                Fitted::Model(m) => ModelFile::from_model(&m).save(&out)?,
            }
            eprintln!("{learner}: trained on {} samples in {secs:.3}s", data.len());
            if let Some(ll) = diag.log_likelihood {
                eprintln!("log-likelihood {ll:.6} ({})", diag.selected_run.unwrap_or_default());
            }
        }
        Cmd::Infer {
            params,
            model,
            structure,
            samples,
        } => infer(params, model, structure, &samples)?,
        Cmd::Benchmark { config, out } => {
            let mut cfg: BenchmarkConfig = serde_json::from_str(&read(&config)?)?;
            if out.is_some() {
                cfg.output = out;
            }
            let report = run_benchmark(&cfg)?;
            println!("N,learner,median_error,mean_time_seconds,failures");
            for s in &report.series {
                let e = s.median_error.map_or(String::from("NA"), |e| format!("{e:.6e}"));
                println!("{},{},{e},{:.6e},{}", s.n, s.learner, s.mean_time_seconds, s.failures);
            }
        }
        Cmd::Classify(a) => classify(a)?,
        Cmd::Diagnostics { model, epsilon, delta } => {
            let m = ModelFile::load(&model)?.model()?;
            let violations: Vec<String> = validate(m.tree()).iter().map(|v| v.to_string()).collect();
            let mut out = serde_json::json!({ "violations": violations });
            match plan_observed_sets(m.tree()).and_then(|p| diagnostics(&m, &p)) {
                Ok(d) => {
                    out["sample_bound"] = serde_json::json!(d.sample_bound(epsilon, delta));
                    out["diagnostics"] = serde_json::to_value(&d)?;
                }
                Err(e) => out["error"] = serde_json::json!(e.to_string()),
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}

fn infer(params: Option<PathBuf>, model: Option<PathBuf>, structure: Option<PathBuf>, samples: &Path) -> Result<()> {
    println!("row,estimate,clamped");
    if let Some(m) = model {
        let m = ModelFile::load(&m)?.model()?;
        let data = io::load_samples(samples, m.domain())?;
        for (i, p) in Fitted::Model(m).score(&data)?.0.iter().enumerate() {
            println!("{i},{p:e},{p:e}");
        }
        return Ok(());
    }
    let params = io::load_params(params.as_deref().expect("clap enforces one source"))?;
    let Some(s) = structure else {
        bail!("--params needs --structure to name the sample columns");
    };
    let tree = ModelFile::load(&s)?.tree()?;
    let data = io::load_samples(samples, tree.domain())?;
    for (i, e) in spectral::infer_dataset(&params, &data)?.iter().enumerate() {
        println!("{i},{:e},{:e}", e.raw, e.clamped);
    }
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let em = a.em.config()?;
    let (names, train_seqs, test_seqs, truth): (Vec<String>, Vec<Vec<Vec<usize>>>, Vec<Vec<usize>>, Option<Vec<usize>>) =
        if let Some(path) = &a.splice {
            let (recs, skipped) = parse_splice(&read(path)?)?;
            eprintln!("{} records, {skipped} skipped for ambiguous symbols", recs.len());
            let mut by_class: BTreeMap<String, Vec<Vec<usize>>> = BTreeMap::new();
            for r in recs {
                by_class.entry(r.class).or_default().push(r.sequence);
            }
            let mut names = Vec::new();
            let mut train = Vec::new();
            let (mut test, mut truth) = (Vec::new(), Vec::new());
            for (c, (name, seqs)) in by_class.into_iter().enumerate() {
                // leading records train, the rest test
                let cut = (seqs.len() as f64 * a.train_fraction).round() as usize;
                let (tr, te) = seqs.split_at(cut.min(seqs.len()));
                train.push(tr.to_vec());
                truth.extend(std::iter::repeat_n(c, te.len()));
                test.extend(te.iter().cloned());
                names.push(name);
            }
            (names, train, test, Some(truth))
        } else {
            let Some(test) = &a.test else { bail!("--test or --splice is required") };
            if a.train.is_empty() {
                bail!("at least one --train CLASS=FILE is required");
            }
            let mut names = Vec::new();
            let mut train = Vec::new();
            for t in &a.train {
                let (name, file) = t.split_once('=').context("--train expects CLASS=FILE")?;
                names.push(name.to_string());
                train.push(rows(&read(Path::new(file))?)?);
            }
            let truth = match &a.truth {
                Some(p) => Some(
                    read(p)?
                        .lines()
                        .filter(|l| !l.trim().is_empty())
                        .map(|l| names.iter().position(|n| n == l.trim()).with_context(|| format!("unknown class {l}")))
                        .collect::<Result<Vec<_>>>()?,
                ),
                None => None,
            };
            (names, train, rows(&read(test)?)?, truth)
        };
    let len = test_seqs
        .first()
        .or_else(|| train_seqs.iter().flatten().next())
        .map(Vec::len)
        .context("no sequences")?;
    let tree = match &a.model {
        Some(p) => ModelFile::load(p)?.tree()?,
        None => {
            let params = FamilyParams {
                size: Some(len),
                k_h: Some(a.k_h),
                k_o: Some(4),
            };
            gen_structure(Family::Hmm2, params)?.1
        }
    };
    let train: Vec<Dataset> = train_seqs
        .iter()
        .map(|s| sequence_dataset(&tree, s))
        .collect::<latent_jt::Result<_>>()?;
    let test = sequence_dataset(&tree, &test_seqs)?;
    let r = classify_sequences(&tree, &train, &test, truth.as_deref(), a.learner, &em)?;
    println!("row,label");
    for (i, l) in r.labels.iter().enumerate() {
        println!("{i},{}", names[*l]);
    }
    if let Some(acc) = r.accuracy {
        eprintln!("accuracy {acc:.4}");
    }
    Ok(())
}

/// Headered CSV of state indices, columns taken in file order.
fn rows(text: &str) -> Result<Vec<Vec<usize>>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|f| f.trim().parse::<usize>().with_context(|| format!("bad state {f:?}")))
                .collect()
        })
        .collect()
}
