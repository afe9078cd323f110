//! Prepared split directories and the experiments built from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use fewshot_rationale::data::Corpus;
use fewshot_rationale::experiment::{split_for_experiment, Experiment, ExperimentSplit};
use fewshot_rationale::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";
pub const LABELED: &str = "labeled.jsonl";
pub const UNLABELED: &str = "unlabeled.jsonl";
pub const VALIDATION: &str = "validation.jsonl";
/// Gold annotations of the unlabeled pool, kept apart for analysis only.
pub const UNLABELED_GOLD: &str = "unlabeled.gold.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub labeled: usize,
    pub unlabeled: usize,
    pub validation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub source: String,
    pub class_names: Vec<String>,
    pub n_per_class: usize,
    pub counts: Counts,
    pub labeled_per_class: Vec<usize>,
    /// SHA-256 of every written corpus file.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Fails when some class has fewer labeled candidates than requested.
pub fn require_class_counts(corpus: &Corpus, n_per_class: usize) -> Result<(), Error> {
    let mut available = vec![0; corpus.num_classes];
    for d in &corpus.documents {
        if let (Some(label), Some(_)) = (d.gold_label, &d.gold_rationale) {
            available[label] += 1;
        }
    }
    match available.iter().position(|&n| n < n_per_class) {
        Some(c) => Err(Error::ClassShortage {
            class: corpus.class_names[c].clone(),
            available: available[c],
            requested: n_per_class,
        }),
        None => Ok(()),
    }
}

/// Writes the split files and manifest; returns the manifest and its hash.
pub fn write_split(
    dir: &Path,
    corpus: &Corpus,
    n_per_class: usize,
    num_validation: usize,
    seed: u64,
    source: String,
) -> Result<(Manifest, String)> {
    require_class_counts(corpus, n_per_class)?;
    let split = if num_validation == 0 {
        let few = fewshot_rationale::data::sample_few_shot(corpus, n_per_class, seed)?;
        ExperimentSplit {
            validation: corpus.with_documents(Vec::new()),
            unlabeled_gold: few.sealed_gold,
            labeled: few.labeled,
            unlabeled: few.unlabeled,
            seed,
        }
    } else {
        split_for_experiment(corpus, n_per_class, num_validation, seed)?
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = BTreeMap::new();
    let gold = split.unlabeled_gold.unseal(&split.unlabeled);
    for (name, c) in [
        (LABELED, &split.labeled),
        (UNLABELED, &split.unlabeled),
        (VALIDATION, &split.validation),
        (UNLABELED_GOLD, &gold),
    ] {
        let path = dir.join(name);
        c.write_jsonl(&path)?;
        files.insert(name.to_string(), sha256_hex(&fs::read(&path)?));
    }
    let manifest = Manifest {
        seed,
        source,
        class_names: corpus.class_names.clone(),
        n_per_class,
        counts: Counts {
            labeled: split.labeled.len(),
            unlabeled: split.unlabeled.len(),
            validation: split.validation.len(),
        },
        labeled_per_class: split.labeled.label_histogram(),
        files,
    };
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST), &bytes).with_context(|| format!("writing {}", dir.join(MANIFEST).display()))?;
    Ok((manifest, sha256_hex(&bytes)))
}

pub struct LoadedSplit {
    pub hash: String,
    pub labeled: Corpus,
    pub unlabeled: Corpus,
    pub validation: Corpus,
}

pub fn read_manifest(dir: &Path) -> Result<(Manifest, String)> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    Ok((manifest, sha256_hex(&bytes)))
}

pub fn load_split(dir: &Path) -> Result<LoadedSplit> {
    let (manifest, hash) = read_manifest(dir)?;
    let read = |name: &str| -> Result<Corpus> {
        let path = dir.join(name);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        if manifest.files.get(name) != Some(&sha256_hex(&bytes)) {
            anyhow::bail!("{} does not match its manifest checksum", path.display());
        }
        Ok(Corpus::read_jsonl(&path, manifest.class_names.clone())?)
    };
    Ok(LoadedSplit {
        labeled: read(LABELED)?,
        unlabeled: read(UNLABELED)?,
        validation: read(VALIDATION)?,
        hash,
    })
}

/// An experiment plus the fingerprint of the data it was built from.
pub struct Built {
    pub experiment: Experiment,
    /// Manifest hash for prepared splits.
    pub data_hash: Option<String>,
}

/// Builds the experiment named by `cfg`; synthetic data is generated with
/// `seed`.
pub fn build_experiment(cfg: &RunConfig, seed: u64) -> Result<Built> {
    cfg.validate()?;
    let encoder = cfg.encoder.to_config();
    let max_len = cfg.max_len();
    if let Some(bench) = &cfg.data.synthetic {
        let s = bench.split(seed)?;
        let experiment = Experiment::new(&s.labeled, &s.unlabeled, &s.validation, &encoder, max_len)?;
        return Ok(Built {
            experiment,
            data_hash: None,
        });
    }
    let dir = cfg.data.split.as_ref().expect("validated");
    let s = load_split(dir)?;
    if s.validation.is_empty() {
        anyhow::bail!(
            "{} has no validation documents; prepare it with --num-validation",
            dir.display()
        );
    }
    let experiment = Experiment::new(&s.labeled, &s.unlabeled, &s.validation, &encoder, max_len)?;
    Ok(Built {
        experiment,
        data_hash: Some(s.hash),
    })
}
