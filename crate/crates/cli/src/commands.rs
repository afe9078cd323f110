use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fewshot_rationale::checkpoint::{load_model, read_header, save_model};
use fewshot_rationale::data::{
    build_input, generate_synthetic, load_eraser_corpus, Corpus, Document, EraserOptions, PairOrder,
    SyntheticConfig, Vocab,
};
use fewshot_rationale::eval::{evaluate, Averaging, EvalOptions, MetricReport};
use fewshot_rationale::experiment::{run_ablation_row, AblationResult, AblationRow, Experiment};
use fewshot_rationale::model::MultiTaskModel;
use fewshot_rationale::rundir::{self, best_checkpoint, checkpoint_name, read_records, read_snapshot, RunDir};
use fewshot_rationale::selftrain::{teacher_only, IterationRecord, SelfTrainConfig, SelfTrainer};
use fewshot_rationale::{Dtype, Scalar};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::config::{Layers, RunConfig};
use crate::split::{build_experiment, read_manifest, write_split};
use crate::{logging, AblateArgs, Cli, Command, ConfigArgs, EvalArgs, ExportArgs, PrepareArgs, TrainArgs};

pub const VOCAB_FILE: &str = "vocab.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ABLATION_TABLE: &str = "ablation.tsv";
pub const ABLATION_RESULTS: &str = "ablation.jsonl";

/// What `train` stores in the run directory's config snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub config: RunConfig,
    /// Manifest hash of the prepared split, if the run used one.
    pub data_hash: Option<String>,
}

#[derive(Debug, Serialize)]
struct Summary {
    /// 0 when only the teacher was trained.
    best_iteration: usize,
    iterations: usize,
    validation: BTreeMap<String, f64>,
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<fewshot_rationale::Error>())
        .map_or(1, |core| if core.is_user_error() { 1 } else { 2 })
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Prepare(a) => prepare(a, cli.seed),
        Command::Train(a) => train(a, cli.seed),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a, cli.seed),
        Command::ExportCurves(a) => export_curves(a),
    }
}

fn layers(args: &ConfigArgs, seed: Option<u64>) -> Result<Layers> {
    let mut l = Layers::from_file(args.config.as_deref())?;
    l.apply_env(std::env::vars())?;
    for s in &args.sets {
        l.assign(s)?;
    }
    let path = |p: &Path| Value::String(p.display().to_string());
    if let Some(p) = &args.split {
        l.set_value("data.split", path(p))?;
    }
    if let Some(p) = &args.output {
        l.set_value("output", path(p))?;
    }
    if let Some(m) = args.max_iterations {
        l.set_value("self_train.max_iterations", Value::Integer(i64::try_from(m)?))?;
    }
    if let Some(s) = seed {
        l.set_value("seed", Value::Integer(i64::try_from(s).context("seed too large")?))?;
    }
    Ok(l)
}

/// Zeroes the named loss components.
fn switch_off(l: &mut Layers, names: &[String]) -> Result<()> {
    for name in names {
        let keys: &[&str] = match name.trim() {
            "wu" => &["loss_weights.coef_wu"],
            "suff" => &["loss_weights.coef_suff"],
            "comp" => &["loss_weights.coef_comp"],
            "sparsity" => &["loss_weights.coef_sparsity"],
            "continuity" => &["loss_weights.coef_continuity"],
            "co" => &["loss_weights.coef_sparsity", "loss_weights.coef_continuity"],
            "reweight" => {
                l.set_value("self_train.loss_options.reweight_task", Value::Boolean(false))?;
                l.set_value("self_train.loss_options.reweight_rationale", Value::Boolean(false))?;
                continue;
            }
            other => bail!("unknown loss component {other:?}; expected wu, suff, comp, sparsity, continuity, co or reweight"),
        };
        for k in keys {
            l.set_value(&format!("self_train.{k}"), Value::Float(0.0))?;
        }
    }
    Ok(())
}

fn prepare(a: PrepareArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let (corpus, source) = if let Some(file) = &a.synthetic {
        let cfg: SyntheticConfig = if file.is_empty() {
            SyntheticConfig::default()
        } else {
            let text = fs::read_to_string(file).with_context(|| format!("reading {file}"))?;
            toml::from_str(&text).with_context(|| format!("parsing {file}"))?
        };
        (generate_synthetic(&cfg)?, format!("synthetic {}", serde_json::to_string(&cfg)?))
    } else if let Some(p) = &a.corpus {
        let c = match &a.classes {
            Some(names) => Corpus::read_jsonl(p, names.clone())?,
            None => Corpus::read_jsonl_inferred(p)?,
        };
        (c, format!("jsonl {}", p.display()))
    } else if let Some(dir) = &a.eraser {
        let options = EraserOptions {
            split: a.eraser_split.clone(),
            class_names: a.classes.clone(),
            pair_order: if a.second_as_document {
                PairOrder::SecondAsDocument
            } else {
                PairOrder::FirstAsDocument
            },
        };
        (load_eraser_corpus(dir, &options)?, format!("eraser {} {}", dir.display(), a.eraser_split))
    } else {
        bail!("choose a corpus source: --synthetic, --corpus or --eraser");
    };
    let (m, hash) = write_split(&a.out, &corpus, a.n_per_class, a.num_validation, seed, source)?;
    println!("labeled\t{}", m.counts.labeled);
    println!("unlabeled\t{}", m.counts.unlabeled);
    println!("validation\t{}", m.counts.validation);
    println!("manifest_sha256\t{hash}");
    Ok(())
}

fn train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    if a.resume {
        return resume(a, seed);
    }
    let mut l = layers(&a.config, seed)?;
    switch_off(&mut l, &a.ablate)?;
    let cfg = l.resolve()?;
    cfg.validate()?;
    if a.print_config {
        print!("{}", toml::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let out = cfg
        .output
        .clone()
        .context("no output directory: pass --output or set `output`")?;
    let built = build_experiment(&cfg, cfg.seed)?;
    let snapshot = RunSnapshot {
        config: cfg.clone(),
        data_hash: built.data_hash.clone(),
    };
    let dir = RunDir::create(&out, &snapshot)?;
    logging::attach_run_log(&out).with_context(|| format!("opening the run log in {}", out.display()))?;
    built.experiment.vocab.save(out.join(VOCAB_FILE))?;
    log::info!(
        "training in {}: {} labeled, {} unlabeled, {} validation documents; coefficients {:?}",
        out.display(),
        built.experiment.labeled.len(),
        built.experiment.unlabeled.len(),
        built.experiment.validation.len(),
        cfg.self_train.loss_weights
    );
    match cfg.dtype {
        Dtype::F32 => train_typed::<f32>(dir, &cfg, &built.experiment, a.stop_after),
        Dtype::F64 => train_typed::<f64>(dir, &cfg, &built.experiment, a.stop_after),
    }
}

fn resume(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let c = &a.config;
    if c.config.is_some() || !c.sets.is_empty() || c.split.is_some() || c.max_iterations.is_some() || !a.ablate.is_empty() {
        bail!("--resume continues with the stored configuration; drop the configuration flags");
    }
    let out = c.output.clone().context("--resume needs --output <run directory>")?;
    let dir = RunDir::open(&out)?;
    logging::attach_run_log(&out).with_context(|| format!("opening the run log in {}", out.display()))?;
    let snap: RunSnapshot = dir.snapshot()?;
    if seed.is_some_and(|s| s != snap.config.seed) {
        bail!("--seed differs from the stored seed {}", snap.config.seed);
    }
    let built = build_experiment(&snap.config, snap.config.seed)?;
    if built.data_hash != snap.data_hash {
        bail!("the prepared split has changed since the run started");
    }
    if Vocab::load(out.join(VOCAB_FILE))? != built.experiment.vocab {
        bail!("the rebuilt vocabulary differs from the stored one");
    }
    if snap.config.self_train.max_iterations == 0 {
        bail!("a teacher-only run has nothing to resume");
    }
    log::info!("resuming {}", out.display());
    match snap.config.dtype {
        Dtype::F32 => train_typed::<f32>(dir, &snap.config, &built.experiment, a.stop_after),
        Dtype::F64 => train_typed::<f64>(dir, &snap.config, &built.experiment, a.stop_after),
    }
}

fn finish_without_records<T: Scalar>(dir: &RunDir, model: &MultiTaskModel<T>, report: &MetricReport) -> Result<()> {
    save_model(model, &dir.checkpoint_path(0))?;
    fs::write(dir.root().join(rundir::BEST_FILE), format!("{}\n", checkpoint_name(0)))?;
    write_summary(dir.root(), 0, 0, report)
}

fn write_summary(root: &Path, best_iteration: usize, iterations: usize, report: &MetricReport) -> Result<()> {
    let summary = Summary {
        best_iteration,
        iterations,
        validation: report.flat(),
    };
    fs::write(root.join(SUMMARY_FILE), serde_json::to_vec_pretty(&summary)?)?;
    print_flat(&summary.validation);
    Ok(())
}

fn print_flat(record: &BTreeMap<String, f64>) {
    for (k, v) in record {
        println!("{k}\t{v}");
    }
}

fn train_typed<T: Scalar>(mut dir: RunDir, cfg: &RunConfig, e: &Experiment, stop_after: Option<usize>) -> Result<()> {
    let st = &cfg.self_train;
    if st.max_iterations == 0 {
        let single = SelfTrainConfig {
            max_iterations: 1,
            ..st.clone()
        };
        let (model, _, report) = teacher_only::<T>(e.model_config.clone(), &single, &e.labeled, &e.validation)?;
        return finish_without_records(&dir, &model, &report);
    }
    let mut trainer = match dir.resume_trainer::<T>(st.clone())? {
        Some(t) => t,
        None => SelfTrainer::new(st.clone(), MultiTaskModel::new(e.model_config.clone(), st.seed)?)?,
    };
    let outcome = match stop_after {
        Some(limit) if !e.unlabeled.is_empty() => {
            let mut done = 0;
            while !trainer.is_finished() && done < limit {
                trainer.step(&e.labeled, &e.unlabeled, &e.validation, &mut dir)?;
                done += 1;
            }
            if !trainer.is_finished() {
                log::info!("stopped after {done} iterations; continue with --resume");
                return Ok(());
            }
            trainer.finish()
        }
        _ => trainer.run(&e.labeled, &e.unlabeled, &e.validation, &mut dir)?,
    };
    match outcome.best_iteration {
        Some(best) => write_summary(dir.root(), best, outcome.records.len(), &outcome.records[best - 1].validation),
        None => {
            let report = evaluate(&outcome.model, &e.validation.docs, &e.validation.inputs, &st.eval)?;
            finish_without_records(&dir, &outcome.model, &report)
        }
    }
}

fn parse_averaging(raw: &str) -> Result<Averaging> {
    serde_json::from_value(serde_json::Value::String(raw.to_lowercase()))
        .with_context(|| format!("unknown averaging {raw:?}; expected micro or macro"))
}

fn eval(a: EvalArgs) -> Result<()> {
    let snapshot: Option<RunSnapshot> = a.run.as_deref().map(read_snapshot).transpose()?;
    let checkpoint = match (&a.checkpoint, &a.run) {
        (Some(c), _) => c.clone(),
        (None, Some(run)) => best_checkpoint(run)?,
        (None, None) => bail!("pass --run or --checkpoint"),
    };
    let vocab_path = match (&a.vocab, &a.run) {
        (Some(v), _) => v.clone(),
        (None, Some(run)) => run.join(VOCAB_FILE),
        (None, None) => bail!("--checkpoint needs --vocab"),
    };
    let vocab = Vocab::load(&vocab_path)?;
    let header = read_header(&checkpoint)?;
    let num_classes = header.num_classes.context("checkpoint holds an encoder, not a model")?;
    if header.encoder.vocab_size != vocab.len() {
        return Err(fewshot_rationale::Error::Config(format!(
            "checkpoint expects {} vocabulary entries, {} has {}",
            header.encoder.vocab_size,
            vocab_path.display(),
            vocab.len()
        ))
        .into());
    }

    let docs: Vec<Document> = match (&a.corpus, &snapshot) {
        (Some(path), _) => {
            let names = match (&a.classes, &snapshot) {
                (Some(n), _) => Some(n.clone()),
                (None, Some(s)) => match &s.config.data.split {
                    Some(dir) => Some(read_manifest(dir)?.0.class_names),
                    None => s.config.data.synthetic.as_ref().map(|b| b.corpus.class_names()),
                },
                (None, None) => None,
            };
            let corpus = match names {
                Some(n) => Corpus::read_jsonl(path, n)?,
                None => Corpus::read_jsonl_inferred(path)?,
            };
            if corpus.num_classes > num_classes || (a.classes.is_some() && corpus.num_classes != num_classes) {
                return Err(fewshot_rationale::Error::Config(format!(
                    "checkpoint predicts {num_classes} classes, corpus has {}",
                    corpus.num_classes
                ))
                .into());
            }
            corpus.documents
        }
        (None, Some(s)) => build_experiment(&s.config, s.config.seed)?.experiment.validation.docs,
        (None, None) => bail!("pass --corpus (or --run to use the run's validation data)"),
    };

    let mut options = snapshot.as_ref().map_or_else(EvalOptions::default, |s| s.config.self_train.eval);
    if let Some(t) = &a.token_averaging {
        options.token_averaging = parse_averaging(t)?;
    }
    if let Some(t) = &a.task_averaging {
        options.task_averaging = parse_averaging(t)?;
    }
    let max_len = header.encoder.max_len;
    let report = match header.dtype {
        Dtype::F32 => score_with::<f32>(&checkpoint, &vocab, &docs, max_len, &options)?,
        Dtype::F64 => score_with::<f64>(&checkpoint, &vocab, &docs, max_len, &options)?,
    };
    let flat = report.flat();
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_vec_pretty(&flat)?).with_context(|| format!("writing {}", out.display()))?;
    }
    print_flat(&flat);
    Ok(())
}

fn score_with<T: Scalar>(
    checkpoint: &Path,
    vocab: &Vocab,
    docs: &[Document],
    max_len: usize,
    options: &EvalOptions,
) -> Result<MetricReport> {
    let model = load_model::<T>(checkpoint)?;
    let inputs: Vec<_> = docs.iter().map(|d| build_input(vocab, d, max_len)).collect();
    Ok(evaluate(&model, docs, &inputs, options)?)
}

#[derive(Serialize)]
struct AblationLine<'a> {
    row: &'a str,
    seed: u64,
    best_iteration: Option<usize>,
    report: &'a MetricReport,
}

fn ablate(a: AblateArgs, seed: Option<u64>) -> Result<()> {
    let cfg = layers(&a.config, seed)?.resolve()?;
    cfg.validate()?;
    let rows = if a.rows.is_empty() {
        AblationRow::ALL.to_vec()
    } else {
        a.rows.iter().map(|r| AblationRow::parse(r.trim())).collect::<Result<_, _>>()?
    };
    let seeds = if a.seeds.is_empty() { vec![cfg.seed] } else { a.seeds.clone() };
    let mut results: Vec<AblationResult> = Vec::new();
    for &s in &seeds {
        let built = build_experiment(&cfg, s)?;
        let base = SelfTrainConfig {
            seed: s,
            ..cfg.self_train.clone()
        };
        for &row in &rows {
            let r = match cfg.dtype {
                Dtype::F32 => run_ablation_row::<f32>(row, &built.experiment, &base)?,
                Dtype::F64 => run_ablation_row::<f64>(row, &built.experiment, &base)?,
            };
            log::info!(
                "{} seed {s}: task F1 {:.4}, token F1 {:.4}, rationale {:.1}%",
                row.name(),
                r.report.task_f1,
                r.report.token_f1,
                r.report.rationale_pct
            );
            results.push(r);
        }
    }

    let mut table = String::from("row\tseeds\ttask_f1\ttoken_precision\ttoken_recall\ttoken_f1\tbleu2\trationale_pct\n");
    for &row in &rows {
        let rs: Vec<&MetricReport> = results.iter().filter(|r| r.row == row).map(|r| &r.report).collect();
        let mean = |f: fn(&MetricReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
        table.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\n",
            row.name(),
            rs.len(),
            mean(|r| r.task_f1),
            mean(|r| r.token_precision),
            mean(|r| r.token_recall),
            mean(|r| r.token_f1),
            mean(|r| r.bleu2),
            mean(|r| r.rationale_pct)
        ));
    }
    print!("{table}");
    if let Some(out) = &cfg.output {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join(ABLATION_TABLE), &table)?;
        let mut lines = String::new();
        for r in &results {
            lines.push_str(&serde_json::to_string(&AblationLine {
                row: r.row.name(),
                seed: r.seed,
                best_iteration: r.best_iteration,
                report: &r.report,
            })?);
            lines.push('\n');
        }
        fs::write(out.join(ABLATION_RESULTS), lines)?;
    }
    Ok(())
}

fn export_curves(a: ExportArgs) -> Result<()> {
    let records = read_records(&a.run)?;
    if records.is_empty() {
        bail!("{} has no iteration records", a.run.display());
    }
    let delim = match a.delimiter.as_str() {
        "tab" | "\\t" => "\t".to_string(),
        d => d.to_string(),
    };
    let ext = match delim.as_str() {
        "," => "csv",
        "\t" => "tsv",
        _ => "txt",
    };
    let out = a.out.as_deref().unwrap_or(&a.run);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let series: [(&str, fn(&IterationRecord) -> f64); 2] =
        [("task_f1", |r| r.validation.task_f1), ("rationale_pct", |r| r.rationale_pct)];
    for (name, value) in series {
        let mut text = format!("iteration{delim}{name}\n");
        for r in &records {
            text.push_str(&format!("{}{delim}{}\n", r.iteration, value(r)));
        }
        let path = out.join(format!("{name}.{ext}"));
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(())
}
