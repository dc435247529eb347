use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use gapkit::adapters::{self, AdapterPipeline};
use gapkit::analysis::{self, ShiftCondition};
use gapkit::embedstore::{self, EmbeddingMatrix, PairedCorpus};
use gapkit::geometry;
use gapkit::rng;
use gapkit::transferlab::{self, Condition, SyntheticCorpusSpec, TrainConfig};
use gapkit::GapError;
use serde::Serialize;

use crate::{prompts, Cli, Command, FitKind, Format};

#[derive(Debug)]
pub enum CliError {
    Gap(GapError),
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Gap(e) if e.is_environmental() => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Gap(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "usage: {m}"),
        }
    }
}

impl From<GapError> for CliError {
    fn from(e: GapError) -> Self {
        CliError::Gap(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| GapError::io(path, e).into())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| GapError::Document(format!("{}: {e}", path.display())).into())
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn emit(cli: &Cli, text: &str) -> CliResult<()> {
    match &cli.out {
        Some(path) => embedstore::write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn only(cli: &Cli, command: &str, allowed: &[Format]) -> CliResult<()> {
    if allowed.contains(&cli.format) {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{command} does not support --format {:?}",
            cli.format
        )))
    }
}

fn required_out<'a>(cli: &'a Cli, command: &str) -> CliResult<&'a Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("{command} writes a corpus and needs --out")))
}

fn train_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    match path {
        Some(p) => read_json(p),
        None => Ok(TrainConfig::default()),
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Validate { corpus } => validate(cli, corpus),
        Command::GapStats {
            corpus,
            samples,
            seed,
        } => {
            only(cli, "gap-stats", &[Format::Json, Format::Table])?;
            let c = embedstore::load_corpus(corpus)?;
            let report = geometry::gap_stats(&c, *samples, *seed)?;
            let text = match cli.format {
                Format::Table => format!(
                    "mean_paired_cos    {:.6}\nmean_unpaired_cos  {:.6}\ngap_norm           {:.6}\npairs_sampled      {}\n",
                    report.mean_paired_cos, report.mean_unpaired_cos, report.gap_norm, report.pairs_sampled
                ),
                _ => to_json(&report),
            };
            emit(cli, &text)
        }
        Command::FitAdapter {
            kind,
            corpus,
            ridge,
            jitter,
            scale,
        } => {
            only(cli, "fit-adapter", &[Format::Json])?;
            let c = embedstore::load_corpus(corpus)?;
            let adapter = match kind {
                FitKind::MeanShift => adapters::fit_mean_shift(&c)?,
                FitKind::Linear => adapters::fit_linear(&c, *ridge)?,
                FitKind::CovNoise => adapters::fit_covariance_noise(&c, *jitter, *scale)?,
            };
            emit(cli, &to_json(&adapter.to_json()))
        }
        Command::Apply {
            adapter,
            corpus,
            seed,
        } => {
            let out = required_out(cli, "apply")?;
            let doc: serde_json::Value = read_json(adapter)?;
            let pipeline = AdapterPipeline::from_json(&doc)?;
            let c = embedstore::load_corpus(corpus)?;
            let adapted = apply_text(&c, &pipeline, *seed)?;
            embedstore::save_corpus(&adapted, out)?;
            Ok(())
        }
        Command::Pca { corpus, components } => {
            let c = embedstore::load_corpus(corpus)?;
            let report = analysis::diff_pca(&c, *components)?;
            let text = match cli.format {
                Format::Json => to_json(&report),
                Format::Table => report.to_table(),
                Format::Csv => report.to_csv(),
            };
            emit(cli, &text)
        }
        Command::Correlations { corpus, top_k } => {
            let c = embedstore::load_corpus(corpus)?;
            let report = analysis::feature_correlations(&c, *top_k)?;
            let text = match cli.format {
                Format::Json => to_json(&report),
                Format::Table => report.to_table(),
                Format::Csv => report.to_csv(),
            };
            emit(cli, &text)
        }
        Command::Sensitivity {
            corpus,
            conditions,
            noise_w,
            runs,
            seed,
            train_config: tc,
        } => {
            let conds = conditions
                .iter()
                .map(|s| ShiftCondition::parse(s))
                .collect::<gapkit::Result<Vec<_>>>()?;
            let hyper = train_config(tc.as_deref())?;
            let c = embedstore::load_corpus(corpus)?;
            let rows = analysis::sensitivity_sweep(&c, &conds, *noise_w, *runs, *seed, &hyper)?;
            let text = match cli.format {
                Format::Json => to_json(&rows),
                Format::Table => analysis::sensitivity_table(&rows),
                Format::Csv => {
                    let mut s = String::from("condition,magnitude,runs,mean_metric,std_metric\n");
                    for r in &rows {
                        let _ = writeln!(
                            s,
                            "{},{:e},{},{:e},{:e}",
                            r.condition.label(),
                            r.magnitude,
                            r.runs,
                            r.mean_metric,
                            r.std_metric
                        );
                    }
                    s
                }
            };
            emit(cli, &text)
        }
        Command::Synth { spec, seed } => {
            let out = required_out(cli, "synth")?;
            let mut recipe = match spec {
                Some(p) => read_json::<SyntheticCorpusSpec>(p)?,
                None => SyntheticCorpusSpec::standard(),
            };
            recipe.seed = *seed;
            let corpus = transferlab::generate_synthetic_corpus(&recipe)?;
            let meta = serde_json::json!({ "generator": "synthetic", "spec": recipe });
            embedstore::save_corpus_with_meta(&corpus, out, &meta)?;
            Ok(())
        }
        Command::Transfer {
            corpus,
            conditions,
            seeds,
            train_config: tc,
        } => {
            let conds = conditions
                .iter()
                .map(|s| Condition::parse(s))
                .collect::<gapkit::Result<Vec<_>>>()?;
            let hyper = train_config(tc.as_deref())?;
            let c = embedstore::load_corpus(corpus)?;
            let report = transferlab::cross_modal_experiment(&c, &conds, &hyper, seeds)?;
            let text = match cli.format {
                Format::Json => to_json(&report),
                Format::Table => report.to_table(),
                Format::Csv => {
                    let mut s = String::from(
                        "condition,seed,train_acc,text_eval_acc,image_eval_acc,shift_norm\n",
                    );
                    for cond in &report.conditions {
                        for cell in &cond.cells {
                            let _ = writeln!(
                                s,
                                "{},{},{:e},{:e},{:e},{:e}",
                                cond.name,
                                cell.seed,
                                cell.train_acc,
                                cell.text_eval_acc,
                                cell.image_eval_acc,
                                cell.shift_norm
                            );
                        }
                    }
                    s
                }
            };
            emit(cli, &text)
        }
        Command::PromptBuild {
            captions,
            count,
            examples,
            instruction,
            stopwords,
            generated,
            seed,
        } => {
            only(cli, "prompt-build", &[Format::Json])?;
            let text = prompts::build(&prompts::BuildArgs {
                captions,
                count: *count,
                examples: *examples,
                instruction,
                stopwords: stopwords.as_deref(),
                generated: generated.as_deref(),
                seed: *seed,
            })?;
            emit(cli, &text)
        }
        Command::PromptFilter {
            prompts: p,
            candidates,
            seed,
        } => {
            only(cli, "prompt-filter", &[Format::Json])?;
            emit(cli, &prompts::filter(p, candidates, *seed)?)
        }
        Command::KeywordStats {
            prompts: p,
            candidates,
        } => {
            only(cli, "keyword-stats", &[Format::Json])?;
            emit(cli, &to_json(&prompts::stats(p, candidates)?))
        }
    }
}

fn validate(cli: &Cli, path: &Path) -> CliResult<()> {
    only(cli, "validate", &[Format::Json, Format::Table])?;
    let corpus = embedstore::load_corpus_unvalidated(path)?;
    let report = embedstore::validate_corpus(&corpus);
    let text = match cli.format {
        Format::Table => {
            let mut s = String::new();
            for issue in &report.issues {
                let _ = writeln!(s, "{issue}");
            }
            if report.is_valid() {
                s.push_str("valid\n");
            }
            s
        }
        _ => to_json(&serde_json::json!({
            "valid": report.is_valid(),
            "rows": corpus.text.rows(),
            "dim": corpus.text.dim(),
            "issues": report.issues,
        })),
    };
    emit(cli, &text)?;
    if report.is_valid() {
        Ok(())
    } else {
        Err(GapError::Validation(format!("{} issue(s) found", report.issues.len())).into())
    }
}

/// Every text row through `pipeline`, one `(seed, "apply")` stream in row order.
pub fn apply_text(
    corpus: &PairedCorpus,
    pipeline: &AdapterPipeline,
    seed: u64,
) -> gapkit::Result<PairedCorpus> {
    let mut stream = rng::substream(seed, "apply");
    let rows = (0..corpus.rows())
        .map(|j| {
            adapters::apply_pipeline(&corpus.text.row_f64(j), pipeline, &mut stream).map_err(|e| {
                match e {
                    GapError::DegenerateVector { .. } => GapError::DegenerateVector { row: j },
                    other => other,
                }
            })
        })
        .collect::<gapkit::Result<Vec<_>>>()?;
    PairedCorpus::new(
        EmbeddingMatrix::from_f64_rows(&rows)?,
        corpus.image.clone(),
        corpus.ids.clone(),
        corpus.labels.clone(),
        corpus.captions.clone(),
    )
}
