//! JSONL plumbing around the prompt tools.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use gapkit::promptgen::{self, KeywordStats, PromptExample, PromptSpec};
use gapkit::rng;
use gapkit::GapError;
use serde::{Deserialize, Serialize};

use crate::commands::{read_text, CliResult};

pub const DEFAULT_INSTRUCTION: &str = "Write a short image caption that uses both given words.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub keywords: [String; 2],
    pub prompt_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub prompt_id: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub prompt_id: String,
    pub caption: String,
    pub contains_keywords: bool,
}

pub struct BuildArgs<'a> {
    pub captions: &'a Path,
    pub count: usize,
    pub examples: usize,
    pub instruction: &'a str,
    pub stopwords: Option<&'a Path>,
    pub generated: Option<&'a Path>,
    pub seed: u64,
}

fn lines(path: &Path) -> CliResult<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                GapError::Document(format!("{} line {}: {e}", path.display(), i + 1)).into()
            })
        })
        .collect()
}

fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn build(args: &BuildArgs<'_>) -> CliResult<String> {
    let captions = lines(args.captions)?;
    let stop: BTreeSet<String> = match args.stopwords {
        Some(p) => lines(p)?.into_iter().map(|w| w.to_lowercase()).collect(),
        None => promptgen::default_stopwords(),
    };
    let mut sampler = promptgen::build_target_distribution(&captions, &stop, args.seed)?;
    if let Some(p) = args.generated {
        for c in lines(p)? {
            sampler.record_caption(&c);
        }
    }
    let eligible: Vec<&String> = captions
        .iter()
        .filter(|c| {
            promptgen::content_tokens(c, &stop)
                .into_iter()
                .collect::<BTreeSet<_>>()
                .len()
                >= 2
        })
        .collect();
    if eligible.len() < args.examples {
        return Err(GapError::InsufficientData(format!(
            "{} captions have two content words, {} examples requested",
            eligible.len(),
            args.examples
        ))
        .into());
    }

    let mut stream = rng::substream(args.seed, "prompt-build");
    let mut records = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let kw = promptgen::sample_keywords(&mut sampler, 2, &mut stream)?;
        let picks = rng::permutation(eligible.len(), &mut stream);
        let examples = picks[..args.examples]
            .iter()
            .map(|&e| {
                let caption = eligible[e].clone();
                let keywords = promptgen::pick_example_keywords(&caption, &stop, &mut stream)
                    .expect("eligible captions have two content words");
                PromptExample { keywords, caption }
            })
            .collect();
        let keywords = [kw[0].clone(), kw[1].clone()];
        let spec = PromptSpec {
            instruction: args.instruction.to_string(),
            examples,
            target_keywords: keywords.clone(),
        };
        records.push(PromptRecord {
            prompt_id: i.to_string(),
            keywords,
            prompt_text: promptgen::build_prompt(&spec, &mut stream)?,
        });
    }
    Ok(to_jsonl(&records))
}

fn keyword_index(prompts: &Path) -> CliResult<BTreeMap<String, [String; 2]>> {
    let mut index = BTreeMap::new();
    for p in read_jsonl::<PromptRecord>(prompts)? {
        if index.insert(p.prompt_id.clone(), p.keywords).is_some() {
            return Err(
                GapError::Validation(format!("duplicate prompt_id {:?}", p.prompt_id)).into(),
            );
        }
    }
    Ok(index)
}

fn lookup<'a>(index: &'a BTreeMap<String, [String; 2]>, id: &str) -> CliResult<&'a [String; 2]> {
    index.get(id).ok_or_else(|| {
        GapError::Validation(format!("candidates for unknown prompt_id {id:?}")).into()
    })
}

pub fn filter(prompts: &Path, candidates: &Path, seed: u64) -> CliResult<String> {
    let index = keyword_index(prompts)?;
    let mut stream = rng::substream(seed, "prompt-filter");
    let mut out = Vec::new();
    for rec in read_jsonl::<CandidateRecord>(candidates)? {
        let kw = lookup(&index, &rec.prompt_id)?;
        let (caption, hit) = promptgen::filter_candidates(&rec.candidates, kw, &mut stream)?;
        out.push(ChoiceRecord {
            prompt_id: rec.prompt_id,
            caption,
            contains_keywords: hit,
        });
    }
    Ok(to_jsonl(&out))
}

pub fn stats(prompts: &Path, candidates: &Path) -> CliResult<KeywordStats> {
    let index = keyword_index(prompts)?;
    let results = read_jsonl::<CandidateRecord>(candidates)?
        .iter()
        .map(|rec| {
            let kw = lookup(&index, &rec.prompt_id)?;
            Ok(rec
                .candidates
                .iter()
                .map(|c| promptgen::contains_keywords(c, kw))
                .collect())
        })
        .collect::<CliResult<Vec<Vec<bool>>>>()?;
    Ok(promptgen::keyword_success_stats(&results)?)
}
