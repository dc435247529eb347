//! Keyword-conditioned caption prompting: a unigram-matching keyword sampler,
//! few-shot prompt assembly, candidate filtering and keyword success rates.
//!
//! Text generation itself happens elsewhere; this module only builds prompts
//! and consumes candidate strings.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::rng;

/// The classic 127-word English stop list.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "i",
    "me",
    "my",
    "myself",
    "we",
    "our",
    "ours",
    "ourselves",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
    "he",
    "him",
    "his",
    "himself",
    "she",
    "her",
    "hers",
    "herself",
    "it",
    "its",
    "itself",
    "they",
    "them",
    "their",
    "theirs",
    "themselves",
    "what",
    "which",
    "who",
    "whom",
    "this",
    "that",
    "these",
    "those",
    "am",
    "is",
    "are",
    "was",
    "were",
    "be",
    "been",
    "being",
    "have",
    "has",
    "had",
    "having",
    "do",
    "does",
    "did",
    "doing",
    "a",
    "an",
    "the",
    "and",
    "but",
    "if",
    "or",
    "because",
    "as",
    "until",
    "while",
    "of",
    "at",
    "by",
    "for",
    "with",
    "about",
    "against",
    "between",
    "into",
    "through",
    "during",
    "before",
    "after",
    "above",
    "below",
    "to",
    "from",
    "up",
    "down",
    "in",
    "out",
    "on",
    "off",
    "over",
    "under",
    "again",
    "further",
    "then",
    "once",
    "here",
    "there",
    "when",
    "where",
    "why",
    "how",
    "all",
    "any",
    "both",
    "each",
    "few",
    "more",
    "most",
    "other",
    "some",
    "such",
    "no",
    "nor",
    "not",
    "only",
    "own",
    "same",
    "so",
    "than",
    "too",
    "very",
    "s",
    "t",
    "can",
    "will",
    "just",
    "don",
    "should",
    "now",
];

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// Lowercase, split on anything that is not alphanumeric, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Tokens of `text` that are not stop words, in order of appearance.
pub fn content_tokens(text: &str, stopwords: &BTreeSet<String>) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !stopwords.contains(t))
        .collect()
}

/// True when the token set of `text` contains every keyword (exact lowercase
/// token equality, no stemming).
pub fn contains_keywords<S: AsRef<str>>(text: &str, keywords: &[S]) -> bool {
    let tokens: BTreeSet<String> = tokenize(text).into_iter().collect();
    keywords
        .iter()
        .all(|k| tokens.contains(&k.as_ref().to_lowercase()))
}

/// Tracks how far generated text lags a target unigram distribution.
///
/// For a draw of `k` keywords, with `G` the total generated count and
/// `share(w)` the target probability of `w`:
///
/// ```text
/// deficit(w) = max(0, share(w) * (G + k) - generated(w))
/// ```
///
/// Keywords are drawn without replacement with probability proportional to
/// their deficit; words at or above their share are never drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnigramSampler {
    pub target_counts: BTreeMap<String, u64>,
    pub generated_counts: BTreeMap<String, u64>,
    pub rng_seed: u64,
}

impl UnigramSampler {
    pub fn new(target_counts: BTreeMap<String, u64>, rng_seed: u64) -> Result<Self> {
        if target_counts.values().all(|&c| c == 0) {
            return Err(GapError::Validation("target vocabulary is empty".into()));
        }
        Ok(Self {
            target_counts,
            generated_counts: BTreeMap::new(),
            rng_seed,
        })
    }

    fn target_total(&self) -> u64 {
        self.target_counts.values().sum()
    }

    fn generated_total(&self) -> u64 {
        self.generated_counts.values().sum()
    }

    pub fn target_share(&self, word: &str) -> f64 {
        self.target_counts.get(word).copied().unwrap_or(0) as f64 / self.target_total() as f64
    }

    /// Deficit of every target word for a draw of `k` keywords, in word order.
    pub fn deficits(&self, k: usize) -> Vec<(&str, f64)> {
        let horizon = (self.generated_total() + k as u64) as f64;
        let total = self.target_total() as f64;
        self.target_counts
            .iter()
            .map(|(w, &c)| {
                let expected = c as f64 / total * horizon;
                let have = self.generated_counts.get(w).copied().unwrap_or(0) as f64;
                (w.as_str(), (expected - have).max(0.0))
            })
            .collect()
    }

    /// Count every in-vocabulary token of a generated caption.
    pub fn record_caption(&mut self, caption: &str) {
        for t in tokenize(caption) {
            if self.target_counts.contains_key(&t) {
                *self.generated_counts.entry(t).or_insert(0) += 1;
            }
        }
    }
}

/// Tally non-stop-word tokens of reference captions.
pub fn build_target_distribution(
    captions: &[String],
    stopwords: &BTreeSet<String>,
    rng_seed: u64,
) -> Result<UnigramSampler> {
    if captions.is_empty() {
        return Err(GapError::Validation("no reference captions".into()));
    }
    let mut counts = BTreeMap::new();
    for c in captions {
        for t in content_tokens(c, stopwords) {
            *counts.entry(t).or_insert(0u64) += 1;
        }
    }
    if counts.is_empty() {
        return Err(GapError::Validation(
            "no words left after removing stop words".into(),
        ));
    }
    UnigramSampler::new(counts, rng_seed)
}

/// Draw `k` distinct under-represented words and count them as generated.
pub fn sample_keywords<R: Rng + ?Sized>(
    sampler: &mut UnigramSampler,
    k: usize,
    rng: &mut R,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(GapError::Parameter("k must be >= 1".into()));
    }
    let mut pool: Vec<(String, f64)> = sampler
        .deficits(k)
        .into_iter()
        .filter(|(_, d)| *d > 0.0)
        .map(|(w, d)| (w.to_string(), d))
        .collect();
    if pool.len() < k {
        return Err(GapError::Exhausted {
            available: pool.len(),
            requested: k,
        });
    }
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = pool.iter().map(|(_, d)| d).sum();
        let mut r = rng.gen::<f64>() * total;
        let mut idx = pool.len() - 1;
        for (i, (_, d)) in pool.iter().enumerate() {
            if r < *d {
                idx = i;
                break;
            }
            r -= d;
        }
        picked.push(pool.swap_remove(idx).0);
    }
    for w in &picked {
        *sampler.generated_counts.entry(w.clone()).or_insert(0) += 1;
    }
    Ok(picked)
}

/// One few-shot example: two keywords and a caption containing both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptExample {
    pub keywords: [String; 2],
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub instruction: String,
    pub examples: Vec<PromptExample>,
    pub target_keywords: [String; 2],
}

impl PromptSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, ex) in self.examples.iter().enumerate() {
            if !contains_keywords(&ex.caption, &ex.keywords) {
                return Err(GapError::Validation(format!(
                    "example {i} caption {:?} lacks its keywords {:?}",
                    ex.caption, ex.keywords
                )));
            }
        }
        if self.target_keywords.iter().any(|k| k.trim().is_empty()) {
            return Err(GapError::Validation("empty target keyword".into()));
        }
        Ok(())
    }
}

/// Two distinct random non-stop-word tokens of `caption`, or `None` if it has
/// fewer than two.
pub fn pick_example_keywords<R: Rng + ?Sized>(
    caption: &str,
    stopwords: &BTreeSet<String>,
    rng: &mut R,
) -> Option<[String; 2]> {
    let mut tokens = content_tokens(caption, stopwords);
    tokens.sort();
    tokens.dedup();
    if tokens.len() < 2 {
        return None;
    }
    rng::shuffle(&mut tokens, rng);
    Some([tokens[0].clone(), tokens[1].clone()])
}

/// Instruction, the examples in shuffled order as `kw1, kw2: caption`, and the
/// open target line `kw1, kw2:`. Lines are joined with `\n`.
pub fn build_prompt<R: Rng + ?Sized>(spec: &PromptSpec, rng: &mut R) -> Result<String> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..spec.examples.len()).collect();
    rng::shuffle(&mut order, rng);
    let mut lines = Vec::with_capacity(spec.examples.len() + 2);
    lines.push(spec.instruction.clone());
    for i in order {
        let ex = &spec.examples[i];
        lines.push(format!(
            "{}, {}: {}",
            ex.keywords[0], ex.keywords[1], ex.caption
        ));
    }
    lines.push(format!(
        "{}, {}:",
        spec.target_keywords[0], spec.target_keywords[1]
    ));
    Ok(lines.join("\n"))
}

/// The first candidate containing both keywords, else a uniformly random one.
/// The flag reports which branch fired.
pub fn filter_candidates<R: Rng + ?Sized, S: AsRef<str>>(
    candidates: &[String],
    keywords: &[S],
    rng: &mut R,
) -> Result<(String, bool)> {
    if candidates.is_empty() {
        return Err(GapError::Parameter("no candidates to choose from".into()));
    }
    if let Some(c) = candidates.iter().find(|c| contains_keywords(c, keywords)) {
        return Ok((c.clone(), true));
    }
    let i = rng.gen_range(0..candidates.len());
    Ok((candidates[i].clone(), false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeywordStats {
    /// Fraction of all candidates containing their keywords.
    pub individual_rate: f64,
    /// Fraction of prompts with at least one such candidate.
    pub any_rate: f64,
    pub prompts: usize,
    pub candidates: usize,
}

pub fn keyword_success_stats(results: &[Vec<bool>]) -> Result<KeywordStats> {
    let candidates: usize = results.iter().map(Vec::len).sum();
    if results.is_empty() || candidates == 0 {
        return Err(GapError::InsufficientData("no candidate results".into()));
    }
    let hits = results.iter().flatten().filter(|&&b| b).count();
    let any = results.iter().filter(|r| r.iter().any(|&b| b)).count();
    Ok(KeywordStats {
        individual_rate: hits as f64 / candidates as f64,
        any_rate: any as f64 / results.len() as f64,
        prompts: results.len(),
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(w, c)| (w.to_string(), *c)).collect()
    }

    #[test]
    fn stop_list_has_127_words() {
        assert_eq!(DEFAULT_STOPWORDS.len(), 127);
        assert_eq!(default_stopwords().len(), 127);
    }

    #[test]
    fn tokenization_splits_punctuation() {
        assert_eq!(tokenize("cell-phone!"), vec!["cell", "phone"]);
        assert_eq!(tokenize("  A Dog's  bone "), vec!["a", "dog", "s", "bone"]);
    }

    #[test]
    fn hand_tally() {
        let stop: BTreeSet<String> = ["a".to_string()].into();
        let s = build_target_distribution(&["a dog runs".into(), "a dog sits".into()], &stop, 0)
            .unwrap();
        assert_eq!(
            s.target_counts,
            words(&[("dog", 2), ("runs", 1), ("sits", 1)])
        );
    }

    #[test]
    fn all_stopwords_is_rejected() {
        let err = build_target_distribution(&["the a of".into()], &default_stopwords(), 0);
        assert!(matches!(err, Err(GapError::Validation(_))));
    }

    #[test]
    fn fresh_deficits_follow_target_share() {
        let s = UnigramSampler::new(words(&[("a", 3), ("b", 1)]), 0).unwrap();
        let d = s.deficits(1);
        assert_eq!(d, vec![("a", 0.75), ("b", 0.25)]);
    }

    #[test]
    fn over_represented_word_is_never_drawn() {
        let mut s = UnigramSampler::new(words(&[("dog", 1), ("cat", 1)]), 0).unwrap();
        s.generated_counts.insert("dog".into(), 1000);
        let mut r = rng::stream(0);
        for _ in 0..100 {
            assert_eq!(sample_keywords(&mut s, 1, &mut r).unwrap(), vec!["cat"]);
        }
    }

    #[test]
    fn exhaustion_when_too_few_words_lag() {
        let mut s = UnigramSampler::new(words(&[("dog", 1), ("cat", 1)]), 0).unwrap();
        s.generated_counts.insert("dog".into(), 1000);
        assert!(matches!(
            sample_keywords(&mut s, 2, &mut rng::stream(0)),
            Err(GapError::Exhausted {
                available: 1,
                requested: 2
            })
        ));
    }

    #[test]
    fn record_caption_counts_vocabulary_only() {
        let mut s = UnigramSampler::new(words(&[("dog", 1)]), 0).unwrap();
        s.record_caption("The dog chased another Dog");
        assert_eq!(s.generated_counts, words(&[("dog", 2)]));
    }

    fn spec(n: usize) -> PromptSpec {
        let captions = [
            "a red bus on a street",
            "two dogs play in snow",
            "a man rides a horse",
        ];
        let kws = [["red", "bus"], ["dogs", "snow"], ["man", "horse"]];
        PromptSpec {
            instruction: "Write a caption using the given words.".into(),
            examples: (0..n)
                .map(|i| PromptExample {
                    keywords: [kws[i][0].into(), kws[i][1].into()],
                    caption: captions[i].into(),
                })
                .collect(),
            target_keywords: ["cat".into(), "sofa".into()],
        }
    }

    #[test]
    fn empty_prompt_has_instruction_and_target() {
        let p = build_prompt(&spec(0), &mut rng::stream(1)).unwrap();
        assert_eq!(p, "Write a caption using the given words.\ncat, sofa:");
    }

    #[test]
    fn prompt_order_is_frozen() {
        let a = build_prompt(&spec(3), &mut rng::stream(1)).unwrap();
        let b = build_prompt(&spec(3), &mut rng::stream(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a,
            "Write a caption using the given words.\n\
             man, horse: a man rides a horse\n\
             red, bus: a red bus on a street\n\
             dogs, snow: two dogs play in snow\n\
             cat, sofa:"
        );
    }

    #[test]
    fn example_missing_keyword_is_rejected() {
        let mut s = spec(1);
        s.examples[0].keywords[1] = "train".into();
        assert!(build_prompt(&s, &mut rng::stream(0)).is_err());
    }

    #[test]
    fn picks_two_content_words() {
        let stop = default_stopwords();
        let kw = pick_example_keywords("a dog on the grass", &stop, &mut rng::stream(3)).unwrap();
        assert!(contains_keywords("a dog on the grass", &kw));
        assert_ne!(kw[0], kw[1]);
        assert!(pick_example_keywords("the dog", &stop, &mut rng::stream(3)).is_none());
    }

    #[test]
    fn filter_prefers_first_match() {
        let c: Vec<String> = ["a cat", "a dog on a sofa", "dog sofa again"]
            .map(String::from)
            .to_vec();
        for seed in 0..10 {
            let (chosen, hit) =
                filter_candidates(&c, &["dog", "sofa"], &mut rng::stream(seed)).unwrap();
            assert_eq!((chosen.as_str(), hit), ("a dog on a sofa", true));
        }
    }

    #[test]
    fn keyword_match_is_token_exact() {
        assert!(!contains_keywords("two hydrants", &["hydrant"]));
        assert!(contains_keywords("A Hydrant.", &["hydrant"]));
    }

    #[test]
    fn stats_examples() {
        let all = vec![vec![true; 5]; 3];
        let s = keyword_success_stats(&all).unwrap();
        assert_eq!((s.individual_rate, s.any_rate), (1.0, 1.0));
        let first_only = vec![vec![true, false, false, false, false]; 4];
        let s = keyword_success_stats(&first_only).unwrap();
        assert!((s.individual_rate - 0.2).abs() < 1e-15);
        assert_eq!(s.any_rate, 1.0);
        assert!(keyword_success_stats(&[]).is_err());
    }
}
