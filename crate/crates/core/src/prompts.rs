//! Inpainting prompts and the fixed detection prompt set.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HYBRID_SUFFIX: &str = "hybrid";
pub const MAX_HYBRID_WORDS: usize = 4;
pub const SINGLE_CONCEPT_TEMPLATE: &str = "{keyword}, high resolution, standing on the road";

const BUILTIN_KEYWORDS: &str = include_str!("../data/keywords.txt");

pub const DETECTION_PROMPTS: [(&str, &str); 5] = [
    ("p1", "object"),
    ("p2", "object . animal . person"),
    ("p3", "object on the street"),
    ("p4", "obstacle on the street"),
    ("p5", "something on the street"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Hybrid,
    SingleConcept,
    Detection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub kind: PromptKind,
    pub text: String,
    pub components: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Parses a word list: one entry per line, `#` starts a comment line.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&text))
}

fn underscore_join(word: &str) -> String {
    word.split_whitespace().collect::<Vec<_>>().join("_")
}

/// Joins one to four distinct random nouns as `w1_w2_..._hybrid`.
pub fn hybrid_prompt(nouns: &[String], seed: u64) -> Result<PromptSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = hybrid_prompt_with(nouns, &mut rng)?;
    spec.seed = Some(seed);
    Ok(spec)
}

pub fn hybrid_prompt_with<R: Rng + ?Sized>(nouns: &[String], rng: &mut R) -> Result<PromptSpec> {
    let mut distinct: Vec<String> = Vec::new();
    for n in nouns.iter().map(|n| underscore_join(n)).filter(|n| !n.is_empty()) {
        if !distinct.contains(&n) {
            distinct.push(n);
        }
    }
    if distinct.is_empty() {
        return Err(Error::Prompt("noun list is empty".into()));
    }
    let k = rng.random_range(1..=MAX_HYBRID_WORDS).min(distinct.len());
    let components: Vec<String> = index::sample(rng, distinct.len(), k)
        .into_iter()
        .map(|i| distinct[i].clone())
        .collect();
    let text = format!("{}_{HYBRID_SUFFIX}", components.join("_"));
    Ok(PromptSpec {
        kind: PromptKind::Hybrid,
        text,
        components,
        seed: None,
    })
}

/// Splits a hybrid prompt back into its words.
pub fn parse_hybrid(text: &str) -> Option<Vec<String>> {
    let body = text.strip_suffix(HYBRID_SUFFIX)?.strip_suffix('_')?;
    if body.is_empty() {
        return None;
    }
    Some(body.split('_').map(str::to_string).collect())
}

pub fn single_concept_prompt(keyword: &str) -> Result<PromptSpec> {
    let keyword = keyword.trim();
    if keyword.is_empty() {
        return Err(Error::Prompt("empty keyword".into()));
    }
    Ok(PromptSpec {
        kind: PromptKind::SingleConcept,
        text: SINGLE_CONCEPT_TEMPLATE.replace("{keyword}", keyword),
        components: vec![keyword.to_string()],
        seed: None,
    })
}

/// Keyword vocabulary for single-concept inpainting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordList {
    pub entries: Vec<String>,
}

impl KeywordList {
    pub fn builtin() -> Self {
        Self {
            entries: parse_word_list(BUILTIN_KEYWORDS),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let entries = read_word_list(path)?;
        if entries.is_empty() {
            return Err(Error::Prompt(format!(
                "keyword file {} is empty",
                path.display()
            )));
        }
        Ok(Self { entries })
    }

    pub fn contains(&self, keyword: &str) -> bool {
        self.entries.iter().any(|e| e == keyword)
    }

    /// Single-concept prompt; unknown keywords are allowed with a warning.
    pub fn prompt(&self, keyword: &str) -> Result<PromptSpec> {
        let spec = single_concept_prompt(keyword)?;
        if !self.contains(keyword.trim()) {
            tracing::warn!("keyword {keyword:?} is not in the configured keyword list");
        }
        Ok(spec)
    }
}

pub fn detection_prompts() -> Vec<PromptSpec> {
    DETECTION_PROMPTS
        .iter()
        .map(|(_, text)| PromptSpec {
            kind: PromptKind::Detection,
            text: text.to_string(),
            components: vec![text.to_string()],
            seed: None,
        })
        .collect()
}

/// Query text for a detection prompt id (`p1`..`p5`).
pub fn detection_prompt_text(id: &str) -> Option<&'static str> {
    DETECTION_PROMPTS
        .iter()
        .find(|(pid, _)| *pid == id)
        .map(|(_, t)| *t)
}
