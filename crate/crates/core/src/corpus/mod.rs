//! Corpus ingestion: per-dataset preprocessing, split construction and the
//! line-delimited manifest format.

pub mod loaders;
pub mod manifest;
pub mod preprocess;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use loaders::load_dataset;
pub use manifest::{export_manifest, import_manifest};
pub use preprocess::{
    clean_newsgroup, mark_target, normalize_ws, strip_html, truncate_tokens, unmark, PROMPT_TOKEN_BUDGET,
    TARGET_MARKER,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing corpus file or directory: {0}")]
    Missing(PathBuf),
    #[error("invalid span ({start}, {end}) for text of {len} characters")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("malformed annotation in {location}: {reason}")]
    Malformed { location: String, reason: String },
    #[error("unknown dataset kind '{0}'")]
    UnknownKind(String),
    #[error("sample {0}: prompt is empty after preprocessing")]
    EmptyPrompt(String),
    #[error("schema violation at line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Movie reviews (`aclImdb` layout), binary polarity.
    Imdb,
    /// 20 Newsgroups, `20news-18828` layout.
    Newsgroups,
    /// Complex word identification, English News portion.
    EnglishNews,
    /// Complex word identification, English WikiNews portion.
    EnglishWikinews,
    /// Any corpus given as `{train,val,test}.tsv` with `label<TAB>text` lines.
    Generic,
}

impl DatasetKind {
    pub fn is_complex_word(self) -> bool {
        matches!(self, Self::EnglishNews | Self::EnglishWikinews)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Imdb => "imdb",
            Self::Newsgroups => "newsgroups",
            Self::EnglishNews => "english-news",
            Self::EnglishWikinews => "english-wikinews",
            Self::Generic => "generic",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "imdb" => Self::Imdb,
            "newsgroups" | "20newsgroups" | "20ng" => Self::Newsgroups,
            "english-news" => Self::EnglishNews,
            "english-wikinews" => Self::EnglishWikinews,
            "generic" => Self::Generic,
            other => return Err(CorpusError::UnknownKind(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled text instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSample {
    pub id: String,
    pub raw_text: String,
    /// Preprocessed text; model input after optional target marking.
    pub clean_text: String,
    /// Text handed to the image generator.
    pub prompt_text: String,
    pub label: usize,
    /// Character offsets into `clean_text` (complex-word tasks only).
    pub target_span: Option<(usize, usize)>,
    /// Whether `prompt_text` was cut to the prompt budget.
    pub prompt_truncated: bool,
}

impl TextSample {
    /// The text fed to text encoders: `clean_text`, with the target phrase
    /// surrounded by [`TARGET_MARKER`] when a span is present.
    pub fn model_text(&self) -> String {
        match self.target_span {
            Some(span) => mark_target(&self.clean_text, span, TARGET_MARKER).unwrap_or_else(|_| self.clean_text.clone()),
            None => self.clean_text.clone(),
        }
    }

    fn validate(&self, k: usize) -> Result<(), String> {
        if self.label >= k {
            return Err(format!("sample {}: label {} >= class count {k}", self.id, self.label));
        }
        if let Some((start, end)) = self.target_span {
            let len = self.clean_text.chars().count();
            if start >= end || end > len {
                return Err(format!("sample {}: span ({start}, {end}) invalid for length {len}", self.id));
            }
        }
        if self.prompt_text.trim().is_empty() {
            return Err(format!("sample {}: empty prompt", self.id));
        }
        Ok(())
    }
}

/// Generator prompt for a preprocessed sample, truncated to
/// [`PROMPT_TOKEN_BUDGET`] whitespace tokens. Returns `(prompt, truncated)`.
pub fn build_prompt(sample: &TextSample, kind: DatasetKind) -> Result<(String, bool), CorpusError> {
    let source = if kind.is_complex_word() {
        let (start, end) = sample.target_span.ok_or_else(|| CorpusError::Malformed {
            location: sample.id.clone(),
            reason: "complex-word sample without a target span".into(),
        })?;
        preprocess::char_slice(&sample.clean_text, start, end)?.to_string()
    } else {
        sample.clean_text.clone()
    };
    let (prompt, truncated) = truncate_tokens(&source, PROMPT_TOKEN_BUDGET);
    if prompt.is_empty() {
        return Err(CorpusError::EmptyPrompt(sample.id.clone()));
    }
    Ok((prompt, truncated))
}

/// A labeled corpus with disjoint train/validation/test splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub kind: DatasetKind,
    pub k: usize,
    pub class_names: Vec<String>,
    pub train: Vec<TextSample>,
    pub val: Vec<TextSample>,
    pub test: Vec<TextSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[TextSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (Split, &TextSample)> {
        Split::ALL.into_iter().flat_map(move |s| self.split(s).iter().map(move |t| (s, t)))
    }

    /// Checks labels, spans, prompts, id disjointness and that every class
    /// occurs in the training split.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.k < 2 {
            return Err(CorpusError::Invalid(format!("need at least two classes, got {}", self.k)));
        }
        if self.class_names.len() != self.k {
            return Err(CorpusError::Invalid(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.k
            )));
        }
        let mut seen = HashSet::new();
        for (_, sample) in self.iter() {
            sample.validate(self.k).map_err(CorpusError::Invalid)?;
            if !seen.insert(sample.id.as_str()) {
                return Err(CorpusError::Invalid(format!("duplicate sample id {}", sample.id)));
            }
        }
        let mut present = vec![false; self.k];
        for s in &self.train {
            present[s.label] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(CorpusError::Invalid(format!(
                "class {} ({}) never occurs in the training split",
                missing, self.class_names[missing]
            )));
        }
        Ok(())
    }
}
