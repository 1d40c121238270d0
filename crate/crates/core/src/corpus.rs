//! Nested-NER corpora: JSONL loading, validation, serialization and
//! dataset statistics.
//!
//! A token is one Unicode code point of the sentence text and entity
//! offsets are half-open code-point ranges `[start, end)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub category: String,
}

impl Mention {
    pub fn new(start: usize, end: usize, category: impl Into<String>) -> Self {
        Self {
            start,
            end,
            category: category.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Index of the last token covered by the mention.
    pub fn last(&self) -> usize {
        self.end - 1
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    /// True when `other` lies inside `self` and the spans differ.
    pub fn strictly_contains(&self, other: &Mention) -> bool {
        self.start <= other.start && other.end <= self.end && self.span() != other.span()
    }

    /// Partial overlap where neither span contains the other.
    pub fn crosses(&self, other: &Mention) -> bool {
        let overlap = self.start < other.end && other.start < self.end;
        overlap && !self.strictly_contains(other) && !other.strictly_contains(self) && self.span() != other.span()
    }
}

impl fmt::Display for Mention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}){}", self.start, self.end, self.category)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<char>,
    mentions: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("empty sentence")]
    EmptySentence,
    #[error("empty span [{start},{end})")]
    EmptySpan { start: usize, end: usize },
    #[error("span [{start},{end}) out of bounds for {len} tokens")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("duplicate span [{start},{end})")]
    DuplicateSpan { start: usize, end: usize },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
}

impl Sentence {
    /// Builds a sentence, checking every mention against the token count.
    pub fn new(text: &str, mentions: Vec<Mention>) -> Result<Self, ValidationError> {
        let tokens: Vec<char> = text.chars().collect();
        if tokens.is_empty() {
            return Err(ValidationError::EmptySentence);
        }
        let mut seen = BTreeSet::new();
        for m in &mentions {
            if m.end <= m.start {
                return Err(ValidationError::EmptySpan {
                    start: m.start,
                    end: m.end,
                });
            }
            if m.end > tokens.len() {
                return Err(ValidationError::OutOfBounds {
                    start: m.start,
                    end: m.end,
                    len: tokens.len(),
                });
            }
            if !seen.insert(m.span()) {
                return Err(ValidationError::DuplicateSpan {
                    start: m.start,
                    end: m.end,
                });
            }
        }
        Ok(Self { tokens, mentions })
    }

    pub fn tokens(&self) -> &[char] {
        &self.tokens
    }

    pub fn text(&self) -> String {
        self.tokens.iter().collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mentions(&self) -> &[Mention] {
        &self.mentions
    }

    /// Pairs of mentions that overlap without one containing the other.
    pub fn crossing_pairs(&self) -> Vec<(&Mention, &Mention)> {
        let mut out = Vec::new();
        for (i, a) in self.mentions.iter().enumerate() {
            for b in &self.mentions[i + 1..] {
                if a.crosses(b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn to_record(&self) -> SentenceRecord {
        SentenceRecord {
            text: self.text(),
            entities: self.mentions.clone(),
        }
    }
}

/// On-disk form of one corpus line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub text: String,
    pub entities: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    categories: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: validation error: {source}")]
    Validation {
        line: usize,
        #[source]
        source: ValidationError,
    },
    #[error("category manifest: {0}")]
    Manifest(String),
}

impl Corpus {
    /// Collects categories from the mentions in sorted order.
    pub fn new(sentences: Vec<Sentence>) -> Self {
        let categories: BTreeSet<String> = sentences
            .iter()
            .flat_map(|s| s.mentions.iter().map(|m| m.category.clone()))
            .collect();
        Self {
            sentences,
            categories: categories.into_iter().collect(),
        }
    }

    /// Uses an explicit category list; every mention must belong to it.
    pub fn with_categories(sentences: Vec<Sentence>, categories: Vec<String>) -> Result<Self, CorpusError> {
        for (i, s) in sentences.iter().enumerate() {
            check_categories(s, &categories).map_err(|source| CorpusError::Validation { line: i + 1, source })?;
        }
        Ok(Self { sentences, categories })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.sentences {
            serde_json::to_writer(&mut out, &s.to_record())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_jsonl()).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Splits off the trailing `count` sentences.
    pub fn split_tail(&self, count: usize) -> (Corpus, Corpus) {
        let cut = self.sentences.len().saturating_sub(count);
        let head = Corpus {
            sentences: self.sentences[..cut].to_vec(),
            categories: self.categories.clone(),
        };
        let tail = Corpus {
            sentences: self.sentences[cut..].to_vec(),
            categories: self.categories.clone(),
        };
        (head, tail)
    }
}

fn check_categories(s: &Sentence, categories: &[String]) -> Result<(), ValidationError> {
    for m in &s.mentions {
        if !categories.iter().any(|c| c == &m.category) {
            return Err(ValidationError::UnknownCategory(m.category.clone()));
        }
    }
    Ok(())
}

/// Parses JSONL corpus text. Blank lines are skipped but still counted
/// for line numbers in error messages.
pub fn parse_corpus(text: &str, categories: Option<&[String]>) -> Result<Corpus, CorpusError> {
    parse_lines(BufReader::new(text.as_bytes()), categories)
}

fn parse_lines<R: BufRead>(reader: R, categories: Option<&[String]>) -> Result<Corpus, CorpusError> {
    let mut sentences = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SentenceRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let sentence = Sentence::new(&record.text, record.entities)
            .map_err(|source| CorpusError::Validation { line: lineno, source })?;
        if let Some(cats) = categories {
            check_categories(&sentence, cats).map_err(|source| CorpusError::Validation { line: lineno, source })?;
        }
        sentences.push(sentence);
    }
    Ok(match categories {
        Some(cats) => Corpus {
            sentences,
            categories: cats.to_vec(),
        },
        None => Corpus::new(sentences),
    })
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    load_corpus_with_manifest(path, None)
}

pub fn load_corpus_with_manifest(path: &Path, categories: Option<&[String]>) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let corpus = parse_lines(BufReader::new(file), categories)?;
    let mut crossing = 0;
    for (i, s) in corpus.sentences.iter().enumerate() {
        for (a, b) in s.crossing_pairs() {
            log::debug!("sentence {}: crossing mentions {} and {}", i + 1, a, b);
            crossing += 1;
        }
    }
    if crossing > 0 {
        log::warn!("{}: {crossing} pairs of crossing mentions", path.display());
    }
    Ok(corpus)
}

#[derive(Deserialize)]
struct Manifest {
    categories: Vec<String>,
}

/// Reads a `{"categories": [...]}` sidecar file.
pub fn load_manifest(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CorpusError::Manifest(e.to_string()))?;
    let unique: BTreeSet<&String> = manifest.categories.iter().collect();
    if unique.len() != manifest.categories.len() {
        return Err(CorpusError::Manifest("duplicate category".into()));
    }
    Ok(manifest.categories)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub nested_sentences: usize,
    pub mentions: usize,
    pub nested_mentions: usize,
    pub avg_tokens: f64,
    pub max_depth: usize,
    pub categories: BTreeMap<String, usize>,
    pub share_first: usize,
    pub share_last: usize,
}

/// Per-mention structural facts within one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MentionShape {
    pub nested: bool,
    pub depth: usize,
    pub shares_first: bool,
    pub shares_last: bool,
}

/// Nesting flags, containment depth and shared-boundary flags for each
/// mention, in mention order.
pub fn mention_shapes(sentence: &Sentence) -> Vec<MentionShape> {
    let ms = sentence.mentions();
    // Longer spans first so every container is resolved before its members.
    let mut order: Vec<usize> = (0..ms.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(ms[i].len()));
    let mut depth = vec![1usize; ms.len()];
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[..k] {
            if ms[j].strictly_contains(&ms[i]) {
                depth[i] = depth[i].max(depth[j] + 1);
            }
        }
    }
    (0..ms.len())
        .map(|i| {
            let nested = ms
                .iter()
                .any(|o| o.strictly_contains(&ms[i]) || ms[i].strictly_contains(o));
            let others = || ms.iter().enumerate().filter(move |&(j, _)| j != i);
            MentionShape {
                nested,
                depth: depth[i],
                shares_first: nested && others().any(|(_, o)| o.start == ms[i].start),
                shares_last: nested && others().any(|(_, o)| o.last() == ms[i].last()),
            }
        })
        .collect()
}

pub fn compute_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        sentences: corpus.len(),
        nested_sentences: 0,
        mentions: 0,
        nested_mentions: 0,
        avg_tokens: 0.0,
        max_depth: 0,
        categories: corpus.categories().iter().map(|c| (c.clone(), 0)).collect(),
        share_first: 0,
        share_last: 0,
    };
    let mut total_tokens = 0usize;
    for s in corpus.sentences() {
        total_tokens += s.len();
        let shapes = mention_shapes(s);
        stats.mentions += shapes.len();
        let nested = shapes.iter().filter(|m| m.nested).count();
        stats.nested_mentions += nested;
        if nested > 0 {
            stats.nested_sentences += 1;
        }
        stats.max_depth = shapes.iter().map(|m| m.depth).fold(stats.max_depth, usize::max);
        stats.share_first += shapes.iter().filter(|m| m.shares_first).count();
        stats.share_last += shapes.iter().filter(|m| m.shares_last).count();
        for m in s.mentions() {
            *stats.categories.entry(m.category.clone()).or_insert(0) += 1;
        }
    }
    if !corpus.is_empty() {
        stats.avg_tokens = total_tokens as f64 / corpus.len() as f64;
    }
    stats
}

/// (nested mentions sharing a first token, nested mentions sharing a last
/// token) with another mention of the same sentence.
pub fn diversity_ratio(corpus: &Corpus) -> (usize, usize) {
    let stats = compute_stats(corpus);
    (stats.share_first, stats.share_last)
}

impl CorpusStats {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rows: Vec<(&str, String)> = vec![
            ("sentences", self.sentences.to_string()),
            ("nested sentences", self.nested_sentences.to_string()),
            ("mentions", self.mentions.to_string()),
            ("nested mentions", self.nested_mentions.to_string()),
            ("avg. tokens", format!("{:.2}", self.avg_tokens)),
            ("max depth", self.max_depth.to_string()),
            ("share first", self.share_first.to_string()),
            ("share last", self.share_last.to_string()),
        ];
        for (k, v) in rows {
            out.push_str(&format!("{:<18}{:>10}\n", k, v));
        }
        for (cat, n) in &self.categories {
            out.push_str(&format!("  {:<16}{:>10}\n", cat, n));
        }
        out
    }
}
