//! Scope-based labeling: each scope anchors an entity at one of its tokens
//! and labels that token with the entity's category and length.
//!
//! A scope anchors a mention at its x-th token counted from the start or
//! from the end. When several mentions share an anchor token the scope keeps
//! the shortest (`Min`) or the longest (`Max`) of them. The four canonical
//! scopes B-min, B-max, E-min and E-max together recover every mention that
//! is the shortest or longest among mentions sharing its first token, or
//! among mentions sharing its last token.

mod bioes;
mod scored;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Mention, Sentence};

pub use bioes::{bioes_decode, bioes_encode, BioesDecoded, BioesEncoding, BioesVariant, Tag};
pub use scored::{aggregate, decode_scored, DecodedMention, ScopePrediction};

/// Default cap on encodable entity length.
pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Anchor {
    /// x-th token from the start of the entity, 1-based.
    FromStart(usize),
    /// x-th token from the end of the entity, 1-based.
    FromEnd(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Selection {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scope {
    pub anchor: Anchor,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScopeError {
    #[error("invalid scope name {0:?}")]
    BadName(String),
    #[error("scope offset must be at least 1")]
    ZeroOffset,
}

impl Scope {
    pub const B_MIN: Scope = Scope::new_unchecked(Anchor::FromStart(1), Selection::Min);
    pub const B_MAX: Scope = Scope::new_unchecked(Anchor::FromStart(1), Selection::Max);
    pub const E_MIN: Scope = Scope::new_unchecked(Anchor::FromEnd(1), Selection::Min);
    pub const E_MAX: Scope = Scope::new_unchecked(Anchor::FromEnd(1), Selection::Max);

    /// The four scopes used by the tagger, in head order.
    pub const CANONICAL: [Scope; 4] = [Scope::B_MIN, Scope::B_MAX, Scope::E_MIN, Scope::E_MAX];

    const fn new_unchecked(anchor: Anchor, selection: Selection) -> Self {
        Self { anchor, selection }
    }

    pub fn new(anchor: Anchor, selection: Selection) -> Result<Self, ScopeError> {
        match anchor {
            Anchor::FromStart(0) | Anchor::FromEnd(0) => Err(ScopeError::ZeroOffset),
            _ => Ok(Self { anchor, selection }),
        }
    }

    pub fn offset(&self) -> usize {
        match self.anchor {
            Anchor::FromStart(x) | Anchor::FromEnd(x) => x,
        }
    }

    /// Token this scope uses as the anchor of `m`, if `m` is long enough.
    pub fn anchor_of(&self, m: &Mention) -> Option<usize> {
        match self.anchor {
            Anchor::FromStart(x) if m.len() >= x => Some(m.start + x - 1),
            Anchor::FromEnd(x) if m.len() >= x => Some(m.end - x),
            _ => None,
        }
    }

    /// Span of the entity anchored at `pos` with length `len`. `None` if the
    /// span leaves `[0, sentence_len)` or does not contain its anchor.
    pub fn span_at(&self, pos: usize, len: usize, sentence_len: usize) -> Option<(usize, usize)> {
        let x = self.offset();
        if len < x {
            return None;
        }
        let (start, end) = match self.anchor {
            Anchor::FromStart(_) => {
                let start = pos.checked_sub(x - 1)?;
                (start, start + len)
            }
            Anchor::FromEnd(_) => {
                let end = pos + x;
                (end.checked_sub(len)?, end)
            }
        };
        (end <= sentence_len).then_some((start, end))
    }

    pub fn parse_list(s: &str) -> Result<Vec<Scope>, ScopeError> {
        if s.trim() == "all" {
            return Ok(Scope::CANONICAL.to_vec());
        }
        s.split(',').map(|p| p.trim().parse()).collect()
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (side, x) = match self.anchor {
            Anchor::FromStart(x) => ('B', x),
            Anchor::FromEnd(x) => ('E', x),
        };
        let sel = match self.selection {
            Selection::Min => "min",
            Selection::Max => "max",
        };
        if x == 1 {
            write!(f, "{side}-{sel}")
        } else {
            write!(f, "{side}{x}-{sel}")
        }
    }
}

impl FromStr for Scope {
    type Err = ScopeError;

    /// Accepts `B-min`, `E-max` and offset forms such as `B2-min`, `E3-max`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScopeError::BadName(s.to_string());
        let (head, sel) = s.split_once('-').ok_or_else(bad)?;
        let selection = match sel {
            "min" => Selection::Min,
            "max" => Selection::Max,
            _ => return Err(bad()),
        };
        let mut chars = head.chars();
        let side = chars.next().ok_or_else(bad)?;
        let rest = chars.as_str();
        let x = if rest.is_empty() {
            1
        } else {
            rest.parse::<usize>().map_err(|_| bad())?
        };
        let anchor = match side {
            'B' => Anchor::FromStart(x),
            'E' => Anchor::FromEnd(x),
            _ => return Err(bad()),
        };
        Scope::new(anchor, selection)
    }
}

impl Serialize for Scope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One scope's gold labels for a sentence. `None` in `anchors` is NA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    anchors: Vec<Option<String>>,
    lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelingError {
    #[error("anchor and length sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("position {0}: NA anchor must have length 0 and vice versa")]
    Inconsistent(usize),
}

impl Labeling {
    pub fn empty(len: usize) -> Self {
        Self {
            anchors: vec![None; len],
            lengths: vec![0; len],
        }
    }

    pub fn new(anchors: Vec<Option<String>>, lengths: Vec<usize>) -> Result<Self, LabelingError> {
        if anchors.len() != lengths.len() {
            return Err(LabelingError::LengthMismatch(anchors.len(), lengths.len()));
        }
        if let Some(i) = anchors.iter().zip(&lengths).position(|(a, &l)| a.is_none() != (l == 0)) {
            return Err(LabelingError::Inconsistent(i));
        }
        Ok(Self { anchors, lengths })
    }

    pub fn anchors(&self) -> &[Option<String>] {
        &self.anchors
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Anchor class indices: 0 for NA, `k + 1` for `categories[k]`.
    pub fn anchor_classes(&self, categories: &[String]) -> Option<Vec<usize>> {
        self.anchors
            .iter()
            .map(|a| match a {
                None => Some(0),
                Some(c) => categories.iter().position(|x| x == c).map(|k| k + 1),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub labeling: Labeling,
    /// Mentions longer than the length cap.
    pub excluded: Vec<Mention>,
}

pub fn encode(sentence: &Sentence, scope: Scope, max_len: usize) -> Encoded {
    let mut labeling = Labeling::empty(sentence.len());
    let mut excluded = Vec::new();
    for m in sentence.mentions() {
        if m.len() > max_len {
            excluded.push(m.clone());
            continue;
        }
        let Some(pos) = scope.anchor_of(m) else {
            continue;
        };
        let current = labeling.lengths[pos];
        let take = current == 0
            || match scope.selection {
                Selection::Min => m.len() < current,
                Selection::Max => m.len() > current,
            };
        if take {
            labeling.anchors[pos] = Some(m.category.clone());
            labeling.lengths[pos] = m.len();
        }
    }
    Encoded { labeling, excluded }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Decoded {
    pub mentions: Vec<Mention>,
    /// Anchors whose span left the sentence or missed the anchor token.
    pub dropped: usize,
}

pub fn decode_hard(labeling: &Labeling, scope: Scope, sentence_len: usize) -> Decoded {
    let mut out = Decoded::default();
    for (pos, (anchor, &len)) in labeling.anchors.iter().zip(&labeling.lengths).enumerate() {
        let Some(cat) = anchor else { continue };
        match scope.span_at(pos, len, sentence_len) {
            Some((start, end)) => out.mentions.push(Mention::new(start, end, cat.clone())),
            None => out.dropped += 1,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Coverage {
    pub covered: Vec<Mention>,
    pub uncovered: Vec<Mention>,
    /// Number of mentions each scope recovers on its own.
    pub per_scope: Vec<(Scope, usize)>,
}

/// Mentions recovered by encoding and decoding under each scope.
pub fn coverage(sentence: &Sentence, scopes: &[Scope], max_len: usize) -> Coverage {
    let mut covered = BTreeSet::new();
    let mut per_scope = Vec::with_capacity(scopes.len());
    for &scope in scopes {
        let enc = encode(sentence, scope, max_len);
        let dec = decode_hard(&enc.labeling, scope, sentence.len());
        per_scope.push((scope, dec.mentions.len()));
        covered.extend(dec.mentions);
    }
    let uncovered = sentence
        .mentions()
        .iter()
        .filter(|m| !covered.contains(*m))
        .cloned()
        .collect();
    Coverage {
        covered: covered.into_iter().collect(),
        uncovered,
        per_scope,
    }
}

/// Mentions the four canonical scopes cannot recover: neither shortest nor
/// longest among mentions sharing the first token, and the same for the
/// last token.
pub fn uncovered_by_canonical(sentence: &Sentence, max_len: usize) -> Vec<Mention> {
    let ms: Vec<&Mention> = sentence.mentions().iter().filter(|m| m.len() <= max_len).collect();
    let extreme = |m: &Mention, key: fn(&Mention) -> usize| {
        let lens = ms.iter().filter(|o| key(o) == key(m)).map(|o| o.len());
        let (lo, hi) = lens.fold((usize::MAX, 0), |(lo, hi), l| (lo.min(l), hi.max(l)));
        m.len() == lo || m.len() == hi
    };
    let mut out: Vec<Mention> = sentence
        .mentions()
        .iter()
        .filter(|m| m.len() > max_len || !(extreme(m, |o| o.start) || extreme(m, |o| o.last())))
        .cloned()
        .collect();
    out.sort();
    out
}
