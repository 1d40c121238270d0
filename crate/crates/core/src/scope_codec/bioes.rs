//! Flat BIOES tagging for the innermost and outermost baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Mention, Sentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BioesVariant {
    /// Mentions that contain no other mention.
    Innermost,
    /// Mentions contained in no other mention.
    Outermost,
}

impl FromStr for BioesVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "innermost" => Ok(Self::Innermost),
            "outermost" => Ok(Self::Outermost),
            _ => Err(format!("unknown BIOES variant {s:?}")),
        }
    }
}

impl fmt::Display for BioesVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Innermost => "innermost",
            Self::Outermost => "outermost",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(String),
    I(String),
    E(String),
    S(String),
}

impl Tag {
    /// Class index in a tag alphabet of `4 * categories.len() + 1` entries:
    /// 0 is O, then B, I, E, S for each category in order.
    pub fn class(&self, categories: &[String]) -> Option<usize> {
        let (offset, cat) = match self {
            Tag::O => return Some(0),
            Tag::B(c) => (1, c),
            Tag::I(c) => (2, c),
            Tag::E(c) => (3, c),
            Tag::S(c) => (4, c),
        };
        let k = categories.iter().position(|x| x == cat)?;
        Some(4 * k + offset)
    }

    pub fn from_class(class: usize, categories: &[String]) -> Option<Tag> {
        if class == 0 {
            return Some(Tag::O);
        }
        let cat = categories.get((class - 1) / 4)?.clone();
        Some(match (class - 1) % 4 {
            0 => Tag::B(cat),
            1 => Tag::I(cat),
            2 => Tag::E(cat),
            _ => Tag::S(cat),
        })
    }

    pub fn alphabet_size(categories: usize) -> usize {
        4 * categories + 1
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(c) => write!(f, "B-{c}"),
            Tag::I(c) => write!(f, "I-{c}"),
            Tag::E(c) => write!(f, "E-{c}"),
            Tag::S(c) => write!(f, "S-{c}"),
        }
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let (prefix, cat) = s.split_once('-').ok_or_else(|| format!("bad tag {s:?}"))?;
        let cat = cat.to_string();
        match prefix {
            "B" => Ok(Tag::B(cat)),
            "I" => Ok(Tag::I(cat)),
            "E" => Ok(Tag::E(cat)),
            "S" => Ok(Tag::S(cat)),
            _ => Err(format!("bad tag {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioesEncoding {
    pub tags: Vec<Tag>,
    pub selected: Vec<Mention>,
    /// Mentions of the variant's layer that lost an overlap conflict.
    pub dropped: Vec<Mention>,
}

pub fn bioes_encode(sentence: &Sentence, variant: BioesVariant) -> BioesEncoding {
    let ms = sentence.mentions();
    let mut layer: Vec<&Mention> = ms
        .iter()
        .filter(|m| match variant {
            BioesVariant::Innermost => !ms.iter().any(|o| m.strictly_contains(o)),
            BioesVariant::Outermost => !ms.iter().any(|o| o.strictly_contains(m)),
        })
        .collect();
    layer.sort_by_key(|m| (m.start, m.len()));

    let mut selected: Vec<Mention> = Vec::new();
    let mut dropped = Vec::new();
    for m in layer {
        if selected.iter().any(|s| s.start < m.end && m.start < s.end) {
            dropped.push(m.clone());
        } else {
            selected.push(m.clone());
        }
    }

    let mut tags = vec![Tag::O; sentence.len()];
    for m in &selected {
        let c = &m.category;
        if m.len() == 1 {
            tags[m.start] = Tag::S(c.clone());
            continue;
        }
        tags[m.start] = Tag::B(c.clone());
        for t in &mut tags[m.start + 1..m.end - 1] {
            *t = Tag::I(c.clone());
        }
        tags[m.end - 1] = Tag::E(c.clone());
    }
    BioesEncoding {
        tags,
        selected,
        dropped,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BioesDecoded {
    pub mentions: Vec<Mention>,
    /// Ill-formed segments that were discarded.
    pub dropped: usize,
}

/// Reads well-formed `B I* E` and `S` segments; anything else is dropped.
pub fn bioes_decode(tags: &[Tag]) -> BioesDecoded {
    let mut out = BioesDecoded::default();
    // start and category of the segment being read
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::O => {
                if open.take().is_some() {
                    out.dropped += 1;
                }
            }
            Tag::S(c) => {
                if open.take().is_some() {
                    out.dropped += 1;
                }
                out.mentions.push(Mention::new(i, i + 1, c.clone()));
            }
            Tag::B(c) => {
                if open.replace((i, c)).is_some() {
                    out.dropped += 1;
                }
            }
            Tag::I(c) => match open {
                Some((_, oc)) if oc == c => {}
                Some(_) => {
                    open = None;
                    out.dropped += 1;
                }
                None => out.dropped += 1,
            },
            Tag::E(c) => match open.take() {
                Some((start, oc)) if oc == c => {
                    out.mentions.push(Mention::new(start, i + 1, c.clone()));
                }
                _ => out.dropped += 1,
            },
        }
    }
    if open.is_some() {
        out.dropped += 1;
    }
    out
}
