//! Random sentences and brute-force reference answers shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use mulco::corpus::{Mention, Sentence};
use mulco::scope_codec::{Anchor, Scope, Selection};
use rand::Rng;

pub const CATS: [&str; 3] = ["LOC", "ORG", "PER"];

fn text(len: usize) -> String {
    (0..len).map(|i| char::from(b'a' + (i % 26) as u8)).collect()
}

/// Up to `max_mentions` distinct spans over a sentence of at most
/// `max_len` tokens. Boundaries are drawn from a few cut points so shared
/// starts, shared ends and deep nesting are common.
pub fn random_sentence<R: Rng>(rng: &mut R, max_len: usize, max_mentions: usize) -> Sentence {
    let len = rng.gen_range(1..=max_len);
    let cuts: Vec<usize> = {
        let k = rng.gen_range(1..=4);
        let mut c: BTreeSet<usize> = (0..k).map(|_| rng.gen_range(0..=len)).collect();
        c.insert(0);
        c.insert(len);
        c.into_iter().collect()
    };
    let target = rng.gen_range(0..=max_mentions);
    let mut spans = BTreeSet::new();
    // Sometimes plant a middle-length span with shorter and longer
    // neighbours on both its first and its last token.
    if target >= 5 && len >= 4 && rng.gen_bool(0.3) {
        let s = rng.gen_range(1..len - 2);
        let e = rng.gen_range(s + 2..len);
        spans.insert((s, e));
        spans.insert((s, rng.gen_range(s + 1..e)));
        spans.insert((s, rng.gen_range(e + 1..=len)));
        spans.insert((rng.gen_range(s + 1..e), e));
        spans.insert((rng.gen_range(0..s), e));
    }
    for _ in 0..4 * target {
        if spans.len() == target {
            break;
        }
        let (a, b) = if rng.gen_bool(0.85) && cuts.len() > 1 {
            let i = rng.gen_range(0..cuts.len() - 1);
            let j = rng.gen_range(i + 1..cuts.len());
            (cuts[i], cuts[j])
        } else {
            let a = rng.gen_range(0..len);
            (a, rng.gen_range(a + 1..=len))
        };
        spans.insert((a, b));
    }
    let mentions = spans
        .into_iter()
        .map(|(a, b)| Mention::new(a, b, CATS[rng.gen_range(0..CATS.len())]))
        .collect();
    Sentence::new(&text(len), mentions).unwrap()
}

/// Pairwise non-overlapping mentions.
pub fn random_flat<R: Rng>(rng: &mut R, max_len: usize) -> Sentence {
    let len = rng.gen_range(1..=max_len);
    let mut mentions = Vec::new();
    let mut pos = 0;
    while pos < len {
        pos += rng.gen_range(0..=3);
        if pos >= len {
            break;
        }
        let end = rng.gen_range(pos + 1..=len.min(pos + 6));
        mentions.push(Mention::new(pos, end, CATS[rng.gen_range(0..CATS.len())]));
        pos = end;
    }
    Sentence::new(&text(len), mentions).unwrap()
}

fn anchor_token(m: &Mention, scope: Scope) -> Option<usize> {
    match scope.anchor {
        Anchor::FromStart(x) if m.len() >= x => Some(m.start + x - 1),
        Anchor::FromEnd(x) if m.len() >= x => Some(m.end - x),
        _ => None,
    }
}

/// Mentions a single scope can represent: those that are the strict
/// extreme, by length, among all mentions anchored at the same token.
pub fn representable(sentence: &Sentence, scope: Scope) -> BTreeSet<Mention> {
    let ms = sentence.mentions();
    ms.iter()
        .filter(|m| {
            let Some(at) = anchor_token(m, scope) else { return false };
            ms.iter()
                .filter(|o| *o != *m && anchor_token(o, scope) == Some(at))
                .all(|o| match scope.selection {
                    Selection::Min => m.len() < o.len(),
                    Selection::Max => m.len() > o.len(),
                })
        })
        .cloned()
        .collect()
}

pub fn representable_union(sentence: &Sentence, scopes: &[Scope]) -> BTreeSet<Mention> {
    scopes.iter().flat_map(|&s| representable(sentence, s)).collect()
}

pub fn scopes_with_offsets() -> Vec<Scope> {
    let mut out = Scope::CANONICAL.to_vec();
    for x in [2, 3] {
        for sel in [Selection::Min, Selection::Max] {
            out.push(Scope::new(Anchor::FromStart(x), sel).unwrap());
            out.push(Scope::new(Anchor::FromEnd(x), sel).unwrap());
        }
    }
    out
}
