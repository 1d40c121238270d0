//! Precomputed per-token embeddings: JSONL, one `{"vectors": [[..], ..]}`
//! object per sentence, aligned to code points.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::TaggerError;

#[derive(Deserialize)]
struct Line {
    vectors: Vec<Vec<f32>>,
}

/// Parses embedding JSONL. With `dim` set, every vector must have that
/// width; otherwise all vectors must agree with the first.
pub fn parse_vectors(text: &str, dim: Option<usize>) -> Result<Vec<Vec<Vec<f32>>>, TaggerError> {
    let mut width = dim;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(line).map_err(|e| TaggerError::Embeddings(format!("line {}: {e}", i + 1)))?;
        for v in &parsed.vectors {
            let w = *width.get_or_insert(v.len());
            if v.len() != w {
                return Err(TaggerError::Embeddings(format!(
                    "line {}: vector width {} differs from {w}",
                    i + 1,
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(TaggerError::Embeddings(format!("line {}: non-finite value", i + 1)));
            }
        }
        out.push(parsed.vectors);
    }
    Ok(out)
}

pub fn load_vectors(path: &Path, dim: Option<usize>) -> Result<Vec<Vec<Vec<f32>>>, TaggerError> {
    let text = fs::read_to_string(path).map_err(|source| TaggerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_vectors(&text, dim)
}
