//! Binary checkpoint: `MULC`, u32 version, u32 header length, JSON header,
//! f32 little-endian tensors in canonical order, trailing CRC32 of all
//! preceding bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Architecture, ModelParams, Vocab, Weights};
use super::{TaggerError, TrainConfig};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"MULC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    categories: Vec<String>,
    vocab: Vec<String>,
    config: Option<TrainConfig>,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub config: Option<TrainConfig>,
}

pub fn params_to_bytes<T: Scalar>(params: &ModelParams<T>, config: Option<&TrainConfig>) -> Vec<u8> {
    let tensors = params.weights.tensors();
    let header = Header {
        arch: params.arch,
        categories: params.categories.clone(),
        vocab: params.vocab.chars().iter().map(|c| c.to_string()).collect(),
        config: config.cloned(),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorInfo {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 4 * params.weights.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, _, data) in &tensors {
        for &x in data.iter() {
            let v = x.to_f64_lossy() as f32;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<Checkpoint, TaggerError> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(TaggerError::Format("missing MULC magic".into()));
    }
    let version = read_u32(bytes, 4).unwrap();
    if version != FORMAT_VERSION {
        return Err(TaggerError::Version(version));
    }
    if bytes.len() < 16 {
        return Err(TaggerError::Checksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(TaggerError::Checksum);
    }
    let header_len = read_u32(body, 8).unwrap() as usize;
    let header_bytes = body
        .get(12..12 + header_len)
        .ok_or_else(|| TaggerError::Format("header exceeds file".into()))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| TaggerError::Format(e.to_string()))?;

    let chars = header
        .vocab
        .iter()
        .map(|s| {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(TaggerError::Format(format!(
                    "vocabulary entry {s:?} is not one character"
                ))),
            }
        })
        .collect::<Result<Vec<char>, _>>()?;
    let mut params = ModelParams::<f32>::zeros(header.arch, Vocab::from_chars(chars), header.categories);
    let expected: Vec<(String, Vec<usize>)> = params.weights.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    let declared: Vec<(String, Vec<usize>)> = header.tensors.into_iter().map(|t| (t.name, t.shape)).collect();
    if declared != expected {
        return Err(TaggerError::Format("tensor table does not match architecture".into()));
    }

    let mut data = &body[12 + header_len..];
    let need = 4 * params.weights.num_parameters();
    if data.len() != need {
        return Err(TaggerError::Format(format!(
            "expected {need} bytes of tensor data, found {}",
            data.len()
        )));
    }
    fill_weights(&mut params.weights, &mut data);
    Ok(Checkpoint {
        params,
        config: header.config,
    })
}

fn fill_weights(weights: &mut Weights<f32>, data: &mut &[u8]) {
    weights.for_each_mut(|_, t| {
        for x in t.iter_mut() {
            let (head, rest) = data.split_at(4);
            *x = f32::from_le_bytes(head.try_into().unwrap());
            *data = rest;
        }
    });
}

pub fn save_params<T: Scalar>(
    params: &ModelParams<T>,
    config: Option<&TrainConfig>,
    path: &Path,
) -> Result<(), TaggerError> {
    fs::write(path, params_to_bytes(params, config)).map_err(|source| TaggerError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_params(path: &Path) -> Result<Checkpoint, TaggerError> {
    let bytes = fs::read(path).map_err(|source| TaggerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    params_from_bytes(&bytes)
}
