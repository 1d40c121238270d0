use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TaggerError;
use crate::corpus::Corpus;
use crate::scalar::Scalar;
use crate::scope_codec::{BioesVariant, Scope, Tag};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match shape");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// `out += self * x`.
    pub fn mul_vec_add(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ * y`.
    pub fn tr_mul_vec_add(&self, y: &[T], out: &mut [T]) {
        debug_assert_eq!(y.len(), self.rows);
        for (&g, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if g != T::zero() {
                axpy(g, row, out);
            }
        }
    }

    /// `self += y ⊗ x`.
    pub fn add_outer(&mut self, y: &[T], x: &[T]) {
        for (&g, row) in y.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if g != T::zero() {
                axpy(g, x, row);
            }
        }
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `y += a * x`.
#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

/// One direction of an LSTM layer. Gate rows are stacked in the order
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<T> {
    pub w_input: Matrix<T>,
    pub w_hidden: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LstmCell<T> {
    pub fn hidden(&self) -> usize {
        self.w_hidden.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadLayout {
    /// Anchor and length classifiers for each of the four canonical scopes.
    Scopes,
    /// A single BIOES classifier.
    Bioes { variant: BioesVariant },
}

impl HeadLayout {
    /// Output classes of each head, in tensor order.
    pub fn head_sizes(&self, categories: usize, max_len: usize) -> Vec<usize> {
        match self {
            HeadLayout::Scopes => Scope::CANONICAL
                .iter()
                .flat_map(|_| [categories + 1, max_len + 1])
                .collect(),
            HeadLayout::Bioes { .. } => vec![Tag::alphabet_size(categories)],
        }
    }

    pub fn head_names(&self) -> Vec<String> {
        match self {
            HeadLayout::Scopes => Scope::CANONICAL
                .iter()
                .flat_map(|s| [format!("{s}.anchor"), format!("{s}.length")])
                .collect(),
            HeadLayout::Bioes { variant } => vec![format!("bioes-{variant}")],
        }
    }
}

/// Shapes and switches that fix the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub recurrent: bool,
    pub max_len: usize,
    pub heads: HeadLayout,
    /// Inputs are precomputed vectors rather than embedding-table rows.
    #[serde(default)]
    pub external_embeddings: bool,
}

impl Architecture {
    /// Width of the features fed to the heads.
    pub fn feature_dim(&self) -> usize {
        if self.recurrent {
            2 * self.hidden
        } else {
            self.embed_dim
        }
    }
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Character vocabulary with PAD at index 0 and UNK at index 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let set: BTreeSet<char> = corpus
            .sentences()
            .iter()
            .flat_map(|s| s.tokens().iter().copied())
            .collect();
        Self {
            chars: set.into_iter().collect(),
        }
    }

    pub fn from_chars(chars: Vec<char>) -> Self {
        Self { chars }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, c: char) -> usize {
        self.chars.binary_search(&c).map_or(UNK, |i| i + 2)
    }

    pub fn encode(&self, tokens: &[char]) -> Vec<usize> {
        tokens.iter().map(|&c| self.index(c)).collect()
    }
}

/// Every trainable tensor. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub embedding: Matrix<T>,
    /// Forward and backward cells per layer.
    pub layers: Vec<[LstmCell<T>; 2]>,
    pub heads: Vec<Linear<T>>,
}

/// Which optimizer group a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Encoder,
    Head,
}

impl<T: Scalar> Weights<T> {
    pub fn zeros(arch: &Architecture, vocab: usize, head_sizes: &[usize]) -> Self {
        let h = arch.hidden;
        let layers = if arch.recurrent { arch.layers } else { 0 };
        let cell = |input: usize| LstmCell {
            w_input: Matrix::zeros(4 * h, input),
            w_hidden: Matrix::zeros(4 * h, h),
            bias: vec![T::zero(); 4 * h],
        };
        Self {
            embedding: Matrix::zeros(vocab, arch.embed_dim),
            layers: (0..layers)
                .map(|l| {
                    let input = if l == 0 { arch.embed_dim } else { 2 * h };
                    [cell(input), cell(input)]
                })
                .collect(),
            heads: head_sizes
                .iter()
                .map(|&n| Linear {
                    weight: Matrix::zeros(n, arch.feature_dim()),
                    bias: vec![T::zero(); n],
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut w = self.clone();
        w.for_each_mut(|_, t| t.iter_mut().for_each(|x| *x = T::zero()));
        w
    }

    /// Tensors in canonical order with their names and shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        let e = &self.embedding;
        out.push(("embedding".into(), vec![e.rows(), e.cols()], e.data()));
        for (l, pair) in self.layers.iter().enumerate() {
            for (dir, cell) in ["fwd", "bwd"].iter().zip(pair) {
                let p = format!("lstm{l}.{dir}");
                let (wi, wh) = (&cell.w_input, &cell.w_hidden);
                out.push((format!("{p}.w_input"), vec![wi.rows(), wi.cols()], wi.data()));
                out.push((format!("{p}.w_hidden"), vec![wh.rows(), wh.cols()], wh.data()));
                out.push((format!("{p}.bias"), vec![cell.bias.len()], &cell.bias));
            }
        }
        for (k, head) in self.heads.iter().enumerate() {
            let w = &head.weight;
            out.push((format!("head{k}.weight"), vec![w.rows(), w.cols()], w.data()));
            out.push((format!("head{k}.bias"), vec![head.bias.len()], &head.bias));
        }
        out
    }

    /// Visits every tensor mutably in canonical order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(Group, &mut [T])) {
        f(Group::Encoder, self.embedding.data_mut());
        for pair in &mut self.layers {
            for cell in pair.iter_mut() {
                f(Group::Encoder, cell.w_input.data_mut());
                f(Group::Encoder, cell.w_hidden.data_mut());
                f(Group::Encoder, &mut cell.bias);
            }
        }
        for head in &mut self.heads {
            f(Group::Head, head.weight.data_mut());
            f(Group::Head, &mut head.bias);
        }
    }

    /// Visits `(self, other)` tensor pairs in canonical order.
    pub fn zip_mut(&mut self, other: &Weights<T>, mut f: impl FnMut(Group, &mut [T], &[T])) {
        let theirs: Vec<&[T]> = other.tensors().into_iter().map(|(_, _, t)| t).collect();
        let mut k = 0;
        self.for_each_mut(|g, mine| {
            f(g, mine, theirs[k]);
            k += 1;
        });
    }

    pub fn add_assign(&mut self, other: &Weights<T>) {
        self.zip_mut(other, |_, a, b| {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        });
    }

    pub fn scale(&mut self, s: T) {
        self.for_each_mut(|_, t| t.iter_mut().for_each(|x| *x *= s));
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, t)| t.iter())
            .map(|x| {
                let v = x.to_f64_lossy();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        let m = |m: &Matrix<T>| Matrix::from_vec(m.rows(), m.cols(), m.data().iter().map(|&x| cast(x)).collect());
        let v = |v: &[T]| v.iter().map(|&x| cast(x)).collect::<Vec<U>>();
        Weights {
            embedding: m(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|pair| {
                    pair.clone().map(|c| LstmCell {
                        w_input: m(&c.w_input),
                        w_hidden: m(&c.w_hidden),
                        bias: v(&c.bias),
                    })
                })
                .collect(),
            heads: self
                .heads
                .iter()
                .map(|h| Linear {
                    weight: m(&h.weight),
                    bias: v(&h.bias),
                })
                .collect(),
        }
    }
}

fn cast<T: Scalar, U: Scalar>(x: T) -> U {
    U::from_f64_lossy(x.to_f64_lossy())
}

/// A trained or freshly initialized tagger.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: Architecture,
    pub vocab: Vocab,
    pub categories: Vec<String>,
    pub weights: Weights<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(arch: Architecture, vocab: Vocab, categories: Vec<String>) -> Self {
        let sizes = arch.heads.head_sizes(categories.len(), arch.max_len);
        let weights = Weights::zeros(&arch, vocab.len(), &sizes);
        Self {
            arch,
            vocab,
            categories,
            weights,
        }
    }

    /// Embeddings uniform in ±0.1, recurrent and head weights uniform in
    /// ±1/√fan_in, zero biases except the forget gate at 1.
    pub fn init<R: Rng>(arch: Architecture, vocab: Vocab, categories: Vec<String>, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch, vocab, categories);
        let fill = |t: &mut [T], bound: f64, rng: &mut R| {
            for x in t {
                *x = T::from_f64_lossy(rng.gen_range(-bound..bound));
            }
        };
        let w = &mut p.weights;
        fill(w.embedding.data_mut(), 0.1, rng);
        let h = arch.hidden;
        let rec_bound = 1.0 / (h.max(1) as f64).sqrt();
        for pair in &mut w.layers {
            for cell in pair.iter_mut() {
                fill(cell.w_input.data_mut(), rec_bound, rng);
                fill(cell.w_hidden.data_mut(), rec_bound, rng);
                for b in &mut cell.bias[h..2 * h] {
                    *b = T::one();
                }
            }
        }
        let head_bound = 1.0 / (arch.feature_dim().max(1) as f64).sqrt();
        for head in &mut w.heads {
            fill(head.weight.data_mut(), head_bound, rng);
        }
        p
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        self.arch.heads.head_sizes(self.categories.len(), self.arch.max_len)
    }

    /// Checks every tensor against the architecture.
    pub fn validate(&self) -> Result<(), TaggerError> {
        let expected = Weights::<T>::zeros(&self.arch, self.vocab.len(), &self.head_sizes());
        let mine = self.weights.tensors();
        let want = expected.tensors();
        if mine.len() != want.len() {
            return Err(TaggerError::Dimension(format!(
                "expected {} tensors, found {}",
                want.len(),
                mine.len()
            )));
        }
        for ((name, shape, data), (_, want_shape, _)) in mine.iter().zip(&want) {
            if shape != want_shape || data.len() != shape.iter().product::<usize>() {
                return Err(TaggerError::Dimension(format!(
                    "{name}: shape {shape:?}, expected {want_shape:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            vocab: self.vocab.clone(),
            categories: self.categories.clone(),
            weights: self.weights.cast(),
        }
    }
}
