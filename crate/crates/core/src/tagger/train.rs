use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{backward, forward, forward_trace, Dropout, Input};
use super::optim::{clip_global_norm, AdamW};
use super::params::{HeadLayout, ModelParams, Vocab};
use super::{stream_rng, Stream, TaggerError, TrainConfig};
use crate::corpus::{Corpus, Mention, Sentence};
use crate::eval::{score, EvalReport};
use crate::scalar::{argmax, Scalar};
use crate::scope_codec::{aggregate, bioes_decode, bioes_encode, decode_scored, encode, Scope, ScopePrediction, Tag};

#[derive(Debug, Clone, PartialEq)]
pub enum OwnedInput<T> {
    Tokens(Vec<usize>),
    Vectors(Vec<Vec<T>>),
}

impl<T> OwnedInput<T> {
    pub fn as_input(&self) -> Input<'_, T> {
        match self {
            OwnedInput::Tokens(t) => Input::Tokens(t),
            OwnedInput::Vectors(v) => Input::Vectors(v),
        }
    }
}

/// A sentence prepared for training: encoder input plus one gold class
/// sequence per head.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub input: OwnedInput<T>,
    pub targets: Vec<Vec<usize>>,
    pub mask: Vec<bool>,
}

fn head_targets(
    sentence: &Sentence,
    layout: HeadLayout,
    categories: &[String],
    max_len: usize,
) -> Result<(Vec<Vec<usize>>, usize), TaggerError> {
    let unknown = |c: &str| TaggerError::Config(format!("category {c:?} not in model categories"));
    match layout {
        HeadLayout::Scopes => {
            let mut targets = Vec::with_capacity(8);
            let mut excluded = 0;
            for scope in Scope::CANONICAL {
                let enc = encode(sentence, scope, max_len);
                excluded += enc.excluded.len();
                let anchors = enc.labeling.anchor_classes(categories).ok_or_else(|| {
                    let bad = enc
                        .labeling
                        .anchors()
                        .iter()
                        .flatten()
                        .find(|c| !categories.contains(c));
                    unknown(bad.map_or("?", |s| s.as_str()))
                })?;
                targets.push(anchors);
                targets.push(enc.labeling.lengths().to_vec());
            }
            Ok((targets, excluded / Scope::CANONICAL.len()))
        }
        HeadLayout::Bioes { variant } => {
            let enc = bioes_encode(sentence, variant);
            let classes = enc
                .tags
                .iter()
                .map(|t| t.class(categories).ok_or_else(|| unknown(&t.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((vec![classes], 0))
        }
    }
}

/// Converts a corpus into training examples for `params`. `vectors`, when
/// given, supplies one precomputed embedding per token of each sentence.
pub fn build_examples<T: Scalar>(
    params: &ModelParams<T>,
    corpus: &Corpus,
    vectors: Option<&[Vec<Vec<T>>]>,
) -> Result<Vec<Example<T>>, TaggerError> {
    let mut excluded = 0;
    let mut out = Vec::with_capacity(corpus.len());
    for (i, s) in corpus.sentences().iter().enumerate() {
        let (targets, ex) = head_targets(s, params.arch.heads, &params.categories, params.arch.max_len)?;
        excluded += ex;
        out.push(Example {
            input: sentence_input(params, s, vectors.map(|v| &v[i][..]))?,
            targets,
            mask: vec![true; s.len()],
        });
    }
    if excluded > 0 {
        log::warn!(
            "{excluded} mentions exceed the length cap of {} and were not encoded",
            params.arch.max_len
        );
    }
    Ok(out)
}

fn sentence_input<T: Scalar>(
    params: &ModelParams<T>,
    sentence: &Sentence,
    vectors: Option<&[Vec<T>]>,
) -> Result<OwnedInput<T>, TaggerError> {
    match (params.arch.external_embeddings, vectors) {
        (false, _) => Ok(OwnedInput::Tokens(params.vocab.encode(sentence.tokens()))),
        (true, Some(v)) if v.len() == sentence.len() => Ok(OwnedInput::Vectors(v.to_vec())),
        (true, Some(v)) => Err(TaggerError::Embeddings(format!(
            "{} vectors for a sentence of {} tokens",
            v.len(),
            sentence.len()
        ))),
        (true, None) => Err(TaggerError::Config("model requires external embeddings".into())),
    }
}

/// Softmax distributions of the four scope heads for one sentence.
pub fn predict<T: Scalar>(
    params: &ModelParams<T>,
    sentence: &Sentence,
    vectors: Option<&[Vec<T>]>,
) -> Result<Vec<ScopePrediction<T>>, TaggerError> {
    if params.arch.heads != HeadLayout::Scopes {
        return Err(TaggerError::Config("model has no scope heads".into()));
    }
    let input = sentence_input(params, sentence, vectors)?;
    let probs = forward(params, input.as_input())?.probabilities();
    let mut heads = probs.into_iter();
    let mut out = Vec::with_capacity(4);
    while let (Some(anchor), Some(length)) = (heads.next(), heads.next()) {
        out.push(ScopePrediction::new(anchor, length).map_err(|e| TaggerError::Dimension(e.to_string()))?);
    }
    Ok(out)
}

/// Mentions the model recognizes in `sentence`.
pub fn extract<T: Scalar>(
    params: &ModelParams<T>,
    sentence: &Sentence,
    vectors: Option<&[Vec<T>]>,
) -> Result<Vec<Mention>, TaggerError> {
    match params.arch.heads {
        HeadLayout::Scopes => {
            let preds = predict(params, sentence, vectors)?;
            let decoded: Vec<_> = preds
                .iter()
                .zip(Scope::CANONICAL)
                .map(|(p, scope)| decode_scored(p, scope, &params.categories, sentence.len()).mentions)
                .collect();
            Ok(aggregate(&decoded))
        }
        HeadLayout::Bioes { .. } => {
            let input = sentence_input(params, sentence, vectors)?;
            let logits = forward(params, input.as_input())?;
            let head = &logits.heads[0];
            let tags: Vec<Tag> = (0..head.rows())
                .map(|t| Tag::from_class(argmax(head.row(t)), &params.categories).unwrap_or(Tag::O))
                .collect();
            let mut mentions = bioes_decode(&tags).mentions;
            mentions.sort();
            Ok(mentions)
        }
    }
}

pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    corpus: &Corpus,
    vectors: Option<&[Vec<Vec<T>>]>,
) -> Result<EvalReport, TaggerError> {
    let mut gold = Vec::with_capacity(corpus.len());
    let mut pred = Vec::with_capacity(corpus.len());
    for (i, s) in corpus.sentences().iter().enumerate() {
        gold.push(s.mentions().to_vec());
        pred.push(extract(params, s, vectors.map(|v| &v[i][..]))?);
    }
    score(&gold, &pred).map_err(|e| TaggerError::Dimension(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per sentence, one entry per epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation micro-F1 after each epoch.
    pub valid_f1: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Excluded from the JSON form so reports of identical runs compare equal.
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Trains Mulco scope heads, holding out the tail of `corpus` for
/// validation according to `config.validation_fraction`.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<(ModelParams<f32>, TrainReport), TaggerError> {
    train_split(corpus, config, HeadLayout::Scopes, None)
}

/// Like [`train`] for any head layout, with optional per-sentence vectors
/// aligned to `corpus`.
pub fn train_split<T: Scalar>(
    corpus: &Corpus,
    config: &TrainConfig,
    layout: HeadLayout,
    vectors: Option<&[Vec<Vec<T>>]>,
) -> Result<(ModelParams<T>, TrainReport), TaggerError> {
    config.validate()?;
    if let Some(v) = vectors {
        if v.len() != corpus.len() {
            return Err(TaggerError::Embeddings(format!(
                "{} vector lines for {} sentences",
                v.len(),
                corpus.len()
            )));
        }
    }
    let held = (corpus.len() as f64 * config.validation_fraction).round() as usize;
    let held = held.min(corpus.len().saturating_sub(1));
    let (train_part, valid_part) = corpus.split_tail(held);
    let vectors = vectors.map(|v| v.split_at(train_part.len()));
    train_with_validation(&train_part, &valid_part, config, layout, vectors)
}

/// Per-token vectors for the training and validation corpora.
pub type SplitVectors<'a, T> = (&'a [Vec<Vec<T>>], &'a [Vec<Vec<T>>]);

/// Full training loop. Keeps the parameters of the epoch with the best
/// validation F1 (the earliest on ties). An empty validation corpus scores
/// on the training corpus instead.
pub fn train_with_validation<T: Scalar>(
    train: &Corpus,
    valid: &Corpus,
    config: &TrainConfig,
    layout: HeadLayout,
    vectors: Option<SplitVectors<'_, T>>,
) -> Result<(ModelParams<T>, TrainReport), TaggerError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TaggerError::Config("training corpus is empty".into()));
    }
    if train.categories().is_empty() {
        return Err(TaggerError::Config("category set is empty".into()));
    }
    let started = Instant::now();
    let mut arch = config.architecture(layout);
    if let Some((tv, _)) = vectors {
        arch.external_embeddings = true;
        if let Some(v) = tv.iter().flatten().next() {
            arch.embed_dim = v.len();
        }
    }
    let mut init_rng = stream_rng(config.seed, Stream::Init);
    let mut params = ModelParams::<T>::init(
        arch,
        Vocab::from_corpus(train),
        train.categories().to_vec(),
        &mut init_rng,
    );
    let examples = build_examples(&params, train, vectors.map(|v| v.0))?;
    let (valid, valid_vectors) = if valid.is_empty() {
        (train, vectors.map(|v| v.0))
    } else {
        (valid, vectors.map(|v| v.1))
    };

    let mut optimizer = AdamW::new(&params.weights, config.weight_decay);
    let mut shuffle_rng = stream_rng(config.seed, Stream::Shuffle);
    let mut dropout_rng = stream_rng(config.seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(config.epochs),
        valid_f1: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        wall_time: Duration::ZERO,
    };
    let mut best: Option<(f64, ModelParams<T>)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut grads = params.weights.zeros_like();
            let mut batch_loss = T::zero();
            for &i in chunk {
                let ex = &examples[i];
                let input = ex.input.as_input();
                let dropout = Some(Dropout {
                    rate: config.dropout,
                    rng: &mut dropout_rng,
                });
                let trace = forward_trace(&params, input, dropout)?;
                let (l, g) = backward(&params, &trace, input, &ex.targets, &ex.mask);
                batch_loss += l;
                grads.add_assign(&g);
            }
            let batch_loss = batch_loss.to_f64_lossy();
            if !batch_loss.is_finite() {
                return Err(TaggerError::Diverged {
                    epoch,
                    batch: b + 1,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;
            clip_global_norm(&mut grads, config.clip_norm);
            optimizer.step(&mut params.weights, &grads, config.lr_encoder, config.lr_heads);
        }
        let mean_loss = epoch_loss / examples.len() as f64;
        let f1 = evaluate(&params, valid, valid_vectors)?.micro.f1;
        log::info!("epoch {epoch}: loss {mean_loss:.4}, validation F1 {f1:.4}");
        report.epoch_loss.push(mean_loss);
        report.valid_f1.push(f1);
        if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
            best = Some((f1, params.clone()));
            report.best_epoch = epoch;
        }
    }
    report.wall_time = started.elapsed();
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok((params, report))
}
