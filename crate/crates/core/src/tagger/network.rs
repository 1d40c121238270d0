//! Bi-LSTM encoder with linear classification heads: forward pass, summed
//! cross-entropy loss and exact backpropagation.

use rand::Rng;

use super::params::{axpy, Matrix, ModelParams, Weights, PAD};
use super::TaggerError;
use crate::scalar::{log_sum_exp, softmax, Scalar};

/// Encoder input for one sentence.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a, T> {
    /// Vocabulary indices. Positions from the first PAD onward are padding.
    Tokens(&'a [usize]),
    /// Precomputed per-token vectors replacing the embedding table.
    Vectors(&'a [Vec<T>]),
}

impl<T> Input<'_, T> {
    pub fn len(&self) -> usize {
        match self {
            Input::Tokens(t) => t.len(),
            Input::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of leading non-padding positions.
    pub fn valid_len(&self) -> usize {
        match self {
            Input::Tokens(t) => t.iter().position(|&i| i == PAD).unwrap_or(t.len()),
            Input::Vectors(v) => v.len(),
        }
    }
}

/// Per-head logits, each `positions × classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T> {
    pub heads: Vec<Matrix<T>>,
}

impl<T: Scalar> Logits<T> {
    pub fn positions(&self) -> usize {
        self.heads.first().map_or(0, |m| m.rows())
    }

    /// Row-wise softmax computed in f64.
    pub fn probabilities(&self) -> Vec<Vec<Vec<T>>> {
        self.heads
            .iter()
            .map(|m| {
                (0..m.rows())
                    .map(|r| {
                        let row: Vec<f64> = m.row(r).iter().map(|x| x.to_f64_lossy()).collect();
                        softmax(&row).into_iter().map(T::from_f64_lossy).collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Dropout configuration for a training pass.
pub struct Dropout<'r, R> {
    pub rate: f64,
    pub rng: &'r mut R,
}

struct DirTrace<T> {
    /// Activated gates per step, `n × 4H` (i, f, g, o).
    gates: Vec<T>,
    cells: Vec<T>,
    tanh_cells: Vec<T>,
    hidden: Vec<T>,
}

struct LayerTrace<T> {
    /// Layer input after dropout, `n × in`.
    input: Vec<T>,
    dirs: [DirTrace<T>; 2],
}

/// Everything the backward pass needs.
pub struct Trace<T> {
    valid: usize,
    total: usize,
    /// Inverted-dropout scales on the embeddings.
    embed_mask: Option<Vec<T>>,
    layers: Vec<LayerTrace<T>>,
    /// Dropout scales on each layer's output.
    layer_masks: Vec<Option<Vec<T>>>,
    /// Head input, `valid × m`.
    features: Vec<T>,
    pub logits: Logits<T>,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn dropout_mask<T: Scalar, R: Rng>(len: usize, d: &mut Option<Dropout<'_, R>>) -> Option<Vec<T>> {
    let d = d.as_mut()?;
    if d.rate <= 0.0 {
        return None;
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - d.rate));
    Some(
        (0..len)
            .map(|_| if d.rng.gen::<f64>() < d.rate { T::zero() } else { keep })
            .collect(),
    )
}

fn apply_mask<T: Scalar>(xs: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (x, &s) in xs.iter_mut().zip(m) {
            *x *= s;
        }
    }
}

fn check_input<T: Scalar>(params: &ModelParams<T>, input: &Input<'_, T>) -> Result<(), TaggerError> {
    let d = params.arch.embed_dim;
    match input {
        Input::Tokens(tokens) => {
            if params.arch.external_embeddings {
                return Err(TaggerError::Config(
                    "model expects external embeddings, got token indices".into(),
                ));
            }
            let vocab = params.weights.embedding.rows();
            if let Some(&bad) = tokens.iter().find(|&&i| i >= vocab) {
                return Err(TaggerError::Dimension(format!(
                    "token index {bad} outside vocabulary of {vocab}"
                )));
            }
        }
        Input::Vectors(vs) => {
            if let Some(v) = vs.iter().find(|v| v.len() != d) {
                return Err(TaggerError::Dimension(format!(
                    "embedding vector of width {}, expected {d}",
                    v.len()
                )));
            }
        }
    }
    Ok(())
}

/// Runs one LSTM direction over `n` steps of `input` (`n × in`).
fn run_direction<T: Scalar>(cell: &super::params::LstmCell<T>, input: &[T], n: usize, reverse: bool) -> DirTrace<T> {
    let h = cell.hidden();
    let in_dim = cell.w_input.cols();
    let mut tr = DirTrace {
        gates: vec![T::zero(); n * 4 * h],
        cells: vec![T::zero(); n * h],
        tanh_cells: vec![T::zero(); n * h],
        hidden: vec![T::zero(); n * h],
    };
    let zero = vec![T::zero(); h];
    let mut z = vec![T::zero(); 4 * h];
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        let prev = if step == 0 {
            None
        } else if reverse {
            Some(t + 1)
        } else {
            Some(t - 1)
        };
        z.copy_from_slice(&cell.bias);
        cell.w_input.mul_vec_add(&input[t * in_dim..(t + 1) * in_dim], &mut z);
        let (h_prev, c_prev) = match prev {
            Some(p) => (&tr.hidden[p * h..(p + 1) * h], &tr.cells[p * h..(p + 1) * h]),
            None => (&zero[..], &zero[..]),
        };
        cell.w_hidden.mul_vec_add(h_prev, &mut z);
        let mut c_new = vec![T::zero(); h];
        let gates = &mut tr.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[h + j]);
            let g = z[2 * h + j].tanh();
            let o = sigmoid(z[3 * h + j]);
            gates[j] = i;
            gates[h + j] = f;
            gates[2 * h + j] = g;
            gates[3 * h + j] = o;
            c_new[j] = f * c_prev[j] + i * g;
        }
        for j in 0..h {
            let tc = c_new[j].tanh();
            tr.cells[t * h + j] = c_new[j];
            tr.tanh_cells[t * h + j] = tc;
            tr.hidden[t * h + j] = gates[3 * h + j] * tc;
        }
    }
    tr
}

/// Forward pass recording intermediates. With `dropout` set, masks are
/// sampled from its generator.
pub fn forward_trace<T: Scalar, R: Rng>(
    params: &ModelParams<T>,
    input: Input<'_, T>,
    mut dropout: Option<Dropout<'_, R>>,
) -> Result<Trace<T>, TaggerError> {
    check_input(params, &input)?;
    let arch = &params.arch;
    let w = &params.weights;
    let total = input.len();
    let valid = input.valid_len();
    let d = arch.embed_dim;

    let mut embedded = vec![T::zero(); valid * d];
    for t in 0..valid {
        let src = match input {
            Input::Tokens(tokens) => w.embedding.row(tokens[t]),
            Input::Vectors(vs) => &vs[t][..],
        };
        embedded[t * d..(t + 1) * d].copy_from_slice(src);
    }
    let embed_mask = dropout_mask(valid * d, &mut dropout);
    apply_mask(&mut embedded, &embed_mask);

    let mut layers = Vec::with_capacity(w.layers.len());
    let mut layer_masks = Vec::with_capacity(w.layers.len());
    let mut current = embedded;
    for pair in &w.layers {
        let h = pair[0].hidden();
        let fwd = run_direction(&pair[0], &current, valid, false);
        let bwd = run_direction(&pair[1], &current, valid, true);
        let mut out = vec![T::zero(); valid * 2 * h];
        for t in 0..valid {
            out[t * 2 * h..t * 2 * h + h].copy_from_slice(&fwd.hidden[t * h..(t + 1) * h]);
            out[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&bwd.hidden[t * h..(t + 1) * h]);
        }
        let mask = dropout_mask(out.len(), &mut dropout);
        apply_mask(&mut out, &mask);
        layers.push(LayerTrace {
            input: std::mem::replace(&mut current, out),
            dirs: [fwd, bwd],
        });
        layer_masks.push(mask);
    }
    let features = current;
    let m = arch.feature_dim();

    let heads = w
        .heads
        .iter()
        .map(|head| {
            let classes = head.bias.len();
            let mut logits = Matrix::zeros(total, classes);
            for t in 0..total {
                let row = logits.row_mut(t);
                row.copy_from_slice(&head.bias);
                if t < valid {
                    head.weight.mul_vec_add(&features[t * m..(t + 1) * m], row);
                }
            }
            logits
        })
        .collect();

    Ok(Trace {
        valid,
        total,
        embed_mask,
        layers,
        layer_masks,
        features,
        logits: Logits { heads },
    })
}

/// Deterministic inference forward pass (no dropout).
pub fn forward<T: Scalar>(params: &ModelParams<T>, input: Input<'_, T>) -> Result<Logits<T>, TaggerError> {
    forward_trace::<T, rand::rngs::mock::StepRng>(params, input, None).map(|t| t.logits)
}

/// Summed cross-entropy over heads and unmasked positions. `targets[k][t]`
/// is the gold class of head `k` at position `t`.
pub fn loss<T: Scalar>(logits: &Logits<T>, targets: &[Vec<usize>], mask: &[bool]) -> T {
    let mut total = T::zero();
    for (head, gold) in logits.heads.iter().zip(targets) {
        for (t, (&g, &on)) in gold.iter().zip(mask).enumerate() {
            if on {
                let row = head.row(t);
                total += log_sum_exp(row) - row[g];
            }
        }
    }
    total
}

/// Backpropagates the summed cross-entropy through a recorded forward pass
/// and returns `(loss, gradients)`.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    trace: &Trace<T>,
    input: Input<'_, T>,
    targets: &[Vec<usize>],
    mask: &[bool],
) -> (T, Weights<T>) {
    let w = &params.weights;
    let mut grads = w.zeros_like();
    let valid = trace.valid;
    let m = params.arch.feature_dim();
    let mut d_features = vec![T::zero(); valid * m];
    let mut total = T::zero();

    for (k, (head, gold)) in w.heads.iter().zip(targets).enumerate() {
        let logits = &trace.logits.heads[k];
        let g_head = &mut grads.heads[k];
        for t in 0..trace.total {
            if !mask[t] {
                continue;
            }
            let row = logits.row(t);
            total += log_sum_exp(row) - row[gold[t]];
            let mut d_logits = softmax(row);
            d_logits[gold[t]] -= T::one();
            for (b, &dl) in g_head.bias.iter_mut().zip(&d_logits) {
                *b += dl;
            }
            if t < valid {
                let feat = &trace.features[t * m..(t + 1) * m];
                g_head.weight.add_outer(&d_logits, feat);
                head.weight
                    .tr_mul_vec_add(&d_logits, &mut d_features[t * m..(t + 1) * m]);
            }
        }
    }

    // gradient w.r.t. the current layer's (masked) output
    let mut d_out = d_features;
    for (l, pair) in w.layers.iter().enumerate().rev() {
        apply_mask(&mut d_out, &trace.layer_masks[l]);
        let lt = &trace.layers[l];
        let h = pair[0].hidden();
        let in_dim = pair[0].w_input.cols();
        let mut d_input = vec![T::zero(); valid * in_dim];
        #[allow(clippy::needless_range_loop)]
        for dir in 0..2 {
            backward_direction(
                &pair[dir],
                &mut grads.layers[l][dir],
                &lt.dirs[dir],
                &lt.input,
                &d_out,
                dir * h,
                2 * h,
                valid,
                dir == 1,
                &mut d_input,
            );
        }
        d_out = d_input;
    }

    apply_mask(&mut d_out, &trace.embed_mask);
    if let Input::Tokens(tokens) = input {
        let d = params.arch.embed_dim;
        for t in 0..valid {
            let row = grads.embedding.row_mut(tokens[t]);
            for (g, &x) in row.iter_mut().zip(&d_out[t * d..(t + 1) * d]) {
                *g += x;
            }
        }
    }
    (total, grads)
}

/// Backpropagation through time for one direction. `d_out` holds the
/// gradient of the concatenated layer output (row width `stride`) and this
/// direction's slice starts at `offset`.
#[allow(clippy::too_many_arguments)]
fn backward_direction<T: Scalar>(
    cell: &super::params::LstmCell<T>,
    grad: &mut super::params::LstmCell<T>,
    tr: &DirTrace<T>,
    input: &[T],
    d_out: &[T],
    offset: usize,
    stride: usize,
    n: usize,
    reverse: bool,
    d_input: &mut [T],
) {
    let h = cell.hidden();
    let in_dim = cell.w_input.cols();
    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    let mut dz = vec![T::zero(); 4 * h];
    let zero = vec![T::zero(); h];
    for step in (0..n).rev() {
        let t = if reverse { n - 1 - step } else { step };
        let prev = if step == 0 {
            None
        } else if reverse {
            Some(t + 1)
        } else {
            Some(t - 1)
        };
        let (h_prev, c_prev) = match prev {
            Some(p) => (&tr.hidden[p * h..(p + 1) * h], &tr.cells[p * h..(p + 1) * h]),
            None => (&zero[..], &zero[..]),
        };
        let gates = &tr.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let dh = d_out[t * stride + offset + j] + dh_next[j];
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = tr.tanh_cells[t * h + j];
            let d_o = dh * tc;
            let dc = dc_next[j] + dh * o * (T::one() - tc * tc);
            let d_i = dc * g;
            let d_g = dc * i;
            let d_f = dc * c_prev[j];
            dc_next[j] = dc * f;
            dz[j] = d_i * i * (T::one() - i);
            dz[h + j] = d_f * f * (T::one() - f);
            dz[2 * h + j] = d_g * (T::one() - g * g);
            dz[3 * h + j] = d_o * o * (T::one() - o);
        }
        let x = &input[t * in_dim..(t + 1) * in_dim];
        grad.w_input.add_outer(&dz, x);
        grad.w_hidden.add_outer(&dz, h_prev);
        axpy(T::one(), &dz, &mut grad.bias);
        cell.w_input
            .tr_mul_vec_add(&dz, &mut d_input[t * in_dim..(t + 1) * in_dim]);
        dh_next.iter_mut().for_each(|x| *x = T::zero());
        cell.w_hidden.tr_mul_vec_add(&dz, &mut dh_next);
    }
}

/// One training example: input, per-head targets, position mask.
pub type Sample<'a, T> = (Input<'a, T>, &'a [Vec<usize>], &'a [bool]);

/// Loss and summed gradients over a batch. Each example's gradient is
/// computed separately and then added, so duplicating an example doubles
/// the gradient exactly.
pub fn gradients<T: Scalar>(params: &ModelParams<T>, batch: &[Sample<'_, T>]) -> Result<(T, Weights<T>), TaggerError> {
    let mut total = T::zero();
    let mut acc = params.weights.zeros_like();
    for &(input, targets, mask) in batch {
        let trace = forward_trace::<T, rand::rngs::mock::StepRng>(params, input, None)?;
        let (l, g) = backward(params, &trace, input, targets, mask);
        total += l;
        acc.add_assign(&g);
    }
    Ok((total, acc))
}
