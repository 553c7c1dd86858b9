//! Teacher-forced encoder-decoder forward pass recorded on a [`Tape`].

use rand::Rng;

use super::batch::{Batch, Targets};
use super::params::{Layout, ModelParams};
use crate::error::{Error, Result};
use crate::tape::{AttentionLayout, Gradients, Tape, Var};
use crate::tensor::{log_softmax_row, softmax_row, Tensor};

/// Unnormalized scores `[batch, positions, vocab]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitGrid {
    pub values: Tensor,
}

/// Per-position distributions `[batch, positions, vocab]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbGrid {
    pub values: Tensor,
}

impl LogitGrid {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(Error::Dimension {
                op: "logit grid",
                left: values.shape().to_vec(),
                right: vec![],
            });
        }
        Ok(Self { values })
    }

    pub fn batch_size(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn positions(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn probs(&self, temperature: f64) -> Result<ProbGrid> {
        Ok(ProbGrid {
            values: crate::tensor::softmax(&self.values, temperature)?,
        })
    }

    /// Per-row `Σ_t log P(y_t | c_<t; τ)` over valid positions.
    pub fn sentence_logprob(&self, targets: &Targets, temperature: f64) -> Result<Vec<f64>> {
        check_targets(self.batch_size(), self.positions(), targets)?;
        if !(temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mut buf = vec![0.0; self.vocab_size()];
        let mut out = vec![0.0; targets.rows];
        for (r, total) in out.iter_mut().enumerate() {
            for t in 0..targets.cols {
                let i = r * targets.cols + t;
                if targets.valid[i] {
                    log_softmax_row(self.values.row(i), temperature, &mut buf);
                    *total += buf[targets.ids[i]];
                }
            }
        }
        Ok(out)
    }
}

impl ProbGrid {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(Error::Dimension {
                op: "prob grid",
                left: values.shape().to_vec(),
                right: vec![],
            });
        }
        Ok(Self { values })
    }

    pub fn batch_size(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn positions(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.values.shape()[2]
    }

    /// Probability the grid assigns to the target id at flat position `i`.
    pub fn at_target(&self, i: usize, targets: &Targets) -> f64 {
        self.values.row(i)[targets.ids[i]]
    }
}

pub(crate) fn check_targets(rows: usize, cols: usize, targets: &Targets) -> Result<()> {
    if targets.rows != rows || targets.cols != cols {
        return Err(Error::Validation(format!(
            "targets are {}x{} but the grid has {rows}x{cols} positions",
            targets.rows, targets.cols
        )));
    }
    Ok(())
}

/// A recorded forward pass: the tape, the leaf for every parameter tensor
/// (canonical order), and the logits node `[batch * positions, vocab]`.
pub struct ForwardPass {
    pub tape: Tape,
    pub param_vars: Vec<Var>,
    pub logits: Var,
    pub batch_size: usize,
    pub positions: usize,
}

impl ForwardPass {
    pub fn logit_grid(&self) -> LogitGrid {
        let v = self.tape.value(self.logits).clone();
        let vocab = v.last_dim();
        LogitGrid {
            values: v
                .reshape(vec![self.batch_size, self.positions, vocab])
                .expect("logit node has batch*positions rows"),
        }
    }

    /// Adds the tape gradients of every parameter leaf into `params`.
    pub fn accumulate_grads(&self, grads: &Gradients, params: &mut ModelParams) -> Result<()> {
        for (var, dual) in self.param_vars.iter().zip(params.tensors_mut()) {
            if let Some(g) = grads.get(*var) {
                if !g.is_finite() {
                    return Err(Error::Numeric("non-finite parameter gradient".into()));
                }
                dual.accumulate(g)?;
            }
        }
        Ok(())
    }
}

struct Ctx<'a, R: Rng> {
    tape: Tape,
    vars: Vec<Var>,
    dropout: f64,
    rng: Option<&'a mut R>,
}

impl<R: Rng> Ctx<'_, R> {
    fn maybe_dropout(&mut self, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if self.dropout == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.dropout);
        let p = self.dropout;
        let n = self.tape.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.tape.scale(x, mask)
    }

    /// `x + Wo · attention(x Wq, kv Wk, kv Wv)`
    fn attention_block(&mut self, x: Var, kv: Var, base: usize, layout: AttentionLayout) -> Result<Var> {
        let v = &self.vars;
        let (wq, wk, wv, wo) = (v[base], v[base + 1], v[base + 2], v[base + 3]);
        let q = self.tape.matmul(x, wq)?;
        let k = self.tape.matmul(kv, wk)?;
        let val = self.tape.matmul(kv, wv)?;
        let a = self.tape.attention(q, k, val, layout)?;
        let o = self.tape.matmul(a, wo)?;
        let o = self.maybe_dropout(o)?;
        self.tape.add(x, o)
    }

    /// `x + W2 relu(W1 x + b1) + b2`
    fn ffn_block(&mut self, x: Var, base: usize) -> Result<Var> {
        let v = &self.vars;
        let (w1, b1, w2, b2) = (v[base], v[base + 1], v[base + 2], v[base + 3]);
        let h = self.tape.matmul(x, w1)?;
        let h = self.tape.add_bias(h, b1)?;
        let h = self.tape.relu(h);
        let o = self.tape.matmul(h, w2)?;
        let o = self.tape.add_bias(o, b2)?;
        let o = self.maybe_dropout(o)?;
        self.tape.add(x, o)
    }

    fn embed(&mut self, ids: Vec<usize>, len: usize) -> Result<Var> {
        let positions = (0..ids.len()).map(|i| i % len).collect();
        let tok = self.tape.gather(self.vars[Layout::TOK_EMB], ids)?;
        let pos = self.tape.gather(self.vars[Layout::POS_EMB], positions)?;
        let x = self.tape.add(tok, pos)?;
        self.maybe_dropout(x)
    }
}

/// Runs the model with teacher forcing and records every op on a fresh tape.
///
/// When `dropout_rng` is given and the config has nonzero dropout, masks are
/// drawn from it; otherwise the pass is deterministic.
pub fn forward_on_tape<R: Rng>(
    params: &ModelParams,
    batch: &Batch,
    dropout_rng: Option<&mut R>,
) -> Result<ForwardPass> {
    let cfg = &params.config;
    batch.validate(cfg.vocab_size)?;
    let positions = batch.num_positions();
    if batch.source_len > cfg.max_len || positions > cfg.max_len {
        return Err(Error::Capacity(format!(
            "sequence lengths (source {}, target {}) exceed max_len {}",
            batch.source_len, positions, cfg.max_len
        )));
    }
    let layout = Layout::new(cfg.num_layers);
    let mut ctx = Ctx {
        tape: Tape::new(),
        vars: Vec::with_capacity(layout.count()),
        dropout: cfg.dropout,
        rng: dropout_rng,
    };
    for t in params.tensors() {
        let var = ctx.tape.leaf(t.value.clone());
        ctx.vars.push(var);
    }

    let (bsz, src_len) = (batch.batch_size, batch.source_len);
    let mut enc = ctx.embed(batch.source_ids.clone(), src_len)?;
    let enc_layout = AttentionLayout {
        batch: bsz,
        query_len: src_len,
        key_len: src_len,
        key_mask: batch.source_mask.clone(),
        causal: false,
    };
    for l in 0..cfg.num_layers {
        let base = layout.encoder(l);
        enc = ctx.attention_block(enc, enc, base, enc_layout.clone())?;
        enc = ctx.ffn_block(enc, base + 4)?;
    }

    let mut dec_ids = Vec::with_capacity(bsz * positions);
    let mut dec_mask = Vec::with_capacity(bsz * positions);
    for b in 0..bsz {
        let row = b * batch.target_len;
        dec_ids.extend_from_slice(&batch.target_ids[row..row + positions]);
        dec_mask.extend_from_slice(&batch.target_mask[row..row + positions]);
    }
    let mut dec = ctx.embed(dec_ids, positions)?;
    let self_layout = AttentionLayout {
        batch: bsz,
        query_len: positions,
        key_len: positions,
        key_mask: dec_mask,
        causal: true,
    };
    let cross_layout = AttentionLayout {
        batch: bsz,
        query_len: positions,
        key_len: src_len,
        key_mask: batch.source_mask.clone(),
        causal: false,
    };
    for l in 0..cfg.num_layers {
        let base = layout.decoder(l);
        dec = ctx.attention_block(dec, dec, base, self_layout.clone())?;
        dec = ctx.attention_block(dec, enc, base + 4, cross_layout.clone())?;
        dec = ctx.ffn_block(dec, base + 8)?;
    }
    let logits = ctx.tape.matmul(dec, ctx.vars[layout.out_w()])?;
    let logits = ctx.tape.add_bias(logits, ctx.vars[layout.out_b()])?;
    if !ctx.tape.value(logits).is_finite() {
        return Err(Error::Numeric("forward pass produced non-finite logits".into()));
    }
    Ok(ForwardPass {
        tape: ctx.tape,
        param_vars: ctx.vars,
        logits,
        batch_size: bsz,
        positions,
    })
}

/// Deterministic (dropout-free) logits for every prediction position.
pub fn forward(params: &ModelParams, batch: &Batch) -> Result<LogitGrid> {
    let pass = forward_on_tape::<rand_chacha::ChaCha8Rng>(params, batch, None)?;
    Ok(pass.logit_grid())
}

/// `softmax(logits / τ)` for every prediction position.
pub fn next_token_dist(params: &ModelParams, batch: &Batch, temperature: f64) -> Result<ProbGrid> {
    forward(params, batch)?.probs(temperature)
}

/// Per-sentence log-probability of the reference target at temperature τ.
pub fn sentence_logprob(params: &ModelParams, batch: &Batch, temperature: f64) -> Result<Vec<f64>> {
    forward(params, batch)?.sentence_logprob(&batch.targets(), temperature)
}

/// Softmax of a single row at temperature τ (convenience for evaluation code).
pub fn row_probs(row: &[f64], temperature: f64) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    softmax_row(row, temperature, &mut out);
    out
}
