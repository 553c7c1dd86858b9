//! Hard-gate distillation: per-token and per-sentence gates, the gated loss,
//! and the baseline losses it is compared against.
//!
//! A gate value of 1 means the student is more confident in the reference
//! token (or sentence) than the calibrated teacher, so it learns from the
//! teacher's distribution; 0 means it learns from the one-hot reference.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_targets, LogitGrid, ProbGrid, Targets};
use crate::tape::{Tape, Var};
use crate::tensor::{entropy, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    Token,
    Sentence,
}

impl std::fmt::Display for GateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GateMode::Token => "token",
            GateMode::Sentence => "sentence",
        })
    }
}

/// Binary gate per prediction position.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMask {
    pub rows: usize,
    pub cols: usize,
    /// 0.0 or 1.0; always 0.0 on invalid positions.
    pub alpha: Vec<f64>,
    pub valid: Vec<bool>,
    pub mode: GateMode,
}

impl GateMask {
    /// Every valid position set to `value` (0 or 1).
    pub fn constant(targets: &Targets, value: f64, mode: GateMode) -> Result<Self> {
        if value != 0.0 && value != 1.0 {
            return Err(Error::Validation(format!("gate must be 0 or 1, got {value}")));
        }
        Ok(Self {
            rows: targets.rows,
            cols: targets.cols,
            alpha: targets.valid.iter().map(|&v| if v { value } else { 0.0 }).collect(),
            valid: targets.valid.clone(),
            mode,
        })
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Fraction of valid positions supervised by the teacher.
    pub fn token_mean(&self) -> f64 {
        let n = self.num_valid();
        if n == 0 {
            return 0.0;
        }
        let on: f64 = self
            .alpha
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|(a, _)| a)
            .sum();
        on / n as f64
    }

    /// Mean over rows of each row's gate fraction.
    pub fn sentence_mean(&self) -> f64 {
        let mut total = 0.0;
        let mut rows = 0usize;
        for r in 0..self.rows {
            let span = r * self.cols..(r + 1) * self.cols;
            let n = self.valid[span.clone()].iter().filter(|&&v| v).count();
            if n == 0 {
                continue;
            }
            let on: f64 = self.alpha[span.clone()]
                .iter()
                .zip(&self.valid[span])
                .filter(|(_, &v)| v)
                .map(|(a, _)| a)
                .sum();
            total += on / n as f64;
            rows += 1;
        }
        if rows == 0 {
            0.0
        } else {
            total / rows as f64
        }
    }

    /// Checks binariness, agreement with `targets`, zero gates on padding, and
    /// row-constancy in sentence mode.
    pub fn validate(&self, targets: &Targets) -> Result<()> {
        if self.rows != targets.rows || self.cols != targets.cols {
            return Err(Error::Validation(format!(
                "gate mask is {}x{}, targets are {}x{}",
                self.rows, self.cols, targets.rows, targets.cols
            )));
        }
        if self.valid != targets.valid {
            return Err(Error::Validation("gate validity differs from targets".into()));
        }
        for (i, (&a, &v)) in self.alpha.iter().zip(&self.valid).enumerate() {
            if a != 0.0 && a != 1.0 {
                return Err(Error::Validation(format!("non-binary gate {a} at {i}")));
            }
            if !v && a != 0.0 {
                return Err(Error::Validation(format!("gate defined on padding position {i}")));
            }
        }
        if self.mode == GateMode::Sentence {
            for r in 0..self.rows {
                let mut seen = None;
                for c in 0..self.cols {
                    let i = r * self.cols + c;
                    if !self.valid[i] {
                        continue;
                    }
                    match seen {
                        None => seen = Some(self.alpha[i]),
                        Some(s) if s != self.alpha[i] => {
                            return Err(Error::Validation(format!(
                                "sentence gate not constant on row {r}"
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }
}

fn same_grid(a: &ProbGrid, b: &ProbGrid) -> Result<()> {
    if a.values.shape() != b.values.shape() {
        return Err(Error::Validation(format!(
            "student grid {:?} and teacher grid {:?} differ",
            a.values.shape(),
            b.values.shape()
        )));
    }
    Ok(())
}

/// Token-level gate: α = 1 iff the student's probability of the reference
/// token strictly exceeds the teacher's (at the teacher's temperature).
pub fn token_gate(student: &ProbGrid, teacher: &ProbGrid, targets: &Targets) -> Result<GateMask> {
    same_grid(student, teacher)?;
    check_targets(student.batch_size(), student.positions(), targets)?;
    let alpha = (0..targets.len())
        .map(|i| {
            let fire = targets.valid[i] && student.at_target(i, targets) > teacher.at_target(i, targets);
            if fire {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(GateMask {
        rows: targets.rows,
        cols: targets.cols,
        alpha,
        valid: targets.valid.clone(),
        mode: GateMode::Token,
    })
}

/// Sentence-level gate: every valid position of a row gets α = 1 iff the
/// student's sentence log-probability strictly exceeds the teacher's.
pub fn sentence_gate(student_logprob: &[f64], teacher_logprob: &[f64], targets: &Targets) -> Result<GateMask> {
    if student_logprob.len() != targets.rows || teacher_logprob.len() != targets.rows {
        return Err(Error::Validation(format!(
            "sentence scores cover {} and {} rows, targets have {}",
            student_logprob.len(),
            teacher_logprob.len(),
            targets.rows
        )));
    }
    let mut alpha = vec![0.0; targets.len()];
    for r in 0..targets.rows {
        if student_logprob[r] > teacher_logprob[r] {
            for c in 0..targets.cols {
                let i = r * targets.cols + c;
                if targets.valid[i] {
                    alpha[i] = 1.0;
                }
            }
        }
    }
    Ok(GateMask {
        rows: targets.rows,
        cols: targets.cols,
        alpha,
        valid: targets.valid.clone(),
        mode: GateMode::Sentence,
    })
}

/// Loss value with its gradient with respect to the student logits.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub loss: f64,
    /// Same shape as the logit grid.
    pub logit_grad: Tensor,
}

/// Per-row weights averaging over valid positions.
fn mean_weights(targets: &Targets) -> Result<Vec<f64>> {
    let n = targets.num_valid();
    if n == 0 {
        return Err(Error::Validation("no valid target positions".into()));
    }
    let w = 1.0 / n as f64;
    Ok(targets.valid.iter().map(|&v| if v { w } else { 0.0 }).collect())
}

fn logits_dims(tape: &Tape, logits: Var, targets: &Targets) -> Result<usize> {
    let z = tape.value(logits);
    if z.num_rows() != targets.len() {
        return Err(Error::Dimension {
            op: "loss",
            left: z.shape().to_vec(),
            right: vec![targets.rows, targets.cols],
        });
    }
    let vocab = z.last_dim();
    if let Some(bad) = targets
        .ids
        .iter()
        .zip(&targets.valid)
        .find(|(&id, &v)| v && id >= vocab)
    {
        return Err(Error::Validation(format!("target id {} outside vocabulary", bad.0)));
    }
    Ok(vocab)
}

/// Target rows `(1 - a_i) · onehot(y_i) + a_i · soft_i`, computed for every
/// position. `soft` is consulted only where `a_i != 0`.
fn mixed_targets(targets: &Targets, vocab: usize, mix: impl Fn(usize) -> f64, soft: impl Fn(usize) -> Vec<f64>) -> Tensor {
    let mut out = Tensor::zeros(&[targets.len(), vocab]);
    for i in 0..targets.len() {
        if !targets.valid[i] {
            continue;
        }
        let a = mix(i);
        let row = out.row_mut(i);
        if a != 0.0 {
            for (o, s) in row.iter_mut().zip(soft(i)) {
                *o = a * s;
            }
        }
        row[targets.ids[i]] += 1.0 - a;
    }
    out
}

/// Mean negative log-likelihood of the reference tokens.
pub fn ce_loss_on_tape(tape: &mut Tape, logits: Var, targets: &Targets) -> Result<Var> {
    let vocab = logits_dims(tape, logits, targets)?;
    let q = mixed_targets(targets, vocab, |_| 0.0, |_| unreachable!());
    tape.soft_cross_entropy(logits, q, mean_weights(targets)?, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Uniform,
    Unigram,
}

/// Resolves a label-smoothing prior over `vocab` classes.
pub fn label_prior(kind: PriorKind, vocab: usize, unigram_counts: Option<&[u64]>) -> Result<Vec<f64>> {
    match kind {
        PriorKind::Uniform => Ok(vec![1.0 / vocab as f64; vocab]),
        PriorKind::Unigram => {
            let counts = unigram_counts
                .ok_or_else(|| Error::Config("unigram prior requires token counts".into()))?;
            if counts.len() != vocab {
                return Err(Error::Config(format!(
                    "unigram counts cover {} ids, vocabulary has {vocab}",
                    counts.len()
                )));
            }
            let total: u64 = counts.iter().sum();
            if total == 0 {
                return Err(Error::Config("unigram counts are all zero".into()));
            }
            Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
        }
    }
}

/// Cross-entropy against `(1 - ε) · onehot + ε · prior`.
pub fn ls_loss_on_tape(tape: &mut Tape, logits: Var, targets: &Targets, epsilon: f64, prior: &[f64]) -> Result<Var> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    let vocab = logits_dims(tape, logits, targets)?;
    if prior.len() != vocab {
        return Err(Error::Config(format!(
            "prior has {} classes, logits have {vocab}",
            prior.len()
        )));
    }
    let q = mixed_targets(targets, vocab, |_| epsilon, |_| prior.to_vec());
    tape.soft_cross_entropy(logits, q, mean_weights(targets)?, 1.0)
}

/// Conventional soft-gate KD: `(1 - α) · CE(y, P_θ) + α · CE(P_φ(τ), P_θ(τ))`,
/// with the temperature applied to both models in the distillation term.
pub fn soft_kd_loss_on_tape(
    tape: &mut Tape,
    logits: Var,
    teacher_logits: &LogitGrid,
    targets: &Targets,
    alpha: f64,
    tau: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("soft gate must lie in [0, 1], got {alpha}")));
    }
    let vocab = logits_dims(tape, logits, targets)?;
    check_targets(teacher_logits.batch_size(), teacher_logits.positions(), targets)?;
    if teacher_logits.vocab_size() != vocab {
        return Err(Error::Validation("teacher and student vocabularies differ".into()));
    }
    let teacher = teacher_logits.probs(tau)?;
    if !teacher.values.is_finite() {
        return Err(Error::Numeric("teacher distribution is not finite".into()));
    }
    let w = mean_weights(targets)?;
    let hard = mixed_targets(targets, vocab, |_| 0.0, |_| unreachable!());
    let hard_w = w.iter().map(|x| x * (1.0 - alpha)).collect();
    let hard_term = tape.soft_cross_entropy(logits, hard, hard_w, 1.0)?;
    let soft_w = w.iter().map(|x| x * alpha).collect();
    let soft_term = tape.soft_cross_entropy(logits, teacher.values.reshape(vec![targets.len(), vocab])?, soft_w, tau)?;
    tape.add(hard_term, soft_term)
}

/// The gated loss: per valid position, cross-entropy of the student (at
/// temperature 1) against `(1 - α_t) · onehot(y_t) + α_t · P_φ(· ; τ)`,
/// averaged over valid positions. Only the teacher is temperature-scaled;
/// `teacher_probs` must already be computed at τ.
pub fn hkd_loss_on_tape(
    tape: &mut Tape,
    logits: Var,
    teacher_probs: &ProbGrid,
    gates: &GateMask,
    targets: &Targets,
) -> Result<Var> {
    let vocab = logits_dims(tape, logits, targets)?;
    check_targets(teacher_probs.batch_size(), teacher_probs.positions(), targets)?;
    if teacher_probs.vocab_size() != vocab {
        return Err(Error::Validation("teacher and student vocabularies differ".into()));
    }
    gates.validate(targets)?;
    let tp = &teacher_probs.values;
    for i in 0..targets.len() {
        if gates.alpha[i] != 0.0 && !tp.row(i).iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("teacher distribution at position {i} is not finite")));
        }
    }
    let q = mixed_targets(targets, vocab, |i| gates.alpha[i], |i| tp.row(i).to_vec());
    tape.soft_cross_entropy(logits, q, mean_weights(targets)?, 1.0)
}

/// Runs a tape loss builder on a standalone logit grid and returns the loss
/// with its logit gradient.
fn standalone<F>(logits: &LogitGrid, build: F) -> Result<LossValue>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let (b, t, v) = (logits.batch_size(), logits.positions(), logits.vocab_size());
    let z = tape.leaf(logits.values.clone().reshape(vec![b * t, v])?);
    let loss = build(&mut tape, z)?;
    let grads = tape.backward(loss)?;
    let logit_grad = grads
        .get(z)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(&[b * t, v]))
        .reshape(vec![b, t, v])?;
    Ok(LossValue {
        loss: tape.value(loss).data()[0],
        logit_grad,
    })
}

pub fn ce_loss(student_logits: &LogitGrid, targets: &Targets) -> Result<LossValue> {
    check_targets(student_logits.batch_size(), student_logits.positions(), targets)?;
    standalone(student_logits, |tape, z| ce_loss_on_tape(tape, z, targets))
}

pub fn ls_loss(
    student_logits: &LogitGrid,
    targets: &Targets,
    epsilon: f64,
    prior: PriorKind,
    unigram_counts: Option<&[u64]>,
) -> Result<LossValue> {
    check_targets(student_logits.batch_size(), student_logits.positions(), targets)?;
    let prior = label_prior(prior, student_logits.vocab_size(), unigram_counts)?;
    standalone(student_logits, |tape, z| ls_loss_on_tape(tape, z, targets, epsilon, &prior))
}

pub fn soft_kd_loss(
    student_logits: &LogitGrid,
    teacher_logits: &LogitGrid,
    targets: &Targets,
    alpha: f64,
    tau: f64,
) -> Result<LossValue> {
    check_targets(student_logits.batch_size(), student_logits.positions(), targets)?;
    standalone(student_logits, |tape, z| {
        soft_kd_loss_on_tape(tape, z, teacher_logits, targets, alpha, tau)
    })
}

pub fn hkd_loss(
    student_logits: &LogitGrid,
    teacher_probs: &ProbGrid,
    gates: &GateMask,
    targets: &Targets,
) -> Result<LossValue> {
    check_targets(student_logits.batch_size(), student_logits.positions(), targets)?;
    standalone(student_logits, |tape, z| {
        hkd_loss_on_tape(tape, z, teacher_probs, gates, targets)
    })
}

/// Closed-form sum of per-position logit gradients over every class except
/// the reference: `1 - P_θ(y)` where α = 0 and `P_φ(y; τ) - P_θ(y)` where
/// α = 1. Invalid positions report 0.
pub fn incorrect_class_grad_sum(
    student_logits: &LogitGrid,
    teacher_probs: &ProbGrid,
    targets: &Targets,
    gates: &GateMask,
) -> Result<Vec<f64>> {
    check_targets(student_logits.batch_size(), student_logits.positions(), targets)?;
    gates.validate(targets)?;
    let student = student_logits.probs(1.0)?;
    same_grid(&student, teacher_probs)?;
    Ok((0..targets.len())
        .map(|i| {
            if !targets.valid[i] {
                return 0.0;
            }
            let p = student.at_target(i, targets);
            if gates.alpha[i] == 1.0 {
                teacher_probs.at_target(i, targets) - p
            } else {
                1.0 - p
            }
        })
        .collect())
}

/// `(1 - α) · onehot(target) + α · teacher`.
pub fn soft_target(target: usize, teacher: &[f64], alpha: f64) -> Vec<f64> {
    let mut out: Vec<f64> = teacher.iter().map(|p| alpha * p).collect();
    out[target] += 1.0 - alpha;
    out
}

/// `(H(P_φ(τ)), H(ỹ), H(y))` for one position.
pub fn supervision_entropies(teacher: &[f64], soft: &[f64], onehot: &[f64]) -> Result<(f64, f64, f64)> {
    Ok((entropy(teacher)?, entropy(soft)?, entropy(onehot)?))
}

/// How often `H(P_φ) >= H(ỹ) >= H(y)` holds over a set of positions.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EntropyOrdering {
    pub checked: usize,
    pub holds: usize,
    pub violations: usize,
}

impl EntropyOrdering {
    pub fn frequency(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.holds as f64 / self.checked as f64
        }
    }

    /// Tallies the ordering at every valid position whose teacher argmax is
    /// the reference token, interpolating with weight `alpha`.
    pub fn accumulate(&mut self, teacher_probs: &ProbGrid, targets: &Targets, alpha: f64) -> Result<()> {
        check_targets(teacher_probs.batch_size(), teacher_probs.positions(), targets)?;
        let v = teacher_probs.vocab_size();
        for i in 0..targets.len() {
            if !targets.valid[i] {
                continue;
            }
            let teacher = teacher_probs.values.row(i);
            if crate::tensor::argmax(teacher) != targets.ids[i] {
                continue;
            }
            let soft = soft_target(targets.ids[i], teacher, alpha);
            let mut onehot = vec![0.0; v];
            onehot[targets.ids[i]] = 1.0;
            let (ht, hs, hy) = supervision_entropies(teacher, &soft, &onehot)?;
            self.checked += 1;
            if ht >= hs && hs >= hy {
                self.holds += 1;
            } else {
                self.violations += 1;
            }
        }
        Ok(())
    }
}

/// One line of the gate trace: batch-level gate statistics at a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateTraceRecord {
    pub step: usize,
    pub mode: GateMode,
    pub alpha_mean: f64,
    pub count_valid: usize,
}

/// Appends gate records to a CSV stream, writing the header first when
/// `with_header` is set.
pub fn write_gate_trace<W: Write>(out: W, records: &[GateTraceRecord], with_header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(with_header).from_writer(out);
    for r in records {
        w.serialize(r)
            .map_err(|e| Error::Format(format!("gate trace: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("gate trace", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[Vec<f64>]) -> ProbGrid {
        let v = rows[0].len();
        let data = rows.iter().flatten().copied().collect();
        ProbGrid::new(Tensor::new(vec![1, rows.len(), v], data).unwrap()).unwrap()
    }

    fn logits(rows: &[Vec<f64>]) -> LogitGrid {
        let v = rows[0].len();
        let data = rows.iter().flatten().copied().collect();
        LogitGrid::new(Tensor::new(vec![1, rows.len(), v], data).unwrap()).unwrap()
    }

    #[test]
    fn token_gate_strict_inequality() {
        let targets = Targets::dense(1, 2, vec![0, 0]).unwrap();
        let student = grid(&[vec![0.9, 0.1], vec![0.6, 0.4]]);
        let teacher = grid(&[vec![0.6, 0.4], vec![0.6, 0.4]]);
        let g = token_gate(&student, &teacher, &targets).unwrap();
        assert_eq!(g.alpha, vec![1.0, 0.0]);
    }

    #[test]
    fn padding_never_gated() {
        let targets = Targets::new(1, 2, vec![0, 0], vec![true, false]).unwrap();
        let student = grid(&[vec![0.9, 0.1], vec![0.9, 0.1]]);
        let teacher = grid(&[vec![0.1, 0.9], vec![0.1, 0.9]]);
        let g = token_gate(&student, &teacher, &targets).unwrap();
        assert_eq!(g.alpha, vec![1.0, 0.0]);
        let s = sentence_gate(&[0.0], &[-1.0], &targets).unwrap();
        assert_eq!(s.alpha, vec![1.0, 0.0]);
    }

    #[test]
    fn sentence_gate_example_rows() {
        let targets = Targets::dense(2, 2, vec![0, 0, 0, 0]).unwrap();
        let s = [2.0 * 0.9f64.ln(), 2.0 * 0.5f64.ln()];
        let t = [2.0 * 0.8f64.ln(), 2.0 * 0.5f64.ln()];
        let g = sentence_gate(&s, &t, &targets).unwrap();
        assert_eq!(g.alpha, vec![1.0, 1.0, 0.0, 0.0]);
        assert!(sentence_gate(&s[..1], &t, &targets).is_err());
    }

    #[test]
    fn gate_on_padding_is_rejected_by_loss() {
        let targets = Targets::new(1, 2, vec![0, 1], vec![true, false]).unwrap();
        let mut g = GateMask::constant(&targets, 0.0, GateMode::Token).unwrap();
        g.alpha[1] = 1.0;
        let teacher = grid(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let z = logits(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(hkd_loss(&z, &teacher, &g, &targets), Err(Error::Validation(_))));
    }

    #[test]
    fn nan_teacher_is_numeric_error() {
        let targets = Targets::dense(1, 1, vec![0]).unwrap();
        let g = GateMask::constant(&targets, 1.0, GateMode::Token).unwrap();
        let teacher = grid(&[vec![f64::NAN, 0.5]]);
        let z = logits(&[vec![0.0, 0.0]]);
        assert!(matches!(hkd_loss(&z, &teacher, &g, &targets), Err(Error::Numeric(_))));
    }

    #[test]
    fn ce_uniform_is_log_vocab() {
        let targets = Targets::dense(1, 2, vec![1, 3]).unwrap();
        let z = logits(&[vec![0.0; 4], vec![0.0; 4]]);
        let v = ce_loss(&z, &targets).unwrap();
        assert!((v.loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ls_requires_counts_for_unigram() {
        let targets = Targets::dense(1, 1, vec![0]).unwrap();
        let z = logits(&[vec![0.0, 1.0]]);
        assert!(matches!(
            ls_loss(&z, &targets, 0.1, PriorKind::Unigram, None),
            Err(Error::Config(_))
        ));
        assert!(ls_loss(&z, &targets, 0.1, PriorKind::Unigram, Some(&[3, 1])).is_ok());
        assert!(matches!(
            ls_loss(&z, &targets, 1.0, PriorKind::Uniform, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn soft_kd_rejects_bad_gate() {
        let targets = Targets::dense(1, 1, vec![0]).unwrap();
        let z = logits(&[vec![0.0, 1.0]]);
        assert!(matches!(soft_kd_loss(&z, &z, &targets, 1.5, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn gate_means_token_and_sentence_weighted() {
        let targets = Targets::new(2, 3, vec![0; 6], vec![true, true, true, true, false, false]).unwrap();
        let mut g = GateMask::constant(&targets, 0.0, GateMode::Token).unwrap();
        g.alpha[0] = 1.0;
        g.alpha[3] = 1.0;
        assert!((g.token_mean() - 0.5).abs() < 1e-15);
        assert!((g.sentence_mean() - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn sentence_mode_must_be_row_constant() {
        let targets = Targets::dense(1, 2, vec![0, 0]).unwrap();
        let mut g = GateMask::constant(&targets, 0.0, GateMode::Sentence).unwrap();
        g.alpha[0] = 1.0;
        assert!(g.validate(&targets).is_err());
        g.mode = GateMode::Token;
        assert!(g.validate(&targets).is_ok());
    }

    #[test]
    fn gate_trace_csv() {
        let mut buf = Vec::new();
        write_gate_trace(
            &mut buf,
            &[GateTraceRecord {
                step: 3,
                mode: GateMode::Sentence,
                alpha_mean: 0.25,
                count_valid: 12,
            }],
            true,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,mode,alpha_mean,count_valid\n3,sentence,0.25,12\n"
        );
    }
}
