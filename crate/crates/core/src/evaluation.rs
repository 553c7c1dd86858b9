//! Greedy decoding, BLEU and WER, and checkpoint evaluation reports.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{self, bin_predictions, CalibrationBins, PredictionRecord};
use crate::datagen::{make_batches, write_file, ParallelCorpus, SentencePair, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{forward, special, Batch, Checkpoint, ModelParams};
use crate::tensor::argmax;

/// One decoded sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub hypothesis_ids: Vec<usize>,
    pub hypothesis: String,
    pub reference: String,
}

/// Greedy decoding of several sources at once. Each source must already end
/// with EOS. Returns hypothesis ids without BOS/EOS; decoding stops at EOS or
/// after `max_len` tokens (further capped by the model's position table).
pub fn greedy_decode_batch(model: &ModelParams, sources: &[Vec<usize>], max_len: usize) -> Result<Vec<Vec<usize>>> {
    let cap = max_len.min(model.config.max_len);
    let mut hyps: Vec<Vec<usize>> = vec![Vec::new(); sources.len()];
    let mut active: Vec<usize> = (0..sources.len()).collect();
    let mut step = 0;
    while !active.is_empty() && step < cap {
        // the trailing EOS is a placeholder the decoder never reads
        let srcs: Vec<Vec<usize>> = active.iter().map(|&i| sources[i].clone()).collect();
        let tgts: Vec<Vec<usize>> = active
            .iter()
            .map(|&i| {
                let mut t = Vec::with_capacity(step + 2);
                t.push(special::BOS);
                t.extend_from_slice(&hyps[i]);
                t.push(special::EOS);
                t
            })
            .collect();
        let logits = forward(model, &Batch::from_sequences(&srcs, &tgts)?)?;
        let positions = logits.positions();
        let mut still = Vec::with_capacity(active.len());
        for (r, &i) in active.iter().enumerate() {
            let next = argmax(logits.values.row(r * positions + step));
            if next == special::EOS {
                continue;
            }
            // PAD and BOS are never valid outputs
            let next = if next == special::PAD || next == special::BOS { special::UNK } else { next };
            hyps[i].push(next);
            still.push(i);
        }
        active = still;
        step += 1;
    }
    Ok(hyps)
}

/// Greedy decoding of a single tokenized source sentence.
pub fn greedy_decode(model: &ModelParams, vocab: &Vocabulary, source: &[String], max_len: usize) -> Result<Vec<usize>> {
    let mut ids = vocab.encode(source);
    ids.push(special::EOS);
    Ok(greedy_decode_batch(model, &[ids], max_len)?.remove(0))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn check_aligned(h: usize, r: usize) -> Result<()> {
    if h != r {
        return Err(Error::Validation(format!(
            "{h} hypotheses but {r} references"
        )));
    }
    Ok(())
}

/// Corpus BLEU in [0, 1]: geometric mean of clipped n-gram precisions for
/// n = 1..=max_n times the brevity penalty. Orders with zero matches use
/// `1 / (count + 1)`. Case-sensitive, token-level.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>], max_n: usize) -> Result<f64> {
    check_aligned(hypotheses.len(), references.len())?;
    if hypotheses.is_empty() || max_n == 0 {
        return Err(Error::Validation("bleu needs at least one pair and one order".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (gram, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..max_n)
        .map(|i| {
            if matches[i] == 0 {
                (1.0 / (totals[i] as f64 + 1.0)).ln()
            } else {
                (matches[i] as f64 / totals[i] as f64).ln()
            }
        })
        .sum::<f64>()
        / max_n as f64;
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * log_precision.exp())
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Total token edit distance over total reference tokens.
pub fn wer(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    check_aligned(hypotheses.len(), references.len())?;
    let ref_tokens: usize = references.iter().map(Vec::len).sum();
    if ref_tokens == 0 {
        return Err(Error::Validation("references contain no tokens".into()));
    }
    let edits: usize = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| edit_distance(h, r))
        .sum();
    Ok(edits as f64 / ref_tokens as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub num_bins: usize,
    /// Temperature applied to the model's logits for calibration metrics.
    pub temperature: f64,
    /// Token budget per batch for teacher-forced scoring.
    pub max_tokens: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            num_bins: calibration::DEFAULT_NUM_BINS,
            temperature: 1.0,
            max_tokens: crate::datagen::DEFAULT_MAX_TOKENS,
        }
    }
}

/// Calibration metrics come from teacher-forced scoring of the validation
/// split; BLEU and WER from greedy decoding of the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu: f64,
    pub wer: f64,
    pub valid_nll: f64,
    pub valid_accuracy: f64,
    pub ece: f64,
    pub mce: f64,
    pub num_bins: usize,
    pub num_records: usize,
    pub temperature: f64,
    pub reliability_csv: Option<String>,
    pub histogram_csv: Option<String>,
    pub records_csv: Option<String>,
    pub hypotheses_txt: Option<String>,
}

impl MetricsReport {
    pub fn is_finite(&self) -> bool {
        [self.bleu, self.wer, self.valid_nll, self.valid_accuracy, self.ece, self.mce]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything computed for one checkpoint, before it is written out.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub records: Vec<PredictionRecord>,
    pub bins: CalibrationBins,
    pub decodes: Vec<DecodeResult>,
}

pub const REPORT_FILE: &str = "metrics.json";
pub const RELIABILITY_FILE: &str = "reliability.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const HYPOTHESES_FILE: &str = "hypotheses.txt";
pub const REFERENCES_FILE: &str = "references.txt";

/// Rejects checkpoints trained on a different vocabulary.
pub fn check_vocabulary(checkpoint: &Checkpoint, vocab: &Vocabulary) -> Result<()> {
    if checkpoint.params.config.vocab_size != vocab.len() {
        return Err(Error::Incompatible(format!(
            "checkpoint vocabulary has {} entries, corpus has {}",
            checkpoint.params.config.vocab_size,
            vocab.len()
        )));
    }
    if let Some(fp) = &checkpoint.vocab_fingerprint {
        if *fp != vocab.fingerprint() {
            return Err(Error::Incompatible(
                "checkpoint was trained with a different vocabulary".into(),
            ));
        }
    }
    Ok(())
}

fn scoring_batches(pairs: &[SentencePair], vocab: &Vocabulary, max_tokens: usize) -> Result<Vec<Batch>> {
    let set = make_batches(pairs, vocab, max_tokens, 0)?;
    if set.skipped > 0 {
        return Err(Error::Capacity(format!(
            "{} pairs exceed max_tokens {max_tokens}",
            set.skipped
        )));
    }
    Ok(set.batches)
}

/// Decodes every pair of `pairs` greedily, in corpus order.
pub fn decode_pairs(model: &ModelParams, vocab: &Vocabulary, pairs: &[SentencePair]) -> Result<Vec<DecodeResult>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(CHUNK) {
        let sources: Vec<Vec<usize>> = chunk.iter().map(|p| p.source_ids(vocab)).collect();
        let hyps = greedy_decode_batch(model, &sources, model.config.max_len)?;
        for (pair, ids) in chunk.iter().zip(hyps) {
            out.push(DecodeResult {
                hypothesis: vocab.decode(&ids).join(" "),
                hypothesis_ids: ids,
                reference: pair.target.join(" "),
            });
        }
    }
    Ok(out)
}

pub fn evaluate_checkpoint(checkpoint: &Checkpoint, corpus: &ParallelCorpus, options: &EvalOptions) -> Result<Evaluation> {
    check_vocabulary(checkpoint, &corpus.vocab)?;
    if corpus.test.is_empty() || corpus.valid.is_empty() {
        return Err(Error::Validation("evaluation needs nonempty valid and test splits".into()));
    }
    let model = &checkpoint.params;
    let batches = scoring_batches(&corpus.valid, &corpus.vocab, options.max_tokens)?;
    let mut grids = Vec::with_capacity(batches.len());
    let mut records = Vec::new();
    for b in &batches {
        let logits = forward(model, b)?;
        let targets = b.targets();
        records.extend(calibration::records_from_logits(&logits, &targets, options.temperature)?);
        grids.push((logits, targets));
    }
    let valid_nll = calibration::mean_nll(&grids, options.temperature)?;
    let bins = bin_predictions(&records, options.num_bins)?;
    let valid_accuracy = records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64;

    let decodes = decode_pairs(model, &corpus.vocab, &corpus.test)?;
    let hyps: Vec<Vec<String>> = decodes.iter().map(|d| corpus.vocab.decode(&d.hypothesis_ids)).collect();
    let refs: Vec<Vec<String>> = corpus.test.iter().map(|p| p.target.clone()).collect();

    let report = MetricsReport {
        bleu: bleu(&hyps, &refs, 4)?,
        wer: wer(&hyps, &refs)?,
        valid_nll,
        valid_accuracy,
        ece: calibration::ece(&bins),
        mce: calibration::mce(&bins),
        num_bins: options.num_bins,
        num_records: records.len(),
        temperature: options.temperature,
        reliability_csv: None,
        histogram_csv: None,
        records_csv: None,
        hypotheses_txt: None,
    };
    Ok(Evaluation {
        report,
        records,
        bins,
        decodes,
    })
}

impl Evaluation {
    /// Writes the report and its CSV/text companions into `dir`, recording
    /// their file names in the returned report.
    pub fn write_artifacts(&self, dir: &Path) -> Result<MetricsReport> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut buf = Vec::new();
        calibration::write_reliability_csv(&mut buf, &self.bins)?;
        write_file(&dir.join(RELIABILITY_FILE), &buf)?;
        buf.clear();
        calibration::write_histogram_csv(&mut buf, &self.bins)?;
        write_file(&dir.join(HISTOGRAM_FILE), &buf)?;
        buf.clear();
        calibration::write_records_csv(&mut buf, &self.records)?;
        write_file(&dir.join(RECORDS_FILE), &buf)?;
        let hyps: String = self.decodes.iter().map(|d| d.hypothesis.clone() + "\n").collect();
        write_file(&dir.join(HYPOTHESES_FILE), hyps.as_bytes())?;
        let refs: String = self.decodes.iter().map(|d| d.reference.clone() + "\n").collect();
        write_file(&dir.join(REFERENCES_FILE), refs.as_bytes())?;

        let mut report = self.report.clone();
        report.reliability_csv = Some(RELIABILITY_FILE.into());
        report.histogram_csv = Some(HISTOGRAM_FILE.into());
        report.records_csv = Some(RECORDS_FILE.into());
        report.hypotheses_txt = Some(HYPOTHESES_FILE.into());
        write_file(&dir.join(REPORT_FILE), report.to_json().as_bytes())?;
        Ok(report)
    }
}
