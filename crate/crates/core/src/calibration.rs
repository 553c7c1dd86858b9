//! Confidence binning, ECE/MCE, reliability data and temperature selection.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, Batch, LogitGrid, ModelParams, Targets};
use crate::tensor::{argmax, log_softmax_row, softmax_row};

/// Temperatures tried when fitting a teacher.
pub const DEFAULT_TEMPERATURE_GRID: [f64; 5] = [0.8, 1.0, 1.5, 2.0, 2.5];
pub const DEFAULT_NUM_BINS: usize = 10;

/// Top-1 confidence and correctness of one prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub confidence: f64,
    pub correct: bool,
}

/// Equal-width, right-closed confidence bins over (0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationBins {
    pub num_bins: usize,
    pub counts: Vec<usize>,
    pub confidence_sums: Vec<f64>,
    pub correct_counts: Vec<usize>,
}

/// 0-based bin for `confidence`: bin `b` covers `(b/n, (b+1)/n]`, and 0
/// falls into the first bin.
pub fn bin_index(confidence: f64, num_bins: usize) -> usize {
    let upper = (confidence * num_bins as f64).ceil() as usize;
    upper.clamp(1, num_bins) - 1
}

pub fn bin_predictions(records: &[PredictionRecord], num_bins: usize) -> Result<CalibrationBins> {
    if num_bins == 0 {
        return Err(Error::Validation("need at least one bin".into()));
    }
    if records.is_empty() {
        return Err(Error::Validation("no prediction records to bin".into()));
    }
    let mut bins = CalibrationBins {
        num_bins,
        counts: vec![0; num_bins],
        confidence_sums: vec![0.0; num_bins],
        correct_counts: vec![0; num_bins],
    };
    for r in records {
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(Error::Validation(format!(
                "confidence {} outside [0, 1]",
                r.confidence
            )));
        }
        let b = bin_index(r.confidence, num_bins);
        bins.counts[b] += 1;
        bins.confidence_sums[b] += r.confidence;
        bins.correct_counts[b] += usize::from(r.correct);
    }
    Ok(bins)
}

/// One row of a reliability diagram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin: usize,
    pub count: usize,
}

impl CalibrationBins {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    fn gap(&self, b: usize) -> f64 {
        let n = self.counts[b] as f64;
        (self.correct_counts[b] as f64 / n - self.confidence_sums[b] / n).abs()
    }

    /// Empty bins report zero confidence and accuracy.
    pub fn reliability(&self) -> Vec<ReliabilityRow> {
        (0..self.num_bins)
            .map(|b| {
                let n = self.counts[b];
                let (conf, acc) = if n == 0 {
                    (0.0, 0.0)
                } else {
                    (
                        self.confidence_sums[b] / n as f64,
                        self.correct_counts[b] as f64 / n as f64,
                    )
                };
                ReliabilityRow {
                    bin_lo: b as f64 / self.num_bins as f64,
                    bin_hi: (b + 1) as f64 / self.num_bins as f64,
                    count: n,
                    mean_confidence: conf,
                    accuracy: acc,
                }
            })
            .collect()
    }

    /// Confidence histogram with 1-based bin labels.
    pub fn histogram(&self) -> Vec<HistogramRow> {
        self.counts
            .iter()
            .enumerate()
            .map(|(b, &count)| HistogramRow { bin: b + 1, count })
            .collect()
    }
}

/// Count-weighted mean gap between bin accuracy and bin confidence.
pub fn ece(bins: &CalibrationBins) -> f64 {
    let total = bins.total() as f64;
    (0..bins.num_bins)
        .filter(|&b| bins.counts[b] > 0)
        .fold(0.0, |acc, b| acc + bins.counts[b] as f64 / total * bins.gap(b))
}

/// Largest gap over nonempty bins.
pub fn mce(bins: &CalibrationBins) -> f64 {
    (0..bins.num_bins)
        .filter(|&b| bins.counts[b] > 0)
        .fold(0.0, |acc, b| f64::max(acc, bins.gap(b)))
}

/// Records from a logit grid at temperature τ, one per valid position.
pub fn records_from_logits(logits: &LogitGrid, targets: &Targets, temperature: f64) -> Result<Vec<PredictionRecord>> {
    crate::model::check_targets(logits.batch_size(), logits.positions(), targets)?;
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut probs = vec![0.0; logits.vocab_size()];
    let mut out = Vec::with_capacity(targets.num_valid());
    for i in 0..targets.len() {
        if !targets.valid[i] {
            continue;
        }
        softmax_row(logits.values.row(i), temperature, &mut probs);
        let top = argmax(&probs);
        out.push(PredictionRecord {
            confidence: probs[top].min(1.0),
            correct: top == targets.ids[i],
        });
    }
    Ok(out)
}

/// Teacher-forced next-token records over every valid target position.
pub fn collect_next_token_records(model: &ModelParams, temperature: f64, dataset: &[Batch]) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for batch in dataset {
        let logits = forward(model, batch)?;
        out.extend(records_from_logits(&logits, &batch.targets(), temperature)?);
    }
    Ok(out)
}

/// Summed NLL and token count of the reference tokens at temperature τ.
pub fn nll_sum(logits: &LogitGrid, targets: &Targets, temperature: f64) -> Result<(f64, usize)> {
    crate::model::check_targets(logits.batch_size(), logits.positions(), targets)?;
    let mut buf = vec![0.0; logits.vocab_size()];
    let mut total = 0.0;
    let mut n = 0;
    for i in 0..targets.len() {
        if targets.valid[i] {
            log_softmax_row(logits.values.row(i), temperature, &mut buf);
            total -= buf[targets.ids[i]];
            n += 1;
        }
    }
    Ok((total, n))
}

/// Mean NLL over a set of precomputed logit grids.
pub fn mean_nll(grids: &[(LogitGrid, Targets)], temperature: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for (logits, targets) in grids {
        let (s, c) = nll_sum(logits, targets, temperature)?;
        total += s;
        n += c;
    }
    if n == 0 {
        return Err(Error::Validation("no valid positions for NLL".into()));
    }
    Ok(total / n as f64)
}

/// Outcome of a grid search over temperatures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub nll: f64,
    /// `(τ, mean NLL)` for every grid point, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the grid point with the lowest mean NLL. Ties go to the τ closest
/// to 1, then to the smaller τ.
pub fn fit_temperature_on_logits(grids: &[(LogitGrid, Targets)], grid: &[f64]) -> Result<TemperatureFit> {
    if grid.is_empty() {
        return Err(Error::Validation("temperature grid is empty".into()));
    }
    if grids.is_empty() {
        return Err(Error::Validation("validation set is empty".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &tau in grid {
        scores.push((tau, mean_nll(grids, tau)?));
    }
    let best = scores
        .iter()
        .copied()
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then((a.0 - 1.0).abs().total_cmp(&(b.0 - 1.0).abs()))
                .then(a.0.total_cmp(&b.0))
        })
        .expect("grid nonempty");
    Ok(TemperatureFit {
        temperature: best.0,
        nll: best.1,
        scores,
    })
}

/// Grid-search temperature scaling of a frozen model on validation batches.
pub fn fit_temperature(model: &ModelParams, validation: &[Batch], grid: &[f64]) -> Result<TemperatureFit> {
    if validation.is_empty() {
        return Err(Error::Validation("validation set is empty".into()));
    }
    let grids = validation
        .iter()
        .map(|b| Ok((forward(model, b)?, b.targets())))
        .collect::<Result<Vec<_>>>()?;
    fit_temperature_on_logits(&grids, grid)
}

/// JSON summary accompanying a reliability CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub ece: f64,
    pub mce: f64,
    pub n: usize,
    pub num_bins: usize,
    pub temperature: f64,
}

impl CalibrationSummary {
    pub fn new(bins: &CalibrationBins, temperature: f64) -> Self {
        Self {
            ece: ece(bins),
            mce: mce(bins),
            n: bins.total(),
            num_bins: bins.num_bins,
            temperature,
        }
    }
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T], what: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("{what}: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(what, e))
}

pub fn write_reliability_csv<W: Write>(out: W, bins: &CalibrationBins) -> Result<()> {
    write_rows(out, &bins.reliability(), "reliability csv")
}

pub fn write_histogram_csv<W: Write>(out: W, bins: &CalibrationBins) -> Result<()> {
    write_rows(out, &bins.histogram(), "histogram csv")
}

pub fn write_records_csv<W: Write>(out: W, records: &[PredictionRecord]) -> Result<()> {
    write_rows(out, records, "records csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(confidence: f64, correct: bool) -> PredictionRecord {
        PredictionRecord { confidence, correct }
    }

    #[test]
    fn boundary_mapping() {
        let bins = bin_predictions(&[rec(0.05, true), rec(0.95, false)], 10).unwrap();
        assert_eq!(bins.counts[0], 1);
        assert_eq!(bins.counts[9], 1);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.100_000_01, 10), 1);
    }

    #[test]
    fn empty_and_out_of_range_rejected() {
        assert!(bin_predictions(&[], 10).is_err());
        assert!(bin_predictions(&[rec(1.2, true)], 10).is_err());
        assert!(bin_predictions(&[rec(0.5, true)], 0).is_err());
    }

    #[test]
    fn single_bin_arithmetic() {
        let records: Vec<_> = (0..10).map(|i| rec(0.8, i < 6)).collect();
        let bins = bin_predictions(&records, 1).unwrap();
        assert!((ece(&bins) - 0.2).abs() < 1e-12);
        assert!((mce(&bins) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn perfect_calibration_is_zero() {
        // confidence 0.75 in bin 8, three of four correct
        let records = vec![rec(0.75, true), rec(0.75, true), rec(0.75, true), rec(0.75, false)];
        let bins = bin_predictions(&records, 10).unwrap();
        assert_eq!(ece(&bins), 0.0);
        assert_eq!(mce(&bins), 0.0);
    }

    #[test]
    fn mce_picks_largest_gap() {
        // bin 3: conf 0.25, acc 0.2 (gap 0.05); bin 9: conf 0.85, acc 0.5 (gap 0.35)
        let mut records = vec![];
        records.extend((0..10).map(|i| rec(0.25, i < 2)));
        records.extend((0..10).map(|i| rec(0.85, i < 5)));
        let bins = bin_predictions(&records, 10).unwrap();
        assert!((mce(&bins) - 0.35).abs() < 1e-12);
        assert!((ece(&bins) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn temperature_tie_break_prefers_one_then_smaller() {
        use crate::tensor::Tensor;
        // all-zero logits: NLL identical at every τ
        let logits = LogitGrid::new(Tensor::zeros(&[1, 2, 3])).unwrap();
        let targets = Targets::dense(1, 2, vec![0, 2]).unwrap();
        let grids = vec![(logits, targets)];
        let fit = fit_temperature_on_logits(&grids, &[2.0, 0.8, 1.5, 1.0]).unwrap();
        assert_eq!(fit.temperature, 1.0);
        let fit = fit_temperature_on_logits(&grids, &[2.5, 1.5, 0.5]).unwrap();
        assert_eq!(fit.temperature, 0.5);
        assert!(fit_temperature_on_logits(&grids, &[]).is_err());
    }

    #[test]
    fn reliability_csv_has_one_row_per_bin() {
        let bins = bin_predictions(&[rec(0.3, true), rec(0.9, false)], 10).unwrap();
        let mut buf = Vec::new();
        write_reliability_csv(&mut buf, &bins).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bin_lo,bin_hi,count,mean_confidence,accuracy\n"));
        assert_eq!(text.lines().count(), 11);
    }
}
