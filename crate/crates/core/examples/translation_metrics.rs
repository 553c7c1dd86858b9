//! Corpus BLEU, WER and calibration error on hand-written inputs.

use hardgate::calibration::{bin_predictions, ece, mce, PredictionRecord};
use hardgate::evaluation::{bleu, wer};

fn split(lines: &[&str]) -> Vec<Vec<String>> {
    lines.iter().map(|l| l.split_whitespace().map(String::from).collect()).collect()
}

fn main() -> hardgate::Result<()> {
    let references = split(&["the cat sat on the mat", "a dog barked at the moon"]);
    let hypotheses = split(&["the cat sat on a mat", "a dog barked at the moon"]);
    println!("bleu {:.4}", bleu(&hypotheses, &references, 4)?);
    println!("wer  {:.4}", wer(&hypotheses, &references)?);

    // an overconfident predictor: claims 0.9, right 60% of the time
    let records: Vec<PredictionRecord> = (0..100)
        .map(|i| PredictionRecord {
            confidence: 0.9,
            correct: i % 5 < 3,
        })
        .collect();
    let bins = bin_predictions(&records, 10)?;
    println!("ece  {:.4}", ece(&bins));
    println!("mce  {:.4}", mce(&bins));
    Ok(())
}
