//! Trains a label-smoothed teacher on the toy corpus, fits its temperature on
//! the validation split and prints a reliability table before and after.

use hardgate::calibration::{bin_predictions, collect_next_token_records, ece, mce};
use hardgate::datagen::{generate_corpus, make_batches, ToyGrammar, DEFAULT_MAX_TOKENS};
use hardgate::training::{build_teacher, LossMode, TrainConfig};

fn main() -> hardgate::Result<()> {
    let grammar = ToyGrammar::with_ambiguity(20, 0.7, 3, 8, 1)?;
    let corpus = generate_corpus(&grammar, 3000, 1)?;

    let mut config = TrainConfig::new(LossMode::LsUniform, 1);
    config.epochs = 20;
    config.optimizer.peak_lr = 2e-2;
    config.model.embed_dim = 32;
    config.model.ffn_dim = 64;
    let (teacher, log) = build_teacher(&config, &corpus)?;
    println!("best epoch {} of {}", log.best_epoch, log.epochs.len());
    if let Some(fit) = &teacher.fit {
        for (tau, nll) in &fit.scores {
            println!("  tau {tau:<4} validation nll {nll:.4}");
        }
    }
    println!("fitted temperature {}", teacher.temperature);

    let valid = make_batches(&corpus.valid, &corpus.vocab, DEFAULT_MAX_TOKENS, 0)?.batches;
    for tau in [1.0, teacher.temperature] {
        let bins = bin_predictions(&collect_next_token_records(&teacher.params, tau, &valid)?, 10)?;
        println!("\ntau {tau}: ece {:.4}, mce {:.4}", ece(&bins), mce(&bins));
        for row in bins.reliability().iter().filter(|r| r.count > 0) {
            println!(
                "  ({:.1}, {:.1}]  n={:<5} confidence {:.3}  accuracy {:.3}",
                row.bin_lo, row.bin_hi, row.count, row.mean_confidence, row.accuracy
            );
        }
    }
    Ok(())
}
