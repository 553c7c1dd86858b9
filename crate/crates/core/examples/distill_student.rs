//! Full two-phase run: an LS teacher, then CE, token-gated and sentence-gated
//! students, compared on calibration and BLEU.

use hardgate::datagen::{generate_corpus, ToyGrammar};
use hardgate::evaluation::{evaluate_checkpoint, EvalOptions};
use hardgate::model::Checkpoint;
use hardgate::training::{build_teacher, train, LossMode, TrainConfig};

fn config(mode: LossMode) -> TrainConfig {
    let mut c = TrainConfig::new(mode, 3);
    c.epochs = 20;
    c.optimizer.peak_lr = 2e-2;
    c.model.embed_dim = 32;
    c.model.ffn_dim = 64;
    c
}

fn main() -> hardgate::Result<()> {
    let grammar = ToyGrammar::with_ambiguity(20, 0.7, 3, 8, 3)?;
    let corpus = generate_corpus(&grammar, 3000, 3)?;
    let (teacher, _) = build_teacher(&config(LossMode::LsUniform), &corpus)?;
    println!("teacher temperature {}", teacher.temperature);

    for mode in [LossMode::Ce, LossMode::HkdToken, LossMode::HkdSentence] {
        let outcome = train(&config(mode), &corpus, Some(&teacher))?;
        let mut ck = Checkpoint::new(outcome.params);
        ck.vocab_fingerprint = Some(corpus.vocab.fingerprint());
        let report = evaluate_checkpoint(&ck, &corpus, &EvalOptions::default())?.report;
        let gates = match mode {
            LossMode::HkdToken => outcome.log.alpha_head_tail(0.1, false),
            LossMode::HkdSentence => outcome.log.alpha_head_tail(0.1, true),
            _ => None,
        };
        print!("{mode:<13} ece {:.4}  bleu {:.2}  nll {:.4}", report.ece, 100.0 * report.bleu, report.valid_nll);
        match gates {
            Some((head, tail)) => println!("  gate mean {head:.3} -> {tail:.3}"),
            None => println!(),
        }
    }
    Ok(())
}
