//! Token and sentence gates on a hand-made two-sentence batch, and the loss
//! each gate mask produces.

use hardgate::distill::{ce_loss, hkd_loss, incorrect_class_grad_sum, sentence_gate, token_gate};
use hardgate::model::{LogitGrid, Targets};
use hardgate::tensor::Tensor;

fn main() -> hardgate::Result<()> {
    // two rows, three positions, four classes; row 1 is one token shorter
    let student = LogitGrid::new(Tensor::new(
        vec![2, 3, 4],
        vec![
            3.0, 0.5, 0.1, 0.0, //
            0.2, 2.5, 0.3, 0.1, //
            0.1, 0.1, 0.2, 0.4, //
            0.5, 0.5, 1.5, 0.0, //
            2.0, 0.1, 0.0, 0.3, //
            0.0, 0.0, 0.0, 0.0,
        ],
    )?)?;
    let teacher = LogitGrid::new(Tensor::new(
        vec![2, 3, 4],
        vec![
            1.0, 0.8, 0.6, 0.2, //
            0.3, 1.0, 0.9, 0.5, //
            0.2, 0.1, 0.1, 2.5, //
            0.2, 0.3, 2.4, 0.1, //
            1.2, 0.9, 0.1, 0.2, //
            0.0, 0.0, 0.0, 0.0,
        ],
    )?)?;
    let targets = Targets::new(2, 3, vec![0, 1, 3, 2, 0, 0], vec![true, true, true, true, true, false])?;
    let tau = 1.5;
    let teacher_probs = teacher.probs(tau)?;

    let tokens = token_gate(&student.probs(1.0)?, &teacher_probs, &targets)?;
    let sentences = sentence_gate(
        &student.sentence_logprob(&targets, 1.0)?,
        &teacher.sentence_logprob(&targets, tau)?,
        &targets,
    )?;
    println!("token gates    {:?}", tokens.alpha);
    println!("sentence gates {:?}", sentences.alpha);

    let ce = ce_loss(&student, &targets)?;
    for (name, gates) in [("token", &tokens), ("sentence", &sentences)] {
        let hkd = hkd_loss(&student, &teacher_probs, gates, &targets)?;
        let sums = incorrect_class_grad_sum(&student, &teacher_probs, &targets, gates)?;
        println!("{name:<8} hkd loss {:.4} (ce {:.4}), incorrect-class gradient sums {sums:.3?}", hkd.loss, ce.loss);
    }
    Ok(())
}
