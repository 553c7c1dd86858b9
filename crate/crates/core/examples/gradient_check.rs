//! Checks reverse-mode gradients of a tiny encoder-decoder against central
//! finite differences, one parameter tensor at a time.

use hardgate::distill::ce_loss_on_tape;
use hardgate::gradcheck::finite_diff_check;
use hardgate::model::{forward_on_tape, Batch, ModelConfig, ModelParams};
use hardgate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn loss_and_grads(params: &ModelParams, batch: &Batch) -> hardgate::Result<(f64, Vec<Tensor>)> {
    let pass = forward_on_tape::<ChaCha8Rng>(params, batch, None)?;
    let mut tape = pass.tape;
    let loss = ce_loss_on_tape(&mut tape, pass.logits, &batch.targets())?;
    let grads = tape.backward(loss)?;
    let per_param = pass
        .param_vars
        .iter()
        .zip(params.tensors())
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.value.shape())))
        .collect();
    Ok((tape.value(loss).data()[0], per_param))
}

fn main() -> hardgate::Result<()> {
    let mut config = ModelConfig::new(9, 6);
    config.embed_dim = 4;
    config.ffn_dim = 5;
    let mut params = ModelParams::init(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    // at the default init attention is nearly uniform and its gradients are
    // tiny, so differences drown in rounding; widen the weights first
    for t in params.tensors_mut() {
        t.value = t.value.map(|w| 8.0 * w);
    }
    let batch = Batch::from_sequences(&[vec![4, 5, 6], vec![7, 8]], &[vec![1, 5, 6, 2], vec![1, 8, 2]])?;

    for (k, name) in params.names().iter().enumerate() {
        let worst = finite_diff_check(
            |x| {
                let mut p = params.clone();
                p.tensors_mut()[k].value = x.clone();
                let (loss, grads) = loss_and_grads(&p, &batch)?;
                Ok((loss, grads[k].clone()))
            },
            &params.tensors()[k].value,
            1e-5,
        )?;
        println!("{name:<24} max relative error {worst:.2e}");
    }
    Ok(())
}
