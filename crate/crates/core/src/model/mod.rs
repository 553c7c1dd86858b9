//! Single-head encoder-decoder producing per-position next-token logits.

mod batch;
mod checkpoint;
mod forward;
mod params;

pub use batch::{special, Batch, Targets};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use forward::{
    forward, forward_on_tape, next_token_dist, row_probs, sentence_logprob, ForwardPass, LogitGrid,
    ProbGrid,
};
pub(crate) use forward::check_targets;
pub use params::{ModelConfig, ModelParams, INIT_RANGE};
