use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{DualTensor, Tensor};

/// Uniform init range for weight matrices; biases start at zero.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_ffn_dim")]
    pub ffn_dim: usize,
    #[serde(default = "default_num_layers")]
    pub num_layers: usize,
    pub max_len: usize,
    #[serde(default)]
    pub dropout: f64,
}

fn default_embed_dim() -> usize {
    64
}
fn default_ffn_dim() -> usize {
    128
}
fn default_num_layers() -> usize {
    1
}

impl ModelConfig {
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: default_embed_dim(),
            ffn_dim: default_ffn_dim(),
            num_layers: default_num_layers(),
            max_len,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("ffn_dim", self.ffn_dim),
            ("num_layers", self.num_layers),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

// Per-layer tensor counts in the canonical parameter order.
const ENC_LAYER: usize = 8; // wq wk wv wo w1 b1 w2 b2
const DEC_LAYER: usize = 12; // self(wq wk wv wo) cross(wq wk wv wo) w1 b1 w2 b2

/// Offsets of each parameter group inside [`ModelParams::tensors`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    layers: usize,
}

impl Layout {
    pub const TOK_EMB: usize = 0;
    pub const POS_EMB: usize = 1;

    pub fn new(layers: usize) -> Self {
        Self { layers }
    }

    pub fn encoder(&self, l: usize) -> usize {
        2 + l * ENC_LAYER
    }

    pub fn decoder(&self, l: usize) -> usize {
        2 + self.layers * ENC_LAYER + l * DEC_LAYER
    }

    pub fn out_w(&self) -> usize {
        2 + self.layers * (ENC_LAYER + DEC_LAYER)
    }

    pub fn out_b(&self) -> usize {
        self.out_w() + 1
    }

    pub fn count(&self) -> usize {
        self.out_b() + 1
    }
}

fn spec_list(config: &ModelConfig) -> Vec<(String, Vec<usize>, bool)> {
    let (v, d, f) = (config.vocab_size, config.embed_dim, config.ffn_dim);
    let mut out = vec![
        ("tok_emb".to_string(), vec![v, d], true),
        ("pos_emb".to_string(), vec![config.max_len, d], true),
    ];
    let attn = |prefix: &str, out: &mut Vec<(String, Vec<usize>, bool)>| {
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("{prefix}.{w}"), vec![d, d], true));
        }
    };
    let ffn = |prefix: &str, out: &mut Vec<(String, Vec<usize>, bool)>| {
        out.push((format!("{prefix}.w1"), vec![d, f], true));
        out.push((format!("{prefix}.b1"), vec![f], false));
        out.push((format!("{prefix}.w2"), vec![f, d], true));
        out.push((format!("{prefix}.b2"), vec![d], false));
    };
    for l in 0..config.num_layers {
        attn(&format!("enc.{l}.self"), &mut out);
        ffn(&format!("enc.{l}.ffn"), &mut out);
    }
    for l in 0..config.num_layers {
        attn(&format!("dec.{l}.self"), &mut out);
        attn(&format!("dec.{l}.cross"), &mut out);
        ffn(&format!("dec.{l}.ffn"), &mut out);
    }
    out.push(("out.w".to_string(), vec![d, v], true));
    out.push(("out.b".to_string(), vec![v], false));
    out
}

/// All trainable tensors of the encoder-decoder, in a fixed canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<DualTensor>,
}

impl ModelParams {
    /// Uniform(-0.08, 0.08) weights, zero biases.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, is_weight) in spec_list(&config) {
            let len = shape.iter().product();
            let data = if is_weight {
                (0..len).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect()
            } else {
                vec![0.0; len]
            };
            names.push(name);
            tensors.push(DualTensor::new(Tensor::new(shape, data)?));
        }
        debug_assert_eq!(tensors.len(), Layout::new(config.num_layers).count());
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_tensors(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = spec_list(&config);
        if expected.len() != named.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                expected.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((ename, eshape, _), (name, t)) in expected.into_iter().zip(named) {
            if ename != name || eshape != t.shape() {
                return Err(Error::Format(format!(
                    "tensor {name} {:?} does not match expected {ename} {eshape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Numeric(format!("tensor {name} has non-finite entries")));
            }
            names.push(name);
            tensors.push(DualTensor::new(t));
        }
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[DualTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [DualTensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&DualTensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DualTensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// SHA-256 over config and every parameter value, bit for bit.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            for v in t.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_range_and_layout() {
        let cfg = ModelConfig {
            embed_dim: 8,
            ffn_dim: 12,
            num_layers: 2,
            ..ModelConfig::new(10, 6)
        };
        let p = ModelParams::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let layout = Layout::new(2);
        assert_eq!(p.tensors().len(), layout.count());
        assert_eq!(p.names()[layout.out_w()], "out.w");
        assert_eq!(p.names()[layout.decoder(1)], "dec.1.self.wq");
        assert!(p.get("enc.0.ffn.b1").unwrap().value.data().iter().all(|&v| v == 0.0));
        assert!(p
            .get("tok_emb")
            .unwrap()
            .value
            .data()
            .iter()
            .all(|v| v.abs() < INIT_RANGE));
    }

    #[test]
    fn checksum_is_seed_determined() {
        let cfg = ModelConfig {
            embed_dim: 4,
            ffn_dim: 4,
            ..ModelConfig::new(6, 4)
        };
        let a = ModelParams::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = ModelParams::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::new(5, 5);
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        cfg.dropout = 0.3;
        cfg.embed_dim = 0;
        assert!(cfg.validate().is_err());
    }
}
