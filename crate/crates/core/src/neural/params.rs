//! Architecture configuration, named parameter storage, and initialization.

use std::collections::BTreeMap;

use ndarray::ArrayD;
use rand::Rng;

use crate::error::{Error, Result};
use crate::neural::real::Real;
use crate::rng::{stream, tag};

/// Layer widths and counts of the encoder + head.
///
/// Defaults give the full model; tests shrink the fields for fast
/// finite-difference checks.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Terrain input channels (one-hot groups + normalized elevation).
    pub terrain_in: usize,
    /// Channels of both terrain conv layers.
    pub terrain_hidden: usize,
    pub terrain_out: usize,
    /// Channels of the first per-frame rain conv layer.
    pub rain_hidden: usize,
    /// Channels of the second rain conv layer (pooled to the frame feature).
    pub rain_out: usize,
    /// Transformer token width.
    pub token_dim: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub layers: usize,
    /// Number of rain frames per sample (transformer sequence length).
    pub seq_len: usize,
    /// Hidden width of the prediction head.
    pub head_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            terrain_in: crate::geogrid::TERRAIN_CHANNELS,
            terrain_hidden: 16,
            terrain_out: 16,
            rain_hidden: 8,
            rain_out: 16,
            token_dim: 32,
            heads: 2,
            ff_width: 64,
            layers: 3,
            seq_len: 48,
            head_hidden: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("terrain_in", self.terrain_in),
            ("terrain_hidden", self.terrain_hidden),
            ("terrain_out", self.terrain_out),
            ("rain_hidden", self.rain_hidden),
            ("rain_out", self.rain_out),
            ("token_dim", self.token_dim),
            ("heads", self.heads),
            ("ff_width", self.ff_width),
            ("layers", self.layers),
            ("seq_len", self.seq_len),
            ("head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                return Err(Error::validation(format!("encoder {name} must be positive")));
            }
        }
        if self.token_dim % self.heads != 0 {
            return Err(Error::validation(format!(
                "head count {} must divide token dim {}",
                self.heads, self.token_dim
            )));
        }
        Ok(())
    }

    /// Width of the unified embedding: pooled rain tokens + pooled terrain.
    pub fn embedding_dim(&self) -> usize {
        self.token_dim + self.terrain_out
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim / self.heads
    }
}

/// What a parameter tensor is, which decides its initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Fan-in uniform; fan-in is the product of all trailing dimensions.
    Weight,
    /// Zeros.
    Bias,
    /// Ones (layer-norm gain).
    Gain,
}

/// Architectural order of all parameter tensors: (name, shape, kind).
///
/// Initialization draws in exactly this order, so parameter values are a
/// pure function of (config, seed).
pub fn layer_specs(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>, ParamKind)> {
    use ParamKind::*;
    let mut specs: Vec<(String, Vec<usize>, ParamKind)> = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, kind: ParamKind| {
        specs.push((name.to_string(), shape, kind));
    };

    push("terrain.conv1.weight", vec![cfg.terrain_hidden, cfg.terrain_in, 3, 3], Weight);
    push("terrain.conv1.bias", vec![cfg.terrain_hidden], Bias);
    push("terrain.conv2.weight", vec![cfg.terrain_out, cfg.terrain_hidden, 3, 3], Weight);
    push("terrain.conv2.bias", vec![cfg.terrain_out], Bias);

    push("rain.conv1.weight", vec![cfg.rain_hidden, 1, 3, 3], Weight);
    push("rain.conv1.bias", vec![cfg.rain_hidden], Bias);
    push("rain.conv2.weight", vec![cfg.rain_out, cfg.rain_hidden, 3, 3], Weight);
    push("rain.conv2.bias", vec![cfg.rain_out], Bias);
    push("rain.token.weight", vec![cfg.token_dim, cfg.rain_out], Weight);
    push("rain.token.bias", vec![cfg.token_dim], Bias);

    for layer in 0..cfg.layers {
        let p = |suffix: &str| format!("transformer.{layer}.{suffix}");
        push(&p("ln1.gain"), vec![cfg.token_dim], Gain);
        push(&p("ln1.bias"), vec![cfg.token_dim], Bias);
        for proj in ["wq", "wk", "wv", "wo"] {
            push(&p(&format!("attn.{proj}.weight")), vec![cfg.token_dim, cfg.token_dim], Weight);
            push(&p(&format!("attn.{proj}.bias")), vec![cfg.token_dim], Bias);
        }
        push(&p("ln2.gain"), vec![cfg.token_dim], Gain);
        push(&p("ln2.bias"), vec![cfg.token_dim], Bias);
        push(&p("ff1.weight"), vec![cfg.ff_width, cfg.token_dim], Weight);
        push(&p("ff1.bias"), vec![cfg.ff_width], Bias);
        push(&p("ff2.weight"), vec![cfg.token_dim, cfg.ff_width], Weight);
        push(&p("ff2.bias"), vec![cfg.token_dim], Bias);
    }

    push("head.fc1.weight", vec![cfg.head_hidden, cfg.embedding_dim()], Weight);
    push("head.fc1.bias", vec![cfg.head_hidden], Bias);
    push("head.fc2.weight", vec![1, cfg.head_hidden], Weight);
    push("head.fc2.bias", vec![1], Bias);

    specs
}

/// Gradients keyed by parameter name.
pub type GradMap<F> = BTreeMap<String, ArrayD<F>>;

/// All model weights, keyed by layer name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Real> {
    pub config: EncoderConfig,
    pub seed: u64,
    entries: BTreeMap<String, ArrayD<F>>,
}

impl<F: Real> ModelParams<F> {
    /// Fan-in uniform weights, zero biases, unit layer-norm gains, drawn from
    /// a stream derived from `seed`.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, &[tag("model-init")]);
        let mut entries = BTreeMap::new();
        for (name, shape, kind) in layer_specs(config) {
            let array = match kind {
                ParamKind::Weight => {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    ArrayD::from_shape_fn(shape.as_slice(), |_| {
                        F::from_f64(rng.gen_range(-bound..bound))
                    })
                }
                ParamKind::Bias => ArrayD::zeros(shape.as_slice()),
                ParamKind::Gain => ArrayD::from_elem(shape.as_slice(), F::one()),
            };
            entries.insert(name, array);
        }
        Ok(ModelParams { config: config.clone(), seed, entries })
    }

    /// Build from explicit tensors, checking names and shapes against the
    /// config. Used by checkpoint loading.
    pub fn from_entries(
        config: &EncoderConfig,
        seed: u64,
        entries: BTreeMap<String, ArrayD<F>>,
    ) -> Result<Self> {
        config.validate()?;
        let specs = layer_specs(config);
        if entries.len() != specs.len() {
            return Err(Error::validation(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                entries.len()
            )));
        }
        for (name, shape, _) in &specs {
            let arr = entries
                .get(name)
                .ok_or_else(|| Error::validation(format!("missing parameter {name}")))?;
            if arr.shape() != shape.as_slice() {
                return Err(Error::validation(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    arr.shape(),
                    shape
                )));
            }
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("parameter {name} has non-finite values")));
            }
        }
        Ok(ModelParams { config: config.clone(), seed, entries })
    }

    pub fn get(&self, name: &str) -> &ArrayD<F> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<F> {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, ArrayD<F>> {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut BTreeMap<String, ArrayD<F>> {
        &mut self.entries
    }

    /// Precision conversion (f32 training <-> f64 gradient checking).
    pub fn convert<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            seed: self.seed,
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| G::from_f64(x.to_f64()))))
                .collect(),
        }
    }

    /// Zero gradient tensors for every parameter.
    pub fn zero_grads(&self) -> GradMap<F> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_with_48_dim_embedding() {
        let cfg = EncoderConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.embedding_dim(), 48);
        assert_eq!(cfg.head_dim(), 16);
    }

    #[test]
    fn head_count_must_divide_token_dim() {
        let cfg = EncoderConfig { heads: 5, ..EncoderConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_and_matches_specs() {
        let cfg = EncoderConfig::default();
        let a = ModelParams::<f32>::init(&cfg, 7).unwrap();
        let b = ModelParams::<f32>::init(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::<f32>::init(&cfg, 8).unwrap();
        assert_ne!(a, c);

        for (name, shape, kind) in layer_specs(&cfg) {
            let arr = a.get(&name);
            assert_eq!(arr.shape(), shape.as_slice(), "{name}");
            match kind {
                ParamKind::Bias => assert!(arr.iter().all(|&v| v == 0.0)),
                ParamKind::Gain => assert!(arr.iter().all(|&v| v == 1.0)),
                ParamKind::Weight => {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    assert!(arr.iter().all(|&v| v.abs() < bound));
                    assert!(arr.iter().any(|&v| v != 0.0));
                }
            }
        }
    }

    #[test]
    fn conversion_round_trips_exactly_through_f64() {
        let cfg = EncoderConfig::default();
        let params = ModelParams::<f32>::init(&cfg, 3).unwrap();
        let back: ModelParams<f32> = params.convert::<f64>().convert();
        assert_eq!(params, back);
    }

    #[test]
    fn from_entries_rejects_wrong_shape() {
        let cfg = EncoderConfig::default();
        let params = ModelParams::<f32>::init(&cfg, 1).unwrap();
        let mut entries = params.entries().clone();
        entries.insert("head.fc2.bias".into(), ArrayD::zeros(vec![2]));
        assert!(ModelParams::from_entries(&cfg, 1, entries).is_err());
    }
}
