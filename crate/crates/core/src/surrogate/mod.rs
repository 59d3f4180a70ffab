//! Learned emulator of the climate engine: a recurrent (or temporal
//! convolutional) encoder over the historical part of an emission window,
//! concatenated with the current-year emissions and mapped to ΔT by a
//! two-layer MLP head.

mod fast;
mod graph;
mod stepper;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::io::{read_container, write_container};
use crate::nn::{seeded_rng, uniform_init, Params};

pub use fast::FastModel;
pub use graph::{forward_batch_tape, loss_on_tape};
pub use stepper::SurrogateStepper;
pub use train::{evaluate, evaluate_predictions, predict_refs, train, EvalReport, TrainingMetrics};

pub const CHECKPOINT_KIND: &str = "surrogate";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gru,
    Lstm,
    Tcn,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(EncoderKind::Gru),
            "lstm" => Ok(EncoderKind::Lstm),
            "tcn" => Ok(EncoderKind::Tcn),
            other => Err(Error::InvalidInput(format!("unknown encoder {other}"))),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Gru => "gru",
            EncoderKind::Lstm => "lstm",
            EncoderKind::Tcn => "tcn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Silu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => crate::nn::tape::gelu(x),
            Activation::Silu => crate::nn::tape::silu(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub encoder: EncoderKind,
    pub hidden_dim: usize,
    /// Recurrent layers for GRU/LSTM; for TCN this must equal the number of dilations.
    pub encoder_layers: usize,
    pub head_hidden: usize,
    pub activation: Activation,
    pub window: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early stopping on validation RMSE.
    pub patience: usize,
    /// Halve the learning rate after this many epochs without improvement; 0 disables.
    pub lr_patience: usize,
    pub min_learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Use at most this many training samples per epoch (0 = all).
    pub samples_per_epoch: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            encoder: EncoderKind::Gru,
            hidden_dim: 64,
            encoder_layers: 1,
            head_hidden: 64,
            activation: Activation::Gelu,
            window: crate::dataset::DEFAULT_WINDOW,
            tcn_kernel: 4,
            tcn_dilations: vec![1, 2, 4, 8, 16],
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 100,
            patience: 10,
            lr_patience: 4,
            min_learning_rate: 1e-5,
            clip_norm: 1.0,
            seed: 0,
            samples_per_epoch: 0,
        }
    }
}

impl SurrogateConfig {
    /// Defaults for an encoder kind (5 layers for TCN, 1 otherwise).
    pub fn for_encoder(encoder: EncoderKind) -> Self {
        let base = SurrogateConfig::default();
        let layers = match encoder {
            EncoderKind::Tcn => base.tcn_dilations.len(),
            _ => 1,
        };
        SurrogateConfig {
            encoder,
            encoder_layers: layers,
            ..base
        }
    }

    /// Small configuration that trains in minutes on one core: 8 hidden
    /// units, a 32-wide head, 50 epochs of batch 64 at learning rate 3e-3.
    pub fn desk(encoder: EncoderKind) -> Self {
        SurrogateConfig {
            hidden_dim: 8,
            head_hidden: 32,
            epochs: 50,
            batch_size: 64,
            learning_rate: 3e-3,
            ..Self::for_encoder(encoder)
        }
    }

    pub fn tcn_receptive_field(&self) -> usize {
        1 + (self.tcn_kernel.saturating_sub(1)) * self.tcn_dilations.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.head_hidden == 0 || self.encoder_layers == 0 {
            return Err(Error::Config("hidden sizes and layer counts must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("the encoder needs at least one historical row".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.encoder == EncoderKind::Tcn {
            if self.tcn_kernel < 2 || self.tcn_dilations.is_empty() {
                return Err(Error::Config("TCN needs kernel >= 2 and at least one dilation".into()));
            }
            if self.encoder_layers != self.tcn_dilations.len() {
                return Err(Error::Config(format!(
                    "TCN has {} dilations but encoder_layers = {}",
                    self.tcn_dilations.len(),
                    self.encoder_layers
                )));
            }
            if self.tcn_receptive_field() < self.window {
                return Err(Error::Config(format!(
                    "TCN receptive field {} is shorter than the window {}",
                    self.tcn_receptive_field(),
                    self.window
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub config: SurrogateConfig,
    pub n_inputs: usize,
    pub params: Params,
    pub norm: NormStats,
    pub metrics: TrainingMetrics,
    pub registry_hash: String,
}

impl SurrogateModel {
    /// Freshly initialized parameters.
    pub fn init(config: SurrogateConfig, norm: NormStats, registry_hash: String) -> Result<Self> {
        config.validate()?;
        let c = norm.n_channels();
        if c == 0 {
            return Err(Error::Config("normalization stats have no channels".into()));
        }
        let d = config.hidden_dim;
        let mut rng = seeded_rng(config.seed);
        let mut p = Params::default();
        match config.encoder {
            EncoderKind::Gru => {
                for l in 0..config.encoder_layers {
                    let input = if l == 0 { c } else { d };
                    p.push(format!("gru{l}.wx"), uniform_init(&mut rng, input, 3 * d, d));
                    p.push(format!("gru{l}.wh"), uniform_init(&mut rng, d, 3 * d, d));
                    p.push(format!("gru{l}.bx"), uniform_init(&mut rng, 1, 3 * d, d));
                    p.push(format!("gru{l}.bh"), uniform_init(&mut rng, 1, 3 * d, d));
                }
            }
            EncoderKind::Lstm => {
                for l in 0..config.encoder_layers {
                    let input = if l == 0 { c } else { d };
                    p.push(format!("lstm{l}.wx"), uniform_init(&mut rng, input, 4 * d, d));
                    p.push(format!("lstm{l}.wh"), uniform_init(&mut rng, d, 4 * d, d));
                    let mut b = uniform_init(&mut rng, 1, 4 * d, d);
                    // forget-gate bias starts at 1
                    b.slice_mut(ndarray::s![.., d..2 * d]).fill(1.0);
                    p.push(format!("lstm{l}.b"), b);
                }
            }
            EncoderKind::Tcn => {
                for l in 0..config.encoder_layers {
                    let input = if l == 0 { c } else { d };
                    let fan_in = input * config.tcn_kernel;
                    for k in 0..config.tcn_kernel {
                        p.push(format!("tcn{l}.w{k}"), uniform_init(&mut rng, input, d, fan_in));
                    }
                    p.push(format!("tcn{l}.b"), uniform_init(&mut rng, 1, d, fan_in));
                }
                p.push("tcn.proj", uniform_init(&mut rng, c, d, c));
            }
        }
        let h = config.head_hidden;
        p.push("head.w1", uniform_init(&mut rng, d + c, h, d + c));
        p.push("head.b1", uniform_init(&mut rng, 1, h, d + c));
        p.push("head.w2", uniform_init(&mut rng, h, 1, h));
        p.push("head.b2", ndarray::Array2::zeros((1, 1)));
        Ok(SurrogateModel {
            config,
            n_inputs: c,
            params: p,
            norm,
            metrics: TrainingMetrics::default(),
            registry_hash,
        })
    }

    pub fn window(&self) -> usize {
        self.config.window
    }

    /// Values per window, `(W + 1) * |C|`.
    pub fn window_len(&self) -> usize {
        (self.config.window + 1) * self.n_inputs
    }

    pub fn param(&self, name: &str) -> &ndarray::Array2<f64> {
        let i = self.params.names.iter().position(|n| n == name).expect("known parameter");
        &self.params.tensors[i]
    }

    /// ΔT in K for one raw (un-normalized) window, oldest row first.
    pub fn forward(&self, window: &[f64]) -> Result<f64> {
        self.check_window(window)?;
        FastModel::new(self).predict_raw(window)
    }

    /// ΔT for many raw windows through the batched (tape) path.
    pub fn forward_batch(&self, windows: &[Vec<f64>]) -> Result<Vec<f64>> {
        for w in windows {
            self.check_window(w)?;
        }
        let mut batch = ndarray::Array2::zeros((windows.len(), self.window_len()));
        for (mut row, w) in batch.rows_mut().into_iter().zip(windows) {
            let mut x = w.clone();
            self.norm.apply(&mut x);
            row.assign(&ndarray::ArrayView1::from(&x));
        }
        let z = forward_batch_tape(self, &batch);
        Ok(z.iter().map(|&v| self.norm.denormalize_temp(v)).collect())
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.window_len() {
            return Err(Error::Shape {
                what: "surrogate window",
                expected: self.window_len(),
                got: window.len(),
            });
        }
        if window.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite surrogate input".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            n_inputs: self.n_inputs,
            norm: self.norm.clone(),
            metrics: self.metrics.clone(),
            registry_hash: self.registry_hash.clone(),
            names: self.params.names.clone(),
            shapes: self.params.shapes(),
        };
        write_container(path, CHECKPOINT_KIND, &header, &self.params.flatten())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, flat): (CheckpointHeader, Vec<f64>) = read_container(path, CHECKPOINT_KIND)?;
        if h.version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("checkpoint version {} unsupported", h.version)));
        }
        h.config.validate()?;
        let params = Params::from_flat(h.names, &h.shapes, &flat)
            .ok_or_else(|| Error::format(path, "parameter shapes do not match payload"))?;
        if !params.all_finite() {
            return Err(Error::format(path, "non-finite parameters"));
        }
        let model = SurrogateModel {
            config: h.config,
            n_inputs: h.n_inputs,
            params,
            norm: h.norm,
            metrics: h.metrics,
            registry_hash: h.registry_hash,
        };
        let fresh = SurrogateModel::init(model.config.clone(), model.norm.clone(), String::new())?;
        if fresh.params.names != model.params.names || fresh.params.shapes() != model.params.shapes() {
            return Err(Error::format(path, "parameter layout does not match the configuration"));
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: SurrogateConfig,
    n_inputs: usize,
    norm: NormStats,
    metrics: TrainingMetrics,
    registry_hash: String,
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn toy_norm(c: usize) -> NormStats {
        NormStats {
            gas_mean: (0..c).map(|i| 1.0 + i as f64).collect(),
            gas_std: (0..c).map(|i| 0.5 + 0.25 * i as f64).collect(),
            temp_mean: 1.2,
            temp_std: 0.6,
        }
    }

    pub fn tiny(kind: EncoderKind, seed: u64) -> SurrogateModel {
        let mut cfg = SurrogateConfig::for_encoder(kind);
        cfg.hidden_dim = 4;
        cfg.head_hidden = 5;
        cfg.window = 6;
        cfg.seed = seed;
        if kind == EncoderKind::Tcn {
            cfg.tcn_kernel = 2;
            cfg.tcn_dilations = vec![1, 2, 4];
            cfg.encoder_layers = 3;
        }
        SurrogateModel::init(cfg, toy_norm(3), "toy".into()).unwrap()
    }

    pub fn toy_windows(model: &SurrogateModel, n: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::Rng;
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| (0..model.window_len()).map(|_| rng.gen_range(0.0..3.0)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn zero_network_outputs_denormalized_zero() {
        let mut m = tiny(EncoderKind::Gru, 1);
        for t in &mut m.params.tensors {
            t.fill(0.0);
        }
        let w = toy_windows(&m, 1, 0);
        assert_eq!(m.forward(&w[0]).unwrap(), m.norm.temp_mean);
    }

    #[test]
    fn batch_matches_single_calls() {
        for kind in [EncoderKind::Gru, EncoderKind::Lstm, EncoderKind::Tcn] {
            let m = tiny(kind, 3);
            let ws = toy_windows(&m, 7, 1);
            let batch = m.forward_batch(&ws).unwrap();
            for (w, b) in ws.iter().zip(&batch) {
                let single = m.forward(w).unwrap();
                assert!((single - b).abs() < 1e-6, "{kind}: {single} vs {b}");
            }
        }
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let m = tiny(EncoderKind::Lstm, 0);
        assert!(matches!(m.forward(&[0.0; 3]), Err(Error::Shape { .. })));
        let mut w = toy_windows(&m, 1, 0).remove(0);
        w[4] = f64::NAN;
        assert!(m.forward(&w).is_err());
    }

    #[test]
    fn tcn_receptive_field_is_checked() {
        let mut cfg = SurrogateConfig::for_encoder(EncoderKind::Tcn);
        assert!(cfg.tcn_receptive_field() >= cfg.window);
        cfg.tcn_dilations = vec![1, 2, 4, 8, 1];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [EncoderKind::Gru, EncoderKind::Lstm, EncoderKind::Tcn] {
            let m = tiny(kind, 5);
            let path = dir.path().join(format!("{kind}.ckpt"));
            m.save(&path).unwrap();
            let back = SurrogateModel::load(&path).unwrap();
            assert_eq!(back, m);
            let w = toy_windows(&m, 1, 2).remove(0);
            assert_eq!(back.forward(&w).unwrap().to_bits(), m.forward(&w).unwrap().to_bits());
        }
    }
}
