//! Small neural-network toolkit: the autodiff tape, parameter storage,
//! initialization and the Adam optimizer.

pub mod tape;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tape::{Grads, Tape, Var};

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn push(&mut self, name: impl Into<String>, t: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor as a tape leaf, in order.
    pub fn on_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(|t| t.dim()).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten) for the given names and shapes.
    pub fn from_flat(names: Vec<String>, shapes: &[(usize, usize)], flat: &[f64]) -> Option<Self> {
        let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if total != flat.len() || names.len() != shapes.len() {
            return None;
        }
        let mut at = 0;
        let tensors = shapes
            .iter()
            .map(|&(r, c)| {
                let t = Array2::from_shape_vec((r, c), flat[at..at + r * c].to_vec()).expect("sized");
                at += r * c;
                t
            })
            .collect();
        Some(Params { names, tensors })
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn hash(&self) -> String {
        let bytes: Vec<u8> = self.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
        crate::io::sha256_bytes(&bytes)
    }
}

/// Uniform `±1/sqrt(fan_in)` initialization, the common default for
/// recurrent and dense layers.
pub fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables it.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Params) -> Self {
        let zeros: Vec<_> = params.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// One update. Returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut Params, grads: &[Array2<f64>]) -> f64 {
        let norm = grads
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let clip = if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
            ..
        } = self.config;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g * clip;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = Params::default();
        p.push("x", array![[3.0, -2.0]]);
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                clip_norm: 0.0,
                ..AdamConfig::default()
            },
            &p,
        );
        for _ in 0..500 {
            let g = vec![p.tensors[0].mapv(|x| 2.0 * x)];
            opt.step(&mut p, &g);
        }
        assert!(p.tensors[0].iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn flatten_round_trip() {
        let mut p = Params::default();
        p.push("a", array![[1.0, 2.0], [3.0, 4.0]]);
        p.push("b", array![[5.0]]);
        let back = Params::from_flat(p.names.clone(), &p.shapes(), &p.flatten()).unwrap();
        assert_eq!(back, p);
    }
}
