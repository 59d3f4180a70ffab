use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::AgentAction;
use crate::nn::{seeded_rng, uniform_init, Params, Tape, Var};

pub const N_HEADS: usize = 4;
pub const N_LEVELS: usize = 3;
pub const N_LOGITS: usize = N_HEADS * N_LEVELS;

const WX: usize = 0;
const WH: usize = 1;
const B: usize = 2;
const AW: usize = 3;
const AB: usize = 4;
const CW: usize = 5;
const CB: usize = 6;

/// LSTM actor-critic for one agent: four three-way categorical heads and a
/// scalar value head on top of a single recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub obs_dim: usize,
    pub hidden: usize,
    pub params: Params,
}

/// Recurrent state carried through an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub log_probs: [f64; N_LOGITS],
    pub value: f64,
}

impl PolicyOutput {
    pub fn probs(&self, head: usize) -> [f64; N_LEVELS] {
        std::array::from_fn(|k| self.log_probs[head * N_LEVELS + k].exp())
    }

    /// Joint log-probability of the four chosen levels.
    pub fn log_prob(&self, action: &AgentAction) -> f64 {
        action
            .indices()
            .iter()
            .enumerate()
            .map(|(head, &k)| self.log_probs[head * N_LEVELS + k as usize])
            .sum()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> AgentAction {
        let mut idx = [0u8; N_HEADS];
        for (head, slot) in idx.iter_mut().enumerate() {
            let u: f64 = rng.gen();
            let p = self.probs(head);
            let mut acc = 0.0;
            *slot = (N_LEVELS - 1) as u8;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    *slot = k as u8;
                    break;
                }
            }
        }
        AgentAction::from_indices(idx)
    }

    pub fn greedy(&self) -> AgentAction {
        AgentAction::from_indices(std::array::from_fn(|head| {
            let p = &self.log_probs[head * N_LEVELS..(head + 1) * N_LEVELS];
            (0..N_LEVELS).fold(0, |best, k| if p[k] > p[best] { k } else { best }) as u8
        }))
    }
}

fn log_softmax_in_place(x: &mut [f64]) {
    let m = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter_mut().for_each(|v| *v -= lse);
}

fn sigmoid(x: f64) -> f64 {
    crate::nn::tape::sigmoid(x)
}

impl PolicyNet {
    pub fn new(obs_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let g = 4 * hidden;
        let mut p = Params::default();
        p.push("lstm.wx", uniform_init(&mut rng, obs_dim, g, hidden));
        p.push("lstm.wh", uniform_init(&mut rng, hidden, g, hidden));
        // forget-gate bias starts at one
        let mut b = Array2::zeros((1, g));
        b.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        p.push("lstm.b", b);
        // small actor weights so the initial policy is close to uniform
        p.push("actor.w", uniform_init(&mut rng, hidden, N_LOGITS, hidden) * 0.01);
        p.push("actor.b", Array2::zeros((1, N_LOGITS)));
        p.push("critic.w", uniform_init(&mut rng, hidden, 1, hidden));
        p.push("critic.b", Array2::zeros((1, 1)));
        PolicyNet {
            obs_dim,
            hidden,
            params: p,
        }
    }

    pub fn from_params(obs_dim: usize, hidden: usize, params: Params) -> Option<Self> {
        let expect = PolicyNet::new(obs_dim, hidden, 0);
        (expect.params.names == params.names && expect.params.shapes() == params.shapes()).then_some(PolicyNet {
            obs_dim,
            hidden,
            params,
        })
    }

    pub fn initial_state(&self) -> PolicyState {
        PolicyState {
            h: vec![0.0; self.hidden],
            c: vec![0.0; self.hidden],
        }
    }

    /// One recurrent step outside the tape, used while collecting rollouts.
    pub fn step(&self, obs: &[f64], state: &mut PolicyState) -> PolicyOutput {
        assert_eq!(obs.len(), self.obs_dim, "observation width");
        let t = &self.params.tensors;
        let d = self.hidden;
        let mut gates = t[B].row(0).to_vec();
        for (x, row) in obs.iter().zip(t[WX].rows()) {
            for (g, w) in gates.iter_mut().zip(row) {
                *g += x * w;
            }
        }
        for (x, row) in state.h.iter().zip(t[WH].rows()) {
            for (g, w) in gates.iter_mut().zip(row) {
                *g += x * w;
            }
        }
        for j in 0..d {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[d + j]);
            let gg = gates[2 * d + j].tanh();
            let o = sigmoid(gates[3 * d + j]);
            state.c[j] = f * state.c[j] + i * gg;
            state.h[j] = o * state.c[j].tanh();
        }
        let mut log_probs: [f64; N_LOGITS] = std::array::from_fn(|k| t[AB][[0, k]]);
        let mut value = t[CB][[0, 0]];
        for (j, &h) in state.h.iter().enumerate() {
            for (k, l) in log_probs.iter_mut().enumerate() {
                *l += h * t[AW][[j, k]];
            }
            value += h * t[CW][[j, 0]];
        }
        for head in log_probs.chunks_exact_mut(N_LEVELS) {
            log_softmax_in_place(head);
        }
        PolicyOutput { log_probs, value }
    }
}

/// Tape nodes for one time step of a batch of episodes.
pub struct TapeStep {
    /// `M × 12` per-head log-probabilities, heads side by side.
    pub log_probs: Var,
    /// `M × 1` value estimates.
    pub value: Var,
}

/// Unrolls the policy over `obs` (one `M × obs_dim` array per time step)
/// starting from a zero state.
pub fn unroll_on_tape(tape: &mut Tape, net: &PolicyNet, vars: &[Var], obs: &[Array2<f64>]) -> Vec<TapeStep> {
    let d = net.hidden;
    let m = obs.first().map_or(0, |o| o.nrows());
    let mut h = tape.leaf(Array2::zeros((m, d)));
    let mut c = tape.leaf(Array2::zeros((m, d)));
    let mut out = Vec::with_capacity(obs.len());
    for x in obs {
        let x = tape.leaf(x.clone());
        let gx = tape.affine(x, vars[WX], vars[B]);
        let gh = tape.matmul(h, vars[WH]);
        let gates = tape.add(gx, gh);
        let i = tape.slice_cols(gates, 0, d);
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(gates, d, 2 * d);
        let f = tape.sigmoid(f);
        let g = tape.slice_cols(gates, 2 * d, 3 * d);
        let g = tape.tanh(g);
        let o = tape.slice_cols(gates, 3 * d, 4 * d);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        h = tape.mul(o, tc);
        let logits = tape.affine(h, vars[AW], vars[AB]);
        let heads: Vec<Var> = (0..N_HEADS)
            .map(|k| {
                let s = tape.slice_cols(logits, k * N_LEVELS, (k + 1) * N_LEVELS);
                tape.log_softmax(s)
            })
            .collect();
        let log_probs = tape.concat_cols(&heads);
        let value = tape.affine(h, vars[CW], vars[CB]);
        out.push(TapeStep { log_probs, value });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_unroll_matches_plain_step() {
        let net = PolicyNet::new(6, 4, 3);
        let obs: Vec<Array2<f64>> = (0..5)
            .map(|t| Array2::from_shape_fn((1, 6), |(_, j)| ((t * 7 + j) as f64 * 0.37).sin()))
            .collect();
        let mut tape = Tape::new();
        let vars = net.params.on_tape(&mut tape);
        let steps = unroll_on_tape(&mut tape, &net, &vars, &obs);
        let mut state = net.initial_state();
        for (x, s) in obs.iter().zip(&steps) {
            let out = net.step(x.as_slice().unwrap(), &mut state);
            let lp = tape.value(s.log_probs);
            for k in 0..N_LOGITS {
                assert!((lp[[0, k]] - out.log_probs[k]).abs() < 1e-12);
            }
            assert!((tape.value(s.value)[[0, 0]] - out.value).abs() < 1e-12);
        }
    }

    #[test]
    fn heads_are_distributions_and_start_near_uniform() {
        let net = PolicyNet::new(6, 8, 1);
        let mut state = net.initial_state();
        let out = net.step(&[1.0, -2.0, 0.5, 3.0, 0.0, 1.0], &mut state);
        for head in 0..N_HEADS {
            let p = out.probs(head);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&q| (q - 1.0 / 3.0).abs() < 0.05));
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let net = PolicyNet::new(3, 4, 2);
        let out = net.step(&[0.1, 0.2, 0.3], &mut net.initial_state());
        let draw = |seed| {
            let mut rng = seeded_rng(seed);
            (0..20).map(|_| out.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        let a = out.sample(&mut seeded_rng(9));
        assert!((out.log_prob(&a) - (0..4).map(|h| out.log_probs[h * 3 + a.indices()[h] as usize]).sum::<f64>()).abs() < 1e-15);
    }
}
