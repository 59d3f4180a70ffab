//! Batched forward pass on the autodiff tape, used for training and for
//! gradient checks.

use std::collections::BTreeSet;

use ndarray::Array2;

use super::{Activation, EncoderKind, SurrogateModel};
use crate::nn::{Tape, Var};

fn act(tape: &mut Tape, a: Activation, x: Var) -> Var {
    match a {
        Activation::Gelu => tape.gelu(x),
        Activation::Silu => tape.silu(x),
    }
}

/// Parameter leaves looked up by name.
pub(crate) struct Leaves<'a> {
    model: &'a SurrogateModel,
    vars: &'a [Var],
}

impl Leaves<'_> {
    fn get(&self, name: &str) -> Var {
        let i = self
            .model
            .params
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[i]
    }
}

/// Builds the prediction graph for a normalized batch `B x (W+1)C` and
/// returns the `B x 1` output node (normalized temperature).
pub(crate) fn build_forward(tape: &mut Tape, model: &SurrogateModel, params: &[Var], batch: Var) -> Var {
    let p = Leaves { model, vars: params };
    let cfg = &model.config;
    let c = model.n_inputs;
    let w = cfg.window;
    let d = cfg.hidden_dim;
    let rows = tape.value(batch).nrows();
    let xs: Vec<Var> = (0..w).map(|t| tape.slice_cols(batch, t * c, (t + 1) * c)).collect();
    let h = match cfg.encoder {
        EncoderKind::Gru => {
            let mut seq = xs;
            for l in 0..cfg.encoder_layers {
                let (wx, wh) = (p.get(&format!("gru{l}.wx")), p.get(&format!("gru{l}.wh")));
                let (bx, bh) = (p.get(&format!("gru{l}.bx")), p.get(&format!("gru{l}.bh")));
                let mut h = tape.leaf(Array2::zeros((rows, d)));
                let mut out = Vec::with_capacity(w);
                for &x in &seq {
                    let gx = tape.affine(x, wx, bx);
                    let gh = tape.affine(h, wh, bh);
                    let (gx_r, gh_r) = (tape.slice_cols(gx, 0, d), tape.slice_cols(gh, 0, d));
                    let (gx_z, gh_z) = (tape.slice_cols(gx, d, 2 * d), tape.slice_cols(gh, d, 2 * d));
                    let (gx_n, gh_n) = (tape.slice_cols(gx, 2 * d, 3 * d), tape.slice_cols(gh, 2 * d, 3 * d));
                    let r = tape.add(gx_r, gh_r);
                    let r = tape.sigmoid(r);
                    let z = tape.add(gx_z, gh_z);
                    let z = tape.sigmoid(z);
                    let rn = tape.mul(r, gh_n);
                    let n = tape.add(gx_n, rn);
                    let n = tape.tanh(n);
                    // h' = n + z (h - n)
                    let diff = tape.sub(h, n);
                    let zd = tape.mul(z, diff);
                    h = tape.add(n, zd);
                    out.push(h);
                }
                seq = out;
            }
            *seq.last().expect("window is non-empty")
        }
        EncoderKind::Lstm => {
            let mut seq = xs;
            for l in 0..cfg.encoder_layers {
                let (wx, wh, b) = (
                    p.get(&format!("lstm{l}.wx")),
                    p.get(&format!("lstm{l}.wh")),
                    p.get(&format!("lstm{l}.b")),
                );
                let mut h = tape.leaf(Array2::zeros((rows, d)));
                let mut cell = tape.leaf(Array2::zeros((rows, d)));
                let mut out = Vec::with_capacity(w);
                for &x in &seq {
                    let gx = tape.affine(x, wx, b);
                    let gh = tape.matmul(h, wh);
                    let g = tape.add(gx, gh);
                    let i = tape.slice_cols(g, 0, d);
                    let i = tape.sigmoid(i);
                    let f = tape.slice_cols(g, d, 2 * d);
                    let f = tape.sigmoid(f);
                    let gg = tape.slice_cols(g, 2 * d, 3 * d);
                    let gg = tape.tanh(gg);
                    let o = tape.slice_cols(g, 3 * d, 4 * d);
                    let o = tape.sigmoid(o);
                    let fc = tape.mul(f, cell);
                    let ig = tape.mul(i, gg);
                    cell = tape.add(fc, ig);
                    let tc = tape.tanh(cell);
                    h = tape.mul(o, tc);
                    out.push(h);
                }
                seq = out;
            }
            *seq.last().expect("window is non-empty")
        }
        EncoderKind::Tcn => {
            let needed = tcn_needed_positions(w, cfg.tcn_kernel, &cfg.tcn_dilations);
            let proj = p.get("tcn.proj");
            let mut prev: Vec<Option<Var>> = xs.iter().map(|&x| Some(x)).collect();
            for (l, &dil) in cfg.tcn_dilations.iter().enumerate() {
                let ws: Vec<Var> = (0..cfg.tcn_kernel).map(|k| p.get(&format!("tcn{l}.w{k}"))).collect();
                let b = p.get(&format!("tcn{l}.b"));
                let mut cur = vec![None; w];
                for &t in &needed[l] {
                    let mut acc: Option<Var> = None;
                    for (k, &wk) in ws.iter().enumerate() {
                        if t < k * dil {
                            break;
                        }
                        let src = prev[t - k * dil].expect("needed position computed");
                        let term = tape.matmul(src, wk);
                        acc = Some(match acc {
                            None => term,
                            Some(a) => tape.add(a, term),
                        });
                    }
                    let pre = tape.add_row(acc.expect("kernel tap 0 always exists"), b);
                    let a = act(tape, cfg.activation, pre);
                    let src = prev[t].expect("needed position computed");
                    let res = if l == 0 { tape.matmul(src, proj) } else { src };
                    cur[t] = Some(tape.add(a, res));
                }
                prev = cur;
            }
            prev[w - 1].expect("last position computed")
        }
    };
    let x_now = tape.slice_cols(batch, w * c, (w + 1) * c);
    let z = tape.concat_cols(&[h, x_now]);
    let a = tape.affine(z, p.get("head.w1"), p.get("head.b1"));
    let a = act(tape, cfg.activation, a);
    tape.affine(a, p.get("head.w2"), p.get("head.b2"))
}

/// Positions each TCN layer must produce so that the last layer yields the
/// final historical position. Index `l` lists positions of layer `l`'s output.
pub(crate) fn tcn_needed_positions(w: usize, kernel: usize, dilations: &[usize]) -> Vec<Vec<usize>> {
    let n = dilations.len();
    let mut needed = vec![Vec::new(); n];
    let mut want: BTreeSet<usize> = BTreeSet::from([w - 1]);
    for l in (0..n).rev() {
        needed[l] = want.iter().copied().collect();
        let mut below = BTreeSet::new();
        for &t in &want {
            for k in 0..kernel {
                if t >= k * dilations[l] {
                    below.insert(t - k * dilations[l]);
                }
            }
        }
        want = below;
    }
    needed
}

/// Normalized predictions for a normalized batch.
pub fn forward_batch_tape(model: &SurrogateModel, batch: &Array2<f64>) -> Vec<f64> {
    let mut tape = Tape::new();
    let params = model.params.on_tape(&mut tape);
    let x = tape.leaf(batch.clone());
    let y = build_forward(&mut tape, model, &params, x);
    tape.value(y).iter().copied().collect()
}

/// MSE on normalized targets and the gradient of every parameter.
pub fn loss_on_tape(model: &SurrogateModel, batch: &Array2<f64>, targets: &[f64]) -> (f64, Vec<Array2<f64>>) {
    let mut tape = Tape::new();
    let params = model.params.on_tape(&mut tape);
    let x = tape.leaf(batch.clone());
    let y = build_forward(&mut tape, model, &params, x);
    let t = tape.leaf(Array2::from_shape_vec((targets.len(), 1), targets.to_vec()).expect("one target per row"));
    let e = tape.sub(y, t);
    let sq = tape.square(e);
    let loss = tape.mean(sq);
    let grads = tape.backward(loss);
    let g = params
        .iter()
        .zip(&model.params.tensors)
        .map(|(&v, like)| grads.get_or_zeros(v, like))
        .collect();
    (tape.scalar(loss), g)
}
