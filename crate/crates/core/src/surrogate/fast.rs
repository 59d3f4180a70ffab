//! Allocation-free single-window inference. `SurrogateModel::forward` and the
//! stepper both run through this code, so they agree bit for bit.

use super::{Activation, EncoderKind, SurrogateModel};
use crate::error::{Error, Result};

/// Branch-free `exp` (Cody-Waite reduction, degree-13 Taylor kernel) so the
/// gate loops below auto-vectorize. Relative error is a few ulp on the
/// clamped range, far below what the network resolves.
#[inline(always)]
fn exp_kernel(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFTER: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    let x = x.clamp(-700.0, 700.0);
    let shifted = x * LOG2E + SHIFTER;
    let k = shifted - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Estrin's scheme keeps the dependency chain short; the recurrence is
    // latency bound, not throughput bound.
    const C: [f64; 14] = [
        1.0,
        1.0,
        0.5,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5_040.0,
        1.0 / 40_320.0,
        1.0 / 362_880.0,
        1.0 / 3_628_800.0,
        1.0 / 39_916_800.0,
        1.0 / 479_001_600.0,
        1.0 / 6_227_020_800.0,
    ];
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let q0 = C[0] + C[1] * r;
    let q1 = C[2] + C[3] * r;
    let q2 = C[4] + C[5] * r;
    let q3 = C[6] + C[7] * r;
    let q4 = C[8] + C[9] * r;
    let q5 = C[10] + C[11] * r;
    let q6 = C[12] + C[13] * r;
    let s0 = q0 + q1 * r2;
    let s1 = q2 + q3 * r2;
    let s2 = q4 + q5 * r2;
    let t0 = s0 + s1 * r4;
    let t1 = s2 + q6 * r4;
    let p = t0 + t1 * r8;
    // the low mantissa bits of `shifted` hold k; adding the bias and
    // shifting keeps the integer path vectorizable
    let scale = f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52);
    p * scale
}

#[inline(always)]
fn sigmoid_k(x: f64) -> f64 {
    1.0 / (1.0 + exp_kernel(-x))
}

#[inline(always)]
fn tanh_k(x: f64) -> f64 {
    1.0 - 2.0 / (exp_kernel(2.0 * x) + 1.0)
}

fn detect_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

#[derive(Clone)]
struct Dense {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
}

impl Dense {
    fn from(a: &ndarray::Array2<f64>) -> Self {
        Dense {
            rows: a.nrows(),
            cols: a.ncols(),
            w: a.iter().copied().collect(),
        }
    }

    /// `out = bias + x W` with `W` row-major `rows x cols`.
    #[inline(always)]
    fn affine(&self, x: &[f64], bias: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        let mut rows = self.w.chunks_exact(self.cols);
        match (x.split_first(), rows.next()) {
            (Some((x0, rest)), Some(r0)) => {
                for ((o, b), w) in out.iter_mut().zip(bias).zip(r0) {
                    *o = b + x0 * w;
                }
                for (xi, row) in rest.iter().zip(rows) {
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += xi * w;
                    }
                }
            }
            _ => out.copy_from_slice(bias),
        }
    }

    /// `out += x W`.
    #[inline(always)]
    fn accumulate(&self, x: &[f64], out: &mut [f64]) {
        for (xi, row) in x.iter().zip(self.w.chunks_exact(self.cols)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }
}

/// Single-layer GRU recurrence with the hidden width fixed at compile time,
/// so the small loops unroll. Sums are grouped differently from the generic
/// path, so the two agree to rounding rather than bitwise.
#[derive(Clone)]
struct GruFixed<const D: usize> {
    wr: [[f64; D]; D],
    wz: [[f64; D]; D],
    wn: [[f64; D]; D],
    br: [f64; D],
    bz: [f64; D],
    bn: [f64; D],
}

impl<const D: usize> GruFixed<D> {
    fn from(layer: &Recurrent) -> Box<Self> {
        let mut g = Box::new(GruFixed {
            wr: [[0.0; D]; D],
            wz: [[0.0; D]; D],
            wn: [[0.0; D]; D],
            br: [0.0; D],
            bz: [0.0; D],
            bn: [0.0; D],
        });
        for i in 0..D {
            let row = &layer.wh.w[i * 3 * D..(i + 1) * 3 * D];
            g.wr[i].copy_from_slice(&row[..D]);
            g.wz[i].copy_from_slice(&row[D..2 * D]);
            g.wn[i].copy_from_slice(&row[2 * D..]);
        }
        g.br.copy_from_slice(&layer.bh[..D]);
        g.bz.copy_from_slice(&layer.bh[D..2 * D]);
        g.bn.copy_from_slice(&layer.bh[2 * D..]);
        g
    }

    #[inline(always)]
    fn run(&self, proj: &[f64], h_out: &mut [f64]) {
        let mut h = [0.0; D];
        for g in proj.chunks_exact(3 * D) {
            // two partial sums halve the reduction chain
            let (mut ar, mut az, mut an) = (self.br, self.bz, self.bn);
            let (mut br, mut bz, mut bn) = ([0.0; D], [0.0; D], [0.0; D]);
            let mut i = 0;
            while i + 1 < D {
                let (h0, h1) = (h[i], h[i + 1]);
                for j in 0..D {
                    ar[j] += h0 * self.wr[i][j];
                    az[j] += h0 * self.wz[i][j];
                    an[j] += h0 * self.wn[i][j];
                    br[j] += h1 * self.wr[i + 1][j];
                    bz[j] += h1 * self.wz[i + 1][j];
                    bn[j] += h1 * self.wn[i + 1][j];
                }
                i += 2;
            }
            if i < D {
                for j in 0..D {
                    ar[j] += h[i] * self.wr[i][j];
                    az[j] += h[i] * self.wz[i][j];
                    an[j] += h[i] * self.wn[i][j];
                }
            }
            for j in 0..D {
                ar[j] += br[j];
                az[j] += bz[j];
                an[j] += bn[j];
            }
            for j in 0..D {
                let r = sigmoid_k(g[j] + ar[j]);
                let z = sigmoid_k(g[D + j] + az[j]);
                let n = tanh_k(g[2 * D + j] + r * an[j]);
                h[j] = n + z * (h[j] - n);
            }
        }
        h_out.copy_from_slice(&h);
    }
}

#[derive(Clone)]
enum GruKernel {
    Generic,
    D4(Box<GruFixed<4>>),
    D8(Box<GruFixed<8>>),
    D16(Box<GruFixed<16>>),
    D32(Box<GruFixed<32>>),
}

#[derive(Clone)]
struct Recurrent {
    wx: Dense,
    wh: Dense,
    /// Input-side bias (GRU `bx`, LSTM `b`).
    bx: Vec<f64>,
    /// Hidden-side bias (GRU only).
    bh: Vec<f64>,
}

#[derive(Clone)]
struct Conv {
    taps: Vec<Dense>,
    b: Vec<f64>,
    dilation: usize,
}

#[derive(Clone)]
enum Encoder {
    Gru(Vec<Recurrent>, GruKernel),
    Lstm(Vec<Recurrent>),
    Tcn {
        layers: Vec<Conv>,
        proj: Dense,
        needed: Vec<Vec<usize>>,
    },
}

/// Weights copied into flat row-major buffers plus scratch space.
#[derive(Clone)]
pub struct FastModel {
    encoder: Encoder,
    activation: Activation,
    c: usize,
    w: usize,
    d: usize,
    w1: Dense,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    temp_mean: f64,
    temp_std: f64,
    avx2: bool,
    // scratch
    norm_buf: Vec<f64>,
    proj_buf: Vec<f64>,
    seq: Vec<f64>,
    seq_next: Vec<f64>,
    gate: Vec<f64>,
    gate_h: Vec<f64>,
    gate_x: Vec<f64>,
    h: Vec<f64>,
    cell: Vec<f64>,
    z: Vec<f64>,
    a: Vec<f64>,
}

impl FastModel {
    /// Forces the portable code path (used to check the two paths agree).
    pub fn portable(mut self) -> Self {
        self.avx2 = false;
        self
    }

    /// Drops the fixed-width kernels in favour of the generic loops.
    pub fn generic(mut self) -> Self {
        if let Encoder::Gru(_, kernel) = &mut self.encoder {
            *kernel = GruKernel::Generic;
        }
        self
    }

    pub fn new(model: &SurrogateModel) -> Self {
        let cfg = &model.config;
        let (c, w, d) = (model.n_inputs, cfg.window, cfg.hidden_dim);
        let row = |name: &str| model.param(name).iter().copied().collect::<Vec<f64>>();
        let encoder = match cfg.encoder {
            EncoderKind::Gru => {
                let layers: Vec<Recurrent> = (0..cfg.encoder_layers)
                    .map(|l| Recurrent {
                        wx: Dense::from(model.param(&format!("gru{l}.wx"))),
                        wh: Dense::from(model.param(&format!("gru{l}.wh"))),
                        bx: row(&format!("gru{l}.bx")),
                        bh: row(&format!("gru{l}.bh")),
                    })
                    .collect();
                let kernel = match (layers.len(), d) {
                    (1, 4) => GruKernel::D4(GruFixed::from(&layers[0])),
                    (1, 8) => GruKernel::D8(GruFixed::from(&layers[0])),
                    (1, 16) => GruKernel::D16(GruFixed::from(&layers[0])),
                    (1, 32) => GruKernel::D32(GruFixed::from(&layers[0])),
                    _ => GruKernel::Generic,
                };
                Encoder::Gru(layers, kernel)
            }
            EncoderKind::Lstm => Encoder::Lstm(
                (0..cfg.encoder_layers)
                    .map(|l| Recurrent {
                        wx: Dense::from(model.param(&format!("lstm{l}.wx"))),
                        wh: Dense::from(model.param(&format!("lstm{l}.wh"))),
                        bx: row(&format!("lstm{l}.b")),
                        bh: Vec::new(),
                    })
                    .collect(),
            ),
            EncoderKind::Tcn => Encoder::Tcn {
                layers: cfg
                    .tcn_dilations
                    .iter()
                    .enumerate()
                    .map(|(l, &dilation)| Conv {
                        taps: (0..cfg.tcn_kernel)
                            .map(|k| Dense::from(model.param(&format!("tcn{l}.w{k}"))))
                            .collect(),
                        b: row(&format!("tcn{l}.b")),
                        dilation,
                    })
                    .collect(),
                proj: Dense::from(model.param("tcn.proj")),
                needed: super::graph::tcn_needed_positions(w, cfg.tcn_kernel, &cfg.tcn_dilations),
            },
        };
        let gates = match cfg.encoder {
            EncoderKind::Gru => 3 * d,
            EncoderKind::Lstm => 4 * d,
            EncoderKind::Tcn => d,
        };
        FastModel {
            encoder,
            activation: cfg.activation,
            c,
            w,
            d,
            w1: Dense::from(model.param("head.w1")),
            b1: row("head.b1"),
            w2: row("head.w2"),
            b2: model.param("head.b2")[[0, 0]],
            mean: model.norm.gas_mean.clone(),
            inv_std: model.norm.gas_std.iter().map(|s| 1.0 / s).collect(),
            temp_mean: model.norm.temp_mean,
            temp_std: model.norm.temp_std,
            avx2: detect_avx2(),
            norm_buf: vec![0.0; (w + 1) * c],
            proj_buf: vec![0.0; w * gates],
            seq: vec![0.0; w * d],
            seq_next: vec![0.0; w * d],
            gate: vec![0.0; gates],
            gate_h: vec![0.0; gates],
            gate_x: vec![0.0; gates],
            h: vec![0.0; d],
            cell: vec![0.0; d],
            z: vec![0.0; d + c],
            a: vec![0.0; cfg.head_hidden],
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.c
    }

    pub fn window(&self) -> usize {
        self.w
    }

    /// Width of a cached first-layer input projection (0 for TCN).
    pub fn projection_width(&self) -> usize {
        match &self.encoder {
            Encoder::Gru(..) => 3 * self.d,
            Encoder::Lstm(_) => 4 * self.d,
            Encoder::Tcn { .. } => 0,
        }
    }

    #[inline]
    pub fn normalize_row(&self, raw: &[f64], out: &mut [f64]) {
        for (((o, r), m), s) in out.iter_mut().zip(raw).zip(&self.mean).zip(&self.inv_std) {
            *o = (r - m) * s;
        }
    }

    /// First-layer input projection of one normalized row.
    #[inline]
    pub fn project_row(&self, x: &[f64], out: &mut [f64]) {
        match &self.encoder {
            Encoder::Gru(layers, _) | Encoder::Lstm(layers) => layers[0].wx.affine(x, &layers[0].bx, out),
            Encoder::Tcn { .. } => {}
        }
    }

    /// ΔT in K for one raw window of `(W+1) * C` values.
    pub fn predict_raw(&mut self, window: &[f64]) -> Result<f64> {
        if window.len() != (self.w + 1) * self.c {
            return Err(Error::Shape {
                what: "surrogate window",
                expected: (self.w + 1) * self.c,
                got: window.len(),
            });
        }
        let mut xs = std::mem::take(&mut self.norm_buf);
        let mut proj = std::mem::take(&mut self.proj_buf);
        for (o, r) in xs.chunks_exact_mut(self.c).zip(window.chunks_exact(self.c)) {
            self.normalize_row(r, o);
        }
        let pw = self.projection_width();
        if pw > 0 {
            for (x, p) in xs.chunks_exact(self.c).zip(proj.chunks_exact_mut(pw)) {
                self.project_row(x, p);
            }
        }
        let split = self.w * self.c;
        let y = self.predict_parts(&xs[..split], &proj, &xs[split..]);
        self.norm_buf = xs;
        self.proj_buf = proj;
        Ok(y)
    }

    /// ΔT in K from normalized historical rows (`W x C`), their cached
    /// first-layer projections (`W x projection_width`) and the normalized
    /// current row.
    pub fn predict_parts(&mut self, hist: &[f64], proj: &[f64], now: &[f64]) -> f64 {
        self.encode(hist, proj);
        let (d, c) = (self.d, self.c);
        self.z[..d].copy_from_slice(&self.h);
        self.z[d..d + c].copy_from_slice(now);
        self.w1.affine(&self.z, &self.b1, &mut self.a);
        let act = self.activation;
        let mut y = self.b2;
        for (a, w) in self.a.iter().zip(&self.w2) {
            y += act.apply(*a) * w;
        }
        y * self.temp_std + self.temp_mean
    }

    #[cfg(test)]
    pub(crate) fn kernels(x: f64) -> (f64, f64, f64) {
        (exp_kernel(x), sigmoid_k(x), tanh_k(x))
    }

    fn encode(&mut self, hist: &[f64], proj: &[f64]) {
        #[cfg(target_arch = "x86_64")]
        if self.avx2 {
            // SAFETY: the feature was detected at construction.
            unsafe { return self.encode_avx2(hist, proj) }
        }
        self.encode_impl(hist, proj)
    }

    /// Same operations as the portable path, only wider registers, so the
    /// results are bit-identical.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn encode_avx2(&mut self, hist: &[f64], proj: &[f64]) {
        self.encode_impl(hist, proj)
    }

    #[inline(always)]
    fn encode_impl(&mut self, hist: &[f64], proj: &[f64]) {
        let (w, d, c) = (self.w, self.d, self.c);
        match &self.encoder {
            Encoder::Gru(_, GruKernel::D4(k)) => k.run(&proj[..w * 3 * d], &mut self.h),
            Encoder::Gru(_, GruKernel::D8(k)) => k.run(&proj[..w * 3 * d], &mut self.h),
            Encoder::Gru(_, GruKernel::D16(k)) => k.run(&proj[..w * 3 * d], &mut self.h),
            Encoder::Gru(_, GruKernel::D32(k)) => k.run(&proj[..w * 3 * d], &mut self.h),
            Encoder::Gru(layers, GruKernel::Generic) => {
                for (l, layer) in layers.iter().enumerate() {
                    self.h.fill(0.0);
                    for t in 0..w {
                        let gx: &[f64] = if l == 0 {
                            &proj[t * 3 * d..(t + 1) * 3 * d]
                        } else {
                            layer.wx.affine(&self.seq[t * d..(t + 1) * d], &layer.bx, &mut self.gate_x);
                            &self.gate_x
                        };
                        layer.wh.affine(&self.h, &layer.bh, &mut self.gate_h);
                        let gh = &self.gate_h;
                        let (rz, n) = self.gate.split_at_mut(2 * d);
                        for ((a, x), h) in rz.iter_mut().zip(&gx[..2 * d]).zip(&gh[..2 * d]) {
                            *a = sigmoid_k(x + h);
                        }
                        for (((n, x), r), h) in n.iter_mut().zip(&gx[2 * d..]).zip(&rz[..d]).zip(&gh[2 * d..]) {
                            *n = tanh_k(x + r * h);
                        }
                        for ((h, n), z) in self.h.iter_mut().zip(&*n).zip(&rz[d..]) {
                            *h = n + z * (*h - n);
                        }
                        if l + 1 < layers.len() {
                            self.seq_next[t * d..(t + 1) * d].copy_from_slice(&self.h);
                        }
                    }
                    std::mem::swap(&mut self.seq, &mut self.seq_next);
                }
            }
            Encoder::Lstm(layers) => {
                for (l, layer) in layers.iter().enumerate() {
                    self.h.fill(0.0);
                    self.cell.fill(0.0);
                    for t in 0..w {
                        let gx: &[f64] = if l == 0 {
                            &proj[t * 4 * d..(t + 1) * 4 * d]
                        } else {
                            layer.wx.affine(&self.seq[t * d..(t + 1) * d], &layer.bx, &mut self.gate_x);
                            &self.gate_x
                        };
                        layer.wh.affine(&self.h, gx, &mut self.gate);
                        let (ifg, o) = self.gate.split_at_mut(3 * d);
                        let (i_f, gg) = ifg.split_at_mut(2 * d);
                        for v in i_f.iter_mut().chain(o.iter_mut()) {
                            *v = sigmoid_k(*v);
                        }
                        for v in gg.iter_mut() {
                            *v = tanh_k(*v);
                        }
                        for ((cell, f), (i, gg)) in self.cell.iter_mut().zip(&i_f[d..]).zip(i_f[..d].iter().zip(&*gg)) {
                            *cell = f * *cell + i * gg;
                        }
                        for ((h, o), cell) in self.h.iter_mut().zip(&*o).zip(&self.cell) {
                            *h = o * tanh_k(*cell);
                        }
                        if l + 1 < layers.len() {
                            self.seq_next[t * d..(t + 1) * d].copy_from_slice(&self.h);
                        }
                    }
                    std::mem::swap(&mut self.seq, &mut self.seq_next);
                }
            }
            Encoder::Tcn { layers, proj: res_proj, needed } => {
                let act = self.activation;
                for (l, layer) in layers.iter().enumerate() {
                    for &t in &needed[l] {
                        let out = &mut self.seq_next[t * d..(t + 1) * d];
                        out.copy_from_slice(&layer.b);
                        for (k, tap) in layer.taps.iter().enumerate() {
                            if t < k * layer.dilation {
                                break;
                            }
                            let s = t - k * layer.dilation;
                            let src = if l == 0 { &hist[s * c..(s + 1) * c] } else { &self.seq[s * d..(s + 1) * d] };
                            tap.accumulate(src, out);
                        }
                        for v in out.iter_mut() {
                            *v = act.apply(*v);
                        }
                        if l == 0 {
                            res_proj.accumulate(&hist[t * c..(t + 1) * c], out);
                        } else {
                            for (o, s) in out.iter_mut().zip(&self.seq[t * d..(t + 1) * d]) {
                                *o += s;
                            }
                        }
                    }
                    std::mem::swap(&mut self.seq, &mut self.seq_next);
                }
                self.h.copy_from_slice(&self.seq[(w - 1) * d..w * d]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_track_std() {
        let mut x = -40.0;
        while x < 40.0 {
            let (e, s, t) = FastModel::kernels(x);
            assert!((e / x.exp() - 1.0).abs() < 1e-14, "exp {x}");
            assert!((s - crate::nn::tape::sigmoid(x)).abs() < 1e-15, "sigmoid {x}");
            assert!((t - x.tanh()).abs() < 1e-15, "tanh {x}");
            x += 0.0137;
        }
        assert_eq!(FastModel::kernels(-1e6).0, (-700.0f64).exp());
        assert!(FastModel::kernels(1e6).0.is_finite());
    }

    #[test]
    fn wide_and_portable_paths_agree_bitwise() {
        use super::super::test_support::*;
        use super::super::EncoderKind;
        for kind in [EncoderKind::Gru, EncoderKind::Lstm, EncoderKind::Tcn] {
            let m = tiny(kind, 21);
            for w in toy_windows(&m, 5, 8) {
                let a = FastModel::new(&m).predict_raw(&w).unwrap();
                let b = FastModel::new(&m).portable().predict_raw(&w).unwrap();
                assert_eq!(a.to_bits(), b.to_bits(), "{kind}");
            }
        }
    }

    #[test]
    fn fixed_width_gru_matches_generic_loops() {
        use super::super::test_support::*;
        use super::super::{EncoderKind, SurrogateConfig, SurrogateModel};
        for d in [4, 8, 16, 32] {
            let mut cfg = SurrogateConfig::for_encoder(EncoderKind::Gru);
            cfg.hidden_dim = d;
            cfg.window = 7;
            let m = SurrogateModel::init(cfg, toy_norm(3), String::new()).unwrap();
            for w in toy_windows(&m, 3, d as u64) {
                let a = FastModel::new(&m).predict_raw(&w).unwrap();
                let b = FastModel::new(&m).generic().portable().predict_raw(&w).unwrap();
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "d={d}: {a} vs {b}");
            }
        }
    }
}
