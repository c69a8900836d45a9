//! Differentiable building blocks. Activations are row matrices `(N, C)` or
//! channel-last grids `(T, F, C)`; every `backward` accumulates parameter
//! gradients into a flat buffer laid out like the parameters.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::params::{Init, ParamLayout, ParamRef};

const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully connected layer, `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamRef,
    pub b: ParamRef,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, inp: usize, out: usize) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        Self {
            w: layout.add(format!("{name}.weight"), &[out, inp], Init::Uniform(bound)),
            b: layout.add(format!("{name}.bias"), &[out], Init::Uniform(bound)),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = Array2::zeros((x.nrows(), self.out_dim()));
        y += &self.b.vec(p);
        general_mat_mul(1.0, &x, &self.w.mat(p).t(), 1.0, &mut y);
        y
    }

    pub fn backward(&self, p: &[f64], x: ArrayView2<f64>, dy: ArrayView2<f64>, g: &mut [f64]) -> Array2<f64> {
        self.accumulate(x, dy, g);
        dy.dot(&self.w.mat(p))
    }

    /// Parameter gradients only.
    pub fn accumulate(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, g: &mut [f64]) {
        general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut self.w.mat_mut(g));
        self.b.vec_mut(g).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    }
}

/// Per-row normalisation over the last axis with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamRef,
    pub bias: ParamRef,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: Array2<f64>,
    inv: Vec<f64>,
}

impl LayerNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize) -> Self {
        Self {
            gain: layout.add(format!("{name}.gain"), &[dim], Init::Const(1.0)),
            bias: layout.add(format!("{name}.bias"), &[dim], Init::Const(0.0)),
        }
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, NormCache) {
        let d = x.ncols() as f64;
        let gain = self.gain.slice(p);
        let bias = self.bias.slice(p);
        let mut xhat = x.to_owned();
        let mut y = Array2::zeros(x.raw_dim());
        let mut inv = Vec::with_capacity(x.nrows());
        for (mut row, mut out) in xhat.outer_iter_mut().zip(y.outer_iter_mut()) {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let r = 1.0 / (var + LN_EPS).sqrt();
            for ((v, o), (gk, bk)) in row.iter_mut().zip(out.iter_mut()).zip(gain.iter().zip(bias)) {
                *v = (*v - mean) * r;
                *o = *v * gk + bk;
            }
            inv.push(r);
        }
        (y, NormCache { xhat, inv })
    }

    pub fn backward(&self, p: &[f64], cache: &NormCache, dy: ArrayView2<f64>, g: &mut [f64]) -> Array2<f64> {
        let gain = self.gain.slice(p);
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        let mut dgain = vec![0.0; gain.len()];
        let mut dbias = vec![0.0; gain.len()];
        let mut dxhat = vec![0.0; gain.len()];
        for ((row_dy, row_xh), (mut row_dx, &r)) in dy
            .outer_iter()
            .zip(cache.xhat.outer_iter())
            .zip(dx.outer_iter_mut().zip(&cache.inv))
        {
            let (mut m1, mut m2) = (0.0, 0.0);
            for k in 0..gain.len() {
                dgain[k] += row_dy[k] * row_xh[k];
                dbias[k] += row_dy[k];
                dxhat[k] = row_dy[k] * gain[k];
                m1 += dxhat[k];
                m2 += dxhat[k] * row_xh[k];
            }
            m1 /= d;
            m2 /= d;
            for k in 0..gain.len() {
                row_dx[k] = r * (dxhat[k] - m1 - row_xh[k] * m2);
            }
        }
        for (a, b) in self.gain.slice_mut(g).iter_mut().zip(&dgain) {
            *a += b;
        }
        for (a, b) in self.bias.slice_mut(g).iter_mut().zip(&dbias) {
            *a += b;
        }
        dx
    }
}

/// Normalisation over every element of the input with per-channel affine.
#[derive(Debug, Clone)]
pub struct GlobalLayerNorm {
    pub gain: ParamRef,
    pub bias: ParamRef,
}

#[derive(Debug, Clone)]
pub struct GlobalNormCache {
    xhat: Array2<f64>,
    inv: f64,
}

impl GlobalLayerNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize) -> Self {
        Self {
            gain: layout.add(format!("{name}.gain"), &[dim], Init::Const(1.0)),
            bias: layout.add(format!("{name}.bias"), &[dim], Init::Const(0.0)),
        }
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, GlobalNormCache) {
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        let xhat = x.mapv(|v| (v - mean) * inv);
        let y = &xhat * &self.gain.vec(p) + &self.bias.vec(p);
        (y, GlobalNormCache { xhat, inv })
    }

    pub fn backward(&self, p: &[f64], cache: &GlobalNormCache, dy: ArrayView2<f64>, g: &mut [f64]) -> Array2<f64> {
        let n = dy.len() as f64;
        self.gain.vec_mut(g).scaled_add(1.0, &(&dy * &cache.xhat).sum_axis(Axis(0)));
        self.bias.vec_mut(g).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        let dxhat = &dy * &self.gain.vec(p);
        let m1 = dxhat.sum() / n;
        let m2 = (&dxhat * &cache.xhat).sum() / n;
        let inv = cache.inv;
        let mut dx = dxhat;
        dx.zip_mut_with(&cache.xhat, |d, &xh| *d = inv * (*d - m1 - xh * m2));
        dx
    }
}

/// Single-direction LSTM over `n` parallel sequences of `steps` steps.
/// Inputs are step-major rows: row `s * n + j` is step `s` of sequence `j`.
/// Gates are ordered (input, forget, cell, output) with one bias vector.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub wx: ParamRef,
    pub wh: ParamRef,
    pub b: ParamRef,
    pub hidden: usize,
    pub reverse: bool,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Array2<f64>,
    acts: Array2<f64>,
    c: Array2<f64>,
    h: Array2<f64>,
    steps: usize,
}

impl Lstm {
    pub fn new(layout: &mut ParamLayout, name: &str, inp: usize, hidden: usize, reverse: bool) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            wx: layout.add(format!("{name}.weight_ih"), &[4 * hidden, inp], Init::Uniform(bound)),
            wh: layout.add(format!("{name}.weight_hh"), &[4 * hidden, hidden], Init::Uniform(bound)),
            b: layout.add(format!("{name}.bias"), &[4 * hidden], Init::Uniform(bound)),
            hidden,
            reverse,
        }
    }

    fn order(&self, steps: usize) -> Box<dyn Iterator<Item = usize>> {
        if self.reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        }
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>, steps: usize, keep: bool) -> (Array2<f64>, Option<LstmCache>) {
        let hd = self.hidden;
        let n = x.nrows() / steps;
        let mut acts = Array2::zeros((x.nrows(), 4 * hd));
        acts += &self.b.vec(p);
        general_mat_mul(1.0, &x, &self.wx.mat(p).t(), 1.0, &mut acts);
        let wh_t = self.wh.mat(p).reversed_axes();
        let mut c_all = Array2::zeros((x.nrows(), hd));
        let mut h_all = Array2::zeros((x.nrows(), hd));
        let mut h_prev = Array2::<f64>::zeros((n, hd));
        let mut c_prev = Array2::<f64>::zeros((n, hd));
        for s in self.order(steps) {
            let rows = s * n..(s + 1) * n;
            let mut gates = acts.slice_mut(s![rows.clone(), ..]);
            general_mat_mul(1.0, &h_prev, &wh_t, 1.0, &mut gates);
            let gs = gates.as_slice_mut().expect("contiguous gates");
            let cs = c_prev.as_slice_mut().expect("contiguous state");
            let hs = h_prev.as_slice_mut().expect("contiguous state");
            for ((gr, cr), hr) in gs.chunks_exact_mut(4 * hd).zip(cs.chunks_exact_mut(hd)).zip(hs.chunks_exact_mut(hd)) {
                let (gi, rest) = gr.split_at_mut(hd);
                let (gf, rest) = rest.split_at_mut(hd);
                let (gg, go) = rest.split_at_mut(hd);
                for k in 0..hd {
                    let i = sigmoid(gi[k]);
                    let f = sigmoid(gf[k]);
                    let g = gg[k].tanh();
                    let o = sigmoid(go[k]);
                    gi[k] = i;
                    gf[k] = f;
                    gg[k] = g;
                    go[k] = o;
                    let c = f * cr[k] + i * g;
                    cr[k] = c;
                    hr[k] = o * c.tanh();
                }
            }
            c_all.slice_mut(s![rows.clone(), ..]).assign(&c_prev);
            h_all.slice_mut(s![rows, ..]).assign(&h_prev);
        }
        let cache = keep.then(|| LstmCache {
            x: x.to_owned(),
            acts,
            c: c_all,
            h: h_all.clone(),
            steps,
        });
        (h_all, cache)
    }

    pub fn backward(&self, p: &[f64], cache: &LstmCache, dh_all: ArrayView2<f64>, g: &mut [f64]) -> Array2<f64> {
        let hd = self.hidden;
        let steps = cache.steps;
        let rows_total = cache.x.nrows();
        let n = rows_total / steps;
        let wh = self.wh.mat(p);
        let mut da = Array2::<f64>::zeros((rows_total, 4 * hd));
        let mut h_prev_all = Array2::<f64>::zeros((rows_total, hd));
        let mut dh_next = Array2::<f64>::zeros((n, hd));
        let mut dc_next = Array2::<f64>::zeros((n, hd));
        let order: Vec<usize> = self.order(steps).collect();
        for (pos, &s) in order.iter().enumerate().rev() {
            let prev = (pos > 0).then(|| order[pos - 1]);
            let rows = s * n..(s + 1) * n;
            let acts = cache.acts.slice(s![rows.clone(), ..]);
            let acts = acts.as_slice().expect("contiguous cache");
            let c_cur = cache.c.slice(s![rows.clone(), ..]);
            let c_cur = c_cur.as_slice().expect("contiguous cache");
            let c_prev = prev.map(|ps| cache.c.slice(s![ps * n..(ps + 1) * n, ..]));
            let c_prev = c_prev.as_ref().map(|v| v.as_slice().expect("contiguous cache"));
            let dh_in = dh_all.slice(s![rows.clone(), ..]);
            let mut da_rows = da.slice_mut(s![rows.clone(), ..]);
            let da_s = da_rows.as_slice_mut().expect("contiguous");
            let dhn = dh_next.as_slice().expect("contiguous");
            let dcn = dc_next.as_slice_mut().expect("contiguous");
            for j in 0..n {
                let a = &acts[j * 4 * hd..(j + 1) * 4 * hd];
                let dar = &mut da_s[j * 4 * hd..(j + 1) * 4 * hd];
                for k in 0..hd {
                    let (i, f, gg, o) = (a[k], a[hd + k], a[2 * hd + k], a[3 * hd + k]);
                    let idx = j * hd + k;
                    let tc = c_cur[idx].tanh();
                    let cp = c_prev.map_or(0.0, |c| c[idx]);
                    let dh = dh_in[[j, k]] + dhn[idx];
                    let d_o = dh * tc;
                    let dc = dcn[idx] + dh * o * (1.0 - tc * tc);
                    dar[k] = dc * gg * i * (1.0 - i);
                    dar[hd + k] = dc * cp * f * (1.0 - f);
                    dar[2 * hd + k] = dc * i * (1.0 - gg * gg);
                    dar[3 * hd + k] = d_o * o * (1.0 - o);
                    dcn[idx] = dc * f;
                }
            }
            if let Some(ps) = prev {
                h_prev_all
                    .slice_mut(s![rows.clone(), ..])
                    .assign(&cache.h.slice(s![ps * n..(ps + 1) * n, ..]));
            }
            general_mat_mul(1.0, &da.slice(s![rows, ..]), &wh, 0.0, &mut dh_next);
        }
        general_mat_mul(1.0, &da.t(), &cache.x, 1.0, &mut self.wx.mat_mut(g));
        general_mat_mul(1.0, &da.t(), &h_prev_all, 1.0, &mut self.wh.mat_mut(g));
        self.b.vec_mut(g).scaled_add(1.0, &da.sum_axis(Axis(0)));
        da.dot(&self.wx.mat(p))
    }
}

/// Forward and backward LSTMs with concatenated outputs `(N, 2H)`.
#[derive(Debug, Clone)]
pub struct Blstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

#[derive(Debug, Clone)]
pub struct BlstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

impl Blstm {
    pub fn new(layout: &mut ParamLayout, name: &str, inp: usize, hidden: usize) -> Self {
        Self {
            fwd: Lstm::new(layout, &format!("{name}.fwd"), inp, hidden, false),
            bwd: Lstm::new(layout, &format!("{name}.bwd"), inp, hidden, true),
        }
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>, steps: usize, keep: bool) -> (Array2<f64>, Option<BlstmCache>) {
        let hd = self.fwd.hidden;
        let (hf, cf) = self.fwd.forward(p, x, steps, keep);
        let (hb, cb) = self.bwd.forward(p, x, steps, keep);
        let mut out = Array2::zeros((x.nrows(), 2 * hd));
        out.slice_mut(s![.., ..hd]).assign(&hf);
        out.slice_mut(s![.., hd..]).assign(&hb);
        let cache = cf.zip(cb).map(|(fwd, bwd)| BlstmCache { fwd, bwd });
        (out, cache)
    }

    pub fn backward(&self, p: &[f64], cache: &BlstmCache, dy: ArrayView2<f64>, g: &mut [f64]) -> Array2<f64> {
        let hd = self.fwd.hidden;
        let mut dx = self.fwd.backward(p, &cache.fwd, dy.slice(s![.., ..hd]), g);
        dx += &self.bwd.backward(p, &cache.bwd, dy.slice(s![.., hd..]), g);
        dx
    }
}

/// 3x3 'same' convolution over a `(T, F, C)` grid with zero padding.
/// Weights are stored as `(3, 3, C_in, C_out)`.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub w: ParamRef,
    pub b: ParamRef,
    pub cin: usize,
    pub cout: usize,
}

/// Output index range and shifted input range along one axis.
fn shifted(len: usize, d: isize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    match d {
        -1 => (1..len, 0..len - 1),
        0 => (0..len, 0..len),
        _ => (0..len - 1, 1..len),
    }
}

impl Conv3x3 {
    pub fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize) -> Self {
        let bound = 1.0 / ((9 * cin) as f64).sqrt();
        Self {
            w: layout.add(format!("{name}.weight"), &[3, 3, cin, cout], Init::Uniform(bound)),
            b: layout.add(format!("{name}.bias"), &[cout], Init::Uniform(bound)),
            cin,
            cout,
        }
    }

    fn kernel<'a>(&self, buf: &'a [f64], k: usize) -> ArrayView2<'a, f64> {
        let n = self.cin * self.cout;
        let off = self.w.offset + k * n;
        ArrayView2::from_shape((self.cin, self.cout), &buf[off..off + n]).expect("kernel shape")
    }

    fn offsets() -> impl Iterator<Item = (usize, isize, isize)> {
        (0..9).map(|k| (k, k as isize / 3 - 1, k as isize % 3 - 1))
    }

    pub fn forward(&self, p: &[f64], x: ArrayView3<f64>) -> Array3<f64> {
        let (t, f, _) = x.dim();
        let mut y = Array3::zeros((t, f, self.cout));
        y += &self.b.vec(p);
        for (k, dt, df) in Self::offsets() {
            if (dt != 0 && t < 2) || (df != 0 && f < 2) {
                continue;
            }
            let w = self.kernel(p, k);
            let (t_out, t_in) = shifted(t, dt);
            let (f_out, f_in) = shifted(f, df);
            for (to, ti) in t_out.zip(t_in) {
                let xin = x.slice(s![ti, f_in.clone(), ..]);
                let mut yo = y.slice_mut(s![to, f_out.clone(), ..]);
                general_mat_mul(1.0, &xin, &w, 1.0, &mut yo);
            }
        }
        y
    }

    /// Accumulates weight gradients; returns the input gradient when asked.
    pub fn backward(
        &self,
        p: &[f64],
        x: ArrayView3<f64>,
        dy: ArrayView3<f64>,
        g: &mut [f64],
        need_dx: bool,
    ) -> Option<Array3<f64>> {
        let (t, f, _) = x.dim();
        let mut dx = need_dx.then(|| Array3::zeros(x.raw_dim()));
        let db = dy.sum_axis(Axis(0)).sum_axis(Axis(0));
        self.b.vec_mut(g).scaled_add(1.0, &db);
        let n = self.cin * self.cout;
        for (k, dt, df) in Self::offsets() {
            if (dt != 0 && t < 2) || (df != 0 && f < 2) {
                continue;
            }
            let w = self.kernel(p, k);
            let off = self.w.offset + k * n;
            let mut dw = ndarray::ArrayViewMut2::from_shape((self.cin, self.cout), &mut g[off..off + n]).expect("kernel");
            let (t_out, t_in) = shifted(t, dt);
            let (f_out, f_in) = shifted(f, df);
            for (to, ti) in t_out.zip(t_in) {
                let xin = x.slice(s![ti, f_in.clone(), ..]);
                let dyo = dy.slice(s![to, f_out.clone(), ..]);
                general_mat_mul(1.0, &xin.t(), &dyo, 1.0, &mut dw);
                if let Some(dx) = dx.as_mut() {
                    let mut dxi = dx.slice_mut(s![ti, f_in.clone(), ..]);
                    general_mat_mul(1.0, &dyo, &w.t(), 1.0, &mut dxi);
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_array<D: ndarray::Dimension>(shape: impl ndarray::ShapeBuilder<Dim = D>, seed: u64) -> Array<f64, D> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::zeros(shape).mapv_into(|_: f64| rng.gen_range(-1.0..1.0))
    }

    /// Checks d(sum(y * r))/dparam and /dx against central differences.
    fn check<F>(p0: &[f64], x0: &[f64], f: F)
    where
        F: Fn(&[f64], &[f64], Option<&mut [f64]>) -> (f64, Vec<f64>),
    {
        let mut g = vec![0.0; p0.len()];
        let (_, dx) = f(p0, x0, Some(&mut g));
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        for i in 0..p0.len() {
            let mut pp = p0.to_vec();
            pp[i] += h;
            let up = f(&pp, x0, None).0;
            pp[i] -= 2.0 * h;
            let dn = f(&pp, x0, None).0;
            let num = (up - dn) / (2.0 * h);
            assert!(rel(g[i], num) < 1e-5, "param {i}: {} vs {num}", g[i]);
        }
        for i in 0..x0.len() {
            let mut xx = x0.to_vec();
            xx[i] += h;
            let up = f(p0, &xx, None).0;
            xx[i] -= 2.0 * h;
            let dn = f(p0, &xx, None).0;
            let num = (up - dn) / (2.0 * h);
            assert!(rel(dx[i], num) < 1e-5, "input {i}: {} vs {num}", dx[i]);
        }
    }

    fn perturbed(layout: &ParamLayout, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        layout.init(seed).into_iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect()
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let num = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((gelu_grad(x) - num).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn linear_gradients() {
        let mut layout = ParamLayout::default();
        let lin = Linear::new(&mut layout, "l", 4, 3);
        let p = perturbed(&layout, 1);
        let r = rand_array((5, 3), 9);
        let x = rand_array((5, 4), 2);
        check(&p, x.as_slice().unwrap(), |p, x, g| {
            let x = ArrayView2::from_shape((5, 4), x).unwrap();
            let y = lin.forward(p, x);
            let loss = (&y * &r).sum();
            let dx = g.map(|g| lin.backward(p, x, r.view(), g).into_raw_vec_and_offset().0).unwrap_or_default();
            (loss, dx)
        });
    }

    #[test]
    fn layer_norm_gradients() {
        let mut layout = ParamLayout::default();
        let ln = LayerNorm::new(&mut layout, "ln", 5);
        let p = perturbed(&layout, 3);
        let r = rand_array((4, 5), 7);
        let x = rand_array((4, 5), 4);
        check(&p, x.as_slice().unwrap(), |p, x, g| {
            let x = ArrayView2::from_shape((4, 5), x).unwrap();
            let (y, c) = ln.forward(p, x);
            let loss = (&y * &r).sum();
            let dx = g.map(|g| ln.backward(p, &c, r.view(), g).into_raw_vec_and_offset().0).unwrap_or_default();
            (loss, dx)
        });
    }

    #[test]
    fn global_norm_gradients() {
        let mut layout = ParamLayout::default();
        let gn = GlobalLayerNorm::new(&mut layout, "gln", 3);
        let p = perturbed(&layout, 5);
        let r = rand_array((6, 3), 8);
        let x = rand_array((6, 3), 6);
        check(&p, x.as_slice().unwrap(), |p, x, g| {
            let x = ArrayView2::from_shape((6, 3), x).unwrap();
            let (y, c) = gn.forward(p, x);
            let loss = (&y * &r).sum();
            let dx = g.map(|g| gn.backward(p, &c, r.view(), g).into_raw_vec_and_offset().0).unwrap_or_default();
            (loss, dx)
        });
    }

    #[test]
    fn blstm_gradients() {
        let mut layout = ParamLayout::default();
        let rnn = Blstm::new(&mut layout, "rnn", 3, 4);
        let p = perturbed(&layout, 11);
        let (steps, n) = (5, 2);
        let r = rand_array((steps * n, 8), 12);
        let x = rand_array((steps * n, 3), 13);
        check(&p, x.as_slice().unwrap(), |p, x, g| {
            let x = ArrayView2::from_shape((steps * n, 3), x).unwrap();
            let (y, c) = rnn.forward(p, x, steps, g.is_some());
            let loss = (&y * &r).sum();
            let dx = g
                .map(|g| rnn.backward(p, c.as_ref().unwrap(), r.view(), g).into_raw_vec_and_offset().0)
                .unwrap_or_default();
            (loss, dx)
        });
    }

    #[test]
    fn lstm_direction_matters() {
        let mut layout = ParamLayout::default();
        let f = Lstm::new(&mut layout, "a", 2, 3, false);
        let mut b = f.clone();
        b.reverse = true;
        let p = layout.init(1);
        let x = rand_array((4, 2), 2);
        let (yf, _) = f.forward(&p, x.view(), 4, false);
        let (yb, _) = b.forward(&p, x.view(), 4, false);
        // the last forward step and the first backward step both see one input
        assert_ne!(yf.row(3), yb.row(0));
        assert_ne!(yf, yb);
    }

    #[test]
    fn conv_gradients_and_same_padding() {
        let mut layout = ParamLayout::default();
        let conv = Conv3x3::new(&mut layout, "c", 2, 3);
        let p = perturbed(&layout, 21);
        let (t, f) = (4, 5);
        let r = rand_array((t, f, 3), 22);
        let x = rand_array((t, f, 2), 23);
        assert_eq!(conv.forward(&p, x.view()).dim(), (t, f, 3));
        check(&p, x.as_slice().unwrap(), |p, x, g| {
            let x = ArrayView3::from_shape((t, f, 2), x).unwrap();
            let y = conv.forward(p, x);
            let loss = (&y * &r).sum();
            let dx = g
                .map(|g| conv.backward(p, x, r.view(), g, true).unwrap().into_raw_vec_and_offset().0)
                .unwrap_or_default();
            (loss, dx)
        });
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut layout = ParamLayout::default();
        let conv = Conv3x3::new(&mut layout, "c", 2, 2);
        let p = layout.init(4);
        let x = rand_array((3, 4, 2), 5);
        let y = conv.forward(&p, x.view());
        let w = ndarray::ArrayView4::from_shape((3, 3, 2, 2), conv.w.slice(&p)).unwrap();
        let b = conv.b.slice(&p);
        for t in 0..3isize {
            for f in 0..4isize {
                for co in 0..2 {
                    let mut acc = b[co];
                    for dt in -1..=1isize {
                        for df in -1..=1isize {
                            let (ti, fi) = (t + dt, f + df);
                            if ti < 0 || ti >= 3 || fi < 0 || fi >= 4 {
                                continue;
                            }
                            for ci in 0..2 {
                                acc += x[[ti as usize, fi as usize, ci]] * w[[(dt + 1) as usize, (df + 1) as usize, ci, co]];
                            }
                        }
                    }
                    assert!((acc - y[[t as usize, f as usize, co]]).abs() < 1e-12);
                }
            }
        }
    }
}
