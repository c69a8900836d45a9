use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::layers::{gelu, gelu_grad, Blstm, BlstmCache, LayerNorm, Linear, NormCache};
use super::params::{Init, ParamLayout, ParamRef};
use crate::dataset::{ClueSet, QueryClue};

/// Fixed affine maps applied to clue values when standardisation is on.
const DIST_MEAN: f64 = 2.5;
const DIST_STD: f64 = 1.5;
const RT_MEAN: f64 = 0.35;
const RT_STD: f64 = 0.1;

/// Query embedding generator: one linear branch each for the query
/// distance, the mic-wall distances (shared across the six values and
/// summed) and RT60, then three tanh layers.
#[derive(Debug, Clone)]
pub struct Qeg {
    dis_w: ParamRef,
    dis_b: ParamRef,
    mw_w: ParamRef,
    mw_b: ParamRef,
    rt_w: ParamRef,
    rt_b: ParamRef,
    fc: [Linear; 3],
    dim: usize,
}

#[derive(Debug, Clone)]
pub struct QegCache {
    inputs: [f64; 3],
    masks: [f64; 2],
    acts: [Array2<f64>; 4],
}

impl Qeg {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, hidden: [usize; 2]) -> Self {
        let mut branch = |tag: &str| {
            (
                layout.add(format!("{name}.{tag}.weight"), &[dim], Init::Uniform(1.0)),
                layout.add(format!("{name}.{tag}.bias"), &[dim], Init::Uniform(1.0)),
            )
        };
        let (dis_w, dis_b) = branch("dis");
        let (mw_w, mw_b) = branch("mw");
        let (rt_w, rt_b) = branch("rt");
        let fc = [
            Linear::new(layout, &format!("{name}.fc1"), 3 * dim, hidden[0]),
            Linear::new(layout, &format!("{name}.fc2"), hidden[0], hidden[1]),
            Linear::new(layout, &format!("{name}.fc3"), hidden[1], dim),
        ];
        Self {
            dis_w,
            dis_b,
            mw_w,
            mw_b,
            rt_w,
            rt_b,
            fc,
            dim,
        }
    }

    /// `(d_q, sum of mic-wall distances, rt60)` after optional standardisation.
    /// The sum runs over the sorted values so permutations give bitwise
    /// identical results.
    fn inputs(clue: &QueryClue, standardize: bool) -> [f64; 3] {
        let mut mw = clue.dis_mw;
        mw.sort_by(f64::total_cmp);
        let (dq, rt) = if standardize {
            (
                (clue.d_q - DIST_MEAN) / DIST_STD,
                (clue.rt60 - RT_MEAN) / RT_STD,
            )
        } else {
            (clue.d_q, clue.rt60)
        };
        let mw_sum = mw
            .iter()
            .map(|&v| if standardize { (v - DIST_MEAN) / DIST_STD } else { v })
            .sum();
        [dq, mw_sum, rt]
    }

    pub fn forward(&self, p: &[f64], clue: &QueryClue, clue_set: ClueSet, standardize: bool) -> (Vec<f64>, QegCache) {
        let d = self.dim;
        let inputs = Self::inputs(clue, standardize);
        let masks = [f64::from(u8::from(clue_set.uses_dim())), f64::from(u8::from(clue_set.uses_rt()))];
        let mut z = Array2::zeros((1, 3 * d));
        let (dw, db) = (self.dis_w.slice(p), self.dis_b.slice(p));
        let (mw, mb) = (self.mw_w.slice(p), self.mw_b.slice(p));
        let (rw, rb) = (self.rt_w.slice(p), self.rt_b.slice(p));
        for k in 0..d {
            z[[0, k]] = dw[k] * inputs[0] + db[k];
            z[[0, d + k]] = masks[0] * (mw[k] * inputs[1] + 6.0 * mb[k]);
            z[[0, 2 * d + k]] = masks[1] * (rw[k] * inputs[2] + rb[k]);
        }
        let a1 = self.fc[0].forward(p, z.view()).mapv(f64::tanh);
        let a2 = self.fc[1].forward(p, a1.view()).mapv(f64::tanh);
        let a3 = self.fc[2].forward(p, a2.view()).mapv(f64::tanh);
        let out = a3.row(0).to_vec();
        (
            out,
            QegCache {
                inputs,
                masks,
                acts: [z, a1, a2, a3],
            },
        )
    }

    pub fn backward(&self, p: &[f64], cache: &QegCache, d_out: &[f64], g: &mut [f64]) {
        let d = self.dim;
        let [z, a1, a2, a3] = &cache.acts;
        let mut delta = Array2::from_shape_vec((1, d), d_out.to_vec()).expect("embedding size");
        delta.zip_mut_with(a3, |v, &a| *v *= 1.0 - a * a);
        let mut up = self.fc[2].backward(p, a2.view(), delta.view(), g);
        up.zip_mut_with(a2, |v, &a| *v *= 1.0 - a * a);
        let mut up = self.fc[1].backward(p, a1.view(), up.view(), g);
        up.zip_mut_with(a1, |v, &a| *v *= 1.0 - a * a);
        let dz = self.fc[0].backward(p, z.view(), up.view(), g);
        let [x_dis, x_mw, x_rt] = cache.inputs;
        let [m_dim, m_rt] = cache.masks;
        for k in 0..d {
            let (gd, gm, gr) = (dz[[0, k]], m_dim * dz[[0, d + k]], m_rt * dz[[0, 2 * d + k]]);
            g[self.dis_w.offset + k] += gd * x_dis;
            g[self.dis_b.offset + k] += gd;
            g[self.mw_w.offset + k] += gm * x_mw;
            g[self.mw_b.offset + k] += 6.0 * gm;
            g[self.rt_w.offset + k] += gr * x_rt;
            g[self.rt_b.offset + k] += gr;
        }
    }
}

/// One recurrent pass along the step axis of a step-major `(S, N, D)` grid:
/// optional query appended as an extra step, layer norm, BLSTM, crop,
/// linear + GELU, residual.
#[derive(Debug, Clone)]
pub struct DualPathLayer {
    pub norm: LayerNorm,
    pub rnn: Blstm,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct PathCache {
    norm: NormCache,
    rnn: BlstmCache,
    cropped: Array2<f64>,
    pre: Array2<f64>,
    steps: usize,
    seqs: usize,
    with_query: bool,
}

impl DualPathLayer {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            norm: LayerNorm::new(layout, &format!("{name}.norm"), dim),
            rnn: Blstm::new(layout, &format!("{name}.rnn"), dim, hidden),
            proj: Linear::new(layout, &format!("{name}.proj"), 2 * hidden, dim),
        }
    }

    pub fn forward(
        &self,
        p: &[f64],
        x: ArrayView3<f64>,
        query: Option<&[f64]>,
        keep: bool,
    ) -> (Array3<f64>, Option<PathCache>) {
        let (steps, seqs, dim) = x.dim();
        let rows = steps * seqs;
        let ext = steps + usize::from(query.is_some());
        let mut xin = Array2::zeros((ext * seqs, dim));
        xin.slice_mut(s![..rows, ..])
            .assign(&x.to_shape((rows, dim)).expect("contiguous rows"));
        if let Some(q) = query {
            let qv = ndarray::ArrayView1::from(q);
            for mut r in xin.slice_mut(s![rows.., ..]).outer_iter_mut() {
                r.assign(&qv);
            }
        }
        let (normed, norm_cache) = self.norm.forward(p, xin.view());
        let (r, rnn_cache) = self.rnn.forward(p, normed.view(), ext, keep);
        let cropped = r.slice(s![..rows, ..]).to_owned();
        let pre = self.proj.forward(p, cropped.view());
        let mut y = x.to_owned();
        let y2 = y.as_slice_mut().expect("standard layout");
        for (o, &v) in y2.iter_mut().zip(pre.iter()) {
            *o += gelu(v);
        }
        let cache = rnn_cache.map(|rnn| PathCache {
            norm: norm_cache,
            rnn,
            cropped,
            pre,
            steps,
            seqs,
            with_query: query.is_some(),
        });
        (y, cache)
    }

    /// Returns the input gradient and, for query paths, the query gradient.
    pub fn backward(&self, p: &[f64], c: &PathCache, dy: ArrayView3<f64>, g: &mut [f64]) -> (Array3<f64>, Option<Vec<f64>>) {
        let rows = c.steps * c.seqs;
        let dim = dy.dim().2;
        let dy2 = dy.to_shape((rows, dim)).expect("contiguous rows");
        let mut dpre = c.pre.mapv(gelu_grad);
        dpre *= &dy2;
        let dcrop = self.proj.backward(p, c.cropped.view(), dpre.view(), g);
        let ext = c.steps + usize::from(c.with_query);
        let mut dr = Array2::zeros((ext * c.seqs, dcrop.ncols()));
        dr.slice_mut(s![..rows, ..]).assign(&dcrop);
        let dnormed = self.rnn.backward(p, &c.rnn, dr.view(), g);
        let dxin = self.norm.backward(p, &c.norm, dnormed.view(), g);
        let mut dx = dy.to_owned();
        dx += &dxin
            .slice(s![..rows, ..])
            .to_shape((c.steps, c.seqs, dim))
            .expect("contiguous rows");
        let dq = c
            .with_query
            .then(|| dxin.slice(s![rows.., ..]).sum_axis(Axis(0)).to_vec());
        (dx, dq)
    }

    /// Zeroes the post-RNN projection, turning the layer into the identity.
    pub fn zero_projection(&self, p: &mut [f64]) {
        self.proj.w.slice_mut(p).fill(0.0);
        self.proj.b.slice_mut(p).fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Indices of the QEGs feeding the intra-subband and intra-frame paths.
    Query { subband_qeg: usize, frame_qeg: usize },
    Basic,
}

/// Intra-subband pass (along time, per frequency) followed by an
/// intra-frame pass (along frequency, per frame) on a `(T, F, D)` grid.
#[derive(Debug, Clone)]
pub struct Block {
    pub kind: BlockKind,
    pub subband: DualPathLayer,
    pub frame: DualPathLayer,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    subband: PathCache,
    frame: PathCache,
}

impl Block {
    pub fn forward(
        &self,
        p: &[f64],
        h: ArrayView3<f64>,
        queries: &[Vec<f64>],
        keep: bool,
    ) -> (Array3<f64>, Option<BlockCache>) {
        let (q_sub, q_frame) = match self.kind {
            BlockKind::Query { subband_qeg, frame_qeg } => {
                (Some(queries[subband_qeg].as_slice()), Some(queries[frame_qeg].as_slice()))
            }
            BlockKind::Basic => (None, None),
        };
        let (y1, c1) = self.subband.forward(p, h, q_sub, keep);
        let y1t = transpose(y1.view());
        let (y2t, c2) = self.frame.forward(p, y1t.view(), q_frame, keep);
        let y2 = transpose(y2t.view());
        let cache = c1.zip(c2).map(|(subband, frame)| BlockCache { subband, frame });
        (y2, cache)
    }

    /// Input gradient; query gradients are added into `dq` at the indices
    /// of the QEGs this block uses.
    pub fn backward(
        &self,
        p: &[f64],
        c: &BlockCache,
        dy: ArrayView3<f64>,
        dq: &mut [Vec<f64>],
        g: &mut [f64],
    ) -> Array3<f64> {
        let dyt = transpose(dy);
        let (dx1t, dq_frame) = self.frame.backward(p, &c.frame, dyt.view(), g);
        let dx1 = transpose(dx1t.view());
        let (dx, dq_sub) = self.subband.backward(p, &c.subband, dx1.view(), g);
        if let BlockKind::Query { subband_qeg, frame_qeg } = self.kind {
            for (acc, v) in dq[subband_qeg].iter_mut().zip(dq_sub.expect("query path")) {
                *acc += v;
            }
            for (acc, v) in dq[frame_qeg].iter_mut().zip(dq_frame.expect("query path")) {
                *acc += v;
            }
        }
        dx
    }
}

/// Swaps the first two axes into a new standard-layout array.
pub fn transpose(x: ArrayView3<f64>) -> Array3<f64> {
    x.permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
}

/// Views a `(rows, D)` matrix as `(a, b, D)`.
pub fn as_grid(x: ArrayView2<f64>, a: usize, b: usize) -> ArrayView3<f64> {
    x.into_shape_with_order((a, b, x.ncols())).expect("grid shape")
}
