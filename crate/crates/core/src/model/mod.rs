//! Time-frequency extraction network: convolutional encoder, query and basic
//! dual-path blocks, mask estimation and complex spectrogram decoding.

pub mod blocks;
mod checkpoint;
pub mod layers;
pub mod params;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::audio::{istft, istft_adjoint, stft, ComplexSpectrogram, StftConfig, Waveform, SAMPLE_RATE};
use crate::dataset::{ClueSet, QueryClue};
use crate::error::{Error, Result};

pub use blocks::{Block, BlockKind, DualPathLayer, Qeg};
pub use checkpoint::{load_checkpoint, save_checkpoint, AdamState, Checkpoint, TrainingMeta, CHECKPOINT_VERSION};
use blocks::{BlockCache, QegCache};
use layers::{Conv3x3, GlobalLayerNorm, GlobalNormCache};
use params::{ParamLayout, ParamSpec};

/// `(T, F, D)` grid of non-negative or real features.
pub type TfEmbedding = Array3<f64>;

/// Floor on the input RMS used for level normalisation.
const MIN_INPUT_RMS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrder {
    /// All query blocks, then all basic blocks.
    #[default]
    Stacked,
    /// Query and basic blocks alternate while both remain.
    Interleaved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QegSharing {
    /// One generator for every intra-subband query and one for every
    /// intra-frame query.
    #[default]
    Shared,
    /// Two generators per query block.
    PerBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub n_query_blocks: usize,
    pub n_basic_blocks: usize,
    pub rnn_hidden: usize,
    /// Widths of the three tanh layers; the last must equal `embed_dim`.
    pub qeg_hidden: [usize; 3],
    pub freq_bins: usize,
    pub clue_set: ClueSet,
    pub stft: StftConfig,
    pub block_order: BlockOrder,
    pub qeg_sharing: QegSharing,
    pub standardize_clues: bool,
    /// Divide the mixture by its RMS before the network and restore the
    /// level on the output.
    pub normalize_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            n_query_blocks: 4,
            n_basic_blocks: 4,
            rnn_hidden: 64,
            qeg_hidden: [96, 64, 64],
            freq_bins: 257,
            clue_set: ClueSet::DisDimRt,
            stft: StftConfig::default(),
            block_order: BlockOrder::Stacked,
            qeg_sharing: QegSharing::Shared,
            standardize_clues: false,
            normalize_input: true,
        }
    }
}

impl ModelConfig {
    /// Small network with matching QEG widths; used for tests and smoke runs.
    pub fn tiny(dim: usize, hidden: usize, stft: StftConfig) -> Self {
        Self {
            embed_dim: dim,
            n_query_blocks: 1,
            n_basic_blocks: 1,
            rnn_hidden: hidden,
            qeg_hidden: [2 * dim, dim, dim],
            freq_bins: stft.freq_bins(),
            stft,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.rnn_hidden == 0 {
            return Err(Error::config("embed_dim and rnn_hidden must be positive"));
        }
        if self.qeg_hidden.contains(&0) {
            return Err(Error::config("qeg_hidden widths must be positive"));
        }
        if self.qeg_hidden[2] != self.embed_dim {
            return Err(Error::config(format!(
                "last qeg_hidden width {} must equal embed_dim {}",
                self.qeg_hidden[2], self.embed_dim
            )));
        }
        self.stft.validate(SAMPLE_RATE)?;
        if self.freq_bins != self.stft.freq_bins() {
            return Err(Error::config(format!(
                "freq_bins {} does not match fft_size {} ({} bins)",
                self.freq_bins,
                self.stft.fft_size,
                self.stft.freq_bins()
            )));
        }
        Ok(())
    }

    pub fn num_qegs(&self) -> usize {
        match self.qeg_sharing {
            QegSharing::Shared => 2 * usize::from(self.n_query_blocks > 0),
            QegSharing::PerBlock => 2 * self.n_query_blocks,
        }
    }

    /// Block kinds in execution order.
    pub fn block_kinds(&self) -> Vec<BlockKind> {
        let query = |i: usize| match self.qeg_sharing {
            QegSharing::Shared => BlockKind::Query {
                subband_qeg: 0,
                frame_qeg: 1,
            },
            QegSharing::PerBlock => BlockKind::Query {
                subband_qeg: 2 * i,
                frame_qeg: 2 * i + 1,
            },
        };
        let (nq, nb) = (self.n_query_blocks, self.n_basic_blocks);
        match self.block_order {
            BlockOrder::Stacked => (0..nq).map(query).chain((0..nb).map(|_| BlockKind::Basic)).collect(),
            BlockOrder::Interleaved => {
                let mut out = Vec::with_capacity(nq + nb);
                for i in 0..nq.max(nb) {
                    if i < nq {
                        out.push(query(i));
                    }
                    if i < nb {
                        out.push(BlockKind::Basic);
                    }
                }
                out
            }
        }
    }

    /// Spectral gain `sqrt(sum w^2)` of the analysis window; features are
    /// divided by it so a unit-RMS signal gives unit-scale bins.
    pub fn spectral_gain(&self) -> f64 {
        let n = self.stft.frame_samples(SAMPLE_RATE) as f64;
        (3.0 * n / 8.0).sqrt()
    }
}

/// Everything the backward pass needs from one training forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    scale: f64,
    frames: usize,
    len: usize,
    input: Array3<f64>,
    enc_norm: GlobalNormCache,
    h_y: Array3<f64>,
    qegs: Vec<QegCache>,
    block_inputs: Vec<Array3<f64>>,
    blocks: Vec<BlockCache>,
    h_last: Array3<f64>,
    mask_pre: Array3<f64>,
    mask: Array3<f64>,
    z: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct TseModel {
    config: ModelConfig,
    layout: ParamLayout,
    encoder: Conv3x3,
    enc_norm: GlobalLayerNorm,
    qegs: Vec<Qeg>,
    blocks: Vec<Block>,
    mask_conv: Conv3x3,
    out_conv: Conv3x3,
    pub params: Vec<f64>,
}

impl TseModel {
    /// Builds the network and initialises its parameters from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut layout = ParamLayout::default();
        let encoder = Conv3x3::new(&mut layout, "encoder.conv", 2, d);
        let enc_norm = GlobalLayerNorm::new(&mut layout, "encoder.norm", d);
        let qh = [config.qeg_hidden[0], config.qeg_hidden[1]];
        let qegs = (0..config.num_qegs())
            .map(|i| Qeg::new(&mut layout, &format!("qeg{i}"), d, qh))
            .collect();
        let blocks = config
            .block_kinds()
            .into_iter()
            .enumerate()
            .map(|(i, kind)| {
                let prefix = match kind {
                    BlockKind::Query { .. } => "query",
                    BlockKind::Basic => "basic",
                };
                Block {
                    kind,
                    subband: DualPathLayer::new(&mut layout, &format!("block{i}.{prefix}.subband"), d, config.rnn_hidden),
                    frame: DualPathLayer::new(&mut layout, &format!("block{i}.{prefix}.frame"), d, config.rnn_hidden),
                }
            })
            .collect();
        let mask_conv = Conv3x3::new(&mut layout, "decoder.mask", d, d);
        let out_conv = Conv3x3::new(&mut layout, "decoder.out", d, 2);
        let params = layout.init(seed);
        Ok(Self {
            config,
            layout,
            encoder,
            enc_norm,
            qegs,
            blocks,
            mask_conv,
            out_conv,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.layout.total()
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.layout.specs().cloned().collect()
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Replaces every parameter; the length must match the layout.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.total() {
            return Err(Error::shape(format!(
                "{} parameter values for a model with {}",
                params.len(),
                self.layout.total()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Zeroes the output projections of every block, making each an identity.
    pub fn zero_block_projections(&mut self) {
        for b in &self.blocks {
            b.subband.zero_projection(&mut self.params);
            b.frame.zero_projection(&mut self.params);
        }
    }

    fn check_spec(&self, y: &ComplexSpectrogram) -> Result<()> {
        if y.bins() != self.config.freq_bins {
            return Err(Error::shape(format!(
                "spectrogram has {} bins, model expects {}",
                y.bins(),
                self.config.freq_bins
            )));
        }
        if y.real.iter().chain(y.imag.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrogram contains non-finite values"));
        }
        Ok(())
    }

    fn features(&self, y: &ComplexSpectrogram) -> Array3<f64> {
        let g = self.config.spectral_gain();
        let mut x = Array3::zeros((y.frames(), y.bins(), 2));
        x.index_axis_mut(Axis(2), 0).assign(&(&y.real / g));
        x.index_axis_mut(Axis(2), 1).assign(&(&y.imag / g));
        x
    }

    fn encode_features(&self, x: &Array3<f64>) -> (Array3<f64>, GlobalNormCache) {
        let (t, f, _) = x.dim();
        let d = self.config.embed_dim;
        let pre = self.encoder.forward(&self.params, x.view());
        let flat = pre.into_shape_with_order((t * f, d)).expect("contiguous");
        let (normed, cache) = self.enc_norm.forward(&self.params, flat.view());
        let h = normed.mapv(|v| v.max(0.0)).into_shape_with_order((t, f, d)).expect("contiguous");
        (h, cache)
    }

    /// Non-negative embedding `H_Y` of a mixture spectrogram.
    pub fn encode(&self, y: &ComplexSpectrogram) -> Result<TfEmbedding> {
        self.check_spec(y)?;
        Ok(self.encode_features(&self.features(y)).0)
    }

    /// Output of QEG `index` for `clue`, under the model's clue set.
    pub fn query_embedding(&self, index: usize, clue: &QueryClue) -> Result<Vec<f64>> {
        let qeg = self
            .qegs
            .get(index)
            .ok_or_else(|| Error::invalid(format!("model has {} query generators", self.qegs.len())))?;
        clue.validate()?;
        Ok(qeg
            .forward(&self.params, clue, self.config.clue_set, self.config.standardize_clues)
            .0)
    }

    fn queries(&self, clue: &QueryClue) -> Result<(Vec<Vec<f64>>, Vec<QegCache>)> {
        clue.validate()?;
        Ok(self
            .qegs
            .iter()
            .map(|q| q.forward(&self.params, clue, self.config.clue_set, self.config.standardize_clues))
            .unzip())
    }

    /// Runs block `index` on `h` with the given clue.
    pub fn block_forward(&self, index: usize, h: &TfEmbedding, clue: &QueryClue) -> Result<TfEmbedding> {
        let block = self
            .blocks
            .get(index)
            .ok_or_else(|| Error::invalid(format!("model has {} blocks", self.blocks.len())))?;
        self.check_grid(h)?;
        let (queries, _) = self.queries(clue)?;
        Ok(block.forward(&self.params, h.view(), &queries, false).0)
    }

    fn check_grid(&self, h: &TfEmbedding) -> Result<()> {
        if h.dim().2 != self.config.embed_dim {
            return Err(Error::shape(format!(
                "embedding has {} channels, model expects {}",
                h.dim().2,
                self.config.embed_dim
            )));
        }
        Ok(())
    }

    fn decode_parts(&self, h_last: &Array3<f64>, h_y: &Array3<f64>) -> (Array3<f64>, Array3<f64>, Array3<f64>, Array3<f64>) {
        let mask_pre = self.mask_conv.forward(&self.params, h_last.view());
        let mask = mask_pre.mapv(|v| v.max(0.0));
        let z = &mask * h_y;
        let out = self.out_conv.forward(&self.params, z.view());
        (mask_pre, mask, z, out)
    }

    fn to_spectrogram(&self, out: &Array3<f64>) -> ComplexSpectrogram {
        let g = self.config.spectral_gain();
        ComplexSpectrogram {
            real: out.index_axis(Axis(2), 0).mapv(|v| v * g),
            imag: out.index_axis(Axis(2), 1).mapv(|v| v * g),
            config: self.config.stft,
            rate: SAMPLE_RATE,
        }
    }

    /// Mask `ReLU(conv(H_last))` applied to `H_Y`, then mapped to a complex
    /// spectrogram.
    pub fn mask_decode(&self, h_last: &TfEmbedding, h_y: &TfEmbedding) -> Result<ComplexSpectrogram> {
        self.check_grid(h_last)?;
        if h_last.dim() != h_y.dim() {
            return Err(Error::shape(format!("{:?} vs {:?}", h_last.dim(), h_y.dim())));
        }
        Ok(self.to_spectrogram(&self.decode_parts(h_last, h_y).3))
    }

    /// Mask estimate for a given pair of embeddings.
    pub fn mask(&self, h_last: &TfEmbedding) -> Result<TfEmbedding> {
        self.check_grid(h_last)?;
        Ok(self.mask_conv.forward(&self.params, h_last.view()).mapv(|v| v.max(0.0)))
    }

    fn prepare(&self, mixture: &Waveform) -> Result<(f64, ComplexSpectrogram)> {
        if mixture.rate() != SAMPLE_RATE {
            return Err(Error::invalid(format!(
                "mixture is {} Hz, the model runs at {SAMPLE_RATE} Hz",
                mixture.rate()
            )));
        }
        if mixture.is_empty() {
            return Err(Error::invalid("empty mixture"));
        }
        let scale = if self.config.normalize_input {
            mixture.rms().max(MIN_INPUT_RMS)
        } else {
            1.0
        };
        let spec = stft(&mixture.scaled(1.0 / scale), &self.config.stft)?;
        self.check_spec(&spec)?;
        Ok((scale, spec))
    }

    fn finish(&self, out: &Array3<f64>, len: usize, scale: f64) -> Result<Waveform> {
        let w = istft(&self.to_spectrogram(out), len)?;
        if w.samples().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite model output".into()));
        }
        Ok(w.scaled(scale))
    }

    /// Extracted waveform, same length as the mixture.
    pub fn forward(&self, mixture: &Waveform, clue: &QueryClue) -> Result<Waveform> {
        let (scale, spec) = self.prepare(mixture)?;
        let (h_y, _) = self.encode_features(&self.features(&spec));
        let (queries, _) = self.queries(clue)?;
        let mut h = h_y.clone();
        for b in &self.blocks {
            h = b.forward(&self.params, h.view(), &queries, false).0;
        }
        let out = self.decode_parts(&h, &h_y).3;
        self.finish(&out, mixture.len(), scale)
    }

    /// Forward pass that records what [`TseModel::backward`] needs.
    pub fn forward_train(&self, mixture: &Waveform, clue: &QueryClue) -> Result<(Waveform, Tape)> {
        let (scale, spec) = self.prepare(mixture)?;
        let input = self.features(&spec);
        let (h_y, enc_norm) = self.encode_features(&input);
        let (queries, qegs) = self.queries(clue)?;
        let mut h = h_y.clone();
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = b.forward(&self.params, h.view(), &queries, true);
            block_inputs.push(h);
            caches.push(cache.expect("cache requested"));
            h = next;
        }
        let (mask_pre, mask, z, out) = self.decode_parts(&h, &h_y);
        let wave = self.finish(&out, mixture.len(), scale)?;
        let tape = Tape {
            scale,
            frames: spec.frames(),
            len: mixture.len(),
            input,
            enc_norm,
            h_y,
            qegs,
            block_inputs,
            blocks: caches,
            h_last: h,
            mask_pre,
            mask,
            z,
        };
        Ok((wave, tape))
    }

    /// Parameter gradient of a scalar loss given its gradient with respect
    /// to the output waveform.
    pub fn backward(&self, tape: &Tape, d_out: &[f64]) -> Result<Vec<f64>> {
        if d_out.len() != tape.len {
            return Err(Error::shape(format!("gradient of length {} for output of {}", d_out.len(), tape.len)));
        }
        let p = &self.params;
        let mut g = vec![0.0; p.len()];
        let gain = self.config.spectral_gain();
        let d_wave: Vec<f64> = d_out.iter().map(|v| v * tape.scale).collect();
        let (d_re, d_im) = istft_adjoint(&d_wave, tape.frames, &self.config.stft, SAMPLE_RATE)?;
        let (t, f, d) = tape.h_y.dim();
        let mut d_o = Array3::zeros((t, f, 2));
        d_o.index_axis_mut(Axis(2), 0).assign(&(d_re * gain));
        d_o.index_axis_mut(Axis(2), 1).assign(&(d_im * gain));

        let dz = self
            .out_conv
            .backward(p, tape.z.view(), d_o.view(), &mut g, true)
            .expect("input gradient");
        let mut d_mask = &dz * &tape.h_y;
        let mut d_hy = &dz * &tape.mask;
        d_mask.zip_mut_with(&tape.mask_pre, |v, &m| {
            if m <= 0.0 {
                *v = 0.0;
            }
        });
        let mut dh = self
            .mask_conv
            .backward(p, tape.h_last.view(), d_mask.view(), &mut g, true)
            .expect("input gradient");

        let mut dq = vec![vec![0.0; d]; self.qegs.len()];
        for (i, b) in self.blocks.iter().enumerate().rev() {
            dh = b.backward(p, &tape.blocks[i], dh.view(), &mut dq, &mut g);
        }
        debug_assert_eq!(tape.block_inputs.len(), self.blocks.len());
        d_hy += &dh;
        d_hy.zip_mut_with(&tape.h_y, |v, &h| {
            if h <= 0.0 {
                *v = 0.0;
            }
        });
        let d_flat: Array2<f64> = d_hy.into_shape_with_order((t * f, d)).expect("contiguous");
        let d_pre = self.enc_norm.backward(p, &tape.enc_norm, d_flat.view(), &mut g);
        let d_pre = d_pre.into_shape_with_order((t, f, d)).expect("contiguous");
        self.encoder.backward(p, tape.input.view(), d_pre.view(), &mut g, false);
        for ((qeg, cache), dqi) in self.qegs.iter().zip(&tape.qegs).zip(&dq) {
            qeg.backward(p, cache, dqi, &mut g);
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_stft() -> StftConfig {
        StftConfig::from_samples(16, 8, 16, SAMPLE_RATE)
    }

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-0.3..0.3)).collect(), SAMPLE_RATE).unwrap()
    }

    fn clue() -> QueryClue {
        QueryClue::new(1.5, [2.0, 3.0, 1.0, 4.0, 1.2, 1.8], 0.3, ClueSet::DisDimRt).unwrap()
    }

    #[test]
    fn full_configuration_size() {
        let m = TseModel::new(ModelConfig::default(), 0).unwrap();
        assert_eq!(m.num_params(), 1_288_898);
        let per_block = ModelConfig {
            qeg_sharing: QegSharing::PerBlock,
            ..ModelConfig::default()
        };
        assert_eq!(TseModel::new(per_block, 0).unwrap().num_params(), 1_288_898 + 6 * 29_280);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.freq_bins = 256;
        assert!(matches!(TseModel::new(c, 0), Err(Error::Config(_))));
        let mut c = ModelConfig::default();
        c.qeg_hidden = [96, 64, 32];
        assert!(TseModel::new(c, 0).is_err());
    }

    #[test]
    fn block_orders() {
        let mut c = ModelConfig {
            n_query_blocks: 2,
            n_basic_blocks: 3,
            ..ModelConfig::default()
        };
        let kinds = c.block_kinds();
        assert!(matches!(kinds[1], BlockKind::Query { .. }));
        assert_eq!(kinds[2], BlockKind::Basic);
        c.block_order = BlockOrder::Interleaved;
        let kinds = c.block_kinds();
        assert!(matches!(kinds[0], BlockKind::Query { .. }));
        assert_eq!(kinds[1], BlockKind::Basic);
        assert!(matches!(kinds[2], BlockKind::Query { .. }));
        assert_eq!(&kinds[3..], &[BlockKind::Basic, BlockKind::Basic]);
    }

    #[test]
    fn encoder_shape_and_sign() {
        let m = TseModel::new(ModelConfig::tiny(8, 6, small_stft()), 1).unwrap();
        let spec = stft(&noise(88, 2), &small_stft()).unwrap();
        let h = m.encode(&spec).unwrap();
        assert_eq!(h.dim(), (12, 9, 8));
        assert!(h.iter().all(|&v| v >= 0.0));
        let wrong = stft(&noise(88, 2), &StftConfig::from_samples(16, 8, 32, SAMPLE_RATE)).unwrap();
        assert!(matches!(m.encode(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn decoder_contracts() {
        let m = TseModel::new(ModelConfig::tiny(8, 6, small_stft()), 1).unwrap();
        let spec = stft(&noise(88, 2), &small_stft()).unwrap();
        let h_y = m.encode(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = h_y.mapv(|_| rng.gen_range(-1.0..1.0));
        assert!(m.mask(&h).unwrap().iter().all(|&v| v >= 0.0));
        let out = m.mask_decode(&h, &h_y).unwrap();
        assert_eq!((out.frames(), out.bins()), (12, 9));

        let mut z = m.clone();
        let b = z.out_conv.b.clone();
        b.slice_mut(&mut z.params).fill(0.0);
        let mc = z.mask_conv.clone();
        mc.w.slice_mut(&mut z.params).fill(0.0);
        mc.b.slice_mut(&mut z.params).fill(0.0);
        let zero = z.mask_decode(&h, &h_y).unwrap();
        assert!(zero.real.iter().chain(zero.imag.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn forward_length_and_determinism() {
        let m = TseModel::new(ModelConfig::tiny(8, 6, small_stft()), 3).unwrap();
        for len in [88, 101, 300] {
            let y = noise(len, len as u64);
            let a = m.forward(&y, &clue()).unwrap();
            assert_eq!(a.len(), len);
            assert!(a.samples().iter().all(|v| v.is_finite()));
            assert_eq!(a, m.forward(&y, &clue()).unwrap());
            let (b, _) = m.forward_train(&y, &clue()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn identity_blocks_skip_clues() {
        let mut m = TseModel::new(ModelConfig::tiny(8, 6, small_stft()), 5).unwrap();
        m.zero_block_projections();
        let y = noise(120, 1);
        let mut far = clue();
        far.d_q = 4.0;
        assert_eq!(m.forward(&y, &clue()).unwrap(), m.forward(&y, &far).unwrap());
        let h = m.encode(&stft(&y.scaled(1.0 / y.rms()), &small_stft()).unwrap()).unwrap();
        for i in 0..m.blocks().len() {
            assert_eq!(m.block_forward(i, &h, &clue()).unwrap(), h);
        }
    }

    #[test]
    fn blocks_and_query_matter() {
        let m = TseModel::new(ModelConfig::tiny(8, 6, small_stft()), 5).unwrap();
        let y = noise(120, 1);
        let mut far = clue();
        far.d_q = 4.0;
        assert_ne!(m.forward(&y, &clue()).unwrap(), m.forward(&y, &far).unwrap());
        let h = m.encode(&stft(&y, &small_stft()).unwrap()).unwrap();
        let basic = m.block_forward(1, &h, &clue()).unwrap();
        assert_eq!(basic, m.block_forward(1, &h, &far).unwrap());
        assert_ne!(m.block_forward(0, &h, &clue()).unwrap(), m.block_forward(0, &h, &far).unwrap());

        let two = TseModel::new(
            ModelConfig {
                n_query_blocks: 2,
                qeg_sharing: QegSharing::PerBlock,
                ..ModelConfig::tiny(8, 6, small_stft())
            },
            5,
        )
        .unwrap();
        assert_ne!(two.block_forward(0, &h, &clue()).unwrap(), two.block_forward(1, &h, &clue()).unwrap());
    }

    #[test]
    fn level_normalisation_is_scale_equivariant() {
        let m = TseModel::new(ModelConfig::tiny(8, 6, small_stft()), 5).unwrap();
        let y = noise(200, 9);
        let a = m.forward(&y, &clue()).unwrap();
        let b = m.forward(&y.scaled(0.01), &clue()).unwrap();
        for (u, v) in a.samples().iter().zip(b.samples()) {
            assert!((u * 0.01 - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = TseModel::new(ModelConfig::tiny(8, 6, small_stft()), 5).unwrap();
        let y8k = Waveform::new(vec![0.1; 100], 8000).unwrap();
        assert!(m.forward(&y8k, &clue()).is_err());
        let mut bad = clue();
        bad.d_q = f64::NAN;
        assert!(m.forward(&noise(88, 1), &bad).is_err());
        assert!(m.query_embedding(7, &clue()).is_err());
    }
}
