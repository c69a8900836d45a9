use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{materialize, sample_query_distance, ClueSet, ManifestEntry, MixtureSample};
use crate::error::Result;

/// Indexed access to training or evaluation samples.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<MixtureSample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [MixtureSample] {
    fn len(&self) -> usize {
        <[MixtureSample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<MixtureSample> {
        Ok(self[index].clone())
    }
}

impl SampleSource for Vec<MixtureSample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize) -> Result<MixtureSample> {
        Ok(self[index].clone())
    }
}

/// Samples rebuilt from manifest entries on demand.
#[derive(Debug, Clone)]
pub struct ManifestSource {
    pub entries: Vec<ManifestEntry>,
    pub base: PathBuf,
    pub r_spk: Option<f64>,
    pub clue_set: ClueSet,
}

impl SampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn get(&self, index: usize) -> Result<MixtureSample> {
        materialize(&self.entries[index], &self.base, self.r_spk, self.clue_set)
    }
}

/// Every sample relabelled with a different presence radius.
pub struct Relabeled<'a> {
    inner: &'a dyn SampleSource,
    r_spk: f64,
}

impl<'a> Relabeled<'a> {
    pub fn new(inner: &'a dyn SampleSource, r_spk: f64) -> Self {
        Self { inner, r_spk }
    }
}

impl SampleSource for Relabeled<'_> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn get(&self, index: usize) -> Result<MixtureSample> {
        self.inner.get(index)?.relabel(self.r_spk)
    }
}

/// A fixed selection of another source's samples.
pub struct Subset<'a> {
    inner: &'a dyn SampleSource,
    indices: Vec<usize>,
}

impl<'a> Subset<'a> {
    pub fn new(inner: &'a dyn SampleSource, indices: Vec<usize>) -> Self {
        Self { inner, indices }
    }

    /// `ceil(fraction * len)` samples chosen by a seeded shuffle, kept in
    /// their original order.
    pub fn fraction(inner: &'a dyn SampleSource, fraction: f64, seed: u64) -> Self {
        let n = inner.len();
        let k = ((fraction * n as f64).ceil() as usize).clamp(usize::from(n > 0), n);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(k);
        idx.sort_unstable();
        Self::new(inner, idx)
    }
}

impl SampleSource for Subset<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn get(&self, index: usize) -> Result<MixtureSample> {
        self.inner.get(self.indices[index])
    }
}

/// Samples with freshly drawn query distances: inactive with probability
/// `inactive_ratio`, otherwise within `r_spk` of a random speaker. Queries
/// range from 0.2 m to the farthest room corner implied by the mic-wall
/// distances.
pub struct Requeried<'a> {
    inner: &'a dyn SampleSource,
    inactive_ratio: f64,
    r_spk: f64,
    seed: u64,
    epoch: u64,
}

const MIN_QUERY_DISTANCE: f64 = 0.2;

impl<'a> Requeried<'a> {
    pub fn new(inner: &'a dyn SampleSource, inactive_ratio: f64, r_spk: f64, seed: u64, epoch: u64) -> Self {
        Self {
            inner,
            inactive_ratio,
            r_spk,
            seed,
            epoch,
        }
    }
}

impl SampleSource for Requeried<'_> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn get(&self, index: usize) -> Result<MixtureSample> {
        let s = self.inner.get(index)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(index as u64);
        let m = s.clue.dis_mw;
        let corner = (m[0].max(m[1]).powi(2) + m[2].max(m[3]).powi(2) + m[4].max(m[5]).powi(2)).sqrt();
        let hi = s
            .speaker_distances
            .iter()
            .copied()
            .fold(corner, f64::max)
            .max(MIN_QUERY_DISTANCE + 1e-3);
        let want_active = rng.gen::<f64>() >= self.inactive_ratio;
        let d_q = match sample_query_distance(&s.speaker_distances, want_active, self.r_spk, (MIN_QUERY_DISTANCE, hi), rng.gen()) {
            Ok(d) => d,
            // no room for an inactive query: fall back to an active one
            Err(crate::Error::Infeasible(_)) => {
                sample_query_distance(&s.speaker_distances, true, self.r_spk, (MIN_QUERY_DISTANCE, hi), rng.gen())?
            }
            Err(e) => return Err(e),
        };
        s.requery(d_q, self.r_spk)
    }
}
