//! Supervised (mixture, target, clue) assembly: query semantics, gain
//! randomisation, speech sources, manifests and splits.

mod generator;
mod manifest;
mod speech;
mod split;

pub use generator::{DatasetConfig, MixtureGenerator, RirPool};
pub use manifest::{materialize, read_manifest, validate_manifest, write_manifest, ManifestEntry};
pub use speech::{crop, crop_at, synth_utterance, SpeechCorpus, Utterance};
pub use split::{split_dataset, SPLIT_RATIOS};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{convolve, scale_to_rms, Waveform};
use crate::error::{Error, Result};
use crate::room::{mic_wall_distances, RirRecord, RoomSpec};

/// Default per-source level range in dBFS.
pub const GAIN_RANGE_DBFS: (f64, f64) = (-25.0, -20.0);

/// Proposals tried when looking for an inactive query distance.
pub const QUERY_MAX_ATTEMPTS: usize = 10_000;

/// Which room clues the query embedding sees besides the query distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum ClueSet {
    #[serde(rename = "dis")]
    Dis,
    #[serde(rename = "dis+rt")]
    DisRt,
    #[serde(rename = "dis+dim")]
    DisDim,
    #[serde(rename = "dis+dim+rt")]
    #[default]
    DisDimRt,
}

impl ClueSet {
    pub const ALL: [ClueSet; 4] = [ClueSet::Dis, ClueSet::DisRt, ClueSet::DisDim, ClueSet::DisDimRt];

    pub fn uses_dim(self) -> bool {
        matches!(self, ClueSet::DisDim | ClueSet::DisDimRt)
    }

    pub fn uses_rt(self) -> bool {
        matches!(self, ClueSet::DisRt | ClueSet::DisDimRt)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClueSet::Dis => "dis",
            ClueSet::DisRt => "dis+rt",
            ClueSet::DisDim => "dis+dim",
            ClueSet::DisDimRt => "dis+dim+rt",
        }
    }
}

impl fmt::Display for ClueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClueSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(' ', "");
        ClueSet::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| Error::config(format!("unknown clue set `{s}` (dis, dis+rt, dis+dim, dis+dim+rt)")))
    }
}

/// Conditioning input of the extractor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryClue {
    /// Query distance in metres.
    pub d_q: f64,
    /// Microphone-wall distances `[x, Lx - x, y, Ly - y, z, Lz - z]`.
    pub dis_mw: [f64; 6],
    pub rt60: f64,
    pub clue_set: ClueSet,
}

impl QueryClue {
    pub fn new(d_q: f64, dis_mw: [f64; 6], rt60: f64, clue_set: ClueSet) -> Result<Self> {
        let clue = Self { d_q, dis_mw, rt60, clue_set };
        clue.validate()?;
        Ok(clue)
    }

    pub fn from_room(d_q: f64, room: &RoomSpec, clue_set: ClueSet) -> Result<Self> {
        Self::new(d_q, mic_wall_distances(room)?, room.rt60, clue_set)
    }

    /// Builds a clue from possibly incomplete inputs. Fields the clue set
    /// ignores may be absent and are filled with a neutral 1.0.
    pub fn from_parts(
        d_q: Option<f64>,
        dis_mw: Option<[f64; 6]>,
        rt60: Option<f64>,
        clue_set: ClueSet,
    ) -> Result<Self> {
        let d_q = d_q.ok_or(Error::MissingClue("d_q"))?;
        let dis_mw = match dis_mw {
            Some(v) => v,
            None if clue_set.uses_dim() => return Err(Error::MissingClue("dis_mw")),
            None => [1.0; 6],
        };
        let rt60 = match rt60 {
            Some(v) => v,
            None if clue_set.uses_rt() => return Err(Error::MissingClue("rt60")),
            None => 1.0,
        };
        Self::new(d_q, dis_mw, rt60, clue_set)
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.d_q).chain(self.dis_mw).chain(std::iter::once(self.rt60));
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite clue value in {self:?}")));
        }
        if self.d_q <= 0.0 {
            return Err(Error::invalid(format!("query distance must be positive, got {}", self.d_q)));
        }
        if self.dis_mw.iter().any(|&d| d <= 0.0) {
            return Err(Error::invalid(format!("mic-wall distances must be positive: {:?}", self.dis_mw)));
        }
        if self.rt60 <= 0.0 {
            return Err(Error::invalid(format!("rt60 must be positive, got {}", self.rt60)));
        }
        Ok(())
    }
}

/// Indices of the speakers within `r_spk` of the query distance.
pub fn select_active(speaker_distances: &[f64], d_q: f64, r_spk: f64) -> Vec<usize> {
    speaker_distances
        .iter()
        .enumerate()
        .filter(|(_, &d)| (d - d_q).abs() <= r_spk)
        .map(|(k, _)| k)
        .collect()
}

/// One training or test example.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub mixture: Waveform,
    /// Sum of the active reverberant sources; all-zero when none is active.
    pub target: Waveform,
    pub clue: QueryClue,
    pub speaker_distances: Vec<f64>,
    pub active_set: Vec<usize>,
    pub r_spk: f64,
    /// Level-adjusted reverberant source images, summing to the mixture.
    pub sources: Vec<Waveform>,
    pub gains_dbfs: Vec<f64>,
}

impl MixtureSample {
    pub fn is_active(&self) -> bool {
        !self.active_set.is_empty()
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    /// Same audio with a different presence radius.
    pub fn relabel(&self, r_spk: f64) -> Result<Self> {
        self.requery(self.clue.d_q, r_spk)
    }

    /// Same audio with a different query distance and radius.
    pub fn requery(&self, d_q: f64, r_spk: f64) -> Result<Self> {
        if !(r_spk > 0.0) {
            return Err(Error::invalid(format!("r_spk must be positive, got {r_spk}")));
        }
        let mut clue = self.clue;
        clue.d_q = d_q;
        clue.validate()?;
        let active_set = select_active(&self.speaker_distances, d_q, r_spk);
        let target = sum_sources(&self.sources, &active_set, self.mixture.len(), self.mixture.rate());
        Ok(Self {
            target,
            clue,
            active_set,
            r_spk,
            ..self.clone()
        })
    }
}

fn sum_sources(sources: &[Waveform], which: &[usize], len: usize, rate: u32) -> Waveform {
    let mut acc = vec![0.0; len];
    for &k in which {
        for (a, s) in acc.iter_mut().zip(sources[k].samples()) {
            *a += s;
        }
    }
    Waveform::new(acc, rate).expect("sum of finite sources")
}

/// Draws one level per source uniformly in `range` dBFS.
pub fn draw_gains(k: usize, range: (f64, f64), seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| rng.gen_range(range.0..=range.1)).collect()
}

/// Reverberates each speech signal with its RIR, levels each image to an
/// independent draw in [-25, -20] dBFS, and labels the query.
pub fn build_sample(
    speeches: &[Waveform],
    rirs: &[RirRecord],
    d_q: f64,
    r_spk: f64,
    gain_seed: u64,
    clue_set: ClueSet,
) -> Result<MixtureSample> {
    let gains = draw_gains(speeches.len(), GAIN_RANGE_DBFS, gain_seed);
    build_sample_with_gains(speeches, rirs, d_q, r_spk, &gains, clue_set)
}

pub fn build_sample_with_gains(
    speeches: &[Waveform],
    rirs: &[RirRecord],
    d_q: f64,
    r_spk: f64,
    gains_dbfs: &[f64],
    clue_set: ClueSet,
) -> Result<MixtureSample> {
    if rirs.is_empty() {
        return Err(Error::invalid("a mixture needs at least one source"));
    }
    let room = rirs[0].room;
    if let Some(r) = rirs.iter().find(|r| r.room != room) {
        return Err(Error::invalid(format!(
            "all sources of a mixture must share one room and microphone: {:?} vs {:?}",
            room, r.room
        )));
    }
    let clue = QueryClue::from_room(d_q, &room, clue_set)?;
    let kernels: Vec<&[f64]> = rirs.iter().map(|r| r.taps.as_slice()).collect();
    let distances: Vec<f64> = rirs.iter().map(|r| r.distance).collect();
    assemble(speeches, &kernels, room.rate, &distances, clue, r_spk, gains_dbfs)
}

pub(crate) fn assemble(
    speeches: &[Waveform],
    kernels: &[&[f64]],
    kernel_rate: u32,
    distances: &[f64],
    clue: QueryClue,
    r_spk: f64,
    gains_dbfs: &[f64],
) -> Result<MixtureSample> {
    let k = speeches.len();
    if k == 0 {
        return Err(Error::invalid("a mixture needs at least one source"));
    }
    if kernels.len() != k || distances.len() != k || gains_dbfs.len() != k {
        return Err(Error::invalid(format!(
            "{k} speech signals but {} RIRs, {} distances and {} gains",
            kernels.len(),
            distances.len(),
            gains_dbfs.len()
        )));
    }
    if !(r_spk > 0.0) {
        return Err(Error::invalid(format!("r_spk must be positive, got {r_spk}")));
    }
    let len = speeches[0].len();
    let rate = speeches[0].rate();
    if let Some(s) = speeches.iter().find(|s| s.len() != len || s.rate() != rate) {
        return Err(Error::invalid(format!(
            "speech signals differ in length or rate: {}@{} vs {}@{}",
            len,
            rate,
            s.len(),
            s.rate()
        )));
    }
    let mut sources = Vec::with_capacity(k);
    for (i, ((speech, kernel), &g)) in speeches.iter().zip(kernels).zip(gains_dbfs).enumerate() {
        let h = Waveform::new(kernel.to_vec(), kernel_rate)?;
        let wet = convolve(speech, &h)?;
        if wet.is_silent() {
            return Err(Error::invalid(format!("source {i} is silent after reverberation")));
        }
        sources.push(scale_to_rms(&wet, g)?);
    }
    let all: Vec<usize> = (0..k).collect();
    let mixture = sum_sources(&sources, &all, len, rate);
    let active_set = select_active(distances, clue.d_q, r_spk);
    let target = sum_sources(&sources, &active_set, len, rate);
    Ok(MixtureSample {
        mixture,
        target,
        clue,
        speaker_distances: distances.to_vec(),
        active_set,
        r_spk,
        sources,
        gains_dbfs: gains_dbfs.to_vec(),
    })
}

/// Picks a query distance. Active: around a uniformly chosen speaker,
/// clipped to `d_range`. Inactive: uniform over `d_range` and farther than
/// `r_spk` from every speaker.
pub fn sample_query_distance(
    speaker_distances: &[f64],
    want_active: bool,
    r_spk: f64,
    d_range: (f64, f64),
    seed: u64,
) -> Result<f64> {
    let (lo, hi) = d_range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::invalid(format!("invalid query range ({lo}, {hi})")));
    }
    if !(r_spk > 0.0) {
        return Err(Error::invalid(format!("r_spk must be positive, got {r_spk}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if want_active {
        if speaker_distances.is_empty() {
            return Err(Error::invalid("an active query needs at least one speaker"));
        }
        let d_k = speaker_distances[rng.gen_range(0..speaker_distances.len())];
        let d_q = rng.gen_range(d_k - r_spk..=d_k + r_spk);
        return Ok(d_q.clamp(lo, hi));
    }
    for _ in 0..QUERY_MAX_ATTEMPTS {
        let d_q = rng.gen_range(lo..=hi);
        if speaker_distances.iter().all(|&d| (d - d_q).abs() > r_spk) {
            return Ok(d_q);
        }
    }
    Err(Error::Infeasible(format!(
        "no inactive query distance in ({lo}, {hi}) for speakers at {speaker_distances:?} with r_spk {r_spk}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::{sample_sim1, simulate_rir};

    fn tone(freq: f64, len: usize) -> Waveform {
        let s = (0..len).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()).collect();
        Waveform::new(s, 16_000).unwrap()
    }

    #[test]
    fn select_active_examples() {
        assert_eq!(select_active(&[1.0, 3.0], 1.2, 0.5), vec![0]);
        assert!(select_active(&[1.0, 3.0], 2.0, 0.5).is_empty());
        assert_eq!(select_active(&[2.5, 3.0], 2.7, 0.5), vec![0, 1]);
    }

    #[test]
    fn clue_set_parsing() {
        for c in ClueSet::ALL {
            assert_eq!(c.as_str().parse::<ClueSet>().unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.as_str()));
        }
        assert_eq!("Dis+Dim+Rt".parse::<ClueSet>().unwrap(), ClueSet::DisDimRt);
        assert!("dim".parse::<ClueSet>().is_err());
    }

    #[test]
    fn from_parts_names_missing_field() {
        let e = QueryClue::from_parts(Some(1.0), None, Some(0.3), ClueSet::DisDimRt).unwrap_err();
        assert!(matches!(e, Error::MissingClue("dis_mw")));
        let e = QueryClue::from_parts(Some(1.0), Some([1.0; 6]), None, ClueSet::DisRt).unwrap_err();
        assert!(matches!(e, Error::MissingClue("rt60")));
        assert!(QueryClue::from_parts(Some(1.0), None, None, ClueSet::Dis).is_ok());
        assert!(QueryClue::from_parts(Some(f64::NAN), None, None, ClueSet::Dis).is_err());
    }

    fn two_rirs() -> Vec<RirRecord> {
        let (room, _) = sample_sim1(0);
        vec![
            simulate_rir(&room, &[4.5, 4.0, 1.5], 1).unwrap(),
            simulate_rir(&room, &[3.5, 7.0, 1.5], 2).unwrap(),
        ]
    }

    #[test]
    fn single_active_source_is_the_mixture() {
        let rirs = two_rirs();
        let s = build_sample(&[tone(220.0, 8000)], &rirs[..1], rirs[0].distance, 0.5, 3, ClueSet::DisDimRt)
            .unwrap();
        assert_eq!(s.active_set, vec![0]);
        assert_eq!(s.target, s.mixture);
    }

    #[test]
    fn inactive_and_overlapped_targets() {
        let rirs = two_rirs();
        let speech = [tone(220.0, 8000), tone(330.0, 8000)];
        let (d0, d1) = (rirs[0].distance, rirs[1].distance);
        let far = d0.max(d1) + 2.0;
        let s = build_sample(&speech, &rirs, far, 0.5, 3, ClueSet::Dis).unwrap();
        assert!(!s.is_active());
        assert!(s.target.is_silent());
        let s2 = build_sample(&speech, &rirs, d0, 0.5, 3, ClueSet::Dis).unwrap();
        assert_eq!(s.mixture, s2.mixture);

        let mid = 0.5 * (d0 + d1);
        let wide = (d1 - d0).abs();
        let both = build_sample(&speech, &rirs, mid, wide, 3, ClueSet::Dis).unwrap();
        assert_eq!(both.active_set, vec![0, 1]);
        let err: f64 = both
            .target
            .samples()
            .iter()
            .zip(both.mixture.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6 * both.mixture.rms());
    }

    #[test]
    fn source_levels_in_range() {
        let rirs = two_rirs();
        let speech = [tone(220.0, 8000), tone(330.0, 8000)];
        for seed in 0..20 {
            let s = build_sample(&speech, &rirs, 1.0, 0.5, seed, ClueSet::DisDimRt).unwrap();
            for (src, g) in s.sources.iter().zip(&s.gains_dbfs) {
                assert!((src.rms_dbfs() - g).abs() < 1e-3);
                assert!((-25.0 - 1e-3..=-20.0 + 1e-3).contains(&src.rms_dbfs()));
            }
        }
    }

    #[test]
    fn mismatched_rooms_rejected() {
        let mut rirs = two_rirs();
        rirs[1].room.rt60 = 0.4;
        let speech = [tone(220.0, 800), tone(330.0, 800)];
        assert!(build_sample(&speech, &rirs, 1.0, 0.5, 0, ClueSet::Dis).is_err());
        let silent = [Waveform::zeros(800, 16_000)];
        assert!(build_sample(&silent, &rirs[..1], 1.0, 0.5, 0, ClueSet::Dis).is_err());
    }

    #[test]
    fn relabel_recomputes_target() {
        let rirs = two_rirs();
        let speech = [tone(220.0, 4000), tone(330.0, 4000)];
        let d0 = rirs[0].distance;
        let s = build_sample(&speech, &rirs, d0 + 0.3, 0.5, 1, ClueSet::DisDimRt).unwrap();
        assert_eq!(s.active_set, vec![0]);
        let narrow = s.relabel(0.1).unwrap();
        assert!(narrow.active_set.is_empty() && narrow.target.is_silent());
        assert!(s.relabel(0.0).is_err());
    }

    #[test]
    fn query_distance_sampling() {
        for seed in 0..500 {
            let a = sample_query_distance(&[2.0], true, 0.5, (0.2, 5.0), seed).unwrap();
            assert!((1.5..=2.5).contains(&a));
            let i = sample_query_distance(&[2.0], false, 0.5, (0.2, 5.0), seed).unwrap();
            assert!((i - 2.0).abs() > 0.5 && (0.2..=5.0).contains(&i));
        }
        assert!(matches!(
            sample_query_distance(&[1.0, 2.0], false, 1.0, (0.2, 3.0), 0),
            Err(Error::Infeasible(_))
        ));
        assert!(sample_query_distance(&[], true, 0.5, (0.2, 5.0), 0).is_err());
    }
}
