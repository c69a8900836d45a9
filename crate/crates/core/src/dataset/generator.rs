use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_sample_with_gains, crop, draw_gains, sample_query_distance, ClueSet, ManifestEntry, MixtureSample, SpeechCorpus};
use crate::error::{Error, Result};
use crate::room::{max_source_distance, mic_wall_distances, RirManifestEntry, RirRecord};

/// How mixtures are drawn from a speech corpus and an RIR pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Speakers per mixture.
    pub n_speakers: usize,
    pub utterance_secs: f64,
    pub r_spk: f64,
    /// Probability that a sample's query selects nobody.
    pub inactive_ratio: f64,
    pub gain_range_dbfs: [f64; 2],
    pub min_query_distance: f64,
    pub clue_set: ClueSet,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_speakers: 2,
            utterance_secs: 4.0,
            r_spk: 0.5,
            inactive_ratio: 0.25,
            gain_range_dbfs: [-25.0, -20.0],
            min_query_distance: 0.2,
            clue_set: ClueSet::DisDimRt,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 {
            return Err(Error::config("n_speakers must be at least 1"));
        }
        if !(self.utterance_secs > 0.0) {
            return Err(Error::config("utterance_secs must be positive"));
        }
        if !(self.r_spk > 0.0) {
            return Err(Error::config(format!("r_spk must be positive, got {}", self.r_spk)));
        }
        if !(0.0..1.0).contains(&self.inactive_ratio) {
            return Err(Error::config(format!("inactive_ratio must be in [0, 1), got {}", self.inactive_ratio)));
        }
        let [lo, hi] = self.gain_range_dbfs;
        if !(lo <= hi && hi.is_finite() && lo.is_finite()) {
            return Err(Error::config(format!("invalid gain range {:?}", self.gain_range_dbfs)));
        }
        if !(self.min_query_distance > 0.0) {
            return Err(Error::config("min_query_distance must be positive"));
        }
        Ok(())
    }

    pub fn utterance_len(&self, rate: u32) -> usize {
        (self.utterance_secs * rate as f64).round() as usize
    }
}

#[derive(Debug, Clone)]
struct PooledRir {
    path: Option<PathBuf>,
    record: RirRecord,
}

/// RIRs grouped by room; the sources of one mixture share a room.
#[derive(Debug, Clone, Default)]
pub struct RirPool {
    rooms: Vec<Vec<PooledRir>>,
}

impl RirPool {
    pub fn from_records(groups: Vec<Vec<RirRecord>>) -> Self {
        Self {
            rooms: groups
                .into_iter()
                .filter(|g| !g.is_empty())
                .map(|g| g.into_iter().map(|record| PooledRir { path: None, record }).collect())
                .collect(),
        }
    }

    /// Loads the listed RIRs, grouping them by `room_id`. Paths are kept
    /// as written in the entries (relative to `base`).
    pub fn from_entries(entries: &[RirManifestEntry], base: &Path) -> Result<Self> {
        let mut groups: BTreeMap<usize, Vec<PooledRir>> = BTreeMap::new();
        for e in entries {
            groups.entry(e.room_id).or_default().push(PooledRir {
                path: Some(e.rir_path.clone()),
                record: e.load(base)?,
            });
        }
        Ok(Self {
            rooms: groups.into_values().collect(),
        })
    }

    pub fn num_rooms(&self) -> usize {
        self.rooms.len()
    }

    pub fn len(&self) -> usize {
        self.rooms.iter().map(|r| r.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rooms.is_empty()
    }
}

/// Deterministic sample synthesis: sample `i` depends only on
/// `(seed, i)`, so any subset can be generated in any order.
pub struct MixtureGenerator<'a> {
    corpus: &'a SpeechCorpus,
    pool: &'a RirPool,
    cfg: DatasetConfig,
    seed: u64,
    speech_base: Option<PathBuf>,
    eligible: Vec<usize>,
}

const MAX_DRAWS: usize = 100;

impl<'a> MixtureGenerator<'a> {
    pub fn new(corpus: &'a SpeechCorpus, pool: &'a RirPool, cfg: DatasetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if corpus.num_speakers() < cfg.n_speakers {
            return Err(Error::config(format!(
                "{} speakers per mixture but the corpus has {}",
                cfg.n_speakers,
                corpus.num_speakers()
            )));
        }
        let eligible: Vec<usize> = (0..pool.rooms.len())
            .filter(|&r| pool.rooms[r].len() >= cfg.n_speakers)
            .collect();
        if eligible.is_empty() {
            return Err(Error::config(format!("no room holds {} RIRs", cfg.n_speakers)));
        }
        Ok(Self {
            corpus,
            pool,
            cfg,
            seed,
            speech_base: None,
            eligible,
        })
    }

    /// Speech paths in manifests are written relative to `dir` when the
    /// corpus lives below it.
    pub fn with_manifest_dir(mut self, dir: &Path) -> Self {
        self.speech_base = Some(dir.to_path_buf());
        self
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.cfg
    }

    pub fn generate(&self, index: u64) -> Result<(MixtureSample, ManifestEntry)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let k = self.cfg.n_speakers;
        let mut last_err = None;
        for _ in 0..MAX_DRAWS {
            let room = &self.pool.rooms[self.eligible[rng.gen_range(0..self.eligible.len())]];
            let rirs: Vec<&PooledRir> = sample(&mut rng, room.len(), k).into_iter().map(|i| &room[i]).collect();
            let speakers = sample(&mut rng, self.corpus.num_speakers(), k).into_vec();
            let want_active = rng.gen::<f64>() >= self.cfg.inactive_ratio;
            let query_seed: u64 = rng.gen();
            let gain_seed: u64 = rng.gen();

            let spec = rirs[0].record.room;
            let distances: Vec<f64> = rirs.iter().map(|r| r.record.distance).collect();
            let hi = distances.iter().copied().fold(max_source_distance(&spec), f64::max);
            let d_q = match sample_query_distance(
                &distances,
                want_active,
                self.cfg.r_spk,
                (self.cfg.min_query_distance, hi),
                query_seed,
            ) {
                Ok(d) => d,
                Err(e @ Error::Infeasible(_)) => {
                    last_err = Some(e);
                    continue;
                }
                Err(e) => return Err(e),
            };

            let len = self.cfg.utterance_len(spec.rate);
            let mut speeches = Vec::with_capacity(k);
            let mut utt_ids = Vec::with_capacity(k);
            let mut offsets = Vec::with_capacity(k);
            for &s in &speakers {
                let utts = self.corpus.speaker_utterances(s);
                let u = utts[rng.gen_range(0..utts.len())];
                let (w, off) = crop(&self.corpus.load(u)?, len, &mut rng);
                speeches.push(w);
                utt_ids.push(u);
                offsets.push(off);
            }
            if speeches.iter().any(|w| w.is_silent()) {
                last_err = Some(Error::invalid("silent speech crop"));
                continue;
            }

            let [g_lo, g_hi] = self.cfg.gain_range_dbfs;
            let gains = draw_gains(k, (g_lo, g_hi), gain_seed);
            let records: Vec<RirRecord> = rirs.iter().map(|r| r.record.clone()).collect();
            let sample = build_sample_with_gains(&speeches, &records, d_q, self.cfg.r_spk, &gains, self.cfg.clue_set)?;
            let entry = ManifestEntry {
                mixture_path: None,
                target_path: None,
                speech_paths: utt_ids.iter().map(|&u| self.speech_path(u)).collect(),
                speech_offsets: offsets,
                rir_paths: rirs
                    .iter()
                    .map(|r| r.path.clone().unwrap_or_else(|| PathBuf::from("<memory>")))
                    .collect(),
                d_q,
                r_spk: self.cfg.r_spk,
                speaker_distances: distances,
                dis_mw: mic_wall_distances(&spec)?,
                rt60: spec.rt60,
                active: sample.is_active(),
                seed: gain_seed,
                gains_dbfs: gains,
                length: len,
                rate: spec.rate,
            };
            return Ok((sample, entry));
        }
        Err(last_err.unwrap_or_else(|| Error::Infeasible("could not draw a sample".into())))
    }

    fn speech_path(&self, u: usize) -> PathBuf {
        let name = PathBuf::from(&self.corpus.utterance(u).name);
        match (self.corpus.root(), &self.speech_base) {
            (Some(root), Some(base)) => {
                let full = root.join(&name);
                full.strip_prefix(base).map(Path::to_path_buf).unwrap_or(full)
            }
            (Some(root), None) => root.join(&name),
            (None, _) => name,
        }
    }
}
