use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{echo, BuildDatasetConfig, Protocol};
use crate::audio::{write_wav, SampleFormat};
use crate::dataset::{write_manifest, ManifestEntry, MixtureGenerator, RirPool, SpeechCorpus};
use crate::error::{Error, Result};
use crate::room::{
    read_rir_set, sample_sim1, sample_sim2_room, sample_source_in_band, sim2_bands, simulate_rir, write_rir_set,
    RirRecord,
};

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// Independent seed for item `index` of stream `tag`.
pub(crate) fn sub_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

const TAG_SOURCE: u64 = 1;
const TAG_RIR: u64 = 2;
const TAG_ROOM: u64 = 3;
const TAG_SPLIT: u64 = 4;
const TAG_MIX: u64 = 5;
const TAG_SPEECH: u64 = 6;

/// Shuffles `0..n` and cuts it by `ratios` (normalised), giving every part
/// at least `min` items.
fn split_indices(n: usize, ratios: [f64; 3], min: usize, seed: u64) -> Result<[Vec<usize>; 3]> {
    let min = min.max(1);
    let total: f64 = ratios.iter().sum();
    let n1 = ((n as f64 * ratios[1] / total).round() as usize).max(min);
    let n2 = ((n as f64 * ratios[2] / total).round() as usize).max(min);
    if n1 + n2 + min > n {
        return Err(Error::Infeasible(format!("{n} items cannot give three splits {min} each")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n0 = n - n1 - n2;
    let mut parts = [
        order[..n0].to_vec(),
        order[n0..n0 + n1].to_vec(),
        order[n0 + n1..].to_vec(),
    ];
    parts.iter_mut().for_each(|p| p.sort_unstable());
    Ok(parts)
}

/// `(room_id, record)` pairs for the protocol.
fn simulate(cfg: &BuildDatasetConfig) -> Result<Vec<(usize, RirRecord)>> {
    let seed = cfg.seed;
    match cfg.protocol {
        Protocol::Sim1 => (0..cfg.n_rirs as u64)
            .into_par_iter()
            .map(|i| {
                let (room, src) = sample_sim1(sub_seed(seed, TAG_SOURCE, i));
                Ok((0, simulate_rir(&room, &src, sub_seed(seed, TAG_RIR, i))?))
            })
            .collect(),
        Protocol::Sim2 => {
            let bands = sim2_bands();
            let mut jobs = Vec::new();
            for r in 0..cfg.n_rooms {
                let room = sample_sim2_room(sub_seed(seed, TAG_ROOM, r as u64));
                room.validate()?;
                for (b, band) in bands.iter().enumerate() {
                    for k in 0..cfg.sources_per_band {
                        let id = ((r * bands.len() + b) * cfg.sources_per_band + k) as u64;
                        // bands beyond the room's reach stay empty
                        if let Some(src) = sample_source_in_band(&room, band, sub_seed(seed, TAG_SOURCE, id)) {
                            jobs.push((r, room, src, sub_seed(seed, TAG_RIR, id)));
                        }
                    }
                }
            }
            jobs.into_par_iter()
                .map(|(r, room, src, s)| Ok((r, simulate_rir(&room, &src, s)?)))
                .collect()
        }
    }
}

#[derive(Serialize)]
struct SplitRecord {
    name: &'static str,
    rir_indices: Vec<usize>,
    rooms: Vec<usize>,
    speakers: Vec<String>,
    manifest: PathBuf,
    n_samples: usize,
    n_active: usize,
}

#[derive(Serialize)]
struct SplitsFile {
    protocol: &'static str,
    seed: u64,
    splits: Vec<SplitRecord>,
}

/// Simulates the RIR set, assembles mixtures for the three splits and writes
/// everything under `out`. Every check that can fail on the configuration
/// runs before the first file is written.
pub fn build_dataset(cfg: &BuildDatasetConfig, out: &Path) -> Result<()> {
    let seed = cfg.seed;
    let corpus = match &cfg.speech_dir {
        Some(dir) => SpeechCorpus::open(dir)?,
        None => {
            let s = &cfg.synthetic_speech;
            SpeechCorpus::synthetic(s.speakers, s.utterances_per_speaker, s.secs, sub_seed(seed, TAG_SPEECH, 0))
        }
    };
    let speaker_parts = split_indices(corpus.num_speakers(), cfg.speaker_split, cfg.dataset.n_speakers, sub_seed(seed, TAG_SPLIT, 0))
        .map_err(|e| Error::config(format!("speaker split: {e}")))?;

    log::info!("simulating {} RIRs", cfg.protocol.as_str());
    let records = simulate(cfg)?;
    let groups: Vec<usize> = match cfg.protocol {
        Protocol::Sim1 => (0..records.len()).collect(),
        Protocol::Sim2 => {
            let mut rooms: Vec<usize> = records.iter().map(|(r, _)| *r).collect();
            rooms.dedup();
            rooms
        }
    };
    let min_group = match cfg.protocol {
        Protocol::Sim1 => cfg.dataset.n_speakers,
        Protocol::Sim2 => 1,
    };
    let group_parts = split_indices(groups.len(), cfg.split_ratios, min_group, sub_seed(seed, TAG_SPLIT, 1))
        .map_err(|e| Error::config(format!("RIR split: {e}")))?;
    let rir_parts: Vec<Vec<usize>> = group_parts
        .iter()
        .map(|part| match cfg.protocol {
            Protocol::Sim1 => part.clone(),
            Protocol::Sim2 => (0..records.len())
                .filter(|&i| part.iter().any(|&g| groups[g] == records[i].0))
                .collect(),
        })
        .collect();

    // Feasibility against in-memory pools before touching the disk.
    for (s, name) in SPLIT_NAMES.iter().enumerate() {
        let pool = pool_of(&records, &rir_parts[s]);
        let sub = corpus.subset(&speaker_parts[s]);
        MixtureGenerator::new(&sub, &pool, cfg.dataset.clone(), 0)
            .map_err(|e| Error::config(format!("{name} split: {e}")))?;
    }

    fs::create_dir_all(out)?;
    echo(cfg, &out.join("config.json"))?;
    let rir_manifest = write_rir_set(out, cfg.protocol.as_str(), &records)?;
    let rir_set = read_rir_set(&rir_manifest)?;
    let corpus = match &cfg.speech_dir {
        Some(_) => corpus,
        None => corpus.write_to(&out.join("speech"))?,
    };

    let mut splits = Vec::new();
    for (s, name) in SPLIT_NAMES.iter().enumerate() {
        let entries: Vec<_> = rir_parts[s].iter().map(|&i| rir_set.entries[i].clone()).collect();
        let pool = RirPool::from_entries(&entries, out)?;
        let sub = corpus.subset(&speaker_parts[s]);
        let gen = MixtureGenerator::new(&sub, &pool, cfg.dataset.clone(), sub_seed(seed, TAG_MIX, s as u64))?
            .with_manifest_dir(out);
        let audio_dir = out.join(name);
        let mut manifest: Vec<ManifestEntry> = (0..cfg.n_samples[s] as u64)
            .into_par_iter()
            .map(|i| {
                let (sample, mut entry) = gen.generate(i)?;
                if cfg.write_audio {
                    let mix = PathBuf::from(name).join(format!("mix_{i:06}.wav"));
                    let tgt = PathBuf::from(name).join(format!("target_{i:06}.wav"));
                    fs::create_dir_all(&audio_dir)?;
                    write_wav(out.join(&mix), &sample.mixture, SampleFormat::Float32)?;
                    write_wav(out.join(&tgt), &sample.target, SampleFormat::Float32)?;
                    entry.mixture_path = Some(mix);
                    entry.target_path = Some(tgt);
                }
                Ok(entry)
            })
            .collect::<Result<_>>()?;
        for e in &mut manifest {
            e.speech_paths.iter_mut().for_each(|p| *p = portable(p));
            e.rir_paths.iter_mut().for_each(|p| *p = portable(p));
        }
        let path = PathBuf::from(format!("{name}.jsonl"));
        write_manifest(&out.join(&path), &manifest)?;
        let mut rooms: Vec<usize> = entries.iter().map(|e| e.room_id).collect();
        rooms.dedup();
        splits.push(SplitRecord {
            name,
            rir_indices: rir_parts[s].clone(),
            rooms,
            speakers: speaker_parts[s].iter().map(|&k| corpus.speaker_name(k).to_string()).collect(),
            manifest: path,
            n_samples: manifest.len(),
            n_active: manifest.iter().filter(|e| e.active).count(),
        });
        log::info!(
            "{name}: {} samples ({} active) from {} RIRs",
            manifest.len(),
            splits[s].n_active,
            entries.len()
        );
    }
    echo(
        &SplitsFile {
            protocol: cfg.protocol.as_str(),
            seed,
            splits,
        },
        &out.join("splits.json"),
    )
}

fn pool_of(records: &[(usize, RirRecord)], idx: &[usize]) -> RirPool {
    let mut groups: Vec<(usize, Vec<RirRecord>)> = Vec::new();
    for &i in idx {
        let (room, rec) = &records[i];
        match groups.iter_mut().find(|(r, _)| r == room) {
            Some((_, g)) => g.push(rec.clone()),
            None => groups.push((*room, vec![rec.clone()])),
        }
    }
    RirPool::from_records(groups.into_iter().map(|(_, g)| g).collect())
}

/// Forward slashes so manifests read the same on every platform.
fn portable(p: &Path) -> PathBuf {
    PathBuf::from(p.to_string_lossy().replace('\\', "/"))
}
