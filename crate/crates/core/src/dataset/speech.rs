use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{read_wav, write_wav, SampleFormat, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Audio {
    File(PathBuf),
    Memory(Arc<Waveform>),
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub speaker: usize,
    /// Path relative to the corpus root for file-backed corpora.
    pub name: String,
    audio: Audio,
}

/// Speech grouped by speaker: a directory with one sub-directory per speaker
/// holding mono 16 kHz WAV files, or an in-memory synthetic corpus.
#[derive(Debug, Clone)]
pub struct SpeechCorpus {
    root: Option<PathBuf>,
    speakers: Vec<String>,
    utterances: Vec<Utterance>,
    by_speaker: Vec<Vec<usize>>,
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_wavs(&p, out)?;
        } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    Ok(())
}

impl SpeechCorpus {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::MissingFile(root.to_path_buf()));
        }
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut corpus = Self {
            root: Some(root.to_path_buf()),
            speakers: Vec::new(),
            utterances: Vec::new(),
            by_speaker: Vec::new(),
        };
        for dir in dirs {
            let mut wavs = Vec::new();
            collect_wavs(&dir, &mut wavs)?;
            if wavs.is_empty() {
                continue;
            }
            let speaker = corpus.speakers.len();
            corpus.speakers.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
            let mut ids = Vec::with_capacity(wavs.len());
            for w in wavs {
                let name = w.strip_prefix(root).unwrap_or(&w).to_string_lossy().replace('\\', "/");
                ids.push(corpus.utterances.len());
                corpus.utterances.push(Utterance {
                    speaker,
                    name,
                    audio: Audio::File(w),
                });
            }
            corpus.by_speaker.push(ids);
        }
        if corpus.speakers.is_empty() {
            return Err(Error::invalid(format!(
                "{}: no speaker directories with WAV files",
                root.display()
            )));
        }
        Ok(corpus)
    }

    /// Speech-like harmonic signals, `utts_per_speaker` per speaker, each
    /// speaker with its own pitch range.
    pub fn synthetic(n_speakers: usize, utts_per_speaker: usize, secs: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut corpus = Self {
            root: None,
            speakers: Vec::new(),
            utterances: Vec::new(),
            by_speaker: Vec::new(),
        };
        for s in 0..n_speakers {
            let f0 = rng.gen_range(90.0..240.0);
            corpus.speakers.push(format!("spk{s:03}"));
            let mut ids = Vec::new();
            for u in 0..utts_per_speaker {
                ids.push(corpus.utterances.len());
                let w = synth_utterance(f0, secs, SAMPLE_RATE, rng.gen());
                corpus.utterances.push(Utterance {
                    speaker: s,
                    name: format!("spk{s:03}/utt{u:03}.wav"),
                    audio: Audio::Memory(Arc::new(w)),
                });
            }
            corpus.by_speaker.push(ids);
        }
        corpus
    }

    /// Writes every utterance under `root` (16-bit PCM) and returns the
    /// file-backed corpus.
    pub fn write_to(&self, root: &Path) -> Result<Self> {
        for (i, u) in self.utterances.iter().enumerate() {
            let path = root.join(&u.name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            write_wav(&path, &self.load(i)?, SampleFormat::Pcm16)?;
        }
        Self::open(root)
    }

    /// The corpus restricted to `speakers`, renumbered in the given order.
    pub fn subset(&self, speakers: &[usize]) -> Self {
        let mut out = Self {
            root: self.root.clone(),
            speakers: Vec::with_capacity(speakers.len()),
            utterances: Vec::new(),
            by_speaker: Vec::with_capacity(speakers.len()),
        };
        for (new, &s) in speakers.iter().enumerate() {
            out.speakers.push(self.speakers[s].clone());
            let ids = self.by_speaker[s]
                .iter()
                .map(|&u| {
                    out.utterances.push(Utterance {
                        speaker: new,
                        ..self.utterances[u].clone()
                    });
                    out.utterances.len() - 1
                })
                .collect();
            out.by_speaker.push(ids);
        }
        out
    }

    /// Directory of a file-backed corpus.
    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn speaker_name(&self, s: usize) -> &str {
        &self.speakers[s]
    }

    pub fn speaker_utterances(&self, s: usize) -> &[usize] {
        &self.by_speaker[s]
    }

    pub fn utterance(&self, i: usize) -> &Utterance {
        &self.utterances[i]
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn load(&self, i: usize) -> Result<Waveform> {
        let u = &self.utterances[i];
        let w = match &u.audio {
            Audio::Memory(w) => (**w).clone(),
            Audio::File(p) => read_wav(p)?,
        };
        if w.rate() != SAMPLE_RATE {
            return Err(Error::invalid(format!(
                "{}: sample rate {} Hz, expected {SAMPLE_RATE}",
                u.name,
                w.rate()
            )));
        }
        Ok(w)
    }
}

/// Uniformly placed crop of `len` samples; shorter inputs are zero-padded
/// from offset 0.
pub fn crop(w: &Waveform, len: usize, rng: &mut impl Rng) -> (Waveform, usize) {
    let offset = if w.len() > len { rng.gen_range(0..=w.len() - len) } else { 0 };
    (crop_at(w, len, offset), offset)
}

pub fn crop_at(w: &Waveform, len: usize, offset: usize) -> Waveform {
    let start = offset.min(w.len());
    let end = (start + len).min(w.len());
    let mut s = w.samples()[start..end].to_vec();
    s.resize(len, 0.0);
    Waveform::new(s, w.rate()).expect("crop of finite samples")
}

// Vowel formants (F1, F2) in Hz.
const VOWELS: [(f64, f64); 6] = [
    (730.0, 1090.0),
    (530.0, 1840.0),
    (270.0, 2290.0),
    (570.0, 840.0),
    (300.0, 870.0),
    (660.0, 1720.0),
];

/// A voiced, syllabic test signal: glottal harmonics on a drifting pitch
/// contour shaped by vowel formants, with short noisy consonants and gaps.
pub fn synth_utterance(f0: f64, secs: f64, rate: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (secs * rate as f64).round() as usize;
    let fs = rate as f64;
    let mut out = vec![0.0; n];
    let mut pos = rng.gen_range(0..(0.05 * fs) as usize + 1);
    let mut phase = 0.0f64;
    while pos < n {
        let syl = rng.gen_range((0.12 * fs) as usize..(0.3 * fs) as usize);
        let (f1, f2) = VOWELS[rng.gen_range(0..VOWELS.len())];
        let pitch0 = f0 * rng.gen_range(0.85..1.15);
        let glide = rng.gen_range(-0.15..0.15);
        let amp = rng.gen_range(0.4..1.0);
        let consonant = rng.gen_bool(0.5);
        let cons_len = if consonant { (0.04 * fs) as usize } else { 0 };
        for i in 0..syl.min(n - pos) {
            let t = i as f64 / syl as f64;
            let env = (PI * t).sin().powf(0.6) * amp;
            let mut v = 0.0;
            if i < cons_len {
                v += 0.3 * rng.gen_range(-1.0..1.0) * env;
            } else {
                let pitch = pitch0 * (1.0 + glide * t);
                phase += 2.0 * PI * pitch / fs;
                let mut h = 1;
                while h as f64 * pitch < 0.45 * fs.min(8000.0) {
                    let f = h as f64 * pitch;
                    let w = 1.0 / (1.0 + ((f - f1) / 90.0).powi(2)) + 0.7 / (1.0 + ((f - f2) / 120.0).powi(2));
                    v += (w + 0.02) / h as f64 * (h as f64 * phase).sin();
                    h += 1;
                }
                v *= env;
            }
            out[pos + i] += v;
        }
        pos += syl + rng.gen_range((0.02 * fs) as usize..(0.12 * fs) as usize);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut out {
            *v *= 0.5 / peak;
        }
    }
    Waveform::new(out, rate).expect("finite synthesis")
}
