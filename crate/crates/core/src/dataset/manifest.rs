use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{assemble, crop_at, select_active, ClueSet, MixtureSample, QueryClue};
use crate::audio::read_wav;
use crate::error::{Error, Result};

/// One line of a sample manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub mixture_path: Option<PathBuf>,
    pub target_path: Option<PathBuf>,
    pub speech_paths: Vec<PathBuf>,
    /// Crop start of each utterance, in samples.
    pub speech_offsets: Vec<usize>,
    pub rir_paths: Vec<PathBuf>,
    pub d_q: f64,
    pub r_spk: f64,
    pub speaker_distances: Vec<f64>,
    pub dis_mw: [f64; 6],
    pub rt60: f64,
    pub active: bool,
    pub seed: u64,
    pub gains_dbfs: Vec<f64>,
    /// Utterance length in samples.
    pub length: usize,
    pub rate: u32,
}

impl ManifestEntry {
    fn check(&self) -> std::result::Result<(), String> {
        let k = self.speech_paths.len();
        if k == 0 {
            return Err("no sources".into());
        }
        if [self.speech_offsets.len(), self.rir_paths.len(), self.speaker_distances.len(), self.gains_dbfs.len()]
            .iter()
            .any(|&n| n != k)
        {
            return Err("per-source lists differ in length".into());
        }
        if !(self.r_spk > 0.0) {
            return Err(format!("r_spk must be positive, got {}", self.r_spk));
        }
        if self.length == 0 || self.rate == 0 {
            return Err("length and rate must be positive".into());
        }
        let active = !select_active(&self.speaker_distances, self.d_q, self.r_spk).is_empty();
        if active != self.active {
            return Err(format!("active flag {} disagrees with distances and query", self.active));
        }
        Ok(())
    }

    pub fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        self.mixture_path
            .iter()
            .chain(self.target_path.iter())
            .chain(&self.speech_paths)
            .chain(&self.rir_paths)
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Parses a JSON Lines manifest. Blank lines are skipped; malformed lines
/// are reported with their 1-based line number.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        entry.check().map_err(|message| Error::Manifest { line: i + 1, message })?;
        out.push(entry);
    }
    Ok(out)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Checks internal consistency and that every referenced file exists.
pub fn validate_manifest(entries: &[ManifestEntry], base: &Path) -> Result<()> {
    for (i, e) in entries.iter().enumerate() {
        e.check().map_err(|message| Error::Manifest { line: i + 1, message })?;
        for p in e.paths() {
            let full = resolve(base, p);
            if !full.exists() {
                return Err(Error::MissingFile(full));
            }
        }
    }
    Ok(())
}

/// Rebuilds the sample described by `entry` from its speech and RIR files.
/// `r_spk` overrides the stored radius and relabels the sample.
pub fn materialize(
    entry: &ManifestEntry,
    base: &Path,
    r_spk: Option<f64>,
    clue_set: ClueSet,
) -> Result<MixtureSample> {
    entry.check().map_err(Error::InvalidInput)?;
    let mut speeches = Vec::with_capacity(entry.speech_paths.len());
    for (p, &off) in entry.speech_paths.iter().zip(&entry.speech_offsets) {
        let full = resolve(base, p);
        if !full.exists() {
            return Err(Error::MissingFile(full));
        }
        speeches.push(crop_at(&read_wav(&full)?, entry.length, off));
    }
    let mut taps = Vec::with_capacity(entry.rir_paths.len());
    for p in &entry.rir_paths {
        let full = resolve(base, p);
        if !full.exists() {
            return Err(Error::MissingFile(full));
        }
        let h = read_wav(&full)?;
        if h.rate() != entry.rate {
            return Err(Error::invalid(format!("{}: rate {} Hz, expected {}", full.display(), h.rate(), entry.rate)));
        }
        taps.push(h.into_samples());
    }
    let kernels: Vec<&[f64]> = taps.iter().map(|t| t.as_slice()).collect();
    let clue = QueryClue::new(entry.d_q, entry.dis_mw, entry.rt60, clue_set)?;
    assemble(
        &speeches,
        &kernels,
        entry.rate,
        &entry.speaker_distances,
        clue,
        r_spk.unwrap_or(entry.r_spk),
        &entry.gains_dbfs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry() -> ManifestEntry {
        ManifestEntry {
            mixture_path: None,
            target_path: None,
            speech_paths: vec!["a.wav".into(), "b.wav".into()],
            speech_offsets: vec![0, 10],
            rir_paths: vec!["h0.wav".into(), "h1.wav".into()],
            d_q: 1.2,
            r_spk: 0.5,
            speaker_distances: vec![1.0, 3.0],
            dis_mw: [3.5, 3.5, 4.0, 4.0, 1.1, 1.9],
            rt60: 0.2,
            active: true,
            seed: 7,
            gains_dbfs: vec![-21.0, -24.0],
            length: 64_000,
            rate: 16_000,
        }
    }

    #[test]
    fn round_trip_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let entries = vec![entry(), entry()];
        write_manifest(&p, &entries).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), entries);
        write_manifest(&p, &[]).unwrap();
        assert!(read_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let good = serde_json::to_string(&entry()).unwrap();
        fs::write(&p, format!("{good}\n\n{{\"d_q\": 1}}\n")).unwrap();
        match read_manifest(&p) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let mut bad = entry();
        bad.active = false;
        fs::write(&p, serde_json::to_string(&bad).unwrap()).unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Manifest { line: 1, .. })));
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.wav", "b.wav", "h0.wav"] {
            fs::write(dir.path().join(name), b"").unwrap();
        }
        match validate_manifest(&[entry()], dir.path()) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("h1.wav")),
            other => panic!("{other:?}"),
        }
    }
}
