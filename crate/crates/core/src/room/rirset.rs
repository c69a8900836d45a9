use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Position, RirRecord, RoomSpec};
use crate::audio::{read_wav, read_wav_channels, write_wav, SampleFormat};
use crate::error::{Error, Result};

pub const RIR_SET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirManifestEntry {
    /// Relative to the manifest's directory.
    pub rir_path: PathBuf,
    pub room_dims: [f64; 3],
    pub rt60: f64,
    pub mic_pos: Position,
    pub src_pos: Position,
    pub distance: f64,
    /// Entries sharing a room id share a room and microphone.
    pub room_id: usize,
    pub rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirSetManifest {
    pub version: u32,
    pub protocol: String,
    pub entries: Vec<RirManifestEntry>,
}

impl RirManifestEntry {
    pub fn room(&self) -> RoomSpec {
        RoomSpec {
            dims: self.room_dims,
            rt60: self.rt60,
            mic_pos: self.mic_pos,
            rate: self.rate,
        }
    }

    pub fn load(&self, base: &Path) -> Result<RirRecord> {
        let w = read_wav(base.join(&self.rir_path))?;
        if w.rate() != self.rate {
            return Err(Error::invalid(format!(
                "{}: rate {} differs from manifest {}",
                self.rir_path.display(),
                w.rate(),
                self.rate
            )));
        }
        let rec = RirRecord::new(w.into_samples(), self.room(), self.src_pos)?;
        if (rec.distance - self.distance).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "{}: stored distance {} disagrees with geometry {}",
                self.rir_path.display(),
                self.distance,
                rec.distance
            )));
        }
        Ok(rec)
    }
}

/// Writes each record as a float32 WAV under `dir/rirs/` and a
/// `rirs.json` manifest in `dir`. Returns the manifest path.
pub fn write_rir_set(
    dir: &Path,
    protocol: &str,
    records: &[(usize, RirRecord)],
) -> Result<PathBuf> {
    let rir_dir = dir.join("rirs");
    fs::create_dir_all(&rir_dir)?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, (room_id, rec)) in records.iter().enumerate() {
        let rel = PathBuf::from("rirs").join(format!("rir_{i:06}.wav"));
        write_wav(dir.join(&rel), &rec.to_waveform(), SampleFormat::Float32)?;
        entries.push(RirManifestEntry {
            rir_path: rel,
            room_dims: rec.room.dims,
            rt60: rec.room.rt60,
            mic_pos: rec.room.mic_pos,
            src_pos: rec.src_pos,
            distance: rec.distance,
            room_id: *room_id,
            rate: rec.rate,
        });
    }
    let manifest = RirSetManifest {
        version: RIR_SET_VERSION,
        protocol: protocol.to_string(),
        entries,
    };
    let path = dir.join("rirs.json");
    let mut f = BufWriter::new(fs::File::create(&path)?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(path)
}

pub fn read_rir_set(path: &Path) -> Result<RirSetManifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let manifest: RirSetManifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.version != RIR_SET_VERSION {
        return Err(Error::invalid(format!(
            "unsupported RIR manifest version {}",
            manifest.version
        )));
    }
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSidecar {
    rate: u32,
    len: usize,
    room: RoomSpec,
    src_pos: Position,
    distance: f64,
}

/// Writes taps as raw little-endian float32 at `path` plus `path.json` metadata.
pub fn write_rir_raw(path: &Path, rec: &RirRecord) -> Result<()> {
    let mut bytes = Vec::with_capacity(rec.taps.len() * 4);
    for &t in &rec.taps {
        bytes.extend_from_slice(&(t as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    let side = RawSidecar {
        rate: rec.rate,
        len: rec.taps.len(),
        room: rec.room,
        src_pos: rec.src_pos,
        distance: rec.distance,
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&side)?)?;
    Ok(())
}

pub fn read_rir_raw(path: &Path) -> Result<RirRecord> {
    let side_path = sidecar_path(path);
    if !side_path.exists() {
        return Err(Error::MissingFile(side_path));
    }
    let side: RawSidecar = serde_json::from_slice(&fs::read(&side_path)?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != side.len * 4 {
        return Err(Error::invalid(format!(
            "{}: expected {} float32 taps, found {} bytes",
            path.display(),
            side.len,
            bytes.len()
        )));
    }
    let taps = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    RirRecord::new(taps, side.room, side.src_pos)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Metadata next to each WAV of a measured grid dataset (`name.wav` +
/// `name.json`). Multichannel files list one microphone per channel.
#[derive(Debug, Clone, Deserialize)]
struct GridSidecar {
    room_dims: [f64; 3],
    rt60: f64,
    src_pos: Position,
    #[serde(default)]
    mic_pos: Option<Position>,
    #[serde(default)]
    mic_positions: Option<Vec<Position>>,
}

/// Loads every `*.wav` with a matching `*.json` sidecar in `dir`, one record
/// per channel, sorted by file name.
pub fn read_grid_rir_dir(dir: &Path) -> Result<Vec<RirRecord>> {
    let mut wavs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    wavs.sort();
    let mut out = Vec::new();
    for wav in wavs {
        let side_path = wav.with_extension("json");
        if !side_path.exists() {
            return Err(Error::MissingFile(side_path));
        }
        let side: GridSidecar = serde_json::from_slice(&fs::read(&side_path)?)?;
        let channels = read_wav_channels(&wav)?;
        let mics: Vec<Position> = match (&side.mic_positions, side.mic_pos) {
            (Some(list), _) => list.clone(),
            (None, Some(p)) => vec![p; channels.len()],
            (None, None) => {
                return Err(Error::invalid(format!(
                    "{}: sidecar lacks mic_pos/mic_positions",
                    side_path.display()
                )))
            }
        };
        if mics.len() != channels.len() {
            return Err(Error::invalid(format!(
                "{}: {} channels but {} microphone positions",
                wav.display(),
                channels.len(),
                mics.len()
            )));
        }
        for (w, mic) in channels.into_iter().zip(mics) {
            let room = RoomSpec {
                dims: side.room_dims,
                rt60: side.rt60,
                mic_pos: mic,
                rate: w.rate(),
            };
            room.validate()?;
            out.push(RirRecord::new(w.into_samples(), room, side.src_pos)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> RirRecord {
        let room = RoomSpec {
            dims: [5.9, 6.9, 2.9],
            rt60: 0.6,
            mic_pos: [3.0, 3.0, 1.2],
            rate: 16_000,
        };
        RirRecord::new(vec![0.0, 0.5, -0.25, 0.125], room, [1.0, 2.0, 1.5]).unwrap()
    }

    #[test]
    fn set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = record();
        let path = write_rir_set(dir.path(), "test", &[(0, rec.clone()), (0, rec.clone())]).unwrap();
        let m = read_rir_set(&path).unwrap();
        assert_eq!(m.entries.len(), 2);
        let back = m.entries[1].load(dir.path()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = record();
        let p = dir.path().join("h.f32");
        write_rir_raw(&p, &rec).unwrap();
        assert_eq!(read_rir_raw(&p).unwrap(), rec);
    }

    #[test]
    fn grid_reader_splits_channels() {
        let dir = tempfile::tempdir().unwrap();
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(dir.path().join("loc01.wav"), spec).unwrap();
        for s in [1.0f32, 0.5, 0.25, 0.125] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        fs::write(
            dir.path().join("loc01.json"),
            r#"{"room_dims":[5.9,6.9,2.9],"rt60":0.6,"src_pos":[1,1,1.5],
                "mic_positions":[[3,3,1.2],[3.1,3,1.2]]}"#,
        )
        .unwrap();
        let recs = read_grid_rir_dir(dir.path()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].taps, vec![1.0, 0.25]);
        assert_eq!(recs[1].taps, vec![0.5, 0.125]);
        assert!(recs[1].distance > recs[0].distance);
    }
}
