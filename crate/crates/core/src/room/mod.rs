//! Shoebox room acoustics: image-source RIR synthesis, the Sim1/Sim2 placement
//! protocols, room features, decay/DRR estimators and sine-sweep measurement.

mod acoustics;
mod image;
mod rirset;
mod sampling;
mod sweep;

pub use acoustics::{drr, estimate_rt60, DRR_CAP_DB};
pub use image::{simulate_rir, simulate_rir_with, Absorption, SPEED_OF_SOUND};
pub use rirset::{
    read_grid_rir_dir, read_rir_raw, read_rir_set, write_rir_raw, write_rir_set, RirManifestEntry,
    RirSetManifest,
};
pub use sampling::{
    max_source_distance, sample_sim1, sample_sim2_room, sample_source_in_band, sim2_bands,
    SourceConstraints, BAND_MAX_ATTEMPTS, SIM1_DIMS, SIM1_MAX_DISTANCE, SIM1_MIC, SIM1_MIN_DISTANCE,
    SIM1_RT60,
};
pub use sweep::{deconvolve_sweep, generate_ess, Ess};

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Cartesian position in metres.
pub type Position = [f64; 3];

pub fn distance(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    /// (Lx, Ly, Lz) in metres.
    pub dims: [f64; 3],
    pub rt60: f64,
    pub mic_pos: Position,
    pub rate: u32,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::invalid(format!("room dimensions must be positive: {:?}", self.dims)));
        }
        if !(self.rt60 > 0.0 && self.rt60.is_finite()) {
            return Err(Error::invalid(format!("rt60 must be positive, got {}", self.rt60)));
        }
        if self.rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if !self.contains(&self.mic_pos) {
            return Err(Error::invalid(format!(
                "microphone {:?} is not strictly inside room {:?}",
                self.mic_pos, self.dims
            )));
        }
        Ok(())
    }

    /// Strict interior test.
    pub fn contains(&self, p: &Position) -> bool {
        p.iter().zip(&self.dims).all(|(&x, &l)| x > 0.0 && x < l)
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }
}

/// Distances from the microphone to the six walls in the order
/// `[x, Lx - x, y, Ly - y, z, Lz - z]`.
pub fn mic_wall_distances(room: &RoomSpec) -> Result<[f64; 6]> {
    if !room.contains(&room.mic_pos) {
        return Err(Error::invalid(format!(
            "microphone {:?} is on or outside the room boundary {:?}",
            room.mic_pos, room.dims
        )));
    }
    let [x, y, z] = room.mic_pos;
    let [lx, ly, lz] = room.dims;
    Ok([x, lx - x, y, ly - y, z, lz - z])
}

/// A simulated or measured impulse response with its geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirRecord {
    pub taps: Vec<f64>,
    pub rate: u32,
    /// Source-microphone distance in metres.
    pub distance: f64,
    pub room: RoomSpec,
    pub src_pos: Position,
}

impl RirRecord {
    pub fn new(taps: Vec<f64>, room: RoomSpec, src_pos: Position) -> Result<Self> {
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("non-finite RIR tap"));
        }
        Ok(Self {
            taps,
            rate: room.rate,
            distance: distance(&src_pos, &room.mic_pos),
            room,
            src_pos,
        })
    }

    pub fn to_waveform(&self) -> Waveform {
        // taps are checked finite on construction
        Waveform::new(self.taps.clone(), self.rate).expect("finite taps")
    }
}

/// Closed distance interval `[lo, hi]` in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBand {
    pub lo: f64,
    pub hi: f64,
}

impl DistanceBand {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::invalid(format!("invalid distance band [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.lo && d <= self.hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim1_room() -> RoomSpec {
        RoomSpec {
            dims: [7.0, 8.0, 3.0],
            rt60: 0.2,
            mic_pos: [3.5, 4.0, 1.1],
            rate: 16_000,
        }
    }

    #[test]
    fn mic_wall_distances_sim1() {
        let d = mic_wall_distances(&sim1_room()).unwrap();
        let expect = [3.5, 3.5, 4.0, 4.0, 1.1, 1.9];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mic_wall_distances_pairs_sum_to_dims() {
        let mut room = sim1_room();
        room.dims = [5.3, 6.1, 2.7];
        room.mic_pos = [2.65, 3.05, 1.35];
        let d = mic_wall_distances(&room).unwrap();
        for axis in 0..3 {
            assert_eq!(d[2 * axis], d[2 * axis + 1]);
            assert!((d[2 * axis] + d[2 * axis + 1] - room.dims[axis]).abs() < 1e-12);
        }
        room.mic_pos = [0.0, 1.0, 1.0];
        assert!(mic_wall_distances(&room).is_err());
        room.mic_pos = [1.0, 7.0, 1.0];
        assert!(mic_wall_distances(&room).is_err());
    }

    #[test]
    fn record_distance_matches_geometry() {
        let rec = RirRecord::new(vec![1.0], sim1_room(), [1.0, 2.0, 1.5]).unwrap();
        let expect = ((2.5f64).powi(2) + 4.0 + 0.16).sqrt();
        assert!((rec.distance - expect).abs() < 1e-12);
    }

    #[test]
    fn band_validation() {
        assert!(DistanceBand::new(0.5, 0.2).is_err());
        assert!(DistanceBand::new(-0.1, 0.2).is_err());
        let b = DistanceBand::new(0.0, 0.5).unwrap();
        assert!(b.contains(0.5) && !b.contains(0.51));
    }
}
