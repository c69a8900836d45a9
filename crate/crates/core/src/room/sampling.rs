use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{distance, DistanceBand, Position, RoomSpec};
use crate::audio::SAMPLE_RATE;

pub const SIM1_DIMS: [f64; 3] = [7.0, 8.0, 3.0];
pub const SIM1_MIC: Position = [3.5, 4.0, 1.1];
pub const SIM1_RT60: f64 = 0.2;
pub const SIM1_MIN_DISTANCE: f64 = 0.2;
pub const SIM1_MAX_DISTANCE: f64 = 5.0;

const SIM2_DIMS_LO: [f64; 3] = [4.0, 5.0, 2.5];
const SIM2_DIMS_HI: [f64; 3] = [8.0, 10.0, 3.0];
const SIM2_RT60: (f64, f64) = (0.2, 0.5);
const SIM2_MIC_CLEARANCE: f64 = 0.5;
const SIM2_MIC_HEIGHT: (f64, f64) = (1.0, 1.5);

pub const BAND_MAX_ATTEMPTS: usize = 10_000;

/// Where a talker may stand: away from the walls, at standing/sitting height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceConstraints {
    pub wall_clearance: f64,
    pub height: (f64, f64),
}

impl Default for SourceConstraints {
    fn default() -> Self {
        Self {
            wall_clearance: 0.5,
            height: (1.2, 2.0),
        }
    }
}

impl SourceConstraints {
    pub fn allows(&self, room: &RoomSpec, p: &Position) -> bool {
        let c = self.wall_clearance;
        (0..2).all(|a| p[a] >= c && p[a] <= room.dims[a] - c)
            && p[2] >= self.height.0
            && p[2] <= self.height.1
            && p[2] <= room.dims[2] - c
    }

    /// Axis-aligned box of admissible positions, if non-empty.
    fn bounds(&self, room: &RoomSpec) -> Option<([f64; 3], [f64; 3])> {
        let c = self.wall_clearance;
        let lo = [c, c, self.height.0.max(c)];
        let hi = [room.dims[0] - c, room.dims[1] - c, self.height.1.min(room.dims[2] - c)];
        (0..3).all(|a| lo[a] <= hi[a]).then_some((lo, hi))
    }
}

fn sim1_room() -> RoomSpec {
    RoomSpec {
        dims: SIM1_DIMS,
        rt60: SIM1_RT60,
        mic_pos: SIM1_MIC,
        rate: SAMPLE_RATE,
    }
}

/// The single Sim1 room with a source drawn 0.2 to 5.0 m from the microphone.
pub fn sample_sim1(seed: u64) -> (RoomSpec, Position) {
    let room = sim1_room();
    let constraints = SourceConstraints::default();
    let (lo, hi) = constraints.bounds(&room).expect("Sim1 geometry admits sources");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let p = [
            rng.gen_range(lo[0]..=hi[0]),
            rng.gen_range(lo[1]..=hi[1]),
            rng.gen_range(lo[2]..=hi[2]),
        ];
        let d = distance(&p, &room.mic_pos);
        if (SIM1_MIN_DISTANCE..=SIM1_MAX_DISTANCE).contains(&d) {
            return (room, p);
        }
    }
}

/// A random Sim2 room: dimensions, RT60 and one microphone placement.
pub fn sample_sim2_room(seed: u64) -> RoomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [
        rng.gen_range(SIM2_DIMS_LO[0]..=SIM2_DIMS_HI[0]),
        rng.gen_range(SIM2_DIMS_LO[1]..=SIM2_DIMS_HI[1]),
        rng.gen_range(SIM2_DIMS_LO[2]..=SIM2_DIMS_HI[2]),
    ];
    let rt60 = rng.gen_range(SIM2_RT60.0..=SIM2_RT60.1);
    let c = SIM2_MIC_CLEARANCE;
    let mic_pos = [
        rng.gen_range(c..=dims[0] - c),
        rng.gen_range(c..=dims[1] - c),
        rng.gen_range(SIM2_MIC_HEIGHT.0..=SIM2_MIC_HEIGHT.1),
    ];
    RoomSpec {
        dims,
        rt60,
        mic_pos,
        rate: SAMPLE_RATE,
    }
}

/// Rejection-samples a source whose distance to the microphone lies in
/// `band`, proposing uniformly within the spherical shell. Gives up after
/// [`BAND_MAX_ATTEMPTS`] proposals.
pub fn sample_source_in_band(room: &RoomSpec, band: &DistanceBand, seed: u64) -> Option<Position> {
    let constraints = SourceConstraints::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r3_lo, r3_hi) = (band.lo.powi(3), band.hi.powi(3));
    for _ in 0..BAND_MAX_ATTEMPTS {
        let r = rng.gen_range(r3_lo..=r3_hi).cbrt();
        let cos_theta: f64 = rng.gen_range(-1.0..=1.0);
        let phi = rng.gen_range(0.0..2.0 * PI);
        let sin_theta = (1.0 - cos_theta * cos_theta).sqrt();
        let p = [
            room.mic_pos[0] + r * sin_theta * phi.cos(),
            room.mic_pos[1] + r * sin_theta * phi.sin(),
            room.mic_pos[2] + r * cos_theta,
        ];
        if constraints.allows(room, &p) && band.contains(distance(&p, &room.mic_pos)) {
            return Some(p);
        }
    }
    None
}

/// Largest microphone distance any admissible source can have.
pub fn max_source_distance(room: &RoomSpec) -> f64 {
    let Some((lo, hi)) = SourceConstraints::default().bounds(room) else {
        return 0.0;
    };
    let mut best: f64 = 0.0;
    for corner in 0..8 {
        let p = [
            if corner & 1 == 0 { lo[0] } else { hi[0] },
            if corner & 2 == 0 { lo[1] } else { hi[1] },
            if corner & 4 == 0 { lo[2] } else { hi[2] },
        ];
        best = best.max(distance(&p, &room.mic_pos));
    }
    best
}

/// Sim2 distance bands: `[0.2, 0.5]` then 0.5 m steps up to 7 m.
pub fn sim2_bands() -> Vec<DistanceBand> {
    let mut out = vec![DistanceBand { lo: 0.2, hi: 0.5 }];
    let mut lo = 0.5;
    while lo < 7.0 - 1e-9 {
        out.push(DistanceBand { lo, hi: lo + 0.5 });
        lo += 0.5;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::mic_wall_distances;

    #[test]
    fn sim1_constraints_hold() {
        let c = SourceConstraints::default();
        for seed in 0..10_000 {
            let (room, p) = sample_sim1(seed);
            assert_eq!(room.dims, SIM1_DIMS);
            assert_eq!(room.rt60, 0.2);
            assert_eq!(room.mic_pos, SIM1_MIC);
            assert!(p[0] >= 0.5 && p[0] <= 6.5 && p[1] >= 0.5 && p[1] <= 7.5);
            assert!(p[2] >= 1.2 && p[2] <= 2.0);
            let d = distance(&p, &room.mic_pos);
            assert!((0.2..=5.0).contains(&d));
            assert!(c.allows(&room, &p));
        }
        assert_eq!(sample_sim1(42), sample_sim1(42));
    }

    #[test]
    fn sim2_rooms_in_range() {
        for seed in 0..1000 {
            let r = sample_sim2_room(seed);
            for a in 0..3 {
                assert!(r.dims[a] >= SIM2_DIMS_LO[a] && r.dims[a] <= SIM2_DIMS_HI[a]);
            }
            assert!((0.2..=0.5).contains(&r.rt60));
            let d = mic_wall_distances(&r).unwrap();
            assert!(d.iter().all(|&v| v >= 0.5), "{d:?}");
        }
        assert_eq!(sample_sim2_room(9), sample_sim2_room(9));
    }

    #[test]
    fn near_band_always_feasible() {
        let band = DistanceBand::new(0.0, 0.5).unwrap();
        for seed in 0..200 {
            let room = sample_sim2_room(seed);
            let p = sample_source_in_band(&room, &band, seed).expect("near band feasible");
            assert!(distance(&p, &room.mic_pos) <= 0.5);
        }
    }

    #[test]
    fn far_band_infeasible_in_small_room() {
        let room = RoomSpec {
            dims: [4.0, 5.0, 2.5],
            rt60: 0.3,
            mic_pos: [2.0, 2.5, 1.2],
            rate: SAMPLE_RATE,
        };
        assert!(max_source_distance(&room) < 6.0);
        let band = DistanceBand::new(6.0, 6.5).unwrap();
        assert_eq!(sample_source_in_band(&room, &band, 1), None);
    }

    #[test]
    fn bands_cover_feasible_range() {
        let room = sample_sim2_room(3);
        let max_d = max_source_distance(&room);
        let bands = sim2_bands();
        let mut hist = vec![0usize; bands.len()];
        for i in 0..500 {
            let b = i % bands.len();
            if let Some(p) = sample_source_in_band(&room, &bands[b], 1000 + i as u64) {
                let d = distance(&p, &room.mic_pos);
                assert!(bands[b].contains(d));
                hist[b] += 1;
            }
        }
        for (b, band) in bands.iter().enumerate() {
            // bands well inside the reachable range must be populated
            if band.hi < max_d - 0.5 {
                assert!(hist[b] > 0, "band {band:?} empty (max {max_d})");
            }
            if band.lo > max_d {
                assert_eq!(hist[b], 0);
            }
        }
    }
}
