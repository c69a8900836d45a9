use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::f64::consts::PI;

use super::acoustics::rt60_from_energy;
use super::{distance, Position, RirRecord, RoomSpec};
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Maximum displacement applied to each image source, in metres.
const IMAGE_JITTER: f64 = 0.08;

/// Length of the modelled tail relative to RT60.
const TAIL_FACTOR: f64 = 1.5;

/// How the uniform wall absorption is derived from the target RT60.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Absorption {
    /// Sabine inversion, `alpha = 0.161 V / (S T60)`.
    Sabine,
    /// Eyring inversion, `alpha = 1 - exp(-0.161 V / (S T60))`.
    Eyring,
    /// Bisection on the rendered response so that its Schroeder T20 equals
    /// the target, starting from the Sabine value.
    #[default]
    Calibrated,
}

fn sabine_k(room: &RoomSpec) -> f64 {
    0.161 * room.volume() / (room.surface() * room.rt60)
}

/// Image positions along one axis, relative to the microphone, with the
/// number of wall reflections each image implies.
fn axis_images(src: f64, mic: f64, len: f64, reach: f64) -> Vec<(f64, u32)> {
    let n_max = (reach / (2.0 * len)).ceil() as i64 + 1;
    let mut out = Vec::new();
    for n in -n_max..=n_max {
        for q in 0..2i64 {
            let pos = (1 - 2 * q) as f64 * src + 2.0 * n as f64 * len;
            let offset = pos - mic;
            if offset.abs() <= reach + IMAGE_JITTER {
                out.push((offset, ((n - q).abs() + n.abs()) as u32));
            }
        }
    }
    out
}

struct ImageLattice {
    xs: Vec<(f64, u32)>,
    ys: Vec<(f64, u32)>,
    zs: Vec<(f64, u32)>,
    reach: f64,
    max_order: u32,
}

impl ImageLattice {
    fn new(room: &RoomSpec, src: &Position, reach: f64) -> Self {
        let xs = axis_images(src[0], room.mic_pos[0], room.dims[0], reach);
        let ys = axis_images(src[1], room.mic_pos[1], room.dims[1], reach);
        let zs = axis_images(src[2], room.mic_pos[2], room.dims[2], reach);
        let max_order = [&xs, &ys, &zs]
            .iter()
            .map(|axis| axis.iter().map(|&(_, r)| r).max().unwrap_or(0))
            .sum();
        Self { xs, ys, zs, reach, max_order }
    }

    /// Calls `f(dx, dy, dz, order)` for every image within reach (before jitter).
    fn for_each(&self, mut f: impl FnMut(f64, f64, f64, u32)) {
        let reach2 = (self.reach + IMAGE_JITTER).powi(2);
        for &(dx, rx) in &self.xs {
            let dx2 = dx * dx;
            if dx2 > reach2 {
                continue;
            }
            for &(dy, ry) in &self.ys {
                let dxy2 = dx2 + dy * dy;
                if dxy2 > reach2 {
                    continue;
                }
                for &(dz, rz) in &self.zs {
                    if dxy2 + dz * dz > reach2 {
                        continue;
                    }
                    f(dx, dy, dz, rx + ry + rz);
                }
            }
        }
    }
}

/// Corner frequency of the DC-blocking high-pass applied to every response.
const HIGH_PASS_HZ: f64 = 40.0;

/// Causal second-order Butterworth high-pass (bilinear transform).
fn high_pass(x: &mut [f64], rate: f64) {
    let w0 = 2.0 * PI * HIGH_PASS_HZ / rate;
    let (sin, cos) = w0.sin_cos();
    let alpha = sin / 2f64.sqrt();
    let a0 = 1.0 + alpha;
    let b0 = (1.0 + cos) / 2.0 / a0;
    let b1 = -(1.0 + cos) / a0;
    let b2 = b0;
    let a1 = -2.0 * cos / a0;
    let a2 = (1.0 - alpha) / a0;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b0 * *v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Tap amplitudes split by reflection order, so the response for any wall
/// reflection coefficient is a polynomial evaluation per tap.
struct OrderedTaps {
    len: usize,
    orders: usize,
    amps: Vec<f64>,
}

impl OrderedTaps {
    fn render(&self, beta: f64, rate: f64) -> Vec<f64> {
        let gains: Vec<f64> = (0..self.orders).map(|r| beta.powi(r as i32)).collect();
        let mut taps: Vec<f64> = self
            .amps
            .chunks_exact(self.orders)
            .map(|row| row.iter().zip(&gains).map(|(a, g)| a * g).sum())
            .collect();
        debug_assert_eq!(taps.len(), self.len);
        high_pass(&mut taps, rate);
        taps
    }
}

/// Finds the absorption whose rendered response has a Schroeder T20 equal to
/// the target, bisecting in `log(alpha)` from the Sabine value.
fn calibrate_absorption(room: &RoomSpec, taps: &OrderedTaps) -> f64 {
    let rate = room.rate as f64;
    // Err(true): too little decay inside the tail; Err(false): no measurable tail.
    let decay_time = |alpha: f64| -> std::result::Result<f64, bool> {
        let rendered = taps.render((1.0 - alpha).sqrt(), rate);
        let energy: Vec<f64> = rendered.iter().map(|t| t * t).collect();
        rt60_from_energy(&energy, 1.0 / rate).map_err(|_| {
            let total: f64 = energy.iter().sum();
            let late: f64 = energy[energy.len() * 9 / 10..].iter().sum();
            late > 10f64.powf(-2.5) * total
        })
    };

    let (mut lo, mut hi) = (1e-4f64.ln(), (1.0 - 1e-4f64).ln());
    let mut guess = sabine_k(room).clamp(1e-4, 1.0 - 1e-4).ln();
    for _ in 0..30 {
        match decay_time(guess.exp()) {
            Ok(t) if (t - room.rt60).abs() < 1e-3 * room.rt60 => break,
            Ok(t) if t > room.rt60 => lo = guess,
            Ok(_) => hi = guess,
            Err(true) => lo = guess,
            Err(false) => hi = guess,
        }
        guess = 0.5 * (lo + hi);
    }
    guess.exp()
}

/// Image-source RIR with seeded positional jitter on every reflected image,
/// followed by a 40 Hz DC-blocking high-pass.
pub fn simulate_rir(room: &RoomSpec, src: &Position, seed: u64) -> Result<RirRecord> {
    simulate_rir_with(room, src, seed, Absorption::default())
}

pub fn simulate_rir_with(
    room: &RoomSpec,
    src: &Position,
    seed: u64,
    absorption: Absorption,
) -> Result<RirRecord> {
    room.validate()?;
    if !room.contains(src) {
        return Err(Error::invalid(format!("source {src:?} is outside room {:?}", room.dims)));
    }
    let direct = distance(src, &room.mic_pos);
    if direct <= 1e-9 {
        return Err(Error::invalid("source coincides with the microphone"));
    }
    let rate = room.rate as f64;
    let tail = direct / SPEED_OF_SOUND + TAIL_FACTOR * room.rt60;
    let len = (tail * rate).ceil() as usize + 1;
    let reach = len as f64 / rate * SPEED_OF_SOUND;
    let lattice = ImageLattice::new(room, src, reach);

    let orders = lattice.max_order as usize + 1;
    let mut ordered = OrderedTaps {
        len,
        orders,
        amps: vec![0.0; len * orders],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = IMAGE_JITTER / 3f64.sqrt();
    lattice.for_each(|dx, dy, dz, order| {
        let (mut px, mut py, mut pz) = (dx, dy, dz);
        if order > 0 {
            px += rng.gen_range(-jitter..=jitter);
            py += rng.gen_range(-jitter..=jitter);
            pz += rng.gen_range(-jitter..=jitter);
        }
        let r = (px * px + py * py + pz * pz).sqrt().max(1e-3);
        let idx = (r / SPEED_OF_SOUND * rate).round() as usize;
        if idx < len {
            ordered.amps[idx * orders + order as usize] += 1.0 / (4.0 * PI * r);
        }
    });

    let alpha = match absorption {
        Absorption::Sabine => sabine_k(room),
        Absorption::Eyring => 1.0 - (-sabine_k(room)).exp(),
        Absorption::Calibrated => calibrate_absorption(room, &ordered),
    }
    .clamp(1e-6, 1.0 - 1e-9);
    let taps = ordered.render((1.0 - alpha).sqrt(), rate);
    RirRecord::new(taps, *room, *src)
}
