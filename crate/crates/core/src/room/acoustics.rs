use super::RirRecord;
use crate::error::{Error, Result};

/// Returned by [`drr`] when the response carries no reverberant energy.
pub const DRR_CAP_DB: f64 = 100.0;

/// Reverberation time from Schroeder backward integration, fitting a line to
/// the -5 dB .. -25 dB span of the decay curve and extrapolating to 60 dB.
pub fn estimate_rt60(h: &RirRecord) -> Result<f64> {
    estimate_rt60_taps(&h.taps, h.rate)
}

pub(crate) fn estimate_rt60_taps(taps: &[f64], rate: u32) -> Result<f64> {
    let energy: Vec<f64> = taps.iter().map(|t| t * t).collect();
    rt60_from_energy(&energy, 1.0 / rate as f64)
}

/// Schroeder estimate on a sequence of energy bins `dt` seconds wide.
pub(crate) fn rt60_from_energy(energy: &[f64], dt: f64) -> Result<f64> {
    let n = energy.len();
    let mut edc = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        acc += energy[i];
        edc[i] = acc;
    }
    let total = acc;
    if !(total > 0.0) {
        return Err(Error::invalid("impulse response has no energy"));
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&v| v <= -5.0);
    let end = db.iter().position(|&v| v <= -25.0);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if e > s + 1 => (s, e),
        _ => return Err(Error::invalid("decay curve does not span -5 dB to -25 dB")),
    };
    // A -25 dB crossing inside the final tenth only reflects truncation.
    if end as f64 > 0.9 * n as f64 {
        return Err(Error::invalid("insufficient decay range for an RT60 estimate"));
    }

    let pts = end - start + 1;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in db.iter().enumerate().take(end + 1).skip(start) {
        let t = i as f64 * dt;
        sx += t;
        sy += y;
        sxx += t * t;
        sxy += t * y;
    }
    let m = pts as f64;
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    if !(slope < 0.0) {
        return Err(Error::invalid("decay curve is not decreasing"));
    }
    Ok(-60.0 / slope)
}

/// Direct-to-reverberant ratio in dB. The direct part is the energy within
/// `direct_window` seconds either side of the largest tap.
pub fn drr(h: &RirRecord, direct_window: f64) -> Result<f64> {
    drr_taps(&h.taps, h.rate, direct_window)
}

pub(crate) fn drr_taps(taps: &[f64], rate: u32, direct_window: f64) -> Result<f64> {
    if direct_window < 0.0 {
        return Err(Error::invalid("direct window must be non-negative"));
    }
    let peak = taps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("empty impulse response"))?;
    if taps[peak] == 0.0 {
        return Err(Error::invalid("impulse response is all zeros"));
    }
    let half = (direct_window * rate as f64).round() as usize;
    let lo = peak.saturating_sub(half);
    let hi = (peak + half + 1).min(taps.len());
    let direct: f64 = taps[lo..hi].iter().map(|t| t * t).sum();
    let rest: f64 = taps[..lo].iter().chain(&taps[hi..]).map(|t| t * t).sum();
    if rest == 0.0 {
        return Ok(DRR_CAP_DB);
    }
    Ok((10.0 * (direct / rest).log10()).min(DRR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exponential_decay_matches_closed_form() {
        // amplitude envelope exp(-t / tau) decays 60 dB in tau * 3 ln 10
        let rate = 16_000u32;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for rt in [0.2, 0.4, 0.8] {
            let tau = rt / (3.0 * 10f64.ln());
            let len = (rt * 2.0 * rate as f64) as usize;
            let taps: Vec<f64> = (0..len)
                .map(|i| {
                    let t = i as f64 / rate as f64;
                    (-t / tau).exp() * rng.gen_range(-1.0..1.0)
                })
                .collect();
            let est = estimate_rt60_taps(&taps, rate).unwrap();
            assert!((est - rt).abs() < 0.05 * rt, "rt {rt}: estimated {est}");
        }
    }

    #[test]
    fn flat_noise_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let taps: Vec<f64> = (0..8000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(estimate_rt60_taps(&taps, 16_000).is_err());
        assert!(estimate_rt60_taps(&[0.0; 100], 16_000).is_err());
    }

    #[test]
    fn drr_limits() {
        let mut taps = vec![0.0; 200];
        taps[10] = 1.0;
        assert_eq!(drr_taps(&taps, 16_000, 0.001).unwrap(), DRR_CAP_DB);

        taps[150] = 1.0;
        taps[10] = -1.0;
        let v = drr_taps(&taps, 16_000, 0.001).unwrap();
        assert!(v.abs() < 1e-12, "{v}");

        assert!(drr_taps(&[0.0; 50], 16_000, 0.001).is_err());
    }
}
