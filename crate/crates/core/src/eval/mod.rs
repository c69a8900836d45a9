//! Separation metrics, presence bucketing and evaluation reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::dataset::{select_active, MixtureSample, QueryClue};
use crate::error::{Error, Result};
use crate::model::TseModel;
use crate::train::{loss_inactive, SampleSource};

/// Bound applied to every dB ratio whose numerator or denominator vanishes.
pub const CAP_DB: f64 = 100.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return CAP_DB;
    }
    if num <= 0.0 {
        return -CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-CAP_DB, CAP_DB)
}

fn check(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::shape(format!("reference has {} samples, estimate {}", x.len(), x_hat.len())));
    }
    let e = dot(x, x);
    if e == 0.0 {
        return Err(Error::invalid("reference is all zeros"));
    }
    Ok(e)
}

pub fn sdr(x: &Waveform, x_hat: &Waveform) -> Result<f64> {
    let (x, xh) = (x.samples(), x_hat.samples());
    let ex = check(x, xh)?;
    let err: f64 = x.iter().zip(xh).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ratio_db(ex, err))
}

/// SDR gain of the estimate over the unprocessed mixture.
pub fn sdri(x: &Waveform, x_hat: &Waveform, y: &Waveform) -> Result<f64> {
    Ok(sdr(x, x_hat)? - sdr(x, y)?)
}

pub fn si_sdr(x: &Waveform, x_hat: &Waveform) -> Result<f64> {
    let (x, xh) = (x.samples(), x_hat.samples());
    let ex = check(x, xh)?;
    if dot(xh, xh) == 0.0 {
        return Err(Error::invalid("estimate is all zeros"));
    }
    let alpha = dot(xh, x) / ex;
    let num = alpha * alpha * ex;
    let den: f64 = x.iter().zip(xh).map(|(a, b)| (b - alpha * a).powi(2)).sum();
    Ok(ratio_db(num, den))
}

pub fn si_sdri(x: &Waveform, x_hat: &Waveform, y: &Waveform) -> Result<f64> {
    Ok(si_sdr(x, x_hat)? - si_sdr(x, y)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    /// Exactly one speaker within the query interval.
    NonOverlap,
    /// Two or more speakers within the query interval.
    Overlap,
    Inactive,
}

pub fn bucket(speaker_distances: &[f64], d_q: f64, r_spk: f64) -> Bucket {
    match select_active(speaker_distances, d_q, r_spk).len() {
        0 => Bucket::Inactive,
        1 => Bucket::NonOverlap,
        _ => Bucket::Overlap,
    }
}

/// Anything that maps a mixture and clue to an estimate.
pub trait Extractor: Sync {
    fn extract(&self, mixture: &Waveform, clue: &QueryClue) -> Result<Waveform>;
}

impl Extractor for TseModel {
    fn extract(&self, mixture: &Waveform, clue: &QueryClue) -> Result<Waveform> {
        self.forward(mixture, clue)
    }
}

/// Returns the mixture unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl Extractor for IdentityExtractor {
    fn extract(&self, mixture: &Waveform, _clue: &QueryClue) -> Result<Waveform> {
        Ok(mixture.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub bucket: Bucket,
    pub sdr: Option<f64>,
    pub sdri: Option<f64>,
    pub si_sdr: Option<f64>,
    pub si_sdri: Option<f64>,
    /// Inactive samples only.
    pub l0: Option<f64>,
}

/// Scores one estimate. Active samples get SDR-family metrics; inactive
/// ones the output-energy measure with floor `tau_inactive`.
pub fn score_sample(sample: &MixtureSample, x_hat: &Waveform, tau_inactive: f64) -> Result<SampleScores> {
    let b = bucket(&sample.speaker_distances, sample.clue.d_q, sample.r_spk);
    if b == Bucket::Inactive {
        return Ok(SampleScores {
            bucket: b,
            sdr: None,
            sdri: None,
            si_sdr: None,
            si_sdri: None,
            l0: Some(loss_inactive(&sample.mixture, x_hat, tau_inactive)?),
        });
    }
    let (x, y) = (&sample.target, &sample.mixture);
    let si = if x_hat.is_silent() { -CAP_DB } else { si_sdr(x, x_hat)? };
    Ok(SampleScores {
        bucket: b,
        sdr: Some(sdr(x, x_hat)?),
        sdri: Some(sdri(x, x_hat, y)?),
        si_sdr: Some(si),
        si_sdri: Some(si - si_sdr(x, y)?),
        l0: None,
    })
}

/// Per-bucket means; `None` where the bucket is empty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sdr_nonoverlap: Option<f64>,
    pub sdr_overlap: Option<f64>,
    pub sdri_nonoverlap: Option<f64>,
    pub sdri_overlap: Option<f64>,
    pub si_sdr: Option<f64>,
    pub si_sdri: Option<f64>,
    pub l0_inactive: Option<f64>,
    /// Share of non-overlapped samples among active ones, in percent.
    pub nonoverlap_overlap_ratio: Option<f64>,
}

impl Metrics {
    fn fields(&self) -> [Option<f64>; 8] {
        [
            self.sdr_nonoverlap,
            self.sdr_overlap,
            self.sdri_nonoverlap,
            self.sdri_overlap,
            self.si_sdr,
            self.si_sdri,
            self.l0_inactive,
            self.nonoverlap_overlap_ratio,
        ]
    }

    fn from_fields(f: [Option<f64>; 8]) -> Self {
        Self {
            sdr_nonoverlap: f[0],
            sdr_overlap: f[1],
            sdri_nonoverlap: f[2],
            sdri_overlap: f[3],
            si_sdr: f[4],
            si_sdri: f[5],
            l0_inactive: f[6],
            nonoverlap_overlap_ratio: f[7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    #[serde(flatten)]
    pub mean: Metrics,
    /// Spread across seeds when more than one run was aggregated.
    pub std: Option<Metrics>,
    pub n_samples: usize,
    pub n_nonoverlap: usize,
    pub n_overlap: usize,
    pub n_inactive: usize,
    pub seeds: Vec<u64>,
    /// Filled by an external perceptual-quality tool when available.
    pub pesq: Option<f64>,
    pub cap_db: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalReport {
    pub fn from_scores(scores: &[SampleScores], seed: Option<u64>) -> Self {
        let of = |b: Bucket| scores.iter().filter(move |s| s.bucket == b);
        let n_non = of(Bucket::NonOverlap).count();
        let n_ov = of(Bucket::Overlap).count();
        let active = || scores.iter().filter(|s| s.bucket != Bucket::Inactive);
        let metrics = Metrics {
            sdr_nonoverlap: mean(of(Bucket::NonOverlap).filter_map(|s| s.sdr)),
            sdr_overlap: mean(of(Bucket::Overlap).filter_map(|s| s.sdr)),
            sdri_nonoverlap: mean(of(Bucket::NonOverlap).filter_map(|s| s.sdri)),
            sdri_overlap: mean(of(Bucket::Overlap).filter_map(|s| s.sdri)),
            si_sdr: mean(active().filter_map(|s| s.si_sdr)),
            si_sdri: mean(active().filter_map(|s| s.si_sdri)),
            l0_inactive: mean(of(Bucket::Inactive).filter_map(|s| s.l0)),
            nonoverlap_overlap_ratio: (n_non + n_ov > 0).then(|| 100.0 * n_non as f64 / (n_non + n_ov) as f64),
        };
        Self {
            mean: metrics,
            std: None,
            n_samples: scores.len(),
            n_nonoverlap: n_non,
            n_overlap: n_ov,
            n_inactive: of(Bucket::Inactive).count(),
            seeds: seed.into_iter().collect(),
            pesq: None,
            cap_db: CAP_DB,
        }
    }

    /// Mean and population standard deviation of each metric over runs;
    /// counts are summed.
    pub fn aggregate(runs: &[EvalReport]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::invalid("no evaluation runs to aggregate"))?;
        if runs.len() == 1 {
            return Ok(first.clone());
        }
        let mut mean_f = [None; 8];
        let mut std_f = [None; 8];
        for k in 0..8 {
            let vals: Vec<f64> = runs.iter().filter_map(|r| r.mean.fields()[k]).collect();
            if let Some(m) = mean(vals.iter().copied()) {
                mean_f[k] = Some(m);
                std_f[k] = mean(vals.iter().map(|v| (v - m) * (v - m))).map(f64::sqrt);
            }
        }
        let pesq = mean(runs.iter().filter_map(|r| r.pesq));
        Ok(Self {
            mean: Metrics::from_fields(mean_f),
            std: Some(Metrics::from_fields(std_f)),
            n_samples: runs.iter().map(|r| r.n_samples).sum(),
            n_nonoverlap: runs.iter().map(|r| r.n_nonoverlap).sum(),
            n_overlap: runs.iter().map(|r| r.n_overlap).sum(),
            n_inactive: runs.iter().map(|r| r.n_inactive).sum(),
            seeds: runs.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
            pesq,
            cap_db: first.cap_db,
        })
    }

    /// Fixed-width summary: SDR and SDRi per bucket, PESQ when present,
    /// L0 and the non-overlap share.
    pub fn table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| format!("{:>9}", "-"), |x| format!("{x:>9.2}"));
        let mut cols = vec![
            ("SDR(no)", self.mean.sdr_nonoverlap, self.std.and_then(|s| s.sdr_nonoverlap)),
            ("SDR(ov)", self.mean.sdr_overlap, self.std.and_then(|s| s.sdr_overlap)),
            ("SDRi(no)", self.mean.sdri_nonoverlap, self.std.and_then(|s| s.sdri_nonoverlap)),
            ("SDRi(ov)", self.mean.sdri_overlap, self.std.and_then(|s| s.sdri_overlap)),
        ];
        if self.pesq.is_some() {
            cols.push(("PESQ", self.pesq, None));
        }
        cols.push(("L0", self.mean.l0_inactive, self.std.and_then(|s| s.l0_inactive)));
        cols.push(("No/o(%)", self.mean.nonoverlap_overlap_ratio, self.std.and_then(|s| s.nonoverlap_overlap_ratio)));
        let mut out = String::new();
        for (name, _, _) in &cols {
            let _ = write!(out, "{name:>9}");
        }
        out.push('\n');
        for (_, m, _) in &cols {
            out.push_str(&cell(*m));
        }
        if self.std.is_some() {
            out.push('\n');
            for (_, _, s) in &cols {
                let _ = match s {
                    Some(v) => write!(out, "{:>9}", format!("±{v:.2}")),
                    None => write!(out, "{:>9}", ""),
                };
            }
        }
        let _ = write!(
            out,
            "\n{} samples ({} non-overlap, {} overlap, {} inactive)",
            self.n_samples, self.n_nonoverlap, self.n_overlap, self.n_inactive
        );
        out
    }
}

/// Runs `extractor` over every sample of `src` and summarises the scores.
pub fn evaluate(extractor: &dyn Extractor, src: &dyn SampleSource, tau_inactive: f64, seed: Option<u64>) -> Result<EvalReport> {
    let scores: Vec<SampleScores> = (0..src.len())
        .into_par_iter()
        .map(|i| {
            let s = src.get(i)?;
            let x_hat = extractor.extract(&s.mixture, &s.clue)?;
            score_sample(&s, &x_hat, tau_inactive)
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_scores(&scores, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn w(v: Vec<f64>) -> Waveform {
        Waveform::new(v, SAMPLE_RATE).unwrap()
    }

    fn random(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        w((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn sdr_closed_forms() {
        let x = random(400, 1);
        assert_eq!(sdr(&x, &x).unwrap(), CAP_DB);
        assert!(sdr(&x, &Waveform::zeros(400, SAMPLE_RATE)).unwrap().abs() < 1e-12);
        // noise with exactly 1% of the reference energy
        let n = random(400, 2);
        let k = (0.01 * x.energy() / n.energy()).sqrt();
        let noisy = x.add(&n.scaled(k)).unwrap();
        assert!((sdr(&x, &noisy).unwrap() - 20.0).abs() < 1e-9);
        assert!(sdr(&Waveform::zeros(4, SAMPLE_RATE), &x.fit_to(4)).is_err());
    }

    #[test]
    fn sdri_identities() {
        let x = random(300, 3);
        let y = x.add(&random(300, 4)).unwrap();
        assert_eq!(sdri(&x, &y, &y).unwrap(), 0.0);
        let est = x.add(&random(300, 5).scaled(0.1)).unwrap();
        assert_eq!(sdri(&x, &est, &y).unwrap(), sdr(&x, &est).unwrap() - sdr(&x, &y).unwrap());
        assert_eq!(sdri(&x, &x, &y).unwrap(), CAP_DB - sdr(&x, &y).unwrap());
    }

    #[test]
    fn si_sdr_scale_invariance_and_grid_oracle() {
        let x = random(300, 6);
        assert_eq!(si_sdr(&x, &x.scaled(2.5)).unwrap(), CAP_DB);
        let est = x.add(&random(300, 7).scaled(0.5)).unwrap();
        let a = si_sdr(&x, &est).unwrap();
        for alpha in [1e-3, 0.5, 2.0, 1e3] {
            assert!((si_sdr(&x, &est.scaled(alpha)).unwrap() - a).abs() < 1e-6);
        }
        // least-squares target scale found by grid search
        let (mut best_s, mut best_err) = (0.0, f64::INFINITY);
        for i in 0..=20_000 {
            let s = i as f64 * 1e-4;
            let err: f64 = x.samples().iter().zip(est.samples()).map(|(a, b)| (b - s * a).powi(2)).sum();
            if err < best_err {
                (best_s, best_err) = (s, err);
            }
        }
        let best = 10.0 * (best_s * best_s * x.energy() / best_err).log10();
        assert!((a - best).abs() < 0.01, "{a} vs {best}");
        let orth = w(vec![1.0, 0.0]);
        assert_eq!(si_sdr(&orth, &w(vec![0.0, 1.0])).unwrap(), -CAP_DB);
    }

    #[test]
    fn bucketing_matches_presence_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let k = rng.gen_range(1..5);
            let d: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..6.0)).collect();
            let d_q = rng.gen_range(0.2..6.0);
            let r = rng.gen_range(0.05..1.0);
            let count = d.iter().filter(|&&x| (x - d_q).abs() <= r).count();
            let expect = match count {
                0 => Bucket::Inactive,
                1 => Bucket::NonOverlap,
                _ => Bucket::Overlap,
            };
            assert_eq!(bucket(&d, d_q, r), expect);
        }
    }

    fn score(bucket: Bucket, sdr: f64) -> SampleScores {
        let active = bucket != Bucket::Inactive;
        SampleScores {
            bucket,
            sdr: active.then_some(sdr),
            sdri: active.then_some(sdr - 1.0),
            si_sdr: active.then_some(sdr),
            si_sdri: active.then_some(0.0),
            l0: (!active).then_some(-20.0),
        }
    }

    #[test]
    fn report_counts_and_round_trip() {
        let scores = vec![
            score(Bucket::NonOverlap, 10.0),
            score(Bucket::NonOverlap, 12.0),
            score(Bucket::NonOverlap, 8.0),
            score(Bucket::Overlap, 4.0),
            score(Bucket::Inactive, 0.0),
        ];
        let r = EvalReport::from_scores(&scores, Some(3));
        assert_eq!((r.n_nonoverlap, r.n_overlap, r.n_inactive), (3, 1, 1));
        assert_eq!(r.mean.sdr_nonoverlap, Some(10.0));
        assert_eq!(r.mean.nonoverlap_overlap_ratio, Some(75.0));
        assert_eq!(r.mean.l0_inactive, Some(-20.0));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);

        let only = EvalReport::from_scores(&[score(Bucket::NonOverlap, 5.0)], None);
        assert_eq!(only.mean.sdr_overlap, None);
        assert_eq!(only.mean.nonoverlap_overlap_ratio, Some(100.0));

        let agg = EvalReport::aggregate(&[r.clone(), only.clone()]).unwrap();
        assert_eq!(agg.mean.sdr_nonoverlap, Some(7.5));
        assert_eq!(agg.std.unwrap().sdr_nonoverlap, Some(2.5));
        assert_eq!(agg.mean.sdr_overlap, Some(4.0));
        assert_eq!(agg.n_samples, 6);
        let json = serde_json::to_string(&agg).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), agg);
        assert!(agg.table().contains("SDR(no)"));
    }
}
