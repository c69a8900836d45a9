use roomtse::dataset::*;
use roomtse::room::*;

fn sim1_pool(n: u64) -> Vec<RirRecord> {
    (0..n)
        .map(|s| {
            let (room, src) = sample_sim1(s);
            simulate_rir(&room, &src, s).unwrap()
        })
        .collect()
}

fn short_cfg(secs: f64) -> DatasetConfig {
    DatasetConfig {
        utterance_secs: secs,
        ..Default::default()
    }
}

#[test]
fn generated_samples_respect_presence_rule() {
    let corpus = SpeechCorpus::synthetic(6, 2, 0.3, 3);
    let pool = RirPool::from_records(vec![sim1_pool(12)]);
    let g = MixtureGenerator::new(&corpus, &pool, short_cfg(0.05), 42).unwrap();
    let mut inactive = 0;
    for i in 0..1000 {
        let (s, e) = g.generate(i).unwrap();
        let brute: Vec<usize> = (0..s.speaker_distances.len())
            .filter(|&k| (s.speaker_distances[k] - s.clue.d_q).abs() <= s.r_spk)
            .collect();
        assert_eq!(s.active_set, brute);
        assert_eq!(e.active, !brute.is_empty());
        assert!(s.target.is_silent() == brute.is_empty());

        let mut mix = vec![0.0; s.len()];
        let mut tgt = vec![0.0; s.len()];
        for (k, src) in s.sources.iter().enumerate() {
            assert!((-25.0 - 1e-3..=-20.0 + 1e-3).contains(&src.rms_dbfs()));
            for (j, v) in src.samples().iter().enumerate() {
                mix[j] += v;
                if brute.contains(&k) {
                    tgt[j] += v;
                }
            }
        }
        let scale = s.mixture.rms().max(1e-12);
        for j in 0..s.len() {
            assert!((mix[j] - s.mixture.samples()[j]).abs() <= 1e-6 * scale);
            assert!((tgt[j] - s.target.samples()[j]).abs() <= 1e-6 * scale);
        }
        inactive += usize::from(!s.is_active());
    }
    let frac = inactive as f64 / 1000.0;
    assert!((frac - 0.25).abs() < 0.05, "inactive fraction {frac}");
}

#[test]
fn inactive_fraction_over_many_draws() {
    let corpus = SpeechCorpus::synthetic(4, 1, 0.1, 1);
    let pool = RirPool::from_records(vec![sim1_pool(8)]);
    let g = MixtureGenerator::new(&corpus, &pool, short_cfg(0.005), 7).unwrap();
    let n = 10_000;
    let inactive = (0..n).filter(|&i| !g.generate(i).unwrap().0.is_active()).count();
    let frac = inactive as f64 / n as f64;
    assert!((frac - 0.25).abs() <= 0.02, "inactive fraction {frac}");
}

#[test]
fn four_second_utterances() {
    let corpus = SpeechCorpus::synthetic(2, 1, 5.0, 2);
    let pool = RirPool::from_records(vec![sim1_pool(2)]);
    let g = MixtureGenerator::new(&corpus, &pool, DatasetConfig::default(), 1).unwrap();
    let (s, _) = g.generate(0).unwrap();
    assert_eq!(s.len(), 64_000);
    assert_eq!(s.target.len(), 64_000);
}

#[test]
fn manifest_rebuilds_samples_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let corpus = SpeechCorpus::synthetic(3, 2, 0.6, 5).write_to(&base.join("speech")).unwrap();
    let recs: Vec<(usize, RirRecord)> = sim1_pool(4).into_iter().map(|r| (0, r)).collect();
    let set = read_rir_set(&write_rir_set(base, "sim1", &recs).unwrap()).unwrap();
    let pool = RirPool::from_entries(&set.entries, base).unwrap();
    let g = MixtureGenerator::new(&corpus, &pool, short_cfg(0.5), 9)
        .unwrap()
        .with_manifest_dir(base);
    let generated: Vec<_> = (0..6).map(|i| g.generate(i).unwrap()).collect();
    let entries: Vec<ManifestEntry> = generated.iter().map(|(_, e)| e.clone()).collect();
    let path = base.join("train.jsonl");
    write_manifest(&path, &entries).unwrap();
    let back = read_manifest(&path).unwrap();
    assert_eq!(back, entries);
    validate_manifest(&back, base).unwrap();
    assert!(back[0].speech_paths[0].starts_with("speech"));

    for ((s, _), e) in generated.iter().zip(&back) {
        let m = materialize(e, base, None, ClueSet::DisDimRt).unwrap();
        assert_eq!(m.active_set, s.active_set);
        let err = m
            .mixture
            .samples()
            .iter()
            .zip(s.mixture.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // RIRs pass through float32 storage
        assert!(err < 1e-5, "{err}");
        let narrow = materialize(e, base, Some(0.1), ClueSet::DisDimRt).unwrap();
        assert_eq!(narrow.active_set, select_active(&e.speaker_distances, e.d_q, 0.1));
    }
}
