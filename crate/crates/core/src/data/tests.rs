use super::*;
use crate::dsp::{compute_mfcc, AudioClip, MfccConfig};
use proptest::prelude::*;
use rand::{Rng, RngCore};

fn wav_bytes(channels: u16, bits: u16, format: u16, data: &[u8], declared: Option<u32>) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&format.to_le_bytes());
    b.extend_from_slice(&channels.to_le_bytes());
    b.extend_from_slice(&16000u32.to_le_bytes());
    b.extend_from_slice(&(16000u32 * 2 * channels as u32).to_le_bytes());
    b.extend_from_slice(&(2 * channels).to_le_bytes());
    b.extend_from_slice(&bits.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&declared.unwrap_or(data.len() as u32).to_le_bytes());
    b.extend_from_slice(data);
    b
}

#[test]
fn wav_full_scale_samples() {
    let data: Vec<u8> = std::iter::repeat(32767i16.to_le_bytes()).take(16).flatten().collect();
    let clip = decode_wav(&wav_bytes(1, 16, 1, &data, None)).unwrap();
    assert_eq!(clip.len(), 16);
    assert_eq!(clip.sample_rate(), 16000);
    for &s in clip.samples() {
        assert!((s - 0.99997).abs() < 1e-5);
        assert_eq!(s, 32767.0 / 32768.0);
    }
}

#[test]
fn wav_rejects_stereo_and_non_pcm() {
    let data = vec![0u8; 8];
    match decode_wav(&wav_bytes(2, 16, 1, &data, None)) {
        Err(Error::Format { detail, .. }) => assert!(detail.contains("channels"), "{detail}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(decode_wav(&wav_bytes(1, 16, 3, &data, None)), Err(Error::Format { .. })));
    assert!(matches!(decode_wav(&wav_bytes(1, 8, 1, &data, None)), Err(Error::Format { .. })));
}

#[test]
fn wav_truncation_reports_offset() {
    let data = vec![0u8; 8];
    let bytes = wav_bytes(1, 16, 1, &data, Some(100));
    match decode_wav(&bytes) {
        Err(Error::Format { offset, detail }) => {
            assert_eq!(offset, bytes.len() as u64);
            assert!(detail.contains("100"), "{detail}");
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(decode_wav(&bytes[..20]), Err(Error::Format { .. })));
    assert!(matches!(decode_wav(b"RIFX"), Err(Error::Format { .. })));
}

#[test]
fn wav_skips_unknown_chunks() {
    let plain = wav_bytes(1, 16, 1, &[1, 0, 2, 0], None);
    // Odd-sized LIST chunk, padded to an even boundary, before fmt.
    let mut b = plain[..12].to_vec();
    b.extend_from_slice(b"LIST");
    b.extend_from_slice(&3u32.to_le_bytes());
    b.extend_from_slice(&[7, 7, 7, 0]);
    b.extend_from_slice(&plain[12..]);
    let clip = decode_wav(&b).unwrap();
    assert_eq!(clip.samples(), &[1.0 / 32768.0, 2.0 / 32768.0]);
}

#[test]
fn wav_round_trip_is_exact_on_the_grid() {
    let samples: Vec<f64> = (-50..50).map(|i| i as f64 * 321.0 / 32768.0).collect();
    let clip = AudioClip::new(samples, 22050).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a/b.wav");
    save_wav(&path, &clip).unwrap();
    assert_eq!(load_wav(&path).unwrap(), clip);
    // Full scale saturates instead of wrapping.
    let loud = AudioClip::new(vec![1.0, -1.0], 8000).unwrap();
    let back = decode_wav(&encode_wav(&loud).unwrap()).unwrap();
    assert_eq!(back.samples(), &[32767.0 / 32768.0, -1.0]);
}

fn entries(groups: &[(&str, Gender, usize)]) -> Vec<ManifestEntry> {
    let mut out = Vec::new();
    for &(label, gender, n) in groups {
        for i in 0..n {
            out.push(ManifestEntry {
                path: format!("{label}/{gender:?}{i}.wav").into(),
                label: label.to_string(),
                gender,
                split: Split::Unassigned,
            });
        }
    }
    out
}

fn count(es: &[ManifestEntry], split: Split) -> usize {
    es.iter().filter(|e| e.split == split).count()
}

#[test]
fn split_ratios_per_group() {
    let out = split_dataset(&entries(&[("as", Gender::F, 100)]), (0.8, 0.1, 0.1), 1).unwrap();
    assert_eq!(
        (count(&out.entries, Split::Train), count(&out.entries, Split::Val), count(&out.entries, Split::Test)),
        (80, 10, 10)
    );
    let out = split_dataset(&entries(&[("bn", Gender::M, 10)]), (0.8, 0.1, 0.1), 1).unwrap();
    assert_eq!(
        (count(&out.entries, Split::Train), count(&out.entries, Split::Val), count(&out.entries, Split::Test)),
        (8, 1, 1)
    );
    assert!(out.warnings.is_empty());
}

#[test]
fn split_is_deterministic_and_seed_dependent() {
    let es = entries(&[("as", Gender::F, 30), ("as", Gender::M, 30)]);
    let a = split_dataset(&es, (0.8, 0.1, 0.1), 5).unwrap();
    let b = split_dataset(&es, (0.8, 0.1, 0.1), 5).unwrap();
    let c = split_dataset(&es, (0.8, 0.1, 0.1), 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.entries, c.entries);
}

#[test]
fn small_groups_go_to_train_with_warning() {
    let es = entries(&[("bd", Gender::F, 2), ("bd", Gender::M, 20)]);
    let out = split_dataset(&es, (0.8, 0.1, 0.1), 0).unwrap();
    assert_eq!(out.warnings.len(), 1);
    assert!(out.warnings[0].contains("bd"));
    assert!(out.entries[..2].iter().all(|e| e.split == Split::Train));
    assert!(split_dataset(&es, (0.8, 0.1, 0.2), 0).is_err());
}

proptest! {
    #[test]
    fn split_partitions_each_group(sizes in prop::collection::vec(0usize..60, 1..6), seed in any::<u64>()) {
        let genders = [Gender::F, Gender::M, Gender::U];
        let names: Vec<String> = (0..sizes.len()).map(|i| format!("l{i}")).collect();
        let groups: Vec<(&str, Gender, usize)> = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| (names[i / 2].as_str(), genders[i % 3], n))
            .collect();
        let es = entries(&groups);
        let out = split_dataset(&es, (0.8, 0.1, 0.1), seed).unwrap();
        prop_assert_eq!(out.entries.len(), es.len());
        for (a, b) in es.iter().zip(&out.entries) {
            prop_assert_eq!(&a.path, &b.path);
            prop_assert!(b.split != Split::Unassigned);
        }
        let mut keys: Vec<(String, Gender)> = es.iter().map(|e| (e.label.clone(), e.gender)).collect();
        keys.sort();
        keys.dedup();
        for (label, gender) in keys {
            let g: Vec<&ManifestEntry> = out.entries.iter().filter(|e| e.label == label && e.gender == gender).collect();
            let n = g.len() as f64;
            for (split, ratio) in [(Split::Train, 0.8), (Split::Val, 0.1), (Split::Test, 0.1)] {
                let k = g.iter().filter(|e| e.split == split).count() as f64;
                if n >= 3.0 {
                    prop_assert!((k - n * ratio).abs() <= 1.0 + 1e-9, "{label} {split}: {k} of {n}");
                }
            }
        }
    }
}

fn train_entries(groups: &[(&str, usize)]) -> Vec<ManifestEntry> {
    let mut es = entries(&groups.iter().map(|&(l, n)| (l, Gender::U, n)).collect::<Vec<_>>());
    es.iter_mut().for_each(|e| e.split = Split::Train);
    es
}

#[test]
fn balancing_examples() {
    // A class with exactly the cap keeps every sample.
    let es = train_entries(&[("bd", 571), ("as", 900)]);
    let out = balance_manual(&es, 571, 3).unwrap();
    assert_eq!(out.iter().filter(|e| e.label == "bd").count(), 571);
    assert_eq!(out.iter().filter(|e| e.label == "as").count(), 571);

    let labels: Vec<String> = (0..13).map(|i| format!("l{i}")).collect();
    let groups: Vec<(&str, usize)> = labels.iter().map(|l| (l.as_str(), 150)).collect();
    assert_eq!(balance_manual(&train_entries(&groups), 100, 1).unwrap().len(), 1300);

    assert!(balance_manual(&es, 0, 1).is_err());
    match balance_manual(&es, 600, 1) {
        Err(Error::InvalidArgument(m)) => assert!(m.contains("'bd'"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn balancing_keeps_other_splits() {
    let mut es = train_entries(&[("as", 10), ("bn", 10)]);
    es[0].split = Split::Test;
    es[15].split = Split::Val;
    let out = balance_manual(&es, 5, 9).unwrap();
    assert_eq!(out.len(), 12);
    assert!(out.contains(&es[0]) && out.contains(&es[15]));
    assert_eq!(out, balance_manual(&es, 5, 9).unwrap());
}

#[test]
fn manifest_round_trip_and_header() {
    let mut es = entries(&[("as", Gender::F, 2), ("bn", Gender::U, 1)]);
    es[1].split = Split::Test;
    let text = manifest_to_string(&es).unwrap();
    assert!(text.starts_with("path,label,gender,split\n"));
    assert!(!text.contains('\r'));
    assert_eq!(parse_manifest(&text).unwrap(), es);
    assert!(parse_manifest("file,label,gender,split\n").is_err());
    assert!(parse_manifest("path,label,gender,split\na.wav,as,X,train\n").is_err());

    let dir = tempfile::tempdir().unwrap();
    let clip = AudioClip::new(vec![0.1; 10], 8000).unwrap();
    for e in &es {
        save_wav(&dir.path().join(&e.path), &clip).unwrap();
    }
    write_manifest(&dir.path().join("manifest.csv"), &es).unwrap();
    let m = read_manifest(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(m.entries, es);
    assert_eq!(m.labels(), vec!["as".to_string(), "bn".to_string()]);
    std::fs::remove_file(dir.path().join(&es[2].path)).unwrap();
    assert!(read_manifest(&dir.path().join("manifest.csv")).is_err());
}

#[test]
fn label_set_check_names_unknown_labels() {
    let es = entries(&[("as", Gender::F, 1), ("zz", Gender::F, 1)]);
    check_labels(&es[..1], &["as".into()]).unwrap();
    match check_labels(&es, &["as".into()]) {
        Err(Error::LabelMismatch(m)) => assert!(m.contains("zz")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn cache_paths_stay_inside_the_cache_dir() {
    let e = ManifestEntry {
        path: "/abs/../x/t00/0001.wav".into(),
        label: "t00".into(),
        gender: Gender::F,
        split: Split::Train,
    };
    assert_eq!(cache_path(Path::new("cache"), &e), Path::new("cache/abs/x/t00/0001.mfc"));
}

/// Vowel-like test signal: a few harmonics with a slow envelope.
fn speech_like(seed: u64, seconds: f64, sr: u32) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.random_range(100.0..250.0);
    let n = (seconds * sr as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr as f64;
            let env = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 3.0 * t).sin().abs();
            let s: f64 = (1..6).map(|k| (2.0 * std::f64::consts::PI * f0 * k as f64 * t).sin() / k as f64).sum();
            0.2 * env * s
        })
        .collect();
    AudioClip::new(samples, sr).unwrap()
}

#[test]
fn infinite_snr_is_identity() {
    let clip = speech_like(1, 0.5, 16000);
    let spec: NoiseSpec = "white:inf".parse().unwrap();
    assert!(spec.is_disabled());
    assert_eq!(add_white_noise(&clip, &spec, 3).unwrap(), clip);
}

#[test]
fn measured_snr_matches_request() {
    for (seed, snr) in [(1, 0.0), (2, 10.0), (3, 20.0), (4, 5.5)] {
        let clip = speech_like(seed, 1.0, 16000);
        let noisy = add_white_noise(&clip, &NoiseSpec::white(snr).unwrap(), seed).unwrap();
        // Independent measurement: residual power against clean power.
        let ps: f64 = clip.samples().iter().map(|v| v * v).sum();
        let pn: f64 = clip.samples().iter().zip(noisy.samples()).map(|(a, b)| (b - a).powi(2)).sum();
        let measured = 10.0 * (ps / pn).log10();
        assert!((measured - snr).abs() <= 0.5, "asked {snr} dB, measured {measured}");
    }
}

#[test]
fn noise_is_seeded_and_clipped() {
    let clip = speech_like(5, 0.3, 8000);
    let spec = NoiseSpec::white(-10.0).unwrap();
    let a = add_white_noise(&clip, &spec, 11).unwrap();
    assert_eq!(a, add_white_noise(&clip, &spec, 11).unwrap());
    assert_ne!(a, add_white_noise(&clip, &spec, 12).unwrap());
    assert!(a.samples().iter().all(|v| v.abs() <= 1.0));
    let silent = AudioClip::new(vec![0.0; 100], 8000).unwrap();
    assert_eq!(add_white_noise(&silent, &spec, 1).unwrap(), silent);
}

#[test]
fn noise_spec_parsing() {
    let s: NoiseSpec = "white:10".parse().unwrap();
    assert_eq!((s.kind, s.snr_db), (NoiseKind::White, 10.0));
    assert_eq!(s.to_string(), "white:10");
    assert!("pink:10".parse::<NoiseSpec>().is_err());
    assert!("white:x".parse::<NoiseSpec>().is_err());
    assert!("white:NaN".parse::<NoiseSpec>().is_err());
    assert!("white".parse::<NoiseSpec>().is_err());
}

#[test]
fn synth_counts_layout_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_classes: 3,
        per_class: 4,
        sample_rate: 8000,
        seed: 1,
    };
    let m = synth_toy_corpus(&cfg, dir.path()).unwrap();
    assert_eq!(m.entries.len(), 12);
    let back = read_manifest(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(back.entries, m.entries);
    assert!(dir.path().join("t02/0003.wav").is_file());
    for e in &m.entries {
        let clip = load_wav(&m.resolve(e)).unwrap();
        assert!((1.0..=3.0).contains(&clip.duration_secs()), "{}", clip.duration_secs());
    }

    let other = tempfile::tempdir().unwrap();
    let m2 = synth_toy_corpus(&SynthConfig { seed: 2, ..cfg.clone() }, other.path()).unwrap();
    let a = load_wav(&m.resolve(&m.entries[0])).unwrap();
    let b = load_wav(&m2.resolve(&m2.entries[0])).unwrap();
    let same = a.samples().iter().zip(b.samples()).filter(|(x, y)| x == y).count();
    assert!(same * 20 < a.len().min(b.len()), "{same} equal samples");

    assert!(synth_toy_corpus(&SynthConfig { n_classes: 1, ..cfg.clone() }, dir.path()).is_err());
    assert!(synth_toy_corpus(&SynthConfig { n_classes: 17, ..cfg }, dir.path()).is_err());
}

#[test]
fn recipes_are_distinct() {
    for n in 2..=16 {
        let rs: Vec<ClassRecipe> = (0..n).map(|c| class_recipe(c, n, 16000)).collect();
        for w in rs.windows(2) {
            assert!(w[0].f0.1 < w[1].f0.0, "f0 ranges overlap for n={n}");
        }
        let mut centers: Vec<i64> = rs.iter().map(|r| r.band_center as i64).collect();
        centers.sort();
        centers.dedup();
        assert_eq!(centers.len(), n, "noise bands collide for n={n}");
        assert!(rs.iter().all(|r| r.band_center < 8000.0 && r.f0.1 < 1400.0 + 1e-9));
    }
}

/// Best accuracy of a depth-2 threshold tree on one scalar feature.
fn stump2_accuracy(xs: &[(f64, usize)]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = v.len();
    // Majority correct count of v[lo..hi].
    let majority = |lo: usize, hi: usize| {
        let ones = v[lo..hi].iter().filter(|p| p.1 == 1).count();
        ones.max(hi - lo - ones)
    };
    // Best single split within v[lo..hi].
    let best1 = |lo: usize, hi: usize| (lo..=hi).map(|m| majority(lo, m) + majority(m, hi)).max().unwrap();
    let best = (0..=n).map(|m| best1(0, m) + best1(m, n)).max().unwrap();
    best as f64 / n as f64
}

fn mean_c1(clip: &AudioClip, cfg: &MfccConfig) -> f64 {
    let f = compute_mfcc::<f64>(clip, cfg).unwrap();
    (0..f.n_valid_frames).map(|r| f.row(r)[1]).sum::<f64>() / f.n_valid_frames as f64
}

#[test]
fn stump_oracle_sanity() {
    let xs: Vec<(f64, usize)> = (0..10).map(|i| (i as f64, usize::from(i >= 5))).collect();
    assert_eq!(stump2_accuracy(&xs), 1.0);
    // Two intervals of class 1 need both levels.
    let xs: Vec<(f64, usize)> = (0..9).map(|i| (i as f64, usize::from((3..6).contains(&i)))).collect();
    assert_eq!(stump2_accuracy(&xs), 1.0);
    let xs: Vec<(f64, usize)> = (0..8).map(|i| (i as f64, i % 2)).collect();
    assert!(stump2_accuracy(&xs) < 1.0);
}

#[test]
fn toy_classes_separate_on_mean_c1() {
    let cfg = MfccConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for n in [2, 4, 13] {
        let mut xs = Vec::new();
        for c in 0..2 {
            let recipe = class_recipe(c, n, 16000);
            for _ in 0..40 {
                let mut clip_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
                let clip = render_clip(&recipe, 16000, &mut clip_rng).unwrap();
                xs.push((mean_c1(&clip, &cfg), c));
            }
        }
        let acc = stump2_accuracy(&xs);
        assert!(acc >= 0.9, "n={n}: stump accuracy {acc}");
    }
}

#[test]
fn mild_noise_keeps_features() {
    let cfg = MfccConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = NoiseSpec::white(40.0).unwrap();
    for c in 0..4 {
        let recipe = class_recipe(c, 4, 16000);
        for k in 0..3 {
            let clip = render_clip(&recipe, 16000, &mut rng).unwrap();
            let noisy = add_white_noise(&clip, &spec, k).unwrap();
            let a = compute_mfcc::<f64>(&clip, &cfg).unwrap();
            let b = compute_mfcc::<f64>(&noisy, &cfg).unwrap();
            let diff: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(diff / norm < 0.05, "class {c}: relative change {}", diff / norm);
        }
    }
}

#[test]
fn extract_skips_forces_and_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let cfg = SynthConfig {
        n_classes: 2,
        per_class: 2,
        sample_rate: 8000,
        seed: 3,
    };
    let m = synth_toy_corpus(&cfg, &corpus).unwrap();
    let cache = dir.path().join("cache");
    let mfcc = MfccConfig::default();
    let first = extract_features(&m, &mfcc, &cache, false).unwrap();
    assert_eq!((first.written, first.skipped, first.failures.len()), (4, 0, 0));
    let bytes = std::fs::read(cache_path(&cache, &m.entries[0])).unwrap();
    let again = extract_features(&m, &mfcc, &cache, false).unwrap();
    assert_eq!((again.written, again.skipped), (0, 4));
    let forced = extract_features(&m, &mfcc, &cache, true).unwrap();
    assert_eq!(forced.written, 4);
    assert_eq!(std::fs::read(cache_path(&cache, &m.entries[0])).unwrap(), bytes);

    std::fs::write(m.resolve(&m.entries[1]), b"RIFF....WAVE").unwrap();
    let broken = extract_features(&m, &mfcc, &cache, true).unwrap();
    assert_eq!((broken.written, broken.failures.len()), (3, 1));
    assert!(broken.failures[0].0.ends_with("t00/0001.wav"));

    let mut split = m.entries.clone();
    split.iter_mut().for_each(|e| e.split = Split::Train);
    let labels = label_set(&split);
    let set = load_feature_set(&m.with_entries(split), Split::Train, &cache, &labels).unwrap();
    assert_eq!(set.labels, vec![0, 0, 1, 1]);
    assert_eq!(set.features[0].rows, 1000);
}
