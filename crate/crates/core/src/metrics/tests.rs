use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::rng;
use crate::synth::{synth_shifted, FeatureCodec, FeatureCodecSpec, InstrumentSpec, Melody, NoteEvent};

fn render(notes: &[(i32, f64, f64)], instrument: &str) -> LatentClip {
    render_shifted(notes, 0, instrument)
}

fn render_shifted(notes: &[(i32, f64, f64)], shift: i32, instrument: &str) -> LatentClip {
    let spec = FeatureCodecSpec::default();
    let notes = notes
        .iter()
        .map(|&(p, on, d)| NoteEvent {
            midi_pitch: p,
            onset: on,
            duration: d,
            amplitude: 1.0,
        })
        .collect();
    let m = Melody::new(notes, 2.048).unwrap();
    let w = synth_shifted(&m, shift, &InstrumentSpec::builtin(instrument).unwrap(), &spec).unwrap();
    FeatureCodec::new(spec).unwrap().features(&w).unwrap()
}

#[test]
fn sustained_a4_is_class_a() {
    let ex = PitchExtractor::new(FeatureCodecSpec::default()).unwrap();
    for inst in ["flute", "violin"] {
        let p = ex.pitch_class_matrix(&render(&[(69, 0.0, 2.0)], inst)).unwrap();
        let m = p.mean();
        let best = (0..12).max_by(|&a, &b| m[a].total_cmp(&m[b])).unwrap();
        assert_eq!(best, 9, "{inst}: {m:?}");
    }
}

#[test]
fn silence_is_near_uniform() {
    let spec = FeatureCodecSpec::default();
    let ex = PitchExtractor::new(spec).unwrap();
    let silent = features_of_silence(&spec);
    let p = ex.pitch_class_matrix(&silent).unwrap();
    for col in p.columns() {
        assert!(col.iter().cloned().fold(0.0, f64::max) < 2.0 / 12.0);
    }
    assert_eq!(active_classes(&p, JACCARD_THRESHOLD), [false; 12]);
    let wrong = LatentClip::zeros(16, 8);
    assert!(matches!(ex.pitch_class_matrix(&wrong), Err(Error::Config { .. })));
}

fn features_of_silence(spec: &FeatureCodecSpec) -> LatentClip {
    FeatureCodec::new(*spec).unwrap().features(&vec![0.0; spec.clip_samples]).unwrap()
}

#[test]
fn arpeggio_active_set() {
    let ex = PitchExtractor::new(FeatureCodecSpec::default()).unwrap();
    for inst in ["bassoon", "cello"] {
        let clip = render(&[(60, 0.0, 0.6), (64, 0.65, 0.6), (67, 1.3, 0.6)], inst);
        let pm = ex.pitch_class_matrix(&clip).unwrap();
        let active = active_classes(&pm, JACCARD_THRESHOLD);
        let set: Vec<usize> = (0..12).filter(|&c| active[c]).collect();
        assert_eq!(set, vec![0, 4, 7], "{inst}");
    }
}

#[test]
fn octave_shift_keeps_pitch_twelve_below() {
    let ex = PitchExtractor::new(FeatureCodecSpec::default()).unwrap();
    let argmax_pitch = |clip: &LatentClip| {
        let col: Vec<f64> = (0..32).map(|c| clip.get(c, 32)).collect();
        let p = ex.pitch_probabilities(&col);
        PITCH_LOW + (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap() as i32
    };
    for m in [74, 79, 86] {
        let hi = argmax_pitch(&render(&[(m, 0.0, 2.0)], "violin"));
        let lo = argmax_pitch(&render_shifted(&[(m, 0.0, 2.0)], -12, "violin"));
        assert_eq!(hi, m);
        assert_eq!(hi - lo, 12);
    }
}

/// Exhaustive DTW over every monotone path with unit steps.
fn dtw_brute(p: &PitchClassMatrix, q: &PitchClassMatrix) -> f64 {
    fn walk(i: usize, j: usize, p: &[[f64; 12]], q: &[[f64; 12]], cost: f64, cells: usize, best: &mut (f64, usize)) {
        let c = cost + p[i].iter().zip(&q[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let n = cells + 1;
        if i == p.len() - 1 && j == q.len() - 1 {
            if c < best.0 || (c == best.0 && n < best.1) {
                *best = (c, n);
            }
            return;
        }
        if i + 1 < p.len() {
            walk(i + 1, j, p, q, c, n, best);
        }
        if j + 1 < q.len() {
            walk(i, j + 1, p, q, c, n, best);
        }
        if i + 1 < p.len() && j + 1 < q.len() {
            walk(i + 1, j + 1, p, q, c, n, best);
        }
    }
    let mut best = (f64::INFINITY, 0);
    walk(0, 0, p.columns(), q.columns(), 0.0, 0, &mut best);
    best.0 / best.1 as f64
}

fn random_matrix<R: Rng>(r: &mut R, t: usize) -> PitchClassMatrix {
    PitchClassMatrix::new((0..t).map(|_| std::array::from_fn(|_| r.random::<f64>())).collect()).unwrap()
}

#[test]
fn dtw_matches_exhaustive_paths() {
    let mut r = rng::stream(21, "dtw");
    for _ in 0..50 {
        let (n, m) = (r.random_range(1..=6), r.random_range(1..=6));
        let p = random_matrix(&mut r, n);
        let q = random_matrix(&mut r, m);
        let fast = dpd(&p, &q).unwrap();
        assert!((fast - dtw_brute(&p, &q)).abs() < 1e-12);
        assert_eq!(fast, dpd(&q, &p).unwrap());
    }
}

#[test]
fn dtw_examples() {
    let mut r = rng::stream(22, "dtw2");
    let p = random_matrix(&mut r, 20);
    assert_eq!(dpd(&p, &p).unwrap(), 0.0);
    let stretched = PitchClassMatrix::new(p.columns().iter().flat_map(|c| [*c, *c]).collect()).unwrap();
    let mean_norm = p.columns().iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / 20.0;
    assert!(dpd(&p, &stretched).unwrap() < 0.05 * mean_norm);
    let a = PitchClassMatrix::one_hot(&[0, 4, 7, 2]);
    let b = PitchClassMatrix::one_hot(&[6, 10, 1, 8]);
    assert!((dpd(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    assert!(matches!(dpd(&PitchClassMatrix::one_hot(&[]), &a), Err(Error::Data(_))));
}

fn set(classes: &[usize]) -> [bool; 12] {
    let mut s = [false; 12];
    classes.iter().for_each(|&c| s[c] = true);
    s
}

#[test]
fn jaccard_examples() {
    assert_eq!(jaccard_sets(&set(&[0, 4, 7]), &set(&[0, 4, 9])), 0.5);
    assert_eq!(jaccard_sets(&set(&[0, 4]), &set(&[1, 5])), 1.0);
    assert_eq!(jaccard_sets(&set(&[]), &set(&[])), 0.0);
    let p = PitchClassMatrix::one_hot(&[0, 0, 0, 4, 4, 4, 7, 7, 7]);
    let q = PitchClassMatrix::one_hot(&[0, 0, 0, 4, 4, 4, 9, 9, 9]);
    let blip = PitchClassMatrix::one_hot(&[0, 0, 0, 4, 4, 4, 7, 7, 7, 9]);
    assert_eq!(jaccard(&p, &blip, 0.5).unwrap(), 0.0);
    assert_eq!(jaccard(&p, &p, 0.5).unwrap(), 0.0);
    assert_eq!(jaccard(&p, &q, 0.5).unwrap(), 0.5);
    assert!(jaccard(&p, &q, 1.0).is_err());
}

proptest! {
    #[test]
    fn jaccard_is_set_arithmetic(a in prop::collection::vec(any::<bool>(), 12), b in prop::collection::vec(any::<bool>(), 12)) {
        let (sa, sb): ([bool; 12], [bool; 12]) = (a.clone().try_into().unwrap(), b.clone().try_into().unwrap());
        let inter = (0..12).filter(|&i| a[i] && b[i]).count() as f64;
        let union = (0..12).filter(|&i| a[i] || b[i]).count() as f64;
        let expect = if union == 0.0 { 0.0 } else { 1.0 - inter / union };
        let got = jaccard_sets(&sa, &sb);
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert_eq!(got, expect);
    }
}

fn gaussian_set(seed: u64, m: usize, c: usize, shift: f64) -> EmbeddingSet {
    let mut r = rng::stream(seed, "emb");
    EmbeddingSet::new(
        (0..m)
            .map(|_| (0..c).map(|k| shift + (1.0 + k as f64 * 0.3) * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)).collect::<Vec<f64>>())
            .collect(),
    )
    .unwrap()
}

#[test]
fn frechet_examples() {
    let a = gaussian_set(1, 300, 4, 0.0);
    assert!(frechet(&a, &a).unwrap().abs() < 1e-8);
    let v = frechet_from_moments(
        &DVector::from_element(1, 0.0),
        &DMatrix::from_element(1, 1, 1.0),
        &DVector::from_element(1, 3.0),
        &DMatrix::from_element(1, 1, 4.0),
    )
    .unwrap();
    assert!((v - 10.0).abs() < 1e-8);
    assert!(matches!(frechet(&gaussian_set(2, 1, 3, 0.0), &a), Err(Error::Data(_)) | Err(Error::Contract(_))));
}

#[test]
fn frechet_is_rotation_invariant() {
    let a = gaussian_set(3, 200, 3, 0.0);
    let b = gaussian_set(4, 150, 3, 0.7);
    let (s, c) = (0.6f64.sin(), 0.6f64.cos());
    let (s2, c2) = (1.1f64.sin(), 1.1f64.cos());
    let rot = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
        * DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, c2, -s2, 0.0, s2, c2]);
    let turn = |e: &EmbeddingSet| {
        EmbeddingSet::new(e.vectors.iter().map(|v| (&rot * DVector::from_column_slice(v)).as_slice().to_vec()).collect()).unwrap()
    };
    let before = frechet(&a, &b).unwrap();
    let after = frechet(&turn(&a), &turn(&b)).unwrap();
    assert!((before - after).abs() < 1e-8);
}

#[test]
fn frechet_survives_singular_covariances() {
    // rank-one clouds in 6 dimensions, fewer vectors than dimensions
    let mk = |scale: f64| {
        EmbeddingSet::new((0..4).map(|i| (0..6).map(|k| scale * i as f64 * (k as f64 + 1.0)).collect()).collect()).unwrap()
    };
    let v = frechet(&mk(1.0), &mk(1.0 + 1e-9)).unwrap();
    assert!(v.is_finite() && v >= 0.0);
}

fn two_blobs(seed: u64, per: usize, gap: f64) -> EmbeddingSet {
    let mut r = rng::stream(seed, "blobs");
    let mut v = Vec::new();
    let mut l = Vec::new();
    for i in 0..2 * per {
        let cls = i % 2;
        let x: Vec<f64> = (0..8)
            .map(|k| {
                let z: f64 = StandardNormal.sample(&mut r);
                z + if k == 0 { gap * cls as f64 } else { 0.0 }
            })
            .collect();
        v.push(x);
        l.push(Some(["a", "b"][cls].to_string()));
    }
    EmbeddingSet::labelled(v, l).unwrap()
}

#[test]
fn classifier_separates_and_falls_to_chance() {
    let cfg = ClassifierConfig::default();
    let clf = train_timbre_classifier(&two_blobs(1, 100, 12.0), &cfg).unwrap();
    assert!(clf.accuracy(&two_blobs(2, 200, 12.0)).unwrap() >= 0.99);

    let mut shuffled = two_blobs(3, 100, 12.0);
    let mut r = rng::stream(4, "labels");
    for l in &mut shuffled.labels {
        *l = Some(["a", "b"][r.random_range(0..2)].to_string());
    }
    let clf = train_timbre_classifier(&shuffled, &cfg).unwrap();
    let held = two_blobs(5, 200, 12.0);
    let mut r = rng::stream(6, "labels");
    let mut held_shuffled = held.clone();
    for l in &mut held_shuffled.labels {
        *l = Some(["a", "b"][r.random_range(0..2)].to_string());
    }
    let acc = clf.accuracy(&held_shuffled).unwrap();
    // 3 sigma binomial band around 1/2 for 400 draws
    assert!((acc - 0.5).abs() < 3.0 * (0.25f64 / 400.0).sqrt(), "{acc}");

    let tiny = EmbeddingSet::labelled(
        vec![vec![0.0; 8], vec![1.0; 8], vec![2.0; 8]],
        vec![Some("a".into()), Some("a".into()), Some("b".into())],
    )
    .unwrap();
    assert!(matches!(train_timbre_classifier(&tiny, &cfg), Err(Error::Data(_))));
}

#[test]
fn identity_transfer_scores_zero() {
    let spec = FeatureCodecSpec::default();
    let ex = PitchExtractor::new(spec).unwrap();
    let clips: Vec<LatentClip> = (0..6)
        .map(|k| render(&[(60 + k, 0.0, 0.9), (64 + k, 1.0, 0.9)], "cello").with_label("cello"))
        .chain((0..6).map(|k| render(&[(72 + k, 0.0, 0.9), (76 + k, 1.0, 0.9)], "flute").with_label("flute")))
        .collect();
    let clf = train_timbre_classifier(&EmbeddingSet::from_clips(&clips).unwrap(), &ClassifierConfig::default()).unwrap();
    let own: Vec<LatentClip> = clips[..6].to_vec();
    let e = evaluate_transfer(&own, &own, &own, &clf, "cello", &ex).unwrap();
    assert_eq!(e.report.dpd, 0.0);
    assert_eq!(e.report.jaccard, 0.0);
    assert!(e.report.frechet.abs() < 1e-6);
    let own_acc = clf.fraction_predicted(&EmbeddingSet::from_clips(&own).unwrap(), clf.class_index("cello").unwrap()).unwrap();
    assert_eq!(e.report.classifier_accuracy, own_acc);
    assert!(matches!(evaluate_transfer(&own, &own[..2], &own, &clf, "cello", &ex), Err(Error::Contract(_))));
}

#[test]
fn histogram_tv_bounds() {
    let g = HistogramGrid::around([0.0, 0.0], [1.0, 1.0], 4);
    let a = vec![vec![0.1, 0.1], vec![-0.5, 0.5]];
    let b = vec![vec![5.0, 5.0]];
    assert_eq!(histogram_tv(&a, &a, &g).unwrap(), 0.0);
    assert_eq!(histogram_tv(&a, &b, &g).unwrap(), 1.0);
    assert!(energy_distance(&a, &b).unwrap() > 0.0);
    assert!(energy_distance(&a, &a).unwrap().abs() < 1e-12);
}

#[test]
fn quantiles() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
}
