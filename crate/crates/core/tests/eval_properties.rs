use proptest::prelude::*;
use rand::Rng;
use spice_core::eval::{
    accuracy, binary_auc, intelligibility_percent, macro_f1, ovr_auc, speaker_aggregate, ClassMap, ScoredUtterance,
};
use spice_core::labels::binarize_mildplus;
use spice_core::rng::seeded;
use spice_core::{ClassScores, IntelligibilityClass};

fn brute_force_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &p) in positive.iter().enumerate() {
        if !p {
            continue;
        }
        for (j, &q) in positive.iter().enumerate() {
            if q {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// `n` random distributions over `k` classes; with `levels`, every entry is
/// drawn from a handful of values so ties are common.
fn random_scores(rng: &mut impl Rng, n: usize, k: usize, levels: Option<u32>) -> Vec<ClassScores> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k)
                .map(|_| match levels {
                    Some(l) => (rng.random_range(0..l) + 1) as f64,
                    None => rng.random_range(0.01..1.0),
                })
                .collect();
            let sum: f64 = raw.iter().sum();
            ClassScores::new(raw.iter().map(|v| v / sum).collect()).unwrap()
        })
        .collect()
}

#[test]
fn rank_auc_matches_brute_force() {
    for seed in 0..50u64 {
        let mut rng = seeded(seed);
        let levels = if seed % 2 == 0 { Some(3) } else { None };
        let scores = random_scores(&mut rng, 200, 5, levels);
        let refs: Vec<usize> = (0..200).map(|_| rng.random_range(0..5)).collect();
        let got = ovr_auc(&scores, &refs, 5).unwrap();
        let mut expected = Vec::new();
        for c in 0..5 {
            let column: Vec<f64> = scores.iter().map(|s| s.probs()[c]).collect();
            let positive: Vec<bool> = refs.iter().map(|&r| r == c).collect();
            let want = brute_force_auc(&column, &positive).unwrap();
            let have = got.per_class[c].unwrap();
            assert!((have - want).abs() <= 1e-12, "seed {seed} class {c}: {have} vs {want}");
            expected.push(want);
        }
        let mean = expected.iter().sum::<f64>() / 5.0;
        assert!((got.mean.unwrap() - mean).abs() <= 1e-12);
    }
}

#[test]
fn all_tied_scores_give_one_half() {
    let positive = [true, false, true, false, false];
    assert_eq!(binary_auc(&[0.3; 5], &positive), Some(0.5));
    assert_eq!(brute_force_auc(&[0.3; 5], &positive), Some(0.5));
}

#[test]
fn auc_invariant_under_increasing_transforms() {
    let mut rng = seeded(11);
    for _ in 0..20 {
        let column: Vec<f64> = (0..100).map(|_| (rng.random_range(0..20) as f64) / 20.0).collect();
        let positive: Vec<bool> = (0..100).map(|_| rng.random_bool(0.3)).collect();
        let base = binary_auc(&column, &positive);
        let exp: Vec<f64> = column.iter().map(|v| v.exp()).collect();
        let scaled: Vec<f64> = column.iter().map(|v| v * 10.0).collect();
        assert_eq!(binary_auc(&exp, &positive), base);
        assert_eq!(binary_auc(&scaled, &positive), base);
    }
}

proptest! {
    #[test]
    fn accuracy_is_one_minus_hamming(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60)) {
        let (pred, refs): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let hamming = pred.iter().zip(&refs).filter(|(a, b)| a != b).count() as f64 / refs.len() as f64;
        prop_assert!((accuracy(&pred, &refs).unwrap() - (1.0 - hamming)).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_is_one_only_for_exact_predictions(
        refs in prop::collection::vec(0usize..5, 5..40),
        flips in prop::collection::vec(any::<bool>(), 45),
    ) {
        // Every class present in the references.
        let mut refs = refs;
        refs.extend(0..5);
        let pred: Vec<usize> = refs.iter().zip(&flips).map(|(&r, &f)| if f { (r + 1) % 5 } else { r }).collect();
        let f1 = macro_f1(&pred, &refs, 5).unwrap();
        prop_assert_eq!(f1 == 1.0, pred == refs);
    }

    #[test]
    fn monotone_maps_agree_on_ordered_histograms(
        base in prop::collection::vec(0usize..5, 1..30),
        bumps in prop::collection::vec(any::<bool>(), 30),
        steps in prop::collection::vec(0.1f64..50.0, 5),
    ) {
        // `worse` shifts some utterances of `base` to more severe classes, so
        // its class histogram is stochastically larger.
        let worse: Vec<usize> = base.iter().zip(&bumps).map(|(&c, &b)| if b { (c + 1).min(4) } else { c }).collect();
        let mut map = [0.0; 5];
        let mut v = 100.0;
        for (m, s) in map.iter_mut().zip(&steps) {
            *m = v;
            v -= s;
        }
        let maps = [ClassMap::DEFAULT, ClassMap(map)];
        let order = |m: &ClassMap| {
            let a = intelligibility_percent(&base, m).unwrap();
            let b = intelligibility_percent(&worse, m).unwrap();
            a.partial_cmp(&b).unwrap()
        };
        prop_assert_eq!(order(&maps[0]), order(&maps[1]));
    }
}

fn utt(id: &str, speaker: &str, probs: &[f64]) -> ScoredUtterance {
    ScoredUtterance {
        utterance_id: id.into(),
        speaker_id: speaker.into(),
        scores: ClassScores::new(probs.to_vec()).unwrap(),
    }
}

#[test]
fn speaker_tables_by_hand() {
    // (utterances, expected mean, expected class)
    let cases: Vec<(Vec<ScoredUtterance>, Vec<f64>, usize)> = vec![
        (vec![utt("a", "s", &[0.1, 0.2, 0.3, 0.3, 0.1])], vec![0.1, 0.2, 0.3, 0.3, 0.1], 2),
        (
            vec![utt("a", "s", &[1.0, 0.0, 0.0, 0.0, 0.0]), utt("b", "s", &[0.0, 1.0, 0.0, 0.0, 0.0])],
            vec![0.5, 0.5, 0.0, 0.0, 0.0],
            0,
        ),
        (
            vec![
                utt("a", "s", &[0.0, 0.0, 0.5, 0.5, 0.0]),
                utt("b", "s", &[0.0, 0.0, 0.0, 0.5, 0.5]),
                utt("c", "s", &[0.0, 0.0, 0.5, 0.0, 0.5]),
            ],
            vec![0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            2,
        ),
        (
            vec![
                utt("a", "s", &[0.25, 0.0, 0.0, 0.0, 0.75]),
                utt("b", "s", &[0.75, 0.0, 0.0, 0.0, 0.25]),
            ],
            vec![0.5, 0.0, 0.0, 0.0, 0.5],
            0,
        ),
        (
            vec![
                utt("a", "s", &[0.0, 0.0, 0.0, 0.25, 0.75]),
                utt("b", "s", &[0.0, 0.0, 0.0, 0.75, 0.25]),
                utt("c", "s", &[0.0, 0.0, 0.0, 0.0, 1.0]),
                utt("d", "s", &[0.0, 0.0, 0.0, 1.0, 0.0]),
            ],
            vec![0.0, 0.0, 0.0, 0.5, 0.5],
            3,
        ),
    ];
    for (utts, mean, class) in cases {
        let got = speaker_aggregate(&utts).unwrap();
        assert_eq!(got.len(), 1);
        for (a, b) in got[0].mean.probs().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(got[0].predicted, class);
    }
}

#[test]
fn aggregation_ignores_input_order() {
    let mut rng = seeded(3);
    let scores = random_scores(&mut rng, 40, 5, None);
    let utts: Vec<ScoredUtterance> = scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| ScoredUtterance {
            utterance_id: format!("u{i:03}"),
            speaker_id: format!("s{}", i % 3),
            scores: s,
        })
        .collect();
    let base = speaker_aggregate(&utts).unwrap();
    for seed in 0..10 {
        let mut shuffled = utts.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut seeded(seed));
        let got = speaker_aggregate(&shuffled).unwrap();
        for (a, b) in got.iter().zip(&base) {
            let bits = |s: &ClassScores| s.probs().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.mean), bits(&b.mean));
            assert_eq!(a.predicted, b.predicted);
        }
    }
}

#[test]
fn binarize_after_argmax() {
    // Mean (0.4, 0.3, 0.3, 0, 0): argmax is typical even though most mass is atypical.
    let utts = [utt("a", "s", &[0.4, 0.3, 0.3, 0.0, 0.0])];
    let s = speaker_aggregate(&utts).unwrap();
    let class = IntelligibilityClass::from_code(s[0].predicted).unwrap();
    assert_eq!(binarize_mildplus(class), 0);
}
