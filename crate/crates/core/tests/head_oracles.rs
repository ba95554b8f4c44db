use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use spice_core::heads::{
    train_forest, train_lda, train_logreg, ForestConfig, LabeledEmbedding, LogReg, LogRegConfig,
};
use spice_core::labels::argmax;
use spice_core::rng::seeded;
use spice_core::ClassScores;

/// `per_class` points around each of `k` random centres in `d` dimensions.
fn gaussian_blobs(seed: u64, k: usize, d: usize, per_class: usize, spread: f64, sigma: f64) -> Vec<LabeledEmbedding> {
    let mut rng = seeded(seed);
    let centres: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-spread..spread)).collect())
        .collect();
    let mut out = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for i in 0..per_class {
            let x = centre
                .iter()
                .map(|m| m + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            out.push(LabeledEmbedding {
                utterance_id: format!("c{c}_{i:03}"),
                x,
                label: c,
            });
        }
    }
    out
}

/// Textbook LDA with an explicit inverse.
fn lda_oracle(data: &[LabeledEmbedding], k: usize, gamma: f64) -> impl Fn(&[f64]) -> Vec<f64> {
    let d = data[0].x.len();
    let n = data.len();
    let mut means = vec![DVector::<f64>::zeros(d); k];
    let mut counts = vec![0usize; k];
    for s in data {
        means[s.label] += DVector::from_column_slice(&s.x);
        counts[s.label] += 1;
    }
    for c in 0..k {
        means[c] /= counts[c] as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in data {
        let z = DVector::from_column_slice(&s.x) - &means[s.label];
        cov += &z * z.transpose();
    }
    cov /= (n - k) as f64;
    let shrunk = cov.clone() * (1.0 - gamma) + DMatrix::identity(d, d) * (gamma * cov.trace() / d as f64);
    let inv = shrunk.try_inverse().unwrap();
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    move |x: &[f64]| {
        let x = DVector::from_column_slice(x);
        (0..k)
            .map(|c| {
                let a = &inv * &means[c];
                x.dot(&a) - 0.5 * means[c].dot(&a) + priors[c].ln()
            })
            .collect()
    }
}

#[test]
fn lda_matches_closed_form() {
    for seed in 0..5 {
        let data = gaussian_blobs(seed, 5, 6, 30, 2.0, 1.0);
        let model = train_lda(&data, 5, 0.1).unwrap();
        let oracle = lda_oracle(&data, 5, 0.1);
        let probe = gaussian_blobs(seed + 100, 5, 6, 10, 2.0, 1.5);
        for s in data.iter().chain(&probe) {
            let got = model.discriminants(&s.x);
            let want = oracle(&s.x);
            assert_eq!(argmax(&got), argmax(&want));
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn lda_without_shrinkage_is_affine_invariant() {
    let data = gaussian_blobs(9, 3, 4, 40, 2.0, 1.0);
    let mut rng = seeded(10);
    let a: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 2.0 } else { rng.random_range(-0.5..0.5) }).collect();
    let shift: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
    let transform = |x: &[f64]| -> Vec<f64> {
        (0..4)
            .map(|i| (0..4).map(|j| a[i * 4 + j] * x[j]).sum::<f64>() + shift[i])
            .collect()
    };
    let moved: Vec<LabeledEmbedding> = data
        .iter()
        .map(|s| LabeledEmbedding {
            x: transform(&s.x),
            ..s.clone()
        })
        .collect();
    let m1 = train_lda(&data, 3, 0.0).unwrap();
    let m2 = train_lda(&moved, 3, 0.0).unwrap();
    for s in &data {
        let p1 = ClassScores::from_logits(&m1.discriminants(&s.x));
        let p2 = ClassScores::from_logits(&m2.discriminants(&transform(&s.x)));
        for (u, v) in p1.probs().iter().zip(p2.probs()) {
            assert!((u - v).abs() < 1e-8);
        }
    }
}

#[test]
fn logreg_separates_blobs() {
    let data = gaussian_blobs(1, 5, 8, 30, 10.0, 0.5);
    let m = train_logreg(&data, 5, &LogRegConfig::default()).unwrap();
    assert!(data.iter().all(|s| argmax(&m.logits(&s.x)) == s.label));
}

#[test]
fn logreg_optimum_beats_perturbations() {
    for seed in 0..3 {
        let data = gaussian_blobs(seed, 3, 4, 40, 1.0, 1.0);
        let cfg = LogRegConfig::default();
        let m = train_logreg(&data, 3, &cfg).unwrap();
        let best = m.objective(&data, cfg.l2_lambda);
        let mut rng = seeded(seed + 50);
        for _ in 0..20 {
            let n = m.weights.len() + m.bias.len();
            let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut p: LogReg = m.clone();
            for (w, v) in p.weights.iter_mut().chain(p.bias.iter_mut()).zip(&dir) {
                *w += 0.1 * v / norm;
            }
            assert!(best <= p.objective(&data, cfg.l2_lambda));
        }
    }
}

#[test]
fn forest_oob_on_separable_blobs() {
    let data = gaussian_blobs(1, 5, 8, 30, 10.0, 0.5);
    let f = train_forest(&data, 5, &ForestConfig::default()).unwrap();
    assert!(f.oob_accuracy.unwrap() >= 0.95, "{:?}", f.oob_accuracy);
}

#[test]
fn forest_ignores_input_order() {
    let data = gaussian_blobs(4, 3, 5, 20, 1.0, 1.0);
    let cfg = ForestConfig {
        n_trees: 20,
        ..ForestConfig::default()
    };
    let base = train_forest(&data, 3, &cfg).unwrap();
    let mut shuffled = data.clone();
    shuffled.shuffle(&mut seeded(1));
    assert_eq!(train_forest(&shuffled, 3, &cfg).unwrap(), base);
}
