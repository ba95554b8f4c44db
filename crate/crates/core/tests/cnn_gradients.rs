//! Central finite differences against the CNN backward pass, every weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spice_core::cnn::{Axis, Block, Cnn, CnnConfig, Pool};
use spice_core::frontend::FeatureMap;

const REL_STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;

fn two_block(n_classes: usize) -> CnnConfig {
    CnnConfig {
        n_classes,
        in_height: 8,
        blocks: vec![
            Block::new(Axis::Time, 4, Pool::Max2),
            Block::new(Axis::Freq, 3, Pool::None),
        ],
    }
}

fn objective(cnn: &Cnn, map: &FeatureMap, upstream: &[f64]) -> f64 {
    cnn.forward(map).unwrap().iter().zip(upstream).map(|(a, b)| a * b).sum()
}

fn worst_tensor_error(seed: u64, config: CnnConfig) -> (String, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..8 * 20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let map = FeatureMap::new(8, 20, 100.0, values).unwrap();
    let mut cnn = Cnn::init(config.clone(), seed).unwrap();
    // Non-zero biases so that the bias gradients are exercised away from init.
    for (i, t) in cnn.tensors_mut().iter_mut().enumerate() {
        if i % 2 == 1 {
            t.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let upstream: Vec<f64> = (0..config.n_classes).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, trace) = cnn.forward_traced(&map, map.n_frames).unwrap();
    let (grads, _) = trace.backward(&cnn, &upstream).unwrap();

    let names: Vec<String> = config.tensor_shapes().into_iter().map(|(n, _)| n).collect();
    let mut worst = (String::new(), 0.0);
    for (ti, name) in names.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut norm_a = 0.0;
        let mut norm_n = 0.0;
        for j in 0..cnn.tensors()[ti].len() {
            let theta = cnn.tensors()[ti][j];
            let h = REL_STEP * theta.abs().max(1e-2);
            let mut plus = cnn.clone();
            plus.tensors_mut()[ti][j] = theta + h;
            let mut minus = cnn.clone();
            minus.tensors_mut()[ti][j] = theta - h;
            let numeric = (objective(&plus, &map, &upstream) - objective(&minus, &map, &upstream)) / (2.0 * h);
            let a = grads.tensors[ti][j];
            diff2 += (a - numeric) * (a - numeric);
            norm_a += a * a;
            norm_n += numeric * numeric;
        }
        let scale = norm_a.sqrt().max(norm_n.sqrt());
        let err = if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale };
        if err >= worst.1 {
            worst = (name.clone(), err);
        }
    }
    worst
}

#[test]
fn every_weight_tensor_matches_finite_differences() {
    for seed in 0..10 {
        for k in [2, 5] {
            let (name, err) = worst_tensor_error(seed, two_block(k));
            assert!(err < TOLERANCE, "seed {seed} K={k} {name}: relative error {err:e}");
        }
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let values: Vec<f64> = (0..8 * 20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let map = FeatureMap::new(8, 20, 100.0, values.clone()).unwrap();
    let cnn = Cnn::init(two_block(5), 7).unwrap();
    let upstream = [0.3, -1.0, 0.5, 0.2, -0.4];
    let (_, trace) = cnn.forward_traced(&map, 20).unwrap();
    let (_, dinput) = trace.backward(&cnn, &upstream).unwrap();
    let mut diff2 = 0.0;
    let mut norm = 0.0;
    for j in 0..values.len() {
        let h = 1e-6;
        let mut p = values.clone();
        p[j] += h;
        let mut m = values.clone();
        m[j] -= h;
        let fp = objective(&cnn, &FeatureMap::new(8, 20, 100.0, p).unwrap(), &upstream);
        let fm = objective(&cnn, &FeatureMap::new(8, 20, 100.0, m).unwrap(), &upstream);
        let numeric = (fp - fm) / (2.0 * h);
        diff2 += (dinput[j] - numeric).powi(2);
        norm += numeric * numeric;
    }
    assert!(diff2.sqrt() / norm.sqrt() < 1e-6);
}
