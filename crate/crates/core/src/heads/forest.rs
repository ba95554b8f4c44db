use alloc::vec;
use alloc::vec::Vec;

use libm::{ceil, sqrt};
use rand::Rng as _;

use super::{check_training, LabeledEmbedding};
use crate::labels::{argmax, snap_distribution};
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Smallest number of bootstrap samples allowed on either side of a split.
    pub min_leaf: usize,
    /// Features drawn per node; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            min_leaf: 2,
            max_features: None,
            seed: 0,
        }
    }
}

/// One node of a tree. Leaves have `feature == -1` and no children; every
/// node keeps the class counts of the bootstrap samples that reached it.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub feature: i32,
    pub threshold: f32,
    pub left: i32,
    pub right: i32,
    pub counts: Vec<u32>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.feature < 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Leaf reached by `x`; `x[f] <= threshold` goes left.
    pub fn leaf(&self, x: &[f64]) -> &TreeNode {
        let mut node = &self.nodes[0];
        while !node.is_leaf() {
            let next = if x[node.feature as usize] <= node.threshold as f64 { node.left } else { node.right };
            node = &self.nodes[next as usize];
        }
        node
    }

    fn accumulate(&self, x: &[f64], acc: &mut [f64]) {
        let counts = &self.leaf(x).counts;
        let total: u32 = counts.iter().sum();
        for (a, &c) in acc.iter_mut().zip(counts) {
            *a += c as f64 / total as f64;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub n_classes: usize,
    pub dim: usize,
    pub trees: Vec<Tree>,
    /// Out-of-bag accuracy over samples left out by at least one tree.
    pub oob_accuracy: Option<f64>,
}

impl Forest {
    /// Mean of the per-tree leaf class frequencies.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for t in &self.trees {
            t.accumulate(x, &mut acc);
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        snap_distribution(&mut acc);
        acc
    }

    /// Checks node links, feature indices and count lengths.
    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Empty("forest trees"));
        }
        for tree in &self.trees {
            let n = tree.nodes.len() as i32;
            if n == 0 {
                return Err(Error::Empty("tree nodes"));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                if node.counts.len() != self.n_classes || node.counts.iter().all(|&c| c == 0) {
                    return Err(Error::invalid("forest", "node class counts are malformed"));
                }
                if node.is_leaf() {
                    continue;
                }
                let child_ok = |c: i32| c > i as i32 && c < n;
                if node.feature as usize >= self.dim || !child_ok(node.left) || !child_ok(node.right) {
                    return Err(Error::invalid("forest", alloc::format!("node {i} has invalid links")));
                }
            }
        }
        Ok(())
    }
}

struct Split {
    feature: usize,
    threshold: f32,
    impurity: f64,
}

/// Bagged CART trees with Gini splits. Samples are ordered by utterance id
/// first, so the result does not depend on the order of `data`.
pub fn train_forest(data: &[LabeledEmbedding], n_classes: usize, config: &ForestConfig) -> Result<Forest> {
    let d = check_training(data, n_classes)?;
    if config.n_trees == 0 || config.min_leaf == 0 {
        return Err(Error::invalid("forest config", "n_trees and min_leaf must be at least 1"));
    }
    let mtry = config.max_features.unwrap_or(ceil(sqrt(d as f64)) as usize).clamp(1, d);
    let mut sorted: Vec<&LabeledEmbedding> = data.iter().collect();
    sorted.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].utterance_id == w[1].utterance_id) {
        return Err(Error::invalid("utterance_id", alloc::format!("duplicate id {:?}", w[0].utterance_id)));
    }
    let build = |t: usize| {
        let mut rng = seeded(config.seed.wrapping_add(t as u64));
        let n = sorted.len();
        let bag: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut in_bag = vec![false; n];
        bag.iter().for_each(|&i| in_bag[i] = true);
        let tree = grow_tree(&sorted, bag, n_classes, d, mtry, config.min_leaf, &mut rng);
        (tree, in_bag)
    };
    #[cfg(feature = "parallel")]
    let built: Vec<(Tree, Vec<bool>)> = {
        use rayon::prelude::*;
        (0..config.n_trees).into_par_iter().map(build).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let built: Vec<(Tree, Vec<bool>)> = (0..config.n_trees).map(build).collect();

    let mut correct = 0usize;
    let mut scored = 0usize;
    for (i, s) in sorted.iter().enumerate() {
        let mut acc = vec![0.0; n_classes];
        let mut votes = 0;
        for (tree, in_bag) in &built {
            if !in_bag[i] {
                tree.accumulate(&s.x, &mut acc);
                votes += 1;
            }
        }
        if votes > 0 {
            scored += 1;
            correct += (argmax(&acc) == s.label) as usize;
        }
    }
    Ok(Forest {
        n_classes,
        dim: d,
        trees: built.into_iter().map(|(t, _)| t).collect(),
        oob_accuracy: (scored > 0).then(|| correct as f64 / scored as f64),
    })
}

fn grow_tree(
    data: &[&LabeledEmbedding],
    bag: Vec<usize>,
    k: usize,
    d: usize,
    mtry: usize,
    min_leaf: usize,
    rng: &mut crate::rng::Rng,
) -> Tree {
    let leaf = |counts: Vec<u32>| TreeNode {
        feature: -1,
        threshold: 0.0,
        left: -1,
        right: -1,
        counts,
    };
    let mut nodes = vec![leaf(Vec::new())];
    let mut stack = vec![(0usize, bag)];
    let mut features: Vec<usize> = (0..d).collect();
    while let Some((id, samples)) = stack.pop() {
        let mut counts = vec![0u32; k];
        samples.iter().for_each(|&i| counts[data[i].label] += 1);
        let pure = counts.iter().filter(|&&c| c > 0).count() == 1;
        if pure || samples.len() < 2 * min_leaf {
            nodes[id] = leaf(counts);
            continue;
        }
        // Partial Fisher-Yates: the first `mtry` entries are the sample.
        for i in 0..mtry {
            let j = rng.random_range(i..d);
            features.swap(i, j);
        }
        let mut best = best_split(data, &samples, &features[..mtry], k, min_leaf);
        if best.is_none() {
            let mut rest: Vec<usize> = features[mtry..].to_vec();
            rest.sort_unstable();
            best = best_split(data, &samples, &rest, k, min_leaf);
        }
        let Some(split) = best else {
            nodes[id] = leaf(counts);
            continue;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&i| data[i].x[split.feature] <= split.threshold as f64);
        let l = nodes.len();
        nodes.push(leaf(Vec::new()));
        nodes.push(leaf(Vec::new()));
        nodes[id] = TreeNode {
            feature: split.feature as i32,
            threshold: split.threshold,
            left: l as i32,
            right: l as i32 + 1,
            counts,
        };
        stack.push((l + 1, right));
        stack.push((l, left));
    }
    Tree { nodes }
}

/// Lowest weighted Gini impurity over `features`; the first candidate wins
/// ties.
fn best_split(data: &[&LabeledEmbedding], samples: &[usize], features: &[usize], k: usize, min_leaf: usize) -> Option<Split> {
    let m = samples.len();
    let mut best: Option<Split> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(m);
    let mut total = vec![0usize; k];
    samples.iter().for_each(|&i| total[data[i].label] += 1);
    for &f in features {
        order.clear();
        order.extend(samples.iter().map(|&i| (data[i].x[f], data[i].label)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut left = vec![0usize; k];
        for i in 1..m {
            left[order[i - 1].1] += 1;
            let (a, b) = (order[i - 1].0, order[i].0);
            if a == b || i < min_leaf || m - i < min_leaf {
                continue;
            }
            let Some(threshold) = threshold_between(a, b) else {
                continue;
            };
            // n * gini = n - sum(c^2) / n, summed over both sides.
            let nl = i as f64;
            let nr = (m - i) as f64;
            let sl: f64 = left.iter().map(|&c| (c * c) as f64).sum();
            let sr: f64 = left.iter().zip(&total).map(|(&l, &t)| ((t - l) * (t - l)) as f64).sum();
            let impurity = (nl - sl / nl) + (nr - sr / nr);
            if best.as_ref().is_none_or(|s| impurity < s.impurity) {
                best = Some(Split {
                    feature: f,
                    threshold,
                    impurity,
                });
            }
        }
    }
    best
}

/// An f32 threshold `t` with `a <= t < b`, preferring the midpoint.
fn threshold_between(a: f64, b: f64) -> Option<f32> {
    let ok = |t: f32| (t as f64) >= a && (t as f64) < b;
    let mid = (a + (b - a) / 2.0) as f32;
    if ok(mid) {
        return Some(mid);
    }
    let low = a as f32;
    ok(low).then_some(low)
}
