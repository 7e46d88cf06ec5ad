//! Random forest baseline: bagged CART trees with Gini splits and
//! square-root feature subsampling.
//!
//! The forest consumes the flat M x D channel matrix (plus the growing-days
//! scalar when configured) rather than patches: it has no notion of spatial
//! or temporal ordering, which is exactly why the paper uses it as the
//! robustness baseline.

use rand::Rng;

use crate::cube::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::features::SampleBatch;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    /// None grows to purity.
    pub max_depth: Option<usize>,
    /// Features tried per split; None means floor(sqrt(feature count)).
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
    /// Append the growing-days scalar to the feature vector.
    pub include_delta: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: None,
            mtry: None,
            bootstrap: true,
            seed: 42,
            include_delta: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::InvalidConfig("need at least one tree".into()));
        }
        Ok(())
    }
}

/// One node; `left == u32::MAX` marks a leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    pub feature: u16,
    pub threshold: f32,
    pub left: u32,
    pub right: u32,
    pub leaf_class: u8,
}

pub const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub config: ForestConfig,
    pub feature_len: usize,
    pub trees: Vec<Vec<TreeNode>>,
}

/// Flattens samples into `(rows, feature_len, labels)` forest inputs:
/// the M x D channel matrix followed by raw growing days when configured.
pub fn flatten_samples(
    batch: &SampleBatch,
    include_delta: bool,
) -> Result<(Vec<f32>, usize, Vec<u8>)> {
    let base = batch.channels * batch.timesteps;
    let feature_len = base + usize::from(include_delta);
    let mut rows = Vec::with_capacity(batch.samples.len() * feature_len);
    let mut labels = Vec::with_capacity(batch.samples.len());
    for sample in &batch.samples {
        rows.extend_from_slice(&sample.x_lstm);
        if include_delta {
            let delta = sample.delta_days.ok_or_else(|| {
                Error::ModeMismatch(format!(
                    "sample at ({}, {}) has no growing-days scalar",
                    sample.row, sample.col
                ))
            })?;
            rows.push(delta);
        }
        labels.push(sample.label);
    }
    Ok((rows, feature_len, labels))
}

/// Trains bagged CART trees. Deterministic per seed; tree t draws from its
/// own stream so a different tree count never reshuffles earlier trees.
pub fn forest_train(
    features: &[f32],
    feature_len: usize,
    labels: &[u8],
    config: &ForestConfig,
) -> Result<Forest> {
    config.validate()?;
    let n = labels.len();
    if n == 0 || feature_len == 0 {
        return Err(Error::EmptyInput("empty training set".into()));
    }
    if features.len() != n * feature_len {
        return Err(Error::ShapeMismatch(format!(
            "features length {} != {n} x {feature_len}",
            features.len()
        )));
    }
    for (i, v) in features.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature(i % feature_len));
        }
    }
    let distinct = {
        let mut seen = [false; NUM_CLASSES];
        for &l in labels {
            seen[l as usize] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        log::warn!("forest trained on a single class; returning a constant classifier");
    }
    let mtry = config
        .mtry
        .unwrap_or_else(|| ((feature_len as f64).sqrt().floor() as usize).max(1))
        .min(feature_len);

    let mut trees = Vec::with_capacity(config.trees);
    for t in 0..config.trees {
        let mut tree_rng = rng::stream(config.seed, "tree", t as u64);
        let sample_idx: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| tree_rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut nodes = Vec::new();
        grow(
            &mut nodes,
            features,
            feature_len,
            labels,
            sample_idx,
            0,
            config.max_depth,
            mtry,
            &mut tree_rng,
        );
        trees.push(nodes);
    }
    Ok(Forest {
        config: config.clone(),
        feature_len,
        trees,
    })
}

fn majority(counts: &[usize; NUM_CLASSES]) -> u8 {
    let mut best = 0usize;
    for c in 1..NUM_CLASSES {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best as u8
}

fn gini(counts: &[usize; NUM_CLASSES], total: f64) -> f64 {
    let mut g = 1.0;
    for &c in counts {
        let p = c as f64 / total;
        g -= p * p;
    }
    g
}

#[allow(clippy::too_many_arguments)]
fn grow(
    nodes: &mut Vec<TreeNode>,
    features: &[f32],
    feature_len: usize,
    labels: &[u8],
    members: Vec<usize>,
    depth: usize,
    max_depth: Option<usize>,
    mtry: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> u32 {
    let mut counts = [0usize; NUM_CLASSES];
    for &i in &members {
        counts[labels[i] as usize] += 1;
    }
    let node_total = members.len();
    let make_leaf = |nodes: &mut Vec<TreeNode>| -> u32 {
        let id = nodes.len() as u32;
        nodes.push(TreeNode {
            feature: 0,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            leaf_class: majority(&counts),
        });
        id
    };
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let depth_capped = max_depth.is_some_and(|d| depth >= d);
    if pure || depth_capped || node_total < 2 {
        return make_leaf(nodes);
    }

    // sample mtry distinct features, then scan them in ascending order
    let mut pool: Vec<usize> = (0..feature_len).collect();
    for slot in 0..mtry {
        let pick = rng.gen_range(slot..feature_len);
        pool.swap(slot, pick);
    }
    let mut candidates = pool[..mtry].to_vec();
    candidates.sort_unstable();

    let parent_gini = gini(&counts, node_total as f64);
    let mut best: Option<(f64, usize, f32)> = None;
    let mut sorted = members.clone();
    for &feat in &candidates {
        sorted.sort_by(|&a, &b| {
            features[a * feature_len + feat].total_cmp(&features[b * feature_len + feat])
        });
        let mut left_counts = [0usize; NUM_CLASSES];
        for split in 1..node_total {
            let prev = sorted[split - 1];
            left_counts[labels[prev] as usize] += 1;
            let lo = features[prev * feature_len + feat];
            let hi = features[sorted[split] * feature_len + feat];
            if lo == hi {
                continue;
            }
            let mut right_counts = [0usize; NUM_CLASSES];
            for c in 0..NUM_CLASSES {
                right_counts[c] = counts[c] - left_counts[c];
            }
            let nl = split as f64;
            let nr = (node_total - split) as f64;
            let weighted = (nl * gini(&left_counts, nl) + nr * gini(&right_counts, nr))
                / node_total as f64;
            let gain = parent_gini - weighted;
            let threshold = 0.5 * (lo + hi);
            if gain > 1e-12 && best.map_or(true, |(g, _, _)| gain > g) {
                best = Some((gain, feat, threshold));
            }
        }
    }

    let Some((_, feat, threshold)) = best else {
        return make_leaf(nodes);
    };
    let (left_members, right_members): (Vec<usize>, Vec<usize>) = members
        .iter()
        .partition(|&&i| features[i * feature_len + feat] <= threshold);

    let id = nodes.len() as u32;
    nodes.push(TreeNode {
        feature: feat as u16,
        threshold,
        left: 0,
        right: 0,
        leaf_class: 0,
    });
    let left = grow(
        nodes,
        features,
        feature_len,
        labels,
        left_members,
        depth + 1,
        max_depth,
        mtry,
        rng,
    );
    let right = grow(
        nodes,
        features,
        feature_len,
        labels,
        right_members,
        depth + 1,
        max_depth,
        mtry,
        rng,
    );
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    id
}

impl Forest {
    /// Majority vote over trees; ties break to the lowest class index.
    pub fn predict_one(&self, x: &[f32]) -> Result<(u8, [f64; NUM_CLASSES])> {
        if x.len() != self.feature_len {
            return Err(Error::FeatureLenMismatch {
                expected: self.feature_len,
                got: x.len(),
            });
        }
        for (i, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature(i));
            }
        }
        let mut votes = [0usize; NUM_CLASSES];
        for tree in &self.trees {
            let mut at = 0usize;
            loop {
                let node = tree[at];
                if node.left == LEAF {
                    votes[node.leaf_class as usize] += 1;
                    break;
                }
                at = if x[node.feature as usize] <= node.threshold {
                    node.left as usize
                } else {
                    node.right as usize
                };
            }
        }
        let mut best = 0usize;
        for c in 1..NUM_CLASSES {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        let total = self.trees.len() as f64;
        let mut fractions = [0f64; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            fractions[c] = votes[c] as f64 / total;
        }
        Ok((best as u8, fractions))
    }

    /// Batch prediction over row-major features.
    pub fn predict(&self, features: &[f32]) -> Result<Vec<(u8, [f64; NUM_CLASSES])>> {
        if self.feature_len == 0 || features.len() % self.feature_len != 0 {
            return Err(Error::FeatureLenMismatch {
                expected: self.feature_len,
                got: features.len(),
            });
        }
        features
            .chunks_exact(self.feature_len)
            .map(|row| self.predict_one(row))
            .collect()
    }
}
