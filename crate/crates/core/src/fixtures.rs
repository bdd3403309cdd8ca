//! Small graphs and trees used by tests, examples and the Python smoke test.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, InductiveView, NodeId, RandomSplit, SplitSpec};
use crate::tree::ContributionTree;

/// Path 0-1-2 with scalar features 1, 2, 3 and node 0 labeled class 0.
pub fn p3_graph() -> Arc<Graph> {
    let (g, _) = Graph::from_edges(
        3,
        [(0, 1), (1, 2)],
        vec![1.0, 2.0, 3.0],
        1,
        vec![Some(0), None, None],
        1,
    )
    .expect("fixture is valid");
    Arc::new(g)
}

/// Labeled node 0 on the path 0-1-2 with K = 2: players (0), (0,1),
/// (0,1,0), (0,1,2) at indices 0..4.
pub fn p3_tree() -> ContributionTree {
    let view = InductiveView::new(p3_graph(), &[0, 1, 2]).expect("fixture is valid");
    ContributionTree::build(&view, &[0], 2).expect("fixture is valid")
}

/// Dummy root over A(a1, a2) and a leaf B. Indices: A=0, B=1, a1=2, a2=3.
pub fn a_b_tree() -> ContributionTree {
    ContributionTree::from_forest(&[10, 20, 11, 12], &[None, None, Some(0), Some(0)])
        .expect("fixture is valid")
}

/// `n` players, all children of the dummy root.
pub fn flat(n: usize) -> ContributionTree {
    let nodes: Vec<NodeId> = (0..n as NodeId).collect();
    ContributionTree::from_forest(&nodes, &vec![None; n]).expect("fixture is valid")
}

/// A random forest with `n >= 1` players in breadth-first layout.
pub fn random_forest(n: usize, seed: u64) -> ContributionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roots = rng.random_range(1..=n.clamp(1, 3));
    let mut parents: Vec<Option<usize>> = vec![None; roots];
    for i in roots..n {
        let lo = parents.last().copied().flatten().unwrap_or(0);
        parents.push(Some(rng.random_range(lo..i)));
    }
    let nodes: Vec<NodeId> = (0..n as NodeId).collect();
    ContributionTree::from_forest(&nodes, &parents).expect("generated in breadth-first layout")
}

/// Settings for [`block_model`].
#[derive(Debug, Clone, Copy)]
pub struct BlockModel {
    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    /// Expected within-class and cross-class degree.
    pub degree_in: f64,
    pub degree_out: f64,
    /// Probability that a feature bit is drawn from another class's profile.
    pub feature_noise: f64,
    pub labeled_per_class: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for BlockModel {
    fn default() -> Self {
        BlockModel {
            nodes: 300,
            classes: 2,
            features: 40,
            degree_in: 4.0,
            degree_out: 1.0,
            feature_noise: 0.35,
            labeled_per_class: 5,
            val: 60,
            test: 80,
            seed: 0,
        }
    }
}

/// A seeded stochastic block model with bag-of-words style features: every
/// class owns a block of feature columns and nodes switch on a few columns
/// of their class (or, with `feature_noise`, of a random class).
pub fn block_model(cfg: &BlockModel) -> (Arc<Graph>, SplitSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.nodes;
    let c = cfg.classes.max(1);
    let class: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
    let block = (cfg.features / c).max(1);
    let mut features = vec![0.0; n * cfg.features];
    for i in 0..n {
        for _ in 0..4 {
            let owner = if rng.random_bool(cfg.feature_noise) {
                rng.random_range(0..c)
            } else {
                class[i] as usize
            };
            let col = (owner * block + rng.random_range(0..block)).min(cfg.features - 1);
            features[i * cfg.features + col] = 1.0;
        }
    }
    let per_class = (n / c).max(1) as f64;
    let p_in = (cfg.degree_in / per_class).min(1.0);
    let p_out = (cfg.degree_out / (n as f64 - per_class).max(1.0)).min(1.0);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if class[a] == class[b] { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((a as NodeId, b as NodeId));
            }
        }
    }
    let labels = class.iter().map(|&y| Some(y)).collect();
    let (mut g, _) =
        Graph::from_edges(n, edges, features, cfg.features, labels, c).expect("generated graph");
    g.normalize_rows();
    let split = RandomSplit {
        train_per_class: cfg.labeled_per_class,
        num_val: cfg.val,
        num_test: cfg.test,
        seed: cfg.seed ^ 0x5eed,
    }
    .draw(&g)
    .expect("split fits the graph");
    (Arc::new(g), split)
}
