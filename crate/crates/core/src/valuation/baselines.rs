use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{InductiveView, NodeId};
use crate::permute::traversal_rng;
use crate::utility::ViewScorer;

/// A utility over whole training views.
pub trait ViewUtility: Sync {
    fn score(&self, view: &InductiveView) -> Result<f64>;
}

impl ViewUtility for ViewScorer {
    fn score(&self, view: &InductiveView) -> Result<f64> {
        ViewScorer::score(self, view)
    }
}

/// A utility over node subsets.
pub trait SetUtility: Sync {
    fn eval(&self, members: &[NodeId]) -> Result<f64>;
}

/// Scores the subgraph of `train` induced by a node subset.
pub struct InducedSubgraphUtility<'a, V> {
    train: &'a InductiveView,
    edges: Vec<(NodeId, NodeId)>,
    inner: &'a V,
}

impl<'a, V: ViewUtility> InducedSubgraphUtility<'a, V> {
    pub fn new(train: &'a InductiveView, inner: &'a V) -> Self {
        InducedSubgraphUtility {
            train,
            edges: train.edges(),
            inner,
        }
    }
}

impl<V: ViewUtility> SetUtility for InducedSubgraphUtility<'_, V> {
    fn eval(&self, members: &[NodeId]) -> Result<f64> {
        let mut mask = vec![false; self.train.parent().num_nodes()];
        for &v in members {
            if !self.train.contains(v) {
                return Err(Error::Lookup(format!(
                    "node {v} is not in the training view"
                )));
            }
            mask[v as usize] = true;
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .copied()
            .filter(|&(a, b)| mask[a as usize] && mask[b as usize])
            .collect();
        let view = InductiveView::with_edges(self.train.parent().clone(), members, &edges)?;
        self.inner.score(&view)
    }
}

/// A set utility given by a closure.
pub struct FnSetUtility<F>(pub F);

impl<F: Fn(&[NodeId]) -> f64 + Sync> SetUtility for FnSetUtility<F> {
    fn eval(&self, members: &[NodeId]) -> Result<f64> {
        Ok((self.0)(members))
    }
}

/// Labeled nodes plus every node within `hops` of one, ascending.
pub fn tmc_players(train: &InductiveView, labeled: &[NodeId], hops: usize) -> Result<Vec<NodeId>> {
    let mut dist = vec![usize::MAX; train.len()];
    let mut queue = VecDeque::new();
    for &v in labeled {
        let l = train.local_index(v).ok_or_else(|| {
            Error::Lookup(format!("labeled node {v} is not in the training view"))
        })?;
        if dist[l] != 0 {
            dist[l] = 0;
            queue.push_back(l);
        }
    }
    while let Some(l) = queue.pop_front() {
        if dist[l] == hops {
            continue;
        }
        for &v in train.neighbors_local(l) {
            let lv = train.local_index(v).expect("neighbors are kept");
            if dist[lv] == usize::MAX {
                dist[lv] = dist[l] + 1;
                queue.push_back(lv);
            }
        }
    }
    Ok(train
        .kept_ids()
        .iter()
        .zip(&dist)
        .filter(|(_, &d)| d != usize::MAX)
        .map(|(&v, _)| v)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmcConfig {
    pub permutations: u64,
    /// A permutation stops evaluating once `|U(S) - U(all)|` drops below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TmcConfig {
    fn default() -> Self {
        TmcConfig {
            permutations: 100,
            tolerance: 0.01,
            seed: 0,
        }
    }
}

/// Truncated Monte Carlo Shapley values of `players`, in the given order.
pub fn run_data_shapley_tmc<U: SetUtility>(
    players: &[NodeId],
    utility: &U,
    cfg: &TmcConfig,
) -> Result<Vec<f64>> {
    if cfg.permutations == 0 {
        return Err(Error::Config(
            "permutation budget must be at least 1".into(),
        ));
    }
    if cfg.tolerance.is_nan() || cfg.tolerance < 0.0 {
        return Err(Error::Config("tolerance must be nonnegative".into()));
    }
    let n = players.len();
    let empty = utility.eval(&[])?;
    let full = utility.eval(players)?;
    let per_perm: Vec<Vec<f64>> = (0..cfg.permutations)
        .into_par_iter()
        .map(|i| {
            let mut rng = traversal_rng(cfg.seed, i);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut marg = vec![0.0; n];
            let mut members = Vec::with_capacity(n);
            let mut prev = empty;
            for (j, &k) in perm.iter().enumerate() {
                if j > 0 && (full - prev).abs() < cfg.tolerance {
                    break;
                }
                members.push(players[k]);
                let u = utility.eval(&members)?;
                marg[k] = u - prev;
                prev = u;
            }
            Ok(marg)
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; n];
    for m in &per_perm {
        for (s, x) in sums.iter_mut().zip(m) {
            *s += x;
        }
    }
    let k = cfg.permutations as f64;
    Ok(sums.into_iter().map(|s| s / k).collect())
}

/// `U(G) - U(G - v)` for every node of the view.
pub fn run_loo_nodes<V: ViewUtility>(
    train: &InductiveView,
    utility: &V,
) -> Result<Vec<(NodeId, f64)>> {
    let base = utility.score(train)?;
    train
        .kept_ids()
        .par_iter()
        .map(|&v| Ok((v, base - utility.score(&train.without_nodes(&[v])?)?)))
        .collect()
}

/// `U(G) - U(G - e)` for every edge of the view.
pub fn run_loo_edges<V: ViewUtility>(
    train: &InductiveView,
    utility: &V,
) -> Result<Vec<((NodeId, NodeId), f64)>> {
    let base = utility.score(train)?;
    train
        .edges()
        .into_par_iter()
        .map(|(a, b)| Ok(((a, b), base - utility.score(&train.without_edge(a, b)?)?)))
        .collect()
}

pub fn degree_values(view: &InductiveView) -> Vec<(NodeId, f64)> {
    view.kept_ids()
        .iter()
        .enumerate()
        .map(|(l, &v)| (v, view.neighbors_local(l).len() as f64))
        .collect()
}

/// `n` seeded uniform draws from `[0, 1)`.
pub fn random_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Brandes edge betweenness: the fraction of unordered node pairs whose
/// shortest paths pass through each edge (split evenly across ties).
pub fn edge_betweenness(view: &InductiveView) -> Vec<((NodeId, NodeId), f64)> {
    let n = view.len();
    let edges = view.edges();
    let local: Vec<Vec<usize>> = (0..n)
        .map(|l| {
            view.neighbors_local(l)
                .iter()
                .map(|&v| view.local_index(v).expect("neighbors are kept"))
                .collect()
        })
        .collect();
    let key = |a: usize, b: usize| {
        let (x, y) = (view.kept_ids()[a], view.kept_ids()[b]);
        edges
            .binary_search(&(x.min(y), x.max(y)))
            .expect("edge exists")
    };
    let partial: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut score = vec![0.0; edges.len()];
            let mut sigma = vec![0.0f64; n];
            let mut dist = vec![usize::MAX; n];
            let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
            let mut order = Vec::with_capacity(n);
            let mut queue = VecDeque::new();
            sigma[s] = 1.0;
            dist[s] = 0;
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                for &w in &local[v] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                    if dist[w] == dist[v] + 1 {
                        sigma[w] += sigma[v];
                        preds[w].push(v);
                    }
                }
            }
            let mut delta = vec![0.0; n];
            for &w in order.iter().rev() {
                for &v in &preds[w] {
                    let c = sigma[v] / sigma[w] * (1.0 + delta[w]);
                    score[key(v, w)] += c;
                    delta[v] += c;
                }
            }
            score
        })
        .collect();
    let pairs = if n < 2 { 1.0 } else { (n * (n - 1)) as f64 };
    edges
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, partial.iter().map(|p| p[i]).sum::<f64>() / pairs))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fixtures::p3_graph;
    use crate::graph::Graph;
    use crate::valuation::{exact_shapley, FnGame};

    fn p3_view() -> InductiveView {
        InductiveView::new(p3_graph(), &[0, 1, 2]).unwrap()
    }

    struct Table(Vec<(Vec<NodeId>, f64)>);

    impl ViewUtility for Table {
        fn score(&self, view: &InductiveView) -> Result<f64> {
            Ok(self
                .0
                .iter()
                .find(|(k, _)| k == view.kept_ids())
                .map_or(0.0, |(_, u)| *u))
        }
    }

    #[test]
    fn loo_formula() {
        let u = Table(vec![(vec![0, 1, 2], 0.8), (vec![0, 2], 0.7)]);
        let v = run_loo_nodes(&p3_view(), &u).unwrap();
        assert!((v[1].1 - 0.1).abs() < 1e-15);
        assert!((v[0].1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn loo_isolated_unlabeled_node_is_zero() {
        let (g, _) = Graph::from_edges(
            3,
            [(0, 1)],
            vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5],
            2,
            vec![Some(0), Some(1), None],
            2,
        )
        .unwrap();
        let g = Arc::new(g);
        let view = InductiveView::new(g.clone(), &[0, 1, 2]).unwrap();
        let eval = Arc::new(crate::utility::precompute_validation_representations(
            &view, 1,
        ));
        let scorer = ViewScorer::new(&g, &[0, 1], 1, Default::default(), eval).unwrap();
        let v = run_loo_nodes(&view, &scorer).unwrap();
        assert_eq!(v[2].1, 0.0);
    }

    #[test]
    fn degree_and_betweenness_on_p3() {
        let view = p3_view();
        assert_eq!(degree_values(&view), vec![(0, 1.0), (1, 2.0), (2, 1.0)]);
        let b = edge_betweenness(&view);
        assert_eq!(b.len(), 2);
        assert!((b[0].1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((b[1].1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn betweenness_splits_ties() {
        let (g, _) = Graph::from_edges(
            4,
            [(0, 1), (1, 2), (2, 3), (3, 0)],
            vec![0.0; 4],
            1,
            vec![None; 4],
            1,
        )
        .unwrap();
        let view = InductiveView::new(Arc::new(g), &[0, 1, 2, 3]).unwrap();
        // each edge: its own pair, plus half of two opposite-corner pairs
        for (_, b) in edge_betweenness(&view) {
            assert!((b - 2.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn random_values_are_seeded() {
        assert_eq!(random_values(5, 9), random_values(5, 9));
        assert_ne!(random_values(5, 9), random_values(5, 10));
        assert!(random_values(100, 1).iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn tmc_players_within_hops() {
        let view = p3_view();
        assert_eq!(tmc_players(&view, &[0], 1).unwrap(), vec![0, 1]);
        assert_eq!(tmc_players(&view, &[0], 2).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn tmc_additive_matches_shapley() {
        let w = [0.1, 0.3, 0.05, 0.2, 0.15];
        let u = FnSetUtility(move |s: &[NodeId]| s.iter().map(|&v| w[v as usize]).sum());
        let cfg = TmcConfig {
            permutations: 2000,
            tolerance: 0.0,
            seed: 4,
        };
        let players: Vec<NodeId> = (0..5).collect();
        let tmc = run_data_shapley_tmc(&players, &u, &cfg).unwrap();
        let game = FnGame::new(5, move |s: &[bool]| {
            s.iter().zip(&w).filter(|(&x, _)| x).map(|(_, w)| w).sum()
        });
        let exact = exact_shapley(&game, 5).unwrap();
        for (a, b) in tmc.iter().zip(&exact) {
            assert!((a - b).abs() < 0.02);
        }
    }

    #[test]
    fn tmc_infinite_tolerance_keeps_only_first() {
        let u = FnSetUtility(|s: &[NodeId]| s.len() as f64);
        let cfg = TmcConfig {
            permutations: 50,
            tolerance: f64::INFINITY,
            seed: 1,
        };
        let v = run_data_shapley_tmc(&[0, 1, 2], &u, &cfg).unwrap();
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tmc_zero_tolerance_matches_untruncated() {
        let u = FnSetUtility(|s: &[NodeId]| (s.len() as f64).sqrt());
        let cfg = TmcConfig {
            permutations: 30,
            tolerance: 0.0,
            seed: 2,
        };
        let v = run_data_shapley_tmc(&[0, 1, 2, 3], &u, &cfg).unwrap();
        // untruncated permutations telescope to U(all) - U(none)
        assert!((v.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }
}
