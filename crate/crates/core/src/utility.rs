//! The coalition utility: mean feature propagation over the partial
//! computation-tree forest, a softmax classifier trained on the labeled
//! roots, and accuracy on a fixed validation set.
//!
//! [`PropagationState`] keeps per-player child sums so that inserting a
//! player only touches its ancestors (`O(K * d)`), which is what makes
//! streaming evaluation along a traversal affordable.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{Graph, InductiveView, NodeId};
use crate::tree::{ContributionTree, PlayerIdx};

/// Classifier training hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Recorded for provenance; zero-initialized full-batch training does not
    /// consume randomness.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 200,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay {} must be nonnegative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Row-compressed feature matrix; exact zeros are dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseRows {
    pub fn new(dim: usize) -> Self {
        SparseRows {
            dim,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn from_dense(dense: &[f64], dim: usize) -> Self {
        let mut m = SparseRows::new(dim);
        if dim > 0 {
            for row in dense.chunks(dim) {
                m.push(row);
            }
        }
        m
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                self.cols.push(j as u32);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.cols.len());
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.vals[r])
            .map(|(&c, &v)| (c as usize, v))
    }
}

/// Weights (`C x d`, row-major) and bias of a linear softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub num_classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassifierParams {
    fn zeros(num_classes: usize, dim: usize) -> Self {
        ClassifierParams {
            num_classes,
            dim,
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
        }
    }

    fn logits_into(&self, rows: &SparseRows, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (j, v) in rows.row(i) {
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.weights[c * self.dim + j] * v;
            }
        }
    }

    /// Argmax class; ties go to the lowest class index.
    pub fn predict(&self, rows: &SparseRows, i: usize) -> u32 {
        let mut logits = vec![0.0; self.num_classes];
        self.logits_into(rows, i, &mut logits);
        argmax(&logits)
    }

    /// Fraction of rows predicted correctly; 0 for an empty set.
    pub fn accuracy(&self, rows: &SparseRows, labels: &[u32]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let mut logits = vec![0.0; self.num_classes];
        let correct = labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| {
                self.logits_into(rows, i, &mut logits);
                argmax(&logits) == y
            })
            .count();
        correct as f64 / labels.len() as f64
    }
}

fn argmax(v: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best as u32
}

/// Multinomial logistic regression by full-batch gradient descent from zero
/// parameters, minimizing mean cross-entropy plus `weight_decay / 2 * |W|^2`.
pub fn train_classifier(
    rows: &SparseRows,
    labels: &[u32],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<ClassifierParams> {
    cfg.validate()?;
    if labels.is_empty() {
        return Err(Error::EmptyCoalition);
    }
    if labels.len() != rows.len() {
        return Err(Error::Validation(format!(
            "{} labels for {} rows",
            labels.len(),
            rows.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y as usize >= num_classes) {
        return Err(Error::Validation(format!(
            "label {y} outside {num_classes} classes"
        )));
    }
    let d = rows.dim();
    let n = labels.len() as f64;
    let mut params = ClassifierParams::zeros(num_classes, d);
    let mut grad_w = vec![0.0; num_classes * d];
    let mut grad_b = vec![0.0; num_classes];
    let mut probs = vec![0.0; num_classes];
    for _ in 0..cfg.epochs {
        for (g, w) in grad_w.iter_mut().zip(&params.weights) {
            *g = cfg.weight_decay * w;
        }
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        for (i, &y) in labels.iter().enumerate() {
            params.logits_into(rows, i, &mut probs);
            softmax_in_place(&mut probs);
            probs[y as usize] -= 1.0;
            for (c, &p) in probs.iter().enumerate() {
                let g = p / n;
                grad_b[c] += g;
                for (j, v) in rows.row(i) {
                    grad_w[c * d + j] += g * v;
                }
            }
        }
        for (w, g) in params.weights.iter_mut().zip(&grad_w) {
            *w -= cfg.learning_rate * g;
        }
        for (b, g) in params.bias.iter_mut().zip(&grad_b) {
            *b -= cfg.learning_rate * g;
        }
    }
    Ok(params)
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `rounds` steps of neighbor-mean propagation over a view. Nodes without
/// neighbors keep their previous representation, which for an isolated node
/// is its raw feature row. Output is indexed by the view's compact index.
pub fn propagate_view(view: &InductiveView, rounds: usize) -> Vec<f64> {
    let graph = view.parent();
    let d = graph.num_features();
    let mut h: Vec<f64> = view
        .kept_ids()
        .iter()
        .flat_map(|&v| graph.features(v).iter().copied())
        .collect();
    let mut next = vec![0.0; h.len()];
    for _ in 0..rounds {
        for l in 0..view.len() {
            let out = &mut next[l * d..(l + 1) * d];
            let nbrs = view.neighbors_local(l);
            if nbrs.is_empty() {
                out.copy_from_slice(&h[l * d..(l + 1) * d]);
                continue;
            }
            out.iter_mut().for_each(|x| *x = 0.0);
            for &v in nbrs {
                let lv = view.local_index(v).expect("neighbors are kept");
                for (o, x) in out.iter_mut().zip(&h[lv * d..(lv + 1) * d]) {
                    *o += x;
                }
            }
            let k = nbrs.len() as f64;
            out.iter_mut().for_each(|x| *x /= k);
        }
        std::mem::swap(&mut h, &mut next);
    }
    h
}

/// Propagated representations and labels of the labeled nodes of a view.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub nodes: Vec<NodeId>,
    pub rows: SparseRows,
    pub labels: Vec<u32>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Propagates the validation (or test) view once; unlabeled nodes are left
/// out of the scoring set.
pub fn precompute_validation_representations(view: &InductiveView, rounds: usize) -> EvalSet {
    let graph = view.parent();
    let d = graph.num_features();
    let h = propagate_view(view, rounds);
    let mut rows = SparseRows::new(d);
    let mut labels = Vec::new();
    let mut nodes = Vec::new();
    for (l, &v) in view.kept_ids().iter().enumerate() {
        if let Some(y) = graph.label(v) {
            rows.push(&h[l * d..(l + 1) * d]);
            labels.push(y);
            nodes.push(v);
        }
    }
    EvalSet {
        nodes,
        rows,
        labels,
    }
}

/// Incremental propagation state for one coalition of players.
#[derive(Debug, Clone)]
pub struct PropagationState {
    tree: Arc<ContributionTree>,
    graph: Arc<Graph>,
    included: Vec<bool>,
    child_count: Vec<u32>,
    child_sum: Vec<Option<Vec<f64>>>,
    active_roots: Vec<PlayerIdx>,
    dirty: Vec<PlayerIdx>,
    scratch: Vec<f64>,
}

impl PropagationState {
    pub fn new(tree: Arc<ContributionTree>, graph: Arc<Graph>) -> Self {
        let n = tree.len();
        PropagationState {
            included: vec![false; n],
            child_count: vec![0; n],
            child_sum: vec![None; n],
            active_roots: Vec::new(),
            dirty: Vec::new(),
            scratch: Vec::new(),
            tree,
            graph,
        }
    }

    pub fn tree(&self) -> &ContributionTree {
        &self.tree
    }

    /// Empties the coalition, keeping allocations.
    pub fn clear(&mut self) {
        self.included.iter_mut().for_each(|x| *x = false);
        self.child_count.iter_mut().for_each(|x| *x = 0);
        for s in self.child_sum.iter_mut().flatten() {
            s.iter_mut().for_each(|x| *x = 0.0);
        }
        self.active_roots.clear();
        self.dirty.clear();
    }

    pub fn is_included(&self, p: PlayerIdx) -> bool {
        self.included[p]
    }

    /// Number of included children of `p`.
    pub fn child_count(&self, p: PlayerIdx) -> usize {
        self.child_count[p] as usize
    }

    /// Included labeled roots, in insertion order.
    pub fn active_roots(&self) -> &[PlayerIdx] {
        &self.active_roots
    }

    /// Roots whose representation changed since the last [`Self::take_dirty`].
    pub fn take_dirty(&mut self) -> Vec<PlayerIdx> {
        std::mem::take(&mut self.dirty)
    }

    /// Current representation of an included player: the mean over its
    /// included children, or its raw feature row when it has none.
    pub fn representation(&self, p: PlayerIdx) -> Vec<f64> {
        let mut out = vec![0.0; self.graph.num_features()];
        self.write_representation(p, &mut out);
        out
    }

    fn write_representation(&self, p: PlayerIdx, out: &mut [f64]) {
        match (&self.child_sum[p], self.child_count[p]) {
            (Some(sum), k) if k > 0 => {
                let k = k as f64;
                for (o, s) in out.iter_mut().zip(sum) {
                    *o = s / k;
                }
            }
            _ => out.copy_from_slice(self.graph.features(self.tree.player_node(p))),
        }
    }

    /// Adds a player whose parent (if any) is already included and updates
    /// every ancestor's aggregate.
    pub fn insert_player(&mut self, p: PlayerIdx) -> Result<()> {
        if p >= self.tree.len() {
            return Err(Error::Lookup(format!("player {p} is not in the tree")));
        }
        if self.included[p] {
            return Err(Error::State(format!("player {p} is already included")));
        }
        if let Some(q) = self.tree.parent(p) {
            if !self.included[q] {
                return Err(Error::Precedence { player: p });
            }
        }
        self.included[p] = true;
        let d = self.graph.num_features();
        let mut delta = self.graph.features(self.tree.player_node(p)).to_vec();
        let mut old = std::mem::take(&mut self.scratch);
        old.resize(d, 0.0);
        let mut new_child = true;
        let mut cur = p;
        while let Some(a) = self.tree.parent(cur) {
            self.write_representation(a, &mut old);
            let sum = self.child_sum[a].get_or_insert_with(|| vec![0.0; d]);
            for (s, x) in sum.iter_mut().zip(&delta) {
                *s += x;
            }
            if new_child {
                self.child_count[a] += 1;
                new_child = false;
            }
            let k = self.child_count[a] as f64;
            for ((dl, s), o) in delta.iter_mut().zip(sum.iter()).zip(&old) {
                *dl = s / k - o;
            }
            cur = a;
        }
        self.scratch = old;
        if self.tree.parent(p).is_none() {
            self.active_roots.push(p);
        }
        if self.dirty.last() != Some(&cur) {
            self.dirty.push(cur);
        }
        Ok(())
    }

    /// Representations of the active roots (row-major, insertion order).
    pub fn root_representations(&self) -> Vec<f64> {
        let d = self.graph.num_features();
        let mut out = vec![0.0; self.active_roots.len() * d];
        for (i, &r) in self.active_roots.iter().enumerate() {
            self.write_representation(r, &mut out[i * d..(i + 1) * d]);
        }
        out
    }
}

/// Batch propagation over an ancestor-closed player set. Returns the
/// representations of the included roots in ascending player order.
pub fn propagate_full(
    tree: &ContributionTree,
    graph: &Graph,
    included: &[PlayerIdx],
) -> Result<Vec<(PlayerIdx, Vec<f64>)>> {
    let n = tree.len();
    let mut member = vec![false; n];
    for &p in included {
        if p >= n {
            return Err(Error::Lookup(format!("player {p} is not in the tree")));
        }
        member[p] = true;
    }
    if let Some(p) = included
        .iter()
        .copied()
        .find(|&p| tree.parent(p).is_some_and(|q| !member[q]))
    {
        return Err(Error::Validation(format!(
            "player {p} is included without its parent"
        )));
    }
    let d = graph.num_features();
    let mut h: Vec<Option<Vec<f64>>> = vec![None; n];
    for p in (0..n).rev().filter(|&p| member[p]) {
        let kids: Vec<&Vec<f64>> = tree.children(p).filter_map(|c| h[c].as_ref()).collect();
        let rep = if kids.is_empty() {
            graph.features(tree.player_node(p)).to_vec()
        } else {
            let mut acc = vec![0.0; d];
            for k in &kids {
                for (a, x) in acc.iter_mut().zip(k.iter()) {
                    *a += x;
                }
            }
            let m = kids.len() as f64;
            acc.iter_mut().for_each(|a| *a /= m);
            acc
        };
        h[p] = Some(rep);
    }
    Ok(tree
        .roots()
        .filter_map(|r| h[r].take().map(|v| (r, v)))
        .collect())
}

/// The valuation utility over partial computation-tree forests.
#[derive(Debug, Clone)]
pub struct SgcUtility {
    tree: Arc<ContributionTree>,
    graph: Arc<Graph>,
    validation: Arc<EvalSet>,
    cfg: TrainConfig,
}

impl SgcUtility {
    pub fn new(
        tree: Arc<ContributionTree>,
        graph: Arc<Graph>,
        validation: Arc<EvalSet>,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if let Some(r) = tree
            .roots()
            .find(|&r| graph.label(tree.player_node(r)).is_none())
        {
            return Err(Error::Validation(format!(
                "root player {r} (node {}) has no label",
                tree.player_node(r)
            )));
        }
        Ok(SgcUtility {
            tree,
            graph,
            validation,
            cfg,
        })
    }

    pub fn tree(&self) -> &Arc<ContributionTree> {
        &self.tree
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn validation(&self) -> &EvalSet {
        &self.validation
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn new_state(&self) -> PropagationState {
        PropagationState::new(self.tree.clone(), self.graph.clone())
    }

    /// Trains on the active roots and scores on the validation set; 0 when no
    /// root is active.
    pub fn utility(&self, state: &PropagationState) -> Result<f64> {
        let roots = state.active_roots();
        if roots.is_empty() {
            return Ok(0.0);
        }
        let d = self.graph.num_features();
        let reps = state.root_representations();
        let rows = SparseRows::from_dense(&reps, d);
        let labels: Vec<u32> = roots
            .iter()
            .map(|&r| {
                self.graph
                    .label(self.tree.player_node(r))
                    .expect("roots are labeled")
            })
            .collect();
        let params = train_classifier(&rows, &labels, self.graph.num_classes(), &self.cfg)?;
        Ok(params.accuracy(&self.validation.rows, &self.validation.labels))
    }
}

/// Scores whole training views: full-view propagation, training on the
/// labeled nodes the view keeps, accuracy on a fixed evaluation set.
#[derive(Debug, Clone)]
pub struct ViewScorer {
    labeled: Vec<bool>,
    rounds: usize,
    cfg: TrainConfig,
    eval: Arc<EvalSet>,
}

impl ViewScorer {
    pub fn new(
        graph: &Graph,
        labeled: &[NodeId],
        rounds: usize,
        cfg: TrainConfig,
        eval: Arc<EvalSet>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut mask = vec![false; graph.num_nodes()];
        for &v in labeled {
            if graph.label(v).is_none() {
                return Err(Error::Validation(format!("node {v} has no label")));
            }
            mask[v as usize] = true;
        }
        Ok(ViewScorer {
            labeled: mask,
            rounds,
            cfg,
            eval,
        })
    }

    pub fn eval_set(&self) -> &EvalSet {
        &self.eval
    }

    pub fn is_labeled(&self, v: NodeId) -> bool {
        self.labeled.get(v as usize).copied().unwrap_or(false)
    }

    /// Accuracy of a model trained on `view`; 0 if it keeps no labeled node.
    pub fn score(&self, view: &InductiveView) -> Result<f64> {
        let graph = view.parent();
        let d = graph.num_features();
        if !view.kept_ids().iter().any(|&v| self.is_labeled(v)) {
            return Ok(0.0);
        }
        let h = propagate_view(view, self.rounds);
        let mut rows = SparseRows::new(d);
        let mut labels = Vec::new();
        for (l, &v) in view.kept_ids().iter().enumerate() {
            if self.is_labeled(v) {
                rows.push(&h[l * d..(l + 1) * d]);
                labels.push(graph.label(v).expect("labeled mask implies a label"));
            }
        }
        let params = train_classifier(&rows, &labels, graph.num_classes(), &self.cfg)?;
        Ok(params.accuracy(&self.eval.rows, &self.eval.labels))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::fixtures::{p3_graph, p3_tree, random_forest};

    fn p3_state() -> PropagationState {
        PropagationState::new(Arc::new(p3_tree()), p3_graph())
    }

    #[test]
    fn insert_sequence_on_p3() {
        let mut s = p3_state();
        s.insert_player(0).unwrap();
        assert_eq!(s.root_representations(), vec![1.0]);
        s.insert_player(1).unwrap();
        assert_eq!(s.representation(1), vec![2.0]);
        assert_eq!(s.root_representations(), vec![2.0]);
        s.insert_player(2).unwrap();
        s.insert_player(3).unwrap();
        assert_eq!(s.representation(1), vec![2.0]);
        assert_eq!(s.root_representations(), vec![2.0]);
        assert_eq!(s.child_count(1), 2);
    }

    #[test]
    fn insert_errors() {
        let mut s = p3_state();
        assert!(matches!(
            s.insert_player(1),
            Err(Error::Precedence { player: 1 })
        ));
        s.insert_player(0).unwrap();
        assert!(matches!(s.insert_player(0), Err(Error::State(_))));
        assert!(matches!(s.insert_player(9), Err(Error::Lookup(_))));
    }

    #[test]
    fn full_propagation_on_p3() {
        let t = p3_tree();
        let g = p3_graph();
        assert_eq!(
            propagate_full(&t, &g, &[0, 1, 2, 3]).unwrap(),
            vec![(0, vec![2.0])]
        );
        assert_eq!(propagate_full(&t, &g, &[0]).unwrap(), vec![(0, vec![1.0])]);
        assert_eq!(
            propagate_full(&t, &g, &[0, 1]).unwrap(),
            vec![(0, vec![2.0])]
        );
        assert!(propagate_full(&t, &g, &[0, 2]).is_err());
    }

    #[test]
    fn clear_resets_state() {
        let mut s = p3_state();
        for p in 0..4 {
            s.insert_player(p).unwrap();
        }
        s.clear();
        assert!(s.active_roots().is_empty());
        s.insert_player(0).unwrap();
        assert_eq!(s.root_representations(), vec![1.0]);
    }

    #[test]
    fn single_pair_predicts_its_class_everywhere() {
        let rows = SparseRows::from_dense(&[0.3, 0.7], 2);
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let params = train_classifier(&rows, &[2], 4, &cfg).unwrap();
        let probe = SparseRows::from_dense(&[0.3, 0.7, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0], 2);
        for i in 0..probe.len() {
            assert_eq!(params.predict(&probe, i), 2);
        }
    }

    #[test]
    fn symmetric_pairs_tie_to_lowest_class() {
        let rows = SparseRows::from_dense(&[0.5, 0.5, 0.5, 0.5], 2);
        let params = train_classifier(&rows, &[0, 1], 2, &TrainConfig::default()).unwrap();
        let val = SparseRows::from_dense(&[0.5, 0.5, 0.5, 0.5], 2);
        assert_eq!(params.predict(&val, 0), 0);
        assert_eq!(params.accuracy(&val, &[0, 1]), 0.5);
    }

    #[test]
    fn zero_epochs_rejected() {
        let rows = SparseRows::from_dense(&[1.0], 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_classifier(&rows, &[0], 1, &cfg),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train_classifier(&SparseRows::new(1), &[], 1, &TrainConfig::default()),
            Err(Error::EmptyCoalition)
        ));
    }

    #[test]
    fn training_is_bit_deterministic() {
        let rows = SparseRows::from_dense(&[0.1, 0.9, 0.8, 0.2, 0.4, 0.6], 2);
        let a = train_classifier(&rows, &[0, 1, 0], 2, &TrainConfig::default()).unwrap();
        let b = train_classifier(&rows, &[0, 1, 0], 2, &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    /// Independent dense implementation of the same gradient descent.
    fn reference_train(x: &[Vec<f64>], y: &[usize], c: usize, cfg: &TrainConfig) -> Vec<Vec<f64>> {
        let d = x[0].len();
        let n = x.len() as f64;
        let mut w = vec![vec![0.0; d + 1]; c]; // last column is the bias
        for _ in 0..cfg.epochs {
            let mut g = vec![vec![0.0; d + 1]; c];
            for (xi, &yi) in x.iter().zip(y) {
                let z: Vec<f64> = (0..c)
                    .map(|k| w[k][d] + (0..d).map(|j| w[k][j] * xi[j]).sum::<f64>())
                    .collect();
                let m = z.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                for k in 0..c {
                    let r = e[k] / s - if k == yi { 1.0 } else { 0.0 };
                    for j in 0..d {
                        g[k][j] += r * xi[j] / n;
                    }
                    g[k][d] += r / n;
                }
            }
            for k in 0..c {
                for j in 0..=d {
                    let decay = if j < d {
                        cfg.weight_decay * w[k][j]
                    } else {
                        0.0
                    };
                    w[k][j] -= cfg.learning_rate * (g[k][j] + decay);
                }
            }
        }
        w
    }

    #[test]
    fn matches_dense_reference() {
        let x = vec![
            vec![0.2, 0.0, 0.8],
            vec![0.0, 1.0, 0.0],
            vec![0.5, 0.5, 0.0],
            vec![0.1, 0.1, 0.8],
        ];
        let y = [0usize, 1, 1, 2];
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 50,
            weight_decay: 0.01,
            seed: 0,
        };
        let dense: Vec<f64> = x.iter().flatten().copied().collect();
        let p = train_classifier(
            &SparseRows::from_dense(&dense, 3),
            &y.map(|v| v as u32),
            3,
            &cfg,
        )
        .unwrap();
        let w = reference_train(&x, &y, 3, &cfg);
        for (k, row) in w.iter().enumerate() {
            for (j, &wj) in row[..3].iter().enumerate() {
                assert!((p.weights[k * 3 + j] - wj).abs() < 1e-12);
            }
            assert!((p.bias[k] - row[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_propagation_cases() {
        let (g, _) = Graph::from_edges(
            4,
            [(0, 1)],
            vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.2, 0.8],
            2,
            vec![Some(0), Some(1), Some(0), None],
            2,
        )
        .unwrap();
        let g = Arc::new(g);
        let view = InductiveView::new(g, &[0, 1, 2, 3]).unwrap();
        let h = propagate_view(&view, 1);
        assert_eq!(&h[0..2], &[0.0, 1.0]);
        assert_eq!(&h[2..4], &[1.0, 0.0]);
        assert_eq!(&h[4..6], &[0.5, 0.5]);
        let eval = precompute_validation_representations(&view, 1);
        assert_eq!(eval.nodes, vec![0, 1, 2]);
    }

    #[test]
    fn triangle_with_equal_features_is_fixed() {
        let (g, _) = Graph::from_edges(
            3,
            [(0, 1), (1, 2), (0, 2)],
            vec![0.25, 0.75, 0.25, 0.75, 0.25, 0.75],
            2,
            vec![None; 3],
            1,
        )
        .unwrap();
        let view = InductiveView::new(Arc::new(g), &[0, 1, 2]).unwrap();
        let h = propagate_view(&view, 2);
        assert!(h.chunks(2).all(|r| r == [0.25, 0.75]));
    }

    #[test]
    fn sgc_utility_single_root() {
        let tree = Arc::new(p3_tree());
        let g = p3_graph();
        let eval = Arc::new(EvalSet {
            nodes: vec![7, 8],
            rows: SparseRows::from_dense(&[5.0, -3.0], 1),
            labels: vec![0, 0],
        });
        let u = SgcUtility::new(tree, g, eval, TrainConfig::default()).unwrap();
        let mut s = u.new_state();
        assert_eq!(u.utility(&s).unwrap(), 0.0);
        s.insert_player(0).unwrap();
        assert_eq!(u.utility(&s).unwrap(), 1.0);
    }

    /// Random tree plus random features over `nodes` graph nodes.
    fn random_instance(seed: u64) -> (ContributionTree, Graph) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 + (seed % 40) as usize;
        let t = random_forest(n, seed);
        let d = 3;
        let num_nodes = n;
        let feats: Vec<f64> = (0..num_nodes * d)
            .map(|_| rand::Rng::random::<f64>(&mut rng))
            .collect();
        let (g, _) =
            Graph::from_edges(num_nodes, [], feats, d, vec![Some(0); num_nodes], 1).unwrap();
        (t, g)
    }

    proptest! {
        #[test]
        fn incremental_matches_batch(seed in any::<u64>()) {
            let (t, g) = random_instance(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            // random ancestor-closed set, inserted in a random valid order
            let mut keep: Vec<bool> = (0..t.len()).map(|_| rand::Rng::random_bool(&mut rng, 0.7)).collect();
            for p in 0..t.len() {
                if let Some(q) = t.parent(p) {
                    keep[p] &= keep[q];
                }
            }
            let set: Vec<PlayerIdx> = (0..t.len()).filter(|&p| keep[p]).collect();
            let mut order = Vec::new();
            let mut avail: Vec<PlayerIdx> = t.roots().filter(|&r| keep[r]).collect();
            while !avail.is_empty() {
                avail.shuffle(&mut rng);
                let p = avail.pop().unwrap();
                order.push(p);
                avail.extend(t.children(p).filter(|&c| keep[c]));
            }
            let t = Arc::new(t);
            let g = Arc::new(g);
            let mut s = PropagationState::new(t.clone(), g.clone());
            for &p in &order {
                s.insert_player(p).unwrap();
            }
            let batch = propagate_full(&t, &g, &set).unwrap();
            for (r, rep) in batch {
                let inc = s.representation(r);
                for (a, b) in inc.iter().zip(&rep) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
            for p in 0..t.len() {
                let expect = if keep[p] { t.children(p).filter(|&c| keep[c]).count() } else { 0 };
                prop_assert_eq!(s.child_count(p), expect);
            }
        }
    }
}
