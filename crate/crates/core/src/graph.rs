//! Attributed graph storage, dataset I/O and inductive splitting.
//!
//! Adjacency is undirected and kept in CSR layout with ascending neighbor
//! ids. Node ids are dense and 0-based; sparse source ids go through
//! [`ingest_linqs`], which persists the mapping it applies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type NodeId = u32;

const ABSENT: u32 = u32::MAX;

/// Immutable attributed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
    features: Vec<f64>,
    num_features: usize,
    labels: Vec<Option<u32>>,
    num_classes: usize,
}

/// Counters for input irregularities that were repaired during construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

impl Graph {
    /// Builds a graph from an edge list. Reverse and repeated edges are merged
    /// and self-loops dropped; both are counted in the returned stats.
    pub fn from_edges(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
        features: Vec<f64>,
        num_features: usize,
        labels: Vec<Option<u32>>,
        num_classes: usize,
    ) -> Result<(Self, IngestStats)> {
        if features.len() != num_nodes * num_features {
            return Err(Error::Validation(format!(
                "feature matrix has {} entries, expected {num_nodes} x {num_features}",
                features.len()
            )));
        }
        if labels.len() != num_nodes {
            return Err(Error::Validation(format!(
                "{} labels for {num_nodes} nodes",
                labels.len()
            )));
        }
        if let Some((node, class)) = labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&c| c as usize >= num_classes).map(|c| (i, c)))
        {
            return Err(Error::Validation(format!(
                "node {node} has class {class}, but there are only {num_classes} classes"
            )));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite feature value {v}")));
        }

        let mut stats = IngestStats::default();
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); num_nodes];
        let mut seen = BTreeSet::new();
        for (a, b) in edges {
            if a as usize >= num_nodes || b as usize >= num_nodes {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) references a node outside 0..{num_nodes}"
                )));
            }
            if a == b {
                stats.self_loops += 1;
                continue;
            }
            if !seen.insert((a.min(b), a.max(b))) {
                stats.duplicate_edges += 1;
                continue;
            }
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::with_capacity(seen.len() * 2);
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            neighbors.extend_from_slice(&list);
            offsets.push(neighbors.len());
        }
        Ok((
            Graph {
                offsets,
                neighbors,
                features,
                num_features,
                labels,
                num_classes,
            },
            stats,
        ))
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        let i = node as usize;
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.neighbors(node).len()
    }

    pub fn features(&self, node: NodeId) -> &[f64] {
        let start = node as usize * self.num_features;
        &self.features[start..start + self.num_features]
    }

    pub fn label(&self, node: NodeId) -> Option<u32> {
        self.labels[node as usize]
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.num_nodes() as NodeId).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }

    /// L1-normalizes every nonzero feature row in place.
    pub fn normalize_rows(&mut self) {
        let d = self.num_features;
        if d == 0 {
            return;
        }
        for row in self.features.chunks_mut(d) {
            let sum: f64 = row.iter().map(|v| v.abs()).sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }

    /// SHA-256 over adjacency, feature bits and labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_nodes() as u64).to_le_bytes());
        h.update((self.num_features as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        for (u, v) in self.edges() {
            h.update(u.to_le_bytes());
            h.update(v.to_le_bytes());
        }
        for v in &self.features {
            h.update(v.to_bits().to_le_bytes());
        }
        for l in &self.labels {
            h.update(l.map_or(ABSENT, |c| c).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Disjoint train/validation/test node sets plus the labeled training nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<NodeId>,
    pub val: Vec<NodeId>,
    pub test: Vec<NodeId>,
    pub labeled_train: Vec<NodeId>,
}

impl SplitSpec {
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        let n = graph.num_nodes();
        let mut owner: HashMap<NodeId, &str> = HashMap::new();
        for (name, ids) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &id in ids {
                if id as usize >= n {
                    return Err(Error::Validation(format!(
                        "{name} id {id} is outside 0..{n}"
                    )));
                }
                if let Some(prev) = owner.insert(id, name) {
                    return Err(Error::Validation(format!(
                        "node {id} appears in both {prev} and {name}"
                    )));
                }
            }
        }
        for &id in &self.labeled_train {
            if owner.get(&id) != Some(&"train") {
                return Err(Error::Validation(format!(
                    "labeled training node {id} is not in the training set"
                )));
            }
            if graph.label(id).is_none() {
                return Err(Error::Validation(format!(
                    "labeled training node {id} has no label"
                )));
            }
        }
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for ids in [&self.train, &self.val, &self.test, &self.labeled_train] {
            h.update((ids.len() as u64).to_le_bytes());
            for id in ids {
                h.update(id.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// A node subset of a parent graph with its own restricted adjacency.
#[derive(Debug, Clone)]
pub struct InductiveView {
    parent: Arc<Graph>,
    kept: Vec<NodeId>,
    local: Vec<u32>,
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
}

impl InductiveView {
    /// Keeps every parent edge whose endpoints are both in `kept`.
    pub fn new(parent: Arc<Graph>, kept: &[NodeId]) -> Result<Self> {
        let (kept, local) = index_kept(&parent, kept)?;
        let mut offsets = Vec::with_capacity(kept.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for &u in &kept {
            neighbors.extend(
                parent
                    .neighbors(u)
                    .iter()
                    .copied()
                    .filter(|&v| local[v as usize] != ABSENT),
            );
            offsets.push(neighbors.len());
        }
        Ok(InductiveView {
            parent,
            kept,
            local,
            offsets,
            neighbors,
        })
    }

    /// A view over `kept` carrying only the listed edges, each of which must
    /// exist in the parent and join two kept nodes.
    pub fn with_edges(
        parent: Arc<Graph>,
        kept: &[NodeId],
        edges: &[(NodeId, NodeId)],
    ) -> Result<Self> {
        let (kept, local) = index_kept(&parent, kept)?;
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); kept.len()];
        let mut seen = BTreeSet::new();
        for &(a, b) in edges {
            let (la, lb) = (local.get(a as usize), local.get(b as usize));
            let (Some(&la), Some(&lb)) = (la, lb) else {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) is out of range"
                )));
            };
            if la == ABSENT || lb == ABSENT {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) has an endpoint outside the view"
                )));
            }
            if !parent.has_edge(a, b) {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) does not exist in the parent graph"
                )));
            }
            if seen.insert((a.min(b), a.max(b))) {
                adj[la as usize].push(b);
                adj[lb as usize].push(a);
            }
        }
        let mut offsets = Vec::with_capacity(kept.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            neighbors.extend_from_slice(&list);
            offsets.push(neighbors.len());
        }
        Ok(InductiveView {
            parent,
            kept,
            local,
            offsets,
            neighbors,
        })
    }

    pub fn parent(&self) -> &Arc<Graph> {
        &self.parent
    }

    /// Kept node ids in ascending order.
    pub fn kept_ids(&self) -> &[NodeId] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.local_index(node).is_some()
    }

    /// Compact index of an original node id.
    pub fn local_index(&self, node: NodeId) -> Option<usize> {
        match self.local.get(node as usize) {
            Some(&l) if l != ABSENT => Some(l as usize),
            _ => None,
        }
    }

    /// Restricted neighbors (original ids, ascending) by compact index.
    pub fn neighbors_local(&self, local: usize) -> &[NodeId] {
        &self.neighbors[self.offsets[local]..self.offsets[local + 1]]
    }

    pub fn neighbors(&self, node: NodeId) -> Result<&[NodeId]> {
        let l = self
            .local_index(node)
            .ok_or_else(|| Error::Lookup(format!("node {node} is not in this view")))?;
        Ok(self.neighbors_local(l))
    }

    pub fn degree(&self, node: NodeId) -> Result<usize> {
        self.neighbors(node).map(<[NodeId]>::len)
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Restricted edges as `(u, v)` with `u < v`, ascending.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (l, &u) in self.kept.iter().enumerate() {
            out.extend(
                self.neighbors_local(l)
                    .iter()
                    .filter(|&&v| v > u)
                    .map(|&v| (u, v)),
            );
        }
        out
    }

    /// The same view with `removed` nodes and their incident edges dropped.
    pub fn without_nodes(&self, removed: &[NodeId]) -> Result<Self> {
        let removed: BTreeSet<NodeId> = removed.iter().copied().collect();
        let kept: Vec<NodeId> = self
            .kept
            .iter()
            .copied()
            .filter(|id| !removed.contains(id))
            .collect();
        let edges: Vec<_> = self
            .edges()
            .into_iter()
            .filter(|(u, v)| !removed.contains(u) && !removed.contains(v))
            .collect();
        InductiveView::with_edges(self.parent.clone(), &kept, &edges)
    }

    /// The same view minus one undirected edge.
    pub fn without_edge(&self, a: NodeId, b: NodeId) -> Result<Self> {
        let key = (a.min(b), a.max(b));
        let edges: Vec<_> = self.edges().into_iter().filter(|&e| e != key).collect();
        InductiveView::with_edges(self.parent.clone(), &self.kept, &edges)
    }
}

fn index_kept(parent: &Graph, kept: &[NodeId]) -> Result<(Vec<NodeId>, Vec<u32>)> {
    let n = parent.num_nodes();
    let mut kept = kept.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if let Some(&bad) = kept.iter().find(|&&id| id as usize >= n) {
        return Err(Error::Validation(format!("node {bad} is outside 0..{n}")));
    }
    let mut local = vec![ABSENT; n];
    for (i, &id) in kept.iter().enumerate() {
        local[id as usize] = i as u32;
    }
    Ok((kept, local))
}

/// Splits a graph into train/validation/test views; every cross-split edge
/// is dropped.
pub fn inductive_split(
    graph: Arc<Graph>,
    split: &SplitSpec,
) -> Result<(InductiveView, InductiveView, InductiveView)> {
    split.validate(&graph)?;
    Ok((
        InductiveView::new(graph.clone(), &split.train)?,
        InductiveView::new(graph.clone(), &split.val)?,
        InductiveView::new(graph, &split.test)?,
    ))
}

/// Locations of the four dataset files.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub split: PathBuf,
    /// L1 row-normalize features after loading.
    pub normalize: bool,
    /// Fixes the class count; inferred as `max label + 1` when absent.
    pub num_classes: Option<usize>,
}

impl DatasetPaths {
    /// `edges.tsv`, `features.csv`, `labels.csv` and `split.json` inside `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetPaths {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.csv"),
            split: dir.join("split.json"),
            normalize: true,
            num_classes: None,
        }
    }
}

/// A loaded, validated dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Arc<Graph>,
    pub split: SplitSpec,
    pub stats: IngestStats,
}

impl Dataset {
    /// Hash of graph content and split, used to pair value files with datasets.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.graph.content_hash());
        h.update(self.split.content_hash());
        hex::encode(h.finalize())
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_features(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let text = read_text(path)?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = values.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("bad feature value {tok:?}")))?;
            values.push(v);
        }
        let w = values.len() - before;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("row has {w} values, expected {expected}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    Ok((values, rows, width.unwrap_or(0)))
}

fn parse_edges(path: &Path) -> Result<Vec<(NodeId, NodeId)>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line
            .split(|c: char| c == '\t' || c.is_whitespace())
            .filter(|s| !s.is_empty());
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, i + 1, "expected two node ids"));
        };
        let a = a
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad node id {a:?}")))?;
        let b = b
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad node id {b:?}")))?;
        edges.push((a, b));
    }
    Ok(edges)
}

fn parse_labels(path: &Path, num_nodes: usize) -> Result<Vec<Option<u32>>> {
    let text = read_text(path)?;
    let mut labels = vec![None; num_nodes];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((node, class)) = line.split_once(',') else {
            return Err(parse_err(path, i + 1, "expected node_id,class_index"));
        };
        let node: usize = node
            .trim()
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad node id {node:?}")))?;
        let class: u32 = class
            .trim()
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad class index {class:?}")))?;
        if node >= num_nodes {
            return Err(Error::Validation(format!(
                "{}:{}: label for node {node} outside 0..{num_nodes}",
                path.display(),
                i + 1
            )));
        }
        labels[node] = Some(class);
    }
    Ok(labels)
}

/// Loads and validates a dataset from its four files.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let (features, num_nodes, d) = parse_features(&paths.features)?;
    let edges = parse_edges(&paths.edges)?;
    let labels = parse_labels(&paths.labels, num_nodes)?;
    let num_classes = match paths.num_classes {
        Some(c) => c,
        None => labels.iter().flatten().max().map_or(0, |&c| c as usize + 1),
    };
    let (mut graph, stats) = Graph::from_edges(num_nodes, edges, features, d, labels, num_classes)?;
    if stats.duplicate_edges > 0 {
        warn!("merged {} duplicate edges", stats.duplicate_edges);
    }
    if stats.self_loops > 0 {
        warn!("dropped {} self-loops", stats.self_loops);
    }
    if paths.normalize {
        graph.normalize_rows();
    }
    let split: SplitSpec = serde_json::from_str(&read_text(&paths.split)?)
        .map_err(|e| parse_err(&paths.split, e.line(), e.to_string()))?;
    split.validate(&graph)?;
    Ok(Dataset {
        graph: Arc::new(graph),
        split,
        stats,
    })
}

/// Writes a dataset in the same four-file layout `load_dataset` reads.
pub fn export_dataset(graph: &Graph, split: &SplitSpec, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths::from_dir(dir);

    write_with(&paths.edges, |w| {
        for (u, v) in graph.edges() {
            writeln!(w, "{u}\t{v}")?;
        }
        Ok(())
    })?;
    write_with(&paths.features, |w| {
        for i in 0..graph.num_nodes() as NodeId {
            let row: Vec<String> = graph.features(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })?;
    write_with(&paths.labels, |w| {
        for i in 0..graph.num_nodes() as NodeId {
            if let Some(c) = graph.label(i) {
                writeln!(w, "{i},{c}")?;
            }
        }
        Ok(())
    })?;
    let json = serde_json::to_string_pretty(split).expect("split serializes");
    fs::write(&paths.split, json).map_err(|e| Error::io(&paths.split, e))
}

pub(crate) fn write_with(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parameters for drawing a split when the source data has none.
#[derive(Debug, Clone, Copy)]
pub struct RandomSplit {
    pub train_per_class: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub seed: u64,
}

impl RandomSplit {
    /// Per-class labeled training picks, then validation and test drawn from
    /// the rest. Every remaining node joins the training graph unlabeled.
    pub fn draw(&self, graph: &Graph) -> Result<SplitSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut by_class: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
        for i in 0..graph.num_nodes() as NodeId {
            if let Some(c) = graph.label(i) {
                by_class.entry(c).or_default().push(i);
            }
        }
        let mut labeled = Vec::new();
        for ids in by_class.values_mut() {
            ids.shuffle(&mut rng);
            labeled.extend(ids.iter().take(self.train_per_class));
        }
        labeled.sort_unstable();
        let taken: BTreeSet<NodeId> = labeled.iter().copied().collect();
        let mut rest: Vec<NodeId> = (0..graph.num_nodes() as NodeId)
            .filter(|i| !taken.contains(i))
            .collect();
        if rest.len() < self.num_val + self.num_test {
            return Err(Error::Validation(format!(
                "{} nodes left after training picks, need {}",
                rest.len(),
                self.num_val + self.num_test
            )));
        }
        rest.shuffle(&mut rng);
        let mut val = rest[..self.num_val].to_vec();
        let mut test = rest[self.num_val..self.num_val + self.num_test].to_vec();
        val.sort_unstable();
        test.sort_unstable();
        let mut train = labeled.clone();
        train.extend_from_slice(&rest[self.num_val + self.num_test..]);
        train.sort_unstable();
        Ok(SplitSpec {
            train,
            val,
            test,
            labeled_train: labeled,
        })
    }
}

/// Converts the LINQS citation format (`<name>.content`: id, binary word
/// attributes, class name; `<name>.cites`: cited/citing id pairs) into the
/// dense layout. Ids are re-indexed in file order and the mapping is written
/// to `id_map.csv`; class names are indexed in sorted order and written to
/// `classes.csv`. Citations to unknown ids are skipped and counted.
pub fn ingest_linqs(
    content: &Path,
    cites: &Path,
    out_dir: &Path,
    split: &RandomSplit,
) -> Result<(Dataset, usize)> {
    let text = read_text(content)?;
    let mut raw_ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut class_names = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 3 {
            return Err(parse_err(content, i + 1, "expected id, attributes, class"));
        }
        raw_ids.push(toks[0].to_string());
        let row = toks[1..toks.len() - 1]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(content, i + 1, format!("bad attribute {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    content,
                    i + 1,
                    "attribute count differs from first row",
                ));
            }
        }
        rows.push(row);
        class_names.push(toks[toks.len() - 1].to_string());
    }
    let index: HashMap<&str, NodeId> = raw_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as NodeId))
        .collect();
    let classes: BTreeSet<&str> = class_names.iter().map(String::as_str).collect();
    let class_index: HashMap<&str, u32> = classes
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i as u32))
        .collect();

    let mut edges = Vec::new();
    let mut dangling = 0;
    for (i, line) in read_text(cites)?.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            return Err(parse_err(cites, i + 1, "expected two ids"));
        }
        match (index.get(toks[0]), index.get(toks[1])) {
            (Some(&a), Some(&b)) => edges.push((a, b)),
            _ => dangling += 1,
        }
    }
    let d = rows.first().map_or(0, Vec::len);
    let features: Vec<f64> = rows.into_iter().flatten().collect();
    let labels = class_names
        .iter()
        .map(|c| Some(class_index[c.as_str()]))
        .collect();
    let (graph, stats) =
        Graph::from_edges(raw_ids.len(), edges, features, d, labels, classes.len())?;
    let split = split.draw(&graph)?;
    export_dataset(&graph, &split, out_dir)?;
    write_with(&out_dir.join("id_map.csv"), |w| {
        writeln!(w, "node_id,source_id")?;
        for (i, raw) in raw_ids.iter().enumerate() {
            writeln!(w, "{i},{raw}")?;
        }
        Ok(())
    })?;
    write_with(&out_dir.join("classes.csv"), |w| {
        writeln!(w, "class_index,name")?;
        for (i, c) in classes.iter().enumerate() {
            writeln!(w, "{i},{c}")?;
        }
        Ok(())
    })?;
    Ok((
        Dataset {
            graph: Arc::new(graph),
            split,
            stats,
        },
        dangling,
    ))
}
