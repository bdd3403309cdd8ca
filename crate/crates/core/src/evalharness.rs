//! Node-dropping and edge-adding experiments that turn value tables into
//! accuracy curves on the test view.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{write_with, InductiveView, NodeId};
use crate::valuation::ViewUtility;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeFilter {
    Unlabeled,
    Labeled,
    Mixed,
}

impl std::str::FromStr for NodeFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unlabeled" => Ok(NodeFilter::Unlabeled),
            "labeled" => Ok(NodeFilter::Labeled),
            "mixed" | "all" => Ok(NodeFilter::Mixed),
            _ => Err(Error::Config(format!(
                "unknown filter {s:?}; expected unlabeled, labeled or mixed"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCurve {
    pub method: String,
    pub experiment: String,
    pub step: f64,
    pub seeds: Vec<u64>,
    pub points: Vec<CurvePoint>,
}

/// Number of items removed or added per step.
pub fn batch_size(step: f64, n: usize) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("step {step} must lie in (0, 1]")));
    }
    Ok(((step * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1)))
}

/// Candidates in descending value order. Candidates without a (finite)
/// value follow all valued ones; ties are broken by ascending id.
pub fn rank_descending<K: Ord + Copy>(candidates: &[K], values: &BTreeMap<K, f64>) -> Vec<K> {
    let mut known: Vec<(K, f64)> = Vec::new();
    let mut unknown: Vec<K> = Vec::new();
    for &c in candidates {
        match values.get(&c) {
            Some(&v) if v.is_finite() => known.push((c, v)),
            _ => unknown.push(c),
        }
    }
    known.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    unknown.sort();
    known.into_iter().map(|(c, _)| c).chain(unknown).collect()
}

/// Mean 1-based position of `subset` members in the descending ranking of
/// `candidates`.
pub fn mean_rank<K: Ord + Copy>(
    candidates: &[K],
    values: &BTreeMap<K, f64>,
    subset: impl Fn(K) -> bool,
) -> Option<f64> {
    let ranked = rank_descending(candidates, values);
    let pos: Vec<usize> = ranked
        .iter()
        .enumerate()
        .filter(|(_, &k)| subset(k))
        .map(|(i, _)| i + 1)
        .collect();
    (!pos.is_empty()).then(|| pos.iter().sum::<usize>() as f64 / pos.len() as f64)
}

fn summarize(fractions: &[f64], scores: &[Vec<f64>]) -> Vec<CurvePoint> {
    fractions
        .iter()
        .enumerate()
        .map(|(i, &fraction)| {
            let xs: Vec<f64> = scores.iter().map(|s| s[i]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            CurvePoint {
                fraction,
                accuracy_mean: mean,
                accuracy_std: var.sqrt(),
            }
        })
        .collect()
}

fn prefix_sizes(n: usize, batch: usize) -> Vec<usize> {
    let mut sizes = vec![0];
    while *sizes.last().expect("nonempty") < n {
        sizes.push((sizes.last().expect("nonempty") + batch).min(n));
    }
    sizes
}

/// Removes value-descending batches of filtered nodes from `train` and scores
/// each remaining view. One curve point per step; repeated value tables
/// (e.g. several random seeds) are averaged.
pub fn drop_nodes_experiment<V: ViewUtility>(
    train: &InductiveView,
    tables: &[BTreeMap<NodeId, f64>],
    filter: NodeFilter,
    is_labeled: impl Fn(NodeId) -> bool,
    utility: &V,
    step: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if tables.is_empty() {
        return Err(Error::Config("at least one value table is required".into()));
    }
    let candidates: Vec<NodeId> = train
        .kept_ids()
        .iter()
        .copied()
        .filter(|&v| match filter {
            NodeFilter::Unlabeled => !is_labeled(v),
            NodeFilter::Labeled => is_labeled(v),
            NodeFilter::Mixed => true,
        })
        .collect();
    let n = candidates.len();
    let sizes = prefix_sizes(n, batch_size(step, n)?);
    let fractions: Vec<f64> = sizes
        .iter()
        .map(|&k| if n == 0 { 0.0 } else { k as f64 / n as f64 })
        .collect();
    let orders: Vec<Vec<NodeId>> = tables
        .iter()
        .map(|t| rank_descending(&candidates, t))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..tables.len())
        .flat_map(|t| (0..sizes.len()).map(move |s| (t, s)))
        .collect();
    let flat: Vec<f64> = jobs
        .par_iter()
        .map(|&(t, s)| utility.score(&train.without_nodes(&orders[t][..sizes[s]])?))
        .collect::<Result<_>>()?;
    let scores = flat.chunks(sizes.len()).map(<[f64]>::to_vec).collect();
    Ok((fractions, scores))
}

/// Starts from the edgeless training view and adds value-descending batches
/// of its edges, scoring after each step.
pub fn add_edges_experiment<V: ViewUtility>(
    train: &InductiveView,
    tables: &[BTreeMap<(NodeId, NodeId), f64>],
    utility: &V,
    step: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if tables.is_empty() {
        return Err(Error::Config("at least one value table is required".into()));
    }
    let candidates = train.edges();
    let m = candidates.len();
    let sizes = prefix_sizes(m, batch_size(step, m)?);
    let fractions: Vec<f64> = sizes
        .iter()
        .map(|&k| if m == 0 { 0.0 } else { k as f64 / m as f64 })
        .collect();
    let orders: Vec<Vec<(NodeId, NodeId)>> = tables
        .iter()
        .map(|t| {
            let normalized: BTreeMap<_, _> = t
                .iter()
                .map(|(&(a, b), &v)| ((a.min(b), a.max(b)), v))
                .collect();
            rank_descending(&candidates, &normalized)
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..tables.len())
        .flat_map(|t| (0..sizes.len()).map(move |s| (t, s)))
        .collect();
    let flat: Vec<f64> = jobs
        .par_iter()
        .map(|&(t, s)| {
            let view = InductiveView::with_edges(
                train.parent().clone(),
                train.kept_ids(),
                &orders[t][..sizes[s]],
            )?;
            utility.score(&view)
        })
        .collect::<Result<_>>()?;
    let scores = flat.chunks(sizes.len()).map(<[f64]>::to_vec).collect();
    Ok((fractions, scores))
}

impl ExperimentCurve {
    pub fn from_scores(
        method: &str,
        experiment: &str,
        step: f64,
        seeds: Vec<u64>,
        fractions: &[f64],
        scores: &[Vec<f64>],
    ) -> Self {
        ExperimentCurve {
            method: method.to_string(),
            experiment: experiment.to_string(),
            step,
            seeds,
            points: summarize(fractions, scores),
        }
    }

    /// Mean accuracy at the first point whose fraction reaches `fraction`.
    pub fn at(&self, fraction: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.fraction >= fraction - 1e-9)
            .map(|p| p.accuracy_mean)
    }
}

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    write_with(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for p in points {
            csv.serialize(p).map_err(std::io::Error::other)?;
        }
        csv.flush()
    })
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Provenance written next to each curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub method: String,
    pub experiment: String,
    pub filter: Option<NodeFilter>,
    pub step: f64,
    pub seeds: Vec<u64>,
    pub dataset_sha256: String,
    pub values_files: Vec<String>,
    pub points: usize,
}

pub fn write_manifest(path: &Path, manifest: &ExperimentManifest) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, manifest).map_err(std::io::Error::other)?;
        writeln!(w)
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::graph::Graph;

    /// Utility equal to the number of kept nodes plus a tenth of the edges.
    struct Size;

    impl ViewUtility for Size {
        fn score(&self, view: &InductiveView) -> Result<f64> {
            Ok(view.len() as f64 + 0.1 * view.num_edges() as f64)
        }
    }

    fn path(n: usize) -> InductiveView {
        let edges: Vec<_> = (1..n as NodeId).map(|i| (i - 1, i)).collect();
        let (g, _) = Graph::from_edges(n, edges, vec![0.0; n], 1, vec![None; n], 1).unwrap();
        let ids: Vec<NodeId> = (0..n as NodeId).collect();
        InductiveView::new(Arc::new(g), &ids).unwrap()
    }

    #[test]
    fn ranking_puts_unknown_last() {
        let values: BTreeMap<u32, f64> = [(3, 0.5), (1, 0.5), (2, 0.9), (4, f64::NAN)].into();
        assert_eq!(
            rank_descending(&[0, 1, 2, 3, 4], &values),
            vec![2, 1, 3, 0, 4]
        );
    }

    #[test]
    fn batch_sizes() {
        assert_eq!(batch_size(0.05, 100).unwrap(), 5);
        assert_eq!(batch_size(0.3, 10).unwrap(), 3);
        assert_eq!(batch_size(0.25, 10).unwrap(), 3);
        assert_eq!(batch_size(1.0, 0).unwrap(), 1);
        assert!(batch_size(0.0, 10).is_err());
        assert!(batch_size(1.5, 10).is_err());
    }

    #[test]
    fn drop_curve_bookkeeping() {
        let train = path(10);
        let table: BTreeMap<NodeId, f64> = (0..10).map(|v| (v, v as f64)).collect();
        let (fr, sc) =
            drop_nodes_experiment(&train, &[table], NodeFilter::Mixed, |_| false, &Size, 0.3)
                .unwrap();
        assert_eq!(fr, vec![0.0, 0.3, 0.6, 0.9, 1.0]);
        // highest values are the tail of the path: removing 9,8,7 keeps 7 nodes, 6 edges
        assert!((sc[0][1] - 7.6).abs() < 1e-12);
        assert_eq!(sc[0][4], 0.0);
        assert!((sc[0][0] - 10.9).abs() < 1e-12);
    }

    #[test]
    fn labeled_filter_with_one_labeled_node() {
        let train = path(4);
        let (fr, _) = drop_nodes_experiment(
            &train,
            &[BTreeMap::new()],
            NodeFilter::Labeled,
            |v| v == 2,
            &Size,
            0.05,
        )
        .unwrap();
        assert_eq!(fr, vec![0.0, 1.0]);
    }

    #[test]
    fn add_curve_endpoints() {
        let train = path(5);
        let (fr, sc) = add_edges_experiment(&train, &[BTreeMap::new()], &Size, 0.5).unwrap();
        assert_eq!(fr, vec![0.0, 0.5, 1.0]);
        assert_eq!(sc[0][0], 5.0);
        assert_eq!(sc[0][2], Size.score(&train).unwrap());
    }

    #[test]
    fn curve_csv_round_trip() {
        let curve = ExperimentCurve::from_scores(
            "degree",
            "drop-nodes",
            0.5,
            vec![1],
            &[0.0, 0.5, 1.0],
            &[vec![0.7, 0.65, 0.4]],
        );
        assert!(curve.points.iter().all(|p| p.accuracy_std == 0.0));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curve.csv");
        write_curve_csv(&p, &curve.points).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("fraction,accuracy_mean,accuracy_std\n"));
        assert_eq!(read_curve_csv(&p).unwrap(), curve.points);
    }

    #[test]
    fn mean_rank_of_subset() {
        let values: BTreeMap<u32, f64> = [(0, 3.0), (1, 2.0), (2, 1.0)].into();
        assert_eq!(mean_rank(&[0, 1, 2], &values, |k| k != 1), Some(2.0));
        assert_eq!(mean_rank(&[0, 1, 2], &values, |_| false), None);
    }
}
