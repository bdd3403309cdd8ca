//! Python bindings for the `pcwinter` library.

use std::path::PathBuf;
use std::sync::Arc;

use pcwinter::aggregate::{edge_values, node_values, read_values_csv};
use pcwinter::cli::{cmd_value, Completion, RunConfig};
use pcwinter::fixtures::{block_model, BlockModel};
use pcwinter::graph::{
    export_dataset, inductive_split, load_dataset, Dataset as CoreDataset, DatasetPaths,
};
use pcwinter::permute::{check_constraints, sample_dfs_traversal, traversal_rng, TruncationRatios};
use pcwinter::tree::ContributionTree as CoreTree;
use pcwinter::utility::{precompute_validation_representations, SgcUtility, TrainConfig};
use pcwinter::valuation::{
    exact_pc_winter, exact_shapley, run_pc_winter, EstimatorConfig, FnGame, RunBudget, RunState,
};
use pcwinter::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Validation(_) | Error::Lookup(_) | Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A graph with its train/validation/test split.
#[pyclass(frozen)]
struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    /// Loads a dataset directory.
    #[staticmethod]
    #[pyo3(signature = (path, normalize = true))]
    fn load(path: PathBuf, normalize: bool) -> PyResult<Self> {
        let mut paths = DatasetPaths::from_dir(&path);
        paths.normalize = normalize;
        Ok(Dataset {
            inner: load_dataset(&paths).map_err(to_py)?,
        })
    }

    /// A seeded two-class block-model graph.
    #[staticmethod]
    #[pyo3(signature = (nodes = 300, seed = 0))]
    fn synthetic(nodes: usize, seed: u64) -> PyResult<Self> {
        if nodes < 40 {
            return Err(PyValueError::new_err("need at least 40 nodes"));
        }
        let cfg = BlockModel {
            nodes,
            val: nodes / 5,
            test: nodes / 4,
            seed,
            ..BlockModel::default()
        };
        let (graph, split) = block_model(&cfg);
        Ok(Dataset {
            inner: CoreDataset {
                graph,
                split,
                stats: Default::default(),
            },
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        export_dataset(&self.inner.graph, &self.inner.split, path).map_err(to_py)
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.graph.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.graph.num_edges()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.graph.num_classes()
    }

    #[getter]
    fn labeled_train(&self) -> Vec<u32> {
        self.inner.split.labeled_train.clone()
    }

    #[getter]
    fn sha256(&self) -> String {
        self.inner.hash()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(nodes={}, edges={}, labeled={})",
            self.num_nodes(),
            self.num_edges(),
            self.inner.split.labeled_train.len()
        )
    }
}

/// Players of a dataset's depth-`k` contribution tree.
#[pyclass(frozen)]
struct ContributionTree {
    inner: Arc<CoreTree>,
}

#[pymethods]
impl ContributionTree {
    #[staticmethod]
    #[pyo3(signature = (dataset, k = 2))]
    fn build(dataset: &Dataset, k: usize) -> PyResult<Self> {
        let d = &dataset.inner;
        let (train, _, _) = inductive_split(d.graph.clone(), &d.split).map_err(to_py)?;
        let tree = CoreTree::build(&train, &d.split.labeled_train, k).map_err(to_py)?;
        Ok(ContributionTree {
            inner: Arc::new(tree),
        })
    }

    /// A tree over players `0..len(parents)`; `parents[p]` is `None` for
    /// roots. Players must be listed level by level.
    #[staticmethod]
    fn from_parents(parents: Vec<Option<usize>>) -> PyResult<Self> {
        let nodes: Vec<u32> = (0..parents.len() as u32).collect();
        Ok(ContributionTree {
            inner: Arc::new(CoreTree::from_forest(&nodes, &parents).map_err(to_py)?),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_roots(&self) -> usize {
        self.inner.num_roots()
    }

    fn parent(&self, p: usize) -> PyResult<Option<usize>> {
        self.check(p)?;
        Ok(self.inner.parent(p))
    }

    fn children(&self, p: usize) -> PyResult<Vec<usize>> {
        self.check(p)?;
        Ok(self.inner.children(p).collect())
    }

    fn depth(&self, p: usize) -> PyResult<usize> {
        self.check(p)?;
        Ok(self.inner.depth(p))
    }

    /// The node path from the root down to player `p`.
    fn path(&self, p: usize) -> PyResult<Vec<u32>> {
        self.check(p)?;
        Ok(self.inner.player_id(p).0)
    }

    /// Traversal `t` of the stream seeded by `seed`: the evaluated players in
    /// order and the truncated ones.
    #[pyo3(signature = (seed, t, ratios = None))]
    fn sample_traversal(
        &self,
        seed: u64,
        t: u64,
        ratios: Option<Vec<f64>>,
    ) -> PyResult<(Vec<usize>, Vec<usize>)> {
        let ratios = ratios_from(ratios)?;
        let tr = sample_dfs_traversal(&self.inner, &mut traversal_rng(seed, t), &ratios);
        Ok((tr.order, tr.truncated))
    }

    /// Whether `order` satisfies both permutation constraints.
    fn is_permissible(&self, order: Vec<usize>) -> PyResult<bool> {
        Ok(check_constraints(&self.inner, &order)
            .map_err(to_py)?
            .permissible())
    }

    /// Exact values for a utility given as a table indexed by the bitmask of
    /// included players.
    fn exact_values(&self, table: Vec<f64>) -> PyResult<Vec<f64>> {
        let n = self.inner.len();
        let game = table_game(n, &table)?;
        exact_pc_winter(&game, &self.inner).map_err(to_py)
    }
}

impl ContributionTree {
    fn check(&self, p: usize) -> PyResult<()> {
        if p >= self.inner.len() {
            return Err(PyValueError::new_err(format!("no player {p}")));
        }
        Ok(())
    }
}

fn ratios_from(ratios: Option<Vec<f64>>) -> PyResult<TruncationRatios> {
    match ratios {
        None => Ok(TruncationRatios::none()),
        Some(r) => TruncationRatios::new(r).map_err(to_py),
    }
}

fn table_game(n: usize, table: &[f64]) -> PyResult<FnGame<impl Fn(&[bool]) -> f64 + Sync + '_>> {
    if n >= usize::BITS as usize || table.len() != 1usize << n {
        return Err(PyValueError::new_err(format!(
            "table needs 2^{n} entries, got {}",
            table.len()
        )));
    }
    Ok(FnGame::new(n, move |s: &[bool]| {
        let m: usize = s
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| 1 << i)
            .sum();
        table[m]
    }))
}

/// Exact Shapley values of an `n`-player table game.
#[pyfunction]
fn exact_shapley_values(n: usize, table: Vec<f64>) -> PyResult<Vec<f64>> {
    let game = table_game(n, &table)?;
    exact_shapley(&game, n).map_err(to_py)
}

/// Estimates player values in memory. Returns `(paths, values, node_values,
/// edge_values)`.
#[pyfunction]
#[pyo3(signature = (dataset, k = 2, ratios = None, traversals = 100, seed = 0))]
#[allow(clippy::type_complexity)]
fn pc_winter(
    py: Python<'_>,
    dataset: &Dataset,
    k: usize,
    ratios: Option<Vec<f64>>,
    traversals: u64,
    seed: u64,
) -> PyResult<(
    Vec<Vec<u32>>,
    Vec<f64>,
    Vec<(u32, f64)>,
    Vec<((u32, u32), f64)>,
)> {
    let d = &dataset.inner;
    let ratios = ratios_from(ratios)?;
    py.detach(|| {
        let (train, val, _) = inductive_split(d.graph.clone(), &d.split)?;
        let tree = Arc::new(CoreTree::build(&train, &d.split.labeled_train, k)?);
        let eval = Arc::new(precompute_validation_representations(&val, k));
        let game = SgcUtility::new(tree.clone(), d.graph.clone(), eval, TrainConfig::default())?;
        let cfg = EstimatorConfig {
            ratios,
            budget: RunBudget {
                max_traversals: Some(traversals),
                max_wall_clock: None,
            },
            stop_on_convergence: false,
            seed,
            ..EstimatorConfig::default()
        };
        let mut state = RunState::new(tree.len(), &cfg)?;
        run_pc_winter(&game, &tree, &cfg, &mut state)?;
        let values = state.acc.values();
        let paths = (0..tree.len()).map(|p| tree.player_id(p).0).collect();
        let nodes = node_values(&tree, &values)?.into_iter().collect();
        let edges = edge_values(&tree, &values)?.into_iter().collect();
        Ok((paths, values, nodes, edges))
    })
    .map_err(to_py)
}

/// Runs a valuation method like the `value` command and returns
/// `(output_dir, completion, report)`. Settings use the config-file keys.
#[pyfunction]
#[pyo3(signature = (dataset_dir, method, out_dir, **settings))]
fn run(
    py: Python<'_>,
    dataset_dir: PathBuf,
    method: &str,
    out_dir: PathBuf,
    settings: Option<std::collections::HashMap<String, Bound<'_, PyAny>>>,
) -> PyResult<(PathBuf, String, String)> {
    let mut cfg = RunConfig::default();
    let mut pairs = vec![
        ("dataset".to_string(), dataset_dir.display().to_string()),
        ("method".to_string(), method.to_string()),
        ("out".to_string(), out_dir.display().to_string()),
    ];
    for (k, v) in settings.unwrap_or_default() {
        let text = if let Ok(b) = v.extract::<bool>() {
            b.to_string()
        } else {
            v.str()?.to_string()
        };
        pairs.push((k, text));
    }
    for (k, v) in &pairs {
        cfg.set(k, v).map_err(to_py)?;
    }
    let summary = py.detach(|| cmd_value(&cfg)).map_err(to_py)?;
    let completion = match summary.completion {
        Completion::Done => "done",
        Completion::Converged => "converged",
        Completion::BudgetExhausted => "budget_exhausted",
        Completion::NothingToDo => "nothing_to_do",
    };
    Ok((summary.out_dir, completion.to_string(), summary.report))
}

/// Rows of a `values.csv` file as `(entity_type, entity_id, value, count)`.
#[pyfunction]
fn read_values(path: PathBuf) -> PyResult<Vec<(String, String, f64, u64)>> {
    let (_, rows) = read_values_csv(&path).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            let kind = format!("{:?}", r.entity_type).to_lowercase();
            (kind, r.entity_id, r.value, r.count)
        })
        .collect())
}

#[pymodule]
pub fn pcwinter_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<ContributionTree>()?;
    m.add_function(wrap_pyfunction!(exact_shapley_values, m)?)?;
    m.add_function(wrap_pyfunction!(pc_winter, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(read_values, m)?)?;
    Ok(())
}
