//! Run configuration and the commands behind the `pcwinter` binary.
//!
//! A run is described by a flat `key = value` file; command-line flags
//! override file entries, which override defaults. Output directories are
//! named after a hash of the resolved configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::aggregate::{
    edge_values, from_player_rows, node_values, read_edge_values, read_node_values,
    read_values_csv, write_edge_values, write_node_values, write_values_csv, EdgeValueTable,
    EntityType, NodeValueTable, ValueRow,
};
use crate::error::{Error, Result};
use crate::evalharness::{
    add_edges_experiment, drop_nodes_experiment, write_curve_csv, write_manifest, ExperimentCurve,
    ExperimentManifest, NodeFilter,
};
use crate::graph::{
    inductive_split, ingest_linqs, load_dataset, Dataset, DatasetPaths, InductiveView, NodeId,
    RandomSplit,
};
use crate::permute::TruncationRatios;
use crate::tree::ContributionTree;
use crate::utility::{precompute_validation_representations, SgcUtility, TrainConfig, ViewScorer};
use crate::valuation::{
    degree_values, edge_betweenness, load_checkpoint, random_values, run_data_shapley_tmc,
    run_loo_edges, run_loo_nodes, run_pc_winter_with, save_checkpoint, tmc_players, Checkpoint,
    ConvergenceConfig, ConvergenceMonitor, EstimatorConfig, InducedSubgraphUtility, RunBudget,
    RunReport, RunState, Sampler, StopReason, TmcConfig,
};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "PCWINTER_OUTPUT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_INTEGRITY: i32 = 4;
pub const EXIT_BUDGET: i32 = 5;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Integrity(_) => EXIT_INTEGRITY,
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::Lookup(_)
        | Error::Size(_)
        | Error::Precedence { .. }
        | Error::State(_)
        | Error::EmptyCoalition => EXIT_VALIDATION,
        Error::Io { .. } => EXIT_FAILURE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    PcWinter,
    PcWinterL,
    PcWinterP,
    DataShapley,
    LooNode,
    LooEdge,
    Degree,
    Random,
    Betweenness,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::PcWinter,
        Method::PcWinterL,
        Method::PcWinterP,
        Method::DataShapley,
        Method::LooNode,
        Method::LooEdge,
        Method::Degree,
        Method::Random,
        Method::Betweenness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::PcWinter => "pc-winter",
            Method::PcWinterL => "pc-winter-l",
            Method::PcWinterP => "pc-winter-p",
            Method::DataShapley => "data-shapley",
            Method::LooNode => "loo-node",
            Method::LooEdge => "loo-edge",
            Method::Degree => "degree",
            Method::Random => "random",
            Method::Betweenness => "betweenness",
        }
    }

    fn sampler(self) -> Option<Sampler> {
        match self {
            Method::PcWinter => Some(Sampler::Dfs),
            Method::PcWinterL => Some(Sampler::LevelOnly),
            Method::PcWinterP => Some(Sampler::PrecedenceOnly),
            _ => None,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!(
                    "unknown method {s:?}; valid methods: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    DropNodes,
    AddEdges,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::DropNodes => "drop-nodes",
            Experiment::AddEdges => "add-edges",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop-nodes" => Ok(Experiment::DropNodes),
            "add-edges" => Ok(Experiment::AddEdges),
            _ => Err(Error::Config(format!(
                "unknown experiment {s:?}; expected drop-nodes or add-edges"
            ))),
        }
    }
}

/// Every setting of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub normalize: bool,
    pub k: usize,
    pub method: Method,
    pub trunc: Vec<f64>,
    pub seed: u64,
    pub max_perms: Option<u64>,
    pub max_seconds: Option<f64>,
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub conv_window: usize,
    pub conv_tol: f64,
    pub stop_on_convergence: bool,
    pub tmc_tolerance: f64,
    pub step: f64,
    pub filter: NodeFilter,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let conv = ConvergenceConfig::default();
        RunConfig {
            dataset: None,
            normalize: true,
            k: 2,
            method: Method::PcWinter,
            trunc: vec![0.5, 0.7],
            seed: 0,
            max_perms: None,
            max_seconds: None,
            lr: train.learning_rate,
            epochs: train.epochs,
            weight_decay: train.weight_decay,
            conv_window: conv.window,
            conv_tol: conv.tolerance,
            stop_on_convergence: true,
            tmc_tolerance: 0.01,
            step: 0.05,
            filter: NodeFilter::Unlabeled,
            out: None,
        }
    }
}

/// Recognized configuration keys.
pub const KEYS: [&str; 18] = [
    "dataset",
    "normalize",
    "k",
    "method",
    "trunc",
    "seed",
    "max_perms",
    "max_seconds",
    "lr",
    "epochs",
    "weight_decay",
    "conv_window",
    "conv_tol",
    "stop_on_convergence",
    "tmc_tolerance",
    "step",
    "filter",
    "out",
];

/// Keys that bound how far a run goes without changing what it computes.
const BUDGET_KEYS: [&str; 3] = ["max_perms", "max_seconds", "stop_on_convergence"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

fn parse_ratios(value: &str) -> Result<Vec<f64>> {
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|t| parse::<f64>("trunc", t.trim()))
        .collect()
}

impl RunConfig {
    /// Sets one key; `-` and `_` are interchangeable in key names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "dataset" => self.dataset = parse_opt(&key, value)?,
            "normalize" => self.normalize = parse_bool(&key, value)?,
            "k" => self.k = parse(&key, value)?,
            "method" => self.method = value.parse()?,
            "trunc" => self.trunc = parse_ratios(value)?,
            "seed" => self.seed = parse(&key, value)?,
            "max_perms" => self.max_perms = parse_opt(&key, value)?,
            "max_seconds" => self.max_seconds = parse_opt(&key, value)?,
            "lr" => self.lr = parse(&key, value)?,
            "epochs" => self.epochs = parse(&key, value)?,
            "weight_decay" => self.weight_decay = parse(&key, value)?,
            "conv_window" => self.conv_window = parse(&key, value)?,
            "conv_tol" => self.conv_tol = parse(&key, value)?,
            "stop_on_convergence" => self.stop_on_convergence = parse_bool(&key, value)?,
            "tmc_tolerance" => self.tmc_tolerance = parse(&key, value)?,
            "step" => self.step = parse(&key, value)?,
            "filter" => self.filter = value.parse()?,
            "out" => self.out = parse_opt(&key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown config key {key:?}; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies the `key = value` lines of a config file. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key = value",
                    origin.display(),
                    i + 1
                )));
            };
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}:{}: {m}", origin.display(), i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Defaults, then the file (if any), then the overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            weight_decay: self.weight_decay,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_none() {
            return Err(Error::Config("no dataset given".into()));
        }
        if self.k == 0 || self.k > u8::MAX as usize {
            return Err(Error::Config(format!("k = {} must lie in 1..=255", self.k)));
        }
        if self.trunc.len() > self.k {
            return Err(Error::Config(format!(
                "{} truncation ratios given for k = {}",
                self.trunc.len(),
                self.k
            )));
        }
        TruncationRatios::new(self.trunc.clone())?;
        if self.max_perms == Some(0) {
            return Err(Error::Config("max_perms must be at least 1".into()));
        }
        if self
            .max_seconds
            .is_some_and(|s| !(s > 0.0 && s.is_finite()))
        {
            return Err(Error::Config("max_seconds must be positive".into()));
        }
        self.train_config().validate()?;
        ConvergenceMonitor::new(ConvergenceConfig {
            window: self.conv_window,
            tolerance: self.conv_tol,
            ..ConvergenceConfig::default()
        })?;
        if self.tmc_tolerance.is_nan() || self.tmc_tolerance < 0.0 {
            return Err(Error::Config("tmc_tolerance must be nonnegative".into()));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::Config(format!(
                "step {} must lie in (0, 1]",
                self.step
            )));
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        match key {
            "dataset" => opt(self.dataset.as_ref().map(|p| p.display().to_string())),
            "normalize" => self.normalize.to_string(),
            "k" => self.k.to_string(),
            "method" => self.method.as_str().into(),
            "trunc" => {
                if self.trunc.is_empty() {
                    "none".into()
                } else {
                    let parts: Vec<String> = self.trunc.iter().map(f64::to_string).collect();
                    parts.join(",")
                }
            }
            "seed" => self.seed.to_string(),
            "max_perms" => opt(self.max_perms.map(|v| v.to_string())),
            "max_seconds" => opt(self.max_seconds.map(|v| v.to_string())),
            "lr" => self.lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "conv_window" => self.conv_window.to_string(),
            "conv_tol" => self.conv_tol.to_string(),
            "stop_on_convergence" => self.stop_on_convergence.to_string(),
            "tmc_tolerance" => self.tmc_tolerance.to_string(),
            "step" => self.step.to_string(),
            "filter" => match self.filter {
                NodeFilter::Unlabeled => "unlabeled".into(),
                NodeFilter::Labeled => "labeled".into(),
                NodeFilter::Mixed => "mixed".into(),
            },
            "out" => opt(self.out.as_ref().map(|p| p.display().to_string())),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Canonical config file text; `out` is left out so a run can be moved.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS.iter().filter(|&&k| k != "out") {
            let _ = writeln!(s, "{key} = {}", self.value_of(key));
        }
        s
    }

    fn hash_keys(&self, skip: &[&str]) -> String {
        let mut h = Sha256::new();
        for key in KEYS.iter().filter(|&&k| k != "out" && !skip.contains(&k)) {
            h.update(format!("{key}={}\n", self.value_of(key)));
        }
        hex::encode(h.finalize())
    }

    /// Hash of every setting except the output location.
    pub fn config_hash(&self) -> String {
        self.hash_keys(&[])
    }

    /// Hash of the settings that determine the traversal stream; budgets are
    /// excluded so a run can be resumed with a larger one.
    pub fn stream_hash(&self) -> String {
        self.hash_keys(&BUDGET_KEYS)
    }

    /// `out` if set, else `<root>/<method>-<hash prefix>` where the root is
    /// taken from the environment or defaults to `runs`.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        output_root().join(format!(
            "{}-{}",
            self.method.as_str(),
            &self.config_hash()[..16]
        ))
    }

    fn estimator_config(&self, sampler: Sampler) -> Result<EstimatorConfig> {
        let ratios = if sampler == Sampler::Dfs {
            TruncationRatios::new(self.trunc.clone())?
        } else {
            TruncationRatios::none()
        };
        Ok(EstimatorConfig {
            sampler,
            ratios,
            budget: RunBudget {
                max_traversals: self.max_perms,
                max_wall_clock: self.max_seconds.map(Duration::from_secs_f64),
            },
            convergence: ConvergenceConfig {
                window: self.conv_window,
                tolerance: self.conv_tol,
                ..ConvergenceConfig::default()
            },
            stop_on_convergence: self.stop_on_convergence,
            seed: self.seed,
        })
    }
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// A loaded dataset with its inductive views.
pub struct Context {
    pub dataset: Dataset,
    pub hash: String,
    pub train: InductiveView,
    pub val: InductiveView,
    pub test: InductiveView,
}

pub fn load_context(cfg: &RunConfig) -> Result<Context> {
    let dir = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given".into()))?;
    let mut paths = DatasetPaths::from_dir(dir);
    paths.normalize = cfg.normalize;
    let dataset = load_dataset(&paths)?;
    let hash = dataset.hash();
    let (train, val, test) = inductive_split(dataset.graph.clone(), &dataset.split)?;
    Ok(Context {
        dataset,
        hash,
        train,
        val,
        test,
    })
}

/// How a valuation command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    Done,
    Converged,
    BudgetExhausted,
    NothingToDo,
}

impl Completion {
    pub fn exit_code(self) -> i32 {
        match self {
            Completion::BudgetExhausted => EXIT_BUDGET,
            _ => EXIT_OK,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValueSummary {
    pub out_dir: PathBuf,
    pub completion: Completion,
    pub report: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    method: &'a str,
    config_sha256: String,
    stream_sha256: String,
    dataset_sha256: &'a str,
    files: Vec<&'a str>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn node_rows(table: &NodeValueTable, counts: &BTreeMap<NodeId, u64>) -> Vec<ValueRow> {
    table
        .iter()
        .map(|(&v, &value)| ValueRow {
            entity_type: EntityType::Node,
            entity_id: v.to_string(),
            value,
            count: counts.get(&v).copied().unwrap_or(1),
        })
        .collect()
}

fn edge_rows(table: &EdgeValueTable, counts: &BTreeMap<(NodeId, NodeId), u64>) -> Vec<ValueRow> {
    table
        .iter()
        .map(|(&(a, b), &value)| ValueRow {
            entity_type: EntityType::Edge,
            entity_id: format!("{a}-{b}"),
            value,
            count: counts.get(&(a, b)).copied().unwrap_or(1),
        })
        .collect()
}

struct Outputs {
    rows: Vec<ValueRow>,
    nodes: Option<NodeValueTable>,
    edges: Option<EdgeValueTable>,
}

fn write_outputs(
    dir: &Path,
    cfg: &RunConfig,
    dataset_hash: &str,
    out: &Outputs,
    report: &str,
    extra: &[&'static str],
) -> Result<()> {
    create_dir(dir)?;
    write_values_csv(&dir.join("values.csv"), dataset_hash, &out.rows)?;
    let mut files = vec!["values.csv", "report.txt", "config.txt"];
    if let Some(n) = &out.nodes {
        write_node_values(&dir.join("node_values.csv"), dataset_hash, n)?;
        files.push("node_values.csv");
    }
    if let Some(e) = &out.edges {
        write_edge_values(&dir.join("edge_values.csv"), dataset_hash, e)?;
        files.push("edge_values.csv");
    }
    files.extend_from_slice(extra);
    write_text(&dir.join("report.txt"), report)?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    let manifest = RunManifest {
        method: cfg.method.as_str(),
        config_sha256: cfg.config_hash(),
        stream_sha256: cfg.stream_hash(),
        dataset_sha256: dataset_hash,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&dir.join("manifest.json"), &(json + "\n"))
}

fn report_text(cfg: &RunConfig, dataset_hash: &str, lines: &[(&str, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method={}", cfg.method.as_str());
    let _ = writeln!(s, "dataset_sha256={dataset_hash}");
    let _ = writeln!(s, "config_sha256={}", cfg.config_hash());
    for (k, v) in lines {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

fn pc_winter_report(cfg: &RunConfig, hash: &str, players: usize, r: &RunReport) -> String {
    let stop = match r.stop {
        StopReason::Converged => "converged",
        StopReason::MaxTraversals => "max_traversals",
        StopReason::WallClock => "wall_clock",
    };
    report_text(
        cfg,
        hash,
        &[
            ("players", players.to_string()),
            ("traversals", r.traversals.to_string()),
            ("new_traversals", r.new_traversals.to_string()),
            ("retrainings", r.retrainings.to_string()),
            (
                "retrainings_per_traversal",
                r.retrainings_per_traversal.to_string(),
            ),
            ("converged", r.converged.to_string()),
            (
                "converged_at",
                r.converged_at.map_or("none".into(), |t| t.to_string()),
            ),
            ("stop", stop.into()),
            ("wall_seconds", format!("{:.3}", r.wall_time.as_secs_f64())),
        ],
    )
}

fn player_outputs(tree: &ContributionTree, state: &RunState) -> Result<Outputs> {
    let values = state.acc.values();
    let nodes = node_values(tree, &values)?;
    let edges = edge_values(tree, &values)?;
    let mut node_counts = BTreeMap::new();
    let mut edge_counts = BTreeMap::new();
    for p in 0..tree.len() {
        *node_counts.entry(tree.player_node(p)).or_insert(0) += 1;
        if let Some(e) = tree.player_edge(p) {
            *edge_counts.entry(e).or_insert(0) += 1;
        }
    }
    let mut rows: Vec<ValueRow> = (0..tree.len())
        .map(|p| ValueRow {
            entity_type: EntityType::Player,
            entity_id: tree.player_id(p).to_string(),
            value: values[p],
            count: state.acc.counts[p],
        })
        .collect();
    rows.extend(node_rows(&nodes, &node_counts));
    rows.extend(edge_rows(&edges, &edge_counts));
    Ok(Outputs {
        rows,
        nodes: Some(nodes),
        edges: Some(edges),
    })
}

const CHECKPOINT_FILE: &str = "checkpoint.txt";

fn run_tree_method(
    cfg: &RunConfig,
    ctx: &Context,
    sampler: Sampler,
    dir: &Path,
    resume: Option<RunState>,
) -> Result<ValueSummary> {
    let labeled = &ctx.dataset.split.labeled_train;
    let tree = Arc::new(ContributionTree::build(&ctx.train, labeled, cfg.k)?);
    let val = Arc::new(precompute_validation_representations(&ctx.val, cfg.k));
    let game = SgcUtility::new(
        tree.clone(),
        ctx.dataset.graph.clone(),
        val,
        cfg.train_config(),
    )?;
    let est = cfg.estimator_config(sampler)?;
    let resuming = resume.is_some();
    let mut state = match resume {
        Some(s) => s,
        None => RunState::new(tree.len(), &est)?,
    };
    create_dir(dir)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let stream = cfg.stream_hash();
    let save = |s: &RunState| {
        save_checkpoint(
            &Checkpoint {
                state: s.clone(),
                dataset_hash: ctx.hash.clone(),
                config_hash: stream.clone(),
            },
            &ckpt,
        )
    };
    log::info!(
        "{} players, {} labeled roots, starting at traversal {}",
        tree.len(),
        tree.num_roots(),
        state.acc.traversals
    );
    let report = run_pc_winter_with(&game, &tree, &est, &mut state, save)?;
    save(&state)?;
    let text = pc_winter_report(cfg, &ctx.hash, tree.len(), &report);
    let completion = if resuming && report.new_traversals == 0 && dir.join("values.csv").exists() {
        Completion::NothingToDo
    } else {
        tree.write_players_csv(&dir.join("players.csv"))?;
        write_outputs(
            dir,
            cfg,
            &ctx.hash,
            &player_outputs(&tree, &state)?,
            &text,
            &["players.csv", CHECKPOINT_FILE],
        )?;
        match report.stop {
            StopReason::Converged => Completion::Converged,
            _ if cfg.stop_on_convergence => Completion::BudgetExhausted,
            _ => Completion::Done,
        }
    };
    Ok(ValueSummary {
        out_dir: dir.to_path_buf(),
        completion,
        report: text,
    })
}

fn val_scorer(cfg: &RunConfig, ctx: &Context, eval: &InductiveView) -> Result<ViewScorer> {
    let eval = Arc::new(precompute_validation_representations(eval, cfg.k));
    ViewScorer::new(
        &ctx.dataset.graph,
        &ctx.dataset.split.labeled_train,
        cfg.k,
        cfg.train_config(),
        eval,
    )
}

fn node_outputs(table: NodeValueTable, count: u64) -> Outputs {
    let counts = table.keys().map(|&k| (k, count)).collect();
    Outputs {
        rows: node_rows(&table, &counts),
        nodes: Some(table),
        edges: None,
    }
}

fn edge_outputs(table: EdgeValueTable) -> Outputs {
    Outputs {
        rows: edge_rows(&table, &BTreeMap::new()),
        nodes: None,
        edges: Some(table),
    }
}

/// `value`: computes values with the configured method and writes them.
pub fn cmd_value(cfg: &RunConfig) -> Result<ValueSummary> {
    cfg.validate()?;
    let ctx = load_context(cfg)?;
    let dir = cfg.output_dir();
    if let Some(sampler) = cfg.method.sampler() {
        return run_tree_method(cfg, &ctx, sampler, &dir, None);
    }
    let start = std::time::Instant::now();
    let mut extra: Vec<(&str, String)> = Vec::new();
    let outputs = match cfg.method {
        Method::DataShapley => {
            let players = tmc_players(&ctx.train, &ctx.dataset.split.labeled_train, cfg.k)?;
            let scorer = val_scorer(cfg, &ctx, &ctx.val)?;
            let utility = InducedSubgraphUtility::new(&ctx.train, &scorer);
            let tmc = TmcConfig {
                permutations: cfg.max_perms.unwrap_or(TmcConfig::default().permutations),
                tolerance: cfg.tmc_tolerance,
                seed: cfg.seed,
            };
            let values = run_data_shapley_tmc(&players, &utility, &tmc)?;
            extra.push(("players", players.len().to_string()));
            extra.push(("permutations", tmc.permutations.to_string()));
            node_outputs(players.into_iter().zip(values).collect(), tmc.permutations)
        }
        Method::LooNode => {
            let scorer = val_scorer(cfg, &ctx, &ctx.val)?;
            node_outputs(run_loo_nodes(&ctx.train, &scorer)?.into_iter().collect(), 1)
        }
        Method::LooEdge => {
            let scorer = val_scorer(cfg, &ctx, &ctx.val)?;
            edge_outputs(run_loo_edges(&ctx.train, &scorer)?.into_iter().collect())
        }
        Method::Degree => node_outputs(degree_values(&ctx.train).into_iter().collect(), 1),
        Method::Random => {
            let nodes = ctx.train.kept_ids();
            let edges = ctx.train.edges();
            let draws = random_values(nodes.len() + edges.len(), cfg.seed);
            let node_table: NodeValueTable =
                nodes.iter().copied().zip(draws.iter().copied()).collect();
            let edge_table: EdgeValueTable = edges
                .into_iter()
                .zip(draws[nodes.len()..].iter().copied())
                .collect();
            let mut out = node_outputs(node_table, 1);
            out.rows.extend(edge_rows(&edge_table, &BTreeMap::new()));
            out.edges = Some(edge_table);
            out
        }
        Method::Betweenness => edge_outputs(edge_betweenness(&ctx.train).into_iter().collect()),
        Method::PcWinter | Method::PcWinterL | Method::PcWinterP => unreachable!(),
    };
    extra.push((
        "wall_seconds",
        format!("{:.3}", start.elapsed().as_secs_f64()),
    ));
    let report = report_text(cfg, &ctx.hash, &extra);
    write_outputs(&dir, cfg, &ctx.hash, &outputs, &report, &[])?;
    Ok(ValueSummary {
        out_dir: dir,
        completion: Completion::Done,
        report,
    })
}

/// `resume`: continues the run that wrote `checkpoint`, in its directory.
/// Overrides may only change budget keys.
pub fn cmd_resume(checkpoint: &Path, overrides: &[(String, String)]) -> Result<ValueSummary> {
    let dir = checkpoint
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut cfg = RunConfig::resolve(Some(&dir.join("config.txt")), &[])?;
    let stream = cfg.stream_hash();
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    if cfg.stream_hash() != stream {
        return Err(Error::Config(format!(
            "only {} may change on resume",
            BUDGET_KEYS.join(", ")
        )));
    }
    cfg.out = Some(dir.clone());
    cfg.validate()?;
    let sampler = cfg.method.sampler().ok_or_else(|| {
        Error::Config(format!("method {} has no checkpoints", cfg.method.as_str()))
    })?;
    let cp = load_checkpoint(checkpoint)?;
    if cp.config_hash != stream {
        return Err(Error::Integrity(
            "checkpoint was written under a different configuration".into(),
        ));
    }
    let ctx = load_context(&cfg)?;
    let tree_len =
        ContributionTree::build(&ctx.train, &ctx.dataset.split.labeled_train, cfg.k)?.len();
    cp.verify(tree_len, &ctx.hash)?;
    run_tree_method(&cfg, &ctx, sampler, &dir, Some(cp.state))
}

/// `aggregate`: node and edge tables from the player rows of a values file.
pub fn cmd_aggregate(values: &Path, out: Option<&Path>) -> Result<PathBuf> {
    let (hash, rows) = read_values_csv(values)?;
    let hash = hash
        .ok_or_else(|| Error::Integrity(format!("{} records no dataset hash", values.display())))?;
    if !rows.iter().any(|r| r.entity_type == EntityType::Player) {
        return Err(Error::Validation(format!(
            "{} has no player rows",
            values.display()
        )));
    }
    let (nodes, edges) = from_player_rows(&rows)?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => values
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    create_dir(&dir)?;
    write_node_values(&dir.join("node_values.csv"), &hash, &nodes)?;
    write_edge_values(&dir.join("edge_values.csv"), &hash, &edges)?;
    Ok(dir)
}

fn check_hash(path: &Path, found: Option<String>, expected: &str) -> Result<()> {
    match found {
        Some(h) if h == expected => Ok(()),
        Some(h) => Err(Error::Integrity(format!(
            "{} was computed on dataset {h}, not {expected}",
            path.display()
        ))),
        None => Err(Error::Integrity(format!(
            "{} records no dataset hash",
            path.display()
        ))),
    }
}

fn is_values_file(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .find(|l| !l.starts_with('#'))
        .is_some_and(|l| l.starts_with("entity_type")))
}

fn read_node_table(path: &Path, expected: &str) -> Result<NodeValueTable> {
    if is_values_file(path)? {
        let (hash, rows) = read_values_csv(path)?;
        check_hash(path, hash, expected)?;
        return rows
            .iter()
            .filter(|r| r.entity_type == EntityType::Node)
            .map(|r| Ok((parse::<NodeId>("node id", &r.entity_id)?, r.value)))
            .collect();
    }
    let (hash, table) = read_node_values(path)?;
    check_hash(path, hash, expected)?;
    Ok(table)
}

fn read_edge_table(path: &Path, expected: &str) -> Result<EdgeValueTable> {
    if is_values_file(path)? {
        let (hash, rows) = read_values_csv(path)?;
        check_hash(path, hash, expected)?;
        return rows
            .iter()
            .filter(|r| r.entity_type == EntityType::Edge)
            .map(|r| {
                let (a, b) = r
                    .entity_id
                    .split_once('-')
                    .ok_or_else(|| Error::Validation(format!("bad edge id {:?}", r.entity_id)))?;
                let (a, b): (NodeId, NodeId) = (parse("edge id", a)?, parse("edge id", b)?);
                Ok(((a.min(b), a.max(b)), r.value))
            })
            .collect();
    }
    let (hash, table) = read_edge_values(path)?;
    check_hash(path, hash, expected)?;
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub out_dir: PathBuf,
    pub curve: ExperimentCurve,
}

/// `eval`: an accuracy curve on the test view for one or more value files
/// (several files, e.g. from different seeds, are averaged).
pub fn cmd_eval(
    cfg: &RunConfig,
    values: &[PathBuf],
    experiment: Experiment,
    label: Option<&str>,
) -> Result<EvalSummary> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::Config("at least one values file is required".into()));
    }
    let ctx = load_context(cfg)?;
    let scorer = val_scorer(cfg, &ctx, &ctx.test)?;
    let method = label.unwrap_or(cfg.method.as_str());
    let (fractions, scores, filter) = match experiment {
        Experiment::DropNodes => {
            let tables = values
                .iter()
                .map(|p| read_node_table(p, &ctx.hash))
                .collect::<Result<Vec<_>>>()?;
            let (f, s) = drop_nodes_experiment(
                &ctx.train,
                &tables,
                cfg.filter,
                |v| scorer.is_labeled(v),
                &scorer,
                cfg.step,
            )?;
            (f, s, Some(cfg.filter))
        }
        Experiment::AddEdges => {
            let tables = values
                .iter()
                .map(|p| read_edge_table(p, &ctx.hash))
                .collect::<Result<Vec<_>>>()?;
            let (f, s) = add_edges_experiment(&ctx.train, &tables, &scorer, cfg.step)?;
            (f, s, None)
        }
    };
    let seeds: Vec<u64> = (0..values.len() as u64).collect();
    let curve = ExperimentCurve::from_scores(
        method,
        experiment.as_str(),
        cfg.step,
        seeds.clone(),
        &fractions,
        &scores,
    );
    let dir = match &cfg.out {
        Some(d) => d.clone(),
        None => {
            let mut h = Sha256::new();
            h.update(cfg.config_hash());
            h.update(experiment.as_str());
            h.update(method);
            for p in values {
                h.update(fs::read(p).map_err(|e| Error::io(p, e))?);
            }
            output_root().join(format!(
                "eval-{}-{}",
                experiment.as_str(),
                &hex::encode(h.finalize())[..16]
            ))
        }
    };
    create_dir(&dir)?;
    write_curve_csv(&dir.join("curve.csv"), &curve.points)?;
    write_manifest(
        &dir.join("manifest.json"),
        &ExperimentManifest {
            method: method.to_string(),
            experiment: experiment.as_str().to_string(),
            filter,
            step: cfg.step,
            seeds,
            dataset_sha256: ctx.hash.clone(),
            values_files: values.iter().map(|p| p.display().to_string()).collect(),
            points: curve.points.len(),
        },
    )?;
    Ok(EvalSummary {
        out_dir: dir,
        curve,
    })
}

/// Dataset statistics as `key=value` lines.
pub fn describe_dataset(ds: &Dataset) -> String {
    let g = &ds.graph;
    let mut s = String::new();
    let _ = writeln!(s, "nodes={}", g.num_nodes());
    let _ = writeln!(s, "edges={}", g.num_edges());
    let _ = writeln!(s, "features={}", g.num_features());
    let _ = writeln!(s, "classes={}", g.num_classes());
    let _ = writeln!(s, "train={}", ds.split.train.len());
    let _ = writeln!(s, "labeled_train={}", ds.split.labeled_train.len());
    let _ = writeln!(s, "val={}", ds.split.val.len());
    let _ = writeln!(s, "test={}", ds.split.test.len());
    let _ = writeln!(s, "duplicate_edges={}", ds.stats.duplicate_edges);
    let _ = writeln!(s, "self_loops={}", ds.stats.self_loops);
    let _ = writeln!(s, "dataset_sha256={}", ds.hash());
    s
}

/// `ingest --check`: loads a dataset directory and describes it.
pub fn cmd_check(dir: &Path, normalize: bool) -> Result<String> {
    let mut paths = DatasetPaths::from_dir(dir);
    paths.normalize = normalize;
    Ok(describe_dataset(&load_dataset(&paths)?))
}

/// `ingest`: converts LINQS `.content`/`.cites` files to a dataset directory.
pub fn cmd_ingest_linqs(
    content: &Path,
    cites: &Path,
    out: &Path,
    split: &RandomSplit,
) -> Result<String> {
    create_dir(out)?;
    let (ds, dangling) = ingest_linqs(content, cites, out, split)?;
    let mut s = describe_dataset(&ds);
    let _ = writeln!(s, "dangling_citations={dangling}");
    Ok(s)
}
