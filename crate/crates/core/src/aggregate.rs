//! Node and edge values from player values, and the value-table files.
//!
//! Every table file starts with a `# dataset_sha256=<hex>` line binding it to
//! the dataset it was computed on.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{write_with, NodeId};
use crate::tree::{ContributionTree, PlayerId};

pub type NodeValueTable = BTreeMap<NodeId, f64>;
/// Keys are `(u, v)` with `u < v`.
pub type EdgeValueTable = BTreeMap<(NodeId, NodeId), f64>;

const HASH_PREFIX: &str = "# dataset_sha256=";

fn check_len(tree: &ContributionTree, values: &[f64]) -> Result<()> {
    if values.len() != tree.len() {
        return Err(Error::Validation(format!(
            "{} values for {} players",
            values.len(),
            tree.len()
        )));
    }
    Ok(())
}

/// Sums player values over all duplicates of each node.
pub fn node_values(tree: &ContributionTree, values: &[f64]) -> Result<NodeValueTable> {
    check_len(tree, values)?;
    let mut out = NodeValueTable::new();
    for (p, &v) in values.iter().enumerate() {
        *out.entry(tree.player_node(p)).or_default() += v;
    }
    Ok(out)
}

/// Sums player values by the graph edge joining each player to its parent.
/// Root players belong to no edge.
pub fn edge_values(tree: &ContributionTree, values: &[f64]) -> Result<EdgeValueTable> {
    check_len(tree, values)?;
    let mut out = EdgeValueTable::new();
    for (p, &v) in values.iter().enumerate() {
        if let Some((a, b)) = tree.player_edge(p) {
            *out.entry((a.min(b), a.max(b))).or_default() += v;
        }
    }
    Ok(out)
}

/// Node and edge tables from the player rows of a values file, using the
/// path in each row's id.
pub fn from_player_rows(rows: &[ValueRow]) -> Result<(NodeValueTable, EdgeValueTable)> {
    let mut nodes = NodeValueTable::new();
    let mut edges = EdgeValueTable::new();
    for row in rows.iter().filter(|r| r.entity_type == EntityType::Player) {
        let id: PlayerId = row.entity_id.parse()?;
        if id.0.is_empty() {
            return Err(Error::Validation("empty player path".into()));
        }
        *nodes.entry(id.node()).or_default() += row.value;
        if let Some(e) = id.edge() {
            *edges.entry(e).or_default() += row.value;
        }
    }
    Ok((nodes, edges))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Player,
    Node,
    Edge,
}

/// One row of `values.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueRow {
    pub entity_type: EntityType,
    pub entity_id: String,
    pub value: f64,
    pub count: u64,
}

#[derive(Serialize, Deserialize)]
struct NodeRow {
    node_id: NodeId,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    u: NodeId,
    v: NodeId,
    value: f64,
}

fn write_table<T: Serialize>(
    path: &Path,
    dataset_hash: &str,
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "{HASH_PREFIX}{dataset_hash}")?;
        let mut csv = csv::Writer::from_writer(w);
        for row in rows {
            csv.serialize(row).map_err(std::io::Error::other)?;
        }
        csv.flush()
    })
}

pub fn write_values_csv(path: &Path, dataset_hash: &str, rows: &[ValueRow]) -> Result<()> {
    write_table(path, dataset_hash, rows)
}

pub fn write_node_values(path: &Path, dataset_hash: &str, table: &NodeValueTable) -> Result<()> {
    write_table(
        path,
        dataset_hash,
        table
            .iter()
            .map(|(&node_id, &value)| NodeRow { node_id, value }),
    )
}

pub fn write_edge_values(path: &Path, dataset_hash: &str, table: &EdgeValueTable) -> Result<()> {
    write_table(
        path,
        dataset_hash,
        table
            .iter()
            .map(|(&(u, v), &value)| EdgeRow { u, v, value }),
    )
}

/// Reads a table file; returns the recorded dataset hash, if any.
fn read_table<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Option<String>, Vec<T>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let hash = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix(HASH_PREFIX))
        .map(|h| h.trim().to_string());
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize().enumerate() {
        let row = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(i + 2, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok((hash, rows))
}

pub fn read_values_csv(path: &Path) -> Result<(Option<String>, Vec<ValueRow>)> {
    read_table(path)
}

pub fn read_node_values(path: &Path) -> Result<(Option<String>, NodeValueTable)> {
    let (hash, rows) = read_table::<NodeRow>(path)?;
    Ok((
        hash,
        rows.into_iter().map(|r| (r.node_id, r.value)).collect(),
    ))
}

pub fn read_edge_values(path: &Path) -> Result<(Option<String>, EdgeValueTable)> {
    let (hash, rows) = read_table::<EdgeRow>(path)?;
    Ok((
        hash,
        rows.into_iter()
            .map(|r| ((r.u.min(r.v), r.u.max(r.v)), r.value))
            .collect(),
    ))
}
