//! The contribution tree: every labeled training node's K-level computation
//! tree, joined under a dummy root.
//!
//! Players are stored in breadth-first order, which makes each player's
//! children a contiguous index range and makes the dense player index stable
//! for a fixed (graph, split, K).

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{write_with, InductiveView, NodeId};

/// Dense player index in `[0, |P|)`.
pub type PlayerIdx = usize;

const NO_PARENT: u32 = u32::MAX;

/// A player identified by its path from the labeled root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlayerId(pub Vec<NodeId>);

impl PlayerId {
    /// The graph node this player duplicates.
    pub fn node(&self) -> NodeId {
        *self.0.last().expect("player paths are nonempty")
    }

    /// The (unordered) graph edge to the parent player, absent for roots.
    pub fn edge(&self) -> Option<(NodeId, NodeId)> {
        match self.0.as_slice() {
            [.., a, b] => Some(((*a).min(*b), (*a).max(*b))),
            _ => None,
        }
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for PlayerId {
    type Err = Error;

    /// Parses the `/`-joined path written by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let path = s
            .split('/')
            .map(|t| {
                t.trim()
                    .parse::<NodeId>()
                    .map_err(|_| Error::Validation(format!("bad player path {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PlayerId(path))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContributionTree {
    node: Vec<NodeId>,
    parent: Vec<u32>,
    depth: Vec<u8>,
    child_start: Vec<u32>,
    subtree: Vec<u32>,
    num_roots: usize,
    levels: usize,
}

impl ContributionTree {
    /// Expands each labeled node's neighborhood `levels` hops deep in the
    /// training view. Every neighbor becomes a child, including the node the
    /// path just came from; children are ordered by ascending node id.
    pub fn build(train: &InductiveView, labeled: &[NodeId], levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("tree depth K must be at least 1".into()));
        }
        if levels >= u8::MAX as usize {
            return Err(Error::Config(format!("tree depth {levels} is too large")));
        }
        if labeled.is_empty() {
            return Err(Error::Validation("no labeled training nodes".into()));
        }
        let mut roots = labeled.to_vec();
        roots.sort_unstable();
        roots.dedup();
        if let Some(&bad) = roots.iter().find(|&&r| !train.contains(r)) {
            return Err(Error::Validation(format!(
                "labeled node {bad} is not in the training view"
            )));
        }

        let mut node = roots.clone();
        let mut parent = vec![NO_PARENT; roots.len()];
        let mut depth = vec![1u8; roots.len()];
        let mut child_start = Vec::with_capacity(roots.len() + 1);
        let mut p = 0;
        while p < node.len() {
            child_start.push(node.len() as u32);
            if (depth[p] as usize) <= levels {
                let nbrs = train.neighbors(node[p])?;
                if node.len() + nbrs.len() > u32::MAX as usize - 1 {
                    return Err(Error::Size("contribution tree exceeds u32 indexing".into()));
                }
                for &v in nbrs {
                    node.push(v);
                    parent.push(p as u32);
                    depth.push(depth[p] + 1);
                }
            }
            p += 1;
        }
        child_start.push(node.len() as u32);
        Ok(Self::finish(
            node,
            parent,
            depth,
            child_start,
            roots.len(),
            levels,
        ))
    }

    /// Builds a tree from explicit parent links. Input must already be in
    /// breadth-first layout: all roots first, then parents non-decreasing and
    /// each parent preceding its children.
    pub fn from_forest(nodes: &[NodeId], parents: &[Option<usize>]) -> Result<Self> {
        if nodes.len() != parents.len() {
            return Err(Error::Validation(
                "nodes and parents differ in length".into(),
            ));
        }
        let num_roots = parents.iter().take_while(|p| p.is_none()).count();
        if num_roots == 0 {
            return Err(Error::Validation("forest has no roots".into()));
        }
        let mut last = 0;
        for (i, p) in parents.iter().enumerate().skip(num_roots) {
            let Some(p) = *p else {
                return Err(Error::Validation(format!(
                    "root {i} listed after non-roots"
                )));
            };
            if p >= i || p < last {
                return Err(Error::Validation(format!(
                    "player {i} has parent {p}; input is not in breadth-first layout"
                )));
            }
            last = p;
        }
        let n = nodes.len();
        let mut depth = vec![1u8; n];
        let mut child_start = vec![0u32; n + 1];
        let mut counts = vec![0u32; n];
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                depth[i] = depth[p] + 1;
                counts[p] += 1;
            }
        }
        // children of p start after all children of earlier players
        let mut next = num_roots as u32;
        for p in 0..n {
            child_start[p] = next;
            next += counts[p];
        }
        child_start[n] = next;
        let levels = depth.iter().copied().max().unwrap_or(1) as usize - 1;
        let parent = parents
            .iter()
            .map(|p| p.map_or(NO_PARENT, |p| p as u32))
            .collect();
        Ok(Self::finish(
            nodes.to_vec(),
            parent,
            depth,
            child_start,
            num_roots,
            levels.max(1),
        ))
    }

    fn finish(
        node: Vec<NodeId>,
        parent: Vec<u32>,
        depth: Vec<u8>,
        child_start: Vec<u32>,
        num_roots: usize,
        levels: usize,
    ) -> Self {
        let n = node.len();
        let mut subtree = vec![1u32; n];
        for p in (0..n).rev() {
            if parent[p] != NO_PARENT {
                subtree[parent[p] as usize] += subtree[p];
            }
        }
        ContributionTree {
            node,
            parent,
            depth,
            child_start,
            subtree,
            num_roots,
            levels,
        }
    }

    /// Number of players |P|.
    pub fn len(&self) -> usize {
        self.node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.is_empty()
    }

    /// The K this tree was built for.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Labeled-root players, i.e. children of the dummy root.
    pub fn roots(&self) -> Range<PlayerIdx> {
        0..self.num_roots
    }

    pub fn num_roots(&self) -> usize {
        self.num_roots
    }

    pub fn children(&self, p: PlayerIdx) -> Range<PlayerIdx> {
        self.child_start[p] as usize..self.child_start[p + 1] as usize
    }

    pub fn child_count(&self, p: PlayerIdx) -> usize {
        (self.child_start[p + 1] - self.child_start[p]) as usize
    }

    pub fn parent(&self, p: PlayerIdx) -> Option<PlayerIdx> {
        match self.parent[p] {
            NO_PARENT => None,
            q => Some(q as usize),
        }
    }

    /// 1 for labeled roots, increasing downwards.
    pub fn depth(&self, p: PlayerIdx) -> usize {
        self.depth[p] as usize
    }

    /// The labeled-root ancestor of `p` (itself for roots).
    pub fn root_of(&self, mut p: PlayerIdx) -> PlayerIdx {
        while let Some(q) = self.parent(p) {
            p = q;
        }
        p
    }

    pub fn player_node(&self, p: PlayerIdx) -> NodeId {
        self.node[p]
    }

    /// `{node(p), node(parent(p))}` with the smaller id first.
    pub fn player_edge(&self, p: PlayerIdx) -> Option<(NodeId, NodeId)> {
        self.parent(p).map(|q| {
            let (a, b) = (self.node[p], self.node[q]);
            (a.min(b), a.max(b))
        })
    }

    pub fn subtree_size(&self, p: PlayerIdx) -> usize {
        self.subtree[p] as usize
    }

    /// |D(p)|.
    pub fn descendants_count(&self, p: PlayerIdx) -> Result<usize> {
        if p >= self.len() {
            return Err(Error::Lookup(format!("player {p} is not in the tree")));
        }
        Ok(self.subtree_size(p) - 1)
    }

    pub fn is_ancestor(&self, ancestor: PlayerIdx, mut p: PlayerIdx) -> bool {
        while let Some(q) = self.parent(p) {
            if q == ancestor {
                return true;
            }
            p = q;
        }
        false
    }

    pub fn player_id(&self, mut p: PlayerIdx) -> PlayerId {
        let mut path = vec![self.node[p]];
        while let Some(q) = self.parent(p) {
            path.push(self.node[q]);
            p = q;
        }
        path.reverse();
        PlayerId(path)
    }

    /// Index of the player with this path.
    pub fn find(&self, id: &PlayerId) -> Option<PlayerIdx> {
        let (first, rest) = id.0.split_first()?;
        let mut p = self.roots().find(|&r| self.node[r] == *first)?;
        for step in rest {
            p = self.children(p).find(|&c| self.node[c] == *step)?;
        }
        Some(p)
    }

    /// Players of the subtree rooted at `p` (including `p`), in a fixed
    /// preorder.
    pub fn subtree_players(&self, p: PlayerIdx) -> Vec<PlayerIdx> {
        let mut out = Vec::with_capacity(self.subtree_size(p));
        let mut stack = vec![p];
        while let Some(q) = stack.pop() {
            out.push(q);
            stack.extend(self.children(q).rev());
        }
        out
    }

    /// Writes `players.csv` (`player_index,path`).
    pub fn write_players_csv(&self, path: &Path) -> Result<()> {
        write_with(path, |w| {
            writeln!(w, "player_index,path")?;
            for p in 0..self.len() {
                writeln!(w, "{p},{}", self.player_id(p))?;
            }
            Ok(())
        })
    }
}
