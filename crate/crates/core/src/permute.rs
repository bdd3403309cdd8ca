//! Permissible permutations of the contribution tree.
//!
//! A randomized depth-first traversal with independently shuffled child
//! orders yields a preorder that satisfies both the level (subtree
//! contiguity) and precedence (ancestors first) constraints, and every such
//! permutation arises this way. The brute-force enumerator and the
//! constraint checker exist to test that equivalence.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tree::{ContributionTree, PlayerIdx};

/// Default player cap for [`enumerate_all_dfs`].
pub const DFS_ENUMERATION_CAP: usize = 10;
/// Player cap for [`enumerate_permissible_bruteforce`].
pub const BRUTE_FORCE_CAP: usize = 8;

/// The random stream for one traversal. Streams depend only on the master
/// seed and the traversal index, never on scheduling.
pub fn traversal_rng(master_seed: u64, traversal: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(traversal);
    rng
}

/// Per-depth truncation ratios. Entry `t - 1` applies to the children of
/// players at depth `t`; the dummy root's children are never truncated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TruncationRatios(Vec<f64>);

impl TruncationRatios {
    pub fn new(ratios: Vec<f64>) -> Result<Self> {
        if let Some(r) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!(
                "truncation ratio {r} is outside [0, 1)"
            )));
        }
        Ok(TruncationRatios(ratios))
    }

    /// No truncation at any depth.
    pub fn none() -> Self {
        TruncationRatios(Vec::new())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_off(&self) -> bool {
        self.0.iter().all(|&r| r == 0.0)
    }

    pub fn ratio_at(&self, depth: usize) -> f64 {
        depth
            .checked_sub(1)
            .and_then(|i| self.0.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    /// Number of evaluated children: `ceil((1 - r) * n)`.
    pub fn kept_children(&self, depth: usize, n: usize) -> usize {
        let r = self.ratio_at(depth);
        if r == 0.0 {
            return n;
        }
        // shave rounding noise so e.g. (1 - 0.7) * 10 gives 3, not 4
        let exact = (1.0 - r) * n as f64;
        ((exact - 1e-9).ceil().max(0.0) as usize).min(n)
    }
}

/// One sampled traversal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Traversal {
    /// Evaluated players in visiting order.
    pub order: Vec<PlayerIdx>,
    /// Players inside truncated subtrees; they are never visited.
    pub truncated: Vec<PlayerIdx>,
    /// Child permutations laid out like the tree: positions `0..num_roots`
    /// hold the dummy root's children, `children(p)` holds those of `p`.
    pub child_orders: Vec<PlayerIdx>,
    /// Evaluated-child count per player; children of `p` at positions
    /// `cuts[p]..` of its child order were truncated.
    pub cuts: Vec<usize>,
}

/// Samples a depth-first traversal with uniformly shuffled child orders.
///
/// Each visited player's full child list is shuffled before the truncation
/// cut is applied, so zero ratios consume the random stream exactly as an
/// untruncated traversal does.
pub fn sample_dfs_traversal<R: Rng + ?Sized>(
    tree: &ContributionTree,
    rng: &mut R,
    ratios: &TruncationRatios,
) -> Traversal {
    let n = tree.len();
    let mut child_orders: Vec<PlayerIdx> = (0..n).collect();
    let mut cuts: Vec<usize> = (0..n).map(|p| tree.child_count(p)).collect();
    let mut order = Vec::with_capacity(n);
    let mut truncated = Vec::new();

    child_orders[tree.roots()].shuffle(rng);
    let mut stack: Vec<PlayerIdx> = child_orders[tree.roots()].iter().rev().copied().collect();
    while let Some(p) = stack.pop() {
        order.push(p);
        let range = tree.children(p);
        if range.is_empty() {
            continue;
        }
        let slot = &mut child_orders[range.clone()];
        slot.shuffle(rng);
        let cut = ratios.kept_children(tree.depth(p), range.len());
        cuts[p] = cut;
        for &c in &slot[cut..] {
            truncated.extend(tree.subtree_players(c));
        }
        stack.extend(slot[..cut].iter().rev());
    }
    Traversal {
        order,
        truncated,
        child_orders,
        cuts,
    }
}

fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

/// All concatenations `blocks[0] ++ ... ++ blocks[k]` choosing one sequence
/// from each candidate list, in the given block order.
fn concatenations(choices: &[&Vec<Vec<PlayerIdx>>]) -> Vec<Vec<PlayerIdx>> {
    choices.iter().fold(vec![Vec::new()], |acc, options| {
        acc.iter()
            .flat_map(|prefix| {
                options.iter().map(move |o| {
                    let mut v = prefix.clone();
                    v.extend_from_slice(o);
                    v
                })
            })
            .collect()
    })
}

fn subtree_preorders(tree: &ContributionTree, p: PlayerIdx) -> Vec<Vec<PlayerIdx>> {
    let children: Vec<PlayerIdx> = tree.children(p).collect();
    let per_child: Vec<Vec<Vec<PlayerIdx>>> = children
        .iter()
        .map(|&c| subtree_preorders(tree, c))
        .collect();
    forest_preorders(&per_child)
        .into_iter()
        .map(|mut rest| {
            rest.insert(0, p);
            rest
        })
        .collect()
}

fn forest_preorders(per_child: &[Vec<Vec<PlayerIdx>>]) -> Vec<Vec<PlayerIdx>> {
    let idx: Vec<usize> = (0..per_child.len()).collect();
    permutations(&idx)
        .into_iter()
        .flat_map(|perm| {
            let choices: Vec<_> = perm.iter().map(|&i| &per_child[i]).collect();
            concatenations(&choices)
        })
        .collect()
}

/// Every distinct DFS preorder of the tree (dummy root removed).
pub fn enumerate_all_dfs(tree: &ContributionTree) -> Result<BTreeSet<Vec<PlayerIdx>>> {
    enumerate_all_dfs_capped(tree, DFS_ENUMERATION_CAP)
}

pub fn enumerate_all_dfs_capped(
    tree: &ContributionTree,
    cap: usize,
) -> Result<BTreeSet<Vec<PlayerIdx>>> {
    if tree.len() > cap {
        return Err(Error::Size(format!(
            "{} players exceeds the enumeration cap of {cap}",
            tree.len()
        )));
    }
    let per_root: Vec<_> = tree.roots().map(|r| subtree_preorders(tree, r)).collect();
    Ok(forest_preorders(&per_root).into_iter().collect())
}

/// Which constraint a violation broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Level,
    Precedence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub player: PlayerIdx,
    pub position: usize,
    pub kind: ConstraintKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintReport {
    pub level_ok: bool,
    pub precedence_ok: bool,
    /// The violating player at the earliest position, if any.
    pub first_violation: Option<Violation>,
}

impl ConstraintReport {
    pub fn permissible(&self) -> bool {
        self.level_ok && self.precedence_ok
    }
}

/// Checks a full permutation of the players against both constraints.
///
/// A level violation for `p` is reported at the first member of
/// `{p} ∪ D(p)` whose position lies more than `|D(p)|` past the block's
/// earliest member; a precedence violation at the earliest descendant placed
/// before `p`.
pub fn check_constraints(tree: &ContributionTree, perm: &[PlayerIdx]) -> Result<ConstraintReport> {
    let n = tree.len();
    if perm.len() != n {
        return Err(Error::Validation(format!(
            "sequence has {} entries for {n} players",
            perm.len()
        )));
    }
    let mut pos = vec![usize::MAX; n];
    for (i, &p) in perm.iter().enumerate() {
        if p >= n || pos[p] != usize::MAX {
            return Err(Error::Validation(format!(
                "entry {p} at position {i} is out of range or repeated"
            )));
        }
        pos[p] = i;
    }

    // subtree min/max positions, bottom-up (children have larger indices)
    let mut lo = pos.clone();
    let mut lo_desc = vec![usize::MAX; n];
    for p in (0..n).rev() {
        if let Some(q) = tree.parent(p) {
            lo[q] = lo[q].min(lo[p]);
            lo_desc[q] = lo_desc[q].min(lo[p]);
        }
    }

    let mut level_ok = true;
    let mut precedence_ok = true;
    let mut first: Option<Violation> = None;
    let mut note = |v: Violation| {
        if first.is_none_or(|f| v.position < f.position) {
            first = Some(v);
        }
    };
    for p in 0..n {
        let limit = lo[p] + tree.subtree_size(p) - 1;
        let members = tree.subtree_players(p);
        if let Some(&bad) = members
            .iter()
            .filter(|&&m| pos[m] > limit)
            .min_by_key(|&&m| pos[m])
        {
            level_ok = false;
            note(Violation {
                player: bad,
                position: pos[bad],
                kind: ConstraintKind::Level,
            });
        }
        if lo_desc[p] < pos[p] {
            precedence_ok = false;
            let bad = perm[lo_desc[p]];
            note(Violation {
                player: bad,
                position: lo_desc[p],
                kind: ConstraintKind::Precedence,
            });
        }
    }
    Ok(ConstraintReport {
        level_ok,
        precedence_ok,
        first_violation: first,
    })
}

/// Filters all `|P|!` permutations through [`check_constraints`].
pub fn enumerate_permissible_bruteforce(
    tree: &ContributionTree,
) -> Result<BTreeSet<Vec<PlayerIdx>>> {
    if tree.len() > BRUTE_FORCE_CAP {
        return Err(Error::Size(format!(
            "{} players exceeds the brute-force cap of {BRUTE_FORCE_CAP}",
            tree.len()
        )));
    }
    let players: Vec<PlayerIdx> = (0..tree.len()).collect();
    let mut out = BTreeSet::new();
    for perm in permutations(&players) {
        if check_constraints(tree, &perm)?.permissible() {
            out.insert(perm);
        }
    }
    Ok(out)
}

fn level_block<R: Rng + ?Sized>(
    tree: &ContributionTree,
    p: PlayerIdx,
    rng: &mut R,
) -> Vec<PlayerIdx> {
    let mut blocks = vec![vec![p]];
    blocks.extend(tree.children(p).map(|c| level_block(tree, c, rng)));
    blocks.shuffle(rng);
    blocks.concat()
}

/// A uniformly random permutation satisfying only the level constraint:
/// each player and its child subtrees form blocks shuffled as units.
pub fn sample_level_only<R: Rng + ?Sized>(tree: &ContributionTree, rng: &mut R) -> Vec<PlayerIdx> {
    let mut blocks: Vec<Vec<PlayerIdx>> = tree.roots().map(|r| level_block(tree, r, rng)).collect();
    blocks.shuffle(rng);
    blocks.concat()
}

/// A random topological order of the forest: at every step one player is
/// drawn uniformly from those whose parent is already placed.
pub fn sample_precedence_only<R: Rng + ?Sized>(
    tree: &ContributionTree,
    rng: &mut R,
) -> Vec<PlayerIdx> {
    let mut available: Vec<PlayerIdx> = tree.roots().collect();
    let mut order = Vec::with_capacity(tree.len());
    while !available.is_empty() {
        let i = rng.random_range(0..available.len());
        let p = available.swap_remove(i);
        order.push(p);
        available.extend(tree.children(p));
    }
    order
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;
    use crate::fixtures::{a_b_tree, flat, p3_tree, random_forest as random_tree};

    #[test]
    fn p3_traversals_are_the_two_dfs_orders() {
        let t = p3_tree();
        let mut seen = BTreeSet::new();
        for i in 0..200 {
            let tr = sample_dfs_traversal(&t, &mut traversal_rng(1, i), &TruncationRatios::none());
            assert!(tr.truncated.is_empty());
            seen.insert(tr.order);
        }
        let expected: BTreeSet<_> = [vec![0, 1, 2, 3], vec![0, 1, 3, 2]].into_iter().collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn single_player_traversal() {
        let t = flat(1);
        let tr = sample_dfs_traversal(&t, &mut traversal_rng(0, 0), &TruncationRatios::none());
        assert_eq!(tr.order, vec![0]);
    }

    #[test]
    fn depth_two_truncation_keeps_one_leaf() {
        let t = p3_tree();
        let ratios = TruncationRatios::new(vec![0.0, 0.5]).unwrap();
        for i in 0..50 {
            let tr = sample_dfs_traversal(&t, &mut traversal_rng(3, i), &ratios);
            assert_eq!(tr.order.len(), 3);
            assert_eq!(tr.truncated.len(), 1);
            assert!(tr.truncated[0] == 2 || tr.truncated[0] == 3);
            assert_eq!(tr.cuts[1], 1);
        }
    }

    #[test]
    fn ratio_validation() {
        assert!(TruncationRatios::new(vec![1.0]).is_err());
        assert!(TruncationRatios::new(vec![-0.1]).is_err());
        assert!(TruncationRatios::new(vec![0.0, 0.99]).is_ok());
    }

    #[test]
    fn kept_children_rounding() {
        let r = TruncationRatios::new(vec![0.7, 0.5]).unwrap();
        assert_eq!(r.kept_children(1, 10), 3);
        assert_eq!(r.kept_children(1, 1), 1);
        assert_eq!(r.kept_children(2, 3), 2);
        assert_eq!(r.kept_children(3, 4), 4);
    }

    #[test]
    fn zero_ratios_match_untruncated_stream() {
        let t = random_tree(40, 9);
        for i in 0..20 {
            let a = sample_dfs_traversal(&t, &mut traversal_rng(5, i), &TruncationRatios::none());
            let b = sample_dfs_traversal(
                &t,
                &mut traversal_rng(5, i),
                &TruncationRatios::new(vec![0.0, 0.0]).unwrap(),
            );
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dfs_enumeration_counts() {
        assert_eq!(enumerate_all_dfs(&p3_tree()).unwrap().len(), 2);
        assert_eq!(enumerate_all_dfs(&flat(2)).unwrap().len(), 2);
        assert_eq!(enumerate_all_dfs(&a_b_tree()).unwrap().len(), 4);
        assert!(matches!(enumerate_all_dfs(&flat(11)), Err(Error::Size(_))));
    }

    #[test]
    fn bruteforce_matches_on_fixtures() {
        assert_eq!(
            enumerate_permissible_bruteforce(&p3_tree()).unwrap(),
            enumerate_all_dfs(&p3_tree()).unwrap()
        );
        assert_eq!(enumerate_permissible_bruteforce(&flat(3)).unwrap().len(), 6);
        let ab = a_b_tree();
        let brute = enumerate_permissible_bruteforce(&ab).unwrap();
        assert_eq!(brute.len(), 4);
        assert_eq!(brute, enumerate_all_dfs(&ab).unwrap());
        assert!(enumerate_permissible_bruteforce(&flat(9)).is_err());
    }

    #[test]
    fn level_violation_reported_at_block_end() {
        // p=0 with D(p) = {a=2, b=3}; x=1 is a separate root
        let t =
            ContributionTree::from_forest(&[0, 1, 2, 3], &[None, None, Some(0), Some(0)]).unwrap();
        let r = check_constraints(&t, &[0, 1, 2, 3]).unwrap();
        assert!(!r.level_ok);
        assert!(r.precedence_ok);
        assert_eq!(
            r.first_violation,
            Some(Violation {
                player: 3,
                position: 3,
                kind: ConstraintKind::Level
            })
        );
    }

    #[test]
    fn precedence_violation_reported_at_descendant() {
        // p=0 with children a=1, b=2; order [a, p, b]
        let t = ContributionTree::from_forest(&[0, 1, 2], &[None, Some(0), Some(0)]).unwrap();
        let r = check_constraints(&t, &[1, 0, 2]).unwrap();
        assert!(r.level_ok);
        assert!(!r.precedence_ok);
        assert_eq!(
            r.first_violation,
            Some(Violation {
                player: 1,
                position: 0,
                kind: ConstraintKind::Precedence
            })
        );
    }

    #[test]
    fn non_permutation_rejected() {
        let t = p3_tree();
        assert!(check_constraints(&t, &[0, 1, 2]).is_err());
        assert!(check_constraints(&t, &[0, 1, 1, 2]).is_err());
    }

    /// Enumerates permutations satisfying exactly the requested constraint.
    fn satisfying(t: &ContributionTree, level: bool) -> BTreeSet<Vec<PlayerIdx>> {
        let players: Vec<_> = (0..t.len()).collect();
        permutations(&players)
            .into_iter()
            .filter(|p| {
                let r = check_constraints(t, p).unwrap();
                if level {
                    r.level_ok
                } else {
                    r.precedence_ok
                }
            })
            .collect()
    }

    #[test]
    fn level_only_sampler_covers_level_permutations() {
        let t = p3_tree();
        let target = satisfying(&t, true);
        assert_eq!(target.len(), 12);
        let mut seen = BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let p = sample_level_only(&t, &mut rng);
            assert!(check_constraints(&t, &p).unwrap().level_ok);
            seen.insert(p);
        }
        assert_eq!(seen, target);
        assert!(seen.contains(&vec![2, 3, 1, 0]));
        assert!(seen
            .iter()
            .any(|p| !check_constraints(&t, p).unwrap().precedence_ok));
    }

    #[test]
    fn precedence_only_sampler_covers_topological_orders() {
        let t = p3_tree();
        let target = satisfying(&t, false);
        assert_eq!(target.len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let seen: BTreeSet<_> = (0..500)
            .map(|_| sample_precedence_only(&t, &mut rng))
            .collect();
        assert_eq!(seen, target);

        // interleaving across roots is possible on a multi-root tree
        let ab = a_b_tree();
        let seen: BTreeSet<_> = (0..500)
            .map(|_| sample_precedence_only(&ab, &mut rng))
            .collect();
        assert_eq!(seen, satisfying(&ab, false));
        assert!(seen.contains(&vec![0, 2, 1, 3]));
    }

    #[test]
    fn flat_tree_samplers_cover_all_orders() {
        let t = flat(3);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a: BTreeSet<_> = (0..500).map(|_| sample_level_only(&t, &mut rng)).collect();
        let b: BTreeSet<_> = (0..500)
            .map(|_| sample_precedence_only(&t, &mut rng))
            .collect();
        assert_eq!(a.len(), 6);
        assert_eq!(b.len(), 6);
    }

    #[test]
    fn child_orders_are_range_permutations() {
        let t = random_tree(30, 2);
        let tr = sample_dfs_traversal(&t, &mut traversal_rng(0, 0), &TruncationRatios::none());
        let mut sorted = tr.child_orders.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..t.len()).collect::<Vec<_>>());
        for p in 0..t.len() {
            let mut slot = tr.child_orders[t.children(p)].to_vec();
            slot.sort_unstable();
            assert_eq!(slot, t.children(p).collect::<Vec<_>>());
        }
    }

    #[test]
    fn dfs_orders_uniform_on_forest_fixture() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let t = a_b_tree();
        let mut counts: BTreeMap<Vec<PlayerIdx>, u32> = BTreeMap::new();
        let samples = 10_000;
        for i in 0..samples {
            let tr = sample_dfs_traversal(&t, &mut traversal_rng(99, i), &TruncationRatios::none());
            *counts.entry(tr.order).or_default() += 1;
        }
        assert_eq!(counts.len(), 4);
        let expected = samples as f64 / 4.0;
        let stat: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
        assert!(p > 0.001, "chi-square {stat}, p = {p}");
    }

    proptest! {
        #[test]
        fn sampled_traversals_are_permissible(n in 1usize..=60, seed in any::<u64>()) {
            let t = random_tree(n, seed);
            for i in 0..20 {
                let tr = sample_dfs_traversal(&t, &mut traversal_rng(seed, i), &TruncationRatios::none());
                prop_assert!(check_constraints(&t, &tr.order).unwrap().permissible());
            }
        }

        #[test]
        fn truncated_traversal_partitions_players(n in 1usize..=40, seed in any::<u64>()) {
            let t = random_tree(n, seed);
            let ratios = TruncationRatios::new(vec![0.5, 0.7]).unwrap();
            let tr = sample_dfs_traversal(&t, &mut traversal_rng(seed, 0), &ratios);
            let mut all: Vec<_> = tr.order.iter().chain(&tr.truncated).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            // every evaluated player's parent was evaluated earlier
            let mut placed = vec![false; n];
            for &p in &tr.order {
                if let Some(q) = t.parent(p) {
                    prop_assert!(placed[q]);
                }
                placed[p] = true;
            }
        }

        #[test]
        fn dfs_enumeration_equals_bruteforce(n in 1usize..=7, seed in any::<u64>()) {
            let t = random_tree(n, seed);
            prop_assert_eq!(enumerate_all_dfs(&t).unwrap(), enumerate_permissible_bruteforce(&t).unwrap());
        }
    }
}
