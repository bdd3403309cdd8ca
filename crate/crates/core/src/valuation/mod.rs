//! Player valuation: the streaming PC-Winter estimator, exact oracles for
//! small games, and baseline valuation methods.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::permute::{
    enumerate_permissible_bruteforce, sample_dfs_traversal, sample_level_only,
    sample_precedence_only, traversal_rng, TruncationRatios, BRUTE_FORCE_CAP,
};
use crate::tree::{ContributionTree, PlayerIdx};
use crate::utility::{PropagationState, SgcUtility};

pub mod baselines;
pub mod checkpoint;

pub use baselines::*;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

/// A cooperative game over tree players that is evaluated by growing a
/// coalition one player at a time.
pub trait Game: Sync {
    type State: Send;

    fn new_state(&self) -> Self::State;
    fn reset(&self, state: &mut Self::State);
    fn insert(&self, state: &mut Self::State, p: PlayerIdx) -> Result<()>;
    fn value(&self, state: &Self::State) -> Result<f64>;
}

impl Game for SgcUtility {
    type State = PropagationState;

    fn new_state(&self) -> PropagationState {
        SgcUtility::new_state(self)
    }

    fn reset(&self, state: &mut PropagationState) {
        state.clear();
    }

    fn insert(&self, state: &mut PropagationState, p: PlayerIdx) -> Result<()> {
        state.insert_player(p)
    }

    fn value(&self, state: &PropagationState) -> Result<f64> {
        self.utility(state)
    }
}

/// A game given by a function of the membership mask.
pub struct FnGame<F> {
    players: usize,
    f: F,
}

impl<F: Fn(&[bool]) -> f64 + Sync> FnGame<F> {
    pub fn new(players: usize, f: F) -> Self {
        FnGame { players, f }
    }
}

impl<F: Fn(&[bool]) -> f64 + Sync> Game for FnGame<F> {
    type State = Vec<bool>;

    fn new_state(&self) -> Vec<bool> {
        vec![false; self.players]
    }

    fn reset(&self, state: &mut Vec<bool>) {
        state.iter_mut().for_each(|x| *x = false);
    }

    fn insert(&self, state: &mut Vec<bool>, p: PlayerIdx) -> Result<()> {
        match state.get_mut(p) {
            None => Err(Error::Lookup(format!("player {p} is not in the game"))),
            Some(true) => Err(Error::State(format!("player {p} is already included"))),
            Some(slot) => {
                *slot = true;
                Ok(())
            }
        }
    }

    fn value(&self, state: &Vec<bool>) -> Result<f64> {
        Ok((self.f)(state))
    }
}

/// Per-player running sums and counts of recorded marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueAccumulator {
    pub sums: Vec<f64>,
    pub counts: Vec<u64>,
    pub traversals: u64,
    pub retrainings: u64,
    pub seed: u64,
}

impl ValueAccumulator {
    pub fn new(players: usize, seed: u64) -> Self {
        ValueAccumulator {
            sums: vec![0.0; players],
            counts: vec![0; players],
            traversals: 0,
            retrainings: 0,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    pub fn value(&self, p: PlayerIdx) -> f64 {
        match self.counts[p] {
            0 => 0.0,
            c => self.sums[p] / c as f64,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|p| self.value(p)).collect()
    }

    fn merge(&mut self, t: &TraversalOutcome) {
        for &(p, m) in &t.marginals {
            self.sums[p] += m;
            self.counts[p] += 1;
        }
        self.traversals += 1;
        self.retrainings += t.retrainings;
    }
}

/// Relative-change convergence test over a sliding window of snapshots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceConfig {
    pub window: usize,
    pub tolerance: f64,
    pub epsilon: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            window: 20,
            tolerance: 0.05,
            epsilon: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceMonitor {
    pub config: ConvergenceConfig,
    history: VecDeque<Vec<f64>>,
    last: Option<u64>,
    converged_at: Option<u64>,
}

impl ConvergenceMonitor {
    pub fn new(config: ConvergenceConfig) -> Result<Self> {
        if config.window == 0 {
            return Err(Error::Config(
                "convergence window must be at least 1".into(),
            ));
        }
        if !(config.tolerance.is_finite() && config.tolerance > 0.0)
            || !(config.epsilon.is_finite() && config.epsilon >= 0.0)
        {
            return Err(Error::Config(
                "convergence tolerance must be positive and epsilon nonnegative".into(),
            ));
        }
        Ok(ConvergenceMonitor {
            config,
            history: VecDeque::with_capacity(config.window + 1),
            last: None,
            converged_at: None,
        })
    }

    /// Records the values after traversal `t` (1-based) and reports whether
    /// the mean relative change against traversal `t - window` is below the
    /// tolerance. Players with `|v| < epsilon` are ignored; with none left
    /// the stream is not considered converged.
    pub fn observe(&mut self, t: u64, values: &[f64]) -> bool {
        self.history.push_back(values.to_vec());
        if self.history.len() > self.config.window + 1 {
            self.history.pop_front();
        }
        self.last = Some(t);
        if self.history.len() <= self.config.window {
            return false;
        }
        let old = &self.history[0];
        let (mut total, mut n) = (0.0, 0usize);
        for (now, before) in values.iter().zip(old) {
            if now.abs() >= self.config.epsilon {
                total += (now - before).abs() / now.abs();
                n += 1;
            }
        }
        let converged = n > 0 && total / (n as f64) < self.config.tolerance;
        if converged && self.converged_at.is_none() {
            self.converged_at = Some(t);
        }
        converged
    }

    pub fn converged_at(&self) -> Option<u64> {
        self.converged_at
    }

    pub fn last_traversal(&self) -> Option<u64> {
        self.last
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.history.iter()
    }

    pub(crate) fn restore(
        config: ConvergenceConfig,
        history: Vec<Vec<f64>>,
        last: Option<u64>,
        converged_at: Option<u64>,
    ) -> Self {
        ConvergenceMonitor {
            config,
            history: history.into(),
            last,
            converged_at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunBudget {
    pub max_traversals: Option<u64>,
    pub max_wall_clock: Option<Duration>,
}

/// Which family of permutations a run samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampler {
    /// Depth-first traversals: both constraints.
    #[default]
    Dfs,
    /// Level constraint only.
    LevelOnly,
    /// Precedence constraint only.
    PrecedenceOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub sampler: Sampler,
    pub ratios: TruncationRatios,
    pub budget: RunBudget,
    pub convergence: ConvergenceConfig,
    pub stop_on_convergence: bool,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            sampler: Sampler::Dfs,
            ratios: TruncationRatios::none(),
            budget: RunBudget::default(),
            convergence: ConvergenceConfig::default(),
            stop_on_convergence: true,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget.max_traversals == Some(0) {
            return Err(Error::Config("traversal budget must be at least 1".into()));
        }
        if self.budget.max_wall_clock == Some(Duration::ZERO) {
            return Err(Error::Config("wall-clock budget must be positive".into()));
        }
        if self.budget.max_traversals.is_none()
            && self.budget.max_wall_clock.is_none()
            && !self.stop_on_convergence
        {
            return Err(Error::Config("run has no stopping condition".into()));
        }
        if self.sampler != Sampler::Dfs && !self.ratios.is_off() {
            return Err(Error::Config(
                "truncation ratios apply only to depth-first sampling".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxTraversals,
    WallClock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub traversals: u64,
    pub new_traversals: u64,
    pub retrainings: u64,
    pub retrainings_per_traversal: f64,
    pub converged: bool,
    pub converged_at: Option<u64>,
    pub stop: StopReason,
    pub wall_time: Duration,
}

/// Accumulator plus convergence history: everything needed to continue.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub acc: ValueAccumulator,
    pub monitor: ConvergenceMonitor,
}

impl RunState {
    pub fn new(players: usize, cfg: &EstimatorConfig) -> Result<Self> {
        Ok(RunState {
            acc: ValueAccumulator::new(players, cfg.seed),
            monitor: ConvergenceMonitor::new(cfg.convergence)?,
        })
    }
}

/// Marginals recorded in one traversal, in recording order.
#[derive(Debug, Clone, Default)]
pub struct TraversalOutcome {
    pub marginals: Vec<(PlayerIdx, f64)>,
    pub retrainings: u64,
}

struct Worker<S> {
    inner: S,
    attached: Vec<bool>,
    seen: Vec<bool>,
}

impl<S> Worker<S> {
    fn new<G: Game<State = S>>(game: &G, players: usize) -> Self {
        Worker {
            inner: game.new_state(),
            attached: vec![false; players],
            seen: vec![false; players],
        }
    }
}

/// Inserts `p` into the inner coalition once it is connected to a root,
/// together with any already-seen descendants waiting on it. Returns whether
/// the inner coalition changed.
fn attach<G: Game>(
    game: &G,
    tree: &ContributionTree,
    w: &mut Worker<G::State>,
    p: PlayerIdx,
) -> Result<bool> {
    w.seen[p] = true;
    if tree.parent(p).is_some_and(|q| !w.attached[q]) {
        return Ok(false);
    }
    let mut stack = vec![p];
    while let Some(x) = stack.pop() {
        game.insert(&mut w.inner, x)?;
        w.attached[x] = true;
        stack.extend(
            tree.children(x)
                .rev()
                .filter(|&c| w.seen[c] && !w.attached[c]),
        );
    }
    Ok(true)
}

/// Runs traversal `t` of the stream seeded by `seed`.
pub fn run_traversal<G: Game>(
    game: &G,
    tree: &ContributionTree,
    cfg: &EstimatorConfig,
    empty_value: f64,
    t: u64,
) -> Result<TraversalOutcome> {
    let mut w = Worker::new(game, tree.len());
    traversal_with(game, tree, cfg, empty_value, t, &mut w)
}

fn traversal_with<G: Game>(
    game: &G,
    tree: &ContributionTree,
    cfg: &EstimatorConfig,
    empty_value: f64,
    t: u64,
    w: &mut Worker<G::State>,
) -> Result<TraversalOutcome> {
    game.reset(&mut w.inner);
    let mut rng = traversal_rng(cfg.seed, t);
    let mut out = TraversalOutcome::default();
    let mut prev = empty_value;
    match cfg.sampler {
        Sampler::Dfs => {
            let tr = sample_dfs_traversal(tree, &mut rng, &cfg.ratios);
            out.marginals.reserve(tree.len());
            for &p in &tr.order {
                game.insert(&mut w.inner, p)?;
                let u = game.value(&w.inner)?;
                out.retrainings += 1;
                out.marginals.push((p, u - prev));
                prev = u;
            }
            out.marginals.extend(tr.truncated.iter().map(|&p| (p, 0.0)));
        }
        Sampler::LevelOnly | Sampler::PrecedenceOnly => {
            let order = if cfg.sampler == Sampler::LevelOnly {
                sample_level_only(tree, &mut rng)
            } else {
                sample_precedence_only(tree, &mut rng)
            };
            w.attached.iter_mut().for_each(|x| *x = false);
            w.seen.iter_mut().for_each(|x| *x = false);
            for &p in &order {
                let m = if attach(game, tree, w, p)? {
                    let u = game.value(&w.inner)?;
                    out.retrainings += 1;
                    let m = u - prev;
                    prev = u;
                    m
                } else {
                    0.0
                };
                out.marginals.push((p, m));
            }
        }
    }
    Ok(out)
}

/// Streams traversals until convergence or the budget runs out, continuing
/// from `state`. Traversals run in parallel and are merged in index order,
/// so results do not depend on the thread count or on interruptions.
pub fn run_pc_winter<G: Game>(
    game: &G,
    tree: &ContributionTree,
    cfg: &EstimatorConfig,
    state: &mut RunState,
) -> Result<RunReport> {
    run_pc_winter_with(game, tree, cfg, state, |_| Ok(()))
}

/// [`run_pc_winter`] calling `on_chunk` after every merged batch of
/// traversals, e.g. to write a checkpoint.
pub fn run_pc_winter_with<G: Game>(
    game: &G,
    tree: &ContributionTree,
    cfg: &EstimatorConfig,
    state: &mut RunState,
    mut on_chunk: impl FnMut(&RunState) -> Result<()>,
) -> Result<RunReport> {
    cfg.validate()?;
    if state.acc.len() != tree.len() {
        return Err(Error::Integrity(format!(
            "accumulator has {} players, tree has {}",
            state.acc.len(),
            tree.len()
        )));
    }
    if state.acc.seed != cfg.seed {
        return Err(Error::Integrity(format!(
            "accumulator seed {} differs from run seed {}",
            state.acc.seed, cfg.seed
        )));
    }
    let start = Instant::now();
    let first = state.acc.traversals;
    let empty_value = game.value(&game.new_state())?;
    let chunk = (rayon::current_num_threads() * 4).max(1) as u64;

    let stop = loop {
        if cfg.stop_on_convergence && state.monitor.converged_at().is_some() {
            break StopReason::Converged;
        }
        let done = state.acc.traversals;
        if cfg.budget.max_traversals.is_some_and(|m| done >= m) {
            break StopReason::MaxTraversals;
        }
        if cfg
            .budget
            .max_wall_clock
            .is_some_and(|limit| start.elapsed() >= limit)
        {
            break StopReason::WallClock;
        }
        let end = match cfg.budget.max_traversals {
            Some(m) => (done + chunk).min(m),
            None => done + chunk,
        };
        let outcomes: Vec<TraversalOutcome> = (done..end)
            .into_par_iter()
            .map_init(
                || Worker::new(game, tree.len()),
                |w, t| {
                    traversal_with(game, tree, cfg, empty_value, t, w).inspect_err(|e| {
                        log::error!("traversal {t} failed: {e}");
                    })
                },
            )
            .collect::<Result<_>>()?;
        for o in &outcomes {
            state.acc.merge(o);
            let values = state.acc.values();
            let converged = state.monitor.observe(state.acc.traversals, &values);
            if converged && cfg.stop_on_convergence {
                break;
            }
        }
        on_chunk(state)?;
        log::debug!(
            "{} traversals merged, {:.1}s elapsed",
            state.acc.traversals,
            start.elapsed().as_secs_f64()
        );
    };

    let traversals = state.acc.traversals;
    Ok(RunReport {
        traversals,
        new_traversals: traversals - first,
        retrainings: state.acc.retrainings,
        retrainings_per_traversal: if traversals == 0 {
            0.0
        } else {
            state.acc.retrainings as f64 / traversals as f64
        },
        converged: state.monitor.converged_at().is_some(),
        converged_at: state.monitor.converged_at(),
        stop,
        wall_time: start.elapsed(),
    })
}

/// Average marginal over every permissible permutation of a small tree.
pub fn exact_pc_winter<G: Game>(game: &G, tree: &ContributionTree) -> Result<Vec<f64>> {
    let orders = enumerate_permissible_bruteforce(tree)?;
    average_marginals(game, tree.len(), orders.iter().map(Vec::as_slice))
}

/// Average marginal over all `n!` orderings of a small player set.
pub fn exact_shapley<G: Game>(game: &G, players: usize) -> Result<Vec<f64>> {
    if players > BRUTE_FORCE_CAP {
        return Err(Error::Size(format!(
            "{players} players exceeds the brute-force cap of {BRUTE_FORCE_CAP}"
        )));
    }
    let mut perms = Vec::new();
    let mut items: Vec<PlayerIdx> = (0..players).collect();
    heap_permutations(&mut items, players, &mut perms);
    average_marginals(game, players, perms.iter().map(Vec::as_slice))
}

fn heap_permutations(items: &mut [PlayerIdx], k: usize, out: &mut Vec<Vec<PlayerIdx>>) {
    if k <= 1 {
        out.push(items.to_vec());
        return;
    }
    for i in 0..k {
        heap_permutations(items, k - 1, out);
        if k.is_multiple_of(2) {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
}

fn average_marginals<'a, G: Game>(
    game: &G,
    players: usize,
    orders: impl Iterator<Item = &'a [PlayerIdx]>,
) -> Result<Vec<f64>> {
    let mut state = game.new_state();
    let empty = game.value(&state)?;
    let mut sums = vec![0.0; players];
    let mut count = 0usize;
    for order in orders {
        game.reset(&mut state);
        let mut prev = empty;
        for &p in order {
            game.insert(&mut state, p)?;
            let u = game.value(&state)?;
            sums[p] += u - prev;
            prev = u;
        }
        count += 1;
    }
    if count > 0 {
        sums.iter_mut().for_each(|s| *s /= count as f64);
    }
    Ok(sums)
}
