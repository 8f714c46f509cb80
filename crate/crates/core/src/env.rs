//! The decision process: batch actions, rewards, the implicit transition
//! model over historical records, and terminal/feasibility predicates.
//!
//! A transition samples one record in proportion to its similarity weight
//! and copies that record's outcomes for every assay in the batch, so
//! correlations between assays carry over from the data.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use itertools::Itertools;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefWeights, CandidateState, Functionals, KernelConfig};
use crate::data::{AssayId, AssaySpec, Dataset, FeatureId};
use crate::error::{Error, Result};

/// Set of assays as a bitmask; at most 64 assays are supported.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssaySet(pub u64);

pub const MAX_ASSAYS: usize = 64;

impl AssaySet {
    pub const EMPTY: AssaySet = AssaySet(0);

    pub fn full(n: usize) -> Self {
        debug_assert!(n <= MAX_ASSAYS);
        if n == MAX_ASSAYS {
            AssaySet(u64::MAX)
        } else {
            AssaySet((1u64 << n) - 1)
        }
    }

    pub fn singleton(id: AssayId) -> Self {
        AssaySet(1 << id.0)
    }

    pub fn contains(self, id: AssayId) -> bool {
        self.0 >> id.0 & 1 == 1
    }

    pub fn insert(&mut self, id: AssayId) {
        self.0 |= 1 << id.0;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: AssaySet) -> Self {
        AssaySet(self.0 | other.0)
    }

    pub fn difference(self, other: AssaySet) -> Self {
        AssaySet(self.0 & !other.0)
    }

    pub fn intersects(self, other: AssaySet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset(self, other: AssaySet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Members in increasing id order.
    pub fn iter(self) -> impl Iterator<Item = AssayId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(AssayId(i))
        })
    }
}

impl FromIterator<AssayId> for AssaySet {
    fn from_iter<I: IntoIterator<Item = AssayId>>(iter: I) -> Self {
        let mut set = AssaySet::EMPTY;
        for id in iter {
            set.insert(id);
        }
        set
    }
}

/// Canonical order: by size, then lexicographically by member ids.
impl Ord for AssaySet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.iter().cmp(other.iter()))
    }
}

impl PartialOrd for AssaySet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One decision: run a batch of assays in parallel, or stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionBatch {
    Eox,
    Batch(AssaySet),
}

/// Eox first, then batches in canonical order.
impl Ord for ActionBatch {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ActionBatch::Eox, ActionBatch::Eox) => Ordering::Equal,
            (ActionBatch::Eox, _) => Ordering::Less,
            (_, ActionBatch::Eox) => Ordering::Greater,
            (ActionBatch::Batch(a), ActionBatch::Batch(b)) => a.cmp(b),
        }
    }
}

impl PartialOrd for ActionBatch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl ActionBatch {
    pub fn assays(&self) -> AssaySet {
        match self {
            ActionBatch::Eox => AssaySet::EMPTY,
            ActionBatch::Batch(set) => *set,
        }
    }

    pub fn is_eox(&self) -> bool {
        matches!(self, ActionBatch::Eox)
    }

    /// Assay names joined by `+`, or `eox`.
    pub fn label(&self, dataset: &Dataset) -> String {
        match self {
            ActionBatch::Eox => "eox".to_string(),
            ActionBatch::Batch(set) => set.iter().map(|a| dataset.assay(a).name.as_str()).join("+"),
        }
    }

    /// Assay names, empty for Eox.
    pub fn names(&self, dataset: &Dataset) -> Vec<String> {
        self.assays()
            .iter()
            .map(|a| dataset.assay(a).name.clone())
            .collect()
    }

    /// Parses a label produced by [`ActionBatch::label`].
    pub fn parse(label: &str, dataset: &Dataset) -> Result<Self> {
        if label == "eox" {
            return Ok(ActionBatch::Eox);
        }
        let set = label
            .split('+')
            .map(|name| {
                dataset
                    .assay_by_name(name.trim())
                    .ok_or_else(|| Error::UnknownAssay(name.trim().to_string()))
            })
            .collect::<Result<AssaySet>>()?;
        Ok(ActionBatch::Batch(set))
    }
}

impl fmt::Display for ActionBatch {
    /// 1-based assay indices, `{3,4}` style.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionBatch::Eox => f.write_str("eox"),
            ActionBatch::Batch(set) => {
                write!(f, "{{{}}}", set.iter().map(|a| a.0 + 1).join(","))
            }
        }
    }
}

/// Eox followed by every nonempty subset of `unmeasured` with at most `m`
/// members, in canonical order.
pub fn actions_for(unmeasured: AssaySet, m: usize) -> Vec<ActionBatch> {
    let ids: Vec<AssayId> = unmeasured.iter().collect();
    let mut actions = vec![ActionBatch::Eox];
    for size in 1..=m.min(ids.len()) {
        actions.extend(
            ids.iter()
                .copied()
                .combinations(size)
                .map(|c| ActionBatch::Batch(c.into_iter().collect())),
        );
    }
    actions
}

pub fn measured_set(state: &CandidateState) -> AssaySet {
    state.measured.iter().copied().collect()
}

/// Legal actions for `state` with throughput cap `m`.
pub fn enumerate_actions(state: &CandidateState, m: usize, n_assays: usize) -> Vec<ActionBatch> {
    let unmeasured = AssaySet::full(n_assays).difference(measured_set(state));
    actions_for(unmeasured, m)
}

// ---------------------------------------------------------------------------
// Categorical sampling

/// Inverse-CDF table over non-negative weights. The prefix is forced to
/// exactly 1 from the last positive weight onward.
pub fn fill_cdf(weights: impl IntoIterator<Item = f64>, out: &mut Vec<f64>) {
    out.clear();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.into_iter().enumerate() {
        acc += w;
        if w > 0.0 {
            last_positive = i;
        }
        out.push(acc);
    }
    if acc > 0.0 {
        for c in out.iter_mut() {
            *c /= acc;
        }
        for c in &mut out[last_positive..] {
            *c = 1.0;
        }
    }
}

/// Draws an index from a table built by [`fill_cdf`].
pub fn sample_cdf<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

// ---------------------------------------------------------------------------
// Transitions

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOutcome {
    pub next_state: CandidateState,
    /// Zero-based index of the sampled record.
    pub record: usize,
    pub revealed: BTreeMap<AssayId, f64>,
}

fn check_batch(state: &CandidateState, batch: &ActionBatch, dataset: &Dataset) -> Result<AssaySet> {
    let set = match batch {
        ActionBatch::Eox => {
            return Err(Error::InvalidAction("eox has no transition".into()));
        }
        ActionBatch::Batch(set) => *set,
    };
    if set.is_empty() {
        return Err(Error::InvalidAction("empty batch".into()));
    }
    for a in set.iter() {
        if a.0 >= dataset.n_assays() {
            return Err(Error::UnknownAssay(format!("#{}", a.0)));
        }
        if state.measured.contains(&a) {
            return Err(Error::AlreadyMeasured(dataset.assay(a).name.clone()));
        }
    }
    Ok(set)
}

fn reveal(
    state: &CandidateState,
    set: AssaySet,
    record: usize,
    dataset: &Dataset,
) -> TransitionOutcome {
    let mut next_state = state.clone();
    let mut revealed = BTreeMap::new();
    for a in set.iter() {
        let f = dataset.assay(a).outcome_feature;
        let value = dataset.column(f)[record];
        revealed.insert(a, value);
        next_state.known.insert(f, value);
        next_state.measured.insert(a);
    }
    next_state.step += 1;
    TransitionOutcome {
        next_state,
        record,
        revealed,
    }
}

/// Samples one record from the belief and reveals its batch outcomes.
pub fn sample_transition<R: Rng + ?Sized>(
    state: &CandidateState,
    batch: &ActionBatch,
    weights: &BeliefWeights,
    dataset: &Dataset,
    rng: &mut R,
) -> Result<TransitionOutcome> {
    let set = check_batch(state, batch, dataset)?;
    let mut cdf = Vec::with_capacity(weights.normalized.len());
    fill_cdf(weights.normalized.iter().copied(), &mut cdf);
    let record = sample_cdf(&cdf, rng);
    Ok(reveal(state, set, record, dataset))
}

/// Exact next-state distribution; records revealing identical values are
/// merged. States appear in order of their first record.
pub fn transition_distribution(
    state: &CandidateState,
    batch: &ActionBatch,
    weights: &BeliefWeights,
    dataset: &Dataset,
) -> Result<Vec<(CandidateState, f64)>> {
    let set = check_batch(state, batch, dataset)?;
    let features: Vec<FeatureId> = set
        .iter()
        .map(|a| dataset.assay(a).outcome_feature)
        .collect();
    let mut index: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut out: Vec<(CandidateState, f64)> = Vec::new();
    for (i, &w) in weights.normalized.iter().enumerate() {
        let signature: Vec<u64> = features
            .iter()
            .map(|&f| dataset.column(f)[i].to_bits())
            .collect();
        match index.get(&signature) {
            Some(&k) => out[k].1 += w,
            None => {
                index.insert(signature, out.len());
                out.push((reveal(state, set, i, dataset).next_state, w));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rewards and predicates

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `-rho . cost` per batch.
    Cost,
    /// Uncertainty reduction divided by the scalarized batch cost.
    InfoPerCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub mode: RewardMode,
    /// Trade-off weights over cost dimensions; empty means all weight on
    /// the first dimension.
    pub rho: Vec<f64>,
    pub gamma: f64,
    pub penalty: f64,
    /// Maximum number of batches; `None` means one per assay.
    pub horizon: Option<usize>,
    pub epsilon: f64,
    pub tau: f64,
    /// Throughput cap `m` on batch size.
    pub max_batch: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            mode: RewardMode::Cost,
            rho: Vec::new(),
            gamma: 0.95,
            penalty: -1e6,
            horizon: None,
            epsilon: 0.10,
            tau: 0.0,
            max_batch: 2,
        }
    }
}

impl RewardConfig {
    /// `rho . cost`.
    pub fn scalarize(&self, cost: &[f64]) -> f64 {
        if self.rho.is_empty() {
            return cost.first().copied().unwrap_or(0.0);
        }
        self.rho.iter().zip(cost).map(|(r, c)| r * c).sum()
    }

    /// Summed cost vector of a batch.
    pub fn batch_cost(assays: &[AssaySpec], batch: &ActionBatch) -> Vec<f64> {
        let q = assays.first().map_or(0, |a| a.cost.len());
        let mut total = vec![0.0; q];
        for a in batch.assays().iter() {
            for (t, c) in total.iter_mut().zip(&assays[a.0].cost) {
                *t += c;
            }
        }
        total
    }
}

/// Reward of one action. Info mode needs the uncertainty reduction.
pub fn step_reward(
    action: &ActionBatch,
    config: &RewardConfig,
    assays: &[AssaySpec],
    delta_h: Option<f64>,
) -> Result<f64> {
    if action.is_eox() {
        return Ok(0.0);
    }
    let cost = config.scalarize(&RewardConfig::batch_cost(assays, action));
    match config.mode {
        RewardMode::Cost => Ok(-cost),
        RewardMode::InfoPerCost => {
            let delta = delta_h.ok_or_else(|| {
                Error::Config("info_per_cost reward needs the uncertainty reduction".into())
            })?;
            if !(cost > 0.0) {
                return Err(Error::Config(
                    "info_per_cost reward needs a positive batch cost".into(),
                ));
            }
            Ok(delta / cost)
        }
    }
}

/// True when `H <= epsilon`, the horizon is used up, nothing is left to
/// measure, or the episode was stopped.
pub fn is_terminal(
    state: &CandidateState,
    h: f64,
    epsilon: f64,
    horizon: usize,
    n_assays: usize,
) -> bool {
    h <= epsilon || state.step >= horizon || state.measured.len() >= n_assays || state.stopped
}

pub fn is_feasible(l: f64, tau: f64) -> bool {
    l >= tau
}

// ---------------------------------------------------------------------------
// Problem bundle

/// Dataset plus validated kernel and reward settings, with the derived
/// tables the planners need.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub dataset: &'a Dataset,
    pub kernel: KernelConfig,
    pub reward: RewardConfig,
    scalar_costs: Vec<f64>,
    distance_features: Vec<Option<FeatureId>>,
    horizon: usize,
    by_cost: Vec<AssayId>,
}

impl<'a> Problem<'a> {
    pub fn new(dataset: &'a Dataset, kernel: KernelConfig, reward: RewardConfig) -> Result<Self> {
        kernel.check()?;
        if !dataset.stats_ready() {
            return Err(Error::StatsMissing);
        }
        let n = dataset.n_assays();
        if n > MAX_ASSAYS {
            return Err(Error::Config(format!(
                "at most {MAX_ASSAYS} assays are supported"
            )));
        }
        if dataset.target_index().is_empty() {
            return Err(Error::InvalidDataset("no record carries a target".into()));
        }
        let r = &reward;
        if !(0.0..1.0).contains(&r.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {}",
                r.gamma
            )));
        }
        if !(r.penalty < 0.0) {
            return Err(Error::Config("penalty must be negative".into()));
        }
        if !(0.0..=1.0).contains(&r.tau) {
            return Err(Error::Config(format!(
                "tau must lie in [0, 1], got {}",
                r.tau
            )));
        }
        if !(r.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be non-negative".into()));
        }
        if r.max_batch == 0 {
            return Err(Error::Config("batch size cap m must be at least 1".into()));
        }
        if r.horizon == Some(0) {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let q = dataset.cost_dims().len();
        if !r.rho.is_empty() && r.rho.len() != q {
            return Err(Error::Config(format!(
                "rho has {} weights but the dataset has {q} cost dimensions",
                r.rho.len()
            )));
        }
        if r.rho.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Config("rho weights must be non-negative".into()));
        }
        if r.mode == RewardMode::Cost && !r.rho.is_empty() && !(r.rho.iter().sum::<f64>() > 0.0) {
            return Err(Error::Config("rho must have positive total weight".into()));
        }

        let scalar_costs: Vec<f64> = dataset
            .assays()
            .iter()
            .map(|a| r.scalarize(&a.cost))
            .collect();
        let horizon = r.horizon.unwrap_or(n.max(1));
        match r.mode {
            RewardMode::Cost => {
                // An infeasible trajectory pays the full penalty, an
                // unfinished one half of it; both must outweigh any spend.
                let max_spend: f64 = scalar_costs.iter().sum();
                if -r.penalty <= 2.0 * max_spend {
                    return Err(Error::Config(format!(
                        "penalty {} is too small: it must exceed twice the full-panel spend {max_spend}",
                        r.penalty
                    )));
                }
            }
            RewardMode::InfoPerCost => {
                if let Some(a) = scalar_costs.iter().position(|c| !(*c > 0.0)) {
                    return Err(Error::Config(format!(
                        "info_per_cost needs positive costs; assay `{}` costs {}",
                        dataset.assays()[a].name,
                        scalar_costs[a]
                    )));
                }
                let targets = dataset.target_values();
                let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let h_max = (hi - lo).powi(2) / 4.0;
                let c_min = scalar_costs.iter().copied().fold(f64::INFINITY, f64::min);
                let bound = 2.0 * horizon as f64 * h_max / c_min;
                if -r.penalty <= bound {
                    return Err(Error::Config(format!(
                        "penalty {} is too small: it must exceed {bound} to dominate any information reward",
                        r.penalty
                    )));
                }
            }
        }

        let distance_features = dataset
            .assays()
            .iter()
            .map(|a| {
                crate::belief::admissible(dataset, &kernel, a.outcome_feature)
                    .then_some(a.outcome_feature)
            })
            .collect();
        let mut by_cost: Vec<AssayId> = (0..n).map(AssayId).collect();
        by_cost.sort_by(|a, b| {
            scalar_costs[a.0]
                .total_cmp(&scalar_costs[b.0])
                .then(a.cmp(b))
        });

        Ok(Self {
            dataset,
            kernel,
            reward,
            scalar_costs,
            distance_features,
            horizon,
            by_cost,
        })
    }

    pub fn n_assays(&self) -> usize {
        self.dataset.n_assays()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn all_assays(&self) -> AssaySet {
        AssaySet::full(self.n_assays())
    }

    pub fn scalar_cost(&self, assay: AssayId) -> f64 {
        self.scalar_costs[assay.0]
    }

    pub fn action_cost(&self, action: &ActionBatch) -> f64 {
        action.assays().iter().map(|a| self.scalar_costs[a.0]).sum()
    }

    pub fn cost_vector(&self, action: &ActionBatch) -> Vec<f64> {
        RewardConfig::batch_cost(self.dataset.assays(), action)
    }

    /// Outcome feature of `assay` if it enters distances.
    pub fn distance_feature(&self, assay: AssayId) -> Option<FeatureId> {
        self.distance_features[assay.0]
    }

    /// True once the assay that measures the target itself has been run.
    pub fn resolved(&self, measured: AssaySet) -> bool {
        self.dataset
            .target_assay()
            .is_some_and(|a| measured.contains(a))
    }

    /// Belief functionals at a state. A resolved target has no remaining
    /// uncertainty, so `H` is zero there and the state is terminal.
    pub fn functionals(&self, distances: &[f64], measured: AssaySet) -> Functionals {
        let mut f = Functionals::from_distances(distances, self.dataset, self.kernel.lambda_w);
        if self.resolved(measured) {
            f.h = 0.0;
        }
        f
    }

    /// Unmeasured assays sorted by scalar cost, ties by id.
    pub fn cheapest(&self, unmeasured: AssaySet, k: usize) -> AssaySet {
        self.by_cost
            .iter()
            .copied()
            .filter(|a| unmeasured.contains(*a))
            .take(k)
            .collect()
    }

    pub fn actions(&self, measured: AssaySet) -> Vec<ActionBatch> {
        actions_for(
            self.all_assays().difference(measured),
            self.reward.max_batch,
        )
    }

    pub fn terminal(&self, h: f64, step: usize, measured: AssaySet, stopped: bool) -> bool {
        stopped || h <= self.reward.epsilon || step >= self.horizon || measured == self.all_assays()
    }

    /// Reward of a non-Eox batch given H before and after.
    pub fn reward_of(&self, action: &ActionBatch, h_before: f64, h_after: f64) -> f64 {
        if action.is_eox() {
            return 0.0;
        }
        let c = self.action_cost(action);
        match self.reward.mode {
            RewardMode::Cost => -c,
            RewardMode::InfoPerCost => (h_before - h_after) / c,
        }
    }

    /// Penalty charged when an episode ends with `H` above the threshold.
    pub fn unmet_penalty(&self) -> f64 {
        match self.reward.mode {
            RewardMode::Cost => 0.5 * self.reward.penalty,
            RewardMode::InfoPerCost => 0.0,
        }
    }

    /// Accumulated distances for a state, from scratch.
    pub fn distances_for(&self, state: &CandidateState) -> Result<Vec<f64>> {
        Ok(crate::belief::compute_weights(state, self.dataset, &self.kernel)?.distances)
    }
}
