//! Similarity weights over historical records and the two state functionals:
//! the weighted target variance `H` and the goal likelihood `L`.
//!
//! Weights are `exp(-lambda_w * d_i)` with `d_i` the variance-normalized
//! squared distance between the candidate and record `i` over the features
//! the candidate knows. Distances are additive in features, so a new
//! observation updates the belief by adding its term to every `d_i`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureId, GoalRange, HistoricalRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Global temperature of the exponential kernel.
    pub lambda_w: f64,
    /// Keep the outcome of the assay that coincides with the target out of
    /// the distance, even once measured.
    pub target_leak_guard: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            lambda_w: 1.0,
            target_leak_guard: true,
        }
    }
}

impl KernelConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.lambda_w > 0.0) || !self.lambda_w.is_finite() {
            return Err(Error::Config(format!(
                "lambda_w must be positive, got {}",
                self.lambda_w
            )));
        }
        Ok(())
    }
}

/// Candidate's known features plus the assays measured so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateState {
    pub known: BTreeMap<FeatureId, f64>,
    pub measured: BTreeSet<crate::data::AssayId>,
    /// Number of batches executed.
    pub step: usize,
    /// Set once the end-of-experiment action was taken.
    pub stopped: bool,
}

impl CandidateState {
    /// Initial state from predictor values.
    pub fn new(known: BTreeMap<FeatureId, f64>) -> Self {
        Self {
            known,
            ..Self::default()
        }
    }
}

/// Whether `feature` may enter distances under `config`.
pub fn admissible(dataset: &Dataset, config: &KernelConfig, feature: FeatureId) -> bool {
    if dataset.feature(feature).name == dataset.target_name() {
        return false;
    }
    match dataset.target_assay() {
        Some(a) if config.target_leak_guard => dataset.assay(a).outcome_feature != feature,
        _ => true,
    }
}

/// Contribution of one observed feature value to the distance of record `i`.
#[inline]
pub fn feature_term(dataset: &Dataset, feature: FeatureId, value: f64, i: usize) -> f64 {
    let spec = dataset.feature(feature);
    let diff = value - dataset.column(feature)[i];
    spec.lambda * diff * diff / dataset.variance(feature)
}

/// Adds the terms of `feature = value` to every record distance.
pub fn add_feature_terms(dataset: &Dataset, feature: FeatureId, value: f64, distances: &mut [f64]) {
    let scale = dataset.feature(feature).lambda / dataset.variance(feature);
    for (d, &x) in distances.iter_mut().zip(dataset.column(feature)) {
        let diff = value - x;
        *d += scale * diff * diff;
    }
}

fn check_known(state: &CandidateState, dataset: &Dataset) -> Result<()> {
    if !dataset.stats_ready() {
        return Err(Error::StatsMissing);
    }
    if let Some((f, _)) = state
        .known
        .iter()
        .find(|(f, _)| f.0 >= dataset.features().len())
    {
        return Err(Error::UnknownFeature(format!("#{}", f.0)));
    }
    Ok(())
}

/// Distance between the candidate and one record over the admissible
/// known features.
pub fn distance(
    state: &CandidateState,
    record: &HistoricalRecord,
    dataset: &Dataset,
    config: &KernelConfig,
) -> Result<f64> {
    check_known(state, dataset)?;
    let mut d = 0.0;
    for (&f, &value) in &state.known {
        if !admissible(dataset, config, f) {
            continue;
        }
        let x = *record
            .values
            .get(f.0)
            .ok_or_else(|| Error::UnknownFeature(dataset.feature(f).name.clone()))?;
        let diff = value - x;
        d += dataset.feature(f).lambda * diff * diff / dataset.variance(f);
    }
    Ok(d)
}

/// Stabilized kernel weights `exp(-lambda_w (d_i - min d))`.
pub fn raw_weights_into(distances: &[f64], lambda_w: f64, out: &mut Vec<f64>) {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    out.clear();
    out.extend(distances.iter().map(|d| (-lambda_w * (d - min)).exp()));
}

/// Similarity weights over all records, with the accumulated distances
/// kept so later observations can be folded in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefWeights {
    pub distances: Vec<f64>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    /// Features already observed (admissible or not).
    pub incorporated: BTreeSet<FeatureId>,
    pub lambda_w: f64,
}

impl BeliefWeights {
    fn from_distances(
        distances: Vec<f64>,
        incorporated: BTreeSet<FeatureId>,
        lambda_w: f64,
    ) -> Self {
        let mut raw = Vec::with_capacity(distances.len());
        raw_weights_into(&distances, lambda_w, &mut raw);
        let z: f64 = raw.iter().sum();
        let normalized = raw.iter().map(|w| w / z).collect();
        Self {
            distances,
            raw,
            normalized,
            incorporated,
            lambda_w,
        }
    }

    /// Folds new observations into the belief. Observing a feature twice
    /// is an error.
    pub fn update(
        &self,
        observations: &BTreeMap<FeatureId, f64>,
        dataset: &Dataset,
        config: &KernelConfig,
    ) -> Result<Self> {
        update_weights_incremental(self, observations, dataset, config)
    }

    /// Records sorted by descending weight, ties by index.
    pub fn ranked(&self) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self.normalized.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }
}

/// Weights of every record for `state`, computed from scratch.
pub fn compute_weights(
    state: &CandidateState,
    dataset: &Dataset,
    config: &KernelConfig,
) -> Result<BeliefWeights> {
    config.check()?;
    check_known(state, dataset)?;
    let mut distances = vec![0.0; dataset.len()];
    for (&f, &value) in &state.known {
        if admissible(dataset, config, f) {
            add_feature_terms(dataset, f, value, &mut distances);
        }
    }
    Ok(BeliefWeights::from_distances(
        distances,
        state.known.keys().copied().collect(),
        config.lambda_w,
    ))
}

/// Adds the distance terms of `observations` and renormalizes.
pub fn update_weights_incremental(
    weights: &BeliefWeights,
    observations: &BTreeMap<FeatureId, f64>,
    dataset: &Dataset,
    config: &KernelConfig,
) -> Result<BeliefWeights> {
    if observations.is_empty() {
        return Ok(weights.clone());
    }
    let mut incorporated = weights.incorporated.clone();
    for &f in observations.keys() {
        if f.0 >= dataset.features().len() {
            return Err(Error::UnknownFeature(format!("#{}", f.0)));
        }
        if !incorporated.insert(f) {
            return Err(Error::AlreadyIncorporated(dataset.feature(f).name.clone()));
        }
    }
    let mut distances = weights.distances.clone();
    for (&f, &value) in observations {
        if admissible(dataset, config, f) {
            add_feature_terms(dataset, f, value, &mut distances);
        }
    }
    Ok(BeliefWeights::from_distances(
        distances,
        incorporated,
        weights.lambda_w,
    ))
}

/// Weights restricted to the records with a target, renormalized to one.
///
/// Computed from the raw weights over I_g. If that mass underflows, the
/// distances are re-shifted by their minimum over I_g instead; the belief
/// only collapses when the distances themselves are not finite.
pub fn renormalize_over_targets(weights: &BeliefWeights, dataset: &Dataset) -> Result<Vec<f64>> {
    let index = dataset.target_index();
    if index.is_empty() {
        return Err(Error::InvalidDataset("no record carries a target".into()));
    }
    let mass: f64 = index.iter().map(|&i| weights.raw[i]).sum();
    if mass >= 1e-300 && mass.is_finite() {
        return Ok(index.iter().map(|&i| weights.raw[i] / mass).collect());
    }
    let min = index
        .iter()
        .map(|&i| weights.distances[i])
        .fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = index
        .iter()
        .map(|&i| (-weights.lambda_w * (weights.distances[i] - min)).exp())
        .collect();
    let mass: f64 = shifted.iter().sum();
    if !(mass >= 1e-300) || !mass.is_finite() {
        return Err(Error::BeliefCollapsed);
    }
    Ok(shifted.into_iter().map(|w| w / mass).collect())
}

/// Weighted mean of the targets.
pub fn weighted_mean(tilde: &[f64], targets: &[f64]) -> f64 {
    tilde.iter().zip(targets).map(|(w, g)| w * g).sum()
}

/// Weighted variance of the target (`H`).
pub fn state_uncertainty(tilde: &[f64], targets: &[f64]) -> f64 {
    let mean = weighted_mean(tilde, targets);
    tilde
        .iter()
        .zip(targets)
        .map(|(w, g)| w * (g - mean) * (g - mean))
        .sum::<f64>()
        .max(0.0)
}

/// Weighted probability that the target lies in the closed goal range (`L`).
pub fn goal_likelihood(tilde: &[f64], targets: &[f64], goal: GoalRange) -> f64 {
    tilde
        .iter()
        .zip(targets)
        .filter(|(_, g)| goal.contains(**g))
        .map(|(w, _)| w)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// `H`, `L` and the weighted target mean of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Functionals {
    pub h: f64,
    pub l: f64,
    pub mean: f64,
}

impl Functionals {
    pub fn of(weights: &BeliefWeights, dataset: &Dataset) -> Result<Self> {
        let tilde = renormalize_over_targets(weights, dataset)?;
        let targets = dataset.target_values();
        Ok(Self {
            h: state_uncertainty(&tilde, targets),
            l: goal_likelihood(&tilde, targets, dataset.goal_range()),
            mean: weighted_mean(&tilde, targets),
        })
    }

    /// Allocation-free evaluation straight from accumulated distances, for
    /// the planner's inner loops.
    pub fn from_distances(distances: &[f64], dataset: &Dataset, lambda_w: f64) -> Self {
        let index = dataset.target_index();
        let targets = dataset.target_values();
        let goal = dataset.goal_range();
        let min = index
            .iter()
            .map(|&i| distances[i])
            .fold(f64::INFINITY, f64::min);
        let (mut z, mut zg, mut zl) = (0.0, 0.0, 0.0);
        for (&i, &g) in index.iter().zip(targets) {
            let w = (-lambda_w * (distances[i] - min)).exp();
            z += w;
            zg += w * g;
            if goal.contains(g) {
                zl += w;
            }
        }
        let mean = zg / z;
        let mut var = 0.0;
        for (&i, &g) in index.iter().zip(targets) {
            let w = (-lambda_w * (distances[i] - min)).exp();
            var += w * (g - mean) * (g - mean);
        }
        Self {
            h: (var / z).max(0.0),
            l: (zl / z).clamp(0.0, 1.0),
            mean,
        }
    }
}
