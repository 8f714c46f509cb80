//! Ensembles of independent trees, majority voting into the most likely
//! action-set path (MLASP), and tolerance sweeps for the Pareto front.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{add_feature_terms, CandidateState, KernelConfig};
use crate::data::{AssayId, Dataset};
use crate::env::{fill_cdf, measured_set, sample_cdf, ActionBatch, Problem, RewardConfig};
use crate::error::{Error, Result};
use crate::planner::{plan, PlannerParams, Policy, StateKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_e: usize,
    pub base_seed: u64,
    pub planner: PlannerParams,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_e: 50,
            base_seed: 0,
            planner: PlannerParams::default(),
        }
    }
}

/// Plans `n_e` trees with seeds `base_seed + 1 ..= base_seed + n_e`.
pub fn run_ensemble(
    problem: &Problem,
    root: &CandidateState,
    config: &EnsembleConfig,
) -> Result<Vec<Policy>> {
    if config.n_e == 0 {
        return Err(Error::Config("ensemble size must be at least 1".into()));
    }
    (1..=config.n_e as u64)
        .into_par_iter()
        .map(|j| {
            let params = PlannerParams {
                seed: config.base_seed.wrapping_add(j),
                ..config.planner.clone()
            };
            plan(problem, root, &params).map(|(_, policy)| policy)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VoteHistogram {
    pub counts: BTreeMap<ActionBatch, usize>,
    /// Policies without an entry for the voted state.
    pub abstained: usize,
}

impl VoteHistogram {
    pub fn votes(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// One vote per policy that has a recommendation at `key`.
pub fn vote_actions(policies: &[Policy], key: &StateKey) -> VoteHistogram {
    let mut hist = VoteHistogram::default();
    for policy in policies {
        match policy.action_at(key) {
            Some(action) => *hist.counts.entry(action).or_default() += 1,
            None => hist.abstained += 1,
        }
    }
    hist
}

/// The `k` most voted actions; ties by lower cost, then canonical order.
pub fn top_k_actions(hist: &VoteHistogram, k: usize, problem: &Problem) -> Vec<ActionBatch> {
    let mut ranked: Vec<(&ActionBatch, &usize)> = hist.counts.iter().collect();
    ranked.sort_by(|(a, ca), (b, cb)| {
        cb.cmp(ca)
            .then_with(|| problem.action_cost(a).total_cmp(&problem.action_cost(b)))
            .then_with(|| a.cmp(b))
    });
    ranked.into_iter().take(k).map(|(a, _)| *a).collect()
}

/// How the MLASP picks the outcome that advances the path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutcomeRule {
    /// Weighted mean outcome of the batch, snapped to the nearest record.
    #[default]
    Expected,
    /// Outcome of one record drawn from the belief.
    Sampled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlaspStep {
    #[serde(skip)]
    pub action: ActionBatch,
    pub label: String,
    pub assays: Vec<String>,
    pub votes: usize,
    pub voters: usize,
    pub vote_fraction: f64,
    pub histogram: Vec<(String, usize)>,
    /// Outcomes assumed for the batch, by assay name.
    pub outcome: BTreeMap<String, f64>,
    /// Zero-based record whose outcomes were used.
    pub outcome_record: Option<usize>,
    pub cumulative_cost: Vec<f64>,
    pub cumulative_spend: f64,
    pub h_after: f64,
    pub l_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mlasp {
    pub steps: Vec<MlaspStep>,
    pub initial_h: f64,
    pub initial_l: f64,
    pub final_h: f64,
    pub final_l: f64,
    pub total_cost: Vec<f64>,
    pub spend: f64,
    /// Every policy abstained at some step before the path ended.
    pub truncated: bool,
    /// Final `H <= epsilon` and `L >= tau` at the root and every
    /// non-terminal state along the path.
    pub constraint_met: bool,
}

impl Mlasp {
    pub fn first_action(&self) -> ActionBatch {
        self.steps.first().map_or(ActionBatch::Eox, |s| s.action)
    }
}

/// Record nearest to the weighted mean outcome of the batch, measured on
/// the batch features with variance normalization. Ties go to the lower
/// index.
fn expected_record(problem: &Problem, batch: &[AssayId], weights: &[f64]) -> usize {
    let ds = problem.dataset;
    let features: Vec<_> = batch.iter().map(|&a| ds.assay(a).outcome_feature).collect();
    let means: Vec<f64> = features
        .iter()
        .map(|&f| weights.iter().zip(ds.column(f)).map(|(w, x)| w * x).sum())
        .collect();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..ds.len() {
        let d: f64 = features
            .iter()
            .zip(&means)
            .map(|(&f, m)| (ds.column(f)[i] - m).powi(2) / ds.variance(f))
            .sum();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Follows the majority vote from `root`, advancing through outcomes
/// chosen by `rule`, until the ensemble stops, a terminal state is
/// reached, or every policy abstains.
pub fn build_mlasp(
    policies: &[Policy],
    problem: &Problem,
    root: &CandidateState,
    rule: OutcomeRule,
) -> Result<Mlasp> {
    if policies.is_empty() {
        return Err(Error::Config("no policies to vote with".into()));
    }
    let ds = problem.dataset;
    let lw = problem.kernel.lambda_w;
    let reward = &problem.reward;
    let mut rng = match rule {
        OutcomeRule::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        OutcomeRule::Expected => None,
    };

    let mut distances = problem.distances_for(root)?;
    let mut measured = measured_set(root);
    let mut f = problem.functionals(&distances, measured);
    let (initial_h, initial_l) = (f.h, f.l);
    let mut step = root.step;
    let mut key = StateKey::root();
    let mut total_cost = vec![0.0; ds.cost_dims().len()];
    let mut spend = 0.0;
    // The root is exempt, as in the planner.
    let mut feasible = true;
    let mut truncated = false;
    let mut steps = Vec::new();
    let mut weights = Vec::new();

    while !problem.terminal(f.h, step, measured, false) {
        let hist = vote_actions(policies, &key);
        let Some(&action) = top_k_actions(&hist, 1, problem).first() else {
            truncated = true;
            break;
        };
        let votes = hist.counts[&action];
        let voters = hist.votes();
        let mut ranked: Vec<(String, usize)> = top_k_actions(&hist, hist.counts.len(), problem)
            .into_iter()
            .map(|a| (a.label(ds), hist.counts[&a]))
            .collect();
        ranked.shrink_to_fit();

        let mut outcome = BTreeMap::new();
        let mut outcome_record = None;
        if let ActionBatch::Batch(batch) = action {
            let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
            weights.clear();
            weights.extend(distances.iter().map(|d| (-lw * (d - min)).exp()));
            let z: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= z);

            let ids: Vec<AssayId> = batch.iter().collect();
            let record = match rng.as_mut() {
                None => expected_record(problem, &ids, &weights),
                Some(rng) => {
                    let mut cdf = Vec::new();
                    fill_cdf(weights.iter().copied(), &mut cdf);
                    sample_cdf(&cdf, rng)
                }
            };
            let mut revealed = Vec::new();
            for &a in &ids {
                let feature = ds.assay(a).outcome_feature;
                let value = ds.column(feature)[record];
                revealed.push((a, value));
                outcome.insert(ds.assay(a).name.clone(), value);
                if let Some(feature) = problem.distance_feature(a) {
                    add_feature_terms(ds, feature, value, &mut distances);
                }
            }
            outcome_record = Some(record);
            key = key.extended(revealed);
            measured = measured.union(batch);
            step += 1;
            for (t, c) in total_cost.iter_mut().zip(problem.cost_vector(&action)) {
                *t += c;
            }
            spend += problem.action_cost(&action);
            f = problem.functionals(&distances, measured);
            if problem.resolved(batch) {
                let g = ds.records()[record].target;
                f.l = f64::from(u8::from(g.is_some_and(|g| ds.goal_range().contains(g))));
            }
            if !problem.terminal(f.h, step, measured, false) && f.l < reward.tau {
                feasible = false;
            }
        }

        steps.push(MlaspStep {
            action,
            label: action.label(ds),
            assays: action.names(ds),
            votes,
            voters,
            vote_fraction: votes as f64 / voters as f64,
            histogram: ranked,
            outcome,
            outcome_record,
            cumulative_cost: total_cost.clone(),
            cumulative_spend: spend,
            h_after: f.h,
            l_after: f.l,
        });
        if action.is_eox() {
            break;
        }
    }

    if steps.is_empty() && !truncated {
        // A terminal root still reports the stop as its single step.
        let n = policies.len();
        steps.push(MlaspStep {
            action: ActionBatch::Eox,
            label: ActionBatch::Eox.label(ds),
            assays: Vec::new(),
            votes: n,
            voters: n,
            vote_fraction: 1.0,
            histogram: vec![(ActionBatch::Eox.label(ds), n)],
            outcome: BTreeMap::new(),
            outcome_record: None,
            cumulative_cost: total_cost.clone(),
            cumulative_spend: 0.0,
            h_after: f.h,
            l_after: f.l,
        });
    }

    Ok(Mlasp {
        steps,
        initial_h,
        initial_l,
        final_h: f.h,
        final_l: f.l,
        total_cost,
        spend,
        truncated,
        constraint_met: !truncated && feasible && f.h <= reward.epsilon,
    })
}

/// Which tolerance a sweep varies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    Tau,
    Epsilon,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Tau => "tau",
            SweepAxis::Epsilon => "epsilon",
        }
    }

    /// Larger means a looser requirement.
    fn looseness(self, value: f64) -> f64 {
        match self {
            SweepAxis::Tau => -value,
            SweepAxis::Epsilon => value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub tolerance: f64,
    pub spend: f64,
    #[serde(skip)]
    pub first_batch: ActionBatch,
    pub first_batch_label: String,
    pub final_h: f64,
    pub constraint_met: bool,
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoSweep {
    pub axis: SweepAxis,
    pub points: Vec<ParetoPoint>,
    /// Indices into `points` of the non-dominated points, by spend.
    pub front: Vec<usize>,
}

/// Default tolerance grid {0.0, 0.1, ..., 1.0}.
pub fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Flags dominated points in (spend, looseness) and returns the front
/// sorted by spend.
pub fn mark_dominated(points: &mut [ParetoPoint], axis: SweepAxis) -> Vec<usize> {
    let coords: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.spend, axis.looseness(p.tolerance)))
        .collect();
    for (i, p) in points.iter_mut().enumerate() {
        let (s, u) = coords[i];
        p.dominated = coords
            .iter()
            .enumerate()
            .any(|(j, &(s2, u2))| j != i && s2 <= s && u2 <= u && (s2 < s || u2 < u));
    }
    let mut front: Vec<usize> = (0..points.len())
        .filter(|&i| !points[i].dominated)
        .collect();
    front.sort_by(|&a, &b| {
        coords[a]
            .0
            .total_cmp(&coords[b].0)
            .then(coords[a].1.total_cmp(&coords[b].1))
    });
    // Equal coordinates cannot dominate each other; keep one of each.
    front.dedup_by(|a, b| coords[*a] == coords[*b]);
    front
}

/// One ensemble and MLASP per tolerance value.
pub fn pareto_sweep(
    dataset: &Dataset,
    kernel: KernelConfig,
    reward: &RewardConfig,
    root: &CandidateState,
    config: &EnsembleConfig,
    axis: SweepAxis,
    grid: &[f64],
) -> Result<ParetoSweep> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut r = reward.clone();
        match axis {
            SweepAxis::Tau => r.tau = value,
            SweepAxis::Epsilon => r.epsilon = value,
        }
        let problem = Problem::new(dataset, kernel, r)?;
        let policies = run_ensemble(&problem, root, config)?;
        let mlasp = build_mlasp(&policies, &problem, root, OutcomeRule::Expected)?;
        let first = mlasp.first_action();
        points.push(ParetoPoint {
            tolerance: value,
            spend: mlasp.spend,
            first_batch: first,
            first_batch_label: first.label(dataset),
            final_h: mlasp.final_h,
            constraint_met: mlasp.constraint_met,
            dominated: false,
        });
    }
    let front = mark_dominated(&mut points, axis);
    Ok(ParetoSweep {
        axis,
        points,
        front,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::tests::toy_dataset;
    use crate::env::AssaySet;
    use crate::planner::PolicyEntry;

    fn batch(ids: &[usize]) -> ActionBatch {
        ActionBatch::Batch(ids.iter().map(|&i| AssayId(i)).collect::<AssaySet>())
    }

    fn policy(action: ActionBatch) -> Policy {
        let mut entries = BTreeMap::new();
        entries.insert(
            StateKey::root(),
            PolicyEntry {
                action,
                visits: 10,
                mean_value: 0.0,
            },
        );
        Policy {
            root_action: action,
            entries,
        }
    }

    fn six_assay_dataset() -> Dataset {
        use crate::data::*;
        Dataset::from_parts(DatasetParts {
            features: (0..6)
                .map(|i| FeatureSpec {
                    name: format!("y{}", i + 1),
                    kind: FeatureKind::AssayOutcome,
                    lambda: 1.0,
                    required: false,
                    stats: None,
                })
                .collect(),
            assays: (0..6)
                .map(|i| AssaySpec {
                    name: format!("a{}", i + 1),
                    outcome_feature: FeatureId(i),
                    cost: vec![1.0],
                })
                .collect(),
            records: (0..4)
                .map(|r| HistoricalRecord {
                    record_id: r.to_string(),
                    values: (0..6).map(|i| ((r * 7 + i * 3) % 5) as f64).collect(),
                    target: Some(r as f64),
                })
                .collect(),
            target_name: "g".into(),
            goal_range: GoalRange::new(0.0, 3.0),
            cost_dims: vec!["cost".into()],
            target_assay: None,
        })
        .unwrap()
        .with_feature_stats()
        .unwrap()
    }

    #[test]
    fn votes_and_top_k() {
        let ds = six_assay_dataset();
        let p = Problem::new(&ds, KernelConfig::default(), RewardConfig::default()).unwrap();
        let mut policies = Vec::new();
        policies.extend((0..30).map(|_| policy(batch(&[2, 3]))));
        policies.extend((0..18).map(|_| policy(batch(&[2, 4]))));
        policies.extend((0..2).map(|_| policy(batch(&[2, 5]))));
        let hist = vote_actions(&policies, &StateKey::root());
        assert_eq!(hist.votes(), 50);
        assert_eq!(top_k_actions(&hist, 1, &p), vec![batch(&[2, 3])]);
        assert_eq!(
            top_k_actions(&hist, 2, &p),
            vec![batch(&[2, 3]), batch(&[2, 4])]
        );

        let one = vote_actions(&policies[..1], &StateKey::root());
        assert_eq!(top_k_actions(&one, 2, &p).len(), 1);
        assert!(vote_actions(&[], &StateKey::root()).is_empty());

        let tied = vec![policy(batch(&[4])), policy(batch(&[1]))];
        let hist = vote_actions(&tied, &StateKey::root());
        assert_eq!(top_k_actions(&hist, 2, &p), vec![batch(&[1]), batch(&[4])]);
    }

    #[test]
    fn abstentions_are_counted() {
        let policies = vec![policy(batch(&[0])), policy(batch(&[1]))];
        let key = StateKey::root().extended([(AssayId(0), 1.0)]);
        let hist = vote_actions(&policies, &key);
        assert!(hist.is_empty());
        assert_eq!(hist.abstained, 2);
    }

    #[test]
    fn dominance() {
        let pt = |tolerance, spend| ParetoPoint {
            tolerance,
            spend,
            first_batch: ActionBatch::Eox,
            first_batch_label: String::new(),
            final_h: 0.0,
            constraint_met: true,
            dominated: false,
        };
        let mut points = vec![
            pt(0.0, 100.0),
            pt(0.5, 400.0),
            pt(0.9, 400.0),
            pt(1.0, 1200.0),
        ];
        let front = mark_dominated(&mut points, SweepAxis::Tau);
        assert!(points[1].dominated);
        assert!(!points[2].dominated);
        assert_eq!(front, vec![0, 2, 3]);

        let mut single = vec![pt(0.3, 5.0)];
        assert_eq!(mark_dominated(&mut single, SweepAxis::Epsilon), vec![0]);
    }

    #[test]
    fn terminal_root_gives_single_stop() {
        let ds = toy_dataset();
        let reward = RewardConfig {
            epsilon: 10.0,
            ..RewardConfig::default()
        };
        let p = Problem::new(&ds, KernelConfig::default(), reward).unwrap();
        let cfg = EnsembleConfig {
            n_e: 3,
            ..EnsembleConfig::default()
        };
        let policies = run_ensemble(&p, &CandidateState::default(), &cfg).unwrap();
        assert!(policies.iter().all(|p| p.root_action == ActionBatch::Eox));
        let mlasp = build_mlasp(
            &policies,
            &p,
            &CandidateState::default(),
            OutcomeRule::Expected,
        )
        .unwrap();
        assert_eq!(mlasp.steps.len(), 1);
        assert_eq!(mlasp.first_action(), ActionBatch::Eox);
        assert_eq!(mlasp.steps[0].votes, 3);
        assert_eq!(mlasp.spend, 0.0);
        assert!(mlasp.constraint_met);
    }

    #[test]
    fn single_member_path_follows_its_policy() {
        let ds = six_assay_dataset();
        let reward = RewardConfig {
            epsilon: 0.05,
            max_batch: 2,
            ..RewardConfig::default()
        };
        let p = Problem::new(&ds, KernelConfig::default(), reward).unwrap();
        let cfg = EnsembleConfig {
            n_e: 1,
            base_seed: 7,
            planner: PlannerParams {
                n_itr: 400,
                ..PlannerParams::default()
            },
        };
        let root = CandidateState::default();
        let policies = run_ensemble(&p, &root, &cfg).unwrap();
        let (_, direct) = plan(
            &p,
            &root,
            &PlannerParams {
                n_itr: 400,
                seed: 8,
                ..PlannerParams::default()
            },
        )
        .unwrap();
        assert_eq!(policies[0], direct);
        let mlasp = build_mlasp(&policies, &p, &root, OutcomeRule::Expected).unwrap();
        assert_eq!(mlasp.first_action(), direct.root_action);
        for s in &mlasp.steps {
            assert_eq!(s.votes, 1);
        }
        let mut seen = AssaySet::EMPTY;
        for s in &mlasp.steps {
            assert!(!seen.intersects(s.action.assays()));
            seen = seen.union(s.action.assays());
        }
    }
}
