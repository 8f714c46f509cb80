//! Independent oracles and instance generators shared by the integration
//! tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::BTreeMap;

use assayplan_core::belief::{
    compute_weights, update_weights_incremental, CandidateState, Functionals, KernelConfig,
};
use assayplan_core::data::*;
use assayplan_core::env::{
    enumerate_actions, is_feasible, is_terminal, step_reward, transition_distribution, ActionBatch,
    Problem, RewardConfig, RewardMode,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// (discounted reward, undiscounted penalty) value of a state.
type Pair = (f64, f64);

fn unmet(problem: &Problem, h: f64) -> f64 {
    let r = &problem.reward;
    if h > r.epsilon && r.mode == RewardMode::Cost {
        0.5 * r.penalty
    } else {
        0.0
    }
}

fn state_functionals(problem: &Problem, state: &CandidateState) -> Functionals {
    let w = compute_weights(state, problem.dataset, &problem.kernel).unwrap();
    let mut f = Functionals::of(&w, problem.dataset).unwrap();
    if problem.resolved(assayplan_core::env::measured_set(state)) {
        f.h = 0.0;
    }
    f
}

fn action_value(problem: &Problem, state: &CandidateState, action: &ActionBatch) -> Pair {
    let f = state_functionals(problem, state);
    if action.is_eox() {
        return (0.0, unmet(problem, f.h));
    }
    let w = compute_weights(state, problem.dataset, &problem.kernel).unwrap();
    let mut pair = (0.0, 0.0);
    for (next, p) in transition_distribution(state, action, &w, problem.dataset).unwrap() {
        let f_next = state_functionals(problem, &next);
        let r = step_reward(
            action,
            &problem.reward,
            problem.dataset.assays(),
            Some(f.h - f_next.h),
        )
        .unwrap();
        let (d, pen) = state_value(problem, &next, false);
        pair.0 += p * (r + problem.reward.gamma * d);
        pair.1 += p * pen;
    }
    pair
}

/// Exhaustive expectimax over the exact transition distribution. Each
/// state keeps the action with the highest total, and passes its reward
/// and penalty parts up separately.
pub fn state_value(problem: &Problem, state: &CandidateState, is_root: bool) -> Pair {
    let f = state_functionals(problem, state);
    let n = problem.dataset.n_assays();
    if is_terminal(state, f.h, problem.reward.epsilon, problem.horizon(), n) {
        return (0.0, unmet(problem, f.h));
    }
    if !is_root && !is_feasible(f.l, problem.reward.tau) {
        return (0.0, problem.reward.penalty);
    }
    enumerate_actions(state, problem.reward.max_batch, n)
        .iter()
        .map(|a| action_value(problem, state, a))
        .fold((f64::NEG_INFINITY, 0.0), |best, v| {
            if v.0 + v.1 > best.0 + best.1 {
                v
            } else {
                best
            }
        })
}

/// Total value of every root action.
pub fn expectimax_root(problem: &Problem, root: &CandidateState) -> Vec<(ActionBatch, f64)> {
    enumerate_actions(root, problem.reward.max_batch, problem.dataset.n_assays())
        .into_iter()
        .map(|a| {
            let v = action_value(problem, root, &a);
            (a, v.0 + v.1)
        })
        .collect()
}

/// Random small instance: N in 3..=6 records, M in 2..=3 assays, one
/// predictor, coarse values so outcomes sometimes coincide, cost mode.
pub fn micro_instance(seed: u64) -> (Dataset, RewardConfig, CandidateState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(3..=6);
        let m = rng.random_range(2..=3);
        let mut features = vec![FeatureSpec {
            name: "qsar".into(),
            kind: FeatureKind::Predictor,
            lambda: 1.0,
            required: false,
            stats: None,
        }];
        let mut assays = Vec::new();
        for j in 0..m {
            features.push(FeatureSpec {
                name: format!("y{j}"),
                kind: FeatureKind::AssayOutcome,
                lambda: 1.0,
                required: false,
                stats: None,
            });
            assays.push(AssaySpec {
                name: format!("a{j}"),
                outcome_feature: FeatureId(j + 1),
                cost: vec![(rng.random_range(0.5..3.0f64) * 10.0).round() / 10.0],
            });
        }
        let records = (0..n)
            .map(|i| HistoricalRecord {
                record_id: i.to_string(),
                values: (0..=m)
                    .map(|_| (rng.random_range(0.0..3.0f64) * 2.0).round() / 2.0)
                    .collect(),
                target: Some((rng.random_range(0.0..3.0f64) * 10.0).round() / 10.0),
            })
            .collect();
        let ds = Dataset::from_parts(DatasetParts {
            features,
            assays,
            records,
            target_name: "g".into(),
            goal_range: GoalRange::new(0.5, 2.0),
            cost_dims: vec!["cost".into()],
            target_assay: None,
        })
        .unwrap();
        let Ok(ds) = ds.with_feature_stats() else {
            continue;
        };
        let root = CandidateState::new(
            [(
                FeatureId(0),
                (rng.random_range(0.0..3.0f64) * 10.0).round() / 10.0,
            )]
            .into_iter()
            .collect(),
        );
        let w = compute_weights(&root, &ds, &KernelConfig::default()).unwrap();
        let h0 = Functionals::of(&w, &ds).unwrap().h;
        let reward = RewardConfig {
            mode: RewardMode::Cost,
            rho: vec![],
            gamma: 0.95,
            penalty: -25.0,
            horizon: Some(m),
            epsilon: h0 * rng.random_range(0.2..0.6),
            tau: if rng.random_bool(0.5) { 0.0 } else { 0.3 },
            max_batch: rng.random_range(1..=m),
        };
        return (ds, reward, root);
    }
}

/// Random dataset with `n` records, `n_pred` predictors and `n_assays`
/// assays. Values are continuous unless `coarse`, in which case they are
/// rounded to halves so outcomes coincide.
pub fn random_dataset(
    rng: &mut impl Rng,
    n: usize,
    n_pred: usize,
    n_assays: usize,
    coarse: bool,
) -> Dataset {
    loop {
        let mut features = Vec::new();
        for p in 0..n_pred {
            features.push(FeatureSpec {
                name: format!("p{p}"),
                kind: FeatureKind::Predictor,
                lambda: rng.random_range(0.5..2.0),
                required: false,
                stats: None,
            });
        }
        let mut assays = Vec::new();
        for j in 0..n_assays {
            features.push(FeatureSpec {
                name: format!("y{j}"),
                kind: FeatureKind::AssayOutcome,
                lambda: rng.random_range(0.5..2.0),
                required: false,
                stats: None,
            });
            assays.push(AssaySpec {
                name: format!("a{j}"),
                outcome_feature: FeatureId(n_pred + j),
                cost: vec![rng.random_range(0.5..3.0)],
            });
        }
        let m = features.len();
        let records = (0..n)
            .map(|i| HistoricalRecord {
                record_id: i.to_string(),
                values: (0..m)
                    .map(|_| {
                        let v: f64 = rng.random_range(-2.0..2.0);
                        if coarse {
                            (v * 2.0).round() / 2.0
                        } else {
                            v
                        }
                    })
                    .collect(),
                target: Some(rng.random_range(0.0..3.0)),
            })
            .collect();
        let ds = Dataset::from_parts(DatasetParts {
            features,
            assays,
            records,
            target_name: "g".into(),
            goal_range: GoalRange::new(0.5, 2.0),
            cost_dims: vec!["cost".into()],
            target_assay: None,
        })
        .unwrap();
        if let Ok(ds) = ds.with_feature_stats() {
            return ds;
        }
    }
}

/// Best discounted return from `measured` by brute force over every
/// ordered partition of the unmeasured assays into nonempty batches.
/// Returns the value and the winning first batch, ties broken by lower
/// batch cost then canonical order.
pub fn enumerate_sequences(
    n_assays: usize,
    measured: u64,
    costs: &[f64],
    gamma: f64,
    reward: &dyn Fn(u64, u64) -> f64,
) -> (f64, Option<u64>) {
    fn walk(
        measured: u64,
        full: u64,
        gamma: f64,
        reward: &dyn Fn(u64, u64) -> f64,
        acc: f64,
        disc: f64,
        first: Option<u64>,
        out: &mut Vec<(f64, u64)>,
    ) {
        let rest = full & !measured;
        if rest == 0 {
            if let Some(f) = first {
                out.push((acc, f));
            }
            return;
        }
        // Every nonempty submask of the unmeasured assays.
        let mut b = rest;
        while b != 0 {
            let r = reward(measured, b);
            walk(
                measured | b,
                full,
                gamma,
                reward,
                acc + disc * r,
                disc * gamma,
                first.or(Some(b)),
                out,
            );
            b = (b - 1) & rest;
        }
    }
    let full = (1u64 << n_assays) - 1;
    let mut seqs = Vec::new();
    walk(measured, full, gamma, reward, 0.0, 1.0, None, &mut seqs);
    if seqs.is_empty() {
        return (0.0, None);
    }
    let cost = |b: u64| -> f64 {
        (0..n_assays)
            .filter(|k| b >> k & 1 == 1)
            .map(|k| costs[k])
            .sum()
    };
    let canon = |b: u64| -> (u32, Vec<usize>) {
        (
            b.count_ones(),
            (0..n_assays).filter(|k| b >> k & 1 == 1).collect(),
        )
    };
    let best = seqs.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let first = seqs
        .iter()
        .filter(|s| s.0 >= best - 1e-12)
        .map(|s| s.1)
        .min_by(|&a, &b| cost(a).total_cmp(&cost(b)).then(canon(a).cmp(&canon(b))))
        .unwrap();
    (best, Some(first))
}

/// Total-variation distance and chi-square statistic (with its 99.9%
/// critical value) between `draws` sampled transitions and the exact law,
/// for one random dataset with at most ten records.
pub struct LawCheck {
    pub tv: f64,
    pub chi2: f64,
    pub critical: f64,
}

pub fn transition_law_check(seed: u64, draws: usize) -> LawCheck {
    use assayplan_core::env::sample_transition;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=10);
    let n_assays = rng.random_range(1..=3);
    let ds = random_dataset(&mut rng, n, 1, n_assays, true);
    let kernel = KernelConfig::default();
    let state = CandidateState::new(
        [(FeatureId(0), rng.random_range(-2.0..2.0))]
            .into_iter()
            .collect(),
    );
    let all: Vec<ActionBatch> = enumerate_actions(&state, n_assays, n_assays)
        .into_iter()
        .filter(|a| !a.is_eox())
        .collect();
    let batch = all[rng.random_range(0..all.len())];
    let weights = compute_weights(&state, &ds, &kernel).unwrap();
    let exact = transition_distribution(&state, &batch, &weights, &ds).unwrap();
    law_against(&exact, draws, &mut rng, |rng| {
        sample_transition(&state, &batch, &weights, &ds, rng)
            .unwrap()
            .next_state
    })
}

/// Compares sampled states with an exact categorical law over states.
pub fn law_against(
    exact: &[(CandidateState, f64)],
    draws: usize,
    rng: &mut ChaCha8Rng,
    mut sample: impl FnMut(&mut ChaCha8Rng) -> CandidateState,
) -> LawCheck {
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    let key = |s: &CandidateState| -> Vec<(FeatureId, u64)> {
        s.known.iter().map(|(f, v)| (*f, v.to_bits())).collect()
    };
    let index: std::collections::BTreeMap<_, usize> = exact
        .iter()
        .enumerate()
        .map(|(i, (s, _))| (key(s), i))
        .collect();
    let mut counts = vec![0usize; exact.len()];
    for _ in 0..draws {
        let s = sample(rng);
        counts[*index
            .get(&key(&s))
            .expect("sampled state outside the exact support")] += 1;
    }
    let n = draws as f64;
    let tv = 0.5
        * exact
            .iter()
            .zip(&counts)
            .map(|((_, p), &c)| (c as f64 / n - p).abs())
            .sum::<f64>();
    let mut chi2 = 0.0;
    let mut cells = 0;
    for ((_, p), &c) in exact.iter().zip(&counts) {
        if *p > 0.0 {
            let e = n * p;
            chi2 += (c as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    let critical = if cells > 1 {
        ChiSquared::new((cells - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999)
    } else {
        f64::INFINITY
    };
    LawCheck { tv, chi2, critical }
}

/// Median relative error of the similarity-based conditional variance
/// against the exact one at `measured`, over `seeds` fresh synthetic
/// datasets of `n` records.
pub fn consistency_error(n: usize, seeds: u64, measured: u64) -> f64 {
    use assayplan_core::env::AssaySet;
    use assayplan_core::synthetic::{generate_candidate, generate_dataset, SyntheticSpec};

    let spec = SyntheticSpec {
        n_records: n,
        ..SyntheticSpec::standard()
    };
    let mut errs: Vec<f64> = (0..seeds)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let data = generate_dataset(&spec, &mut rng).unwrap();
            let cand = generate_candidate(&spec, &mut rng).unwrap();
            let set = AssaySet(measured);
            let exact = data.exact_conditional_variance(&spec, set);
            let est =
                data.estimated_conditional_variance(&cand.values, set, &KernelConfig::default());
            (est - exact).abs() / exact
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    let k = errs.len();
    if k % 2 == 1 {
        errs[k / 2]
    } else {
        0.5 * (errs[k / 2 - 1] + errs[k / 2])
    }
}

/// Folds the observations in random chunks and compares every step with a
/// from-scratch recomputation.
pub fn bayes_update_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=40);
    let n_pred = rng.random_range(1..=3);
    let n_assays = rng.random_range(1..=4);
    let ds = random_dataset(&mut rng, n, n_pred, n_assays, false);
    let kernel = KernelConfig {
        lambda_w: rng.random_range(0.25..4.0),
        target_leak_guard: true,
    };
    let mut order: Vec<usize> = (0..ds.features().len()).collect();
    order.shuffle(&mut rng);

    let mut state = CandidateState::default();
    let mut weights = compute_weights(&state, &ds, &kernel).unwrap();
    let mut worst: f64 = 0.0;
    let mut rest = &order[..];
    while !rest.is_empty() {
        let k = rng.random_range(1..=rest.len());
        let obs: BTreeMap<FeatureId, f64> = rest[..k]
            .iter()
            .map(|&f| (FeatureId(f), rng.random_range(-3.0..3.0)))
            .collect();
        rest = &rest[k..];
        weights = update_weights_incremental(&weights, &obs, &ds, &kernel).unwrap();
        state.known.extend(obs);
        let scratch = compute_weights(&state, &ds, &kernel).unwrap();
        for (a, b) in weights.normalized.iter().zip(&scratch.normalized) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Three records with values and targets 0, 1, 2, unit variance and goal
/// range [0.5, 1.5].
pub fn toy_dataset() -> Dataset {
    Dataset::from_parts(DatasetParts {
        features: vec![FeatureSpec {
            name: "y1".into(),
            kind: FeatureKind::AssayOutcome,
            lambda: 1.0,
            required: false,
            stats: Some(FeatureStats {
                mean: 1.0,
                variance: 1.0,
            }),
        }],
        assays: vec![AssaySpec {
            name: "a1".into(),
            outcome_feature: FeatureId(0),
            cost: vec![1.0],
        }],
        records: (0..3)
            .map(|i| HistoricalRecord {
                record_id: i.to_string(),
                values: vec![f64::from(i)],
                target: Some(f64::from(i)),
            })
            .collect(),
        target_name: "g".into(),
        goal_range: GoalRange::new(0.5, 1.5),
        cost_dims: vec!["cost".into()],
        target_assay: None,
    })
    .expect("toy dataset")
}

/// Normalized toy weights after observing `y1 = value`.
pub fn toy_weights(value: f64) -> Vec<f64> {
    let state = CandidateState::new([(FeatureId(0), value)].into_iter().collect());
    compute_weights(&state, &toy_dataset(), &KernelConfig::default())
        .expect("toy weights")
        .normalized
}

/// Outcome of comparing VI-Theo with enumeration on one standard instance.
#[derive(Debug, Clone, Copy)]
pub struct ViCheck {
    pub residual: f64,
    pub states: usize,
    pub action_mismatches: usize,
    pub value_error: f64,
    /// Worst gap between the batch reward and its closed form.
    pub reward_error: f64,
}

pub fn vi_theo_check(seed: u64) -> ViCheck {
    use assayplan_core::env::AssaySet;
    use assayplan_core::synthetic::{generate_dataset, vi_theo, SyntheticSpec};
    let spec = SyntheticSpec::standard();
    let data = generate_dataset(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).expect("standard data");
    let m = spec.n_assays();
    let cost = |b: u64| -> f64 {
        (0..m)
            .filter(|k| b >> k & 1 == 1)
            .map(|k| spec.costs[k])
            .sum()
    };
    let reward = |_: u64, b: u64| data.exact_reduction(&spec, AssaySet(b)) / cost(b);
    let policy = vi_theo(&spec, &data);
    let mut check = ViCheck {
        residual: policy.residual,
        states: 0,
        action_mismatches: 0,
        value_error: 0.0,
        reward_error: 0.0,
    };
    for s in 0..(1u64 << m) {
        let (value, first) = enumerate_sequences(m, s, &spec.costs, spec.gamma, &reward);
        check.states += 1;
        if policy.actions[s as usize].map(|a| a.0) != first {
            check.action_mismatches += 1;
        }
        check.value_error = check
            .value_error
            .max((policy.values[s as usize] - value).abs());
    }
    for b in 1..(1u64 << m) {
        let closed: f64 = (0..m)
            .filter(|k| b >> k & 1 == 1)
            .map(|k| spec.beta[k].powi(2) * data.assay_variance[k])
            .sum::<f64>()
            / cost(b);
        check.reward_error = check.reward_error.max((reward(0, b) - closed).abs());
    }
    check
}

/// Value of the planner's root action on micro instance `seed` and the
/// best expectimax value.
pub fn planner_oracle_case(seed: u64, n_itr: usize) -> (f64, f64) {
    use assayplan_core::planner::{plan, PlannerParams};
    let (ds, reward, root) = micro_instance(seed);
    let problem = Problem::new(&ds, KernelConfig::default(), reward).expect("micro problem");
    let values = expectimax_root(&problem, &root);
    let best = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let params = PlannerParams {
        n_itr,
        seed,
        ..PlannerParams::default()
    };
    let (_, policy) = plan(&problem, &root, &params).expect("plan");
    let chosen = values
        .iter()
        .find(|v| v.0 == policy.root_action)
        .expect("root action is legal")
        .1;
    (chosen, best)
}
