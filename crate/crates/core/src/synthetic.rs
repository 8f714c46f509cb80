//! Synthetic linear-Gaussian benchmark: data generator, the exact
//! value-iteration oracle (VI-Theo), its similarity-based counterpart
//! (VI-Sim), and the alignment protocol comparing them with the ensemble
//! tree search.
//!
//! Assays are independent truncated normals and the target is
//! `g = beta . y + noise`, so the conditional variance after measuring a
//! set of assays has a closed form.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::belief::{add_feature_terms, CandidateState, Functionals, KernelConfig};
use crate::data::{
    AssayId, AssaySpec, Dataset, DatasetParts, FeatureId, FeatureKind, FeatureSpec, GoalRange,
    HistoricalRecord,
};
use crate::ensemble::{run_ensemble, top_k_actions, vote_actions, EnsembleConfig};
use crate::env::{ActionBatch, AssaySet, Problem, RewardConfig, RewardMode};
use crate::error::{Error, Result};
use crate::planner::{PlannerParams, StateKey};

/// Parameters of a truncated normal `TN(mu, sigma; lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncNormal {
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_records: usize,
    /// One entry per assay.
    pub assays: Vec<TruncNormal>,
    pub beta: Vec<f64>,
    pub noise: TruncNormal,
    pub costs: Vec<f64>,
    /// Optional cost of measuring the target itself; unused by the
    /// benchmark.
    pub c_target: Option<f64>,
    pub gamma: f64,
}

impl SyntheticSpec {
    /// Six assays with means `50 a / 6`, 30% scale, support `(0, 2 mu)`,
    /// 200 records.
    pub fn standard() -> Self {
        let assays = (1..=6)
            .map(|a| {
                let mu = 50.0 * a as f64 / 6.0;
                TruncNormal {
                    mu,
                    sigma: 0.3 * mu,
                    lower: 0.0,
                    upper: 2.0 * mu,
                }
            })
            .collect();
        Self {
            n_records: 200,
            assays,
            beta: vec![0.3, 0.25, 0.2, 0.15, 0.07, 0.03],
            noise: TruncNormal {
                mu: 0.0,
                sigma: 5.0,
                lower: -10.0,
                upper: 10.0,
            },
            costs: vec![1.0, 1.2, 1.5, 1.8, 2.0, 2.2],
            c_target: Some(10.0),
            gamma: 0.95,
        }
    }

    pub fn n_assays(&self) -> usize {
        self.assays.len()
    }

    pub fn check(&self) -> Result<()> {
        let m = self.n_assays();
        if m == 0 || m > 20 {
            return Err(Error::Config(format!(
                "synthetic spec needs 1..=20 assays, got {m}"
            )));
        }
        if self.beta.len() != m || self.costs.len() != m {
            return Err(Error::Config(
                "beta and costs need one entry per assay".into(),
            ));
        }
        if self.n_records == 0 {
            return Err(Error::Config(
                "synthetic spec needs at least one record".into(),
            ));
        }
        for tn in self.assays.iter().chain(std::iter::once(&self.noise)) {
            if !(tn.sigma > 0.0) || !(tn.lower < tn.upper) {
                return Err(Error::Config(format!("invalid truncated normal {tn:?}")));
            }
        }
        if self.costs.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Config("synthetic costs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn batch_cost(&self, batch: AssaySet) -> f64 {
        batch.iter().map(|a| self.costs[a.0]).sum()
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Draw limit for the rejection loops.
pub const REJECTION_CAP: usize = 1_000_000;

/// One draw from `TN(mu, sigma; a, b)` by rejection. When the interval
/// holds less than 0.1% of the normal mass, proposals come from the
/// uniform on `[a, b]` instead of the normal.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mu: f64,
    sigma: f64,
    a: f64,
    b: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(sigma > 0.0) || !(a < b) {
        return Err(Error::Config(format!(
            "truncated normal needs sigma > 0 and a < b, got sigma={sigma}, [{a}, {b}]"
        )));
    }
    let mass = std_normal_cdf((b - mu) / sigma) - std_normal_cdf((a - mu) / sigma);
    if mass >= 1e-3 {
        let normal = Normal::new(mu, sigma).expect("sigma checked positive");
        for _ in 0..REJECTION_CAP {
            let x = normal.sample(rng);
            if (a..=b).contains(&x) {
                return Ok(x);
            }
        }
        return Err(Error::RejectionCap(REJECTION_CAP));
    }
    // Density ratio against the peak of the normal inside [a, b].
    let peak = mu.clamp(a, b);
    let log_peak = -0.5 * ((peak - mu) / sigma).powi(2);
    for _ in 0..REJECTION_CAP {
        let x = rng.random_range(a..=b);
        let log_ratio = -0.5 * ((x - mu) / sigma).powi(2) - log_peak;
        if rng.random::<f64>().ln() <= log_ratio {
            return Ok(x);
        }
    }
    Err(Error::RejectionCap(REJECTION_CAP))
}

fn draw(tn: &TruncNormal, rng: &mut impl Rng) -> Result<f64> {
    sample_truncated_normal(tn.mu, tn.sigma, tn.lower, tn.upper, rng)
}

/// A generated dataset with the quantities the oracles need.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Per-record assay values, row-wise.
    pub values: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
    pub targets: Vec<f64>,
    /// Population variance of each generated assay column.
    pub assay_variance: Vec<f64>,
    /// Population variance of the generated noise.
    pub noise_variance: f64,
}

/// A candidate with its full, normally hidden, assay profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCandidate {
    pub values: Vec<f64>,
    pub noise: f64,
    pub target: f64,
}

fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

fn draw_profile(spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<Vec<f64>> {
    spec.assays.iter().map(|tn| draw(tn, rng)).collect()
}

fn linear_target(spec: &SyntheticSpec, values: &[f64], noise: f64) -> f64 {
    spec.beta
        .iter()
        .zip(values)
        .map(|(b, y)| b * y)
        .sum::<f64>()
        + noise
}

/// Draws all assay profiles, then all noise terms, then forms the targets.
pub fn generate_dataset(spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<SyntheticData> {
    spec.check()?;
    let m = spec.n_assays();
    let values = (0..spec.n_records)
        .map(|_| draw_profile(spec, rng))
        .collect::<Result<Vec<_>>>()?;
    let noise = (0..spec.n_records)
        .map(|_| draw(&spec.noise, rng))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = values
        .iter()
        .zip(&noise)
        .map(|(y, e)| linear_target(spec, y, *e))
        .collect();

    let features = (0..m)
        .map(|a| FeatureSpec {
            name: format!("y{}", a + 1),
            kind: FeatureKind::AssayOutcome,
            lambda: 1.0,
            required: false,
            stats: None,
        })
        .collect();
    let assays = (0..m)
        .map(|a| AssaySpec {
            name: format!("a{}", a + 1),
            outcome_feature: FeatureId(a),
            cost: vec![spec.costs[a]],
        })
        .collect();
    let records = values
        .iter()
        .zip(&targets)
        .enumerate()
        .map(|(i, (y, g))| HistoricalRecord {
            record_id: (i + 1).to_string(),
            values: y.clone(),
            target: Some(*g),
        })
        .collect();
    let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dataset = Dataset::from_parts(DatasetParts {
        features,
        assays,
        records,
        target_name: "g".into(),
        goal_range: GoalRange::new(lo, hi),
        cost_dims: vec!["cost".into()],
        target_assay: None,
    })?
    .with_feature_stats()?;

    let assay_variance = (0..m)
        .map(|a| population_variance(dataset.column(FeatureId(a))))
        .collect();
    let noise_variance = population_variance(&noise);
    Ok(SyntheticData {
        dataset,
        values,
        noise,
        targets,
        assay_variance,
        noise_variance,
    })
}

/// A fresh candidate from the same generator.
pub fn generate_candidate(spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<SyntheticCandidate> {
    let values = draw_profile(spec, rng)?;
    let noise = draw(&spec.noise, rng)?;
    let target = linear_target(spec, &values, noise);
    Ok(SyntheticCandidate {
        values,
        noise,
        target,
    })
}

impl SyntheticData {
    /// `sum over unmeasured k of beta_k^2 var_k + var_noise`, with the
    /// sample's own variances.
    pub fn exact_conditional_variance(&self, spec: &SyntheticSpec, measured: AssaySet) -> f64 {
        let unmeasured: f64 = (0..spec.n_assays())
            .filter(|&k| !measured.contains(AssayId(k)))
            .map(|k| spec.beta[k].powi(2) * self.assay_variance[k])
            .sum();
        unmeasured + self.noise_variance
    }

    /// Exact variance reduction of measuring `batch`.
    pub fn exact_reduction(&self, spec: &SyntheticSpec, batch: AssaySet) -> f64 {
        batch
            .iter()
            .map(|k| spec.beta[k.0].powi(2) * self.assay_variance[k.0])
            .sum()
    }

    /// Similarity-weighted target variance when the candidate's values on
    /// `measured` are known.
    pub fn estimated_conditional_variance(
        &self,
        candidate: &[f64],
        measured: AssaySet,
        kernel: &KernelConfig,
    ) -> f64 {
        let ds = &self.dataset;
        let mut distances = vec![0.0; ds.len()];
        for a in measured.iter() {
            add_feature_terms(ds, FeatureId(a.0), candidate[a.0], &mut distances);
        }
        Functionals::from_distances(&distances, ds, kernel.lambda_w).h
    }
}

/// Value table and greedy action for every measured set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetPolicy {
    pub n_assays: usize,
    /// Indexed by the measured-set bitmask.
    pub values: Vec<f64>,
    /// `None` only for the full set.
    pub actions: Vec<Option<AssaySet>>,
    pub iterations: usize,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
}

impl SubsetPolicy {
    pub fn first_action(&self) -> Option<AssaySet> {
        self.actions[0]
    }
}

/// Values closer than this count as tied.
pub const VALUE_TIE: f64 = 1e-12;

/// Jacobi value iteration over measured sets with nonempty batch actions,
/// up to `max_iter` sweeps or a sup-norm change below `tol`. Ties go to
/// the lower batch cost, then canonical order.
pub fn value_iteration(
    n_assays: usize,
    costs: &[f64],
    gamma: f64,
    reward: impl Fn(AssaySet, AssaySet) -> f64,
    max_iter: usize,
    tol: f64,
) -> SubsetPolicy {
    let n_states = 1usize << n_assays;
    let full = AssaySet::full(n_assays);
    let batch_cost = |b: AssaySet| -> f64 { b.iter().map(|a| costs[a.0]).sum() };

    // Canonically ordered batches for each state, with their rewards.
    let options: Vec<Vec<(AssaySet, f64, f64)>> = (0..n_states)
        .map(|s| {
            let measured = AssaySet(s as u64);
            crate::env::actions_for(full.difference(measured), n_assays)
                .into_iter()
                .filter_map(|a| match a {
                    ActionBatch::Batch(b) => Some((b, reward(measured, b), batch_cost(b))),
                    ActionBatch::Eox => None,
                })
                .collect()
        })
        .collect();

    let mut values = vec![0.0; n_states];
    let mut actions = vec![None; n_states];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        iterations += 1;
        let mut next = vec![0.0; n_states];
        residual = 0.0;
        for s in 0..n_states {
            let mut best: Option<(AssaySet, f64, f64)> = None;
            for &(b, r, c) in &options[s] {
                let v = r + gamma * values[(s as u64 | b.0) as usize];
                let better = match best {
                    None => true,
                    Some((_, bv, bc)) => {
                        v > bv + VALUE_TIE || ((v - bv).abs() <= VALUE_TIE && c < bc)
                    }
                };
                if better {
                    best = Some((b, v, c));
                }
            }
            if let Some((b, v, _)) = best {
                next[s] = v;
                actions[s] = Some(b);
            }
            residual = f64::max(residual, (next[s] - values[s]).abs());
        }
        values = next;
        if residual < tol {
            break;
        }
    }
    SubsetPolicy {
        n_assays,
        values,
        actions,
        iterations,
        residual,
    }
}

/// Optimal policy under the exact conditional variance.
pub fn vi_theo(spec: &SyntheticSpec, data: &SyntheticData) -> SubsetPolicy {
    value_iteration(
        spec.n_assays(),
        &spec.costs,
        spec.gamma,
        |_, b| data.exact_reduction(spec, b) / spec.batch_cost(b),
        1000,
        1e-6,
    )
}

/// Same recursion with the similarity-weighted variance, conditioning on
/// the candidate's true values for hypothetically measured assays.
pub fn vi_sim(
    spec: &SyntheticSpec,
    data: &SyntheticData,
    candidate: &[f64],
    kernel: &KernelConfig,
) -> SubsetPolicy {
    let m = spec.n_assays();
    let h: Vec<f64> = (0..1u64 << m)
        .map(|s| data.estimated_conditional_variance(candidate, AssaySet(s), kernel))
        .collect();
    value_iteration(
        m,
        &spec.costs,
        spec.gamma,
        |measured, b| {
            (h[measured.0 as usize] - h[measured.union(b).0 as usize]) / spec.batch_cost(b)
        },
        1000,
        1e-6,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n_trials: usize,
    pub master_seed: u64,
    pub spec: SyntheticSpec,
    pub kernel: KernelConfig,
    pub n_e: usize,
    pub planner: PlannerParams,
    /// Terminal threshold as a fraction of the root uncertainty.
    pub epsilon_fraction: f64,
    pub penalty: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_trials: 100,
            master_seed: 0,
            spec: SyntheticSpec::standard(),
            kernel: KernelConfig::default(),
            n_e: 20,
            planner: PlannerParams {
                n_itr: 5000,
                ..PlannerParams::default()
            },
            epsilon_fraction: 0.1,
            penalty: -1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentRow {
    pub trial: usize,
    #[serde(skip)]
    pub theo: AssaySet,
    #[serde(skip)]
    pub top1: Option<ActionBatch>,
    #[serde(skip)]
    pub top2: Vec<ActionBatch>,
    #[serde(skip)]
    pub sim: AssaySet,
    pub t1_match: bool,
    pub t2_match: bool,
    pub sim_match: bool,
    pub top1_votes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub rows: Vec<AlignmentRow>,
    pub t1_rate: f64,
    pub t2_rate: f64,
    pub sim_rate: f64,
}

fn set_label(set: AssaySet) -> String {
    ActionBatch::Batch(set).to_string()
}

impl AlignmentReport {
    fn from_rows(rows: Vec<AlignmentRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let rate = |f: fn(&AlignmentRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
        Self {
            t1_rate: rate(|r| r.t1_match),
            t2_rate: rate(|r| r.t2_match),
            sim_rate: rate(|r| r.sim_match),
            rows,
        }
    }

    /// One row per trial: VI-Theo action, tree-search Top-1 and Top-2,
    /// VI-Sim action and the three match flags.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "trial",
            "vi_theo",
            "planner_top1",
            "t1_match",
            "planner_top2",
            "t2_match",
            "vi_sim",
            "sim_match",
        ])?;
        for r in &self.rows {
            w.write_record([
                (r.trial + 1).to_string(),
                set_label(r.theo),
                r.top1.map_or("-".into(), |a| a.to_string()),
                u8::from(r.t1_match).to_string(),
                r.top2
                    .iter()
                    .map(|a| a.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                u8::from(r.t2_match).to_string(),
                set_label(r.sim),
                u8::from(r.sim_match).to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "n_trials": self.rows.len(),
            "t1_rate": self.t1_rate,
            "t2_rate": self.t2_rate,
            "sim_rate": self.sim_rate,
        })
    }
}

/// Runs one benchmark trial.
pub fn run_trial(config: &BenchmarkConfig, trial: usize) -> Result<AlignmentRow> {
    let spec = &config.spec;
    let trial_seed = config.master_seed.wrapping_add(trial as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let data = generate_dataset(spec, &mut rng)?;
    let candidate = generate_candidate(spec, &mut rng)?;

    let theo = vi_theo(spec, &data)
        .first_action()
        .expect("empty measured set has actions");
    let sim = vi_sim(spec, &data, &candidate.values, &config.kernel)
        .first_action()
        .expect("empty measured set has actions");

    let root = CandidateState::default();
    let h0 =
        data.estimated_conditional_variance(&candidate.values, AssaySet::EMPTY, &config.kernel);
    let m = spec.n_assays();
    let reward = RewardConfig {
        mode: RewardMode::InfoPerCost,
        rho: vec![1.0],
        gamma: spec.gamma,
        penalty: config.penalty,
        horizon: Some(m),
        epsilon: config.epsilon_fraction * h0,
        tau: 0.0,
        max_batch: m,
    };
    let problem = Problem::new(&data.dataset, config.kernel, reward)?;
    let ensemble = EnsembleConfig {
        n_e: config.n_e,
        base_seed: trial_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        planner: config.planner.clone(),
    };
    let policies = run_ensemble(&problem, &root, &ensemble)?;
    let hist = vote_actions(&policies, &StateKey::root());
    let top2 = top_k_actions(&hist, 2, &problem);
    let top1 = top2.first().copied();
    let union = top2
        .iter()
        .fold(AssaySet::EMPTY, |acc, a| acc.union(a.assays()));

    Ok(AlignmentRow {
        trial,
        theo,
        top1,
        top2,
        sim,
        t1_match: top1.is_some_and(|a| theo.is_subset(a.assays())),
        t2_match: theo.is_subset(union) && !union.is_empty(),
        sim_match: sim == theo,
        top1_votes: top1.map_or(0, |a| hist.counts[&a]),
    })
}

/// Runs `n_trials` independent trials; trial `t` is seeded with
/// `master_seed + t`.
pub fn run_alignment_benchmark(config: &BenchmarkConfig) -> Result<AlignmentReport> {
    if config.n_trials == 0 {
        return Err(Error::Config("empty protocol: n_trials is 0".into()));
    }
    config.spec.check()?;
    let rows = (0..config.n_trials)
        .into_par_iter()
        .map(|t| run_trial(config, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignmentReport::from_rows(rows))
}
