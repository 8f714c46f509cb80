//! Run configuration shared by the command line and the HTTP service.
//!
//! A config file is flat TOML: one `key = value` per line, plus an
//! optional `[candidate]` table of known feature values. Every key is
//! optional; command-line flags override file values, which override the
//! defaults below.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::belief::{CandidateState, KernelConfig};
use crate::data::Dataset;
use crate::ensemble::{default_grid, EnsembleConfig, OutcomeRule, SweepAxis};
use crate::env::{RewardConfig, RewardMode};
use crate::error::{Error, Result};
use crate::planner::PlannerParams;

/// Ensemble size and iteration budget for batch planning.
pub const PLAN_NE: usize = 50;
pub const PLAN_ITERS: usize = 20_000;
/// Budget used by the synthetic benchmark.
pub const BENCH_NE: usize = 20;
pub const BENCH_ITERS: usize = 5_000;
/// Reduced budget for interactive requests.
pub const SERVE_NE: usize = 20;
pub const SERVE_ITERS: usize = 2_000;
pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub ne: Option<usize>,
    pub iters: Option<usize>,
    /// Throughput cap on batch size.
    pub m: Option<usize>,
    pub serve_addr: Option<String>,
    pub journal: Option<PathBuf>,
    pub mode: Option<RewardMode>,
    pub rho: Option<Vec<f64>>,
    pub gamma: Option<f64>,
    pub penalty: Option<f64>,
    pub horizon: Option<usize>,
    pub lambda_w: Option<f64>,
    pub target_leak_guard: Option<bool>,
    pub c_ucb: Option<f64>,
    pub k_a: Option<f64>,
    pub alpha_a: Option<f64>,
    pub k_s: Option<f64>,
    pub alpha_s: Option<f64>,
    pub rollout_depth: Option<usize>,
    pub outcome_rule: Option<OutcomeRuleKind>,
    pub pareto_axis: Option<SweepAxis>,
    pub pareto_grid: Option<Vec<f64>>,
    pub n_trials: Option<usize>,
    /// Known feature values of the candidate, by feature name.
    pub candidate: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeRuleKind {
    Expected,
    Sampled,
}

macro_rules! overlay {
    ($base:ident, $over:ident; $($field:ident),* $(,)?) => {
        RunConfig { $($field: $over.$field.or($base.$field)),* }
    };
}

macro_rules! fill {
    ($cfg:ident, $defaults:ident; $($field:ident),* $(,)?) => {
        $( if $cfg.$field.is_none() { $cfg.$field = $defaults.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Values set in `over` win.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        let base = self;
        overlay!(base, over;
            dataset, schema, out, seed, tau, epsilon, ne, iters, m, serve_addr, journal,
            mode, rho, gamma, penalty, horizon, lambda_w, target_leak_guard, c_ucb, k_a,
            alpha_a, k_s, alpha_s, rollout_depth, outcome_rule, pareto_axis, pareto_grid,
            n_trials, candidate)
    }

    /// Every tunable key filled in, for echoing next to outputs. `ne` and
    /// `iters` take the given command-specific defaults.
    pub fn resolved(&self, ne: usize, iters: usize) -> RunConfig {
        let kernel = KernelConfig::default();
        let reward = RewardConfig::default();
        let planner = PlannerParams::default();
        let defaults = RunConfig {
            seed: Some(0),
            tau: Some(reward.tau),
            epsilon: Some(reward.epsilon),
            ne: Some(ne),
            iters: Some(iters),
            m: Some(reward.max_batch),
            mode: Some(reward.mode),
            rho: Some(reward.rho),
            gamma: Some(reward.gamma),
            penalty: Some(reward.penalty),
            lambda_w: Some(kernel.lambda_w),
            target_leak_guard: Some(kernel.target_leak_guard),
            c_ucb: Some(planner.c_ucb),
            k_a: Some(planner.k_a),
            alpha_a: Some(planner.alpha_a),
            k_s: Some(planner.k_s),
            alpha_s: Some(planner.alpha_s),
            outcome_rule: Some(OutcomeRuleKind::Expected),
            pareto_axis: Some(SweepAxis::Tau),
            pareto_grid: Some(default_grid()),
            ..RunConfig::default()
        };
        let mut cfg = self.clone();
        fill!(cfg, defaults;
            seed, tau, epsilon, ne, iters, m, mode, rho, gamma, penalty, lambda_w,
            target_leak_guard, c_ucb, k_a, alpha_a, k_s, alpha_s, outcome_rule,
            pareto_axis, pareto_grid);
        cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn kernel(&self) -> KernelConfig {
        let d = KernelConfig::default();
        KernelConfig {
            lambda_w: self.lambda_w.unwrap_or(d.lambda_w),
            target_leak_guard: self.target_leak_guard.unwrap_or(d.target_leak_guard),
        }
    }

    pub fn reward(&self) -> RewardConfig {
        let d = RewardConfig::default();
        RewardConfig {
            mode: self.mode.unwrap_or(d.mode),
            rho: self.rho.clone().unwrap_or(d.rho),
            gamma: self.gamma.unwrap_or(d.gamma),
            penalty: self.penalty.unwrap_or(d.penalty),
            horizon: self.horizon.or(d.horizon),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            tau: self.tau.unwrap_or(d.tau),
            max_batch: self.m.unwrap_or(d.max_batch),
        }
    }

    pub fn planner(&self, iters: usize) -> PlannerParams {
        let d = PlannerParams::default();
        PlannerParams {
            n_itr: self.iters.unwrap_or(iters),
            c_ucb: self.c_ucb.unwrap_or(d.c_ucb),
            k_a: self.k_a.unwrap_or(d.k_a),
            alpha_a: self.alpha_a.unwrap_or(d.alpha_a),
            k_s: self.k_s.unwrap_or(d.k_s),
            alpha_s: self.alpha_s.unwrap_or(d.alpha_s),
            rollout_depth: self.rollout_depth.or(d.rollout_depth),
            seed: self.seed(),
        }
    }

    pub fn ensemble(&self, ne: usize, iters: usize) -> EnsembleConfig {
        EnsembleConfig {
            n_e: self.ne.unwrap_or(ne),
            base_seed: self.seed(),
            planner: self.planner(iters),
        }
    }

    pub fn outcome_rule(&self) -> OutcomeRule {
        match self.outcome_rule.unwrap_or(OutcomeRuleKind::Expected) {
            OutcomeRuleKind::Expected => OutcomeRule::Expected,
            OutcomeRuleKind::Sampled => OutcomeRule::Sampled { seed: self.seed() },
        }
    }

    pub fn pareto_axis(&self) -> SweepAxis {
        self.pareto_axis.unwrap_or(SweepAxis::Tau)
    }

    pub fn pareto_grid(&self) -> Vec<f64> {
        self.pareto_grid.clone().unwrap_or_else(default_grid)
    }

    /// Root state from the `[candidate]` table; unknown names are errors
    /// and required predictors must be present.
    pub fn candidate_state(&self, dataset: &Dataset) -> Result<CandidateState> {
        candidate_from_names(self.candidate.iter().flatten(), dataset)
    }
}

/// Builds a root state from `(feature name, value)` pairs.
pub fn candidate_from_names<'a>(
    values: impl IntoIterator<Item = (&'a String, &'a f64)>,
    dataset: &Dataset,
) -> Result<CandidateState> {
    let mut known = BTreeMap::new();
    for (name, &value) in values {
        let f = dataset
            .feature_by_name(name)
            .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
        if !value.is_finite() {
            return Err(Error::Config(format!(
                "candidate value for {name} is not finite"
            )));
        }
        known.insert(f, value);
    }
    for (i, spec) in dataset.features().iter().enumerate() {
        if spec.required && !known.contains_key(&crate::data::FeatureId(i)) {
            return Err(Error::MissingRequired(spec.name.clone()));
        }
    }
    let mut state = CandidateState::new(known);
    for (j, assay) in dataset.assays().iter().enumerate() {
        if state.known.contains_key(&assay.outcome_feature) {
            state.measured.insert(crate::data::AssayId(j));
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file = RunConfig::from_toml_str("tau = 0.6\nepsilon = 0.2\nne = 7\n").unwrap();
        let flags = RunConfig {
            tau: Some(0.9),
            ..RunConfig::default()
        };
        let cfg = file.overlay(flags);
        assert_eq!(cfg.reward().tau, 0.9);
        assert_eq!(cfg.reward().epsilon, 0.2);
        assert_eq!(cfg.reward().gamma, 0.95);
        assert_eq!(cfg.ensemble(PLAN_NE, PLAN_ITERS).n_e, 7);
        assert_eq!(cfg.ensemble(PLAN_NE, PLAN_ITERS).planner.n_itr, PLAN_ITERS);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("taux = 0.6\n").is_err());
    }

    #[test]
    fn resolved_round_trips() {
        let cfg = RunConfig::from_toml_str(
            "tau = 0.6\nmode = \"info_per_cost\"\n[candidate]\nqsar = 1.5\n",
        )
        .unwrap()
        .resolved(PLAN_NE, PLAN_ITERS);
        assert_eq!(cfg.c_ucb, Some(5.0));
        assert_eq!(cfg.ne, Some(PLAN_NE));
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
