//! One planning request end to end: ensemble, root vote histogram, MLASP
//! and an optional tolerance sweep, in a serializable report.

use std::io::Write;

use serde::Serialize;

use crate::belief::CandidateState;
use crate::config::RunConfig;
use crate::data::Dataset;
use crate::ensemble::{
    build_mlasp, pareto_sweep, run_ensemble, top_k_actions, vote_actions, Mlasp, ParetoSweep,
};
use crate::env::Problem;
use crate::error::Result;
use crate::planner::StateKey;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoteRow {
    pub action: String,
    pub votes: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub schema_version: u32,
    pub n_e: usize,
    pub n_itr: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub mlasp: Mlasp,
    /// Root votes, most voted first.
    pub votes: Vec<VoteRow>,
    pub abstained: usize,
    pub pareto: Option<ParetoSweep>,
}

/// Runs the ensemble from `root` with the settings in `cfg`; `ne` and
/// `iters` are the defaults when `cfg` leaves them unset.
pub fn plan_report(
    dataset: &Dataset,
    cfg: &RunConfig,
    root: &CandidateState,
    ne: usize,
    iters: usize,
    with_pareto: bool,
) -> Result<PlanReport> {
    let kernel = cfg.kernel();
    let reward = cfg.reward();
    let ensemble = cfg.ensemble(ne, iters);
    let problem = Problem::new(dataset, kernel, reward.clone())?;
    let policies = run_ensemble(&problem, root, &ensemble)?;
    let mlasp = build_mlasp(&policies, &problem, root, cfg.outcome_rule())?;

    let hist = vote_actions(&policies, &StateKey::root());
    let voters = hist.votes().max(1) as f64;
    let votes = top_k_actions(&hist, hist.counts.len(), &problem)
        .into_iter()
        .map(|a| VoteRow {
            action: a.label(dataset),
            votes: hist.counts[&a],
            fraction: hist.counts[&a] as f64 / voters,
        })
        .collect();

    let pareto = if with_pareto {
        Some(pareto_sweep(
            dataset,
            kernel,
            &reward,
            root,
            &ensemble,
            cfg.pareto_axis(),
            &cfg.pareto_grid(),
        )?)
    } else {
        None
    };
    Ok(PlanReport {
        schema_version: crate::SCHEMA_VERSION,
        n_e: ensemble.n_e,
        n_itr: ensemble.planner.n_itr,
        tau: reward.tau,
        epsilon: reward.epsilon,
        mlasp,
        votes,
        abstained: hist.abstained,
        pareto,
    })
}

impl PlanReport {
    pub fn write_votes_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["action", "votes", "fraction"])?;
        for v in &self.votes {
            w.write_record([
                v.action.clone(),
                v.votes.to_string(),
                v.fraction.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn write_pareto_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "axis",
            "tolerance",
            "spend",
            "first_batch",
            "final_h",
            "constraint_met",
            "dominated",
        ])?;
        if let Some(sweep) = &self.pareto {
            let axis = match sweep.axis {
                crate::ensemble::SweepAxis::Tau => "tau",
                crate::ensemble::SweepAxis::Epsilon => "epsilon",
            };
            for p in &sweep.points {
                w.write_record([
                    axis.to_string(),
                    p.tolerance.to_string(),
                    p.spend.to_string(),
                    p.first_batch_label.clone(),
                    p.final_h.to_string(),
                    p.constraint_met.to_string(),
                    p.dominated.to_string(),
                ])?;
            }
        }
        w.flush()
    }

    /// Short human-readable plan: one line per batch with spend and `H`.
    pub fn summary(&self) -> String {
        let m = &self.mlasp;
        let mut s = format!(
            "MLASP ({} planners, {} iterations each, tau {}, epsilon {})\n",
            self.n_e, self.n_itr, self.tau, self.epsilon
        );
        s.push_str(&format!(
            "  start: H {:.4}, L {:.4}\n",
            m.initial_h, m.initial_l
        ));
        for (i, step) in m.steps.iter().enumerate() {
            s.push_str(&format!(
                "  step {}: {} ({}/{} votes) spend {} H {:.4} L {:.4}\n",
                i + 1,
                step.label,
                step.votes,
                step.voters,
                step.cumulative_spend,
                step.h_after,
                step.l_after
            ));
        }
        s.push_str(&format!(
            "  total spend {}, final H {:.4}, constraint {}{}\n",
            m.spend,
            m.final_h,
            if m.constraint_met { "met" } else { "not met" },
            if m.truncated { " (path truncated)" } else { "" }
        ));
        s
    }
}
