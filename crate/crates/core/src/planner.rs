//! Single-tree Monte Carlo tree search with double progressive widening
//! over the implicit transition model.
//!
//! Returns are split into a discounted reward part and an undiscounted
//! penalty part. A trajectory pays the infeasibility penalty at most once:
//! the first non-terminal state with `L < tau` (other than the root) ends
//! it. In cost mode an episode that ends with `H > epsilon` pays half the
//! penalty instead, otherwise stopping at once would always be optimal.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{CandidateState, Functionals};
use crate::data::AssayId;
use crate::env::{fill_cdf, measured_set, sample_cdf, ActionBatch, AssaySet, Problem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    /// Iterations per tree.
    pub n_itr: usize,
    pub c_ucb: f64,
    pub k_a: f64,
    pub alpha_a: f64,
    pub k_s: f64,
    pub alpha_s: f64,
    /// Maximum rollout length; `None` runs to a terminal state.
    pub rollout_depth: Option<usize>,
    pub seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            n_itr: 20_000,
            c_ucb: 5.0,
            k_a: 2.0,
            alpha_a: 0.5,
            k_s: 1.0,
            alpha_s: 0.5,
            rollout_depth: None,
            seed: 0,
        }
    }
}

impl PlannerParams {
    pub fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_itr == 0 {
            return bad("n_itr must be at least 1");
        }
        if !(self.c_ucb >= 0.0) {
            return bad("c_ucb must be non-negative");
        }
        if !(self.k_a >= 1.0) || !(self.k_s >= 1.0) {
            return bad("widening coefficients must be at least 1");
        }
        let unit = |a: f64| a > 0.0 && a < 1.0;
        if !unit(self.alpha_a) || !unit(self.alpha_s) {
            return bad("widening exponents must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Outcomes revealed since the root, sorted by assay: identifies a
/// decision state within one planning problem.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateKey(pub Vec<(AssayId, u64)>);

impl StateKey {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn extended(&self, revealed: impl IntoIterator<Item = (AssayId, f64)>) -> Self {
        let mut entries = self.0.clone();
        entries.extend(revealed.into_iter().map(|(a, v)| (a, v.to_bits())));
        entries.sort_unstable();
        StateKey(entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub action: ActionBatch,
    /// Visits of the node the recommendation came from.
    pub visits: u32,
    pub mean_value: f64,
}

/// Recommended action at every expanded decision state of one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub root_action: ActionBatch,
    pub entries: BTreeMap<StateKey, PolicyEntry>,
}

impl Policy {
    pub fn action_at(&self, key: &StateKey) -> Option<ActionBatch> {
        self.entries.get(key).map(|e| e.action)
    }
}

#[derive(Debug, Clone)]
struct Child {
    signature: Vec<u64>,
    node: usize,
    visits: u32,
}

#[derive(Debug, Clone)]
struct Edge {
    action: ActionBatch,
    visits: u32,
    value_sum: f64,
    children: Vec<Child>,
}

impl Edge {
    fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    key: StateKey,
    measured: AssaySet,
    step: usize,
    f: Functionals,
    terminal: bool,
    /// Infeasible non-root state; the trajectory ends here.
    dead: bool,
    entry_penalty: f64,
    distances: Vec<f64>,
    cdf: Vec<f64>,
    visits: u32,
    edges: Vec<Edge>,
    untried: Vec<ActionBatch>,
}

/// Visit statistics of one action edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeStats {
    pub action: ActionBatch,
    pub visits: u32,
    pub mean_value: f64,
    pub children: usize,
}

/// Visit statistics of one decision node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    pub key: StateKey,
    pub visits: u32,
    pub terminal: bool,
    pub infeasible: bool,
    pub h: f64,
    pub l: f64,
    pub edges: Vec<EdgeStats>,
}

/// The search tree after planning.
#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<Node>,
    iterations: usize,
}

impl SearchTree {
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stats(&self) -> Vec<NodeStats> {
        self.nodes
            .iter()
            .map(|n| NodeStats {
                key: n.key.clone(),
                visits: n.visits,
                terminal: n.terminal,
                infeasible: n.dead,
                h: n.f.h,
                l: n.f.l,
                edges: n
                    .edges
                    .iter()
                    .map(|e| EdgeStats {
                        action: e.action,
                        visits: e.visits,
                        mean_value: e.mean(),
                        children: e.children.len(),
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn root(&self) -> NodeStats {
        self.stats().swap_remove(0)
    }

    /// Tree as JSON for debugging.
    pub fn dump(&self, problem: &Problem) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .map(|n| {
                serde_json::json!({
                    "visits": n.visits,
                    "h": n.f.h,
                    "l": n.f.l,
                    "terminal": n.terminal,
                    "infeasible": n.dead,
                    "edges": n.edges.iter().map(|e| serde_json::json!({
                        "action": e.action.label(problem.dataset),
                        "visits": e.visits,
                        "mean_value": e.mean(),
                        "children": e.children.iter().map(|c| c.node).collect::<Vec<_>>(),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({ "iterations": self.iterations, "nodes": nodes })
    }
}

/// Reward and penalty parts of a return.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Ret {
    disc: f64,
    pen: f64,
}

impl Ret {
    fn total(self) -> f64 {
        self.disc + self.pen
    }
}

/// Model draws tried before falling back to visit-proportional choice.
const REDRAWS: usize = 8;

fn widen(k: f64, n: u32, alpha: f64) -> usize {
    (k * (n as f64).powf(alpha)).ceil() as usize
}

struct Search<'p, 'a> {
    problem: &'p Problem<'a>,
    params: &'p PlannerParams,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    buf_d: Vec<f64>,
    buf_cdf: Vec<f64>,
}

impl<'p, 'a> Search<'p, 'a> {
    fn make_node(
        &self,
        key: StateKey,
        measured: AssaySet,
        step: usize,
        distances: Vec<f64>,
        is_root: bool,
    ) -> Node {
        let p = self.problem;
        let f = p.functionals(&distances, measured);
        let terminal = p.terminal(f.h, step, measured, false);
        let dead = !terminal && !is_root && f.l < p.reward.tau;
        let entry_penalty = if dead {
            p.reward.penalty
        } else if terminal && f.h > p.reward.epsilon {
            p.unmet_penalty()
        } else {
            0.0
        };
        let expandable = !terminal && !dead;
        let mut cdf = Vec::new();
        if expandable {
            let lw = p.kernel.lambda_w;
            let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
            fill_cdf(distances.iter().map(|d| (-lw * (d - min)).exp()), &mut cdf);
        }
        Node {
            key,
            measured,
            step,
            f,
            terminal,
            dead,
            entry_penalty,
            distances: if expandable { distances } else { Vec::new() },
            cdf,
            visits: 1,
            untried: if expandable {
                p.actions(measured)
            } else {
                Vec::new()
            },
            edges: Vec::new(),
        }
    }

    /// Penalty for stopping at node `id`.
    fn eox_penalty(&self, id: usize) -> f64 {
        if self.nodes[id].f.h > self.problem.reward.epsilon {
            self.problem.unmet_penalty()
        } else {
            0.0
        }
    }

    fn simulate(&mut self, id: usize) -> Ret {
        {
            let node = &self.nodes[id];
            if node.terminal || node.dead {
                return Ret {
                    disc: 0.0,
                    pen: node.entry_penalty,
                };
            }
        }
        let e = self.select_edge(id);
        let node = &mut self.nodes[id];
        node.visits += 1;
        node.edges[e].visits += 1;
        let action = node.edges[e].action;

        let ret = match action {
            ActionBatch::Eox => Ret {
                disc: 0.0,
                pen: self.eox_penalty(id),
            },
            ActionBatch::Batch(batch) => {
                let (child, fresh) = self.select_child(id, e, batch);
                let child_ret = if fresh {
                    let c = &self.nodes[child];
                    if c.terminal || c.dead {
                        Ret {
                            disc: 0.0,
                            pen: c.entry_penalty,
                        }
                    } else {
                        self.rollout(child)
                    }
                } else {
                    self.simulate(child)
                };
                let r = self
                    .problem
                    .reward_of(&action, self.nodes[id].f.h, self.nodes[child].f.h);
                Ret {
                    disc: r + self.problem.reward.gamma * child_ret.disc,
                    pen: child_ret.pen,
                }
            }
        };
        self.nodes[id].edges[e].value_sum += ret.total();
        ret
    }

    fn select_edge(&mut self, id: usize) -> usize {
        let params = self.params;
        let node = &mut self.nodes[id];
        let allowed = widen(params.k_a, node.visits, params.alpha_a);
        if node.edges.len() < allowed && !node.untried.is_empty() {
            let pick = self.rng.random_range(0..node.untried.len());
            let action = node.untried.swap_remove(pick);
            node.edges.push(Edge {
                action,
                visits: 0,
                value_sum: 0.0,
                children: Vec::new(),
            });
            return node.edges.len() - 1;
        }
        let ln_n = (node.visits as f64).ln();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, edge) in node.edges.iter().enumerate() {
            let score = edge.mean() + params.c_ucb * (ln_n / edge.visits as f64).sqrt();
            if score > best_score {
                best = i;
                best_score = score;
            }
        }
        best
    }

    /// Returns the child reached through edge `e`, and whether it is new.
    ///
    /// Once the outcome slots are used up, outcomes are still drawn from the
    /// transition model and matched against the existing children, so their
    /// visit shares track the model rather than early luck. Only when a few
    /// draws all miss does the choice fall back to visit counts.
    fn select_child(&mut self, id: usize, e: usize, batch: AssaySet) -> (usize, bool) {
        let params = self.params;
        let dataset = self.problem.dataset;
        let edge = &self.nodes[id].edges[e];
        let can_widen = edge.children.len() < widen(params.k_s, edge.visits, params.alpha_s);
        let draws = if can_widen { 1 } else { REDRAWS };

        let mut record = 0;
        let mut signature = Vec::with_capacity(batch.len());
        for _ in 0..draws {
            record = sample_cdf(&self.nodes[id].cdf, &mut self.rng);
            signature.clear();
            signature.extend(
                batch
                    .iter()
                    .map(|a| dataset.column(dataset.assay(a).outcome_feature)[record].to_bits()),
            );
            if let Some(child) = self.nodes[id].edges[e]
                .children
                .iter_mut()
                .find(|c| c.signature == signature)
            {
                child.visits += 1;
                return (child.node, false);
            }
        }

        if !can_widen {
            let edge = &self.nodes[id].edges[e];
            let total: u32 = edge.children.iter().map(|c| c.visits).sum();
            let mut u = self.rng.random_range(0..total);
            let mut pick = 0;
            for (i, c) in edge.children.iter().enumerate() {
                if u < c.visits {
                    pick = i;
                    break;
                }
                u -= c.visits;
            }
            let child = &mut self.nodes[id].edges[e].children[pick];
            child.visits += 1;
            return (child.node, false);
        }

        let parent = &self.nodes[id];
        let mut distances = parent.distances.clone();
        let mut revealed = Vec::with_capacity(batch.len());
        for a in batch.iter() {
            let f = dataset.assay(a).outcome_feature;
            let value = dataset.column(f)[record];
            revealed.push((a, value));
            if let Some(f) = self.problem.distance_feature(a) {
                crate::belief::add_feature_terms(dataset, f, value, &mut distances);
            }
        }
        let key = parent.key.extended(revealed);
        let node = self.make_node(
            key,
            parent.measured.union(batch),
            parent.step + 1,
            distances,
            false,
        );
        let child_id = self.nodes.len();
        self.nodes.push(node);
        self.nodes[id].edges[e].children.push(Child {
            signature,
            node: child_id,
            visits: 1,
        });
        (child_id, true)
    }

    fn rollout(&mut self, id: usize) -> Ret {
        let node = &self.nodes[id];
        self.buf_d.clear();
        self.buf_d.extend_from_slice(&node.distances);
        let (measured, step, h) = (node.measured, node.step, node.f.h);
        let cap = self.params.rollout_depth.unwrap_or(usize::MAX);
        rollout_steps(
            self.problem,
            &mut self.buf_d,
            &mut self.buf_cdf,
            measured,
            step,
            h,
            cap,
            &mut self.rng,
        )
    }
}

/// Runs the heuristic rollout policy from a non-terminal, feasible state
/// whose distances are in `distances`.
#[allow(clippy::too_many_arguments)]
fn rollout_steps<R: Rng + ?Sized>(
    problem: &Problem,
    distances: &mut [f64],
    cdf: &mut Vec<f64>,
    mut measured: AssaySet,
    mut step: usize,
    mut h: f64,
    cap: usize,
    rng: &mut R,
) -> Ret {
    let dataset = problem.dataset;
    let lw = problem.kernel.lambda_w;
    let gamma = problem.reward.gamma;
    let mut ret = Ret::default();
    let mut discount = 1.0;
    for _ in 0..cap {
        let unmeasured = problem.all_assays().difference(measured);
        let k = rng.random_range(1..=problem.reward.max_batch.min(unmeasured.len()));
        let batch = problem.cheapest(unmeasured, k);

        let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
        fill_cdf(distances.iter().map(|d| (-lw * (d - min)).exp()), cdf);
        let record = sample_cdf(cdf, rng);
        for a in batch.iter() {
            if let Some(f) = problem.distance_feature(a) {
                crate::belief::add_feature_terms(dataset, f, dataset.column(f)[record], distances);
            }
        }
        measured = measured.union(batch);
        step += 1;

        let f = problem.functionals(distances, measured);
        ret.disc += discount * problem.reward_of(&ActionBatch::Batch(batch), h, f.h);
        discount *= gamma;
        h = f.h;
        if problem.terminal(h, step, measured, false) {
            if h > problem.reward.epsilon {
                ret.pen = problem.unmet_penalty();
            }
            return ret;
        }
        if f.l < problem.reward.tau {
            ret.pen = problem.reward.penalty;
            return ret;
        }
    }
    ret
}

/// Return of one heuristic rollout from `state`, at most `depth_cap` steps.
pub fn rollout<R: Rng + ?Sized>(
    problem: &Problem,
    state: &CandidateState,
    depth_cap: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut distances = problem.distances_for(state)?;
    let measured = measured_set(state);
    let f = problem.functionals(&distances, measured);
    if state.stopped || problem.terminal(f.h, state.step, measured, false) {
        return Ok(0.0);
    }
    let mut cdf = Vec::new();
    Ok(rollout_steps(
        problem,
        &mut distances,
        &mut cdf,
        measured,
        state.step,
        f.h,
        depth_cap,
        rng,
    )
    .total())
}

/// Builds one tree from `root` and extracts its policy.
pub fn plan(
    problem: &Problem,
    root: &CandidateState,
    params: &PlannerParams,
) -> Result<(SearchTree, Policy)> {
    params.check()?;
    if root.measured.iter().any(|a| a.0 >= problem.n_assays()) {
        return Err(Error::UnknownAssay("measured assay out of range".into()));
    }
    let distances = problem.distances_for(root)?;
    let mut search = Search {
        problem,
        params,
        nodes: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(params.seed),
        buf_d: Vec::with_capacity(distances.len()),
        buf_cdf: Vec::with_capacity(distances.len()),
    };
    let mut node = search.make_node(
        StateKey::root(),
        measured_set(root),
        root.step,
        distances,
        true,
    );
    if root.stopped {
        node.terminal = true;
    }
    let terminal_root = node.terminal;
    search.nodes.push(node);

    if terminal_root {
        let mut entries = BTreeMap::new();
        entries.insert(
            StateKey::root(),
            PolicyEntry {
                action: ActionBatch::Eox,
                visits: 1,
                mean_value: 0.0,
            },
        );
        let tree = SearchTree {
            nodes: search.nodes,
            iterations: 0,
        };
        return Ok((
            tree,
            Policy {
                root_action: ActionBatch::Eox,
                entries,
            },
        ));
    }

    for _ in 0..params.n_itr {
        search.simulate(0);
    }
    let tree = SearchTree {
        nodes: search.nodes,
        iterations: params.n_itr,
    };
    let policy = extract_policy(&tree, problem);
    Ok((tree, policy))
}

/// Best action of a node: highest mean value, then lower cost, then
/// canonical order.
fn best_edge<'e>(edges: &'e [Edge], problem: &Problem) -> Option<&'e Edge> {
    edges.iter().min_by(|a, b| {
        b.mean()
            .total_cmp(&a.mean())
            .then_with(|| {
                problem
                    .action_cost(&a.action)
                    .total_cmp(&problem.action_cost(&b.action))
            })
            .then_with(|| a.action.cmp(&b.action))
    })
}

/// Recommended action at every node with at least one expanded action.
/// Where several nodes share a state key the most visited one decides.
pub fn extract_policy(tree: &SearchTree, problem: &Problem) -> Policy {
    let mut entries: BTreeMap<StateKey, PolicyEntry> = BTreeMap::new();
    for node in &tree.nodes {
        let Some(edge) = best_edge(&node.edges, problem) else {
            continue;
        };
        let entry = PolicyEntry {
            action: edge.action,
            visits: node.visits,
            mean_value: edge.mean(),
        };
        match entries.get(&node.key) {
            Some(existing) if existing.visits >= node.visits => {}
            _ => {
                entries.insert(node.key.clone(), entry);
            }
        }
    }
    let root_action = entries
        .get(&StateKey::root())
        .map_or(ActionBatch::Eox, |e| e.action);
    Policy {
        root_action,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::tests::toy_dataset;
    use crate::belief::KernelConfig;
    use crate::env::{RewardConfig, RewardMode};

    fn edge(action: ActionBatch, mean: f64) -> Edge {
        Edge {
            action,
            visits: 1,
            value_sum: mean,
            children: Vec::new(),
        }
    }

    fn batch(ids: &[usize]) -> ActionBatch {
        ActionBatch::Batch(ids.iter().map(|&i| AssayId(i)).collect())
    }

    fn two_assay_problem_dataset() -> crate::data::Dataset {
        use crate::data::*;
        Dataset::from_parts(DatasetParts {
            features: (0..2)
                .map(|i| FeatureSpec {
                    name: format!("y{i}"),
                    kind: FeatureKind::AssayOutcome,
                    // Sharp kernel on `a` so its outcome pins the record.
                    lambda: if i == 0 { 100.0 } else { 1.0 },
                    required: false,
                    stats: None,
                })
                .collect(),
            assays: vec![
                AssaySpec {
                    name: "a".into(),
                    outcome_feature: FeatureId(0),
                    cost: vec![400.0],
                },
                AssaySpec {
                    name: "b".into(),
                    outcome_feature: FeatureId(1),
                    cost: vec![800.0],
                },
            ],
            records: (0..4)
                .map(|i| HistoricalRecord {
                    record_id: i.to_string(),
                    values: vec![i as f64, (i % 2) as f64],
                    target: Some(i as f64),
                })
                .collect(),
            target_name: "g".into(),
            goal_range: GoalRange::new(0.0, 3.0),
            cost_dims: vec!["usd".into()],
            target_assay: None,
        })
        .unwrap()
        .with_feature_stats()
        .unwrap()
    }

    #[test]
    fn policy_tie_breaks() {
        let ds = two_assay_problem_dataset();
        let p = Problem::new(&ds, KernelConfig::default(), RewardConfig::default()).unwrap();
        let single = [edge(batch(&[1]), -5.0)];
        assert_eq!(best_edge(&single, &p).unwrap().action, batch(&[1]));
        let tied = [edge(batch(&[1]), -3.0), edge(batch(&[0]), -3.0)];
        assert_eq!(best_edge(&tied, &p).unwrap().action, batch(&[0]));
        let spread = [
            edge(batch(&[0, 1]), -1200.0),
            edge(batch(&[1]), -400.0),
            edge(batch(&[0]), -1e6),
        ];
        assert_eq!(best_edge(&spread, &p).unwrap().action, batch(&[1]));
    }

    #[test]
    fn terminal_root_recommends_stop() {
        let ds = toy_dataset();
        let reward = RewardConfig {
            epsilon: 10.0,
            ..RewardConfig::default()
        };
        let p = Problem::new(&ds, KernelConfig::default(), reward).unwrap();
        let (tree, policy) =
            plan(&p, &CandidateState::default(), &PlannerParams::default()).unwrap();
        assert_eq!(policy.root_action, ActionBatch::Eox);
        assert_eq!(tree.iterations(), 0);
    }

    #[test]
    fn zero_depth_rollout_is_zero() {
        let ds = two_assay_problem_dataset();
        let p = Problem::new(&ds, KernelConfig::default(), RewardConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            rollout(&p, &CandidateState::default(), 0, &mut rng).unwrap(),
            0.0
        );
    }

    #[test]
    fn one_step_rollout_pays_batch_cost() {
        // Measuring `a` pins the record, so H drops to zero after one batch.
        let ds = two_assay_problem_dataset();
        let reward = RewardConfig {
            max_batch: 1,
            ..RewardConfig::default()
        };
        let p = Problem::new(&ds, KernelConfig::default(), reward).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = rollout(&p, &CandidateState::default(), 10, &mut rng).unwrap();
        assert_eq!(q, -400.0);
    }

    #[test]
    fn infeasible_rollout_carries_penalty() {
        let ds = two_assay_problem_dataset();
        let reward = RewardConfig {
            tau: 1.0,
            max_batch: 1,
            epsilon: 1e-6,
            ..RewardConfig::default()
        };
        let ds_goal = narrow_goal(ds.clone());
        let p = Problem::new(&ds_goal, KernelConfig::default(), reward).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let q = rollout(&p, &CandidateState::default(), 10, &mut rng).unwrap();
            assert!(q <= -1e6 || q == -400.0, "{q}");
        }
    }

    fn narrow_goal(ds: crate::data::Dataset) -> crate::data::Dataset {
        use crate::data::*;
        Dataset::from_parts(DatasetParts {
            features: ds.features().to_vec(),
            assays: ds.assays().to_vec(),
            records: ds.records().to_vec(),
            target_name: "g".into(),
            goal_range: GoalRange::new(0.0, 0.0),
            cost_dims: ds.cost_dims().to_vec(),
            target_assay: None,
        })
        .unwrap()
    }

    #[test]
    fn bookkeeping_and_widening_bounds() {
        let ds = two_assay_problem_dataset();
        let reward = RewardConfig {
            mode: RewardMode::Cost,
            epsilon: 0.01,
            ..RewardConfig::default()
        };
        let p = Problem::new(&ds, KernelConfig::default(), reward).unwrap();
        let params = PlannerParams {
            n_itr: 500,
            seed: 4,
            ..PlannerParams::default()
        };
        let (tree, policy) = plan(&p, &CandidateState::default(), &params).unwrap();
        let root = tree.root();
        let total: u32 = root.edges.iter().map(|e| e.visits).sum();
        assert_eq!(root.visits - 1, total);
        assert_eq!(total as usize, params.n_itr);
        for n in tree.stats() {
            if n.terminal || n.infeasible {
                continue;
            }
            assert_eq!(n.visits - 1, n.edges.iter().map(|e| e.visits).sum::<u32>());
            assert!(n.edges.len() <= widen(params.k_a, n.visits, params.alpha_a));
            for e in &n.edges {
                assert!(e.children <= widen(params.k_s, e.visits, params.alpha_s));
            }
        }
        // Measuring `a` alone resolves the target at the lowest price.
        assert_eq!(policy.root_action, batch(&[0]));
        let (_, again) = plan(&p, &CandidateState::default(), &params).unwrap();
        assert_eq!(policy, again);
    }
}
