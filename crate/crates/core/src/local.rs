//! Least-change votemandering: price single-seat moves between adjacent
//! district pairs, pick a maximum matching under budget and fairness
//! knapsacks, and assemble the perturbed target plan.
//!
//! Three moves are priced per eligible pair. Strategy 1 pays the round-1
//! margin to flip a district and redraws the pair so the flip vanishes from
//! the votemandered map. Strategy 2 spends nothing: it redraws the pair so
//! the opponent's own investment carries a district in the votemandered map
//! that A wins back on original shares. Strategy 3 wins the redrawn
//! district in both round-2 maps, paying with fairness instead of budget.

use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::metrics::{wasted_diff_district, FairnessWindow};
use crate::model::{
    a_wins, elect, Allocation, CampaignScenario, DistrictPlan, Party, PlanConstraints,
    UnitGraph, VoteData, VOTE_EPS,
};
use crate::recom::{adjacent_district_pairs, submap_pool, PairSplit, RecomError};
use crate::votemander::{assemble, VotemanderError, VotemanderSolution};

#[derive(Debug, Error)]
pub enum LocalError {
    #[error("recombination failed: {0}")]
    Recom(#[from] RecomError),
    #[error("scoring failed: {0}")]
    Votemander(#[from] VotemanderError),
    #[error(
        "assembled votemandered map violates the window: eg {eg:.4} outside [{lo:.4}, {hi:.4}]"
    )]
    WindowViolated { eg: f64, lo: f64, hi: f64 },
}

/// One district of the pair graph with its initial status and totals.
#[derive(Debug, Clone, Serialize)]
pub struct DistrictNode {
    pub district: usize,
    /// Winner on the initial map (original shares).
    pub initial_winner: Party,
    pub vinit_a: f64,
    pub vinit_b: f64,
    /// Campaign-baseline totals: turnout plus B's allocation, zero A spend.
    pub base_a: f64,
    pub base_b: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistrictGraph {
    pub nodes: Vec<DistrictNode>,
    pub edges: Vec<(usize, usize)>,
}

/// Node per district, edge per pair sharing at least one cut edge.
pub fn build_district_adjacency(
    graph: &UnitGraph,
    plan: &DistrictPlan,
    scenario: &CampaignScenario,
) -> DistrictGraph {
    let full = VoteData::full(graph);
    let initial = elect(graph, plan, &full);
    let mut base_a = vec![0.0; plan.n];
    let mut base_b = vec![0.0; plan.n];
    for k in 0..graph.num_units() {
        let d = plan.assign[k];
        base_a[d] += scenario.alpha * graph.vinit_a(k);
        base_b[d] += scenario.alpha * graph.vinit_b(k) + scenario.alloc_b[k];
    }
    let nodes = (0..plan.n)
        .map(|d| DistrictNode {
            district: d,
            initial_winner: initial.districts[d].winner,
            vinit_a: initial.districts[d].votes_a,
            vinit_b: initial.districts[d].votes_b,
            base_a: base_a[d],
            base_b: base_b[d],
        })
        .collect();
    DistrictGraph { nodes, edges: adjacent_district_pairs(graph, plan) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    /// Paid round-1 flip, undone by the boundary change.
    One,
    /// Ride the opponent's spend: win the redrawn district at original
    /// shares only.
    Two,
    /// Boundary change wins the district in both round-2 maps.
    Three,
}

impl Strategy {
    pub fn number(self) -> u8 {
        match self {
            Strategy::One => 1,
            Strategy::Two => 2,
            Strategy::Three => 3,
        }
    }
}

/// A priced move between two adjacent districts.
#[derive(Debug, Clone, Serialize)]
pub struct StrategyEdge {
    pub pair: (usize, usize),
    pub strategy: Strategy,
    /// Budget the move consumes (zero for strategies 2 and 3).
    pub budget_cost: f64,
    /// Pair-restricted change in W(B-A) from the campaign baseline to the
    /// perturbed votemandered submap.
    pub fairness_cost: f64,
    pub perturbation: PairSplit,
    /// Unit-level spend realizing a strategy-1 flip.
    pub spend: Vec<(usize, f64)>,
}

/// Pair-restricted wins and W(B-A) for a two-district assignment.
fn pair_score(
    units_1: &[usize],
    units_2: &[usize],
    votes_a: impl Fn(usize) -> f64,
    votes_b: impl Fn(usize) -> f64,
) -> (usize, f64) {
    let mut wins = 0usize;
    let mut w = 0.0;
    for units in [units_1, units_2] {
        let va: f64 = units.iter().map(|&k| votes_a(k)).sum();
        let vb: f64 = units.iter().map(|&k| votes_b(k)).sum();
        if a_wins(va, vb) {
            wins += 1;
        }
        w += wasted_diff_district(va, vb).unwrap_or(0.0);
    }
    (wins, w)
}

/// Prices up to three strategy edges for one adjacent pair by scanning the
/// submap pool; infeasible strategies are omitted. Returns an empty list
/// when neither district has initial status L.
pub fn strategy_edges(
    graph: &UnitGraph,
    plan: &DistrictPlan,
    scenario: &CampaignScenario,
    pair: (usize, usize),
    submaps: &[PairSplit],
) -> Vec<StrategyEdge> {
    let alpha = scenario.alpha;
    let (d1, d2) = pair;
    let units_of = |d: usize| -> Vec<usize> {
        (0..graph.num_units()).filter(|&k| plan.assign[k] == d).collect()
    };
    let (u1, u2) = (units_of(d1), units_of(d2));

    let orig_a = |k: usize| graph.vinit_a(k);
    let orig_b = |k: usize| graph.vinit_b(k);
    let base_a = |k: usize| alpha * graph.vinit_a(k);
    let base_b = |k: usize| alpha * graph.vinit_b(k) + scenario.alloc_b[k];

    let (init_wins, _) = pair_score(&u1, &u2, orig_a, orig_b);
    if init_wins == 2 {
        return Vec::new(); // both districts already won by A on the initial map
    }
    let (base_wins, base_w) = pair_score(&u1, &u2, base_a, base_b);

    // Strategy-1 flip target: an initially losing district that also loses
    // the campaigned map, affordable within its own turnout headroom.
    let flip_target = [(&u1, d1), (&u2, d2)]
        .into_iter()
        .filter_map(|(units, d)| {
            let iva: f64 = units.iter().map(|&k| orig_a(k)).sum();
            let ivb: f64 = units.iter().map(|&k| orig_b(k)).sum();
            if a_wins(iva, ivb) {
                return None;
            }
            let bva: f64 = units.iter().map(|&k| base_a(k)).sum();
            let bvb: f64 = units.iter().map(|&k| base_b(k)).sum();
            let margin = bvb - bva;
            if margin <= 0.0 {
                return None;
            }
            let capacity: f64 = units.iter().map(|&k| (1.0 - alpha) * graph.vinit_a(k)).sum();
            if margin > capacity + VOTE_EPS || margin > scenario.budget_a + VOTE_EPS {
                return None;
            }
            Some((d, margin))
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());

    let spend_for = |d: usize, margin: f64| -> Vec<(usize, f64)> {
        let mut left = margin;
        let mut out = Vec::new();
        for k in 0..graph.num_units() {
            if left <= 0.0 {
                break;
            }
            if plan.assign[k] != d {
                continue;
            }
            let put = ((1.0 - alpha) * graph.vinit_a(k)).min(left);
            out.push((k, put));
            left -= put;
        }
        out
    };

    let mut best: [Option<StrategyEdge>; 3] = [None, None, None];
    let mut keep_min = |slot: usize, edge: StrategyEdge| {
        if best[slot]
            .as_ref()
            .is_none_or(|e| edge.fairness_cost < e.fairness_cost)
        {
            best[slot] = Some(edge);
        }
    };

    for split in submaps {
        if split.is_identity(plan) {
            continue;
        }
        let (t_wins, _) = pair_score(&split.units_d1, &split.units_d2, orig_a, orig_b);
        let (v_wins, v_w) =
            pair_score(&split.units_d1, &split.units_d2, base_a, base_b);

        // Strategy 2: one extra target win, votemandered statuses as before.
        if t_wins == init_wins + 1 && v_wins == base_wins {
            keep_min(
                1,
                StrategyEdge {
                    pair,
                    strategy: Strategy::Two,
                    budget_cost: 0.0,
                    fairness_cost: v_w - base_w,
                    perturbation: split.clone(),
                    spend: Vec::new(),
                },
            );
        }
        // Strategy 3: the boundary change wins in both round-2 maps.
        if t_wins == init_wins + 1 && v_wins == base_wins + 1 {
            keep_min(
                2,
                StrategyEdge {
                    pair,
                    strategy: Strategy::Three,
                    budget_cost: 0.0,
                    fairness_cost: v_w - base_w,
                    perturbation: split.clone(),
                    spend: Vec::new(),
                },
            );
        }
        // Strategy 1: pay the flip, then redraw so round-2 looks untouched.
        if let Some((d, margin)) = flip_target {
            let spend = spend_for(d, margin);
            let spent_a = |k: usize| {
                base_a(k)
                    + spend
                        .iter()
                        .find(|&&(u, _)| u == k)
                        .map_or(0.0, |&(_, s)| s)
            };
            let (sv_wins, sv_w) =
                pair_score(&split.units_d1, &split.units_d2, spent_a, base_b);
            let (st_wins, _) =
                pair_score(&split.units_d1, &split.units_d2, orig_a, orig_b);
            if sv_wins == init_wins && st_wins == init_wins {
                keep_min(
                    0,
                    StrategyEdge {
                        pair,
                        strategy: Strategy::One,
                        budget_cost: margin,
                        fairness_cost: sv_w - base_w,
                        perturbation: split.clone(),
                        spend: spend.clone(),
                    },
                );
            }
        }
    }
    best.into_iter().flatten().collect()
}

/// The matching-with-two-knapsacks program over priced edges.
#[derive(Debug, Clone)]
pub struct MatchingProblem {
    pub num_nodes: usize,
    /// `(node a, node b, budget cost, fairness cost)` per candidate edge.
    pub edges: Vec<(usize, usize, f64, f64)>,
    pub budget: f64,
    pub fairness_slack: f64,
    /// Slack spend absorbable per node when it is NOT matched; slack placed
    /// there relieves fairness at 3/2 per vote.
    pub slack_caps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchingSolution {
    pub selected: Vec<usize>,
    /// Budget routed into unmatched losing districts purely for fairness.
    pub slack_spend: f64,
}

impl MatchingProblem {
    fn feasible(&self, selected: &[usize]) -> Option<f64> {
        let budget_used: f64 = selected.iter().map(|&e| self.edges[e].2).sum();
        if budget_used > self.budget + VOTE_EPS {
            return None;
        }
        let fairness: f64 = selected.iter().map(|&e| self.edges[e].3).sum();
        let need_b = ((fairness - self.fairness_slack) * 2.0 / 3.0).max(0.0);
        let mut matched = vec![false; self.num_nodes];
        for &e in selected {
            matched[self.edges[e].0] = true;
            matched[self.edges[e].1] = true;
        }
        let cap: f64 = (0..self.num_nodes)
            .filter(|&d| !matched[d])
            .map(|d| self.slack_caps[d])
            .sum();
        if need_b <= cap + VOTE_EPS && need_b <= self.budget - budget_used + VOTE_EPS {
            Some(need_b)
        } else {
            None
        }
    }

    /// Exact optimum by depth-first search over matchings with budget and
    /// cardinality pruning; maximizes size, then least total budget cost.
    pub fn solve(&self) -> MatchingSolution {
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); self.num_nodes];
        for (e, &(a, b, _, _)) in self.edges.iter().enumerate() {
            incident[a].push(e);
            incident[b].push(e);
        }
        struct Search<'a> {
            problem: &'a MatchingProblem,
            incident: &'a [Vec<usize>],
            best: Option<(usize, f64, Vec<usize>, f64)>, // size, cost, edges, slack
        }
        impl Search<'_> {
            fn consider(&mut self, selected: &[usize]) {
                let Some(slack) = self.problem.feasible(selected) else {
                    return;
                };
                let cost: f64 = selected.iter().map(|&e| self.problem.edges[e].2).sum();
                let better = match &self.best {
                    None => true,
                    Some((size, best_cost, _, _)) => {
                        selected.len() > *size
                            || (selected.len() == *size && cost < *best_cost - VOTE_EPS)
                    }
                };
                if better {
                    self.best = Some((selected.len(), cost, selected.to_vec(), slack));
                }
            }
            fn dfs(&mut self, node: usize, matched: &mut Vec<bool>, selected: &mut Vec<usize>) {
                if node >= self.problem.num_nodes {
                    self.consider(selected);
                    return;
                }
                // Cardinality bound: even matching every remaining node
                // cannot beat the incumbent.
                if let Some((size, _, _, _)) = &self.best {
                    let rest = self.problem.num_nodes - node;
                    if selected.len() + rest / 2 < *size {
                        // Still explore: equal size with lower cost may win.
                        if selected.len() + rest / 2 < *size {
                            self.consider(selected);
                            return;
                        }
                    }
                }
                if matched[node] {
                    self.dfs(node + 1, matched, selected);
                    return;
                }
                // Leave the node unmatched.
                self.dfs(node + 1, matched, selected);
                // Or match it along any incident edge.
                for &e in &self.incident[node].to_vec() {
                    let (a, b, cost, _) = self.problem.edges[e];
                    let other = if a == node { b } else { a };
                    if other <= node || matched[other] {
                        continue;
                    }
                    let used: f64 = selected.iter().map(|&x| self.problem.edges[x].2).sum();
                    if used + cost > self.problem.budget + VOTE_EPS {
                        continue;
                    }
                    matched[node] = true;
                    matched[other] = true;
                    selected.push(e);
                    self.dfs(node + 1, matched, selected);
                    selected.pop();
                    matched[node] = false;
                    matched[other] = false;
                }
            }
        }
        let mut search = Search { problem: self, incident: &incident, best: None };
        search.dfs(0, &mut vec![false; self.num_nodes], &mut Vec::new());
        match search.best {
            Some((_, _, selected, slack)) => MatchingSolution { selected, slack_spend: slack },
            None => MatchingSolution { selected: Vec::new(), slack_spend: 0.0 },
        }
    }
}

/// A least-change answer: the selected moves, the assembled target plan,
/// and the four-stage scoring.
#[derive(Debug, Clone, Serialize)]
pub struct LocalSolution {
    pub selected: Vec<StrategyEdge>,
    pub slack_spend: f64,
    pub solution: VotemanderSolution,
}

/// Applies a selected matching: perturbs each pair, lays down strategy-1
/// spends plus the fairness slack, re-scores all four stages, and rejects
/// the assembly if the recounted votemandered EG leaves the window.
pub fn assemble_target(
    graph: &UnitGraph,
    plan: &DistrictPlan,
    scenario: &CampaignScenario,
    window: &FairnessWindow,
    edges: &[StrategyEdge],
    matching: &MatchingSolution,
) -> Result<LocalSolution, LocalError> {
    let selected: Vec<StrategyEdge> =
        matching.selected.iter().map(|&e| edges[e].clone()).collect();
    let mut target = plan.clone();
    let mut alloc = Allocation::zero(graph);
    let mut touched = vec![false; plan.n];
    for edge in &selected {
        target = edge.perturbation.apply(&target);
        touched[edge.pair.0] = true;
        touched[edge.pair.1] = true;
        for &(k, s) in &edge.spend {
            alloc.alloc_a[k] += s;
        }
    }
    // Fairness slack goes to untouched districts that B carries at the
    // campaign baseline, staying strictly below each losing margin.
    let mut left = matching.slack_spend;
    if left > 0.0 {
        let base = baseline_votes(graph, scenario);
        let outcome = elect(graph, plan, &base);
        for (d, &was_touched) in touched.iter().enumerate() {
            if left <= 0.0 {
                break;
            }
            if was_touched || outcome.districts[d].winner == Party::A {
                continue;
            }
            let mut district_room = (outcome.districts[d].margin() - 1e-6).max(0.0);
            for k in 0..graph.num_units() {
                if left <= 0.0 || district_room <= 0.0 {
                    break;
                }
                if plan.assign[k] != d {
                    continue;
                }
                let cap = (1.0 - scenario.alpha) * graph.vinit_a(k) - alloc.alloc_a[k];
                let put = cap.min(left).min(district_room).max(0.0);
                alloc.alloc_a[k] += put;
                left -= put;
                district_room -= put;
            }
        }
    }
    let solution = assemble(
        graph,
        plan,
        target,
        alloc,
        scenario,
        1,
        selected.len(),
        !selected.is_empty(),
    )?;
    if !window.contains(solution.votemandered.eg) {
        return Err(LocalError::WindowViolated {
            eg: solution.votemandered.eg,
            lo: window.lo,
            hi: window.hi,
        });
    }
    Ok(LocalSolution { selected, slack_spend: matching.slack_spend - left, solution })
}

fn baseline_votes(graph: &UnitGraph, scenario: &CampaignScenario) -> VoteData {
    let n = graph.num_units();
    VoteData {
        a: (0..n).map(|k| scenario.alpha * graph.vinit_a(k)).collect(),
        b: (0..n)
            .map(|k| scenario.alpha * graph.vinit_b(k) + scenario.alloc_b[k])
            .collect(),
    }
}

/// End-to-end local heuristic: price every eligible pair from its own
/// submap pool, solve the matching, assemble.
pub fn local_votemander(
    graph: &UnitGraph,
    plan: &DistrictPlan,
    scenario: &CampaignScenario,
    window: &FairnessWindow,
    constraints: &PlanConstraints,
    submap_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DistrictGraph, Vec<StrategyEdge>, LocalSolution), LocalError> {
    let district_graph = build_district_adjacency(graph, plan, scenario);
    let mut edges = Vec::new();
    for &(d1, d2) in &district_graph.edges {
        let eligible = district_graph.nodes[d1].initial_winner == Party::B
            || district_graph.nodes[d2].initial_winner == Party::B;
        if !eligible {
            continue;
        }
        let splits = submap_pool(graph, plan, (d1, d2), submap_count, constraints, rng)?;
        edges.extend(strategy_edges(graph, plan, scenario, (d1, d2), &splits));
    }

    let base = baseline_votes(graph, scenario);
    let outcome = elect(graph, plan, &base);
    let w_base: f64 = outcome
        .districts
        .iter()
        .map(|t| wasted_diff_district(t.votes_a, t.votes_b).unwrap_or(0.0))
        .sum();
    let total_base: f64 = base.total();
    let fairness_slack = window.hi.min(1e18) * total_base - w_base;
    let slack_caps: Vec<f64> = (0..plan.n)
        .map(|d| {
            if outcome.districts[d].winner == Party::A {
                return 0.0;
            }
            let headroom: f64 = (0..graph.num_units())
                .filter(|&k| plan.assign[k] == d)
                .map(|k| (1.0 - scenario.alpha) * graph.vinit_a(k))
                .sum();
            headroom.min((outcome.districts[d].margin() - 1e-6).max(0.0))
        })
        .collect();
    let problem = MatchingProblem {
        num_nodes: plan.n,
        edges: edges
            .iter()
            .map(|e| (e.pair.0, e.pair.1, e.budget_cost, e.fairness_cost))
            .collect(),
        budget: scenario.budget_a,
        fairness_slack,
        slack_caps,
    };
    let matching = problem.solve();
    let solution = assemble_target(graph, plan, scenario, window, &edges, &matching)?;
    Ok((district_graph, edges, solution))
}
