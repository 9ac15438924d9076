//! Efficiency gap and wasted-vote algebra: per-district differences, the
//! state EG, incremental action deltas, plan-reassignment deltas, the
//! votemandering bonus split, Moran's I, and the turnout threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    a_wins, Allocation, DistrictPlan, ElectionOutcome, Party, UnitGraph, VoteData, VOTE_EPS,
};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("district {0} has zero votes for both parties")]
    EmptyDistrict(usize),
    #[error("state has zero total votes")]
    ZeroTotalVotes,
    #[error("district already won by A; win-by-campaign does not apply")]
    AlreadyWinning,
    #[error("values have zero variance")]
    ZeroVariance,
    #[error("target plan does not improve on the initial plan's wins")]
    NoImprovement,
}

/// Signed bounds on the efficiency gap a votemandered map must satisfy.
/// Positive EG means party B wastes more votes (a pro-A lean).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FairnessWindow {
    pub lo: f64,
    pub hi: f64,
}

impl FairnessWindow {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "window lower bound must not exceed upper bound");
        FairnessWindow { lo, hi }
    }

    pub fn contains(&self, eg: f64) -> bool {
        eg >= self.lo - VOTE_EPS && eg <= self.hi + VOTE_EPS
    }

    pub const UNBOUNDED: FairnessWindow =
        FairnessWindow { lo: f64::NEG_INFINITY, hi: f64::INFINITY };
}

impl Default for FairnessWindow {
    /// The usual two-sided 8% threshold.
    fn default() -> Self {
        FairnessWindow { lo: -0.08, hi: 0.08 }
    }
}

/// Per-district difference between wasted votes, W(B-A):
/// `(3vb - va)/2` when A wins (ties to A), `(vb - 3va)/2` otherwise.
pub fn wasted_diff_district(va: f64, vb: f64) -> Result<f64, MetricError> {
    if va <= 0.0 && vb <= 0.0 {
        return Err(MetricError::EmptyDistrict(0));
    }
    if a_wins(va, vb) {
        Ok((3.0 * vb - va) / 2.0)
    } else {
        Ok((vb - 3.0 * va) / 2.0)
    }
}

/// Per-district wasted-vote differences and the resulting efficiency gap.
#[derive(Debug, Clone, Serialize)]
pub struct WastedVoteLedger {
    /// W(B-A) per district, in district order.
    pub per_district: Vec<f64>,
    pub state_sum: f64,
    pub total_votes: f64,
    pub eg: f64,
}

/// Efficiency gap of an outcome: sum of per-district W(B-A) over total votes.
pub fn efficiency_gap(outcome: &ElectionOutcome) -> Result<WastedVoteLedger, MetricError> {
    let mut per_district = Vec::with_capacity(outcome.districts.len());
    let mut total = 0.0;
    for t in &outcome.districts {
        if t.votes_a <= 0.0 && t.votes_b <= 0.0 {
            return Err(MetricError::EmptyDistrict(t.district));
        }
        per_district.push(wasted_diff_district(t.votes_a, t.votes_b)?);
        total += t.votes_a + t.votes_b;
    }
    if total <= 0.0 {
        return Err(MetricError::ZeroTotalVotes);
    }
    let state_sum: f64 = per_district.iter().sum();
    Ok(WastedVoteLedger { per_district, state_sum, total_votes: total, eg: state_sum / total })
}

/// Convenience: elect and score in one step.
pub fn score_map(
    graph: &UnitGraph,
    plan: &DistrictPlan,
    votes: &VoteData,
) -> Result<(ElectionOutcome, WastedVoteLedger), MetricError> {
    let outcome = crate::model::elect(graph, plan, votes);
    let ledger = efficiency_gap(&outcome)?;
    Ok((outcome, ledger))
}

/// The five tabulated single-map actions and their effect on W(B-A).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TableAction {
    /// One extra A vote in a district A loses.
    WasteOnLosing,
    /// One extra A vote in a district A wins.
    WasteOnWinning,
    /// Add exactly the losing margin to flip a district with the given
    /// pre-campaign totals.
    WinByCampaign { va: f64, vb: f64 },
    /// Move `x` previously added A votes from a winning to a losing district.
    ShiftWinningToLosing { x: f64 },
    /// Move `x` previously added A votes from a losing to a winning district.
    ShiftLosingToWinning { x: f64 },
}

/// Change in the state's W(B-A) caused by one action.
pub fn action_delta(action: TableAction) -> Result<f64, MetricError> {
    match action {
        TableAction::WasteOnLosing => Ok(-1.5),
        TableAction::WasteOnWinning => Ok(-0.5),
        TableAction::WinByCampaign { va, vb } => {
            if a_wins(va, vb) {
                return Err(MetricError::AlreadyWinning);
            }
            Ok((3.0 * va + vb) / 2.0)
        }
        TableAction::ShiftWinningToLosing { x } => Ok(-x),
        TableAction::ShiftLosingToWinning { x } => Ok(x),
    }
}

/// District-level W/L split of a plan under the given votes; returns
/// (sum of B votes over A-winning districts, sum of A votes over A-losing).
fn win_loss_sums(graph: &UnitGraph, votes: &VoteData, plan: &DistrictPlan) -> (f64, f64) {
    let outcome = crate::model::elect(graph, plan, votes);
    let mut win_b = 0.0;
    let mut lose_a = 0.0;
    for t in &outcome.districts {
        match t.winner {
            Party::A => win_b += t.votes_b,
            Party::B => lose_a += t.votes_a,
        }
    }
    (win_b, lose_a)
}

/// Change in W(B-A) from re-districting the same votes from `plan_i` to
/// `plan_j`. Homogeneous of degree one in the votes, so callers may pass
/// either affiliation counts or turnout-scaled data.
pub fn reassignment_delta(
    graph: &UnitGraph,
    votes: &VoteData,
    plan_i: &DistrictPlan,
    plan_j: &DistrictPlan,
) -> f64 {
    let (wi_b, li_a) = win_loss_sums(graph, votes, plan_i);
    let (wj_b, lj_a) = win_loss_sums(graph, votes, plan_j);
    (wj_b - lj_a) - (wi_b - li_a)
}

/// Two-round gain from votemandering and its three telescoping parts:
/// (campaigned-initial, target-votemandered, votemandered-initial).
pub fn votemander_bonus(
    wins_initial: usize,
    wins_campaigned: usize,
    wins_votemandered: usize,
    wins_target: usize,
) -> (i64, [i64; 3]) {
    let (i, c, v, t) = (
        wins_initial as i64,
        wins_campaigned as i64,
        wins_votemandered as i64,
        wins_target as i64,
    );
    let delta = c + t - 2 * i;
    (delta, [c - i, t - v, v - i])
}

/// Moran's I of `values` over the graph's binary rook adjacency, summed over
/// ordered pairs with unnormalized weights.
pub fn morans_i(graph: &UnitGraph, values: &[f64]) -> Result<f64, MetricError> {
    let n = graph.num_units();
    assert_eq!(values.len(), n);
    let mean = values.iter().sum::<f64>() / n as f64;
    let var_sum: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if var_sum <= 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let pairs = 2 * graph.edges().len();
    let mut cross = 0.0;
    for &(i, j) in graph.edges() {
        cross += 2.0 * (values[i] - mean) * (values[j] - mean);
    }
    Ok((n as f64 / pairs as f64) * cross / var_sum)
}

/// Largest turnout at which the constructive fairness allocation is
/// guaranteed to work when moving from `plan_i` to `plan_j`:
/// `min(1, 1 - 2*delta / sum of A votes over J's winning districts)`,
/// with the delta and sums taken at the passed (unscaled) votes.
///
/// Errors when `plan_j` does not strictly improve A's wins.
pub fn turnout_threshold(
    graph: &UnitGraph,
    votes: &VoteData,
    plan_i: &DistrictPlan,
    plan_j: &DistrictPlan,
) -> Result<f64, MetricError> {
    let wins_i = crate::model::elect(graph, plan_i, votes).wins_a;
    let outcome_j = crate::model::elect(graph, plan_j, votes);
    if outcome_j.wins_a <= wins_i {
        return Err(MetricError::NoImprovement);
    }
    let delta = reassignment_delta(graph, votes, plan_i, plan_j);
    let winning_a: f64 = outcome_j
        .districts
        .iter()
        .filter(|t| t.winner == Party::A)
        .map(|t| t.votes_a)
        .sum();
    if delta <= 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - 2.0 * delta / winning_a).min(1.0))
}

/// The constructive allocation behind the turnout threshold: `spend` votes
/// placed inside `plan_j`'s winning districts (ascending unit id, capped by
/// per-unit headroom). Spending there cancels the reassignment's fairness
/// damage at half a vote each while only adding round-1 votes for A.
pub fn turnout_construction_allocation(
    graph: &UnitGraph,
    plan_j: &DistrictPlan,
    alpha: f64,
    spend: f64,
) -> Allocation {
    let outcome = crate::model::elect(graph, plan_j, &VoteData::full(graph));
    let mut alloc = Allocation::zero(graph);
    let mut left = spend;
    for k in 0..graph.num_units() {
        if left <= 0.0 {
            break;
        }
        if outcome.districts[plan_j.assign[k]].winner != Party::A {
            continue;
        }
        let put = ((1.0 - alpha) * graph.vinit_a(k)).min(left);
        alloc.alloc_a[k] = put;
        left -= put;
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{elect, grid_edges, DistrictPlan, UnitGraph, VoteData};

    fn outcome_from(districts: &[(f64, f64)]) -> ElectionOutcome {
        // one unit per district keeps the fixture minimal
        let n = districts.len();
        let pops: Vec<u64> = districts.iter().map(|&(a, b)| (a + b) as u64).collect();
        let va: Vec<f64> = districts.iter().map(|&(a, _)| a).collect();
        let vb: Vec<f64> = districts.iter().map(|&(_, b)| b).collect();
        let edges: Vec<(usize, usize)> = (1..n).map(|k| (k - 1, k)).collect();
        let g = UnitGraph::new(pops, va, vb, edges).unwrap();
        let plan = DistrictPlan { n, assign: (0..n).collect() };
        elect(&g, &plan, &VoteData::full(&g))
    }

    #[test]
    fn three_to_one_victory_is_neutral() {
        assert_eq!(wasted_diff_district(75.0, 25.0).unwrap(), 0.0);
    }

    #[test]
    fn wasted_diff_matches_hand_counts() {
        // A wins 60-40: A wastes 10 surplus, B wastes 40
        assert_eq!(wasted_diff_district(60.0, 40.0).unwrap(), 30.0);
        assert_eq!(wasted_diff_district(40.0, 60.0).unwrap(), -30.0);
    }

    #[test]
    fn empty_district_is_an_error() {
        assert!(wasted_diff_district(0.0, 0.0).is_err());
    }

    #[test]
    fn symmetric_map_has_zero_eg() {
        let outcome = outcome_from(&[(60.0, 40.0), (40.0, 60.0)]);
        let ledger = efficiency_gap(&outcome).unwrap();
        assert!(ledger.eg.abs() < 1e-12);
    }

    #[test]
    fn eg_of_two_district_example() {
        let outcome = outcome_from(&[(60.0, 40.0), (55.0, 45.0)]);
        let ledger = efficiency_gap(&outcome).unwrap();
        assert!((ledger.per_district[0] - 30.0).abs() < 1e-12);
        assert!((ledger.per_district[1] - 40.0).abs() < 1e-12);
        assert!((ledger.eg - 0.35).abs() < 1e-12);
    }

    #[test]
    fn single_neutral_district_eg_zero() {
        let outcome = outcome_from(&[(75.0, 25.0)]);
        assert_eq!(efficiency_gap(&outcome).unwrap().eg, 0.0);
    }

    #[test]
    fn action_deltas_match_the_table() {
        assert_eq!(action_delta(TableAction::WasteOnLosing).unwrap(), -1.5);
        assert_eq!(action_delta(TableAction::WasteOnWinning).unwrap(), -0.5);
        assert_eq!(
            action_delta(TableAction::ShiftWinningToLosing { x: 5.0 }).unwrap(),
            -5.0
        );
        assert_eq!(
            action_delta(TableAction::ShiftLosingToWinning { x: 5.0 }).unwrap(),
            5.0
        );
    }

    #[test]
    fn win_by_campaign_recomputed_from_scratch() {
        // before: W = (60 - 120)/2 = -30; after flip at the margin: W = 60
        let before = wasted_diff_district(40.0, 60.0).unwrap();
        let after = wasted_diff_district(60.0, 60.0).unwrap();
        let delta = action_delta(TableAction::WinByCampaign { va: 40.0, vb: 60.0 }).unwrap();
        assert_eq!(delta, 90.0);
        assert!((after - before - delta).abs() < 1e-12);
    }

    #[test]
    fn win_by_campaign_rejects_winners() {
        assert!(action_delta(TableAction::WinByCampaign { va: 60.0, vb: 40.0 }).is_err());
    }

    #[test]
    fn bonus_parts_telescope() {
        let (delta, parts) = votemander_bonus(3, 5, 4, 4);
        assert_eq!(delta, 3);
        assert_eq!(parts.iter().sum::<i64>(), delta);
        let (delta, parts) = votemander_bonus(12, 15, 16, 17);
        assert_eq!(delta, 8);
        assert_eq!(parts, [3, 1, 4]);
        assert_eq!(votemander_bonus(4, 4, 4, 4).0, 0);
    }

    fn striped_graph() -> (UnitGraph, DistrictPlan, DistrictPlan) {
        // 2x4 grid; A strong on the left half
        let pops = vec![100u64; 8];
        let va = vec![80.0, 80.0, 20.0, 20.0, 80.0, 80.0, 20.0, 20.0];
        let vb: Vec<f64> = va.iter().map(|a| 100.0 - a).collect();
        let g = UnitGraph::new(pops, va, vb, grid_edges(2, 4)).unwrap();
        let plan_i = DistrictPlan { n: 2, assign: vec![0, 0, 1, 1, 0, 0, 1, 1] };
        let plan_j = DistrictPlan { n: 2, assign: vec![0, 0, 0, 1, 0, 1, 1, 1] };
        (g, plan_i, plan_j)
    }

    #[test]
    fn reassignment_delta_matches_scratch_and_is_antisymmetric() {
        let (g, plan_i, plan_j) = striped_graph();
        let votes = VoteData::baseline(&g, 0.7);
        let delta = reassignment_delta(&g, &votes, &plan_i, &plan_j);
        let w_i: f64 = efficiency_gap(&elect(&g, &plan_i, &votes)).unwrap().state_sum;
        let w_j: f64 = efficiency_gap(&elect(&g, &plan_j, &votes)).unwrap().state_sum;
        assert!((w_j - w_i - delta).abs() < 1e-9);
        let back = reassignment_delta(&g, &votes, &plan_j, &plan_i);
        assert!((delta + back).abs() < 1e-12);
        assert_eq!(reassignment_delta(&g, &votes, &plan_i, &plan_i), 0.0);
    }

    #[test]
    fn reassignment_delta_ignores_district_labels() {
        let (g, plan_i, _) = striped_graph();
        let votes = VoteData::full(&g);
        let swapped = DistrictPlan {
            n: 2,
            assign: plan_i.assign.iter().map(|&d| 1 - d).collect(),
        };
        assert_eq!(reassignment_delta(&g, &votes, &plan_i, &swapped), 0.0);
    }

    #[test]
    fn checkerboard_morans_i_is_minus_one() {
        let g = UnitGraph::new(
            vec![100; 4],
            vec![50.0; 4],
            vec![50.0; 4],
            grid_edges(2, 2),
        )
        .unwrap();
        // 2x2 checkerboard: units 0 and 3 high, 1 and 2 low
        let i = morans_i(&g, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((i + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_values_are_rejected() {
        let g = UnitGraph::new(
            vec![100; 4],
            vec![50.0; 4],
            vec![50.0; 4],
            grid_edges(2, 2),
        )
        .unwrap();
        assert!(matches!(morans_i(&g, &[3.0; 4]), Err(MetricError::ZeroVariance)));
    }

    #[test]
    fn turnout_threshold_caps_at_one_and_rejects_non_improvement() {
        let (g, plan_i, plan_j) = striped_graph();
        let votes = VoteData::full(&g);
        // plan_i and plan_j both give A 1 win here, so threshold must reject
        let wins_i = elect(&g, &plan_i, &votes).wins_a;
        let wins_j = elect(&g, &plan_j, &votes).wins_a;
        if wins_j <= wins_i {
            assert!(matches!(
                turnout_threshold(&g, &votes, &plan_i, &plan_j),
                Err(MetricError::NoImprovement)
            ));
        }
    }

    #[test]
    fn turnout_threshold_boundary_value() {
        // Build a case where delta equals half the winning-district A votes:
        // threshold must land exactly on zero.
        let pops = vec![100u64; 4];
        let va = vec![90.0, 90.0, 10.0, 10.0];
        let vb: Vec<f64> = va.iter().map(|a| 100.0 - a).collect();
        let g = UnitGraph::new(pops, va, vb, grid_edges(1, 4)).unwrap();
        let plan_i = DistrictPlan { n: 2, assign: vec![0, 0, 1, 1] };
        let plan_j = DistrictPlan { n: 2, assign: vec![0, 1, 0, 1] };
        let votes = VoteData::full(&g);
        let wins_i = elect(&g, &plan_i, &votes).wins_a;
        let wins_j = elect(&g, &plan_j, &votes).wins_a;
        assert_eq!((wins_i, wins_j), (1, 2));
        let delta = reassignment_delta(&g, &votes, &plan_i, &plan_j);
        let winning_a = 90.0 + 10.0 + 90.0 + 10.0;
        let expected = 1.0 - 2.0 * delta / winning_a;
        let got = turnout_threshold(&g, &votes, &plan_i, &plan_j).unwrap();
        assert!((got - expected.min(1.0)).abs() < 1e-12);
    }
}
