//! The pool-scan heuristic: sort candidate target plans by their wins on
//! the original data, run the fairness step on each, and stop as soon as
//! the round-1 upper bound proves no later candidate can beat the best.

use serde::Serialize;
use thiserror::Error;

use crate::metrics::{efficiency_gap, votemander_bonus, FairnessWindow};
use crate::model::{
    apply_campaign, elect, Allocation, CampaignScenario, DistrictPlan, UnitGraph, VoteData,
};
use crate::recom::PoolEntry;
use crate::step::{max_round1_wins, solve_fairness_step, StepError};

#[derive(Debug, Error)]
pub enum VotemanderError {
    #[error("plan error: {0}")]
    Plan(#[from] crate::model::PlanError),
    #[error("fairness step failed: {0}")]
    Step(#[from] StepError),
    #[error("campaign error: {0}")]
    Campaign(#[from] crate::model::CampaignError),
    #[error("scoring failed: {0}")]
    Metric(#[from] crate::metrics::MetricError),
}

/// Wins and efficiency gap of one stage map.
#[derive(Debug, Clone, Serialize)]
pub struct StageOutcome {
    pub wins_a: usize,
    pub eg: f64,
}

/// A full votemandering answer: the chosen target plan, A's allocation, and
/// all four stage maps scored.
#[derive(Debug, Clone, Serialize)]
pub struct VotemanderSolution {
    pub target_plan: DistrictPlan,
    pub allocation: Allocation,
    pub initial: StageOutcome,
    pub campaigned: StageOutcome,
    pub votemandered: StageOutcome,
    pub target: StageOutcome,
    /// `campaigned wins + weight * target wins`.
    pub objective: usize,
    pub bonus: i64,
    pub bonus_parts: [i64; 3],
    /// Candidates actually run through the fairness step.
    pub pool_index_examined: usize,
    /// False when no pool candidate was feasible and the no-action baseline
    /// is being returned.
    pub found_feasible: bool,
}

fn stage(
    graph: &UnitGraph,
    plan: &DistrictPlan,
    votes: &VoteData,
) -> Result<StageOutcome, VotemanderError> {
    let outcome = elect(graph, plan, votes);
    let ledger = efficiency_gap(&outcome)?;
    Ok(StageOutcome { wins_a: outcome.wins_a, eg: ledger.eg })
}

/// Scores all four stage maps for a chosen target plan and allocation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    graph: &UnitGraph,
    initial_plan: &DistrictPlan,
    target_plan: DistrictPlan,
    allocation: Allocation,
    scenario: &CampaignScenario,
    weight: usize,
    pool_index_examined: usize,
    found_feasible: bool,
) -> Result<VotemanderSolution, VotemanderError> {
    let original = VoteData::baseline(graph, scenario.alpha);
    let campaigned_votes = apply_campaign(graph, scenario, &allocation)?;
    let initial = stage(graph, initial_plan, &original)?;
    let campaigned = stage(graph, initial_plan, &campaigned_votes)?;
    let votemandered = stage(graph, &target_plan, &campaigned_votes)?;
    let target = stage(graph, &target_plan, &original)?;
    let objective = campaigned.wins_a + weight * target.wins_a;
    let (bonus, bonus_parts) =
        votemander_bonus(initial.wins_a, campaigned.wins_a, votemandered.wins_a, target.wins_a);
    Ok(VotemanderSolution {
        target_plan,
        allocation,
        initial,
        campaigned,
        votemandered,
        target,
        objective,
        bonus,
        bonus_parts,
        pool_index_examined,
        found_feasible,
    })
}

/// Deterministic scan order: best original-data wins first, then fewest cut
/// edges, then lexicographic assignment.
fn sorted_indices(pool: &[PoolEntry], weight: usize) -> Vec<usize> {
    let _ = weight;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        pool[b]
            .wins_on_original
            .cmp(&pool[a].wins_on_original)
            .then(pool[a].cut_edges.cmp(&pool[b].cut_edges))
            .then(pool[a].plan.assign.cmp(&pool[b].plan.assign))
    });
    order
}

/// Runs the heuristic with early termination. See [`votemander_exhaustive`]
/// for the bound-free variant the termination proof is checked against.
pub fn votemander(
    graph: &UnitGraph,
    initial_plan: &DistrictPlan,
    pool: &[PoolEntry],
    scenario: &CampaignScenario,
    window: &FairnessWindow,
    weight: usize,
) -> Result<VotemanderSolution, VotemanderError> {
    run(graph, initial_plan, pool, scenario, window, weight, true)
}

/// Scans the entire pool with no early termination.
pub fn votemander_exhaustive(
    graph: &UnitGraph,
    initial_plan: &DistrictPlan,
    pool: &[PoolEntry],
    scenario: &CampaignScenario,
    window: &FairnessWindow,
    weight: usize,
) -> Result<VotemanderSolution, VotemanderError> {
    run(graph, initial_plan, pool, scenario, window, weight, false)
}

fn run(
    graph: &UnitGraph,
    initial_plan: &DistrictPlan,
    pool: &[PoolEntry],
    scenario: &CampaignScenario,
    window: &FairnessWindow,
    weight: usize,
    early_termination: bool,
) -> Result<VotemanderSolution, VotemanderError> {
    initial_plan.check_structure(graph)?;
    let order = sorted_indices(pool, weight);
    let (s1_max, _) = max_round1_wins(graph, initial_plan, scenario)?;

    let mut best: Option<(usize, usize, Allocation)> = None; // objective, pool idx, alloc
    let mut examined = 0usize;
    for &idx in &order {
        let entry = &pool[idx];
        if early_termination {
            if let Some((best_obj, _, _)) = &best {
                if s1_max + weight * entry.wins_on_original < *best_obj {
                    break;
                }
            }
        }
        examined += 1;
        let sol = solve_fairness_step(initial_plan, &entry.plan, graph, scenario, window)?;
        if !sol.feasible {
            continue;
        }
        let objective = sol.round1_wins + weight * entry.wins_on_original;
        if best.as_ref().is_none_or(|(b, _, _)| objective > *b) {
            best = Some((objective, idx, sol.allocation));
        }
    }

    match best {
        Some((_, idx, allocation)) => assemble(
            graph,
            initial_plan,
            pool[idx].plan.clone(),
            allocation,
            scenario,
            weight,
            examined,
            true,
        ),
        None => assemble(
            graph,
            initial_plan,
            initial_plan.clone(),
            Allocation::zero(graph),
            scenario,
            weight,
            examined,
            false,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate_grid_instance, proportional_allocation};
    use crate::model::PlanConstraints;
    use crate::recom::{sample_pool, ChainConfig};

    fn column_plan(rows: usize, cols: usize, width: usize) -> DistrictPlan {
        let n = cols / width;
        DistrictPlan { n, assign: (0..rows * cols).map(|k| (k % cols) / width).collect() }
    }

    fn small_setup(seed: u64) -> (UnitGraph, DistrictPlan, Vec<PoolEntry>) {
        let g = generate_grid_instance(4, 4, (300, 400), (0.3, 0.7), seed).unwrap();
        let plan = column_plan(4, 4, 2);
        let config = ChainConfig {
            steps: 400,
            seed,
            constraints: PlanConstraints::new(0.10, None),
            sample_interval: 4,
        };
        let pool = sample_pool(&g, &plan, &config).unwrap();
        (g, plan, pool)
    }

    #[test]
    fn early_termination_matches_exhaustive_scan() {
        for seed in 0..6 {
            let (g, plan, pool) = small_setup(100 + seed);
            let alpha = 0.5;
            let alloc_b = proportional_allocation(&g, alpha, 60.0);
            let budget_b = alloc_b.iter().sum::<f64>();
            let scenario = CampaignScenario::new(&g, alpha, 80.0, budget_b, alloc_b).unwrap();
            let window = FairnessWindow::default();
            let fast = votemander(&g, &plan, &pool, &scenario, &window, 1).unwrap();
            let slow = votemander_exhaustive(&g, &plan, &pool, &scenario, &window, 1).unwrap();
            assert_eq!(fast.objective, slow.objective, "seed {seed}");
            assert!(fast.pool_index_examined <= slow.pool_index_examined);
        }
    }

    #[test]
    fn pool_of_only_the_initial_plan_with_open_window_hits_the_bound() {
        let (g, plan, _) = small_setup(7);
        let alpha = 0.5;
        let alloc_b = proportional_allocation(&g, alpha, 40.0);
        let budget_b = alloc_b.iter().sum::<f64>();
        let scenario = CampaignScenario::new(&g, alpha, 120.0, budget_b, alloc_b).unwrap();
        let original = VoteData::full(&g);
        let entry = PoolEntry {
            plan: plan.clone(),
            wins_on_original: elect(&g, &plan, &original).wins_a,
            cut_edges: crate::model::cut_edges(&g, &plan),
        };
        let sol = votemander(
            &g,
            &plan,
            std::slice::from_ref(&entry),
            &scenario,
            &FairnessWindow::UNBOUNDED,
            1,
        )
        .unwrap();
        let (s1_max, _) = max_round1_wins(&g, &plan, &scenario).unwrap();
        assert_eq!(sol.objective, s1_max + entry.wins_on_original);
    }

    #[test]
    fn zero_budget_identity_pool_gives_zero_bonus() {
        let (g, plan, _) = small_setup(9);
        let scenario =
            CampaignScenario::new(&g, 0.5, 0.0, 0.0, vec![0.0; g.num_units()]).unwrap();
        let original = VoteData::full(&g);
        let entry = PoolEntry {
            plan: plan.clone(),
            wins_on_original: elect(&g, &plan, &original).wins_a,
            cut_edges: crate::model::cut_edges(&g, &plan),
        };
        let sol = votemander(
            &g,
            &plan,
            &[entry],
            &scenario,
            &FairnessWindow::UNBOUNDED,
            1,
        )
        .unwrap();
        assert_eq!(sol.bonus, 0);
        assert!(sol.allocation.total() < 1e-12);
    }

    #[test]
    fn empty_pool_returns_the_baseline() {
        let (g, plan, _) = small_setup(11);
        let scenario =
            CampaignScenario::new(&g, 0.5, 50.0, 0.0, vec![0.0; g.num_units()]).unwrap();
        let sol =
            votemander(&g, &plan, &[], &scenario, &FairnessWindow::default(), 1).unwrap();
        assert!(!sol.found_feasible);
        assert_eq!(sol.target_plan.assign, plan.assign);
        assert_eq!(sol.bonus, 0);
    }

    #[test]
    fn objective_nondecreasing_in_budget_and_pool_size() {
        let (g, plan, pool) = small_setup(13);
        let window = FairnessWindow::default();
        let alpha = 0.5;
        let mut last = 0usize;
        for budget in [0.0, 40.0, 100.0, 200.0] {
            let alloc_b = proportional_allocation(&g, alpha, 50.0);
            let budget_b = alloc_b.iter().sum::<f64>();
            let scenario =
                CampaignScenario::new(&g, alpha, budget, budget_b, alloc_b).unwrap();
            let sol = votemander(&g, &plan, &pool, &scenario, &window, 1).unwrap();
            assert!(sol.objective >= last, "objective dropped at budget {budget}");
            last = sol.objective;
        }
        let alloc_b = proportional_allocation(&g, alpha, 50.0);
        let budget_b = alloc_b.iter().sum::<f64>();
        let scenario = CampaignScenario::new(&g, alpha, 100.0, budget_b, alloc_b).unwrap();
        let half = votemander(&g, &plan, &pool[..pool.len() / 2], &scenario, &window, 1)
            .unwrap();
        let full = votemander(&g, &plan, &pool, &scenario, &window, 1).unwrap();
        assert!(full.objective >= half.objective);
    }

    #[test]
    fn invariants_of_the_solution_hold() {
        let (g, plan, pool) = small_setup(17);
        let alpha = 0.6;
        let alloc_b = proportional_allocation(&g, alpha, 80.0);
        let budget_b = alloc_b.iter().sum::<f64>();
        let scenario = CampaignScenario::new(&g, alpha, 150.0, budget_b, alloc_b).unwrap();
        let window = FairnessWindow::default();
        let sol = votemander(&g, &plan, &pool, &scenario, &window, 1).unwrap();
        assert_eq!(sol.objective, sol.campaigned.wins_a + sol.target.wins_a);
        assert_eq!(sol.bonus, sol.objective as i64 - 2 * sol.initial.wins_a as i64);
        assert_eq!(sol.bonus_parts.iter().sum::<i64>(), sol.bonus);
        if sol.found_feasible {
            assert!(window.contains(sol.votemandered.eg));
        }
    }
}
