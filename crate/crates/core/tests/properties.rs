//! Property tests for the scoring algebra and the samplers.

use proptest::prelude::*;

use votemander::metrics::{
    efficiency_gap, reassignment_delta, votemander_bonus, wasted_diff_district,
};
use votemander::model::{
    elect, grid_edges, DistrictPlan, ElectionOutcome, UnitGraph, VoteData,
};

fn outcome_from(districts: &[(f64, f64)]) -> ElectionOutcome {
    use votemander::model::{a_wins, DistrictTally, Party};
    let tallies: Vec<DistrictTally> = districts
        .iter()
        .enumerate()
        .map(|(d, &(va, vb))| DistrictTally {
            district: d,
            votes_a: va,
            votes_b: vb,
            winner: if a_wins(va, vb) { Party::A } else { Party::B },
        })
        .collect();
    let wins_a = tallies.iter().filter(|t| t.winner == Party::A).count();
    ElectionOutcome { districts: tallies, wins_a }
}

proptest! {
    /// Both branches of the wasted-vote difference are 1-homogeneous, so
    /// the efficiency gap is invariant under uniform scaling.
    #[test]
    fn eg_is_scale_invariant(
        districts in proptest::collection::vec((1.0f64..500.0, 1.0f64..500.0), 1..8),
        scale in 0.1f64..10.0,
    ) {
        let base = outcome_from(&districts);
        let scaled: Vec<(f64, f64)> =
            districts.iter().map(|&(a, b)| (a * scale, b * scale)).collect();
        let eg1 = efficiency_gap(&base).unwrap().eg;
        let eg2 = efficiency_gap(&outcome_from(&scaled)).unwrap().eg;
        prop_assert!((eg1 - eg2).abs() < 1e-9);
    }

    /// Relabeling districts permutes the ledger but not the gap.
    #[test]
    fn eg_is_label_invariant(
        districts in proptest::collection::vec((1.0f64..500.0, 1.0f64..500.0), 2..8),
    ) {
        let eg1 = efficiency_gap(&outcome_from(&districts)).unwrap().eg;
        let mut reversed = districts.clone();
        reversed.reverse();
        let eg2 = efficiency_gap(&outcome_from(&reversed)).unwrap().eg;
        prop_assert!((eg1 - eg2).abs() < 1e-9);
    }

    /// The per-district difference matches a literal wasted-vote count.
    #[test]
    fn wasted_diff_matches_literal_accounting(va in 1.0f64..1000.0, vb in 1.0f64..1000.0) {
        let total = va + vb;
        let (wasted_a, wasted_b) = if va >= vb {
            (va - total / 2.0, vb)
        } else {
            (va, vb - total / 2.0)
        };
        let expected = wasted_b - wasted_a;
        prop_assert!((wasted_diff_district(va, vb).unwrap() - expected).abs() < 1e-9);
    }

    /// Bonus parts always telescope to the bonus.
    #[test]
    fn bonus_parts_telescope(i in 0usize..30, c in 0usize..30, v in 0usize..30, t in 0usize..30) {
        let (delta, parts) = votemander_bonus(i, c, v, t);
        prop_assert_eq!(parts.iter().sum::<i64>(), delta);
        prop_assert_eq!(delta, c as i64 + t as i64 - 2 * i as i64);
    }

    /// Wins always split the districts between the parties.
    #[test]
    fn wins_partition_districts(
        districts in proptest::collection::vec((1.0f64..500.0, 1.0f64..500.0), 1..10),
    ) {
        let outcome = outcome_from(&districts);
        prop_assert_eq!(outcome.wins_a + outcome.wins_b(), districts.len());
    }
}

/// Random contiguous plans on a grid via stripes of random widths.
fn stripe_plan(cols: usize, rows: usize, cuts: &[usize]) -> DistrictPlan {
    let mut bounds: Vec<usize> = cuts.to_vec();
    bounds.push(cols);
    bounds.sort_unstable();
    bounds.dedup();
    let n = bounds.len();
    let assign = (0..rows * cols)
        .map(|k| {
            let c = k % cols;
            bounds.iter().position(|&b| c < b).unwrap()
        })
        .collect();
    DistrictPlan { n, assign }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The reassignment delta is exactly the difference of from-scratch
    /// wasted-vote sums and is antisymmetric.
    #[test]
    fn reassignment_delta_is_exact_and_antisymmetric(
        seed in 0u64..5000,
        cut_a in 1usize..5,
        cut_b in 1usize..5,
        alpha in 0.2f64..1.0,
    ) {
        let g = votemander::generate::generate_grid_instance(
            4, 6, (100, 200), (0.2, 0.8), seed,
        ).unwrap();
        let plan_i = stripe_plan(6, 4, &[cut_a]);
        let plan_j = stripe_plan(6, 4, &[cut_b]);
        let votes = VoteData::baseline(&g, alpha);
        let delta = reassignment_delta(&g, &votes, &plan_i, &plan_j);
        let w = |plan: &DistrictPlan| -> f64 {
            efficiency_gap(&elect(&g, plan, &votes)).unwrap().state_sum
        };
        prop_assert!((w(&plan_j) - w(&plan_i) - delta).abs() < 1e-9);
        let back = reassignment_delta(&g, &votes, &plan_j, &plan_i);
        prop_assert!((delta + back).abs() < 1e-9);
    }

    /// Checkerboard two-coloring of any even grid scores exactly -1.
    #[test]
    fn checkerboard_morans_i(rows in 1usize..5, cols in 1usize..5) {
        let (rows, cols) = (rows * 2, cols * 2);
        let n = rows * cols;
        let g = UnitGraph::new(
            vec![100; n],
            vec![50.0; n],
            vec![50.0; n],
            grid_edges(rows, cols),
        ).unwrap();
        let values: Vec<f64> = (0..n)
            .map(|k| (((k / cols) + (k % cols)) % 2) as f64)
            .collect();
        let i = votemander::metrics::morans_i(&g, &values).unwrap();
        prop_assert!((i + 1.0).abs() < 1e-9);
    }
}
