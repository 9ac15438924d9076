//! Spanning-tree recombination: single chain steps, pool sampling, and
//! pair-local perturbations for the least-change heuristic.
//!
//! A step merges two adjacent districts, draws a random-weight minimum
//! spanning tree of the merged subgraph, and cuts one tree edge so both
//! sides meet the population bound. Everything is driven by a caller-seeded
//! RNG, so a (graph, seed plan, config) triple determines a pool bit-exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    cut_edges, elect, validate_plan, DistrictPlan, PlanConstraints, UnitGraph, VoteData,
};

/// Tree redraws per step before the chain declares a self-loop.
const TREE_REDRAWS: usize = 50;

#[derive(Debug, Error)]
pub enum RecomError {
    #[error("seed plan violates constraints or structure")]
    InvalidSeed,
    #[error("chain must run at least one step")]
    NoSteps,
    #[error("districts {0} and {1} are not adjacent")]
    NotAdjacent(usize, usize),
    #[error("plan error: {0}")]
    Plan(#[from] crate::model::PlanError),
}

/// Chain parameters. `sample_interval` counts accepted steps between
/// recorded plans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    pub steps: usize,
    pub seed: u64,
    pub constraints: PlanConstraints,
    pub sample_interval: usize,
}

/// A sampled plan with its cached target-map wins and compactness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolEntry {
    pub plan: DistrictPlan,
    /// A's wins when this plan is scored on the original vote data.
    pub wins_on_original: usize,
    pub cut_edges: usize,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// The merged subgraph of two districts: member units and internal edges,
/// in local indices.
struct Merged {
    units: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

fn merged_subgraph(graph: &UnitGraph, plan: &DistrictPlan, d1: usize, d2: usize) -> Merged {
    let units: Vec<usize> = (0..graph.num_units())
        .filter(|&k| plan.assign[k] == d1 || plan.assign[k] == d2)
        .collect();
    let mut index_of = vec![usize::MAX; graph.num_units()];
    for (i, &u) in units.iter().enumerate() {
        index_of[u] = i;
    }
    let edges = graph
        .edges()
        .iter()
        .filter(|&&(a, b)| index_of[a] != usize::MAX && index_of[b] != usize::MAX)
        .map(|&(a, b)| (index_of[a], index_of[b]))
        .collect();
    Merged { units, edges }
}

/// Draws a random-weight MST of the merged subgraph, then returns the local
/// index sets of a random population-feasible cut, or `None` if no tree
/// edge splits within bounds.
fn try_split(
    merged: &Merged,
    pops: &[u64],
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let n = merged.units.len();
    if n < 2 {
        return None;
    }
    let mut weighted: Vec<(f64, usize)> = merged
        .edges
        .iter()
        .enumerate()
        .map(|(i, _)| (rng.gen::<f64>(), i))
        .collect();
    weighted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut uf = UnionFind::new(n);
    let mut tree: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut tree_edge_count = 0usize;
    for (_, ei) in weighted {
        let (a, b) = merged.edges[ei];
        if uf.union(a, b) {
            tree[a].push(b);
            tree[b].push(a);
            tree_edge_count += 1;
            if tree_edge_count == n - 1 {
                break;
            }
        }
    }
    if tree_edge_count != n - 1 {
        return None;
    }

    // Root at 0; BFS order, then accumulate subtree pops bottom-up.
    let mut parent = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    seen[0] = true;
    order.push(0usize);
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        for &v in &tree[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                order.push(v);
            }
        }
    }
    let mut subtree = vec![0f64; n];
    for &u in order.iter().rev() {
        subtree[u] += pops[u] as f64;
        if parent[u] != usize::MAX {
            subtree[parent[u]] += subtree[u];
        }
    }
    let total: f64 = pops.iter().map(|&p| p as f64).sum();

    // Cutting the edge above node v separates subtree[v] from the rest.
    let feasible: Vec<usize> = (1..n)
        .filter(|&v| {
            let a = subtree[v];
            let b = total - a;
            a >= lo && a <= hi && b >= lo && b <= hi
        })
        .collect();
    if feasible.is_empty() {
        return None;
    }
    let cut = feasible[rng.gen_range(0..feasible.len())];

    let mut below = vec![false; n];
    below[cut] = true;
    for &u in &order {
        if u != cut && parent[u] != usize::MAX && below[parent[u]] {
            below[u] = true;
        }
    }
    let (mut side_a, mut side_b) = (Vec::new(), Vec::new());
    for (i, &in_a) in below.iter().enumerate() {
        if in_a {
            side_a.push(i);
        } else {
            side_b.push(i);
        }
    }
    Some((side_a, side_b))
}

/// District pairs sharing at least one cut edge, each listed once as
/// `(low, high)` in sorted order.
pub fn adjacent_district_pairs(graph: &UnitGraph, plan: &DistrictPlan) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .filter_map(|&(a, b)| {
            let (da, db) = (plan.assign[a], plan.assign[b]);
            if da != db {
                Some((da.min(db), da.max(db)))
            } else {
                None
            }
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// One chain step. Returns the input plan when no feasible split is found
/// after [`TREE_REDRAWS`] tree draws (a self-loop). The result always
/// satisfies contiguity and the population bound; the cut-edge bound is a
/// chain-level filter applied in [`sample_pool`].
pub fn recom_step(
    graph: &UnitGraph,
    plan: &DistrictPlan,
    constraints: &PlanConstraints,
    rng: &mut ChaCha8Rng,
) -> DistrictPlan {
    let pairs = adjacent_district_pairs(graph, plan);
    if pairs.is_empty() {
        return plan.clone();
    }
    let (d1, d2) = pairs[rng.gen_range(0..pairs.len())];
    let merged = merged_subgraph(graph, plan, d1, d2);
    let pops: Vec<u64> = merged.units.iter().map(|&u| graph.pop(u)).collect();
    let ideal = graph.total_pop() as f64 / plan.n as f64;
    let lo = ideal * (1.0 - constraints.pop_deviation);
    let hi = ideal * (1.0 + constraints.pop_deviation);
    for _ in 0..TREE_REDRAWS {
        if let Some((side_a, side_b)) = try_split(&merged, &pops, lo, hi, rng) {
            let mut assign = plan.assign.clone();
            // The side holding the lowest merged unit (local index 0) keeps d1.
            let (to_d1, to_d2) =
                if side_a.contains(&0) { (&side_a, &side_b) } else { (&side_b, &side_a) };
            for &i in to_d1 {
                assign[merged.units[i]] = d1;
            }
            for &i in to_d2 {
                assign[merged.units[i]] = d2;
            }
            return DistrictPlan { n: plan.n, assign };
        }
    }
    plan.clone()
}

/// Runs the chain from a valid seed plan and collects a deduplicated pool.
/// A step is accepted when it changes the plan and respects the cut-edge
/// bound; every `sample_interval`-th accepted plan is recorded with its
/// original-data wins and compactness.
pub fn sample_pool(
    graph: &UnitGraph,
    seed_plan: &DistrictPlan,
    config: &ChainConfig,
) -> Result<Vec<PoolEntry>, RecomError> {
    if config.steps == 0 {
        return Err(RecomError::NoSteps);
    }
    let report = validate_plan(graph, seed_plan, &config.constraints)?;
    if !report.valid {
        return Err(RecomError::InvalidSeed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let original = VoteData::full(graph);
    let interval = config.sample_interval.max(1);

    let mut current = seed_plan.clone();
    let mut accepted = 0usize;
    let mut pool = Vec::new();
    let mut seen = std::collections::HashSet::new();
    seen.insert(current.canonical().assign);
    for _ in 0..config.steps {
        let next = recom_step(graph, &current, &config.constraints, &mut rng);
        if next.assign == current.assign {
            continue;
        }
        if let Some(bound) = config.constraints.max_cut_edges {
            if cut_edges(graph, &next) > bound {
                continue; // reject; the chain stays put
            }
        }
        current = next;
        accepted += 1;
        if accepted.is_multiple_of(interval) {
            let canonical = current.canonical();
            if seen.insert(canonical.assign.clone()) {
                let wins = elect(graph, &canonical, &original).wins_a;
                let cuts = cut_edges(graph, &canonical);
                pool.push(PoolEntry { plan: canonical, wins_on_original: wins, cut_edges: cuts });
            }
        }
    }
    Ok(pool)
}

/// An alternative bipartition of two districts' combined units; all other
/// districts are untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSplit {
    pub d1: usize,
    pub d2: usize,
    pub units_d1: Vec<usize>,
    pub units_d2: Vec<usize>,
}

impl PairSplit {
    pub fn apply(&self, plan: &DistrictPlan) -> DistrictPlan {
        let mut assign = plan.assign.clone();
        for &u in &self.units_d1 {
            assign[u] = self.d1;
        }
        for &u in &self.units_d2 {
            assign[u] = self.d2;
        }
        DistrictPlan { n: plan.n, assign }
    }

    pub fn is_identity(&self, plan: &DistrictPlan) -> bool {
        self.units_d1.iter().all(|&u| plan.assign[u] == self.d1)
            && self.units_d2.iter().all(|&u| plan.assign[u] == self.d2)
    }
}

/// Draws up to `count` distinct contiguous, population-balanced
/// bipartitions of the pair's unit set, the identity split always first.
/// Splits whose full plan would break the cut-edge bound are skipped.
pub fn submap_pool(
    graph: &UnitGraph,
    plan: &DistrictPlan,
    pair: (usize, usize),
    count: usize,
    constraints: &PlanConstraints,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PairSplit>, RecomError> {
    let (d1, d2) = pair;
    if d1 == d2 || !adjacent_district_pairs(graph, plan).contains(&(d1.min(d2), d1.max(d2))) {
        return Err(RecomError::NotAdjacent(d1, d2));
    }
    let merged = merged_subgraph(graph, plan, d1, d2);
    let pops: Vec<u64> = merged.units.iter().map(|&u| graph.pop(u)).collect();
    let ideal = graph.total_pop() as f64 / plan.n as f64;
    let lo = ideal * (1.0 - constraints.pop_deviation);
    let hi = ideal * (1.0 + constraints.pop_deviation);

    let identity = PairSplit {
        d1,
        d2,
        units_d1: merged.units.iter().copied().filter(|&u| plan.assign[u] == d1).collect(),
        units_d2: merged.units.iter().copied().filter(|&u| plan.assign[u] == d2).collect(),
    };
    let mut out = vec![identity];
    let mut seen: std::collections::HashSet<Vec<usize>> = std::collections::HashSet::new();
    seen.insert(out[0].units_d1.clone());
    seen.insert(out[0].units_d2.clone());

    let old_d1_units: std::collections::HashSet<usize> =
        out[0].units_d1.iter().copied().collect();
    let attempts = count.saturating_mul(20).max(40);
    for _ in 0..attempts {
        if out.len() >= count.max(1) {
            break;
        }
        let Some((side_a, side_b)) = try_split(&merged, &pops, lo, hi, rng) else {
            continue;
        };
        let to_units = |side: &[usize]| -> Vec<usize> {
            let mut v: Vec<usize> = side.iter().map(|&i| merged.units[i]).collect();
            v.sort_unstable();
            v
        };
        let (ua, ub) = (to_units(&side_a), to_units(&side_b));
        if seen.contains(&ua) || seen.contains(&ub) {
            continue;
        }
        // Orientation: the side overlapping old d1 more keeps the d1 label;
        // ties go to the side holding the smallest unit.
        let overlap_a = ua.iter().filter(|u| old_d1_units.contains(u)).count();
        let overlap_b = ub.iter().filter(|u| old_d1_units.contains(u)).count();
        let a_is_d1 = match overlap_a.cmp(&overlap_b) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => ua[0] < ub[0],
        };
        let split = if a_is_d1 {
            PairSplit { d1, d2, units_d1: ua.clone(), units_d2: ub.clone() }
        } else {
            PairSplit { d1, d2, units_d1: ub.clone(), units_d2: ua.clone() }
        };
        if let Some(bound) = constraints.max_cut_edges {
            if cut_edges(graph, &split.apply(plan)) > bound {
                continue;
            }
        }
        seen.insert(ua);
        seen.insert(ub);
        out.push(split);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::generate_grid_instance;
    use crate::model::grid_edges;

    fn grid(rows: usize, cols: usize) -> UnitGraph {
        let n = rows * cols;
        UnitGraph::new(vec![100; n], vec![50.0; n], vec![50.0; n], grid_edges(rows, cols))
            .unwrap()
    }

    fn column_plan(rows: usize, cols: usize, width: usize) -> DistrictPlan {
        let n = cols / width;
        DistrictPlan { n, assign: (0..rows * cols).map(|k| (k % cols) / width).collect() }
    }

    #[test]
    fn step_changes_at_most_two_districts() {
        let g = grid(6, 6);
        let plan = column_plan(6, 6, 2);
        let constraints = PlanConstraints::new(0.05, None);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut current = plan.clone();
        for _ in 0..200 {
            let next = recom_step(&g, &current, &constraints, &mut rng);
            let changed: std::collections::HashSet<usize> = current
                .assign
                .iter()
                .zip(&next.assign)
                .flat_map(|(&a, &b)| if a != b { vec![a, b] } else { vec![] })
                .collect();
            assert!(changed.len() <= 2, "step touched districts {changed:?}");
            current = next;
        }
    }

    #[test]
    fn steps_stay_valid_under_the_validator() {
        let g = generate_grid_instance(6, 6, (350, 400), (0.2, 0.8), 11).unwrap();
        let plan = column_plan(6, 6, 2);
        let constraints = PlanConstraints::new(0.10, None);
        assert!(validate_plan(&g, &plan, &constraints).unwrap().valid);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut current = plan;
        for _ in 0..1000 {
            current = recom_step(&g, &current, &constraints, &mut rng);
            let report = validate_plan(&g, &current, &constraints).unwrap();
            assert!(report.valid);
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_chain() {
        let g = grid(6, 6);
        let plan = column_plan(6, 6, 2);
        let config = ChainConfig {
            steps: 300,
            seed: 99,
            constraints: PlanConstraints::new(0.05, None),
            sample_interval: 3,
        };
        let a = sample_pool(&g, &plan, &config).unwrap();
        let b = sample_pool(&g, &plan, &config).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.plan.assign, y.plan.assign);
            assert_eq!(x.wins_on_original, y.wins_on_original);
        }
        assert!(!a.is_empty());
        assert!(a.len() <= config.steps / config.sample_interval);
    }

    #[test]
    fn pool_respects_cut_bound_and_has_no_duplicates() {
        let g = grid(6, 6);
        let plan = column_plan(6, 6, 2);
        let bound = 14;
        let config = ChainConfig {
            steps: 400,
            seed: 42,
            constraints: PlanConstraints::new(0.05, Some(bound)),
            sample_interval: 2,
        };
        assert!(cut_edges(&g, &plan) <= bound);
        let pool = sample_pool(&g, &plan, &config).unwrap();
        let mut seen = std::collections::HashSet::new();
        for entry in &pool {
            assert!(entry.cut_edges <= bound);
            assert!(validate_plan(&g, &entry.plan, &config.constraints).unwrap().valid);
            assert!(seen.insert(entry.plan.assign.clone()), "duplicate plan in pool");
        }
    }

    #[test]
    fn zero_steps_is_an_error() {
        let g = grid(2, 2);
        let plan = column_plan(2, 2, 1);
        let config = ChainConfig {
            steps: 0,
            seed: 1,
            constraints: PlanConstraints::new(0.5, None),
            sample_interval: 1,
        };
        assert!(matches!(sample_pool(&g, &plan, &config), Err(RecomError::NoSteps)));
    }

    #[test]
    fn invalid_seed_plan_is_rejected() {
        let g = grid(4, 4);
        let plan = column_plan(4, 4, 2);
        let config = ChainConfig {
            steps: 10,
            seed: 1,
            constraints: PlanConstraints::new(0.05, Some(1)),
            sample_interval: 1,
        };
        assert!(matches!(sample_pool(&g, &plan, &config), Err(RecomError::InvalidSeed)));
    }

    #[test]
    fn submap_pool_is_local_and_valid() {
        let g = generate_grid_instance(6, 6, (350, 400), (0.2, 0.8), 17).unwrap();
        let plan = column_plan(6, 6, 2);
        let constraints = PlanConstraints::new(0.10, None);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let splits = submap_pool(&g, &plan, (0, 1), 12, &constraints, &mut rng).unwrap();
        assert!(splits[0].is_identity(&plan), "identity split must come first");
        assert!(splits.len() > 1);
        let pair_units: std::collections::HashSet<usize> = plan
            .assign
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0 || d == 1)
            .map(|(u, _)| u)
            .collect();
        for split in &splits {
            let new_plan = split.apply(&plan);
            for (u, (&old, &new)) in plan.assign.iter().zip(&new_plan.assign).enumerate() {
                if old != new {
                    assert!(pair_units.contains(&u), "unit {u} outside the pair moved");
                }
            }
            assert!(validate_plan(&g, &new_plan, &constraints).unwrap().valid);
        }
    }

    #[test]
    fn submap_pool_rejects_non_adjacent_pairs() {
        let g = grid(6, 6);
        let plan = column_plan(6, 6, 2);
        let constraints = PlanConstraints::new(0.5, None);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(matches!(
            submap_pool(&g, &plan, (0, 2), 4, &constraints, &mut rng),
            Err(RecomError::NotAdjacent(0, 2))
        ));
    }
}
