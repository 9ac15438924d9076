//! State model: units, adjacency, district plans, campaigns, and the
//! deterministic election function.
//!
//! All quantities downstream of turnout scaling are `f64`; comparisons use
//! [`VOTE_EPS`]. Ties in a district break in favor of party A everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for vote comparisons. Turnout scaling makes exact
/// integer totals unattainable, so every winner/cap/budget test uses this.
pub const VOTE_EPS: f64 = 1e-9;

/// `true` when party A carries a district with totals `(va, vb)`.
#[inline]
pub fn a_wins(va: f64, vb: f64) -> bool {
    va - vb >= -VOTE_EPS
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unit {unit} repeated in edge list or self-loop")]
    BadEdge { unit: usize },
    #[error("edge references unknown unit {unit}")]
    UnknownUnit { unit: usize },
    #[error("unit {unit}: pop {pop} != vinit_a + vinit_b = {sum}")]
    PopMismatch { unit: usize, pop: u64, sum: f64 },
    #[error("unit {unit}: negative affiliation count")]
    NegativeVotes { unit: usize },
    #[error("adjacency graph is disconnected")]
    Disconnected,
    #[error("graph has no units")]
    Empty,
}

/// The state: unit populations, per-party affiliation counts, and rook-style
/// adjacency. Immutable after construction.
#[derive(Debug, Clone)]
pub struct UnitGraph {
    pops: Vec<u64>,
    vinit_a: Vec<f64>,
    vinit_b: Vec<f64>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl UnitGraph {
    /// Builds and validates a graph. Edges are deduplicated and stored with
    /// the smaller endpoint first; the graph must be connected.
    pub fn new(
        pops: Vec<u64>,
        vinit_a: Vec<f64>,
        vinit_b: Vec<f64>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, ModelError> {
        let n = pops.len();
        if n == 0 {
            return Err(ModelError::Empty);
        }
        assert_eq!(vinit_a.len(), n);
        assert_eq!(vinit_b.len(), n);
        for k in 0..n {
            if vinit_a[k] < 0.0 || vinit_b[k] < 0.0 {
                return Err(ModelError::NegativeVotes { unit: k });
            }
            let sum = vinit_a[k] + vinit_b[k];
            if (sum - pops[k] as f64).abs() > 1e-6 {
                return Err(ModelError::PopMismatch { unit: k, pop: pops[k], sum });
            }
        }
        let mut norm: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a == b {
                return Err(ModelError::BadEdge { unit: a });
            }
            if a >= n || b >= n {
                return Err(ModelError::UnknownUnit { unit: a.max(b) });
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        norm.dedup();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &norm {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let g = UnitGraph { pops, vinit_a, vinit_b, edges: norm, neighbors };
        if !g.connected(&(0..n).collect::<Vec<_>>()) {
            return Err(ModelError::Disconnected);
        }
        Ok(g)
    }

    pub fn num_units(&self) -> usize {
        self.pops.len()
    }

    pub fn pop(&self, k: usize) -> u64 {
        self.pops[k]
    }

    pub fn total_pop(&self) -> u64 {
        self.pops.iter().sum()
    }

    pub fn vinit_a(&self, k: usize) -> f64 {
        self.vinit_a[k]
    }

    pub fn vinit_b(&self, k: usize) -> f64 {
        self.vinit_b[k]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    /// BFS connectivity of the subgraph induced by `units`.
    pub fn connected(&self, units: &[usize]) -> bool {
        if units.is_empty() {
            return false;
        }
        let mut member = vec![false; self.num_units()];
        for &u in units {
            member[u] = true;
        }
        let mut seen = vec![false; self.num_units()];
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(units[0]);
        seen[units[0]] = true;
        let mut count = 1usize;
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if member[v] && !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == units.len()
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("plan assigns {got} units but graph has {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("unit {unit} assigned to district {district} out of range 0..{n}")]
    DistrictOutOfRange { unit: usize, district: usize, n: usize },
    #[error("district {district} is empty")]
    EmptyDistrict { district: usize },
}

/// A unit-to-district assignment. `assign[k]` is the district of unit `k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistrictPlan {
    pub n: usize,
    pub assign: Vec<usize>,
}

impl DistrictPlan {
    /// Checks structural integrity against a graph: length, district range,
    /// no empty district. Contiguity and balance live in [`validate_plan`].
    pub fn check_structure(&self, graph: &UnitGraph) -> Result<(), PlanError> {
        if self.assign.len() != graph.num_units() {
            return Err(PlanError::WrongLength { got: self.assign.len(), expected: graph.num_units() });
        }
        let mut seen = vec![false; self.n];
        for (unit, &d) in self.assign.iter().enumerate() {
            if d >= self.n {
                return Err(PlanError::DistrictOutOfRange { unit, district: d, n: self.n });
            }
            seen[d] = true;
        }
        if let Some(d) = seen.iter().position(|s| !s) {
            return Err(PlanError::EmptyDistrict { district: d });
        }
        Ok(())
    }

    /// Units of each district, ascending unit id within each.
    pub fn district_units(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n];
        for (unit, &d) in self.assign.iter().enumerate() {
            out[d].push(unit);
        }
        out
    }

    /// Relabels districts by smallest contained unit id. Two plans with the
    /// same partition canonicalize identically, which is what dedup and
    /// serialization key on.
    pub fn canonical(&self) -> DistrictPlan {
        let mut first_unit = vec![usize::MAX; self.n];
        for (unit, &d) in self.assign.iter().enumerate() {
            if first_unit[d] == usize::MAX {
                first_unit[d] = unit;
            }
        }
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by_key(|&d| first_unit[d]);
        let mut relabel = vec![0usize; self.n];
        for (new, &old) in order.iter().enumerate() {
            relabel[old] = new;
        }
        DistrictPlan {
            n: self.n,
            assign: self.assign.iter().map(|&d| relabel[d]).collect(),
        }
    }
}

/// Nonpartisan constraints a plan must satisfy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlanConstraints {
    /// Allowed fractional deviation from the ideal district population.
    pub pop_deviation: f64,
    /// Cut-edge bound; `None` means unlimited.
    pub max_cut_edges: Option<usize>,
}

impl PlanConstraints {
    pub fn new(pop_deviation: f64, max_cut_edges: Option<usize>) -> Self {
        assert!(pop_deviation >= 0.0, "pop_deviation must be nonnegative");
        PlanConstraints { pop_deviation, max_cut_edges }
    }
}

/// Per-district facts from [`validate_plan`].
#[derive(Debug, Clone, Serialize)]
pub struct DistrictReport {
    pub district: usize,
    pub connected: bool,
    pub pop: u64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub districts: Vec<DistrictReport>,
    pub cut_edges: usize,
    pub valid: bool,
}

/// Checks a structurally sound plan against nonpartisan constraints:
/// contiguity by graph search, population deviation from the ideal
/// `total/n`, and the cut-edge bound.
pub fn validate_plan(
    graph: &UnitGraph,
    plan: &DistrictPlan,
    constraints: &PlanConstraints,
) -> Result<ValidationReport, PlanError> {
    plan.check_structure(graph)?;
    let ideal = graph.total_pop() as f64 / plan.n as f64;
    let mut districts = Vec::with_capacity(plan.n);
    let mut valid = true;
    for (d, units) in plan.district_units().iter().enumerate() {
        let connected = graph.connected(units);
        let pop: u64 = units.iter().map(|&u| graph.pop(u)).sum();
        let deviation = (pop as f64 - ideal).abs() / ideal;
        if !connected || deviation > constraints.pop_deviation + 1e-12 {
            valid = false;
        }
        districts.push(DistrictReport { district: d, connected, pop, deviation });
    }
    let cuts = cut_edges(graph, plan);
    if let Some(bound) = constraints.max_cut_edges {
        if cuts > bound {
            valid = false;
        }
    }
    Ok(ValidationReport { districts, cut_edges: cuts, valid })
}

/// Number of adjacency edges whose endpoints lie in different districts.
pub fn cut_edges(graph: &UnitGraph, plan: &DistrictPlan) -> usize {
    graph
        .edges()
        .iter()
        .filter(|&&(a, b)| plan.assign[a] != plan.assign[b])
        .count()
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("unit {unit}: allocation {alloc} exceeds turnout capacity {cap}")]
    TurnoutCap { unit: usize, alloc: f64, cap: f64 },
    #[error("total allocation {total} exceeds budget {budget}")]
    BudgetExceeded { total: f64, budget: f64 },
    #[error("unit {unit}: negative allocation {alloc}")]
    NegativeAllocation { unit: usize, alloc: f64 },
    #[error("alpha {0} outside [0, 1]")]
    BadAlpha(f64),
}

/// Turnout level, both parties' budgets, and party B's fixed allocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignScenario {
    pub alpha: f64,
    pub budget_a: f64,
    pub budget_b: f64,
    pub alloc_b: Vec<f64>,
}

impl CampaignScenario {
    pub fn new(
        graph: &UnitGraph,
        alpha: f64,
        budget_a: f64,
        budget_b: f64,
        alloc_b: Vec<f64>,
    ) -> Result<Self, CampaignError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(CampaignError::BadAlpha(alpha));
        }
        assert_eq!(alloc_b.len(), graph.num_units());
        check_allocation(&alloc_b, budget_b, |k| (1.0 - alpha) * graph.vinit_b(k))?;
        Ok(CampaignScenario { alpha, budget_a, budget_b, alloc_b })
    }

    /// Per-unit GOTV headroom for party A: `(1 - alpha) * vinit_a`.
    pub fn capacity_a(&self, graph: &UnitGraph, k: usize) -> f64 {
        (1.0 - self.alpha) * graph.vinit_a(k)
    }
}

/// Party A's per-unit allocation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Allocation {
    pub alloc_a: Vec<f64>,
}

impl Allocation {
    pub fn zero(graph: &UnitGraph) -> Self {
        Allocation { alloc_a: vec![0.0; graph.num_units()] }
    }

    pub fn total(&self) -> f64 {
        self.alloc_a.iter().sum()
    }
}

fn check_allocation(
    alloc: &[f64],
    budget: f64,
    cap: impl Fn(usize) -> f64,
) -> Result<(), CampaignError> {
    let mut total = 0.0;
    for (k, &a) in alloc.iter().enumerate() {
        if a < -VOTE_EPS {
            return Err(CampaignError::NegativeAllocation { unit: k, alloc: a });
        }
        let c = cap(k);
        if a > c + VOTE_EPS {
            return Err(CampaignError::TurnoutCap { unit: k, alloc: a, cap: c });
        }
        total += a;
    }
    if total > budget + VOTE_EPS {
        return Err(CampaignError::BudgetExceeded { total, budget });
    }
    Ok(())
}

/// Per-unit effective votes after turnout scaling and campaigning.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteData {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl VoteData {
    /// Baseline turnout votes: `alpha * vinit`, no campaign on either side.
    pub fn baseline(graph: &UnitGraph, alpha: f64) -> Self {
        let n = graph.num_units();
        VoteData {
            a: (0..n).map(|k| alpha * graph.vinit_a(k)).collect(),
            b: (0..n).map(|k| alpha * graph.vinit_b(k)).collect(),
        }
    }

    /// Full affiliation counts (turnout 1, no campaign headroom).
    pub fn full(graph: &UnitGraph) -> Self {
        Self::baseline(graph, 1.0)
    }

    pub fn total(&self) -> f64 {
        self.a.iter().sum::<f64>() + self.b.iter().sum::<f64>()
    }
}

/// Applies both campaigns on top of baseline turnout:
/// `v_a = alpha * vinit_a + alloc_a`, `v_b = alpha * vinit_b + alloc_b`.
/// Rejects cap or budget violations, naming the offender.
pub fn apply_campaign(
    graph: &UnitGraph,
    scenario: &CampaignScenario,
    alloc_a: &Allocation,
) -> Result<VoteData, CampaignError> {
    assert_eq!(alloc_a.alloc_a.len(), graph.num_units());
    check_allocation(&alloc_a.alloc_a, scenario.budget_a, |k| scenario.capacity_a(graph, k))?;
    let n = graph.num_units();
    Ok(VoteData {
        a: (0..n).map(|k| scenario.alpha * graph.vinit_a(k) + alloc_a.alloc_a[k]).collect(),
        b: (0..n).map(|k| scenario.alpha * graph.vinit_b(k) + scenario.alloc_b[k]).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
}

/// One district's totals and result.
#[derive(Debug, Clone, Serialize)]
pub struct DistrictTally {
    pub district: usize,
    pub votes_a: f64,
    pub votes_b: f64,
    pub winner: Party,
}

impl DistrictTally {
    /// Margin convention `votes_b - votes_a`: what A must add to win.
    pub fn margin(&self) -> f64 {
        self.votes_b - self.votes_a
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ElectionOutcome {
    pub districts: Vec<DistrictTally>,
    pub wins_a: usize,
}

impl ElectionOutcome {
    pub fn wins_b(&self) -> usize {
        self.districts.len() - self.wins_a
    }
}

/// First-past-the-post per district; pure and deterministic.
pub fn elect(graph: &UnitGraph, plan: &DistrictPlan, votes: &VoteData) -> ElectionOutcome {
    let mut va = vec![0.0; plan.n];
    let mut vb = vec![0.0; plan.n];
    for k in 0..graph.num_units() {
        let d = plan.assign[k];
        va[d] += votes.a[k];
        vb[d] += votes.b[k];
    }
    let districts: Vec<DistrictTally> = (0..plan.n)
        .map(|d| DistrictTally {
            district: d,
            votes_a: va[d],
            votes_b: vb[d],
            winner: if a_wins(va[d], vb[d]) { Party::A } else { Party::B },
        })
        .collect();
    let wins_a = districts.iter().filter(|t| t.winner == Party::A).count();
    ElectionOutcome { districts, wins_a }
}

/// Rook-adjacency grid graph with the given per-unit data; unit `r*cols + c`.
pub fn grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            if c + 1 < cols {
                edges.push((k, k + 1));
            }
            if r + 1 < rows {
                edges.push((k, k + cols));
            }
        }
    }
    edges
}
