//! The fairness step: given a fixed target plan, find party A's allocation
//! maximizing round-1 wins while the votemandered map's efficiency gap stays
//! inside the window.
//!
//! Budget lives on *pieces* (intersections of a round-1 district I with a
//! round-2 district J), because every constraint depends only on piece
//! totals. For a fixed win/lose status vector of the votemandered districts
//! the problem is linear; a tight losing-margin cap signals that flipping
//! that district's status may pay, so the solver walks monotone flip chains,
//! solving one small integral program per visited status state and keeping
//! the best solution that verifies against a from-scratch recount.
//!
//! `brute_force_step` is the desk-scale oracle: it enumerates every
//! (round-1 win set, round-2 status vector) pair outright, plus a
//! discretized spend grid, and scores candidates by recount only.

use serde::Serialize;
use thiserror::Error;

use crate::lp::{LinearProgram, Relation, LP_EPS};
use crate::metrics::{efficiency_gap, FairnessWindow};
use crate::model::{
    a_wins, apply_campaign, elect, Allocation, CampaignScenario, DistrictPlan, UnitGraph,
    VOTE_EPS,
};

#[derive(Debug, Error)]
pub enum StepError {
    #[error("plan error: {0}")]
    Plan(#[from] crate::model::PlanError),
    #[error("instance too large for brute force: {units} units, {districts} districts")]
    TooLarge { units: usize, districts: usize },
}

/// Intersection of a round-1 district and a round-2 district.
#[derive(Debug, Clone, Serialize)]
pub struct Piece {
    pub round1: usize,
    pub round2: usize,
    pub units: Vec<usize>,
    /// Turnout headroom of the piece: sum of `(1-alpha) * vinit_a`.
    pub capacity: f64,
    /// Spending capacity `c_IJ`: the headroom, additionally clamped to the
    /// round-2 district's post-B losing margin when that district is losing.
    pub cap_c: f64,
}

/// One piece per nonempty I∩J cell; the unit sets partition the state.
pub fn piece_decomposition(
    plan_i: &DistrictPlan,
    plan_j: &DistrictPlan,
    graph: &UnitGraph,
    scenario: &CampaignScenario,
) -> Result<Vec<Piece>, StepError> {
    plan_i.check_structure(graph)?;
    plan_j.check_structure(graph)?;
    let ctx = StepContext::build(graph, plan_i, plan_j, scenario, &FairnessWindow::UNBOUNDED);
    Ok(ctx.pieces)
}

/// Party A's allocation for a fixed target plan, with stage facts.
#[derive(Debug, Clone, Serialize)]
pub struct FairnessStepSolution {
    pub allocation: Allocation,
    pub round1_wins: usize,
    pub votemandered_eg: f64,
    /// Round-2 districts whose status the solver flipped to wins.
    pub flipped_districts: Vec<usize>,
    pub feasible: bool,
    /// Per-piece spend, aligned with [`piece_decomposition`] order.
    pub piece_spend: Vec<f64>,
    /// Length of the accepted flip chain; at most the district count.
    pub flip_iterations: usize,
    /// Linear programs solved across the whole search.
    pub lp_solves: usize,
}

impl FairnessStepSolution {
    fn infeasible(graph: &UnitGraph, pieces: usize, lp_solves: usize) -> Self {
        FairnessStepSolution {
            allocation: Allocation::zero(graph),
            round1_wins: 0,
            votemandered_eg: f64::NAN,
            flipped_districts: Vec::new(),
            feasible: false,
            piece_spend: vec![0.0; pieces],
            flip_iterations: 0,
            lp_solves,
        }
    }
}

/// Everything the solver needs, precomputed once per (plan_i, plan_j) pair.
struct StepContext<'a> {
    graph: &'a UnitGraph,
    plan_i: &'a DistrictPlan,
    plan_j: &'a DistrictPlan,
    scenario: &'a CampaignScenario,
    window: &'a FairnessWindow,
    pieces: Vec<Piece>,
    /// Margin A must add to win each round-1 district; zero if already won.
    need: Vec<f64>,
    /// Votemandered totals at zero A spend (B's allocation applied).
    vj_a0: Vec<f64>,
    vj_b: Vec<f64>,
    /// `vj_b - vj_a0` for losing districts; what A must add there to flip.
    margin_j: Vec<f64>,
    losing_j: Vec<usize>,
    /// W(B-A) constants per district for each status branch.
    w_win: Vec<f64>,
    w_lose: Vec<f64>,
    /// Forced total spend and the fixed EG denominator it implies.
    spendable: f64,
    denom: f64,
}

impl<'a> StepContext<'a> {
    fn build(
        graph: &'a UnitGraph,
        plan_i: &'a DistrictPlan,
        plan_j: &'a DistrictPlan,
        scenario: &'a CampaignScenario,
        window: &'a FairnessWindow,
    ) -> Self {
        let (ni, nj) = (plan_i.n, plan_j.n);
        let alpha = scenario.alpha;

        let mut vi_a0 = vec![0.0; ni];
        let mut vi_b = vec![0.0; ni];
        let mut vj_a0 = vec![0.0; nj];
        let mut vj_b = vec![0.0; nj];
        let mut cell: std::collections::BTreeMap<(usize, usize), Vec<usize>> =
            std::collections::BTreeMap::new();
        for k in 0..graph.num_units() {
            let (i, j) = (plan_i.assign[k], plan_j.assign[k]);
            let a = alpha * graph.vinit_a(k);
            let b = alpha * graph.vinit_b(k) + scenario.alloc_b[k];
            vi_a0[i] += a;
            vi_b[i] += b;
            vj_a0[j] += a;
            vj_b[j] += b;
            cell.entry((i, j)).or_default().push(k);
        }

        let margin_j: Vec<f64> = (0..nj).map(|j| vj_b[j] - vj_a0[j]).collect();
        let losing_j: Vec<usize> = (0..nj).filter(|&j| !a_wins(vj_a0[j], vj_b[j])).collect();
        let w_win: Vec<f64> = (0..nj).map(|j| (3.0 * vj_b[j] - vj_a0[j]) / 2.0).collect();
        let w_lose: Vec<f64> = (0..nj).map(|j| (vj_b[j] - 3.0 * vj_a0[j]) / 2.0).collect();

        let pieces: Vec<Piece> = cell
            .into_iter()
            .map(|((i, j), units)| {
                let capacity: f64 =
                    units.iter().map(|&k| (1.0 - alpha) * graph.vinit_a(k)).sum();
                let cap_c = if losing_j.contains(&j) {
                    capacity.min(margin_j[j].max(0.0))
                } else {
                    capacity
                };
                Piece { round1: i, round2: j, units, capacity, cap_c }
            })
            .collect();

        let need: Vec<f64> =
            (0..ni).map(|i| if a_wins(vi_a0[i], vi_b[i]) { 0.0 } else { vi_b[i] - vi_a0[i] }).collect();

        let total_capacity: f64 = pieces.iter().map(|p| p.capacity).sum();
        let spendable = scenario.budget_a.min(total_capacity).max(0.0);
        let alloc_b_total: f64 = scenario.alloc_b.iter().sum();
        let denom = alpha * graph.total_pop() as f64 + alloc_b_total + spendable;

        StepContext {
            graph,
            plan_i,
            plan_j,
            scenario,
            window,
            pieces,
            need,
            vj_a0,
            vj_b,
            margin_j,
            losing_j,
            w_win,
            w_lose,
            spendable,
            denom,
        }
    }

    /// Baseline W(B-A) of the votemandered map with statuses in `flips`
    /// moved to the winning branch. The per-piece spend effect is linear on
    /// top of this constant.
    fn w_base(&self, flips: u64) -> f64 {
        (0..self.plan_j.n)
            .map(|j| {
                let losing = self.losing_j.contains(&j);
                if !losing || flips & (1 << j) != 0 {
                    self.w_win[j]
                } else {
                    self.w_lose[j]
                }
            })
            .sum()
    }

    /// W(B-A) reduction per spent vote in each piece given the status set.
    fn relief(&self, flips: u64) -> Vec<f64> {
        self.pieces
            .iter()
            .map(|p| {
                let losing =
                    self.losing_j.contains(&p.round2) && flips & (1 << p.round2) == 0;
                if losing {
                    1.5
                } else {
                    0.5
                }
            })
            .collect()
    }

    /// Expands per-piece spends to a per-unit allocation: units fill in
    /// ascending id until the piece total is exhausted.
    fn expand(&self, spend: &[f64]) -> Allocation {
        let alpha = self.scenario.alpha;
        let mut alloc = Allocation::zero(self.graph);
        for (p, &z) in self.pieces.iter().zip(spend) {
            let mut left = z;
            for &k in &p.units {
                if left <= 0.0 {
                    break;
                }
                let cap = (1.0 - alpha) * self.graph.vinit_a(k);
                let put = cap.min(left);
                alloc.alloc_a[k] = put;
                left -= put;
            }
        }
        alloc
    }

    /// From-scratch recount of a spend vector: realized round-1 wins and the
    /// realized votemandered EG checked against the window.
    fn realize(&self, spend: &[f64]) -> Option<Realized> {
        let alloc = self.expand(spend);
        let votes = apply_campaign(self.graph, self.scenario, &alloc).ok()?;
        let round1 = elect(self.graph, self.plan_i, &votes);
        let vm = elect(self.graph, self.plan_j, &votes);
        let ledger = efficiency_gap(&vm).ok()?;
        Some(Realized {
            allocation: alloc,
            round1_wins: round1.wins_a,
            eg: ledger.eg,
            in_window: self.window.contains(ledger.eg),
        })
    }
}

struct Realized {
    allocation: Allocation,
    round1_wins: usize,
    eg: f64,
    in_window: bool,
}

/// Strict gap below a kept-losing district's margin. Vote quantities are
/// O(10) and up, so this loses nothing real while keeping the simplex off
/// the tie boundary.
const MARGIN_GAP: f64 = 1e-6;

/// Builds the LP for a status set and a partial row decision: rows in
/// `forced` must be won outright, rows in `banned` get no indicator, and the
/// remaining candidate rows enter as relaxed indicators in [0, 1] linked by
/// `need_i * x <= spend into row i`.
fn build_lp(
    ctx: &StepContext,
    flips: u64,
    candidates: &[usize],
    forced: &[usize],
    banned: &[usize],
) -> LinearProgram {
    let np = ctx.pieces.len();
    let free: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|i| !forced.contains(i) && !banned.contains(i))
        .collect();
    let nv = np + free.len();
    let mut lp = LinearProgram::new(nv);
    for (fi, _) in free.iter().enumerate() {
        lp.objective[np + fi] = 1.0;
    }

    // Piece headroom and forced full spend.
    for (p, piece) in ctx.pieces.iter().enumerate() {
        let mut row = vec![0.0; nv];
        row[p] = 1.0;
        lp.constrain(row, Relation::Le, piece.capacity);
    }
    let mut total = vec![0.0; nv];
    total[..np].fill(1.0);
    lp.constrain(total, Relation::Eq, ctx.spendable);

    // Round-2 margins: kept-losing districts stay strictly under (ties go
    // to A, so spend parked exactly at the margin would flip the district
    // in the recount), flipped districts go at or over.
    for &j in &ctx.losing_j {
        let mut row = vec![0.0; nv];
        for (p, piece) in ctx.pieces.iter().enumerate() {
            if piece.round2 == j {
                row[p] = 1.0;
            }
        }
        if flips & (1 << j) != 0 {
            lp.constrain(row, Relation::Ge, ctx.margin_j[j]);
        } else {
            lp.constrain(row, Relation::Le, (ctx.margin_j[j] - MARGIN_GAP).max(0.0));
        }
    }

    // Fairness window on the votemandered map, linear in piece spends.
    let relief = ctx.relief(flips);
    let w0 = ctx.w_base(flips);
    let mut hi_row = vec![0.0; nv];
    let mut lo_row = vec![0.0; nv];
    hi_row[..np].copy_from_slice(&relief);
    lo_row[..np].copy_from_slice(&relief);
    if ctx.window.hi.is_finite() {
        lp.constrain(hi_row, Relation::Ge, w0 - ctx.window.hi * ctx.denom);
    }
    if ctx.window.lo.is_finite() {
        lp.constrain(lo_row, Relation::Le, w0 - ctx.window.lo * ctx.denom);
    }

    // Row links: forced rows need the full margin, free rows earn credit
    // proportional to spend.
    for &i in forced {
        let mut row = vec![0.0; nv];
        for (p, piece) in ctx.pieces.iter().enumerate() {
            if piece.round1 == i {
                row[p] = 1.0;
            }
        }
        lp.constrain(row, Relation::Ge, ctx.need[i]);
    }
    for (fi, &i) in free.iter().enumerate() {
        let mut row = vec![0.0; nv];
        for (p, piece) in ctx.pieces.iter().enumerate() {
            if piece.round1 == i {
                row[p] = -1.0;
            }
        }
        row[np + fi] = ctx.need[i];
        lp.constrain(row, Relation::Le, 0.0);
        let mut bound = vec![0.0; nv];
        bound[np + fi] = 1.0;
        lp.constrain(bound, Relation::Le, 1.0);
    }
    lp
}

/// Exact integral solve for one status set via branch and bound on the win
/// indicators. Returns the achieved win rows with a witness spend vector,
/// plus the LP count.
type StatusSolution = Option<(Vec<usize>, Vec<f64>)>;

fn solve_status(ctx: &StepContext, flips: u64) -> (StatusSolution, usize) {
    let np = ctx.pieces.len();
    // Rows worth an indicator: losing now, but within reach of the budget
    // and their own turnout headroom.
    let row_capacity = |i: usize| -> f64 {
        ctx.pieces.iter().filter(|p| p.round1 == i).map(|p| p.capacity).sum()
    };
    let candidates: Vec<usize> = (0..ctx.plan_i.n)
        .filter(|&i| {
            ctx.need[i] > 0.0
                && ctx.need[i] <= ctx.spendable + LP_EPS
                && ctx.need[i] <= row_capacity(i) + LP_EPS
        })
        .collect();

    let mut solves = 0usize;
    let mut best: StatusSolution = None;
    // Depth-first over row decisions with the LP relaxation as the bound.
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        ctx: &StepContext,
        flips: u64,
        candidates: &[usize],
        forced: &mut Vec<usize>,
        banned: &mut Vec<usize>,
        best: &mut StatusSolution,
        solves: &mut usize,
        np: usize,
    ) {
        let lp = build_lp(ctx, flips, candidates, forced, banned);
        *solves += 1;
        let Some(sol) = crate::lp::solve(&lp).optimal() else {
            return;
        };
        let bound = forced.len() as f64 + sol.objective;
        let incumbent = best.as_ref().map_or(-1.0, |(rows, _)| rows.len() as f64);
        if bound < incumbent + 1.0 - 1e-6 {
            return;
        }
        // Fractional indicators appear after the piece block.
        let free: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|i| !forced.contains(i) && !banned.contains(i))
            .collect();
        let mut branch: Option<usize> = None;
        let mut most = 1e-6;
        for (fi, &i) in free.iter().enumerate() {
            let v = sol.x[np + fi];
            let frac = (v - v.round()).abs();
            if frac > most {
                most = frac;
                branch = Some(i);
            }
        }
        match branch {
            None => {
                let mut rows = forced.clone();
                rows.extend(
                    free.iter()
                        .enumerate()
                        .filter(|(fi, _)| sol.x[np + fi] > 0.5)
                        .map(|(_, &i)| i),
                );
                rows.sort_unstable();
                if best.as_ref().is_none_or(|(r, _)| rows.len() > r.len()) {
                    *best = Some((rows, sol.x[..np].to_vec()));
                }
            }
            Some(i) => {
                forced.push(i);
                recurse(ctx, flips, candidates, forced, banned, best, solves, np);
                forced.pop();
                banned.push(i);
                recurse(ctx, flips, candidates, forced, banned, best, solves, np);
                banned.pop();
            }
        }
    }
    recurse(
        ctx,
        flips,
        &candidates,
        &mut Vec::new(),
        &mut Vec::new(),
        &mut best,
        &mut solves,
        np,
    );
    (best, solves)
}

/// Greedy tie-break key for choosing which tight district to flip first.
fn flip_cost(ctx: &StepContext, j: usize) -> f64 {
    (3.0 * ctx.vj_b[j] + ctx.vj_a0[j]) / 2.0
}

/// Status states explored before the search gives up; losing districts are
/// few in practice, so the cap only bites on adversarial instances.
const MAX_STATES: usize = 128;

/// Maximizes round-1 wins for a fixed target plan subject to the window.
///
/// Starts from the post-B status vector, solves the piece program, and
/// whenever a losing district's margin cap is tight (or blocks a lost
/// round-1 row, or the state is outright infeasible) re-solves with that
/// district flipped to a win, cheapest flip first. Every candidate is
/// verified by a from-scratch recount before it can be returned.
pub fn solve_fairness_step(
    plan_i: &DistrictPlan,
    plan_j: &DistrictPlan,
    graph: &UnitGraph,
    scenario: &CampaignScenario,
    window: &FairnessWindow,
) -> Result<FairnessStepSolution, StepError> {
    plan_i.check_structure(graph)?;
    plan_j.check_structure(graph)?;
    assert!(plan_j.n <= 64, "status sets are tracked in a 64-bit mask");
    let ctx = StepContext::build(graph, plan_i, plan_j, scenario, window);
    let np = ctx.pieces.len();

    let mut frontier = std::collections::VecDeque::new();
    frontier.push_back(0u64);
    let mut visited = std::collections::HashSet::new();
    let mut lp_solves = 0usize;
    let mut states = 0usize;
    struct Best {
        wins: usize,
        spend: Vec<f64>,
        realized: Realized,
        flips: u64,
    }
    let mut best: Option<Best> = None;

    while let Some(flips) = frontier.pop_front() {
        if !visited.insert(flips) {
            continue;
        }
        states += 1;
        if states > MAX_STATES {
            break;
        }
        let (solution, solves) = solve_status(&ctx, flips);
        lp_solves += solves;

        let mut triggers: Vec<usize> = Vec::new();
        match solution {
            Some((_, spend)) => {
                if let Some(realized) = ctx.realize(&spend) {
                    if realized.in_window
                        && best.as_ref().is_none_or(|b| realized.round1_wins > b.wins)
                    {
                        best = Some(Best {
                            wins: realized.round1_wins,
                            spend: spend.clone(),
                            realized,
                            flips,
                        });
                    }
                }
                // Tight kept-losing margins, plus margins that cap below
                // their headroom while some reachable row stays lost.
                let lost_rows: Vec<usize> = {
                    let mut spent = vec![0.0; ctx.plan_i.n];
                    for (p, piece) in ctx.pieces.iter().enumerate() {
                        spent[piece.round1] += spend[p];
                    }
                    (0..ctx.plan_i.n)
                        .filter(|&i| ctx.need[i] > 0.0 && spent[i] < ctx.need[i] - VOTE_EPS)
                        .collect()
                };
                // A flip can also buy room under the lower window edge:
                // winning a district raises W(B-A), so when that edge binds
                // and rows stay lost, every unflipped district is a
                // candidate.
                let lo_binds = ctx.window.lo.is_finite() && {
                    let relief = ctx.relief(flips);
                    let w_final = ctx.w_base(flips)
                        - relief.iter().zip(&spend).map(|(r, z)| r * z).sum::<f64>();
                    w_final - ctx.window.lo * ctx.denom <= 1e-6
                };
                for &j in &ctx.losing_j {
                    if flips & (1 << j) != 0 {
                        continue;
                    }
                    let col: f64 = ctx
                        .pieces
                        .iter()
                        .zip(&spend)
                        .filter(|(p, _)| p.round2 == j)
                        .map(|(_, &z)| z)
                        .sum();
                    let headroom: f64 = ctx
                        .pieces
                        .iter()
                        .filter(|p| p.round2 == j)
                        .map(|p| p.capacity)
                        .sum();
                    let tight = col >= (ctx.margin_j[j] - MARGIN_GAP).max(0.0) - 1e-7;
                    let blocking = ctx.margin_j[j] < headroom - 1e-6
                        && lost_rows.iter().any(|&i| {
                            ctx.pieces.iter().any(|p| p.round1 == i && p.round2 == j)
                        });
                    if tight || blocking || (lo_binds && !lost_rows.is_empty()) {
                        triggers.push(j);
                    }
                }
            }
            None => {
                triggers.extend(
                    ctx.losing_j.iter().copied().filter(|&j| flips & (1 << j) == 0),
                );
            }
        }
        triggers.sort_by(|&a, &b| {
            flip_cost(&ctx, a)
                .partial_cmp(&flip_cost(&ctx, b))
                .unwrap()
                .then(a.cmp(&b))
        });
        for j in triggers {
            // A flip forces at least the margin into that district.
            if ctx.margin_j[j] > ctx.spendable + LP_EPS {
                continue;
            }
            let next = flips | (1 << j);
            if !visited.contains(&next) {
                frontier.push_back(next);
            }
        }
    }

    match best {
        Some(b) => {
            let flipped: Vec<usize> =
                (0..plan_j.n).filter(|&j| b.flips & (1 << j) != 0).collect();
            Ok(FairnessStepSolution {
                allocation: b.realized.allocation,
                round1_wins: b.wins,
                votemandered_eg: b.realized.eg,
                flip_iterations: flipped.len(),
                flipped_districts: flipped,
                feasible: true,
                piece_spend: b.spend,
                lp_solves,
            })
        }
        None => Ok(FairnessStepSolution::infeasible(graph, np, lp_solves)),
    }
}

/// Exhaustive oracle for desk-scale instances. Enumerates every subset of
/// flippable round-1 rows against every round-2 status vector, solving a
/// feasibility program for each pair, and additionally walks a discretized
/// per-piece spend grid (piece caps, losing margins, and `grid_resolution`
/// evenly spaced levels). Candidates are scored purely by recount.
pub fn brute_force_step(
    plan_i: &DistrictPlan,
    plan_j: &DistrictPlan,
    graph: &UnitGraph,
    scenario: &CampaignScenario,
    window: &FairnessWindow,
    grid_resolution: usize,
) -> Result<FairnessStepSolution, StepError> {
    plan_i.check_structure(graph)?;
    plan_j.check_structure(graph)?;
    if graph.num_units() > 12 || plan_i.n > 3 || plan_j.n > 3 {
        return Err(StepError::TooLarge {
            units: graph.num_units(),
            districts: plan_i.n.max(plan_j.n),
        });
    }
    let ctx = StepContext::build(graph, plan_i, plan_j, scenario, window);
    let np = ctx.pieces.len();
    let mut lp_solves = 0usize;

    struct Cand {
        wins: usize,
        spend: Vec<f64>,
        realized: Realized,
        flips: u64,
    }
    let mut best: Option<Cand> = None;
    let consider = |spend: &[f64], flips: u64, best: &mut Option<Cand>| {
        if let Some(realized) = ctx.realize(spend) {
            if realized.in_window && best.as_ref().is_none_or(|b| realized.round1_wins > b.wins)
            {
                *best = Some(Cand {
                    wins: realized.round1_wins,
                    spend: spend.to_vec(),
                    realized,
                    flips,
                });
            }
        }
    };

    // Route 1: subset enumeration with feasibility programs.
    let rows: Vec<usize> = (0..plan_i.n).filter(|&i| ctx.need[i] > 0.0).collect();
    let cols = &ctx.losing_j;
    for fmask in 0u64..(1 << cols.len()) {
        let flips: u64 = cols
            .iter()
            .enumerate()
            .filter(|(b, _)| fmask & (1 << b) != 0)
            .map(|(_, &j)| 1u64 << j)
            .sum();
        for smask in 0u64..(1 << rows.len()) {
            let forced: Vec<usize> = rows
                .iter()
                .enumerate()
                .filter(|(b, _)| smask & (1 << b) != 0)
                .map(|(_, &i)| i)
                .collect();
            let mut lp = build_lp(&ctx, flips, &[], &forced, &[]);
            // Feasibility only; steer spend away from losing-margin
            // boundaries so recounted statuses match the assumed ones.
            let relief = ctx.relief(flips);
            for (obj, r) in lp.objective.iter_mut().zip(&relief) {
                *obj = if *r > 1.0 { -1.0 } else { 0.0 };
            }
            lp_solves += 1;
            if let Some(sol) = crate::lp::solve(&lp).optimal() {
                consider(&sol.x[..np], flips, &mut best);
            }
        }
    }

    // Route 2: the spend grid. Levels per piece: 0, the cap, the losing
    // margin clamp, and evenly spaced interior points.
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(np);
    for p in &ctx.pieces {
        let mut ls = vec![0.0, p.capacity.min(ctx.spendable)];
        if ctx.losing_j.contains(&p.round2) {
            ls.push(ctx.margin_j[p.round2].clamp(0.0, p.capacity));
        }
        for g in 1..grid_resolution.max(1) {
            ls.push(p.capacity.min(ctx.spendable) * g as f64 / grid_resolution as f64);
        }
        ls.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ls.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        levels.push(ls);
    }
    let mut spend = vec![0.0; np];
    let mut visited = 0usize;
    const GRID_CAP: usize = 300_000;
    fn walk(
        ctx: &StepContext,
        levels: &[Vec<f64>],
        spend: &mut Vec<f64>,
        p: usize,
        used: f64,
        visited: &mut usize,
        consider: &mut dyn FnMut(&[f64]),
    ) {
        if *visited >= GRID_CAP {
            return;
        }
        if p == levels.len() {
            *visited += 1;
            // Top up to the forced total along ascending pieces.
            let mut full = spend.clone();
            let mut left = ctx.spendable - used;
            for (q, piece) in ctx.pieces.iter().enumerate() {
                if left <= LP_EPS {
                    break;
                }
                let room = piece.capacity - full[q];
                let put = room.max(0.0).min(left);
                full[q] += put;
                left -= put;
            }
            if left <= 1e-6 {
                consider(&full);
            }
            return;
        }
        for &l in &levels[p] {
            if used + l > ctx.spendable + LP_EPS {
                break;
            }
            spend[p] = l;
            walk(ctx, levels, spend, p + 1, used + l, visited, consider);
            spend[p] = 0.0;
        }
    }
    {
        let mut consider_grid = |s: &[f64]| consider(s, u64::MAX, &mut best);
        walk(&ctx, &levels, &mut spend, 0, 0.0, &mut visited, &mut consider_grid);
    }

    match best {
        Some(b) => {
            let flipped: Vec<usize> = if b.flips == u64::MAX {
                Vec::new()
            } else {
                (0..plan_j.n).filter(|&j| b.flips & (1 << j) != 0).collect()
            };
            Ok(FairnessStepSolution {
                allocation: b.realized.allocation,
                round1_wins: b.wins,
                votemandered_eg: b.realized.eg,
                flip_iterations: flipped.len(),
                flipped_districts: flipped,
                feasible: true,
                piece_spend: b.spend,
                lp_solves,
            })
        }
        None => Ok(FairnessStepSolution::infeasible(graph, np, lp_solves)),
    }
}

/// Maximum round-1 wins ignoring fairness: baseline wins plus the cheapest
/// flippable losing districts that fit the budget. Flip costs are additive
/// and independent across districts, so cheapest-first is optimal.
pub fn max_round1_wins(
    graph: &UnitGraph,
    plan_i: &DistrictPlan,
    scenario: &CampaignScenario,
) -> Result<(usize, Allocation), StepError> {
    plan_i.check_structure(graph)?;
    let alpha = scenario.alpha;
    let n = plan_i.n;
    let mut va = vec![0.0; n];
    let mut vb = vec![0.0; n];
    for k in 0..graph.num_units() {
        let d = plan_i.assign[k];
        va[d] += alpha * graph.vinit_a(k);
        vb[d] += alpha * graph.vinit_b(k) + scenario.alloc_b[k];
    }
    let capacity: Vec<f64> = {
        let mut c = vec![0.0; n];
        for k in 0..graph.num_units() {
            c[plan_i.assign[k]] += (1.0 - alpha) * graph.vinit_a(k);
        }
        c
    };
    let mut wins = (0..n).filter(|&d| a_wins(va[d], vb[d])).count();
    let mut flippable: Vec<(f64, usize)> = (0..n)
        .filter(|&d| !a_wins(va[d], vb[d]))
        .map(|d| (vb[d] - va[d], d))
        .filter(|&(cost, d)| cost <= capacity[d] + VOTE_EPS)
        .collect();
    flippable.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut alloc = Allocation::zero(graph);
    let mut budget = scenario.budget_a;
    for (cost, d) in flippable {
        if cost > budget + VOTE_EPS {
            break;
        }
        let mut left = cost;
        for k in 0..graph.num_units() {
            if left <= 0.0 {
                break;
            }
            if plan_i.assign[k] != d {
                continue;
            }
            let cap = (1.0 - alpha) * graph.vinit_a(k) - alloc.alloc_a[k];
            let put = cap.min(left);
            alloc.alloc_a[k] += put;
            left -= put;
        }
        budget -= cost;
        wins += 1;
    }
    Ok((wins, alloc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate_grid_instance, proportional_allocation};
    use crate::model::{grid_edges, VoteData};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 4 units on a path, 2 districts; integer data small enough to check
    /// capacities by hand.
    fn four_unit_fixture() -> (UnitGraph, DistrictPlan, DistrictPlan, CampaignScenario) {
        let g = UnitGraph::new(
            vec![100, 100, 100, 100],
            vec![60.0, 40.0, 30.0, 70.0],
            vec![40.0, 60.0, 70.0, 30.0],
            grid_edges(1, 4),
        )
        .unwrap();
        let plan_i = DistrictPlan { n: 2, assign: vec![0, 0, 1, 1] };
        let plan_j = DistrictPlan { n: 2, assign: vec![0, 1, 1, 0] };
        let scenario = CampaignScenario::new(&g, 0.5, 25.0, 0.0, vec![0.0; 4]).unwrap();
        (g, plan_i, plan_j, scenario)
    }

    #[test]
    fn identity_plans_give_whole_district_pieces() {
        let (g, plan_i, _, scenario) = four_unit_fixture();
        let pieces = piece_decomposition(&plan_i, &plan_i, &g, &scenario).unwrap();
        assert_eq!(pieces.len(), 2);
        let mut all_units: Vec<usize> =
            pieces.iter().flat_map(|p| p.units.iter().copied()).collect();
        all_units.sort_unstable();
        assert_eq!(all_units, vec![0, 1, 2, 3]);
    }

    #[test]
    fn pieces_partition_the_units_and_match_hand_capacities() {
        let (g, plan_i, plan_j, scenario) = four_unit_fixture();
        let pieces = piece_decomposition(&plan_i, &plan_j, &g, &scenario).unwrap();
        assert_eq!(pieces.len(), 4);
        let mut all_units: Vec<usize> =
            pieces.iter().flat_map(|p| p.units.iter().copied()).collect();
        all_units.sort_unstable();
        assert_eq!(all_units, vec![0, 1, 2, 3]);
        // alpha = 0.5: headroom is vinit_a / 2 per unit.
        // Votemandered district 0 = units {0, 3}: va = 65, vb = 35 (winning).
        // District 1 = units {1, 2}: va = 35, vb = 65, margin 30.
        for p in &pieces {
            let units = p.units.clone();
            if units == vec![0] {
                assert!((p.capacity - 30.0).abs() < 1e-9);
                assert!((p.cap_c - 30.0).abs() < 1e-9); // J = 0 is winning
            } else if units == vec![1] {
                assert!((p.capacity - 20.0).abs() < 1e-9);
                assert!((p.cap_c - 20.0).abs() < 1e-9); // margin 30 > headroom
            } else if units == vec![2] {
                assert!((p.capacity - 15.0).abs() < 1e-9);
                assert!((p.cap_c - 15.0).abs() < 1e-9);
            } else if units == vec![3] {
                assert!((p.capacity - 35.0).abs() < 1e-9);
                assert!((p.cap_c - 35.0).abs() < 1e-9);
            } else {
                panic!("unexpected piece {units:?}");
            }
        }
    }

    #[test]
    fn no_op_when_budget_is_zero_and_window_is_wide() {
        let (g, plan_i, _, _) = four_unit_fixture();
        let scenario = CampaignScenario::new(&g, 0.5, 0.0, 0.0, vec![0.0; 4]).unwrap();
        let window = FairnessWindow::new(-1.0, 1.0);
        let sol = solve_fairness_step(&plan_i, &plan_i, &g, &scenario, &window).unwrap();
        assert!(sol.feasible);
        assert!(sol.allocation.total().abs() < 1e-12);
        let baseline = elect(&g, &plan_i, &VoteData::baseline(&g, 0.5)).wins_a;
        assert_eq!(sol.round1_wins, baseline);
        let initial_eg =
            efficiency_gap(&elect(&g, &plan_i, &VoteData::baseline(&g, 0.5))).unwrap().eg;
        assert!((sol.votemandered_eg - initial_eg).abs() < 1e-9);
    }

    #[test]
    fn unbounded_window_reaches_the_greedy_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..40 {
            let g = generate_grid_instance(
                2,
                4,
                (80, 120),
                (0.25, 0.75),
                1000 + trial,
            )
            .unwrap();
            let plan_i = DistrictPlan { n: 2, assign: vec![0, 0, 1, 1, 0, 0, 1, 1] };
            let plan_j = DistrictPlan { n: 2, assign: vec![0, 0, 0, 1, 0, 1, 1, 1] };
            let alpha = [0.4, 0.6][rng.gen_range(0..2)];
            let budget = rng.gen_range(5.0..120.0);
            let alloc_b = proportional_allocation(&g, alpha, rng.gen_range(0.0..60.0));
            let budget_b = alloc_b.iter().sum::<f64>();
            let scenario =
                CampaignScenario::new(&g, alpha, budget, budget_b, alloc_b).unwrap();
            let (s1_max, _) = max_round1_wins(&g, &plan_i, &scenario).unwrap();
            let sol = solve_fairness_step(
                &plan_i,
                &plan_j,
                &g,
                &scenario,
                &FairnessWindow::UNBOUNDED,
            )
            .unwrap();
            assert!(sol.feasible);
            assert_eq!(sol.round1_wins, s1_max, "trial {trial}");
        }
    }

    #[test]
    fn impossible_window_reports_infeasible_on_both_paths() {
        let (g, plan_i, plan_j, scenario) = four_unit_fixture();
        let window = FairnessWindow::new(10.0, 11.0); // EG can never reach 10
        let a = solve_fairness_step(&plan_i, &plan_j, &g, &scenario, &window).unwrap();
        let b = brute_force_step(&plan_i, &plan_j, &g, &scenario, &window, 3).unwrap();
        assert!(!a.feasible);
        assert!(!b.feasible);
    }

    #[test]
    fn greedy_round1_bound_matches_subset_enumeration() {
        for trial in 0..60 {
            let g =
                generate_grid_instance(2, 3, (80, 120), (0.2, 0.8), 500 + trial).unwrap();
            let plan = DistrictPlan { n: 3, assign: vec![0, 1, 2, 0, 1, 2] };
            let alpha = 0.5;
            let alloc_b = proportional_allocation(&g, alpha, 40.0);
            let budget_b = alloc_b.iter().sum::<f64>();
            let scenario = CampaignScenario::new(
                &g,
                alpha,
                (trial as f64 % 7.0) * 15.0,
                budget_b,
                alloc_b,
            )
            .unwrap();
            let (greedy, alloc) = max_round1_wins(&g, &plan, &scenario).unwrap();
            // check the witness realizes the claim
            let votes = apply_campaign(&g, &scenario, &alloc).unwrap();
            assert_eq!(elect(&g, &plan, &votes).wins_a, greedy);
            // enumerate every subset of losing districts
            let mut va = [0.0; 3];
            let mut vb = [0.0; 3];
            let mut cap = [0.0; 3];
            for k in 0..g.num_units() {
                let d = plan.assign[k];
                va[d] += alpha * g.vinit_a(k);
                vb[d] += alpha * g.vinit_b(k) + scenario.alloc_b[k];
                cap[d] += (1.0 - alpha) * g.vinit_a(k);
            }
            let base = (0..3).filter(|&d| a_wins(va[d], vb[d])).count();
            let losing: Vec<usize> = (0..3).filter(|&d| !a_wins(va[d], vb[d])).collect();
            let mut brute = base;
            for mask in 0u32..(1 << losing.len()) {
                let mut cost = 0.0;
                let mut ok = true;
                for (b, &d) in losing.iter().enumerate() {
                    if mask & (1 << b) != 0 {
                        let need = vb[d] - va[d];
                        if need > cap[d] + VOTE_EPS {
                            ok = false;
                            break;
                        }
                        cost += need;
                    }
                }
                if ok && cost <= scenario.budget_a + VOTE_EPS {
                    brute = brute.max(base + mask.count_ones() as usize);
                }
            }
            assert_eq!(greedy, brute, "trial {trial}");
        }
    }

    #[test]
    fn greedy_flips_the_cheaper_of_two_margins() {
        // One safe win plus losing margins of 10 and 25; a budget of 30
        // affords only the cheaper flip.
        let g = UnitGraph::new(
            vec![200, 200, 200],
            vec![150.0, 90.0, 75.0],
            vec![50.0, 110.0, 125.0],
            grid_edges(1, 3),
        )
        .unwrap();
        let plan = DistrictPlan { n: 3, assign: vec![0, 1, 2] };
        let scenario = CampaignScenario::new(&g, 0.5, 30.0, 0.0, vec![0.0; 3]).unwrap();
        // margins at alpha 0.5: district 1 loses by 10, district 2 by 25
        let (s1_max, alloc) = max_round1_wins(&g, &plan, &scenario).unwrap();
        assert_eq!(s1_max, 2);
        assert!(alloc.alloc_a[1] > 0.0 && alloc.alloc_a[2] == 0.0);
    }

    #[test]
    fn zero_budget_bound_is_baseline() {
        let (g, plan_i, _, _) = four_unit_fixture();
        let scenario = CampaignScenario::new(&g, 0.5, 0.0, 0.0, vec![0.0; 4]).unwrap();
        let baseline = elect(&g, &plan_i, &VoteData::baseline(&g, 0.5)).wins_a;
        assert_eq!(max_round1_wins(&g, &plan_i, &scenario).unwrap().0, baseline);
    }

    #[test]
    fn ample_budget_flips_everything() {
        let (g, plan_i, _, _) = four_unit_fixture();
        let scenario = CampaignScenario::new(&g, 0.5, 1000.0, 0.0, vec![0.0; 4]).unwrap();
        assert_eq!(max_round1_wins(&g, &plan_i, &scenario).unwrap().0, 2);
    }

    #[test]
    fn round1_wins_nondecreasing_in_budget() {
        let g = generate_grid_instance(3, 4, (300, 400), (0.3, 0.7), 77).unwrap();
        let plan_i = DistrictPlan { n: 2, assign: (0..12).map(|k| (k % 4) / 2).collect() };
        let plan_j = DistrictPlan { n: 2, assign: (0..12).map(|k| k / 6).collect() };
        let window = FairnessWindow::default();
        let mut last = 0usize;
        for budget in [0.0, 50.0, 120.0, 250.0, 500.0] {
            let alloc_b = proportional_allocation(&g, 0.5, 100.0);
            let budget_b = alloc_b.iter().sum::<f64>();
            let scenario =
                CampaignScenario::new(&g, 0.5, budget, budget_b, alloc_b).unwrap();
            let sol = solve_fairness_step(&plan_i, &plan_j, &g, &scenario, &window).unwrap();
            if sol.feasible {
                assert!(sol.round1_wins >= last);
                last = sol.round1_wins;
            }
        }
    }

    /// Random tiny instances: the flip-chain solver must match the
    /// exhaustive oracle exactly. This is the in-module version of the
    /// acceptance check; the acceptance suite runs more of them.
    #[test]
    fn solver_matches_brute_force_on_tiny_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        for trial in 0..60 {
            let (rows, cols, n) = [(2, 3, 2), (2, 4, 2), (3, 3, 3)][trial % 3];
            let g = generate_grid_instance(
                rows,
                cols,
                (50, 150),
                (0.15, 0.85),
                9000 + trial as u64,
            )
            .unwrap();
            let units = rows * cols;
            let plan_i = contiguous_random_plan(&g, units, n, &mut rng);
            let plan_j = contiguous_random_plan(&g, units, n, &mut rng);
            let alpha = rng.gen_range(0.3..0.9);
            let alloc_b = proportional_allocation(&g, alpha, rng.gen_range(0.0..80.0));
            let budget_b = alloc_b.iter().sum::<f64>();
            let scenario = CampaignScenario::new(
                &g,
                alpha,
                rng.gen_range(0.0..150.0),
                budget_b,
                alloc_b,
            )
            .unwrap();
            let center = rng.gen_range(-0.25..0.25);
            let half = rng.gen_range(0.02..0.3);
            let window = FairnessWindow::new(center - half, center + half);
            let fast =
                solve_fairness_step(&plan_i, &plan_j, &g, &scenario, &window).unwrap();
            let slow =
                brute_force_step(&plan_i, &plan_j, &g, &scenario, &window, 3).unwrap();
            assert_eq!(fast.feasible, slow.feasible, "trial {trial}");
            if fast.feasible {
                assert_eq!(fast.round1_wins, slow.round1_wins, "trial {trial}");
                assert!(fast.flip_iterations <= plan_j.n);
            }
        }
    }

    /// Random contiguous plan by BFS-growing districts from random seeds.
    pub(crate) fn contiguous_random_plan(
        g: &UnitGraph,
        units: usize,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> DistrictPlan {
        loop {
            let mut assign = vec![usize::MAX; units];
            let mut frontiers: Vec<Vec<usize>> = Vec::new();
            let mut seeds = Vec::new();
            while seeds.len() < n {
                let s = rng.gen_range(0..units);
                if !seeds.contains(&s) {
                    seeds.push(s);
                }
            }
            for (d, &s) in seeds.iter().enumerate() {
                assign[s] = d;
                frontiers.push(vec![s]);
            }
            let mut remaining = units - n;
            while remaining > 0 {
                let d = rng.gen_range(0..n);
                let mut grew = false;
                let frontier = frontiers[d].clone();
                'grow: for &u in &frontier {
                    for &v in g.neighbors(u) {
                        if assign[v] == usize::MAX {
                            assign[v] = d;
                            frontiers[d].push(v);
                            remaining -= 1;
                            grew = true;
                            break 'grow;
                        }
                    }
                }
                let _ = grew;
                // Dead districts simply stop growing; others absorb the rest.
                if frontiers.iter().enumerate().all(|(d, f)| {
                    f.iter().all(|&u| {
                        g.neighbors(u).iter().all(|&v| assign[v] != usize::MAX)
                    }) || d >= n
                }) && remaining > 0
                {
                    break;
                }
            }
            if assign.iter().all(|&d| d != usize::MAX) {
                return DistrictPlan { n, assign };
            }
        }
    }
}
