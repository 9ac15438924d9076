//! Factor sweeps over synthetic instances. Each study varies one factor,
//! generates seeded instances and pools per the study's design, runs the
//! pool-scan heuristic, and records per-run rows.
//!
//! Pool sharing follows the study design: budget and turnout sweeps reuse
//! one pool per replicate across all levels (so per-instance monotonicity
//! is exact); the compactness study samples a separate pool per cut-edge
//! bound; the clustering study generates a fresh instance per level.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use votemander::generate::{
    balanced_seed_plan, generate_clustered_instance, generate_grid_instance,
    proportional_allocation,
};
use votemander::metrics::FairnessWindow;
use votemander::model::{CampaignScenario, DistrictPlan, PlanConstraints, UnitGraph};
use votemander::recom::{sample_pool, ChainConfig, PoolEntry};
use votemander::votemander::votemander;

use crate::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    BudgetA,
    BudgetB,
    Alpha,
    CutBound,
    MoransI,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::BudgetA => "budget_a",
            Factor::BudgetB => "budget_b",
            Factor::Alpha => "alpha",
            Factor::CutBound => "cut_bound",
            Factor::MoransI => "morans_i",
        }
    }
}

/// The held-fixed part of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepBase {
    pub rows: usize,
    pub cols: usize,
    pub districts: usize,
    pub alpha: f64,
    pub budget_a: f64,
    pub budget_b: f64,
    #[serde(default = "default_pop_deviation")]
    pub pop_deviation: f64,
    #[serde(default)]
    pub cut_bound: Option<usize>,
    #[serde(default = "default_pool_plans")]
    pub pool_plans: usize,
    #[serde(default = "default_sample_interval")]
    pub sample_interval: usize,
    #[serde(default = "default_window")]
    pub window: (f64, f64),
    #[serde(default = "default_weight")]
    pub weight: usize,
    #[serde(default = "default_pop_range")]
    pub pop_range: (u64, u64),
    #[serde(default = "default_share_range")]
    pub share_range: (f64, f64),
}

fn default_pop_deviation() -> f64 {
    0.01
}
fn default_pool_plans() -> usize {
    200
}
fn default_sample_interval() -> usize {
    4
}
fn default_window() -> (f64, f64) {
    (-0.08, 0.08)
}
fn default_weight() -> usize {
    1
}
fn default_pop_range() -> (u64, u64) {
    (350, 400)
}
fn default_share_range() -> (f64, f64) {
    (0.2, 0.8)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub factor: Factor,
    pub levels: Vec<f64>,
    pub replicates: usize,
    pub base: SweepBase,
    pub master_seed: u64,
    /// Default CSV destination; a CLI `--out` flag overrides it.
    #[serde(default)]
    pub output: Option<std::path::PathBuf>,
}

/// One level x replicate outcome. Failed runs carry NaN gaps and zero wins
/// so a sweep never aborts half way.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub factor: &'static str,
    pub level: f64,
    pub replicate: usize,
    pub seed: u64,
    pub wins_initial: usize,
    pub wins_campaigned: usize,
    pub wins_votemandered: usize,
    pub wins_target: usize,
    pub eg_initial: f64,
    pub eg_votemandered: f64,
    pub bonus: i64,
    pub objective: usize,
    pub runtime_ms: u128,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(factor: &'static str, level: f64, replicate: usize, seed: u64, err: String) -> Self {
        SweepRow {
            factor,
            level,
            replicate,
            seed,
            wins_initial: 0,
            wins_campaigned: 0,
            wins_votemandered: 0,
            wins_target: 0,
            eg_initial: f64::NAN,
            eg_votemandered: f64::NAN,
            bonus: 0,
            objective: 0,
            runtime_ms: 0,
            error: Some(err),
        }
    }
}

struct Prepared {
    graph: UnitGraph,
    seed_plan: DistrictPlan,
    pool: Vec<PoolEntry>,
}

fn prepare(
    base: &SweepBase,
    graph_seed: u64,
    chain_seed: u64,
    cut_bound: Option<usize>,
    morans_target: Option<f64>,
) -> Result<Prepared, String> {
    let graph = match morans_target {
        Some(target) => generate_clustered_instance(base.rows, base.cols, target, graph_seed)
            .map_err(|e| e.to_string())?,
        None => generate_grid_instance(
            base.rows,
            base.cols,
            base.pop_range,
            base.share_range,
            graph_seed,
        )
        .map_err(|e| e.to_string())?,
    };
    let constraints = PlanConstraints::new(base.pop_deviation, cut_bound);
    let seed_plan =
        balanced_seed_plan(&graph, base.rows, base.cols, base.districts, &constraints)
            .map_err(|e| e.to_string())?;
    let config = ChainConfig {
        steps: base.pool_plans * base.sample_interval * 3,
        seed: chain_seed,
        constraints,
        sample_interval: base.sample_interval,
    };
    let mut pool = sample_pool(&graph, &seed_plan, &config).map_err(|e| e.to_string())?;
    pool.truncate(base.pool_plans);
    Ok(Prepared { graph, seed_plan, pool })
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    factor: &'static str,
    level: f64,
    replicate: usize,
    seed: u64,
    prepared: &Prepared,
    scenario: &CampaignScenario,
    window: &FairnessWindow,
    weight: usize,
) -> SweepRow {
    let start = Instant::now();
    match votemander(
        &prepared.graph,
        &prepared.seed_plan,
        &prepared.pool,
        scenario,
        window,
        weight,
    ) {
        Ok(sol) => SweepRow {
            factor,
            level,
            replicate,
            seed,
            wins_initial: sol.initial.wins_a,
            wins_campaigned: sol.campaigned.wins_a,
            wins_votemandered: sol.votemandered.wins_a,
            wins_target: sol.target.wins_a,
            eg_initial: sol.initial.eg,
            eg_votemandered: sol.votemandered.eg,
            bonus: sol.bonus,
            objective: sol.objective,
            runtime_ms: start.elapsed().as_millis(),
            error: None,
        },
        Err(e) => SweepRow::failed(factor, level, replicate, seed, e.to_string()),
    }
}

/// Runs the whole sweep; replicates execute in parallel with derived seeds,
/// and the returned rows are ordered by (level, replicate) regardless of
/// scheduling.
pub fn run_sweep(config: &SweepConfig) -> Vec<SweepRow> {
    assert!(config.replicates >= 1, "at least one replicate");
    assert!(!config.levels.is_empty(), "levels must be nonempty");
    let base = &config.base;
    let factor = config.factor.name();
    let window = FairnessWindow::new(base.window.0, base.window.1);

    let mut rows: Vec<Vec<SweepRow>> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| {
            let graph_seed = derive_seed(config.master_seed, 1, 0, rep as u64);
            let mut out = Vec::with_capacity(config.levels.len());
            match config.factor {
                // One instance and one pool per replicate, shared across
                // all levels of the varied scenario knob.
                Factor::BudgetA | Factor::BudgetB | Factor::Alpha => {
                    let chain_seed = derive_seed(config.master_seed, 2, 0, rep as u64);
                    let prepared =
                        match prepare(base, graph_seed, chain_seed, base.cut_bound, None) {
                            Ok(p) => p,
                            Err(e) => {
                                for (li, &level) in config.levels.iter().enumerate() {
                                    let seed =
                                        derive_seed(config.master_seed, 3, li as u64, rep as u64);
                                    out.push(SweepRow::failed(
                                        factor,
                                        level,
                                        rep,
                                        seed,
                                        e.clone(),
                                    ));
                                }
                                return out;
                            }
                        };
                    for (li, &level) in config.levels.iter().enumerate() {
                        let seed = derive_seed(config.master_seed, 3, li as u64, rep as u64);
                        let (alpha, budget_a, budget_b) = match config.factor {
                            Factor::BudgetA => (base.alpha, level, base.budget_b),
                            Factor::BudgetB => (base.alpha, base.budget_a, level),
                            Factor::Alpha => (level, base.budget_a, base.budget_b),
                            _ => unreachable!(),
                        };
                        let alloc_b =
                            proportional_allocation(&prepared.graph, alpha, budget_b);
                        match CampaignScenario::new(
                            &prepared.graph,
                            alpha,
                            budget_a,
                            budget_b,
                            alloc_b,
                        ) {
                            Ok(scenario) => out.push(run_one(
                                factor,
                                level,
                                rep,
                                seed,
                                &prepared,
                                &scenario,
                                &window,
                                base.weight,
                            )),
                            Err(e) => out.push(SweepRow::failed(
                                factor,
                                level,
                                rep,
                                seed,
                                e.to_string(),
                            )),
                        }
                    }
                }
                // Separate pool per cut-edge bound on a shared instance.
                Factor::CutBound => {
                    for (li, &level) in config.levels.iter().enumerate() {
                        let seed = derive_seed(config.master_seed, 3, li as u64, rep as u64);
                        let chain_seed =
                            derive_seed(config.master_seed, 2, li as u64, rep as u64);
                        let bound = Some(level.round() as usize);
                        let row = match prepare(base, graph_seed, chain_seed, bound, None) {
                            Ok(prepared) => {
                                let alloc_b = proportional_allocation(
                                    &prepared.graph,
                                    base.alpha,
                                    base.budget_b,
                                );
                                match CampaignScenario::new(
                                    &prepared.graph,
                                    base.alpha,
                                    base.budget_a,
                                    base.budget_b,
                                    alloc_b,
                                ) {
                                    Ok(scenario) => run_one(
                                        factor,
                                        level,
                                        rep,
                                        seed,
                                        &prepared,
                                        &scenario,
                                        &window,
                                        base.weight,
                                    ),
                                    Err(e) => SweepRow::failed(
                                        factor,
                                        level,
                                        rep,
                                        seed,
                                        e.to_string(),
                                    ),
                                }
                            }
                            Err(e) => SweepRow::failed(factor, level, rep, seed, e),
                        };
                        out.push(row);
                    }
                }
                // Clustered instance per target level. The annealer starts
                // from the same replicate-level base instance for every
                // bin, so populations and the share multiset are matched
                // across bins and only the spatial arrangement varies. The
                // chain seed is also shared: pools depend only on topology
                // and populations, so every bin scans the same plans.
                Factor::MoransI => {
                    for (li, &level) in config.levels.iter().enumerate() {
                        let seed = derive_seed(config.master_seed, 3, li as u64, rep as u64);
                        let gseed = graph_seed;
                        let chain_seed = derive_seed(config.master_seed, 2, 0, rep as u64);
                        let row = match prepare(
                            base,
                            gseed,
                            chain_seed,
                            base.cut_bound,
                            Some(level),
                        ) {
                            Ok(prepared) => {
                                let alloc_b = proportional_allocation(
                                    &prepared.graph,
                                    base.alpha,
                                    base.budget_b,
                                );
                                match CampaignScenario::new(
                                    &prepared.graph,
                                    base.alpha,
                                    base.budget_a,
                                    base.budget_b,
                                    alloc_b,
                                ) {
                                    Ok(scenario) => run_one(
                                        factor,
                                        level,
                                        rep,
                                        seed,
                                        &prepared,
                                        &scenario,
                                        &window,
                                        base.weight,
                                    ),
                                    Err(e) => SweepRow::failed(
                                        factor,
                                        level,
                                        rep,
                                        seed,
                                        e.to_string(),
                                    ),
                                }
                            }
                            Err(e) => SweepRow::failed(factor, level, rep, seed, e),
                        };
                        out.push(row);
                    }
                }
            }
            out
        })
        .collect();

    // Reorder to (level, replicate) for stable output.
    let mut flat: Vec<SweepRow> = Vec::with_capacity(config.levels.len() * config.replicates);
    for li in 0..config.levels.len() {
        for rep_rows in rows.iter_mut() {
            flat.push(rep_rows[li].clone());
        }
    }
    flat
}

/// Fixed-format CSV per the result schema. The runtime column is measured
/// wall clock and is the one column that varies between identical runs.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "factor,level,replicate,seed,wins_initial,wins_campaigned,wins_votemandered,\
         wins_target,eg_initial,eg_votemandered,bonus,runtime_ms\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{},{}\n",
            r.factor,
            r.level,
            r.replicate,
            r.seed,
            r.wins_initial,
            r.wins_campaigned,
            r.wins_votemandered,
            r.wins_target,
            r.eg_initial,
            r.eg_votemandered,
            r.bonus,
            r.runtime_ms
        ));
    }
    out
}
