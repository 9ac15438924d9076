//! `votemander` command line: instance generation, plan sampling, scoring,
//! the fairness step, both votemandering heuristics, factor sweeps, and
//! data ingestion.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand_chacha::ChaCha8Rng;

use votemander::generate::{
    balanced_seed_plan, generate_clustered_instance, generate_grid_instance, share_field,
};
use votemander::io;
use votemander::local::local_votemander;
use votemander::metrics::{efficiency_gap, morans_i, FairnessWindow};
use votemander::model::{cut_edges, elect, PlanConstraints, VoteData};
use votemander::recom::{sample_pool, ChainConfig};
use votemander::step::{max_round1_wins, piece_decomposition, solve_fairness_step};
use votemander::votemander::votemander;
use votemander_cli::{four_stage_table, run_sweep, rows_to_csv, ScenarioFile, SweepConfig};

#[derive(Parser)]
#[command(name = "votemander", version, about = "Strategic campaigning against redistricting fairness tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct WindowArg {
    /// Fairness window as `lo,hi` on the signed efficiency gap.
    #[arg(long, value_parser = parse_window, default_value = "-0.08,0.08", allow_hyphen_values = true)]
    window: (f64, f64),
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected lo,hi".into());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
    if lo > hi {
        return Err("window lower bound exceeds upper bound".into());
    }
    Ok((lo, hi))
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grid instance (optionally clustered to a target
    /// Moran's I) and write the graph JSON.
    Generate {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 350)]
        pop_min: u64,
        #[arg(long, default_value_t = 400)]
        pop_max: u64,
        #[arg(long, default_value_t = 0.2)]
        share_min: f64,
        #[arg(long, default_value_t = 0.8)]
        share_max: f64,
        #[arg(long)]
        seed: u64,
        /// Anneal unit shares to this spatial autocorrelation.
        #[arg(long)]
        target_morans_i: Option<f64>,
        /// Also write a balanced block seed plan with this many districts.
        #[arg(long)]
        districts: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        pop_dev: f64,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the seed plan when `--districts` is given.
        #[arg(long)]
        plan_out: Option<PathBuf>,
    },
    /// Run the recombination chain and persist a pool as JSON lines.
    Sample {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        interval: usize,
        #[arg(long)]
        cut_bound: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        pop_dev: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a plan: wins, efficiency gap, cut edges, Moran's I.
    Score {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Turnout for the reported totals; wins and EG are invariant to it.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
    },
    /// Solve the fairness step for a fixed target plan.
    FairnessStep {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        initial: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        window: WindowArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick the best target plan from a pool (the global heuristic).
    Votemander {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        initial: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        window: WindowArg,
        #[arg(long, default_value_t = 1)]
        weight: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Least-change votemandering via pairwise perturbations and matching.
    Local {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        initial: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        window: WindowArg,
        #[arg(long, default_value_t = 24)]
        submap_pool_size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        pop_dev: f64,
        #[arg(long)]
        cut_bound: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a declarative factor sweep and write the results CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config file's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a graph (and optional plan) file, echoing the normal form.
    Ingest {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

fn load_scenario(
    path: &PathBuf,
    graph: &votemander::model::UnitGraph,
) -> anyhow::Result<votemander::model::CampaignScenario> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
    let file: ScenarioFile = serde_json::from_str(&raw)?;
    file.build(graph)
}

fn emit(out: Option<&PathBuf>, json: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate {
            rows,
            cols,
            pop_min,
            pop_max,
            share_min,
            share_max,
            seed,
            target_morans_i,
            districts,
            pop_dev,
            out,
            plan_out,
        } => {
            let graph = match target_morans_i {
                Some(target) => generate_clustered_instance(rows, cols, target, seed)?,
                None => generate_grid_instance(
                    rows,
                    cols,
                    (pop_min, pop_max),
                    (share_min, share_max),
                    seed,
                )?,
            };
            io::write_graph(&out, &graph)?;
            if let Some(n) = districts {
                let constraints = PlanConstraints::new(pop_dev, None);
                let plan = balanced_seed_plan(&graph, rows, cols, n, &constraints)?;
                let plan_path = plan_out
                    .unwrap_or_else(|| out.with_extension("plan.json"));
                io::write_plan(&plan_path, &plan)?;
            }
            Ok(())
        }
        Command::Sample { graph, plan, steps, seed, interval, cut_bound, pop_dev, out } => {
            let (g, _) = io::ingest_state(&graph, None)?;
            let seed_plan = io::read_plan(&plan, &g)?;
            let config = ChainConfig {
                steps,
                seed,
                constraints: PlanConstraints::new(pop_dev, cut_bound),
                sample_interval: interval,
            };
            let pool = sample_pool(&g, &seed_plan, &config)?;
            io::write_pool_file(&out, &pool)?;
            eprintln!("pool: {} plans", pool.len());
            Ok(())
        }
        Command::Score { graph, plan, alpha } => {
            let (g, _) = io::ingest_state(&graph, None)?;
            let p = io::read_plan(&plan, &g)?;
            let votes = VoteData::baseline(&g, alpha);
            let outcome = elect(&g, &p, &votes);
            let ledger = efficiency_gap(&outcome)?;
            let shares = share_field(&g);
            let report = serde_json::json!({
                "wins_a": outcome.wins_a,
                "wins_b": outcome.wins_b(),
                "eg": ledger.eg,
                "cut_edges": cut_edges(&g, &p),
                "morans_i_shares": morans_i(&g, &shares).ok(),
                "per_district": ledger.per_district,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::FairnessStep { graph, initial, target, scenario, window, out } => {
            let (g, _) = io::ingest_state(&graph, None)?;
            let plan_i = io::read_plan(&initial, &g)?;
            let plan_j = io::read_plan(&target, &g)?;
            let scenario = load_scenario(&scenario, &g)?;
            let w = FairnessWindow::new(window.window.0, window.window.1);
            let sol = solve_fairness_step(&plan_i, &plan_j, &g, &scenario, &w)?;
            // Per-piece audit rows alongside the raw solution.
            let pieces = piece_decomposition(&plan_i, &plan_j, &g, &scenario)?;
            let audit: Vec<serde_json::Value> = pieces
                .iter()
                .zip(&sol.piece_spend)
                .map(|(p, &spend)| {
                    serde_json::json!({
                        "round1": p.round1,
                        "round2": p.round2,
                        "units": p.units,
                        "capacity": p.capacity,
                        "spend": spend,
                    })
                })
                .collect();
            let payload = serde_json::json!({ "solution": sol, "pieces": audit });
            emit(out.as_ref(), &serde_json::to_string_pretty(&payload)?)
        }
        Command::Votemander { graph, initial, pool, scenario, window, weight, out } => {
            let (g, _) = io::ingest_state(&graph, None)?;
            let plan = io::read_plan(&initial, &g)?;
            let entries = io::read_pool_file(&pool, &g)?;
            let scenario = load_scenario(&scenario, &g)?;
            let w = FairnessWindow::new(window.window.0, window.window.1);
            let sol = votemander(&g, &plan, &entries, &scenario, &w, weight)?;
            eprint!("{}", four_stage_table(&sol));
            emit(out.as_ref(), &serde_json::to_string_pretty(&sol)?)
        }
        Command::Local {
            graph,
            initial,
            scenario,
            window,
            submap_pool_size,
            seed,
            pop_dev,
            cut_bound,
            out,
        } => {
            let (g, _) = io::ingest_state(&graph, None)?;
            let plan = io::read_plan(&initial, &g)?;
            let scenario = load_scenario(&scenario, &g)?;
            let w = FairnessWindow::new(window.window.0, window.window.1);
            let constraints = PlanConstraints::new(pop_dev, cut_bound);
            // The pair pricing assumes A cannot simply buy every district.
            let (s1_max, _) = max_round1_wins(&g, &plan, &scenario)?;
            if s1_max == plan.n {
                eprintln!(
                    "warning: the budget suffices to win all {} districts in round 1; \
                     least-change pricing assumes it does not",
                    plan.n
                );
            }
            use rand_chacha::rand_core::SeedableRng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (district_graph, edges, local) = local_votemander(
                &g,
                &plan,
                &scenario,
                &w,
                &constraints,
                submap_pool_size,
                &mut rng,
            )?;
            eprint!("{}", four_stage_table(&local.solution));
            let payload = serde_json::json!({
                "district_graph": district_graph,
                "edges": edges,
                "local": local,
            });
            emit(out.as_ref(), &serde_json::to_string_pretty(&payload)?)
        }
        Command::Sweep { config, out } => {
            let raw = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {config:?}"))?;
            let config: SweepConfig = serde_json::from_str(&raw)?;
            let out = out
                .or_else(|| config.output.clone())
                .ok_or_else(|| anyhow::anyhow!("no output path: pass --out or set \"output\" in the config"))?;
            let rows = run_sweep(&config);
            let failures = rows.iter().filter(|r| r.error.is_some()).count();
            std::fs::write(&out, rows_to_csv(&rows))?;
            eprintln!("{} rows ({failures} failed)", rows.len());
            Ok(())
        }
        Command::Ingest { graph, plan } => {
            let (g, p) = io::ingest_state(&graph, plan.as_deref())?;
            let report = serde_json::json!({
                "units": g.num_units(),
                "edges": g.edges().len(),
                "total_pop": g.total_pop(),
                "plan": p.map(|p| serde_json::json!({
                    "n": p.n,
                    "cut_edges": cut_edges(&g, &p),
                })),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}
