//! File formats: graph and plan JSON, and JSON-lines pool persistence.
//!
//! A graph file is either explicit units-and-edges or a compact grid
//! generator form:
//!
//! ```json
//! {"units": [{"id": 0, "pop": 380, "vA": 190.0, "vB": 190.0}], "edges": [[0, 1]]}
//! {"rows": 20, "cols": 20, "seed": 7}
//! ```
//!
//! Pools stream one entry per line so large pools never need to be held in
//! memory wholesale.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generate::generate_grid_instance;
use crate::model::{DistrictPlan, UnitGraph};
use crate::recom::PoolEntry;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unit ids must cover 0..{expected}; id {id} {problem}")]
    BadUnitIds { expected: usize, id: usize, problem: &'static str },
    #[error("graph invalid: {0}")]
    Model(#[from] crate::model::ModelError),
    #[error("plan invalid: {0}")]
    Plan(#[from] crate::model::PlanError),
    #[error("grid generator form invalid: {0}")]
    Generate(#[from] crate::generate::GenerateError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: usize,
    pub pop: u64,
    #[serde(rename = "vA")]
    pub v_a: f64,
    #[serde(rename = "vB")]
    pub v_b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub units: Vec<UnitRecord>,
    pub edges: Vec<(usize, usize)>,
}

/// Compact generator form accepted wherever a graph file is.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pop_range")]
    pub pop_range: (u64, u64),
    #[serde(default = "default_share_range")]
    pub share_range: (f64, f64),
}

fn default_pop_range() -> (u64, u64) {
    (350, 400)
}

fn default_share_range() -> (f64, f64) {
    (0.2, 0.8)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphInput {
    Units(GraphFile),
    Grid(GridSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanFile {
    pub n: usize,
    pub assign: Vec<usize>,
}

/// Converts a graph to its explicit file form, units ascending.
pub fn graph_to_file(graph: &UnitGraph) -> GraphFile {
    GraphFile {
        units: (0..graph.num_units())
            .map(|k| UnitRecord {
                id: k,
                pop: graph.pop(k),
                v_a: graph.vinit_a(k),
                v_b: graph.vinit_b(k),
            })
            .collect(),
        edges: graph.edges().to_vec(),
    }
}

/// Validates and builds a graph from either file form. Unit ids may appear
/// in any order but must cover `0..len` exactly.
pub fn graph_from_input(input: &GraphInput) -> Result<UnitGraph, IngestError> {
    match input {
        GraphInput::Grid(spec) => Ok(generate_grid_instance(
            spec.rows,
            spec.cols,
            spec.pop_range,
            spec.share_range,
            spec.seed,
        )?),
        GraphInput::Units(file) => {
            let n = file.units.len();
            let mut pops = vec![None; n];
            let mut va = vec![0.0; n];
            let mut vb = vec![0.0; n];
            for u in &file.units {
                if u.id >= n {
                    return Err(IngestError::BadUnitIds {
                        expected: n,
                        id: u.id,
                        problem: "out of range",
                    });
                }
                if pops[u.id].is_some() {
                    return Err(IngestError::BadUnitIds {
                        expected: n,
                        id: u.id,
                        problem: "duplicated",
                    });
                }
                pops[u.id] = Some(u.pop);
                va[u.id] = u.v_a;
                vb[u.id] = u.v_b;
            }
            let pops: Vec<u64> = pops
                .into_iter()
                .enumerate()
                .map(|(id, p)| {
                    p.ok_or(IngestError::BadUnitIds { expected: n, id, problem: "missing" })
                })
                .collect::<Result<_, _>>()?;
            Ok(UnitGraph::new(pops, va, vb, file.edges.clone())?)
        }
    }
}

/// Reads and validates a graph file, plus an optional plan checked against
/// the graph. Every failure names the offending unit or district.
pub fn ingest_state(
    graph_path: &Path,
    plan_path: Option<&Path>,
) -> Result<(UnitGraph, Option<DistrictPlan>), IngestError> {
    let raw = std::fs::read_to_string(graph_path)?;
    let input: GraphInput = serde_json::from_str(&raw)?;
    let graph = graph_from_input(&input)?;
    let plan = match plan_path {
        None => None,
        Some(path) => {
            let raw = std::fs::read_to_string(path)?;
            let file: PlanFile = serde_json::from_str(&raw)?;
            let plan = DistrictPlan { n: file.n, assign: file.assign };
            plan.check_structure(&graph)?;
            Some(plan)
        }
    };
    Ok((graph, plan))
}

pub fn write_graph(path: &Path, graph: &UnitGraph) -> Result<(), IngestError> {
    let file = graph_to_file(graph);
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn write_plan(path: &Path, plan: &DistrictPlan) -> Result<(), IngestError> {
    let file = PlanFile { n: plan.n, assign: plan.assign.clone() };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_plan(path: &Path, graph: &UnitGraph) -> Result<DistrictPlan, IngestError> {
    let raw = std::fs::read_to_string(path)?;
    let file: PlanFile = serde_json::from_str(&raw)?;
    let plan = DistrictPlan { n: file.n, assign: file.assign };
    plan.check_structure(graph)?;
    Ok(plan)
}

/// Writes a pool as JSON lines, one entry per line.
pub fn write_pool<W: Write>(mut out: W, pool: &[PoolEntry]) -> Result<(), IngestError> {
    for entry in pool {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Streams a pool back in, validating each plan's structure lazily.
pub fn read_pool<R: BufRead>(
    input: R,
    graph: &UnitGraph,
) -> Result<Vec<PoolEntry>, IngestError> {
    let mut pool = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: PoolEntry = serde_json::from_str(&line)?;
        entry.plan.check_structure(graph)?;
        pool.push(entry);
    }
    Ok(pool)
}

pub fn write_pool_file(path: &Path, pool: &[PoolEntry]) -> Result<(), IngestError> {
    let file = std::fs::File::create(path)?;
    write_pool(std::io::BufWriter::new(file), pool)
}

pub fn read_pool_file(path: &Path, graph: &UnitGraph) -> Result<Vec<PoolEntry>, IngestError> {
    let file = std::fs::File::open(path)?;
    read_pool(std::io::BufReader::new(file), graph)
}
