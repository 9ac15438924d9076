//! Experiment orchestration: declarative sweep configs, deterministic
//! seeded runs over levels and replicates, CSV export, and the four-stage
//! summary table.

pub mod sweep;
pub mod table;

pub use sweep::{run_sweep, rows_to_csv, Factor, SweepBase, SweepConfig, SweepRow};
pub use table::four_stage_table;

use serde::{Deserialize, Serialize};

use votemander::generate::proportional_allocation;
use votemander::model::{CampaignScenario, UnitGraph};

/// Scenario file: alpha, both budgets, and B's allocation rule. B either
/// follows the population-proportional default or a fixed per-unit vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub alpha: f64,
    #[serde(rename = "budgetA")]
    pub budget_a: f64,
    #[serde(rename = "budgetB")]
    pub budget_b: f64,
    #[serde(rename = "allocB", default)]
    pub alloc_b: AllocRule,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AllocRule {
    Named(String),
    Fixed(Vec<f64>),
}

impl Default for AllocRule {
    fn default() -> Self {
        AllocRule::Named("proportional".into())
    }
}

impl ScenarioFile {
    pub fn build(&self, graph: &UnitGraph) -> anyhow::Result<CampaignScenario> {
        let alloc_b = match &self.alloc_b {
            AllocRule::Named(name) if name == "proportional" => {
                proportional_allocation(graph, self.alpha, self.budget_b)
            }
            AllocRule::Named(name) => {
                anyhow::bail!("unknown allocB rule {name:?}; use \"proportional\" or a vector")
            }
            AllocRule::Fixed(v) => v.clone(),
        };
        Ok(CampaignScenario::new(graph, self.alpha, self.budget_a, self.budget_b, alloc_b)?)
    }
}

/// Splitmix-style seed derivation so every (stream, level, replicate) cell
/// gets an independent, reproducible seed.
pub fn derive_seed(master: u64, stream: u64, level: u64, replicate: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(level.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(replicate.wrapping_mul(0x94d0_49bb_1331_11eb));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
