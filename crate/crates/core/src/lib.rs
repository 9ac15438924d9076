//! Votemandering: strategic GOTV campaigning paired with redistricting so a
//! gerrymandered plan passes an efficiency-gap fairness test.
//!
//! The crate models a state as a unit adjacency graph with per-party
//! affiliation counts, samples feasible district plans by spanning-tree
//! recombination, optimizes party A's campaign allocation per candidate
//! target plan (the fairness step), and scores the resulting two-round seat
//! bonus. A least-change variant works through pairwise boundary
//! perturbations and a matching with knapsack constraints.

pub mod generate;
pub mod io;
pub mod local;
pub mod lp;
pub mod metrics;
pub mod model;
pub mod recom;
pub mod step;
pub mod votemander;

pub use metrics::{efficiency_gap, FairnessWindow, WastedVoteLedger};
pub use model::{
    apply_campaign, cut_edges, elect, validate_plan, Allocation, CampaignScenario, DistrictPlan,
    ElectionOutcome, PlanConstraints, UnitGraph, VoteData,
};
