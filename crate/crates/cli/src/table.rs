//! The four-stage summary table.

use votemander::votemander::VotemanderSolution;

/// Renders the stage-by-stage wins and efficiency gaps.
pub fn four_stage_table(sol: &VotemanderSolution) -> String {
    let rows = [
        ("Initial Map", &sol.initial),
        ("Campaigned Map", &sol.campaigned),
        ("Votemandered Map", &sol.votemandered),
        ("Target Map", &sol.target),
    ];
    let mut out = String::new();
    out.push_str(&format!("{:<18} {:>14} {:>15}\n", "", "Number of Wins", "Efficiency Gap"));
    for (name, stage) in rows {
        out.push_str(&format!("{:<18} {:>14} {:>15.4}\n", name, stage.wins_a, stage.eg));
    }
    out.push_str(&format!(
        "objective {} | bonus {} (parts {:+}, {:+}, {:+})\n",
        sol.objective, sol.bonus, sol.bonus_parts[0], sol.bonus_parts[1], sol.bonus_parts[2]
    ));
    out
}
