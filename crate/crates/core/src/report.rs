//! Plain-text rendering of matrices, plans, and run summaries.

use crate::grouping::GroupingPlan;
use crate::run::TrainSummary;
use crate::transference::{NormalizedMatrix, SquareMatrix};

fn render_table(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let columns = header.len();
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let push_row = |cells: &[String], out: &mut String| {
        for (i, (cell, width)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(cell);
            out.extend(std::iter::repeat(' ').take(width - cell.len()));
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    push_row(&header, &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    push_row(&rule, &mut out);
    for row in &rows {
        debug_assert_eq!(row.len(), columns);
        push_row(row, &mut out);
    }
    out
}

/// Aligned table of an `m x m` score matrix, rows = source tasks.
pub fn render_matrix(matrix: &SquareMatrix, title: &str) -> String {
    let m = matrix.size();
    let mut header = vec![format!("{title} source\\target")];
    header.extend((0..m).map(|a| format!("task_{a}")));
    let rows = (0..m)
        .map(|b| {
            let mut row = vec![format!("task_{b}")];
            row.extend((0..m).map(|a| format!("{:+.6}", matrix.get(b, a))));
            row
        })
        .collect();
    render_table(header, rows)
}

/// Normalized matrix with per-column validity flags.
pub fn render_normalized(normalized: &NormalizedMatrix) -> String {
    let mut out = render_matrix(&normalized.scores, "normalized");
    if normalized.valid.iter().any(|&v| !v) {
        let invalid: Vec<String> = normalized
            .valid
            .iter()
            .enumerate()
            .filter(|(_, &v)| !v)
            .map(|(task, _)| format!("task_{task}"))
            .collect();
        out.push_str(&format!("invalid columns: {}\n", invalid.join(", ")));
    }
    out
}

/// One-row plan table in the budget/groups layout, with `*` marking the
/// task's serving group.
pub fn render_plan(plan: &GroupingPlan) -> String {
    let mut header = vec!["budget".to_string()];
    header.extend((0..plan.groups.len()).map(|g| format!("group {}", g + 1)));
    header.push("objective".into());
    let mut row = vec![plan.budget.to_string()];
    for (g, group) in plan.groups.iter().enumerate() {
        let members: Vec<String> = group
            .iter()
            .map(|&task| {
                if plan.serving[task] == g {
                    format!("t{task}*")
                } else {
                    format!("t{task}")
                }
            })
            .collect();
        row.push(format!("{{{}}}", members.join(", ")));
    }
    row.push(format!("{:+.6}", plan.objective));
    let mut out = render_table(header, vec![row]);
    out.push_str("* task served from this group\n");
    out
}

/// Key-value rendering of a run summary.
pub fn render_run_summary(summary: &TrainSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!("mode:             {:?}\n", summary.mode));
    out.push_str(&format!("dataset:          {}\n", summary.dataset_kind));
    out.push_str(&format!("tasks:            {}\n", summary.tasks));
    out.push_str(&format!("seed:             {}\n", summary.seed));
    out.push_str(&format!("learning rate:    {}\n", summary.learning_rate));
    out.push_str(&format!(
        "steps:            {} ({} epochs x {} steps)\n",
        summary.total_steps, summary.epochs, summary.steps_per_epoch
    ));
    let losses: Vec<String> =
        summary.final_epoch_losses.iter().map(|l| format!("{l:.6}")).collect();
    out.push_str(&format!("final losses:     [{}]\n", losses.join(", ")));
    out.push_str("chosen candidates:\n");
    for (id, count) in &summary.chosen_histogram {
        out.push_str(&format!("  {id}: {count}\n"));
    }
    out.push_str(&format!("config sha256:    {}\n", summary.config_sha256));
    out
}
