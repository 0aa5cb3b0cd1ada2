//! Metric tables, the forgetting report and CSV emission.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;

/// Accuracy cells of one subtask row.
#[derive(Clone, Debug, Default)]
pub struct SubtaskMetrics {
    pub subtask: usize,
    /// Validation accuracy measured right after this subtask's training.
    pub val_after: Option<f64>,
    /// Test accuracy measured after training on all subtasks.
    pub test_after: Option<f64>,
}

/// One row per subtask. The mean row of the CSV output is derived.
#[derive(Clone, Debug)]
pub struct MetricsTable {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub rows: Vec<SubtaskMetrics>,
}

impl MetricsTable {
    pub fn new(model: String, dataset: String, seed: u64, subtasks: usize) -> Self {
        MetricsTable {
            model,
            dataset,
            seed,
            rows: (0..subtasks)
                .map(|subtask| SubtaskMetrics {
                    subtask,
                    ..SubtaskMetrics::default()
                })
                .collect(),
        }
    }

    pub fn is_complete(&self) -> bool {
        !self.rows.is_empty()
            && self
                .rows
                .iter()
                .all(|r| r.val_after.is_some() && r.test_after.is_some())
    }

    pub fn mean_val(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.val_after))
    }

    pub fn mean_test(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.test_after))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

/// Per-subtask drop from validation-after-training to test-after-all.
#[derive(Clone, Debug)]
pub struct ForgettingReport {
    pub per_subtask: Vec<f64>,
    pub mean: f64,
}

/// forgetting_s = val_after_s − test_after_all_s, plus the mean over
/// subtasks. Requires a complete table.
pub fn forgetting_report(table: &MetricsTable) -> Result<ForgettingReport> {
    if !table.is_complete() {
        return Err(Error::validation(
            "forgetting report requires a complete metrics table",
        ));
    }
    let per_subtask: Vec<f64> = table
        .rows
        .iter()
        .map(|r| r.val_after.unwrap() - r.test_after.unwrap())
        .collect();
    let mean = per_subtask.iter().sum::<f64>() / per_subtask.len() as f64;
    Ok(ForgettingReport { per_subtask, mean })
}

fn fmt_acc(v: f64) -> String {
    format!("{v:.6}")
}

/// Renders `runs.csv`: one row per subtask plus a mean row.
pub fn render_runs_csv(table: &MetricsTable) -> Result<String> {
    let report = forgetting_report(table)?;
    let mut out = String::from("model,dataset,subtask,val_after,test_after,forgetting,seed\n");
    for (row, forgetting) in table.rows.iter().zip(&report.per_subtask) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            table.model,
            table.dataset,
            row.subtask + 1,
            fmt_acc(row.val_after.unwrap()),
            fmt_acc(row.test_after.unwrap()),
            fmt_acc(*forgetting),
            table.seed
        ));
    }
    out.push_str(&format!(
        "{},{},mean,{},{},{},{}\n",
        table.model,
        table.dataset,
        fmt_acc(table.mean_val().unwrap()),
        fmt_acc(table.mean_test().unwrap()),
        fmt_acc(report.mean),
        table.seed
    ));
    Ok(out)
}

/// Renders `pairedplot.csv`: long format with one row per (subtask, point),
/// where point is the left (val_after) or right (test_after) end of a paired
/// line.
pub fn render_pairedplot_csv(table: &MetricsTable) -> Result<String> {
    if !table.is_complete() {
        return Err(Error::validation(
            "paired plot requires a complete metrics table",
        ));
    }
    let mut out = String::from("model,dataset,subtask,seed,point,accuracy\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},val_after,{}\n",
            table.model,
            table.dataset,
            row.subtask + 1,
            table.seed,
            fmt_acc(row.val_after.unwrap())
        ));
        out.push_str(&format!(
            "{},{},{},{},test_after,{}\n",
            table.model,
            table.dataset,
            row.subtask + 1,
            table.seed,
            fmt_acc(row.test_after.unwrap())
        ));
    }
    Ok(out)
}

/// Writes `runs.csv` and `pairedplot.csv` into `dir`.
pub fn emit_csv(table: &MetricsTable, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("runs.csv"), render_runs_csv(table)?)?;
    std::fs::write(dir.join("pairedplot.csv"), render_pairedplot_csv(table)?)?;
    Ok(())
}

/// Writes `manifest.txt`: the full resolved config plus artifact hashes.
pub fn emit_manifest(
    cfg: &ExperimentConfig,
    checkpoint_sha256: &str,
    subtasks: usize,
    dir: &Path,
) -> Result<()> {
    let mut text = String::new();
    for line in cfg.manifest_lines() {
        text.push_str(&line);
        text.push('\n');
    }
    text.push_str(&format!("subtasks={subtasks}\n"));
    text.push_str("checkpoint=checkpoint.gimc\n");
    text.push_str(&format!("checkpoint_sha256={checkpoint_sha256}\n"));
    std::fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_with(vals: &[(f64, f64)]) -> MetricsTable {
        let mut t = MetricsTable::new("lstm".into(), "digits".into(), 1, vals.len());
        for (row, &(v, te)) in t.rows.iter_mut().zip(vals) {
            row.val_after = Some(v);
            row.test_after = Some(te);
        }
        t
    }

    #[test]
    fn forgetting_fixture_values() {
        let t = table_with(&[(0.97, 0.97), (0.94, 0.18)]);
        let report = forgetting_report(&t).unwrap();
        assert!((report.per_subtask[0] - 0.00).abs() < 1e-12);
        assert!((report.per_subtask[1] - 0.76).abs() < 1e-12);
    }

    #[test]
    fn identical_columns_give_zero_forgetting() {
        let t = table_with(&[(0.5, 0.5), (0.8, 0.8), (0.33, 0.33)]);
        let report = forgetting_report(&t).unwrap();
        assert!(report.per_subtask.iter().all(|&f| f == 0.0));
        assert_eq!(report.mean, 0.0);
    }

    #[test]
    fn incomplete_table_is_rejected() {
        let mut t = table_with(&[(0.9, 0.8)]);
        t.rows.push(SubtaskMetrics {
            subtask: 1,
            val_after: Some(0.9),
            test_after: None,
        });
        assert!(forgetting_report(&t).is_err());
    }

    #[test]
    fn runs_csv_has_pinned_header_and_mean_row() {
        let t = table_with(&[(1.0, 0.5), (0.8, 0.6)]);
        let csv = render_runs_csv(&t).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model,dataset,subtask,val_after,test_after,forgetting,seed"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].starts_with("lstm,digits,1,1.000000,0.500000,0.500000,1"));
        assert!(rows[2].starts_with("lstm,digits,mean,0.900000,0.550000,0.350000,1"));
    }

    #[test]
    fn pairedplot_has_two_points_per_subtask() {
        let t = table_with(&[(1.0, 0.5), (0.8, 0.6)]);
        let csv = render_pairedplot_csv(&t).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 4);
        assert_eq!(lines[1], "lstm,digits,1,1,val_after,1.000000");
        assert_eq!(lines[2], "lstm,digits,1,1,test_after,0.500000");
    }
}
