//! Record CSV IO, aggregate tables and plot-data emission.

use crate::error::{CliError, CliResult};
use crate::experiment::atomic_write;
use evotrain_core::RunRecord;
use std::collections::BTreeMap;
use std::path::Path;

pub const SCHEMA_LINE: &str = "# evotrain-runrecord-v1";

/// Writes records with the schema comment and a header row, atomically.
pub fn write_records(records: &[RunRecord], path: &Path) -> CliResult<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SCHEMA_LINE.as_bytes());
    buf.push(b'\n');
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in records {
            w.serialize(r)
                .map_err(|e| CliError::Data(format!("serializing record: {e}")))?;
        }
        w.flush()
            .map_err(|e| CliError::Data(format!("serializing records: {e}")))?;
    }
    atomic_write(path, &buf)
}

/// Reads a records CSV (schema comments skipped).
pub fn read_records(path: &Path) -> CliResult<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let r: RunRecord =
            row.map_err(|e| CliError::Data(format!("parsing {}: {e}", path.display())))?;
        out.push(r);
    }
    Ok(out)
}

/// Mean and sample standard deviation over the runs of one
/// (solver, schedule) group at each run's final epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub solver: String,
    pub schedule: String,
    pub runs: usize,
    /// `[train_loss, train_acc, test_loss, test_acc]`.
    pub mean: [f64; 4],
    /// Sample standard deviation (n-1); zero for a single run.
    pub std: [f64; 4],
    /// True when the group holds one run, i.e. the std columns carry no
    /// information.
    pub single_run: bool,
}

pub const METRIC_NAMES: [&str; 4] = ["train_loss", "train_acc", "test_loss", "test_acc"];

fn metrics_of(r: &RunRecord) -> [f64; 4] {
    [r.train_loss, r.train_acc, r.test_loss, r.test_acc]
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups by (solver, schedule) and summarizes each run's final epoch.
pub fn aggregate(records: &[RunRecord]) -> CliResult<Vec<GroupSummary>> {
    if records.is_empty() {
        return Err(CliError::EmptyGroup("no records to aggregate".to_string()));
    }
    let mut groups: BTreeMap<(String, String), BTreeMap<u32, &RunRecord>> = BTreeMap::new();
    for r in records {
        let finals = groups
            .entry((r.solver.clone(), r.schedule.clone()))
            .or_default();
        let cur = finals.entry(r.run_id).or_insert(r);
        if r.epoch > cur.epoch {
            *cur = r;
        }
    }
    let mut out = Vec::new();
    for ((solver, schedule), finals) in groups {
        let rows: Vec<&RunRecord> = finals.values().copied().collect();
        let mut mean = [0.0; 4];
        let mut std = [0.0; 4];
        for m in 0..4 {
            let vals: Vec<f64> = rows.iter().map(|r| metrics_of(r)[m]).collect();
            (mean[m], std[m]) = mean_std(&vals);
        }
        out.push(GroupSummary {
            solver,
            schedule,
            runs: rows.len(),
            mean,
            std,
            single_run: rows.len() == 1,
        });
    }
    Ok(out)
}

/// Plain-text table over group summaries.
pub fn render_table(groups: &[GroupSummary]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<12} {:<9} {:>4}  {:>18}  {:>18}  {:>18}  {:>18}\n",
        "solver", "schedule", "runs", "train_loss", "train_acc", "test_loss", "test_acc"
    ));
    for g in groups {
        let cell = |m: usize| {
            if g.single_run {
                format!("{:.4} (n=1)", g.mean[m])
            } else {
                format!("{:.4} +/- {:.4}", g.mean[m], g.std[m])
            }
        };
        s.push_str(&format!(
            "{:<12} {:<9} {:>4}  {:>18}  {:>18}  {:>18}  {:>18}\n",
            g.solver,
            g.schedule,
            g.runs,
            cell(0),
            cell(1),
            cell(2),
            cell(3)
        ));
    }
    s
}

/// Per-epoch mean and std per (group, metric), written as CSV with columns
/// `epoch,group,metric,mean,std`. Runs within a group must share an epoch
/// grid.
pub fn emit_plotdata(records: &[RunRecord], out_path: &Path) -> CliResult<usize> {
    if records.is_empty() {
        return Err(CliError::EmptyGroup("no records for plot data".to_string()));
    }
    let mut groups: BTreeMap<String, BTreeMap<u32, Vec<&RunRecord>>> = BTreeMap::new();
    for r in records {
        groups
            .entry(format!("{}/{}", r.solver, r.schedule))
            .or_default()
            .entry(r.run_id)
            .or_default()
            .push(r);
    }
    let mut buf = String::from("epoch,group,metric,mean,std\n");
    let mut rows = 0usize;
    for (group, runs) in &groups {
        let mut grids: Vec<Vec<u32>> = Vec::new();
        for recs in runs.values() {
            let mut epochs: Vec<u32> = recs.iter().map(|r| r.epoch).collect();
            epochs.sort_unstable();
            grids.push(epochs);
        }
        if grids.windows(2).any(|w| w[0] != w[1]) {
            return Err(CliError::Alignment(format!(
                "group {group}: runs disagree on epoch grids"
            )));
        }
        let epochs = &grids[0];
        for &epoch in epochs {
            for (m, name) in METRIC_NAMES.iter().enumerate() {
                let vals: Vec<f64> = runs
                    .values()
                    .map(|recs| {
                        let r = recs
                            .iter()
                            .find(|r| r.epoch == epoch)
                            .expect("grid-checked epoch");
                        metrics_of(r)[m]
                    })
                    .collect();
                let (mean, std) = mean_std(&vals);
                buf.push_str(&format!("{epoch},{group},{name},{mean},{std}\n"));
                rows += 1;
            }
        }
    }
    atomic_write(out_path, buf.as_bytes())?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(run: u32, solver: &str, epoch: u32, acc: f64) -> RunRecord {
        RunRecord {
            run_id: run,
            seed: run as u64,
            solver: solver.to_string(),
            schedule: "-".to_string(),
            epoch,
            train_loss: 1.0 - acc,
            train_acc: acc,
            test_loss: 1.2 - acc,
            test_acc: acc - 0.05,
            evals_cumulative: epoch as u64,
            wall_ms: 1,
        }
    }

    #[test]
    fn aggregate_uses_final_epoch_and_sample_std() {
        let records = vec![
            rec(0, "adam", 1, 0.5),
            rec(0, "adam", 2, 0.85),
            rec(1, "adam", 1, 0.4),
            rec(1, "adam", 2, 0.65),
        ];
        let groups = aggregate(&records).unwrap();
        assert_eq!(groups.len(), 1);
        let g = &groups[0];
        assert_eq!(g.runs, 2);
        // finals 0.85 and 0.65: mean 0.75, sample std of two points
        assert!((g.mean[1] - 0.75).abs() < 1e-12);
        assert!((g.std[1] - 0.1414213562373095).abs() < 1e-12);
        assert!(!g.single_run);
    }

    #[test]
    fn constant_finals_have_zero_std() {
        let records = vec![
            rec(0, "adam", 1, 0.9),
            rec(1, "adam", 1, 0.9),
            rec(2, "adam", 1, 0.9),
        ];
        let g = &aggregate(&records).unwrap()[0];
        assert_eq!(g.mean[1], 0.9);
        assert_eq!(g.std[1], 0.0);
    }

    #[test]
    fn single_run_flagged_with_zero_std() {
        let records = vec![rec(0, "adam", 1, 0.7)];
        let g = &aggregate(&records).unwrap()[0];
        assert!(g.single_run);
        assert_eq!(g.std, [0.0; 4]);
    }

    #[test]
    fn empty_records_error() {
        assert!(matches!(aggregate(&[]), Err(CliError::EmptyGroup(_))));
    }

    #[test]
    fn plotdata_row_cardinality_and_agreement_with_aggregate() {
        // 5 runs x 20 epochs x 2 groups x 4 metrics -> 160 rows
        let mut records = Vec::new();
        for solver in ["adam", "sgd"] {
            for run in 0..5 {
                for epoch in 1..=20 {
                    records.push(rec(run, solver, epoch, 0.5 + 0.01 * epoch as f64));
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("plot.csv");
        let rows = emit_plotdata(&records, &out).unwrap();
        assert_eq!(rows, 2 * 20 * 4);
        let text = std::fs::read_to_string(&out).unwrap();
        // cross-check the final epoch against aggregate()
        let groups = aggregate(&records).unwrap();
        for g in &groups {
            let line = text
                .lines()
                .find(|l| l.starts_with(&format!("20,{}/{},test_acc", g.solver, g.schedule)))
                .expect("final-epoch row present");
            let mean: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
            assert!((mean - g.mean[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn misaligned_runs_are_rejected() {
        let records = vec![rec(0, "adam", 1, 0.5), rec(1, "adam", 2, 0.5)];
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_plotdata(&records, &dir.path().join("x.csv")),
            Err(CliError::Alignment(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![rec(0, "adam", 1, 0.5), rec(0, "adam", 2, 0.6)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        write_records(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(SCHEMA_LINE));
        assert!(text.lines().nth(1).unwrap().starts_with("run_id,seed,solver"));
        let back = read_records(&path).unwrap();
        assert_eq!(records, back);
    }
}
