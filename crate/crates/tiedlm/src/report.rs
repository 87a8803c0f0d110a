//! CSV outputs: per-epoch training logs, sweep run/aggregate files, and
//! the four-variant comparison table.
//!
//! Data rows are fully deterministic for a fixed seed; anything tied to
//! wall time (per-epoch seconds) lives in `#` comment lines so two runs
//! of the same config differ only there.  Floats are written with Rust's
//! shortest round-trip formatting, so reading a file back reproduces the
//! in-memory values exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use tiedlm_core::experiment::{RunRecord, SweepPoint, SweepVariable, VariantOutcome};
use tiedlm_core::trainer::TrainLog;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Render the per-epoch log: one data row per epoch, with that epoch's
/// wall-clock seconds in a following `#` comment line.
pub fn render_train_log(log: &TrainLog) -> String {
    let mut out = String::from("epoch,lr,train_ppl,valid_ppl,subspace_distance\n");
    for r in &log.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            r.lr,
            r.train_ppl,
            opt(r.valid_ppl),
            opt(r.subspace_distance),
        );
        let _ = writeln!(out, "# epoch {}: {:.2}s", r.epoch, r.seconds);
    }
    out
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    fs::write(path, render_train_log(log))
        .with_context(|| format!("writing training log {}", path.display()))
}

pub const SWEEP_RUNS_HEADER: &str = "variable,value,seed,distance";
pub const SWEEP_AGG_HEADER: &str = "variable,value,mean,std,n";

/// Append one completed run to the runs file, creating it (with header)
/// on first use, and flush so an interrupted sweep keeps every finished
/// run on disk.
pub fn append_sweep_run(path: &Path, variable: SweepVariable, rec: &RunRecord) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening sweep runs file {}", path.display()))?;
    if file.metadata()?.len() == 0 {
        writeln!(file, "{SWEEP_RUNS_HEADER}")?;
    }
    writeln!(
        file,
        "{},{},{},{}",
        variable.name(),
        rec.value,
        rec.seed,
        opt(rec.distance)
    )?;
    file.flush()?;
    Ok(())
}

/// Read a runs file back; every row must belong to `variable`.
pub fn read_sweep_runs(path: &Path, variable: SweepVariable) -> Result<Vec<RunRecord>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some(h) if h == SWEEP_RUNS_HEADER => {}
        other => bail!("{}: expected header {SWEEP_RUNS_HEADER:?}, found {other:?}", path.display()),
    }
    let mut records = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let [var, value, seed, distance] = fields.as_slice() else {
            bail!("{}: malformed row {line:?}", path.display());
        };
        if *var != variable.name() {
            bail!(
                "{}: row for variable {var:?} in a {} sweep",
                path.display(),
                variable.name()
            );
        }
        records.push(RunRecord {
            value: value.parse().with_context(|| format!("value in {line:?}"))?,
            seed: seed.parse().with_context(|| format!("seed in {line:?}"))?,
            distance: if distance.is_empty() {
                None
            } else {
                Some(distance.parse().with_context(|| format!("distance in {line:?}"))?)
            },
        });
    }
    Ok(records)
}

pub fn render_sweep_agg(variable: SweepVariable, points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_AGG_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            variable.name(),
            p.value,
            p.mean,
            p.std,
            p.runs_ok
        );
    }
    out
}

pub fn write_sweep_agg(path: &Path, variable: SweepVariable, points: &[SweepPoint]) -> Result<()> {
    fs::write(path, render_sweep_agg(variable, points))
        .with_context(|| format!("writing sweep aggregate {}", path.display()))
}

pub fn render_grid(rows: &[VariantOutcome]) -> String {
    let mut out = String::from("variant,parameters,best_valid_ppl,test_ppl\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.variant.name(),
            r.parameter_count,
            r.best_valid_ppl,
            r.test_ppl
        );
    }
    out
}

pub fn write_grid(path: &Path, rows: &[VariantOutcome]) -> Result<()> {
    fs::write(path, render_grid(rows)).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tiedlm_core::trainer::EpochRecord;

    #[test]
    fn train_log_keeps_seconds_in_comments() {
        let log = TrainLog {
            records: vec![
                EpochRecord {
                    epoch: 1,
                    lr: 1.0,
                    train_ppl: 812.5,
                    valid_ppl: Some(900.25),
                    subspace_distance: None,
                    seconds: 2.345,
                },
                EpochRecord {
                    epoch: 2,
                    lr: 0.9,
                    train_ppl: 640.0,
                    valid_ppl: None,
                    subspace_distance: Some(0.75),
                    seconds: 2.5,
                },
            ],
        };
        let text = render_train_log(&log);
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(
            data,
            vec![
                "epoch,lr,train_ppl,valid_ppl,subspace_distance",
                "1,1,812.5,900.25,",
                "2,0.9,640,,0.75",
            ]
        );
        // Seconds appear only in the comments.
        assert!(text.contains("# epoch 1: 2.35s"));
        assert!(!data.iter().any(|l| l.contains("2.35")));
    }

    #[test]
    fn sweep_runs_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        let records = vec![
            RunRecord {
                value: 0.1 + 0.2, // deliberately non-representable
                seed: 18446744073709551615,
                distance: Some(0.9573214778815431),
            },
            RunRecord {
                value: 1.0,
                seed: 3,
                distance: None,
            },
        ];
        for r in &records {
            append_sweep_run(&path, SweepVariable::Beta, r).unwrap();
        }
        let back = read_sweep_runs(&path, SweepVariable::Beta).unwrap();
        assert_eq!(records, back);
        assert!(read_sweep_runs(&path, SweepVariable::Tau).is_err());
    }

    #[test]
    fn agg_and_grid_have_fixed_headers() {
        let points = vec![SweepPoint {
            value: 0.5,
            mean: 0.25,
            std: 0.01,
            runs_ok: 3,
            runs_failed: 1,
        }];
        let text = render_sweep_agg(SweepVariable::Tau, &points);
        assert_eq!(text, "variable,value,mean,std,n\ntau,0.5,0.25,0.01,3\n");
    }
}
