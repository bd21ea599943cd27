//! `rtvar experiment`: the full evaluation harness.
//!
//! Per-replication records stream to `records.csv` as they complete (append
//! + flush, so partial progress survives an abort and `--resume` can pick up
//! at the first incomplete replication). The aggregate CSV and manifest are
//! written atomically at the end.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::Context;
use rtvar_core::eval::{
    aggregate, run_experiment_with, EvalGrid, ExperimentConfig, RepRecord, METRIC_RECORD_HEADER,
    REP_RECORD_HEADER,
};

use crate::io_util::write_atomic;
use crate::manifest::{unix_now, RunManifest};
use crate::Profile;

/// Read a partially-written records file and find the first replication
/// that is missing any of its rows; rows from that replication on are
/// discarded so the rerun reproduces a fresh run byte for byte.
fn resume_point(
    path: &Path,
    grid: &EvalGrid,
) -> anyhow::Result<(Vec<RepRecord>, usize)> {
    let mut kept = Vec::new();
    if !path.exists() {
        return Ok((kept, 0));
    }
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != REP_RECORD_HEADER {
                anyhow::bail!("{} has an unexpected header", path.display());
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        rows.push(RepRecord::from_csv_row(&line)?);
    }
    let per_rep = grid.offline_sizes.len() * grid.alphas.len() * 2;
    let mut first_incomplete = 0;
    for rep in 0..grid.n_reps {
        let have = rows.iter().filter(|r| r.rep == rep).count();
        if have == per_rep {
            first_incomplete = rep + 1;
        } else {
            break;
        }
    }
    kept.extend(rows.into_iter().filter(|r| r.rep < first_incomplete));
    Ok((kept, first_incomplete))
}

pub fn run(
    config_path: &Path,
    out_dir: &Path,
    profile: Option<Profile>,
    resume: bool,
) -> anyhow::Result<()> {
    let started = unix_now();
    let mut config = ExperimentConfig::from_json_file(config_path)
        .with_context(|| format!("loading experiment config {}", config_path.display()))?;
    match profile {
        Some(Profile::Paper) => config.grid = Some(EvalGrid::paper()),
        Some(Profile::Desk) => config.grid = Some(EvalGrid::desk()),
        None => {}
    }
    let grid = config.effective_grid();
    config.validate()?;

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let records_path = out_dir.join("records.csv");
    let aggregate_path = out_dir.join("aggregate.csv");

    let (mut records, skip_below) = if resume {
        let (kept, first_incomplete) = resume_point(&records_path, &grid)?;
        if first_incomplete > 0 {
            eprintln!(
                "resuming: {} replications already complete",
                first_incomplete
            );
        }
        (kept, first_incomplete)
    } else {
        (Vec::new(), 0)
    };

    // rewrite the kept prefix, then stream new rows
    {
        let mut prefix = String::from(REP_RECORD_HEADER);
        prefix.push('\n');
        for r in &records {
            prefix.push_str(&r.to_csv_row());
            prefix.push('\n');
        }
        write_atomic(&records_path, prefix.as_bytes())?;
    }
    let mut records_file = OpenOptions::new()
        .append(true)
        .open(&records_path)
        .with_context(|| format!("opening {}", records_path.display()))?;

    let total_reps = grid.n_reps;
    let mut last_reported_rep = usize::MAX;
    run_experiment_with(
        &config,
        &|_, rep| rep < skip_below,
        &mut |record| {
            if record.rep != last_reported_rep {
                eprintln!("replication {}/{}", record.rep + 1, total_reps);
                last_reported_rep = record.rep;
            }
            writeln!(records_file, "{}", record.to_csv_row()).expect("records.csv write");
            records_file.flush().expect("records.csv flush");
            records.push(record.clone());
        },
    )?;

    let mut aggregate_csv = String::from(METRIC_RECORD_HEADER);
    aggregate_csv.push('\n');
    for row in aggregate(&records) {
        aggregate_csv.push_str(&row.to_csv_row());
        aggregate_csv.push('\n');
    }
    write_atomic(&aggregate_path, aggregate_csv.as_bytes())?;

    let mut manifest = RunManifest::new(
        "experiment",
        started,
        serde_json::json!({
            "config": config_path.display().to_string(),
            "resolved": serde_json::to_value(&config)?,
            "grid": serde_json::to_value(&grid)?,
            "profile": profile.map(|p| format!("{p:?}").to_lowercase()),
            "resume": resume,
        }),
    );
    manifest.add_artifact("records", &records_path)?;
    manifest.add_artifact("aggregate", &aggregate_path)?;
    manifest.write(&out_dir.join("manifest.json"))?;

    println!(
        "experiment complete: {} records across {} replications -> {}",
        records.len(),
        grid.n_reps,
        out_dir.display()
    );
    Ok(())
}
