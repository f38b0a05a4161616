//! CSV and JSON artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::RunSummary;
use crate::domain::RoundRecord;
use crate::error::{Error, Result};
use crate::seed::{self, purpose};

pub const ROUNDS_HEADER: &str =
    "round,accuracy,loss,round_time_s,cohort_energy_j,alive_uavs,dropouts,selected_ids";
pub const SUMMARY_HEADER: &str =
    "strategy,avg_round_time_s,rounds_to_convergence,time_to_convergence_min,final_accuracy,final_loss,total_energy_j,rounds";

/// Formats like C's `%g`: 6 significant digits, trailing zeros removed,
/// exponent form below 1e-4 and from 1e6.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}

pub fn rounds_csv(records: &[RoundRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(ROUNDS_HEADER);
    out.push('\n');
    for r in records {
        let ids: Vec<String> = r.selected_ids.iter().map(u32::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round_k,
            fmt_g(r.global_accuracy),
            fmt_g(r.global_loss),
            fmt_g(r.round_duration_s),
            fmt_g(r.cohort_energy_j),
            r.alive_uavs,
            r.dropouts,
            ids.join(";")
        );
    }
    out
}

/// Writes the per-round CSV.
pub fn emit_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invariant("no round records to write"));
    }
    fs::write(path, rounds_csv(records))?;
    Ok(())
}

pub fn summary_csv(summaries: &[RunSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.strategy,
            fmt_g(s.avg_round_time_s),
            s.rounds_to_convergence
                .map_or(String::new(), |v| v.to_string()),
            s.time_to_convergence_min.map_or(String::new(), fmt_g),
            fmt_g(s.final_accuracy),
            fmt_g(s.final_loss),
            fmt_g(s.total_cohort_energy_j()),
            s.records.len()
        );
    }
    out
}

/// Human-readable comparison table.
pub fn summary_table(summaries: &[RunSummary]) -> String {
    let mut out = format!(
        "{:<16} {:>14} {:>8} {:>12} {:>10}\n",
        "strategy", "lambda_t (s)", "chi_r", "rho_t (min)", "final acc"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<16} {:>14} {:>8} {:>12} {:>10}",
            s.strategy,
            fmt_g(s.avg_round_time_s),
            s.rounds_to_convergence
                .map_or("-".into(), |v| v.to_string()),
            s.time_to_convergence_min.map_or("-".into(), fmt_g),
            fmt_g(s.final_accuracy)
        );
    }
    out
}

#[derive(Serialize)]
struct Metadata<'a> {
    version: &'static str,
    strategy: &'a str,
    master_seed: u64,
    child_seeds: Vec<(&'static str, u64)>,
    config_sha256: String,
    rounds: usize,
    stopped_early: &'a Option<String>,
    dedup_events: usize,
    config: &'a ExperimentConfig,
}

pub fn metadata_json(cfg: &ExperimentConfig, summary: &RunSummary) -> String {
    let child_seeds = [
        purpose::DATAGEN,
        purpose::PLACEMENT,
        purpose::BATTERY,
        purpose::SPLIT,
        purpose::MODEL_INIT,
        purpose::TRAINING,
        purpose::SELECTION,
        purpose::DIVERSITY,
    ]
    .into_iter()
    .map(|p| (p, seed::derive(cfg.master_seed, p, &[])))
    .collect();
    let meta = Metadata {
        version: env!("CARGO_PKG_VERSION"),
        strategy: &summary.strategy,
        master_seed: cfg.master_seed,
        child_seeds,
        config_sha256: cfg.hash(),
        rounds: summary.records.len(),
        stopped_early: &summary.stopped_early,
        dedup_events: summary.dedup_events.len(),
        config: cfg,
    };
    let mut s = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    s.push('\n');
    s
}

/// Writes `rounds.csv`, `summary.csv` and `metadata.json` for a single run.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, summary: &RunSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    emit_csv(&summary.records, &dir.join("rounds.csv"))?;
    fs::write(
        dir.join("summary.csv"),
        summary_csv(std::slice::from_ref(summary)),
    )?;
    fs::write(dir.join("metadata.json"), metadata_json(cfg, summary))?;
    Ok(())
}

/// Writes one sub-directory per strategy plus a combined `summary.csv`.
pub fn write_comparison(
    dir: &Path,
    cfg: &ExperimentConfig,
    summaries: &[RunSummary],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in summaries {
        write_run(&dir.join(&s.strategy), cfg, s)?;
    }
    fs::write(dir.join("summary.csv"), summary_csv(summaries))?;
    Ok(())
}
