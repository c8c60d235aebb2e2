//! Per-run summary statistics and their CSV form.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::run::RunRecord;
use super::telemetry::{read_telemetry, TelemetryRow};
use crate::error::{Error, Result};

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "scenario",
    "controller",
    "learner",
    "seed",
    "mean_err_0_60",
    "mean_err_60_120",
    "std_err",
    "max_err",
    "min_h_overall",
    "pct_d2_pos",
    "p50_ms",
    "p99_ms",
];

/// `d2` above this counts as a relaxed barrier.
pub const D2_ACTIVE_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub scenario: String,
    pub controller: String,
    pub learner: String,
    /// A seed number, or `mean` / `std` for aggregate rows.
    pub seed: String,
    pub mean_err_0_60: f64,
    pub mean_err_60_120: f64,
    pub std_err: f64,
    pub max_err: f64,
    pub min_h_overall: f64,
    pub pct_d2_pos: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

impl RunSummary {
    /// Summarises telemetry rows. `latencies_ms` feeds the percentile columns.
    pub fn from_rows(
        scenario: &str,
        controller: &str,
        learner: &str,
        seed: &str,
        rows: &[TelemetryRow],
        latencies_ms: &[f64],
    ) -> Self {
        let errs: Vec<f64> = rows.iter().map(|r| r.e_norm).collect();
        let window = |a: f64, b: f64| {
            mean(
                &rows
                    .iter()
                    .filter(|r| r.t >= a - 1e-9 && r.t < b - 1e-9)
                    .map(|r| r.e_norm)
                    .collect::<Vec<_>>(),
            )
        };
        let d2_pos = rows.iter().filter(|r| r.d2 > D2_ACTIVE_THRESHOLD).count();
        Self {
            scenario: scenario.into(),
            controller: controller.into(),
            learner: learner.into(),
            seed: seed.into(),
            mean_err_0_60: window(0.0, 60.0),
            mean_err_60_120: window(60.0, 120.0),
            std_err: std_dev(&errs),
            max_err: errs.iter().copied().fold(f64::NAN, f64::max),
            min_h_overall: rows.iter().map(|r| r.min_h).fold(f64::INFINITY, f64::min),
            pct_d2_pos: if rows.is_empty() {
                f64::NAN
            } else {
                100.0 * d2_pos as f64 / rows.len() as f64
            },
            p50_ms: percentile(latencies_ms, 50.0),
            p99_ms: percentile(latencies_ms, 99.0),
        }
    }

    /// Uses the measured latencies, which are kept even when telemetry omits them.
    pub fn from_record(rec: &RunRecord) -> Self {
        let lat: Vec<f64> = rec.diagnostics.iter().map(|d| d.step_ms).collect();
        Self::from_rows(
            &rec.scenario,
            &rec.controller,
            &rec.learner,
            &rec.seed.to_string(),
            &rec.rows,
            &lat,
        )
    }

    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.scenario.clone(),
            self.controller.clone(),
            self.learner.clone(),
            self.seed.clone(),
        ];
        for v in [
            self.mean_err_0_60,
            self.mean_err_60_120,
            self.std_err,
            self.max_err,
            self.min_h_overall,
            self.pct_d2_pos,
            self.p50_ms,
            self.p99_ms,
        ] {
            f.push(v.to_string());
        }
        f
    }

    fn numbers(&self) -> [f64; 8] {
        [
            self.mean_err_0_60,
            self.mean_err_60_120,
            self.std_err,
            self.max_err,
            self.min_h_overall,
            self.pct_d2_pos,
            self.p50_ms,
            self.p99_ms,
        ]
    }

    fn from_numbers(
        scenario: &str,
        controller: &str,
        learner: &str,
        seed: &str,
        v: [f64; 8],
    ) -> Self {
        Self {
            scenario: scenario.into(),
            controller: controller.into(),
            learner: learner.into(),
            seed: seed.into(),
            mean_err_0_60: v[0],
            mean_err_60_120: v[1],
            std_err: v[2],
            max_err: v[3],
            min_h_overall: v[4],
            pct_d2_pos: v[5],
            p50_ms: v[6],
            p99_ms: v[7],
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    mean(&xs.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>()).sqrt()
}

/// Nearest-rank percentile, `p` in `(0, 100]`.
pub fn percentile(xs: &[f64], p: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// Appends `mean` and `std` rows after each (scenario, controller, learner)
/// group that has at least two seeds. Infinite entries such as `min_h`
/// without obstacles pass through unchanged.
pub fn with_aggregates(runs: &[RunSummary]) -> Vec<RunSummary> {
    let mut groups: BTreeMap<(String, String, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        groups
            .entry((r.scenario.clone(), r.controller.clone(), r.learner.clone()))
            .or_default()
            .push(r);
    }
    let mut out = Vec::with_capacity(runs.len() + 2 * groups.len());
    for ((s, c, l), members) in groups {
        out.extend(members.iter().map(|r| (*r).clone()));
        if members.len() < 2 {
            continue;
        }
        let mut means = [0.0; 8];
        let mut stds = [0.0; 8];
        for i in 0..8 {
            let col: Vec<f64> = members.iter().map(|r| r.numbers()[i]).collect();
            if col.iter().all(|v| *v == col[0]) {
                means[i] = col[0];
                stds[i] = 0.0;
            } else {
                means[i] = mean(&col);
                stds[i] = std_dev(&col);
            }
        }
        out.push(RunSummary::from_numbers(&s, &c, &l, "mean", means));
        out.push(RunSummary::from_numbers(&s, &c, &l, "std", stds));
    }
    out
}

pub fn write_summary<W: Write>(writer: W, rows: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Splits a telemetry file stem `<scenario>__<controller>__<learner>__seed<N>`.
pub fn parse_file_stem(stem: &str) -> Option<(String, String, String, u64)> {
    let parts: Vec<&str> = stem.split("__").collect();
    if parts.len() != 4 {
        return None;
    }
    let seed = parts[3].strip_prefix("seed")?.parse().ok()?;
    Some((parts[0].into(), parts[1].into(), parts[2].into(), seed))
}

/// Summarises every telemetry CSV in `dir` whose name follows the run naming
/// scheme. Latency percentiles come from the `step_ms` column.
pub fn summarize_dir(dir: impl AsRef<Path>) -> Result<Vec<RunSummary>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut runs = Vec::new();
    for p in paths {
        let Some((s, c, l, seed)) = p
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(parse_file_stem)
        else {
            continue;
        };
        let rows = read_telemetry(File::open(&p)?)
            .map_err(|e| Error::Csv(format!("{}: {e}", p.display())))?;
        let lat: Vec<f64> = rows.iter().map(|r| r.step_ms).collect();
        runs.push(RunSummary::from_rows(
            &s,
            &c,
            &l,
            &seed.to_string(),
            &rows,
            &lat,
        ));
    }
    runs.sort_by(|a, b| {
        (
            &a.scenario,
            &a.controller,
            &a.learner,
            a.seed.parse::<u64>().ok(),
        )
            .cmp(&(
                &b.scenario,
                &b.controller,
                &b.learner,
                b.seed.parse::<u64>().ok(),
            ))
    });
    Ok(with_aggregates(&runs))
}
