use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use balsa::controller::ControllerKind;
use balsa::harness::{
    run, run_with, summarize_dir, with_aggregates, write_run_dataset, write_run_telemetry,
    write_summary, RunRecord, RunSummary, Scenario,
};
use balsa::learning::LearnerKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "balsa",
    version,
    about = "Safe learning-based tracking control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its telemetry CSV.
    Run(RunArgs),
    /// Simulate every controller × learner × seed combination.
    Sweep(SweepArgs),
    /// Write the summary table for the telemetry CSVs in a directory.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override any scenario key, e.g. `--set plant.noise=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// pd, ad, qp, rob or balsa; overrides the scenario.
    #[arg(long, value_parser = parse_controller)]
    controller: Option<ControllerKind>,
    /// none, gp, blr or oracle; overrides the scenario.
    #[arg(long, value_parser = parse_learner)]
    learner: Option<LearnerKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write the learner dataset as CSV.
    #[arg(long)]
    export_dataset: bool,
    /// Write every QP (rows, objective, solution) to `<stem>.qp.txt`.
    #[arg(long)]
    dump_qp: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated controllers.
    #[arg(long, value_delimiter = ',', value_parser = parse_controller, default_value = "pd,ad,qp,rob,balsa")]
    controllers: Vec<ControllerKind>,
    /// Comma-separated learners.
    #[arg(long, value_delimiter = ',', value_parser = parse_learner, default_value = "none,gp")]
    learners: Vec<LearnerKind>,
    /// Number of seeds, starting at `--first-seed`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Concurrent runs; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SummarizeArgs {
    dir: PathBuf,
    /// Output file; defaults to `<dir>/summary.csv`. Use `-` for stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    ControllerKind::parse(s).ok_or_else(|| format!("unknown controller {s:?} (pd|ad|qp|rob|balsa)"))
}

fn parse_learner(s: &str) -> Result<LearnerKind, String> {
    LearnerKind::parse(s).ok_or_else(|| format!("unknown learner {s:?} (none|gp|blr|oracle)"))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Summarize(a) => cmd_summarize(a),
    }
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario> {
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))?;
    let mut table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing {}", args.scenario.display()))?;
    for o in &args.overrides {
        apply_override(&mut table, o)?;
    }
    Ok(Scenario::from_toml_str(&toml::to_string(&table)?)?)
}

/// Sets a dotted key in the scenario table. The value is read as a TOML
/// value, falling back to a bare string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override {assignment:?} is not KEY=VALUE");
    };
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let path: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("{key}: {part} is not a table"))?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

fn print_run(rec: &RunRecord, path: &Path) {
    let s = RunSummary::from_record(rec);
    println!(
        "{}: err 0-60 {:.4}  60-120 {:.4}  min_h {:.4}  d2>0 {:.1}%  p50 {:.3} ms  p99 {:.3} ms  events {}",
        path.display(),
        s.mean_err_0_60,
        s.mean_err_60_120,
        s.min_h_overall,
        s.pct_d2_pos,
        s.p50_ms,
        s.p99_ms,
        rec.events.len()
    );
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut sc = load_scenario(&a.scenario)?;
    if let Some(c) = a.controller {
        sc = sc.with_controller(c);
    }
    if let Some(l) = a.learner {
        sc = sc.with_learner(l);
    }
    if let Some(s) = a.seed {
        sc = sc.with_seed(s);
    }
    let rec = if a.dump_qp {
        std::fs::create_dir_all(&a.out)?;
        let stem = balsa::harness::run_file_stem(
            &sc.name,
            sc.controller.kind.as_str(),
            sc.learner.kind.as_str(),
            sc.seed,
        );
        let mut w = BufWriter::new(File::create(a.out.join(format!("{stem}.qp.txt")))?);
        let mut io_err = None;
        let rec = run_with::<f64>(&sc, &mut |k, out| {
            if let Some(p) = &out.problem {
                let r = writeln!(w, "## step {k}\n{}", p.dump(out.solution.as_ref()));
                if let (Err(e), None) = (r, &io_err) {
                    io_err = Some(e);
                }
            }
        })?;
        if let Some(e) = io_err {
            return Err(e.into());
        }
        w.flush()?;
        rec
    } else {
        run(&sc)?
    };
    let path = write_run_telemetry(&a.out, &rec)?;
    if a.export_dataset {
        write_run_dataset(&a.out, &rec)?;
    }
    for e in &rec.events {
        eprintln!("t={:.2}: {}", e.t, e.message);
    }
    print_run(&rec, &path);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let base = load_scenario(&a.scenario)?;
    let mut grid = Vec::new();
    for &c in &a.controllers {
        for &l in &a.learners {
            for s in a.first_seed..a.first_seed + a.seeds {
                grid.push(base.clone().with_controller(c).with_learner(l).with_seed(s));
            }
        }
    }
    let jobs = a
        .jobs
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .clamp(1, grid.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<RunSummary>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(sc) = grid.get(i) else { break };
                let outcome = run(sc).map_err(anyhow::Error::from).and_then(|rec| {
                    let path = write_run_telemetry(&a.out, &rec)?;
                    print_run(&rec, &path);
                    Ok(RunSummary::from_record(&rec))
                });
                results.lock().unwrap().push((i, outcome));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    let mut summaries = Vec::with_capacity(results.len());
    for (i, r) in results {
        let sc = &grid[i];
        summaries.push(r.with_context(|| {
            format!(
                "{} {} {} seed {}",
                sc.name,
                sc.controller.kind.as_str(),
                sc.learner.kind.as_str(),
                sc.seed
            )
        })?);
    }
    let path = a.out.join("summary.csv");
    write_summary(
        BufWriter::new(File::create(&path)?),
        &with_aggregates(&summaries),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_summarize(a: SummarizeArgs) -> Result<()> {
    let rows = summarize_dir(&a.dir).with_context(|| format!("summarizing {}", a.dir.display()))?;
    if rows.is_empty() {
        bail!(
            "no telemetry CSVs named <scenario>__<controller>__<learner>__seed<N>.csv in {}",
            a.dir.display()
        );
    }
    match a.out {
        Some(p) if p.as_os_str() == "-" => write_summary(std::io::stdout().lock(), &rows)?,
        out => {
            let p = out.unwrap_or_else(|| a.dir.join("summary.csv"));
            write_summary(BufWriter::new(File::create(&p)?), &rows)?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}
