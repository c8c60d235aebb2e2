mod common;

use balsa::controller::ControllerKind;
use balsa::harness::{
    read_telemetry, run, run_with, summarize_dir, write_run_dataset, write_run_telemetry,
    RunRecord, Scenario, SUMMARY_COLUMNS, TELEMETRY_COLUMNS,
};
use balsa::learning::{Dataset, LearnerKind};

fn shortened(name: &str, duration: f64) -> Scenario {
    let mut sc = common::scenario(name);
    sc.duration = duration;
    sc
}

fn peak_speed(rec: &RunRecord) -> f64 {
    rec.diagnostics.iter().map(|d| d.speed).fold(0.0, f64::max)
}

#[test]
fn bundled_scenarios_load_and_validate() {
    for name in [
        "figure_eight",
        "obstacles",
        "invariance",
        "velocity_limit",
        "convergence",
        "latency",
    ] {
        common::scenario(name).validate().unwrap();
    }
}

#[test]
fn same_seed_gives_identical_rows_and_other_seeds_differ() {
    let sc = shortened("obstacles", 15.0).with_seed(3);
    let a = run(&sc).unwrap();
    let b = run(&sc).unwrap();
    assert_eq!(a.rows, b.rows);
    let c = run(&sc.clone().with_seed(4)).unwrap();
    assert_ne!(a.rows, c.rows);
}

#[test]
fn f32_runs_track_the_f64_run() {
    let sc = shortened("figure_eight", 20.0).with_learner(LearnerKind::None);
    let wide = run(&sc).unwrap();
    let narrow = run_with::<f32>(&sc, &mut |_, _| {}).unwrap();
    let gap = (wide.mean_error(0.0, 20.0) - narrow.mean_error(0.0, 20.0)).abs();
    assert!(gap < 0.05, "f32 vs f64 mean error gap {gap}");
}

#[test]
fn models_install_only_at_scheduled_steps() {
    let sc = shortened("figure_eight", 25.0);
    let l = sc.learner;
    let rec = run(&sc).unwrap();
    let first = (l.warmup / sc.dt).round() as usize + 1 + l.publish_lag_steps;
    for k in 1..rec.rows.len() {
        let changed = rec.rows[k].model_index != rec.rows[k - 1].model_index;
        let scheduled = k >= first && (k - first).is_multiple_of(l.retrain_every);
        assert_eq!(changed, scheduled, "step {k}");
    }
    assert!(rec.rows.last().unwrap().model_index > 0);
}

#[test]
fn learning_shrinks_model_error_and_tracking_error() {
    let sc = shortened("figure_eight", 120.0);
    let gp = run(&sc).unwrap();
    let none = run(&sc.clone().with_learner(LearnerKind::None)).unwrap();
    let model_err = |rec: &RunRecord, from: usize, to: usize| {
        rec.diagnostics[from..to]
            .iter()
            .map(|d| d.model_error)
            .sum::<f64>()
            / (to - from) as f64
    };
    let n = gp.diagnostics.len();
    assert!(model_err(&gp, n - 500, n) < 0.5 * model_err(&gp, 0, 500));
    assert!(gp.mean_error(60.0, 120.0) < gp.mean_error(0.0, 60.0));
    assert!(gp.mean_error(60.0, 120.0) < none.mean_error(60.0, 120.0));
}

#[test]
fn tracking_is_tight_without_disturbance_or_noise() {
    // The explicit position update lags the reference by about v·dt/2, so
    // use a finer step than the bundled scenario.
    let mut sc = shortened("figure_eight", 30.0);
    sc.dt = 0.005;
    sc.plant.disturbance = false;
    sc.plant.noise = 0.0;
    for (c, l) in [
        (ControllerKind::Pd, LearnerKind::None),
        (ControllerKind::Balsa, LearnerKind::Oracle),
    ] {
        let rec = run(&sc.clone().with_controller(c).with_learner(l)).unwrap();
        let err = rec.mean_error(0.0, 30.0);
        assert!(err < 1e-2, "{} {err}", c.as_str());
    }
}

#[test]
fn speed_limit_holds_only_for_barrier_controllers() {
    let base = common::scenario("velocity_limit");
    let v_max = base.barriers.v_max.unwrap();
    let balsa = run(&base).unwrap();
    assert!(
        peak_speed(&balsa) <= v_max + 0.05,
        "balsa peak {}",
        peak_speed(&balsa)
    );
    let qp = run(&base.clone().with_controller(ControllerKind::Qp)).unwrap();
    assert!(
        peak_speed(&qp) <= v_max + 0.05,
        "qp peak {}",
        peak_speed(&qp)
    );
    for c in [ControllerKind::Pd, ControllerKind::Ad] {
        let rec = run(&base.clone().with_controller(c)).unwrap();
        assert!(
            peak_speed(&rec) > v_max,
            "{} peak {}",
            c.as_str(),
            peak_speed(&rec)
        );
    }
    let mean_sigma = |from: usize, to: usize| {
        balsa.rows[from..to].iter().map(|r| r.sigma1).sum::<f64>() / (to - from) as f64
    };
    let n = balsa.rows.len();
    let window = (20.0 / base.dt).round() as usize;
    let first = balsa.rows.iter().position(|r| r.model_index > 0).unwrap();
    assert!(mean_sigma(n - window, n) < mean_sigma(first, first + window));
}

#[test]
fn telemetry_and_dataset_files_round_trip() {
    let sc = shortened("figure_eight", 15.0);
    let rec = run(&sc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let tel = write_run_telemetry(dir.path(), &rec).unwrap();
    assert_eq!(
        tel.file_name().unwrap().to_str().unwrap(),
        "figure_eight__balsa__gp__seed0.csv"
    );
    let text = std::fs::read_to_string(&tel).unwrap();
    assert_eq!(text.lines().next().unwrap(), TELEMETRY_COLUMNS.join(","));
    let rows = read_telemetry(text.as_bytes()).unwrap();
    assert_eq!(rows, rec.rows);

    let ds = write_run_dataset(dir.path(), &rec).unwrap();
    let back =
        Dataset::<f64>::read_csv(std::fs::File::open(ds).unwrap(), rec.dataset.capacity()).unwrap();
    assert_eq!(back.len(), rec.dataset.len());
    for (a, b) in back.iter().zip(rec.dataset.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn summarize_reads_back_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let base = shortened("obstacles", 10.0);
    for seed in 0..2 {
        write_run_telemetry(dir.path(), &run(&base.clone().with_seed(seed)).unwrap()).unwrap();
    }
    write_run_telemetry(
        dir.path(),
        &run(&base.clone().with_controller(ControllerKind::Pd)).unwrap(),
    )
    .unwrap();
    std::fs::write(dir.path().join("notes.csv"), "unrelated\n").unwrap();
    let rows = summarize_dir(dir.path()).unwrap();
    let seeds: Vec<(&str, &str)> = rows
        .iter()
        .map(|r| (r.controller.as_str(), r.seed.as_str()))
        .collect();
    assert_eq!(
        seeds,
        [
            ("balsa", "0"),
            ("balsa", "1"),
            ("balsa", "mean"),
            ("balsa", "std"),
            ("pd", "0")
        ]
    );
    assert!(rows.iter().all(|r| r.min_h_overall.is_finite()));
    assert_eq!(SUMMARY_COLUMNS.len(), 12);
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut sc = common::scenario("figure_eight");
    sc.dt = -0.1;
    assert!(run(&sc).is_err());
    assert!(Scenario::from_toml_str("name = \"x\"\ndt = 0.0\n").is_err());
    assert!(Scenario::load(common::scenario_path("does_not_exist")).is_err());
}
