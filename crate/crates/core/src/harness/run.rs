//! Closed-loop simulation of one scenario.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::reference::Reference;
use super::scenario::Scenario;
use super::telemetry::TelemetryRow;
use crate::controller::{Controller, StepInput, StepOutput};
use crate::dynamics::{plant_gain, true_disturbance, CanonicalState, Plant, VehicleControl};
use crate::error::{Error, Result};
use crate::learning::{
    make_sample, Dataset, ErrorModel, GaussianBelief, LearnerKind, ModelSlot, Sample, Trainer,
    TrainerProgress,
};
use crate::scalar::{lit, to_f64, Real};

/// Per-step values that are not part of the telemetry CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    /// `‖m_i(x_t) − δ(x_t)‖`
    pub model_error: f64,
    /// Whether both components of `ȳ − m_i(x̄)` fall within `2σ_i(x̄)`.
    pub within_two_sigma: bool,
    pub speed: f64,
    /// Control before saturation.
    pub requested_u: [f64; 2],
    /// Measured controller latency, recorded even when telemetry omits it.
    pub step_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunEvent {
    pub t: f64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub scenario: String,
    pub controller: String,
    pub learner: String,
    pub seed: u64,
    pub dt: f64,
    pub rows: Vec<TelemetryRow>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub events: Vec<RunEvent>,
    pub trainer: TrainerProgress,
    /// Learner dataset at the end of the run.
    pub dataset: Dataset<f64>,
}

impl RunRecord {
    /// File stem `<scenario>__<controller>__<learner>__seed<N>`.
    pub fn file_stem(&self) -> String {
        run_file_stem(&self.scenario, &self.controller, &self.learner, self.seed)
    }

    /// Fraction of learner residuals within two predicted standard deviations.
    pub fn calibration(&self) -> f64 {
        if self.diagnostics.is_empty() {
            return f64::NAN;
        }
        self.diagnostics
            .iter()
            .filter(|d| d.within_two_sigma)
            .count() as f64
            / self.diagnostics.len() as f64
    }

    pub fn min_h(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.min_h)
            .fold(f64::INFINITY, f64::min)
    }

    /// Mean position error over `[from, to)`.
    pub fn mean_error(&self, from: f64, to: f64) -> f64 {
        let (sum, n) = self
            .rows
            .iter()
            .filter(|r| r.t >= from - 1e-9 && r.t < to - 1e-9)
            .fold((0.0, 0usize), |(s, n), r| (s + r.e_norm, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }
}

pub fn run_file_stem(scenario: &str, controller: &str, learner: &str, seed: u64) -> String {
    format!("{scenario}__{controller}__{learner}__seed{seed}")
}

/// Runs the scenario in `f64`.
pub fn run(scenario: &Scenario) -> Result<RunRecord> {
    run_with::<f64>(scenario, &mut |_, _| {})
}

/// Runs the scenario, calling `observer` after every control step.
pub fn run_with<T: Real>(
    scenario: &Scenario,
    observer: &mut dyn FnMut(usize, &StepOutput<T>),
) -> Result<RunRecord> {
    scenario.validate()?;
    let dt = lit::<T>(scenario.dt);
    let reference = Reference::<T>::new(&scenario.reference)?;
    let controller = Controller::new(scenario.controller_config::<T>())?;
    let barriers = scenario.barriers.build::<T>()?;
    let plant = Plant::new(scenario.plant.diffusion::<T>(), scenario.plant.disturbance);
    let learner = scenario.learner;
    let features = learner.features;

    let mut z = initial_state(scenario, &reference);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let bounds = learner.sigma_bounds;
    let slot = Arc::new(ModelSlot::new(GaussianBelief::prior(
        lit::<T>(learner.sigma0),
        bounds,
    )));
    if learner.kind == LearnerKind::Oracle {
        slot.publish(if scenario.plant.disturbance {
            ErrorModel::Oracle
        } else {
            ErrorModel::Zero
        });
    }
    let mut trainer = match learner.kind {
        LearnerKind::Gp | LearnerKind::Blr => Some(Trainer::spawn(learner, Arc::clone(&slot))?),
        _ => None,
    };
    let mut dataset = Dataset::<T>::new(learner.window(), features.dim())?;
    // (job id, step at which it must be installed)
    let mut pending: VecDeque<(usize, usize)> = VecDeque::new();
    let mut since_submit = 0usize;
    // The trainer publishes as soon as a fit finishes; the loop only picks a
    // model up at its scheduled install step so runs replay exactly.
    let mut belief = slot.snapshot();

    let steps = scenario.steps();
    let mut rows = Vec::with_capacity(steps);
    let mut diagnostics = Vec::with_capacity(steps);
    let mut events = Vec::new();
    let mut u_prev = VehicleControl::zero();

    for k in 0..steps {
        let t_f = k as f64 * scenario.dt;
        let t = lit::<T>(t_f);
        if let Some(tr) = trainer.as_ref() {
            while let Some(&(id, due)) = pending.front() {
                if due > k {
                    break;
                }
                tr.wait_for(id)?;
                pending.pop_front();
                belief = slot.snapshot();
            }
        }
        let r = reference.at(t);
        let f_hat = plant.nominal_drift(&z);

        let started = Instant::now();
        let out = controller.step(&StepInput {
            z: &z,
            reference: &r,
            belief: &belief,
            barriers: &barriers,
            u_prev: &u_prev,
            f_hat: &f_hat,
        })?;
        let step_ms = started.elapsed().as_secs_f64() * 1e3;
        observer(k, &out);
        let tel = &out.telemetry;
        if let Some(e) = &tel.event {
            events.push(RunEvent {
                t: t_f,
                message: e.clone(),
            });
        }

        let u = out.u;
        let z_next = plant.step(&z, &u, dt, &mut rng);
        if !z_next.is_finite() {
            return Err(Error::Diverged { t: t_f });
        }

        let sample = make_sample(
            t,
            &z,
            &z_next,
            &u,
            &u_prev,
            dt,
            &f_hat,
            &plant_gain(&z),
            features,
        )?;
        let pred = belief.predict(&sample.x);
        let resid = sample.y - pred.mean;
        let two_sigma = pred.sigma.diagonal() * lit::<T>(2.0);
        let within = resid[0].abs() <= two_sigma[0] && resid[1].abs() <= two_sigma[1];
        let delta = if scenario.plant.disturbance {
            true_disturbance(&z)
        } else {
            Vector2::zeros()
        };
        dataset.push(sample)?;
        since_submit += 1;

        if let Some(tr) = trainer.as_mut() {
            if t_f + 1e-9 >= learner.warmup && since_submit >= learner.retrain_every {
                let id = tr.submit(dataset.snapshot())?;
                pending.push_back((id, k + 1 + learner.publish_lag_steps));
                since_submit = 0;
            }
        }

        let zv = z.as_vector();
        rows.push(TelemetryRow {
            t: t_f,
            z: [to_f64(zv[0]), to_f64(zv[1]), to_f64(zv[2]), to_f64(zv[3])],
            xrm: [
                to_f64(r.x_rm[0]),
                to_f64(r.x_rm[1]),
                to_f64(r.x_rm[2]),
                to_f64(r.x_rm[3]),
            ],
            e_norm: to_f64(tel.e_norm),
            v: to_f64(tel.lyapunov),
            d1: to_f64(tel.d1),
            d2: to_f64(tel.d2),
            min_h: tel.min_h.map(to_f64).unwrap_or(f64::INFINITY),
            u_c: to_f64(u.curvature),
            u_a: to_f64(u.accel),
            sigma1: to_f64(tel.sigma[0]),
            sigma2: to_f64(tel.sigma[1]),
            model_index: tel.model_index,
            solver_status: tel.status.as_str().to_string(),
            step_ms: if scenario.record_timing { step_ms } else { 0.0 },
        });
        diagnostics.push(StepDiagnostics {
            model_error: to_f64((pred.mean - delta).norm()),
            within_two_sigma: within,
            speed: to_f64(z.speed()),
            requested_u: [
                to_f64(tel.control.requested.curvature),
                to_f64(tel.control.requested.accel),
            ],
            step_ms,
        });

        u_prev = u;
        z = z_next;
    }

    let progress = match trainer.take() {
        Some(tr) => tr.shutdown()?,
        None => TrainerProgress::default(),
    };
    for e in &progress.errors {
        events.push(RunEvent {
            t: scenario.duration,
            message: format!("trainer: {e}"),
        });
    }

    Ok(RunRecord {
        scenario: scenario.name.clone(),
        controller: scenario.controller.kind.as_str().to_string(),
        learner: learner.kind.as_str().to_string(),
        seed: scenario.seed,
        dt: scenario.dt,
        rows,
        diagnostics,
        events,
        trainer: progress,
        dataset: to_f64_dataset(&dataset)?,
    })
}

fn initial_state<T: Real>(scenario: &Scenario, reference: &Reference<T>) -> CanonicalState<T> {
    let init = &scenario.initial;
    if let Some(p) = init.pose {
        return CanonicalState::from_bicycle(lit(p[0]), lit(p[1]), lit(p[2]), lit(p[3]));
    }
    let r = reference.at(T::zero()).x_rm;
    CanonicalState::new(
        r[0] + lit(init.position_offset[0]),
        r[1] + lit(init.position_offset[1]),
        r[2] + lit(init.velocity_offset[0]),
        r[3] + lit(init.velocity_offset[1]),
    )
}

fn to_f64_dataset<T: Real>(d: &Dataset<T>) -> Result<Dataset<f64>> {
    let mut out = Dataset::new(d.capacity(), d.input_dim())?;
    for s in d.iter() {
        out.push(Sample {
            t: to_f64(s.t),
            x: s.x.map(to_f64),
            y: s.y.map(to_f64),
        })?;
    }
    Ok(out)
}
