//! Per-step control law and the baseline controllers.
//!
//! The pseudo-control is `μ = μ_rm + μ_pd + μ_qp − μ_ad`, mapped to the
//! vehicle through `u = g⁻¹(μ − f̂)`.

use nalgebra::{Matrix2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::cbf::BarrierSet;
use crate::clf::{clf_row, ClfGains, ErrorState, LyapunovCertificate};
use crate::dynamics::{
    canonical_to_vehicle, inverse_gain, CanonicalState, ControlBox, MappedControl, PseudoControl,
    SpeedFloor, VehicleControl, V_EPS,
};
use crate::error::{Error, Result};
use crate::learning::{GaussianBelief, InputFeatures};
use crate::qp::{
    control_rows, AdmmSettings, AdmmSolver, QpProblem, QpSolution, QpWeights, SolverStatus,
};
use crate::scalar::{lit, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// `μ_rm + μ_pd`
    Pd,
    /// `μ_rm + μ_pd − μ_ad`
    Ad,
    /// `μ_rm + μ_pd + μ_qp` with `m ≡ 0`, `σ = σ₀ I`
    Qp,
    /// QP with `m ≡ 0` and a fixed robust `σ`
    Rob,
    /// Full learned mean and uncertainty
    #[default]
    Balsa,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::Pd,
        ControllerKind::Ad,
        ControllerKind::Qp,
        ControllerKind::Rob,
        ControllerKind::Balsa,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Pd => "pd",
            ControllerKind::Ad => "ad",
            ControllerKind::Qp => "qp",
            ControllerKind::Rob => "rob",
            ControllerKind::Balsa => "balsa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn uses_qp(&self) -> bool {
        matches!(
            self,
            ControllerKind::Qp | ControllerKind::Rob | ControllerKind::Balsa
        )
    }

    pub fn uses_learned_mean(&self) -> bool {
        matches!(self, ControllerKind::Ad | ControllerKind::Balsa)
    }
}

/// Which acceleration the barrier rows assume on top of `μ_qp`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierDrift {
    /// Predicted realized acceleration `μ_rm + μ_pd − μ_ad + m(x)`: the
    /// learned mean cancels the disturbance it compensates.
    #[default]
    Realized,
    /// Commanded pseudo-control `μ_rm + μ_pd − μ_ad`.
    Commanded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferencePoint<T: Real> {
    /// `(x_rm, y_rm, ẋ_rm, ẏ_rm)`
    pub x_rm: Vector4<T>,
    /// Reference acceleration `μ_rm`.
    pub mu_rm: Vector2<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerConfig<T: Real> {
    pub kind: ControllerKind,
    pub gains: ClfGains<T>,
    pub weights: QpWeights<T>,
    pub bounds: ControlBox<T>,
    pub v_eps: T,
    pub speed_floor: SpeedFloor,
    /// `σ` used by [`ControllerKind::Rob`].
    pub robust_sigma: T,
    /// `σ₀` used by [`ControllerKind::Qp`].
    pub sigma0: T,
    pub barrier_drift: BarrierDrift,
    pub features: InputFeatures,
    pub solver: AdmmSettings<T>,
    /// `MaxIter` iterates with primal residual below this are still applied.
    pub max_iter_accept: T,
}

impl<T: Real> Default for ControllerConfig<T> {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Balsa,
            gains: ClfGains::default(),
            weights: QpWeights::default(),
            bounds: ControlBox::default(),
            v_eps: lit(V_EPS),
            speed_floor: SpeedFloor::Clamp,
            robust_sigma: T::one(),
            sigma0: T::one(),
            barrier_drift: BarrierDrift::Realized,
            features: InputFeatures::default(),
            solver: AdmmSettings::default(),
            max_iter_accept: lit(1e-4),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    /// Controller kind without a QP.
    NoQp,
    Solver(SolverStatus),
    /// Solver failure or unsafe state; braking fallback applied.
    Fallback,
}

impl StepStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepStatus::NoQp => "none",
            StepStatus::Solver(s) => s.as_str(),
            StepStatus::Fallback => "fallback",
        }
    }
}

pub struct StepInput<'a, T: Real> {
    pub z: &'a CanonicalState<T>,
    pub reference: &'a ReferencePoint<T>,
    pub belief: &'a GaussianBelief<T>,
    pub barriers: &'a BarrierSet<T>,
    /// Control applied on the previous step (learner input).
    pub u_prev: &'a VehicleControl<T>,
    /// Nominal drift `f̂(z)`.
    pub f_hat: &'a Vector2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepTelemetry<T: Real> {
    pub error: ErrorState<T>,
    /// Position tracking error norm.
    pub e_norm: T,
    /// `V(e)`
    pub lyapunov: T,
    pub d1: T,
    pub d2: T,
    /// Smallest obstacle clearance, `None` without obstacles.
    pub min_h: Option<T>,
    /// Diagonal of the `σ` the controller used.
    pub sigma: Vector2<T>,
    pub model_mean: Vector2<T>,
    pub model_index: usize,
    pub mu_qp: Vector2<T>,
    pub mu_total: PseudoControl<T>,
    pub control: MappedControl<T>,
    pub status: StepStatus,
    pub qp_rows: usize,
    pub iterations: usize,
    /// Why the fallback was taken, if it was.
    pub event: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput<T: Real> {
    pub u: VehicleControl<T>,
    pub telemetry: StepTelemetry<T>,
    /// The QP that was solved, if any.
    pub problem: Option<QpProblem<T>>,
    pub solution: Option<QpSolution<T>>,
}

#[derive(Clone, Debug)]
pub struct Controller<T: Real> {
    pub config: ControllerConfig<T>,
    pub certificate: LyapunovCertificate<T>,
    solver: AdmmSolver<T>,
}

/// `μ_pd = [−K_P −K_D] e`.
pub fn pd_term<T: Real>(e: &ErrorState<T>, kp: &Matrix2<T>, kd: &Matrix2<T>) -> PseudoControl<T> {
    -(kp * Vector2::new(e[0], e[1])) - kd * Vector2::new(e[2], e[3])
}

impl<T: Real> Controller<T> {
    pub fn new(config: ControllerConfig<T>) -> Result<Self> {
        let certificate = LyapunovCertificate::new(&config.gains)?;
        if !(config.weights.p1 > T::zero() && config.weights.p2 > T::zero()) {
            return Err(Error::InvalidArgument("QP weights must be positive".into()));
        }
        Ok(Self {
            config,
            certificate,
            solver: AdmmSolver::new(config.solver),
        })
    }

    pub fn kind(&self) -> ControllerKind {
        self.config.kind
    }

    pub fn step(&self, input: &StepInput<'_, T>) -> Result<StepOutput<T>> {
        let cfg = &self.config;
        let z = input.z;
        let e: ErrorState<T> = z.as_vector() - input.reference.x_rm;
        let e_norm = Vector2::new(e[0], e[1]).norm();
        let lyapunov = self.certificate.value(&e);
        let mu_pd = pd_term(&e, &cfg.gains.kp, &cfg.gains.kd);
        let mu_rm = input.reference.mu_rm;

        let x_bar = cfg.features.build(z, input.u_prev);
        let prediction = input.belief.predict(&x_bar);
        let mean = if cfg.kind.uses_learned_mean() {
            prediction.mean
        } else {
            Vector2::zeros()
        };
        let sigma = match cfg.kind {
            ControllerKind::Qp => {
                Matrix2::from_diagonal_element(input.belief.bounds.clamp(cfg.sigma0))
            }
            ControllerKind::Rob => Matrix2::from_diagonal_element(cfg.robust_sigma),
            _ => prediction.sigma,
        };

        let mut telemetry = StepTelemetry {
            error: e,
            e_norm,
            lyapunov,
            d1: T::zero(),
            d2: T::zero(),
            min_h: input.barriers.min_obstacle_h(z),
            sigma: sigma.diagonal(),
            model_mean: prediction.mean,
            model_index: input.belief.index,
            mu_qp: Vector2::zeros(),
            mu_total: Vector2::zeros(),
            control: MappedControl {
                requested: VehicleControl::zero(),
                applied: VehicleControl::zero(),
                saturated: false,
            },
            status: StepStatus::NoQp,
            qp_rows: 0,
            iterations: 0,
            event: None,
        };

        // pseudo-control without μ_qp
        let base = mu_rm + mu_pd - mean;
        let mut problem = None;
        let mut solution = None;
        let mut mu_qp = Vector2::zeros();

        if cfg.kind.uses_qp() {
            let mu_d = match cfg.barrier_drift {
                BarrierDrift::Realized => base + mean,
                BarrierDrift::Commanded => base,
            };
            let clf = clf_row(&e, &self.certificate, &sigma);
            let cbf = match input.barriers.rows(z, &mu_d, &sigma) {
                Ok(rows) => rows,
                Err(err @ Error::OutsideSafeSet { .. }) | Err(err @ Error::DegenerateCenter) => {
                    return self.fallback(input, telemetry, err.to_string(), None, None);
                }
                Err(err) => return Err(err),
            };
            let g_inv = inverse_gain(z, cfg.v_eps, cfg.speed_floor)?;
            let ctrl = control_rows(&g_inv, &base, input.f_hat, &cfg.bounds);
            let qp = QpProblem::assemble(&clf, &cbf, &ctrl, cfg.weights);
            let sol = qp.solve(&self.solver);
            telemetry.qp_rows = qp.rows.len();
            telemetry.iterations = sol.iterations;
            telemetry.status = StepStatus::Solver(sol.status);
            let usable = match sol.status {
                SolverStatus::Optimal => true,
                SolverStatus::MaxIter => sol.kkt.primal < cfg.max_iter_accept,
                SolverStatus::Infeasible => false,
            } && sol.as_vector().iter().all(|v| v.is_finite());
            if !usable {
                let why = format!("QP solve failed: {}", sol.status.as_str());
                return self.fallback(input, telemetry, why, Some(qp), Some(sol));
            }
            mu_qp = sol.mu_qp;
            telemetry.d1 = sol.d1;
            telemetry.d2 = sol.d2;
            problem = Some(qp);
            solution = Some(sol);
        }

        let mu_total = base + mu_qp;
        let mapped = canonical_to_vehicle(
            &mu_total,
            z,
            input.f_hat,
            &cfg.bounds,
            cfg.v_eps,
            cfg.speed_floor,
        )?;
        telemetry.mu_qp = mu_qp;
        telemetry.mu_total = mu_total;
        telemetry.control = mapped;
        Ok(StepOutput {
            u: mapped.applied,
            telemetry,
            problem,
            solution,
        })
    }

    /// `μ_rm + μ_pd` with full braking.
    fn fallback(
        &self,
        input: &StepInput<'_, T>,
        mut telemetry: StepTelemetry<T>,
        event: String,
        problem: Option<QpProblem<T>>,
        solution: Option<QpSolution<T>>,
    ) -> Result<StepOutput<T>> {
        let cfg = &self.config;
        let mu = input.reference.mu_rm + pd_term(&telemetry.error, &cfg.gains.kp, &cfg.gains.kd);
        let mut mapped = canonical_to_vehicle(
            &mu,
            input.z,
            input.f_hat,
            &cfg.bounds,
            cfg.v_eps,
            cfg.speed_floor,
        )?;
        mapped.applied.accel = cfg.bounds.accel_min;
        telemetry.mu_total = mu;
        telemetry.control = mapped;
        telemetry.status = StepStatus::Fallback;
        telemetry.event = Some(event);
        Ok(StepOutput {
            u: mapped.applied,
            telemetry,
            problem,
            solution,
        })
    }
}
