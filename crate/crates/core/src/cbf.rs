//! Reciprocal control barrier functions and the stochastic CBF row.
//!
//! Obstacle barriers use `B = 1/(γ_p h + ḣ)` with `h = ‖p − c‖ − r`, which
//! folds the velocity into the barrier so the resulting condition is
//! relative degree one in the pseudo-control. Speed limits use `B = 1/h_v`.
//! Derivatives are analytic over the canonical state `(px, py, vx, vy)`.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};

use crate::dynamics::{CanonicalState, DiffusionMatrix, PseudoControl};
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Circular keep-out region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obstacle<T: Real> {
    pub center: Vector2<T>,
    pub radius: T,
}

impl<T: Real> Obstacle<T> {
    pub fn new(center: Vector2<T>, radius: T) -> Result<Self> {
        if !(radius > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "obstacle radius must be positive, got {radius}"
            )));
        }
        Ok(Self { center, radius })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BarrierKind<T: Real> {
    Obstacle(Obstacle<T>),
    /// Keep speed below the limit.
    VelocityMax(T),
    /// Keep speed above the limit.
    VelocityMin(T),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierSpec<T: Real> {
    pub kind: BarrierKind<T>,
    /// Weight of the position term `γ_p h` (obstacles only).
    pub gamma_p: T,
    /// Scale of the class-K bound `γ₃(h) = γ/h`.
    pub gamma: T,
}

impl<T: Real> BarrierSpec<T> {
    pub fn obstacle(obstacle: Obstacle<T>) -> Self {
        Self {
            kind: BarrierKind::Obstacle(obstacle),
            gamma_p: T::one(),
            gamma: T::one(),
        }
    }

    pub fn velocity_max(v_max: T) -> Self {
        Self {
            kind: BarrierKind::VelocityMax(v_max),
            gamma_p: T::one(),
            gamma: T::one(),
        }
    }

    pub fn velocity_min(v_min: T) -> Self {
        Self {
            kind: BarrierKind::VelocityMin(v_min),
            gamma_p: T::one(),
            gamma: T::one(),
        }
    }

    pub fn with_gains(mut self, gamma_p: T, gamma: T) -> Result<Self> {
        if !(gamma_p > T::zero() && gamma > T::zero()) {
            return Err(Error::InvalidArgument(
                "barrier gains must be positive".into(),
            ));
        }
        self.gamma_p = gamma_p;
        self.gamma = gamma;
        Ok(self)
    }

    /// Level-set value `h` (m for obstacles, m/s for speed limits).
    pub fn h(&self, z: &CanonicalState<T>) -> T {
        match self.kind {
            BarrierKind::Obstacle(obs) => h_obstacle(z, &obs),
            BarrierKind::VelocityMax(v) => v - z.speed(),
            BarrierKind::VelocityMin(v) => z.speed() - v,
        }
    }
}

/// Default lower speed limit for velocity barriers (m/s).
pub const DEFAULT_V_MIN: f64 = 0.2;

pub fn h_obstacle<T: Real>(z: &CanonicalState<T>, obs: &Obstacle<T>) -> T {
    (z.position() - obs.center).norm() - obs.radius
}

/// `ḣ = (p − c)ᵀ v / ‖p − c‖`.
pub fn hdot_obstacle<T: Real>(z: &CanonicalState<T>, obs: &Obstacle<T>) -> Result<T> {
    let rel = z.position() - obs.center;
    let d = rel.norm();
    if d == T::zero() {
        return Err(Error::DegenerateCenter);
    }
    Ok(rel.dot(&z.velocity()) / d)
}

/// Barrier value with first and second derivatives over the canonical state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierJet<T: Real> {
    pub h: T,
    pub value: T,
    pub grad: Vector4<T>,
    pub hess: Matrix4<T>,
}

impl<T: Real> BarrierJet<T> {
    /// `∂²B/∂v²`, the block the diffusion acts on.
    pub fn velocity_hessian(&self) -> Matrix2<T> {
        self.hess.fixed_view::<2, 2>(2, 2).into_owned()
    }

    pub fn velocity_gradient(&self) -> Vector2<T> {
        Vector2::new(self.grad[2], self.grad[3])
    }
}

fn outside<T: Real>(denominator: T) -> Error {
    Error::OutsideSafeSet {
        denominator: to_f64(denominator),
    }
}

pub fn barrier_value<T: Real>(z: &CanonicalState<T>, spec: &BarrierSpec<T>) -> Result<T> {
    barrier_jet(z, spec).map(|j| j.value)
}

/// Computes `B`, `∂B/∂x` and `∂²B/∂x²`.
pub fn barrier_jet<T: Real>(z: &CanonicalState<T>, spec: &BarrierSpec<T>) -> Result<BarrierJet<T>> {
    match spec.kind {
        BarrierKind::Obstacle(obs) => obstacle_jet(z, &obs, spec.gamma_p),
        BarrierKind::VelocityMax(limit) => speed_jet(z, limit, -T::one()),
        BarrierKind::VelocityMin(limit) => speed_jet(z, limit, T::one()),
    }
}

fn obstacle_jet<T: Real>(
    z: &CanonicalState<T>,
    obs: &Obstacle<T>,
    gamma_p: T,
) -> Result<BarrierJet<T>> {
    let rel = z.position() - obs.center;
    let d = rel.norm();
    if d == T::zero() {
        // Sitting on the center is already unsafe.
        return Err(outside(-obs.radius));
    }
    let w = z.velocity();
    let n = rel / d;
    let h = d - obs.radius;
    let hdot = n.dot(&w);
    let denom = gamma_p * h + hdot;
    if !(h > T::zero()) || !(denom > T::zero()) {
        return Err(outside(denom));
    }
    let b = T::one() / denom;

    // D = γ_p h + ḣ
    let proj = Matrix2::identity() - n * n.transpose();
    let w_perp = proj * w;
    let dd_dp = n * gamma_p + w_perp / d;
    let dd_dw = n;
    let d2 = d * d;
    let dd_pp =
        proj * (gamma_p / d) - (proj * hdot + n * w_perp.transpose() + w_perp * n.transpose()) / d2;
    let dd_pw = proj / d;

    let grad_d = Vector4::new(dd_dp.x, dd_dp.y, dd_dw.x, dd_dw.y);
    let mut hess_d = Matrix4::zeros();
    hess_d.fixed_view_mut::<2, 2>(0, 0).copy_from(&dd_pp);
    hess_d.fixed_view_mut::<2, 2>(0, 2).copy_from(&dd_pw);
    hess_d
        .fixed_view_mut::<2, 2>(2, 0)
        .copy_from(&dd_pw.transpose());

    let b2 = b * b;
    let grad = -grad_d * b2;
    let hess = grad_d * grad_d.transpose() * (lit::<T>(2.0) * b2 * b) - hess_d * b2;
    Ok(BarrierJet {
        h,
        value: b,
        grad,
        hess,
    })
}

/// `h = sign · (‖v‖ − limit)`; `sign = −1` for an upper limit.
fn speed_jet<T: Real>(z: &CanonicalState<T>, limit: T, sign: T) -> Result<BarrierJet<T>> {
    let w = z.velocity();
    let v = w.norm();
    let h = sign * (v - limit);
    if !(h > T::zero()) {
        return Err(outside(h));
    }
    let b = T::one() / h;
    let (dh, d2h) = if v > T::default_epsilon() {
        let unit = w / v;
        let proj = Matrix2::identity() - unit * unit.transpose();
        (unit * sign, proj * (sign / v))
    } else {
        // ‖v‖ is not differentiable at rest; treat the barrier as flat there.
        (Vector2::zeros(), Matrix2::zeros())
    };
    let b2 = b * b;
    let gw = -dh * b2;
    let hw = dh * dh.transpose() * (lit::<T>(2.0) * b2 * b) - d2h * b2;
    let mut grad = Vector4::zeros();
    grad[2] = gw.x;
    grad[3] = gw.y;
    let mut hess = Matrix4::zeros();
    hess.fixed_view_mut::<2, 2>(2, 2).copy_from(&hw);
    Ok(BarrierJet {
        h,
        value: b,
        grad,
        hess,
    })
}

/// Coefficients of `Φ⁰ + Φ¹ μ_qp ≤ d²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CbfRow<T: Real> {
    pub phi0: T,
    pub phi1: Vector2<T>,
    /// Level-set value at the state the row was built for.
    pub h: T,
}

/// `½ tr(G σσᵀ Gᵀ ∂²B/∂x²)` via the velocity block of the Hessian.
pub fn cbf_trace_term<T: Real>(jet: &BarrierJet<T>, sigma: &DiffusionMatrix<T>) -> T {
    lit::<T>(0.5) * (sigma * sigma.transpose() * jet.velocity_hessian()).trace()
}

/// Builds the stochastic CBF row
/// `Φ⁰ = ∂Bᵀ(A₀x + Gμ_d) − γ/h + ½tr(GσσᵀGᵀ ∂²B)`, `Φ¹ = ∂BᵀG`,
/// where `μ_d` is the pseudo-acceleration expected on top of `μ_qp`.
pub fn cbf_row<T: Real>(
    z: &CanonicalState<T>,
    spec: &BarrierSpec<T>,
    mu_d: &PseudoControl<T>,
    sigma: &DiffusionMatrix<T>,
) -> Result<CbfRow<T>> {
    let jet = barrier_jet(z, spec)?;
    Ok(cbf_row_from_jet(z, &jet, spec.gamma, mu_d, sigma))
}

pub fn cbf_row_from_jet<T: Real>(
    z: &CanonicalState<T>,
    jet: &BarrierJet<T>,
    gamma: T,
    mu_d: &PseudoControl<T>,
    sigma: &DiffusionMatrix<T>,
) -> CbfRow<T> {
    let w = z.velocity();
    let drift = Vector4::new(w.x, w.y, mu_d.x, mu_d.y);
    let phi0 = jet.grad.dot(&drift) - gamma / jet.h + cbf_trace_term(jet, sigma);
    CbfRow {
        phi0,
        phi1: jet.velocity_gradient(),
        h: jet.h,
    }
}

/// Barriers active for one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierSet<T: Real> {
    pub specs: Vec<BarrierSpec<T>>,
    /// Obstacle rows with `h` above this are dropped from the QP.
    pub cull_radius: T,
}

impl<T: Real> Default for BarrierSet<T> {
    fn default() -> Self {
        Self {
            specs: Vec::new(),
            cull_radius: lit(10.0),
        }
    }
}

impl<T: Real> BarrierSet<T> {
    pub fn new(specs: Vec<BarrierSpec<T>>) -> Self {
        Self {
            specs,
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Adds one obstacle of radius `radius` per point.
    pub fn add_points(
        &mut self,
        points: &[Vector2<T>],
        radius: T,
        gamma_p: T,
        gamma: T,
    ) -> Result<()> {
        for p in points {
            let spec =
                BarrierSpec::obstacle(Obstacle::new(*p, radius)?).with_gains(gamma_p, gamma)?;
            self.specs.push(spec);
        }
        Ok(())
    }

    /// Replaces every obstacle barrier with one per point, keeping speed limits.
    pub fn replace_points(
        &mut self,
        points: &[Vector2<T>],
        radius: T,
        gamma_p: T,
        gamma: T,
    ) -> Result<()> {
        self.specs
            .retain(|s| !matches!(s.kind, BarrierKind::Obstacle(_)));
        self.add_points(points, radius, gamma_p, gamma)
    }

    pub fn obstacles(&self) -> impl Iterator<Item = &Obstacle<T>> {
        self.specs.iter().filter_map(|s| match &s.kind {
            BarrierKind::Obstacle(o) => Some(o),
            _ => None,
        })
    }

    /// Smallest obstacle clearance `h`, over all obstacles (no culling).
    pub fn min_obstacle_h(&self, z: &CanonicalState<T>) -> Option<T> {
        self.obstacles()
            .map(|o| h_obstacle(z, o))
            .fold(None, |m, h| Some(m.map_or(h, |m: T| m.min(h))))
    }

    /// CBF rows for every non-culled barrier.
    pub fn rows(
        &self,
        z: &CanonicalState<T>,
        mu_d: &PseudoControl<T>,
        sigma: &DiffusionMatrix<T>,
    ) -> Result<Vec<CbfRow<T>>> {
        let mut rows = Vec::with_capacity(self.specs.len());
        for spec in &self.specs {
            if let BarrierKind::Obstacle(obs) = &spec.kind {
                if h_obstacle(z, obs) > self.cull_radius {
                    continue;
                }
            }
            rows.push(cbf_row(z, spec, mu_d, sigma)?);
        }
        Ok(rows)
    }
}
