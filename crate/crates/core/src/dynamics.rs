//! Canonical second-order vehicle dynamics.
//!
//! The kinematic bicycle `(px, py, θ, v)` with controls `u = (c, a)`
//! (curvature `tan(ψ)/L`, acceleration) is rewritten as a double integrator
//! over `z = (px, py, vx, vy)`:
//!
//! ```text
//! d(z1, z2) = (z3, z4) dt
//! d(z3, z4) = (f(z) + g(z) u) dt + Σ dξ
//! ```
//!
//! with `g = [[-v² sinθ, cosθ], [v² cosθ, sinθ]]`, `det g = -v²`.

use nalgebra::{Matrix2, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Default speed floor below which the control gain is clamped.
pub const V_EPS: f64 = 0.1;

/// Pseudo-acceleration in canonical coordinates (m/s²).
pub type PseudoControl<T> = Vector2<T>;

/// Diffusion acting on the velocity states (m/s² per √s).
pub type DiffusionMatrix<T> = Matrix2<T>;

/// Canonical state `z = (px, py, vx, vy)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonicalState<T: Real>(pub Vector4<T>);

impl<T: Real> CanonicalState<T> {
    pub fn new(z1: T, z2: T, z3: T, z4: T) -> Self {
        Self(Vector4::new(z1, z2, z3, z4))
    }

    pub fn from_parts(position: Vector2<T>, velocity: Vector2<T>) -> Self {
        Self::new(position.x, position.y, velocity.x, velocity.y)
    }

    /// Maps a bicycle pose `(px, py, θ, v)` to canonical coordinates.
    pub fn from_bicycle(px: T, py: T, theta: T, v: T) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(px, py, v * c, v * s)
    }

    /// Inverse of [`CanonicalState::from_bicycle`]; heading is `0` at rest.
    pub fn to_bicycle(&self) -> (T, T, T, T) {
        (self.0[0], self.0[1], self.heading(), self.speed())
    }

    pub fn position(&self) -> Vector2<T> {
        Vector2::new(self.0[0], self.0[1])
    }

    pub fn velocity(&self) -> Vector2<T> {
        Vector2::new(self.0[2], self.0[3])
    }

    pub fn speed(&self) -> T {
        self.velocity().norm()
    }

    pub fn heading(&self) -> T {
        self.0[3].atan2(self.0[2])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn as_vector(&self) -> &Vector4<T> {
        &self.0
    }
}

/// Physical vehicle command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleControl<T: Real> {
    /// Curvature `tan(ψ)/L` (1/m).
    pub curvature: T,
    /// Longitudinal acceleration (m/s²).
    pub accel: T,
}

impl<T: Real> VehicleControl<T> {
    pub fn new(curvature: T, accel: T) -> Self {
        Self { curvature, accel }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn as_vector(&self) -> Vector2<T> {
        Vector2::new(self.curvature, self.accel)
    }

    pub fn from_vector(u: &Vector2<T>) -> Self {
        Self::new(u.x, u.y)
    }
}

/// Box constraint `H u ≤ b` on the physical controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlBox<T: Real> {
    pub curvature_max: T,
    pub accel_min: T,
    pub accel_max: T,
}

impl<T: Real> Default for ControlBox<T> {
    fn default() -> Self {
        // tan(50°) / 0.48 m wheelbase ≈ 2.5 1/m.
        Self {
            curvature_max: lit(2.5),
            accel_min: lit(-4.0),
            accel_max: lit(4.0),
        }
    }
}

impl<T: Real> ControlBox<T> {
    /// Rows of `H` (each a 2-vector over `(c, a)`) and the matching `b`.
    pub fn halfspaces(&self) -> [(Vector2<T>, T); 4] {
        let one = T::one();
        let zero = T::zero();
        [
            (Vector2::new(one, zero), self.curvature_max),
            (Vector2::new(-one, zero), self.curvature_max),
            (Vector2::new(zero, one), self.accel_max),
            (Vector2::new(zero, -one), -self.accel_min),
        ]
    }

    pub fn contains(&self, u: &VehicleControl<T>, tol: T) -> bool {
        self.halfspaces()
            .iter()
            .all(|(h, b)| h.dot(&u.as_vector()) <= *b + tol)
    }

    /// Clamps `u` into the box, reporting whether anything moved.
    pub fn clamp(&self, u: VehicleControl<T>) -> (VehicleControl<T>, bool) {
        let c = u.curvature.clamp(-self.curvature_max, self.curvature_max);
        let a = u.accel.clamp(self.accel_min, self.accel_max);
        let saturated = c != u.curvature || a != u.accel;
        (VehicleControl::new(c, a), saturated)
    }
}

/// How the inverse gain treats speeds below the floor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpeedFloor {
    /// Use `max(v, v_eps)` in the `v²` terms.
    #[default]
    Clamp,
    /// Fail with [`Error::SingularGain`].
    Reject,
}

/// Exact control gain `g(z)` as seen by the plant.
pub fn plant_gain<T: Real>(z: &CanonicalState<T>) -> Matrix2<T> {
    gain_with_speed(z.heading(), z.speed())
}

fn gain_with_speed<T: Real>(theta: T, v: T) -> Matrix2<T> {
    let (s, c) = theta.sin_cos();
    let v2 = v * v;
    Matrix2::new(-v2 * s, c, v2 * c, s)
}

fn effective_speed<T: Real>(z: &CanonicalState<T>, v_eps: T, floor: SpeedFloor) -> Result<T> {
    let v = z.speed();
    if v >= v_eps {
        return Ok(v);
    }
    match floor {
        SpeedFloor::Clamp => Ok(v_eps),
        SpeedFloor::Reject => Err(Error::SingularGain {
            speed: to_f64(v),
            floor: to_f64(v_eps),
        }),
    }
}

/// Control gain `g(z)`; below `v_eps` the speed is floored or rejected.
pub fn control_gain<T: Real>(
    z: &CanonicalState<T>,
    v_eps: T,
    floor: SpeedFloor,
) -> Result<Matrix2<T>> {
    let v = effective_speed(z, v_eps, floor)?;
    Ok(gain_with_speed(z.heading(), v))
}

/// Closed-form `g(z)⁻¹ = [[-sinθ/v², cosθ/v²], [cosθ, sinθ]]`.
pub fn inverse_gain<T: Real>(
    z: &CanonicalState<T>,
    v_eps: T,
    floor: SpeedFloor,
) -> Result<Matrix2<T>> {
    let v = effective_speed(z, v_eps, floor)?;
    let (s, c) = z.heading().sin_cos();
    let inv_v2 = T::one() / (v * v);
    Ok(Matrix2::new(-s * inv_v2, c * inv_v2, c, s))
}

/// Injected "true" model error: a speed-dependent drag along the heading
/// plus a sideways push to the right, rotated into the world frame.
pub fn true_disturbance<T: Real>(z: &CanonicalState<T>) -> Vector2<T> {
    let v = z.speed();
    let body = Vector2::new(-(v * v).tanh(), -(lit::<T>(0.1) + v));
    rotation(z.heading()) * body
}

pub fn rotation<T: Real>(theta: T) -> Matrix2<T> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Result of mapping a pseudo-control to the physical controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MappedControl<T: Real> {
    /// `g⁻¹(μ − f̂)` before saturation.
    pub requested: VehicleControl<T>,
    /// Requested control clamped to the box.
    pub applied: VehicleControl<T>,
    pub saturated: bool,
}

/// Pre-control law `u = g(z)⁻¹ (μ − f̂(z))`, clamped to the box.
pub fn canonical_to_vehicle<T: Real>(
    mu_total: &PseudoControl<T>,
    z: &CanonicalState<T>,
    f_hat: &Vector2<T>,
    bounds: &ControlBox<T>,
    v_eps: T,
    floor: SpeedFloor,
) -> Result<MappedControl<T>> {
    let g_inv = inverse_gain(z, v_eps, floor)?;
    let requested = VehicleControl::from_vector(&(g_inv * (mu_total - f_hat)));
    let (applied, saturated) = bounds.clamp(requested);
    Ok(MappedControl {
        requested,
        applied,
        saturated,
    })
}

/// Simulated plant: nominal drift `f̂ ≡ 0`, optional injected disturbance,
/// and additive velocity diffusion `Σ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plant<T: Real> {
    pub diffusion: DiffusionMatrix<T>,
    pub disturbance: bool,
}

impl<T: Real> Plant<T> {
    pub fn new(diffusion: DiffusionMatrix<T>, disturbance: bool) -> Self {
        Self {
            diffusion,
            disturbance,
        }
    }

    /// Nominal drift model `f̂(z)` known to the controller.
    pub fn nominal_drift(&self, _z: &CanonicalState<T>) -> Vector2<T> {
        Vector2::zeros()
    }

    /// True drift `f(z) = f̂(z) + δ(z)`.
    pub fn drift(&self, z: &CanonicalState<T>) -> Vector2<T> {
        let mut f = self.nominal_drift(z);
        if self.disturbance {
            f += true_disturbance(z);
        }
        f
    }

    /// Euler–Maruyama step with noise drawn from `rng`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        z: &CanonicalState<T>,
        u: &VehicleControl<T>,
        dt: T,
        rng: &mut R,
    ) -> CanonicalState<T> {
        let w1: f64 = rng.sample(StandardNormal);
        let w2: f64 = rng.sample(StandardNormal);
        step_sde(
            z,
            u,
            dt,
            &self.drift(z),
            &self.diffusion,
            &Vector2::new(lit(w1), lit(w2)),
        )
    }
}

/// One Euler–Maruyama step given the drift at `z` and a standard-normal draw.
pub fn step_sde<T: Real>(
    z: &CanonicalState<T>,
    u: &VehicleControl<T>,
    dt: T,
    drift: &Vector2<T>,
    diffusion: &DiffusionMatrix<T>,
    noise: &Vector2<T>,
) -> CanonicalState<T> {
    let vel = z.velocity();
    let accel = drift + plant_gain(z) * u.as_vector();
    let next_pos = z.position() + vel * dt;
    let next_vel = vel + accel * dt + diffusion * noise * dt.sqrt();
    CanonicalState::from_parts(next_pos, next_vel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn state(theta: f64, v: f64) -> CanonicalState<f64> {
        CanonicalState::from_bicycle(0.0, 0.0, theta, v)
    }

    #[test]
    fn bicycle_transform_examples() {
        let z = CanonicalState::from_bicycle(0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(z.0, Vector4::new(0.0, 0.0, 1.0, 0.0));
        let z = CanonicalState::from_bicycle(1.0, 2.0, FRAC_PI_2, 2.0);
        assert_relative_eq!(z.0, Vector4::new(1.0, 2.0, 0.0, 2.0), epsilon = 1e-15);
        let z = CanonicalState::from_bicycle(0.0, 0.0, FRAC_PI_4, 2f64.sqrt());
        assert_relative_eq!(z.0, Vector4::new(0.0, 0.0, 1.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn gain_examples() {
        let g = control_gain(&state(0.0, 1.0), V_EPS, SpeedFloor::Reject).unwrap();
        assert_relative_eq!(g, Matrix2::new(0.0, 1.0, 1.0, 0.0));
        let g = control_gain(&state(FRAC_PI_2, 2.0), V_EPS, SpeedFloor::Reject).unwrap();
        assert_relative_eq!(g, Matrix2::new(-4.0, 0.0, 0.0, 1.0), epsilon = 1e-14);
        let g = control_gain(&state(0.7, 1.5), V_EPS, SpeedFloor::Reject).unwrap();
        assert_relative_eq!(g.determinant(), -2.25, epsilon = 1e-12);
    }

    #[test]
    fn gain_matches_finite_difference_of_bicycle() {
        // ż3 = d/dt(v cosθ) with θ̇ = v c, v̇ = a.
        let (theta, v) = (0.4, 1.3);
        let h = 1e-6;
        let vel = |th: f64, sp: f64| Vector2::new(sp * th.cos(), sp * th.sin());
        let base = vel(theta, v);
        let dc = (vel(theta + v * h, v) - base) / h;
        let da = (vel(theta, v + h) - base) / h;
        let g = plant_gain(&state(theta, v));
        assert_relative_eq!(g.column(0).into_owned(), dc, epsilon = 1e-5);
        assert_relative_eq!(g.column(1).into_owned(), da, epsilon = 1e-5);
    }

    #[test]
    fn singular_gain_rejected_or_clamped() {
        let z = state(0.3, 0.05);
        assert!(matches!(
            control_gain(&z, V_EPS, SpeedFloor::Reject),
            Err(Error::SingularGain { .. })
        ));
        let g = control_gain(&z, V_EPS, SpeedFloor::Clamp).unwrap();
        assert_relative_eq!(g.determinant(), -V_EPS * V_EPS, epsilon = 1e-15);
    }

    #[test]
    fn inverse_gain_is_inverse() {
        for k in 0..50 {
            let theta = -PI + 0.13 * k as f64;
            let v = 0.1 + 0.07 * k as f64;
            let z = state(theta, v);
            let g = control_gain(&z, V_EPS, SpeedFloor::Reject).unwrap();
            let gi = inverse_gain(&z, V_EPS, SpeedFloor::Reject).unwrap();
            assert!((g * gi - Matrix2::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn heading_and_speed_round_trip() {
        for k in 0..40 {
            let theta = -3.0 + 0.15 * k as f64;
            let v = 0.2 + 0.1 * k as f64;
            let (_, _, th, sp) = CanonicalState::from_bicycle(1.0, -2.0, theta, v).to_bicycle();
            assert_relative_eq!(sp, v, epsilon = 1e-12);
            let diff = (th - theta).rem_euclid(2.0 * PI);
            assert!(diff < 1e-12 || 2.0 * PI - diff < 1e-12);
        }
    }

    #[test]
    fn disturbance_examples() {
        assert_relative_eq!(true_disturbance(&state(0.0, 0.0)), Vector2::new(0.0, -0.1));
        let d = true_disturbance(&state(0.0, 1.0));
        assert_relative_eq!(d, Vector2::new(-1f64.tanh(), -1.1), epsilon = 1e-15);
        assert_relative_eq!(d.x, -0.7616, epsilon = 1e-4);
        let rotated = true_disturbance(&state(FRAC_PI_2, 1.0));
        assert_relative_eq!(rotated, rotation(FRAC_PI_2) * d, epsilon = 1e-14);
    }

    #[test]
    fn disturbance_is_rotation_equivariant() {
        for k in 0..30 {
            let theta = 0.21 * k as f64;
            let phi = 1.0 - 0.09 * k as f64;
            let v = 0.1 + 0.11 * k as f64;
            let lhs = true_disturbance(&state(theta + phi, v));
            let rhs = rotation(phi) * true_disturbance(&state(theta, v));
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn free_drift_step() {
        let z = state(0.0, 1.0);
        let next = step_sde(
            &z,
            &VehicleControl::zero(),
            0.1,
            &Vector2::zeros(),
            &Matrix2::zeros(),
            &Vector2::new(0.7, -1.2),
        );
        assert_relative_eq!(next.0, Vector4::new(0.1, 0.0, 1.0, 0.0));
    }

    #[test]
    fn zero_noise_plant_is_deterministic_euler() {
        let plant = Plant::new(Matrix2::zeros(), true);
        let z = CanonicalState::from_bicycle(0.3, -0.2, 0.5, 1.2);
        let u = VehicleControl::new(0.4, -0.3);
        let mut rng_a = ChaCha8Rng::seed_from_u64(1);
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let a = plant.step(&z, &u, 0.02, &mut rng_a);
        let b = plant.step(&z, &u, 0.02, &mut rng_b);
        assert_eq!(a, b);
        let accel = true_disturbance(&z) + plant_gain(&z) * u.as_vector();
        assert_relative_eq!(a.velocity(), z.velocity() + accel * 0.02, epsilon = 1e-15);
    }

    #[test]
    fn euler_maruyama_increment_moments() {
        // Monte Carlo oracle: mean of (z3, z4) increments equals drift·dt
        // within 3 standard errors; per-axis std equals √dt for Σ = I.
        let plant = Plant::new(Matrix2::identity(), true);
        let z = CanonicalState::from_bicycle(0.0, 0.0, 0.8, 1.4);
        let u = VehicleControl::new(0.2, 0.5);
        let dt = 0.02;
        let expected = (plant.drift(&z) + plant_gain(&z) * u.as_vector()) * dt;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum = Vector2::zeros();
        let mut sum_sq = Vector2::zeros();
        for _ in 0..n {
            let d = plant.step(&z, &u, dt, &mut rng).velocity() - z.velocity();
            sum += d;
            sum_sq += d.component_mul(&d);
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean.component_mul(&mean);
        let se = dt.sqrt() / (n as f64).sqrt();
        for i in 0..2 {
            assert!((mean[i] - expected[i]).abs() < 3.0 * se, "axis {i}");
            assert_relative_eq!(var[i], dt, max_relative = 0.02);
        }
    }

    #[test]
    fn zero_noise_first_order_convergence() {
        let plant = Plant::new(Matrix2::zeros(), true);
        let u = VehicleControl::new(0.3, 0.2);
        let endpoint = |dt: f64| {
            let mut z = CanonicalState::from_bicycle(0.0, 0.0, 0.2, 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let steps = (1.0 / dt).round() as usize;
            for _ in 0..steps {
                z = plant.step(&z, &u, dt, &mut rng);
            }
            z.0
        };
        let reference = endpoint(1e-5);
        let errs: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&dt| (endpoint(dt) - reference).norm())
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.6..2.4).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn canonical_to_vehicle_examples() {
        let bounds = ControlBox::default();
        let z = state(0.0, 1.0);
        let f_hat = Vector2::new(0.3, -0.4);
        let m =
            canonical_to_vehicle(&f_hat, &z, &f_hat, &bounds, V_EPS, SpeedFloor::Reject).unwrap();
        assert_relative_eq!(m.applied.as_vector(), Vector2::zeros());

        let m = canonical_to_vehicle(
            &Vector2::new(0.0, 1.0),
            &z,
            &Vector2::zeros(),
            &bounds,
            V_EPS,
            SpeedFloor::Reject,
        )
        .unwrap();
        assert_relative_eq!(m.applied.as_vector(), Vector2::new(1.0, 0.0));
        // direct solve g u = μ
        let g = plant_gain(&z);
        let direct = g.lu().solve(&Vector2::new(0.0, 1.0)).unwrap();
        assert_relative_eq!(direct, m.applied.as_vector(), epsilon = 1e-14);
        assert!(!m.saturated);

        let m = canonical_to_vehicle(
            &Vector2::new(10.0, 10.0),
            &z,
            &Vector2::zeros(),
            &bounds,
            V_EPS,
            SpeedFloor::Reject,
        )
        .unwrap();
        assert!(m.saturated);
        assert_eq!(m.applied, VehicleControl::new(2.5, 4.0));
        assert!(bounds.contains(&m.applied, 0.0));
    }

    #[test]
    fn generic_over_f32() {
        let z = CanonicalState::<f32>::from_bicycle(0.0, 0.0, 0.3, 1.5);
        let g = control_gain(&z, 0.1f32, SpeedFloor::Reject).unwrap();
        assert!((g.determinant() + 2.25).abs() < 1e-5);
    }
}
