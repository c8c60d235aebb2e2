//! Reference trajectories `x_rm(t)` with analytic `μ_rm = ẍ_rm`.

use nalgebra::{Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::controller::ReferencePoint;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSpec {
    /// `x = a sin ωt`, `y = (a/2) sin 2ωt`, `ω = 2π/period`.
    FigureEight {
        period: f64,
        size: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    /// Natural cubic spline through `points`, timed by chord length at `speed`.
    /// Continues in a straight line after the last point.
    Waypoints { points: Vec<[f64; 2]>, speed: f64 },
}

/// A `C²` trajectory.
#[derive(Clone, Debug, PartialEq)]
pub enum Reference<T: Real> {
    FigureEight {
        omega: T,
        size: T,
        center: Vector2<T>,
    },
    Spline {
        x: CubicSpline<T>,
        y: CubicSpline<T>,
    },
}

impl<T: Real> Reference<T> {
    pub fn new(spec: &ReferenceSpec) -> Result<Self> {
        match spec {
            ReferenceSpec::FigureEight {
                period,
                size,
                center,
            } => {
                if !(*period > 0.0) || !(*size > 0.0) {
                    return Err(Error::Scenario(
                        "figure-eight period and size must be positive".into(),
                    ));
                }
                Ok(Reference::FigureEight {
                    omega: lit(std::f64::consts::TAU / period),
                    size: lit(*size),
                    center: Vector2::new(lit(center[0]), lit(center[1])),
                })
            }
            ReferenceSpec::Waypoints { points, speed } => {
                if points.len() < 2 {
                    return Err(Error::Scenario(
                        "waypoint reference needs at least two points".into(),
                    ));
                }
                if !(*speed > 0.0) {
                    return Err(Error::Scenario("waypoint speed must be positive".into()));
                }
                let mut knots = vec![0.0];
                for w in points.windows(2) {
                    let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
                    if d <= 0.0 {
                        return Err(Error::Scenario("consecutive waypoints must differ".into()));
                    }
                    knots.push(knots.last().unwrap() + d / speed);
                }
                let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
                let ys: Vec<f64> = points.iter().map(|p| p[1]).collect();
                Ok(Reference::Spline {
                    x: CubicSpline::natural(&knots, &xs)?,
                    y: CubicSpline::natural(&knots, &ys)?,
                })
            }
        }
    }

    /// Position, velocity and acceleration at time `t`.
    pub fn at(&self, t: T) -> ReferencePoint<T> {
        match self {
            Reference::FigureEight {
                omega,
                size,
                center,
            } => {
                let w = *omega;
                let a = *size;
                let half = a * lit::<T>(0.5);
                let two = lit::<T>(2.0);
                let (s1, c1) = (w * t).sin_cos();
                let (s2, c2) = (two * w * t).sin_cos();
                ReferencePoint {
                    x_rm: Vector4::new(
                        center.x + a * s1,
                        center.y + half * s2,
                        a * w * c1,
                        a * w * c2,
                    ),
                    mu_rm: Vector2::new(-a * w * w * s1, -two * a * w * w * s2),
                }
            }
            Reference::Spline { x, y } => {
                let (px, vx, ax) = x.eval(t);
                let (py, vy, ay) = y.eval(t);
                ReferencePoint {
                    x_rm: Vector4::new(px, py, vx, vy),
                    mu_rm: Vector2::new(ax, ay),
                }
            }
        }
    }
}

/// Natural cubic spline `s(t)` with linear extrapolation on both ends.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline<T: Real> {
    knots: Vec<T>,
    values: Vec<T>,
    /// Second derivatives at the knots.
    curvature: Vec<T>,
}

impl<T: Real> CubicSpline<T> {
    pub fn natural(knots: &[f64], values: &[f64]) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(Error::InvalidArgument(
                "spline needs ≥ 2 knots and matching values".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "spline knots must be strictly increasing".into(),
            ));
        }
        // Tridiagonal system for interior second derivatives (Thomas algorithm).
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = knots[i] - knots[i - 1];
                let h1 = knots[i + 1] - knots[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] =
                    6.0 * ((values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0);
            }
            for r in 1..k {
                let lower = knots[r + 1] - knots[r];
                let f = lower / diag[r - 1];
                diag[r] -= f * upper[r - 1];
                rhs[r] -= f * rhs[r - 1];
            }
            let mut sol = vec![0.0; k];
            sol[k - 1] = rhs[k - 1] / diag[k - 1];
            for r in (0..k - 1).rev() {
                sol[r] = (rhs[r] - upper[r] * sol[r + 1]) / diag[r];
            }
            m[1..n - 1].copy_from_slice(&sol);
        }
        Ok(Self {
            knots: knots.iter().map(|v| lit(*v)).collect(),
            values: values.iter().map(|v| lit(*v)).collect(),
            curvature: m.iter().map(|v| lit(*v)).collect(),
        })
    }

    pub fn end_time(&self) -> T {
        *self.knots.last().unwrap()
    }

    /// Value, first and second derivative.
    pub fn eval(&self, t: T) -> (T, T, T) {
        let n = self.knots.len();
        let (k, v, m) = (&self.knots, &self.values, &self.curvature);
        let six = lit::<T>(6.0);
        let two = lit::<T>(2.0);
        let slope_at = |i: usize, at_end: bool| -> T {
            // derivative at a knot from the adjacent segment
            let (a, b) = if at_end { (i - 1, i) } else { (i, i + 1) };
            let h = k[b] - k[a];
            let base = (v[b] - v[a]) / h;
            if at_end {
                base + h * (two * m[b] + m[a]) / six
            } else {
                base - h * (two * m[a] + m[b]) / six
            }
        };
        if t <= k[0] {
            let s = slope_at(0, false);
            return (v[0] + s * (t - k[0]), s, T::zero());
        }
        if t >= k[n - 1] {
            let s = slope_at(n - 1, true);
            return (v[n - 1] + s * (t - k[n - 1]), s, T::zero());
        }
        let i = match k.iter().position(|kn| *kn > t) {
            Some(p) => p - 1,
            None => n - 2,
        };
        let h = k[i + 1] - k[i];
        let a = (k[i + 1] - t) / h;
        let b = (t - k[i]) / h;
        let value = a * v[i]
            + b * v[i + 1]
            + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / six;
        let slope = (v[i + 1] - v[i]) / h - (lit::<T>(3.0) * a * a - T::one()) / six * h * m[i]
            + (lit::<T>(3.0) * b * b - T::one()) / six * h * m[i + 1];
        let accel = a * m[i] + b * m[i + 1];
        (value, slope, accel)
    }
}
