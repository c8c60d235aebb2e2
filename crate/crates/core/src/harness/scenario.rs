//! Scenario files (TOML).

use std::path::Path;

use nalgebra::{Matrix2, Matrix4, Vector2};
use serde::{Deserialize, Serialize};

use super::reference::ReferenceSpec;
use crate::cbf::{BarrierSet, BarrierSpec, Obstacle};
use crate::clf::ClfGains;
use crate::controller::{BarrierDrift, ControllerConfig, ControllerKind};
use crate::dynamics::{ControlBox, SpeedFloor, V_EPS};
use crate::error::{Error, Result};
use crate::learning::{LearnerConfig, LearnerKind};
use crate::qp::{AdmmSettings, QpWeights};
use crate::scalar::{lit, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Write measured step latency to telemetry. Off keeps telemetry
    /// byte-identical across repeated runs.
    #[serde(default)]
    pub record_timing: bool,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub plant: PlantSpec,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub barriers: BarrierConfig,
}

fn default_dt() -> f64 {
    0.02
}

/// Start state; defaults to the reference state at `t = 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    /// Explicit `(px, py, θ, v)`; overrides the reference.
    pub pose: Option<[f64; 4]>,
    /// Added to the reference position.
    pub position_offset: [f64; 2],
    /// Added to the reference velocity.
    pub velocity_offset: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSpec {
    /// Isotropic diffusion `Σ = noise · I` unless `diffusion` is given.
    pub noise: f64,
    /// Full row-major `Σ`.
    pub diffusion: Option<[[f64; 2]; 2]>,
    pub disturbance: bool,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            noise: 0.0,
            diffusion: None,
            disturbance: true,
        }
    }
}

impl PlantSpec {
    pub fn diffusion<T: Real>(&self) -> Matrix2<T> {
        match self.diffusion {
            Some(d) => Matrix2::new(lit(d[0][0]), lit(d[0][1]), lit(d[1][0]), lit(d[1][1])),
            None => Matrix2::from_diagonal_element(lit(self.noise)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    /// Isotropic `K_P`.
    pub kp: f64,
    /// Isotropic `K_D`.
    pub kd: f64,
    pub epsilon: f64,
    pub p1: f64,
    pub p2: f64,
    pub robust_sigma: f64,
    pub barrier_drift: BarrierDrift,
    pub curvature_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub v_eps: f64,
    pub max_iter: usize,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        let bounds = ControlBox::<f64>::default();
        Self {
            kind: ControllerKind::Balsa,
            kp: 4.0,
            kd: 4.0,
            epsilon: 1.0,
            p1: 1.0,
            p2: 100.0,
            robust_sigma: 1.0,
            barrier_drift: BarrierDrift::Realized,
            curvature_max: bounds.curvature_max,
            accel_min: bounds.accel_min,
            accel_max: bounds.accel_max,
            v_eps: V_EPS,
            max_iter: AdmmSettings::<f64>::default().max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierConfig {
    pub gamma_p: f64,
    pub gamma: f64,
    pub cull_radius: f64,
    pub obstacles: Vec<ObstacleSpec>,
    /// Point-cloud obstacles, one barrier of `point_radius` per point.
    pub points: Vec<[f64; 2]>,
    pub point_radius: f64,
    pub v_max: Option<f64>,
    pub v_min: Option<f64>,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            gamma_p: 1.0,
            gamma: 1.0,
            cull_radius: 10.0,
            obstacles: Vec::new(),
            points: Vec::new(),
            point_radius: 0.1,
            v_max: None,
            v_min: None,
        }
    }
}

impl BarrierConfig {
    pub fn build<T: Real>(&self) -> Result<BarrierSet<T>> {
        let (gp, g) = (lit::<T>(self.gamma_p), lit::<T>(self.gamma));
        let mut specs = Vec::new();
        for o in &self.obstacles {
            let obs = Obstacle::new(
                Vector2::new(lit(o.center[0]), lit(o.center[1])),
                lit(o.radius),
            )?;
            specs.push(BarrierSpec::obstacle(obs).with_gains(gp, g)?);
        }
        if let Some(v) = self.v_max {
            specs.push(BarrierSpec::velocity_max(lit(v)).with_gains(gp, g)?);
        }
        if let Some(v) = self.v_min {
            specs.push(BarrierSpec::velocity_min(lit(v)).with_gains(gp, g)?);
        }
        let mut set = BarrierSet::new(specs);
        set.cull_radius = lit(self.cull_radius);
        let pts: Vec<Vector2<T>> = self
            .points
            .iter()
            .map(|p| Vector2::new(lit(p[0]), lit(p[1])))
            .collect();
        set.add_points(&pts, lit(self.point_radius), gp, g)?;
        Ok(set)
    }

    pub fn obstacle_count(&self) -> usize {
        self.obstacles.len() + self.points.len()
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Scenario(format!("{}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains("__") || self.name.contains(['/', '\\']) {
            return bad("name must be non-empty without '__' or path separators");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.plant.noise >= 0.0) {
            return bad("plant noise must be non-negative");
        }
        let l = &self.learner;
        if l.retrain_every == 0 {
            return bad("learner.retrain_every must be positive");
        }
        if l.publish_lag_steps >= l.retrain_every {
            return bad("learner.publish_lag_steps must be smaller than learner.retrain_every");
        }
        if !(l.sigma0 > 0.0)
            || !(l.sigma_bounds.floor > 0.0)
            || !(l.sigma_bounds.cap >= l.sigma_bounds.floor)
        {
            return bad("learner sigma settings must satisfy 0 < floor ≤ cap and sigma0 > 0");
        }
        let c = &self.controller;
        if !(c.p1 > 0.0 && c.p2 > 0.0 && c.epsilon > 0.0 && c.robust_sigma >= 0.0) {
            return bad("controller weights, epsilon and robust_sigma must be positive");
        }
        if !(c.curvature_max > 0.0 && c.accel_min < 0.0 && c.accel_max > 0.0) {
            return bad("control box must contain the origin");
        }
        let b = &self.barriers;
        if !(b.gamma_p > 0.0 && b.gamma > 0.0) {
            return bad("barrier gains must be positive");
        }
        if let (Some(lo), Some(hi)) = (b.v_min, b.v_max) {
            if !(lo < hi) {
                return bad("v_min must be below v_max");
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn with_controller(mut self, kind: ControllerKind) -> Self {
        self.controller.kind = kind;
        self
    }

    pub fn with_learner(mut self, kind: LearnerKind) -> Self {
        self.learner.kind = kind;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn controller_config<T: Real>(&self) -> ControllerConfig<T> {
        let c = &self.controller;
        let solver = AdmmSettings {
            max_iter: c.max_iter,
            ..AdmmSettings::default()
        };
        ControllerConfig {
            kind: c.kind,
            gains: ClfGains {
                kp: Matrix2::from_diagonal_element(lit(c.kp)),
                kd: Matrix2::from_diagonal_element(lit(c.kd)),
                q: Matrix4::identity(),
                epsilon: lit(c.epsilon),
            },
            weights: QpWeights {
                p1: lit(c.p1),
                p2: lit(c.p2),
            },
            bounds: ControlBox {
                curvature_max: lit(c.curvature_max),
                accel_min: lit(c.accel_min),
                accel_max: lit(c.accel_max),
            },
            v_eps: lit(c.v_eps),
            speed_floor: SpeedFloor::Clamp,
            robust_sigma: lit(c.robust_sigma),
            sigma0: lit(self.learner.sigma0),
            barrier_drift: c.barrier_drift,
            features: self.learner.features,
            solver,
            max_iter_accept: lit(1e-4),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "line"
duration = 5.0
[reference]
kind = "waypoints"
points = [[0.0, 0.0], [10.0, 0.0]]
speed = 1.0
"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.dt, 0.02);
        assert_eq!(s.steps(), 250);
        assert_eq!(s.controller.kind, ControllerKind::Balsa);
        assert_eq!(s.learner.retrain_every, 40);
        assert_eq!(s.learner.warmup, 10.0);
        assert!(s.barriers.build::<f64>().unwrap().is_empty());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut s = Scenario::from_toml_str(MINIMAL).unwrap();
        s.barriers.obstacles.push(ObstacleSpec {
            center: [3.0, 0.5],
            radius: 0.7,
        });
        s.barriers.v_max = Some(2.0);
        let text = s.to_toml_string().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), s);
    }

    #[test]
    fn rejects_invalid() {
        assert!(
            Scenario::from_toml_str(&MINIMAL.replace("duration = 5.0", "duration = -1.0")).is_err()
        );
        assert!(Scenario::from_toml_str(&format!("unknown = 1\n{MINIMAL}")).is_err());
        let lag = format!("{MINIMAL}\n[learner]\nretrain_every = 4\npublish_lag_steps = 4\n");
        assert!(Scenario::from_toml_str(&lag).is_err());
    }

    #[test]
    fn controller_config_uses_identity_q() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        let c = s.controller_config::<f64>();
        assert_eq!(c.gains.q, nalgebra::Matrix4::identity());
        assert_eq!(c.gains.kp, Matrix2::identity() * 4.0);
    }
}
