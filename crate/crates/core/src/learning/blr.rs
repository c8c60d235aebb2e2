//! Bayesian linear regression over random Fourier features.
//!
//! `φ(x) = sqrt(2/F) cos(W x + b)` with `W ~ N(0, 1/ℓ²)`, `b ~ U(0, 2π)`
//! approximates a squared-exponential kernel. Each output gets a Gaussian
//! weight posterior with prior precision `λ` and noise `σn`.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::Sample;
use super::gp::InputScaler;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RffConfig {
    pub features: usize,
    pub lengthscale: f64,
    pub prior_precision: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for RffConfig {
    fn default() -> Self {
        Self {
            features: 50,
            lengthscale: 1.0,
            prior_precision: 1.0,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

/// Fixed random feature map for a given input dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T: Real> {
    /// `F × d`
    pub w: DMatrix<T>,
    pub b: DVector<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(dim: usize, config: &RffConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let f = config.features;
        let inv_ell = 1.0 / config.lengthscale;
        let w = DMatrix::from_fn(f, dim, |_, _| {
            let n: f64 = rng.sample(StandardNormal);
            lit::<T>(n * inv_ell)
        });
        let b = DVector::from_fn(f, |_, _| {
            lit::<T>(rng.random_range(0.0..std::f64::consts::TAU))
        });
        Self { w, b }
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn eval(&self, x: &DVector<T>) -> DVector<T> {
        let scale = (lit::<T>(2.0) / lit::<T>(self.len() as f64)).sqrt();
        let mut phi = &self.w * x + &self.b;
        phi.apply(|v| *v = scale * v.cos());
        phi
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlrModel<T: Real> {
    pub config: RffConfig,
    scaler: InputScaler<T>,
    features: FeatureMap<T>,
    /// Posterior weight means, `F × 2`.
    weights: DMatrix<T>,
    /// Posterior weight covariance `S`, shared by both outputs.
    covariance: DMatrix<T>,
}

impl<T: Real> BlrModel<T> {
    pub fn fit(samples: &[Sample<T>], config: RffConfig) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Self::fit_scaled(samples, config, InputScaler::fit(samples))
    }

    pub fn fit_scaled(
        samples: &[Sample<T>],
        config: RffConfig,
        scaler: InputScaler<T>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if config.features == 0 || !(config.prior_precision > 0.0) || !(config.noise_std > 0.0) {
            return Err(Error::InvalidArgument(
                "RFF needs features > 0, λ > 0 and σn > 0".into(),
            ));
        }
        let features = FeatureMap::new(samples[0].x.len(), &config);
        let f = features.len();
        let inv_noise = lit::<T>(1.0 / (config.noise_std * config.noise_std));
        let mut precision = DMatrix::<T>::identity(f, f) * lit::<T>(config.prior_precision);
        let mut rhs = DMatrix::<T>::zeros(f, 2);
        for s in samples {
            let phi = features.eval(&scaler.apply(&s.x));
            precision.syger(inv_noise, &phi, &phi, T::one());
            for k in 0..2 {
                let mut col = rhs.column_mut(k);
                col.axpy(s.y[k] * inv_noise, &phi, T::one());
            }
        }
        precision.fill_upper_triangle_with_lower_triangle();
        let chol = precision.cholesky().ok_or(Error::SolveFailed(
            "BLR posterior precision is not positive definite".into(),
        ))?;
        let weights = chol.solve(&rhs);
        let covariance = chol.inverse();
        Ok(Self {
            config,
            scaler,
            features,
            weights,
            covariance,
        })
    }

    pub fn feature_map(&self) -> &FeatureMap<T> {
        &self.features
    }

    /// Features at a raw (unnormalized) input.
    pub fn features_at(&self, x: &DVector<T>) -> DVector<T> {
        self.features.eval(&self.scaler.apply(x))
    }

    pub fn mean(&self, x: &DVector<T>) -> Vector2<T> {
        let phi = self.features_at(x);
        Vector2::new(
            phi.dot(&self.weights.column(0)),
            phi.dot(&self.weights.column(1)),
        )
    }

    /// Posterior mean and predictive variance `φᵀSφ + σn²`.
    pub fn predict(&self, x: &DVector<T>) -> (Vector2<T>, T) {
        let phi = self.features_at(x);
        let mean = Vector2::new(
            phi.dot(&self.weights.column(0)),
            phi.dot(&self.weights.column(1)),
        );
        let var = phi.dot(&(&self.covariance * &phi));
        (
            mean,
            var + lit::<T>(self.config.noise_std * self.config.noise_std),
        )
    }

    /// Prior predictive variance `φᵀφ/λ + σn²` at `x`.
    pub fn prior_variance(&self, x: &DVector<T>) -> T {
        let phi = self.features_at(x);
        phi.dot(&phi) / lit::<T>(self.config.prior_precision)
            + lit::<T>(self.config.noise_std * self.config.noise_std)
    }
}
