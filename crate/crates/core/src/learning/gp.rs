//! Exact GP regression with a squared-exponential kernel, one independent GP
//! per output sharing the same Gram factorization.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::dataset::Sample;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpHyper {
    /// Lengthscale per z-scored input dimension.
    pub lengthscale: f64,
    /// Signal standard deviation `s`.
    pub signal_std: f64,
    /// Observation noise standard deviation `σn`.
    pub noise_std: f64,
    /// Refit `lengthscale`/`noise_std` by grid search on the marginal likelihood.
    pub optimize: bool,
}

impl Default for GpHyper {
    fn default() -> Self {
        Self {
            lengthscale: 1.0,
            signal_std: 1.0,
            noise_std: 0.1,
            optimize: false,
        }
    }
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Per-dimension affine input normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct InputScaler<T: Real> {
    pub mean: DVector<T>,
    pub std: DVector<T>,
}

impl<T: Real> InputScaler<T> {
    /// z-scoring statistics; zero spread maps to unit scale.
    pub fn fit(samples: &[Sample<T>]) -> Self {
        let d = samples[0].x.len();
        let n = lit::<T>(samples.len() as f64);
        let mut mean = DVector::zeros(d);
        for s in samples {
            mean += &s.x;
        }
        mean /= n;
        let mut var = DVector::zeros(d);
        for s in samples {
            let c = &s.x - &mean;
            var += c.component_mul(&c);
        }
        var /= n;
        let tiny = lit::<T>(1e-12);
        let std = var.map(|v| if v.sqrt() > tiny { v.sqrt() } else { T::one() });
        Self { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            std: DVector::from_element(d, T::one()),
        }
    }

    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        (x - &self.mean).component_div(&self.std)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpModel<T: Real> {
    pub hyper: GpHyper,
    scaler: InputScaler<T>,
    /// Normalized training inputs, one per column.
    inputs: DMatrix<T>,
    /// Lower Cholesky factor of `K + (σn² + jitter) I`.
    chol_l: DMatrix<T>,
    /// `(K + σn² I)⁻¹ Y`, one column per output.
    alpha: DMatrix<T>,
    pub jitter: f64,
}

/// Squared-exponential kernel on already-normalized inputs.
pub fn se_kernel<T: Real>(a: &[T], b: &[T], lengthscale: T, signal_var: T) -> T {
    let mut d2 = T::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        d2 += d * d;
    }
    signal_var * (-d2 / (lit::<T>(2.0) * lengthscale * lengthscale)).exp()
}

impl<T: Real> GpModel<T> {
    pub fn fit(samples: &[Sample<T>], hyper: GpHyper) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let hyper = if hyper.optimize {
            grid_search(samples, hyper)?
        } else {
            hyper
        };
        let scaler = InputScaler::fit(samples);
        Self::fit_scaled(samples, hyper, scaler)
    }

    /// Fit with a caller-supplied input normalization.
    pub fn fit_scaled(
        samples: &[Sample<T>],
        hyper: GpHyper,
        scaler: InputScaler<T>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = samples.len();
        let d = samples[0].x.len();
        let mut inputs = DMatrix::zeros(d, n);
        for (j, s) in samples.iter().enumerate() {
            inputs.set_column(j, &scaler.apply(&s.x));
        }
        let ell = lit::<T>(hyper.lengthscale);
        let s2 = lit::<T>(hyper.signal_std * hyper.signal_std);
        let noise_var = hyper.noise_std * hyper.noise_std;
        let mut gram = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let k = se_kernel(
                    inputs.column(i).as_slice(),
                    inputs.column(j).as_slice(),
                    ell,
                    s2,
                );
                gram[(i, j)] = k;
                gram[(j, i)] = k;
            }
        }
        let mut jitter = 0.0;
        let chol = loop {
            let mut k = gram.clone();
            for i in 0..n {
                k[(i, i)] += lit::<T>(noise_var + jitter);
            }
            if let Some(c) = k.cholesky() {
                break c;
            }
            jitter = if jitter == 0.0 {
                JITTER_START
            } else {
                jitter * 10.0
            };
            if jitter > JITTER_MAX {
                return Err(Error::IllConditioned { jitter });
            }
        };
        let mut y = DMatrix::zeros(n, 2);
        for (i, s) in samples.iter().enumerate() {
            y[(i, 0)] = s.y[0];
            y[(i, 1)] = s.y[1];
        }
        let alpha = chol.solve(&y);
        Ok(Self {
            hyper,
            scaler,
            inputs,
            chol_l: chol.unpack(),
            alpha,
            jitter,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn kernel_vector(&self, xs: &DVector<T>) -> DVector<T> {
        let ell = lit::<T>(self.hyper.lengthscale);
        let s2 = lit::<T>(self.hyper.signal_std * self.hyper.signal_std);
        DVector::from_iterator(
            self.len(),
            self.inputs
                .column_iter()
                .map(|c| se_kernel(c.as_slice(), xs.as_slice(), ell, s2)),
        )
    }

    pub fn mean(&self, x: &DVector<T>) -> Vector2<T> {
        let k = self.kernel_vector(&self.scaler.apply(x));
        Vector2::new(k.dot(&self.alpha.column(0)), k.dot(&self.alpha.column(1)))
    }

    /// Posterior mean and latent variance `s² − kᵀ(K + σn²I)⁻¹k` (same for both outputs).
    pub fn predict(&self, x: &DVector<T>) -> (Vector2<T>, T) {
        let k = self.kernel_vector(&self.scaler.apply(x));
        let mean = Vector2::new(k.dot(&self.alpha.column(0)), k.dot(&self.alpha.column(1)));
        let v = self
            .chol_l
            .solve_lower_triangular(&k)
            .unwrap_or_else(|| DVector::zeros(self.len()));
        let s2 = lit::<T>(self.hyper.signal_std * self.hyper.signal_std);
        (mean, (s2 - v.dot(&v)).max(T::zero()))
    }

    /// Predictive standard deviation of a new observation, `sqrt(var_f + σn²)`.
    pub fn predictive_std(&self, x: &DVector<T>) -> T {
        let (_, var) = self.predict(x);
        (var + lit::<T>(self.hyper.noise_std * self.hyper.noise_std)).sqrt()
    }

    /// Summed log marginal likelihood of both outputs.
    pub fn log_marginal_likelihood(&self, samples: &[Sample<T>]) -> T {
        let n = self.len();
        let mut fit = T::zero();
        for (i, s) in samples.iter().enumerate() {
            fit += s.y[0] * self.alpha[(i, 0)] + s.y[1] * self.alpha[(i, 1)];
        }
        let logdet: T = (0..n)
            .map(|i| self.chol_l[(i, i)].ln())
            .fold(T::zero(), |a, b| a + b);
        let two_pi = lit::<T>(std::f64::consts::TAU);
        -lit::<T>(0.5) * fit - lit::<T>(2.0) * logdet - lit::<T>(n as f64) * two_pi.ln()
    }
}

const LENGTHSCALE_GRID: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
const NOISE_GRID: [f64; 5] = [0.01, 0.03, 0.1, 0.3, 1.0];

/// Picks the grid point with the largest marginal likelihood.
pub fn grid_search<T: Real>(samples: &[Sample<T>], base: GpHyper) -> Result<GpHyper> {
    let scaler = InputScaler::fit(samples);
    let mut best: Option<(T, GpHyper)> = None;
    for &lengthscale in &LENGTHSCALE_GRID {
        for &noise_std in &NOISE_GRID {
            let hyper = GpHyper {
                lengthscale,
                noise_std,
                optimize: false,
                ..base
            };
            let Ok(model) = GpModel::fit_scaled(samples, hyper, scaler.clone()) else {
                continue;
            };
            let lml = model.log_marginal_likelihood(samples);
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, hyper));
            }
        }
    }
    best.map(|(_, h)| GpHyper {
        optimize: base.optimize,
        ..h
    })
    .ok_or(Error::IllConditioned { jitter: JITTER_MAX })
}
