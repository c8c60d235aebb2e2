//! Published model-error beliefs `{m_i, σ_i}` and the slot they are swapped into.

use std::sync::{Arc, RwLock};

use nalgebra::{DVector, Matrix2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::blr::BlrModel;
use super::gp::GpModel;
use crate::dynamics::{true_disturbance, CanonicalState};
use crate::scalar::{lit, Real};

/// Clamp range for the diagonal of `σ_i(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaBounds {
    pub floor: f64,
    pub cap: f64,
}

impl Default for SigmaBounds {
    fn default() -> Self {
        Self {
            floor: 1e-3,
            cap: 1.0,
        }
    }
}

impl SigmaBounds {
    pub fn clamp<T: Real>(&self, s: T) -> T {
        s.max(lit(self.floor)).min(lit(self.cap))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ErrorModel<T: Real> {
    /// No data yet: `m = 0`, `σ = σ₀ I`.
    Prior,
    Gp(GpModel<T>),
    Blr(BlrModel<T>),
    /// The injected disturbance itself with `σ` at the floor. Reads the
    /// canonical state from the first four input entries.
    Oracle,
    /// Known-zero model error (oracle with the disturbance switched off).
    Zero,
}

impl<T: Real> ErrorModel<T> {
    pub fn name(&self) -> &'static str {
        match self {
            ErrorModel::Prior => "prior",
            ErrorModel::Gp(_) => "gp",
            ErrorModel::Blr(_) => "blr",
            ErrorModel::Oracle => "oracle",
            ErrorModel::Zero => "zero",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction<T: Real> {
    pub mean: Vector2<T>,
    /// Diagonal diffusion `σ_i(x)`.
    pub sigma: Matrix2<T>,
}

/// Immutable snapshot with switching index `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief<T: Real> {
    pub index: usize,
    pub model: ErrorModel<T>,
    pub sigma0: T,
    pub bounds: SigmaBounds,
}

impl<T: Real> GaussianBelief<T> {
    pub fn prior(sigma0: T, bounds: SigmaBounds) -> Self {
        Self {
            index: 0,
            model: ErrorModel::Prior,
            sigma0,
            bounds,
        }
    }

    pub fn predict(&self, x: &DVector<T>) -> Prediction<T> {
        let (mean, std) = match &self.model {
            ErrorModel::Prior => (Vector2::zeros(), self.sigma0),
            ErrorModel::Gp(gp) => {
                let (m, var) = gp.predict(x);
                let noise = lit::<T>(gp.hyper.noise_std * gp.hyper.noise_std);
                (m, (var + noise).sqrt())
            }
            ErrorModel::Blr(blr) => {
                let (m, var) = blr.predict(x);
                (m, var.sqrt())
            }
            ErrorModel::Zero => (Vector2::zeros(), lit(self.bounds.floor)),
            ErrorModel::Oracle => {
                let z = CanonicalState(Vector4::new(x[0], x[1], x[2], x[3]));
                (true_disturbance(&z), lit(self.bounds.floor))
            }
        };
        let s = self.bounds.clamp(std);
        Prediction {
            mean,
            sigma: Matrix2::from_diagonal_element(s),
        }
    }
}

/// Holds the controller-visible belief. Publication replaces the `Arc`
/// under a write lock, so readers always get one whole snapshot.
#[derive(Debug)]
pub struct ModelSlot<T: Real> {
    current: RwLock<Arc<GaussianBelief<T>>>,
}

impl<T: Real> ModelSlot<T> {
    pub fn new(initial: GaussianBelief<T>) -> Self {
        Self {
            current: RwLock::new(Arc::new(initial)),
        }
    }

    pub fn snapshot(&self) -> Arc<GaussianBelief<T>> {
        Arc::clone(&self.current.read().unwrap_or_else(|e| e.into_inner()))
    }

    /// Installs `model` as belief `i + 1` and returns the new index.
    pub fn publish(&self, model: ErrorModel<T>) -> usize {
        let mut guard = self.current.write().unwrap_or_else(|e| e.into_inner());
        let next = GaussianBelief {
            index: guard.index + 1,
            model,
            sigma0: guard.sigma0,
            bounds: guard.bounds,
        };
        let index = next.index;
        *guard = Arc::new(next);
        index
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    #[test]
    fn prior_belief() {
        let b = GaussianBelief::<f64>::prior(1.0, SigmaBounds::default());
        let p = b.predict(&DVector::zeros(6));
        assert_eq!(b.index, 0);
        assert_eq!(p.mean, Vector2::zeros());
        assert_eq!(p.sigma, Matrix2::identity());
    }

    #[test]
    fn sigma_is_clamped() {
        let b = GaussianBelief::<f64>::prior(5.0, SigmaBounds::default());
        assert_eq!(b.predict(&DVector::zeros(4)).sigma, Matrix2::identity());
        let b = GaussianBelief::<f64>::prior(0.0, SigmaBounds::default());
        assert_eq!(
            b.predict(&DVector::zeros(4)).sigma,
            Matrix2::identity() * 1e-3
        );
    }

    #[test]
    fn oracle_returns_disturbance() {
        let b = GaussianBelief {
            model: ErrorModel::Oracle,
            ..GaussianBelief::<f64>::prior(1.0, SigmaBounds::default())
        };
        let z = CanonicalState::from_bicycle(0.0, 0.0, 0.0, 1.0);
        let x = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.3, 0.1]);
        assert_eq!(b.predict(&x).mean, true_disturbance(&z));
    }

    #[test]
    fn publish_increments_index() {
        let slot = ModelSlot::new(GaussianBelief::<f64>::prior(1.0, SigmaBounds::default()));
        let before = slot.snapshot();
        assert_eq!(slot.publish(ErrorModel::Oracle), 1);
        assert_eq!(slot.publish(ErrorModel::Prior), 2);
        assert_eq!(slot.snapshot().index, 2);
        // an old snapshot stays usable
        assert_eq!(before.index, 0);
        assert_eq!(before.model, ErrorModel::Prior);
    }

    #[test]
    fn readers_never_see_torn_snapshots() {
        let slot = Arc::new(ModelSlot::new(GaussianBelief::<f64>::prior(
            1.0,
            SigmaBounds::default(),
        )));
        let writer = {
            let slot = Arc::clone(&slot);
            thread::spawn(move || {
                for i in 0..2000 {
                    let m = if i % 2 == 0 {
                        ErrorModel::Oracle
                    } else {
                        ErrorModel::Prior
                    };
                    slot.publish(m);
                }
            })
        };
        let mut last = 0;
        for _ in 0..20_000 {
            let b = slot.snapshot();
            assert!(b.index >= last);
            // odd indices were published with the oracle model
            let oracle = b.index % 2 == 1;
            assert_eq!(b.model == ErrorModel::Oracle, oracle);
            last = b.index;
        }
        writer.join().unwrap();
        assert_eq!(slot.snapshot().index, 2000);
    }
}
