//! Model-error samples and the sliding-window dataset.

use std::collections::VecDeque;
use std::io::{Read, Write};

use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{CanonicalState, VehicleControl};
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// What the learner sees as input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFeatures {
    /// `(z1, z2, z3, z4)`
    State,
    /// `(z1, z2, z3, z4, c_prev, a_prev)`
    #[default]
    StateAndControl,
}

impl InputFeatures {
    pub fn dim(&self) -> usize {
        match self {
            InputFeatures::State => 4,
            InputFeatures::StateAndControl => 6,
        }
    }

    pub fn build<T: Real>(&self, z: &CanonicalState<T>, u_prev: &VehicleControl<T>) -> DVector<T> {
        let s = z.as_vector();
        match self {
            InputFeatures::State => DVector::from_column_slice(s.as_slice()),
            InputFeatures::StateAndControl => {
                DVector::from_vec(vec![s[0], s[1], s[2], s[3], u_prev.curvature, u_prev.accel])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T: Real> {
    pub t: T,
    pub x: DVector<T>,
    pub y: Vector2<T>,
}

impl<T: Real> Sample<T> {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.x.iter().all(|v| v.is_finite())
            && self.y.iter().all(|v| v.is_finite())
    }
}

/// Finite-difference model-error target
/// `ȳ = (w(t+dt) − w(t))/dt − (f̂(z_t) + g(z_t) u_t)` where `w` is the velocity.
pub fn model_error_target<T: Real>(
    z_t: &CanonicalState<T>,
    z_next: &CanonicalState<T>,
    u_t: &VehicleControl<T>,
    dt: T,
    f_hat: &Vector2<T>,
    g: &Matrix2<T>,
) -> Result<Vector2<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    Ok((z_next.velocity() - z_t.velocity()) / dt - (f_hat + g * u_t.as_vector()))
}

#[allow(clippy::too_many_arguments)]
pub fn make_sample<T: Real>(
    t: T,
    z_t: &CanonicalState<T>,
    z_next: &CanonicalState<T>,
    u_t: &VehicleControl<T>,
    u_prev: &VehicleControl<T>,
    dt: T,
    f_hat: &Vector2<T>,
    g: &Matrix2<T>,
    features: InputFeatures,
) -> Result<Sample<T>> {
    let y = model_error_target(z_t, z_next, u_t, dt, f_hat, g)?;
    Ok(Sample {
        t,
        x: features.build(z_t, u_prev),
        y,
    })
}

/// Chronological ring buffer; the oldest sample is evicted first.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Real> {
    capacity: usize,
    input_dim: usize,
    samples: VecDeque<Sample<T>>,
    /// Total samples ever pushed, including evicted ones.
    pushed: usize,
}

impl<T: Real> Dataset<T> {
    pub fn new(capacity: usize, input_dim: usize) -> Result<Self> {
        if capacity == 0 || input_dim == 0 {
            return Err(Error::InvalidArgument(
                "dataset capacity and input dimension must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            input_dim,
            samples: VecDeque::with_capacity(capacity),
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_pushed(&self) -> usize {
        self.pushed
    }

    pub fn push(&mut self, sample: Sample<T>) -> Result<()> {
        if sample.x.len() != self.input_dim {
            return Err(Error::InvalidArgument(format!(
                "sample input has {} entries, dataset expects {}",
                sample.x.len(),
                self.input_dim
            )));
        }
        if !sample.is_finite() {
            return Err(Error::InvalidArgument(
                "sample has non-finite entries".into(),
            ));
        }
        if let Some(last) = self.samples.back() {
            if sample.t < last.t {
                return Err(Error::InvalidArgument(
                    "samples must be pushed in time order".into(),
                ));
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        self.pushed += 1;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample<T>> {
        self.samples.iter()
    }

    /// Frozen copy for a trainer.
    pub fn snapshot(&self) -> Vec<Sample<T>> {
        self.samples.iter().cloned().collect()
    }

    /// Writes `t, x1..xd, y1, y2`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.input_dim).map(|i| format!("x{i}")));
        header.push("y1".into());
        header.push("y2".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = Vec::with_capacity(self.input_dim + 3);
            rec.push(to_f64(s.t).to_string());
            rec.extend(s.x.iter().map(|v| to_f64(*v).to_string()));
            rec.push(to_f64(s.y[0]).to_string());
            rec.push(to_f64(s.y[1]).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`Dataset::write_csv`]; the input dimension is
    /// taken from the header.
    pub fn read_csv<R: Read>(reader: R, capacity: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 4 || &header[0] != "t" {
            return Err(Error::Csv("dataset header must be t, x1.., y1, y2".into()));
        }
        let dim = header.len() - 3;
        let mut data = Self::new(capacity, dim)?;
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Csv(format!("bad number {f:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != dim + 3 {
                return Err(Error::Csv(format!(
                    "expected {} columns, found {}",
                    dim + 3,
                    vals.len()
                )));
            }
            data.push(Sample {
                t: lit(vals[0]),
                x: DVector::from_iterator(dim, vals[1..=dim].iter().map(|v| lit(*v))),
                y: Vector2::new(lit(vals[dim + 1]), lit(vals[dim + 2])),
            })?;
        }
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{plant_gain, Plant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(t: f64, dim: usize) -> Sample<f64> {
        Sample {
            t,
            x: DVector::from_element(dim, t),
            y: Vector2::new(t, -t),
        }
    }

    #[test]
    fn zero_model_error_gives_zero_target() {
        let plant = Plant::new(Matrix2::zeros(), false);
        let z = CanonicalState::from_bicycle(0.0, 0.0, 0.4, 1.3);
        let u = VehicleControl::new(0.3, -0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = plant.step(&z, &u, 0.02, &mut rng);
        let y =
            model_error_target(&z, &next, &u, 0.02, &Vector2::zeros(), &plant_gain(&z)).unwrap();
        assert!(y.amax() < 1e-12);
    }

    #[test]
    fn target_recovers_disturbance() {
        let plant = Plant::new(Matrix2::zeros(), true);
        let z = CanonicalState::from_bicycle(1.0, 2.0, -0.7, 1.8);
        let u = VehicleControl::new(0.2, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = plant.step(&z, &u, 0.02, &mut rng);
        let y =
            model_error_target(&z, &next, &u, 0.02, &Vector2::zeros(), &plant_gain(&z)).unwrap();
        let delta = crate::dynamics::true_disturbance(&z);
        assert!((y - delta).amax() < 1e-12);
    }

    #[test]
    fn noisy_target_statistics() {
        let dt: f64 = 0.02;
        let sigma = 0.1;
        let plant = Plant::new(Matrix2::identity() * sigma, true);
        let z = CanonicalState::from_bicycle(0.0, 0.0, 0.3, 1.0);
        let u = VehicleControl::new(0.1, 0.2);
        let g = plant_gain(&z);
        let delta = crate::dynamics::true_disturbance(&z);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut sum = Vector2::zeros();
        let mut sq = Vector2::zeros();
        for _ in 0..n {
            let next = plant.step(&z, &u, dt, &mut rng);
            let r = model_error_target(&z, &next, &u, dt, &Vector2::zeros(), &g).unwrap() - delta;
            sum += r;
            sq += r.component_mul(&r);
        }
        let expected_std = sigma / dt.sqrt();
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            let std = (sq[k] / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 3.0 * expected_std / (n as f64).sqrt());
            assert!((std / expected_std - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn rejects_nonpositive_dt() {
        let z = CanonicalState::new(0.0, 0.0, 1.0, 0.0);
        let u = VehicleControl::zero();
        assert!(
            model_error_target(&z, &z, &u, 0.0, &Vector2::zeros(), &Matrix2::identity()).is_err()
        );
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut d = Dataset::new(3, 2).unwrap();
        for i in 0..5 {
            d.push(sample(i as f64, 2)).unwrap();
        }
        assert_eq!(d.len(), 3);
        assert_eq!(d.total_pushed(), 5);
        let ts: Vec<f64> = d.iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_out_of_order_and_wrong_dim() {
        let mut d = Dataset::new(3, 2).unwrap();
        d.push(sample(1.0, 2)).unwrap();
        assert!(d.push(sample(0.5, 2)).is_err());
        assert!(d.push(sample(2.0, 3)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut d = Dataset::new(10, 6).unwrap();
        for i in 0..4 {
            let mut s = sample(0.1 * i as f64, 6);
            s.x[3] = 1.0 / 3.0 + i as f64;
            d.push(s).unwrap();
        }
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,x3,x4,x5,x6,y1,y2\n"));
        let back = Dataset::<f64>::read_csv(buf.as_slice(), 10).unwrap();
        assert_eq!(back, d);
    }
}
