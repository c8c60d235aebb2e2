//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use balsa::cbf::{barrier_jet, barrier_value, BarrierSpec, CbfRow};
use balsa::clf::ClfRow;
use balsa::dynamics::{inverse_gain, CanonicalState, ControlBox, SpeedFloor, V_EPS};
use balsa::harness::Scenario;
use balsa::qp::{control_rows, QpProblem, QpWeights};
use nalgebra::{DMatrix, DVector, Matrix4, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).unwrap_or_else(|e| panic!("loading {name}: {e}"))
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Random matrix shifted so every eigenvalue has real part ≤ −margin.
pub fn random_hurwitz<R: Rng>(rng: &mut R, margin: f64) -> Matrix4<f64> {
    let m = Matrix4::from_fn(|_, _| normal(rng));
    let max_re = m
        .complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max);
    m - Matrix4::identity() * (max_re + margin)
}

/// Solves `AᵀP + PA + Q = 0` by Cayley transform and Smith doubling.
pub fn smith_lyapunov(a: &Matrix4<f64>, q: &Matrix4<f64>) -> Matrix4<f64> {
    let shift = a.norm().max(1.0);
    let id = Matrix4::<f64>::identity();
    let m = (a - id * shift)
        .try_inverse()
        .expect("shifted matrix invertible");
    let mut ad = (a + id * shift) * m;
    let mut p = m.transpose() * q * m * (2.0 * shift);
    for _ in 0..60 {
        let next = p + ad.transpose() * p * ad;
        let done = (next - p).norm() <= 1e-16 * next.norm();
        p = next;
        ad = ad * ad;
        if done {
            break;
        }
    }
    p
}

/// GP posterior mean and latent variance from an explicit inverse of
/// `K + σn² I`, with the squared-exponential kernel
/// `s² exp(−‖a − b‖² / 2ℓ²)` on the given (already normalised) inputs.
pub fn gp_dense_oracle(
    xs: &[DVector<f64>],
    ys: &[Vector2<f64>],
    query: &DVector<f64>,
    ell: f64,
    s: f64,
    sn: f64,
) -> (Vector2<f64>, f64) {
    let n = xs.len();
    let k = |a: &DVector<f64>, b: &DVector<f64>| {
        s * s * (-(a - b).norm_squared() / (2.0 * ell * ell)).exp()
    };
    let gram = DMatrix::from_fn(n, n, |i, j| {
        k(&xs[i], &xs[j]) + if i == j { sn * sn } else { 0.0 }
    });
    let inv = gram.try_inverse().expect("gram invertible");
    let kq = DVector::from_fn(n, |i, _| k(&xs[i], query));
    let w = &inv * &kq;
    let mut mean = Vector2::zeros();
    for i in 0..n {
        mean += ys[i] * w[i];
    }
    (mean, k(query, query) - kq.dot(&w))
}

/// Population z-scoring of the inputs, unit scale for constant columns.
pub fn zscore(xs: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let n = xs.len() as f64;
    let d = xs[0].len();
    let mean = DVector::from_fn(d, |j, _| xs.iter().map(|x| x[j]).sum::<f64>() / n);
    let std = DVector::from_fn(d, |j, _| {
        let v = (xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
        if v > 1e-12 {
            v
        } else {
            1.0
        }
    });
    (mean, std)
}

/// Exact minimiser of `½xᵀ diag(p) x` subject to `a x ≤ b` by enumerating
/// every candidate active set of at most `n` rows.
pub fn qp_enumeration_oracle(
    p: &Vector4<f64>,
    a: &[Vector4<f64>],
    b: &[f64],
) -> Option<(Vector4<f64>, f64)> {
    let mut best: Option<(Vector4<f64>, f64)> = None;
    let mut subset = Vec::new();
    fn visit(
        start: usize,
        subset: &mut Vec<usize>,
        p: &Vector4<f64>,
        a: &[Vector4<f64>],
        b: &[f64],
        best: &mut Option<(Vector4<f64>, f64)>,
    ) {
        if let Some(x) = solve_with_active(p, a, b, subset) {
            let feasible = a
                .iter()
                .zip(b)
                .all(|(row, bi)| row.dot(&x) <= bi + 1e-9 * (1.0 + bi.abs()));
            if feasible {
                let f = 0.5 * (0..4).map(|j| p[j] * x[j] * x[j]).sum::<f64>();
                if best.as_ref().is_none_or(|(_, g)| f < *g) {
                    *best = Some((x, f));
                }
            }
        }
        if subset.len() == 4 {
            return;
        }
        for i in start..a.len() {
            subset.push(i);
            visit(i + 1, subset, p, a, b, best);
            subset.pop();
        }
    }
    visit(0, &mut subset, p, a, b, &mut best);
    best
}

/// Minimiser of `½xᵀ diag(p) x` with the listed rows held at equality,
/// provided all their multipliers are non-negative.
fn solve_with_active(
    p: &Vector4<f64>,
    a: &[Vector4<f64>],
    b: &[f64],
    active: &[usize],
) -> Option<Vector4<f64>> {
    let k = active.len();
    if k == 0 {
        return Some(Vector4::zeros());
    }
    // x = −P⁻¹Aₛᵀλ,  Aₛ P⁻¹ Aₛᵀ λ = −bₛ
    let s = DMatrix::from_fn(k, k, |i, j| {
        (0..4)
            .map(|c| a[active[i]][c] * a[active[j]][c] / p[c])
            .sum::<f64>()
    });
    let rhs = DVector::from_fn(k, |i, _| -b[active[i]]);
    let svd = s.clone().svd(true, true);
    if svd.singular_values.min() <= 1e-12 * svd.singular_values.max().max(1.0) {
        return None;
    }
    let lambda = s.lu().solve(&rhs)?;
    if lambda.iter().any(|l| *l < -1e-12) {
        return None;
    }
    let mut x = Vector4::zeros();
    for (r, &i) in active.iter().enumerate() {
        x -= a[i] * lambda[r];
    }
    Some(x.component_div(p))
}

/// A random CLF-CBF QP of the shape the controller builds: one CLF row,
/// up to `max_cbf` barrier rows and the four control-box rows.
pub fn random_qp<R: Rng>(rng: &mut R, max_cbf: usize) -> QpProblem<f64> {
    let clf = ClfRow {
        psi0: 2.0 * normal(rng),
        psi1: Vector2::new(normal(rng), normal(rng)),
    };
    let n_cbf = rng.random_range(0..=max_cbf);
    let cbf: Vec<CbfRow<f64>> = (0..n_cbf)
        .map(|_| CbfRow {
            phi0: 2.0 * normal(rng),
            phi1: Vector2::new(normal(rng), normal(rng)),
            h: 1.0,
        })
        .collect();
    let theta: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let v: f64 = rng.random_range(0.3..3.0);
    let z = CanonicalState::from_bicycle(0.0, 0.0, theta, v);
    let g_inv = inverse_gain(&z, V_EPS, SpeedFloor::Clamp).unwrap();
    let mu_d = Vector2::new(normal(rng), normal(rng));
    let control = control_rows(&g_inv, &mu_d, &Vector2::zeros(), &ControlBox::default());
    let weights = QpWeights {
        p1: rng.random_range(0.5..2.0),
        p2: 10f64.powf(rng.random_range(0.0..3.0)),
    };
    QpProblem::assemble(&clf, &cbf, &control, weights)
}

/// Central-difference gradient of `B`, and central differences of the
/// analytic gradient for the Hessian.
pub fn barrier_fd(
    z: &CanonicalState<f64>,
    spec: &BarrierSpec<f64>,
    step: f64,
) -> (Vector4<f64>, Matrix4<f64>) {
    let b = |x: &Vector4<f64>| barrier_value(&CanonicalState(*x), spec).expect("inside safe set");
    let g = |x: &Vector4<f64>| {
        barrier_jet(&CanonicalState(*x), spec)
            .expect("inside safe set")
            .grad
    };
    let x = z.0;
    let mut grad = Vector4::zeros();
    let mut hess = Matrix4::zeros();
    for i in 0..4 {
        let mut hi = x;
        let mut lo = x;
        hi[i] += step;
        lo[i] -= step;
        grad[i] = (b(&hi) - b(&lo)) / (2.0 * step);
        hess.set_column(i, &((g(&hi) - g(&lo)) / (2.0 * step)));
    }
    (grad, hess)
}
