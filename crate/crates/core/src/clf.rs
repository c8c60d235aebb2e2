//! Stochastic control Lyapunov machinery for the tracking error.
//!
//! The error `e = x − x_rm` follows `de = (Ae + Gμ_qp)dt + Gσ dξ` with
//! `A = [0 I; −K_P −K_D]`, `G = [0; I]`. With `V(e) = ½eᵀPe` and
//! `AᵀP + PA = −Q`, the Itô generator bound becomes the linear row
//! `Ψ⁰ + Ψ¹μ_qp ≤ d¹`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SMatrix, Vector2, Vector4};

use crate::dynamics::DiffusionMatrix;
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Tracking error `x − x_rm` over `(px, py, vx, vy)`.
pub type ErrorState<T> = Vector4<T>;

/// Feedback gains and Lyapunov weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClfGains<T: Real> {
    pub kp: Matrix2<T>,
    pub kd: Matrix2<T>,
    pub q: Matrix4<T>,
    /// Convergence-rate constant `ε > 0`; the row enforces `ℒV ≤ −V/ε + d¹`.
    pub epsilon: T,
}

impl<T: Real> Default for ClfGains<T> {
    fn default() -> Self {
        Self {
            kp: Matrix2::identity() * lit::<T>(4.0),
            kd: Matrix2::identity() * lit::<T>(4.0),
            q: Matrix4::identity(),
            epsilon: T::one(),
        }
    }
}

/// Closed-loop error matrix `[0 I; −K_P −K_D]`, checked Hurwitz.
pub fn build_a<T: Real>(kp: &Matrix2<T>, kd: &Matrix2<T>) -> Result<Matrix4<T>> {
    let mut a = Matrix4::zeros();
    a.fixed_view_mut::<2, 2>(0, 2)
        .copy_from(&Matrix2::identity());
    a.fixed_view_mut::<2, 2>(2, 0).copy_from(&(-kp));
    a.fixed_view_mut::<2, 2>(2, 2).copy_from(&(-kd));
    let max_real = max_real_eigenvalue(&a)?;
    if max_real >= -hurwitz_margin::<T>() {
        return Err(Error::NotHurwitz {
            max_real: to_f64(max_real),
        });
    }
    Ok(a)
}

fn hurwitz_margin<T: Real>() -> T {
    lit(1e-9)
}

/// Eigenvalues of a square matrix as `(re, im)` pairs.
pub fn eigenvalues<T: Real, const N: usize>(a: &SMatrix<T, N, N>) -> Result<Vec<(T, T)>> {
    let d = DMatrix::from_iterator(N, N, a.iter().copied());
    let schur = nalgebra::linalg::Schur::try_new(d, T::default_epsilon(), 10_000)
        .ok_or_else(|| Error::SolveFailed("Schur decomposition did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect())
}

pub fn max_real_eigenvalue<T: Real, const N: usize>(a: &SMatrix<T, N, N>) -> Result<T> {
    Ok(eigenvalues(a)?.into_iter().map(|(re, _)| re).fold(
        T::min_value().unwrap_or(-T::one() / T::default_epsilon()),
        |m, x| m.max(x),
    ))
}

/// Solves `AᵀP + PA = −Q` through the vectorized system
/// `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = −vec(Q)`.
pub fn solve_lyapunov<T: Real, const N: usize>(
    a: &SMatrix<T, N, N>,
    q: &SMatrix<T, N, N>,
) -> Result<SMatrix<T, N, N>> {
    let max_real = max_real_eigenvalue(a)?;
    if max_real >= T::zero() {
        return Err(Error::NotHurwitz {
            max_real: to_f64(max_real),
        });
    }
    let n2 = N * N;
    let at = a.transpose();
    let mut k = DMatrix::<T>::zeros(n2, n2);
    // vec is column-major: vec(P)[i + N j] = P[i, j].
    // (AᵀP)[i,j] = Σ_k Aᵀ[i,k] P[k,j];  (PA)[i,j] = Σ_k P[i,k] A[k,j].
    for j in 0..N {
        for i in 0..N {
            let row = i + N * j;
            for kk in 0..N {
                k[(row, kk + N * j)] += at[(i, kk)];
                k[(row, i + N * kk)] += a[(kk, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(n2, q.iter().map(|&x| -x));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolveFailed("singular Kronecker system".into()))?;
    let p = SMatrix::<T, N, N>::from_iterator(sol.iter().copied());
    // Symmetrize away round-off.
    Ok((p + p.transpose()) * lit::<T>(0.5))
}

/// Frobenius norm of `AᵀP + PA + Q`.
pub fn lyapunov_residual<T: Real, const N: usize>(
    a: &SMatrix<T, N, N>,
    p: &SMatrix<T, N, N>,
    q: &SMatrix<T, N, N>,
) -> T {
    (a.transpose() * p + p * a + q).norm()
}

/// Validated `(A, P, Q, ε)` for the tracking-error CLF.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovCertificate<T: Real> {
    pub a: Matrix4<T>,
    pub p: Matrix4<T>,
    pub q: Matrix4<T>,
    pub epsilon: T,
}

impl<T: Real> LyapunovCertificate<T> {
    pub fn new(gains: &ClfGains<T>) -> Result<Self> {
        if !(gains.epsilon > T::zero()) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        let q_sym = (gains.q + gains.q.transpose()) * lit::<T>(0.5);
        if min_symmetric_eigenvalue(&q_sym) <= T::zero() {
            return Err(Error::InvalidArgument("Q must be positive definite".into()));
        }
        let a = build_a(&gains.kp, &gains.kd)?;
        let p = solve_lyapunov(&a, &q_sym)?;
        if min_symmetric_eigenvalue(&p) <= T::zero() {
            return Err(Error::SolveFailed(
                "Lyapunov solution is not positive definite".into(),
            ));
        }
        Ok(Self {
            a,
            p,
            q: q_sym,
            epsilon: gains.epsilon,
        })
    }

    pub fn residual(&self) -> T {
        lyapunov_residual(&self.a, &self.p, &self.q)
    }

    /// `V(e) = ½ eᵀ P e`.
    pub fn value(&self, e: &ErrorState<T>) -> T {
        lit::<T>(0.5) * e.dot(&(self.p * e))
    }

    /// Lower-right 2×2 block of `P`; equals `GᵀPG`.
    pub fn velocity_block(&self) -> Matrix2<T> {
        self.p.fixed_view::<2, 2>(2, 2).into_owned()
    }

    /// Pseudo-control contribution `μ_pd = [−K_P −K_D] e`, read back from `A`.
    pub fn feedback(&self, e: &ErrorState<T>) -> Vector2<T> {
        self.a.fixed_view::<2, 4>(2, 0) * e
    }
}

pub fn min_symmetric_eigenvalue<T: Real, const N: usize>(m: &SMatrix<T, N, N>) -> T {
    let d = DMatrix::from_iterator(N, N, m.iter().copied());
    d.symmetric_eigenvalues().iter().copied().fold(
        T::max_value().unwrap_or(T::one() / T::default_epsilon()),
        |a, b| a.min(b),
    )
}

/// Coefficients of `Ψ⁰ + Ψ¹ μ_qp ≤ d¹`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClfRow<T: Real> {
    pub psi0: T,
    pub psi1: Vector2<T>,
}

/// `½ tr(G σσᵀ Gᵀ P)` computed from the velocity block of `P` only.
pub fn clf_trace_term<T: Real>(cert: &LyapunovCertificate<T>, sigma: &DiffusionMatrix<T>) -> T {
    lit::<T>(0.5) * (sigma * sigma.transpose() * cert.velocity_block()).trace()
}

/// Builds the stochastic CLF row:
/// `Ψ⁰ = −½eᵀQe + V(e)/ε + ½tr(GσσᵀGᵀP)`, `Ψ¹ = eᵀPG`.
pub fn clf_row<T: Real>(
    e: &ErrorState<T>,
    cert: &LyapunovCertificate<T>,
    sigma: &DiffusionMatrix<T>,
) -> ClfRow<T> {
    let half = lit::<T>(0.5);
    let psi0 =
        -half * e.dot(&(cert.q * e)) + cert.value(e) / cert.epsilon + clf_trace_term(cert, sigma);
    let pe = cert.p * e;
    ClfRow {
        psi0,
        psi1: Vector2::new(pe[2], pe[3]),
    }
}
