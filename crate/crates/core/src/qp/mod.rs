//! The CLF-CBF quadratic program over `(μ_qp, d¹, d²)`.
//!
//! Objective `μᵀμ + p₁d₁² + p₂d₂²`. Rows are stored as `coeffs · x ≤ bound`.

mod admm;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector4};

use crate::cbf::CbfRow;
use crate::clf::ClfRow;
use crate::dynamics::ControlBox;
use crate::scalar::{lit, to_f64, Real};

pub use admm::{AdmmSettings, AdmmSolver, DenseQp, DenseSolution, KktResiduals, SolverStatus};

/// Number of decision variables: μ₁, μ₂, d¹, d².
pub const NUM_VARS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Clf,
    Cbf,
    Control,
}

/// One row `coeffs · (μ₁, μ₂, d¹, d²) ≤ bound`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearConstraint<T: Real> {
    pub coeffs: Vector4<T>,
    pub bound: T,
    pub kind: RowKind,
}

impl<T: Real> LinearConstraint<T> {
    /// `Ψ⁰ + Ψ¹μ ≤ d¹`
    pub fn clf(row: &ClfRow<T>) -> Self {
        Self {
            coeffs: Vector4::new(row.psi1[0], row.psi1[1], -T::one(), T::zero()),
            bound: -row.psi0,
            kind: RowKind::Clf,
        }
    }

    /// `Φ⁰ + Φ¹μ ≤ d²`
    pub fn cbf(row: &CbfRow<T>) -> Self {
        Self {
            coeffs: Vector4::new(row.phi1[0], row.phi1[1], T::zero(), -T::one()),
            bound: -row.phi0,
            kind: RowKind::Cbf,
        }
    }

    pub fn slack(&self, x: &Vector4<T>) -> T {
        self.bound - self.coeffs.dot(x)
    }
}

/// Maps the box `Hu ≤ b` into `μ_qp` space.
///
/// With `u = g⁻¹(μ_d + μ_qp − f̂)` each halfspace `hᵀu ≤ b` becomes
/// `hᵀg⁻¹ μ_qp ≤ b − hᵀg⁻¹(μ_d − f̂)`.
pub fn control_rows<T: Real>(
    g_inv: &Matrix2<T>,
    mu_d: &Vector2<T>,
    f_hat: &Vector2<T>,
    bounds: &ControlBox<T>,
) -> [LinearConstraint<T>; 4] {
    let offset = g_inv * (mu_d - f_hat);
    bounds.halfspaces().map(|(h, b)| {
        let a = g_inv.transpose() * h;
        LinearConstraint {
            coeffs: Vector4::new(a[0], a[1], T::zero(), T::zero()),
            bound: b - h.dot(&offset),
            kind: RowKind::Control,
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpWeights<T: Real> {
    pub p1: T,
    pub p2: T,
}

impl<T: Real> Default for QpWeights<T> {
    fn default() -> Self {
        Self {
            p1: T::one(),
            p2: lit(100.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem<T: Real> {
    pub weights: QpWeights<T>,
    pub rows: Vec<LinearConstraint<T>>,
}

impl<T: Real> QpProblem<T> {
    pub fn assemble(
        clf: &ClfRow<T>,
        cbf: &[CbfRow<T>],
        control: &[LinearConstraint<T>],
        weights: QpWeights<T>,
    ) -> Self {
        let mut rows = Vec::with_capacity(1 + cbf.len() + control.len());
        rows.push(LinearConstraint::clf(clf));
        rows.extend(cbf.iter().map(LinearConstraint::cbf));
        rows.extend_from_slice(control);
        Self { weights, rows }
    }

    /// Diagonal of the objective Hessian: `(2, 2, 2p₁, 2p₂)`.
    pub fn hessian_diagonal(&self) -> Vector4<T> {
        let two = lit::<T>(2.0);
        Vector4::new(two, two, two * self.weights.p1, two * self.weights.p2)
    }

    pub fn objective(&self, x: &Vector4<T>) -> T {
        x[0] * x[0] + x[1] * x[1] + self.weights.p1 * x[2] * x[2] + self.weights.p2 * x[3] * x[3]
    }

    pub fn to_dense(&self) -> DenseQp<T> {
        let m = self.rows.len();
        let mut a = DMatrix::zeros(m, NUM_VARS);
        for (i, row) in self.rows.iter().enumerate() {
            for j in 0..NUM_VARS {
                a[(i, j)] = row.coeffs[j];
            }
        }
        DenseQp {
            p: DMatrix::from_diagonal(&DVector::from_iterator(
                NUM_VARS,
                self.hessian_diagonal().iter().copied(),
            )),
            q: DVector::zeros(NUM_VARS),
            a,
            l: DVector::from_element(m, lit::<T>(f64::NEG_INFINITY)),
            u: DVector::from_iterator(m, self.rows.iter().map(|r| r.bound)),
        }
    }

    pub fn solve(&self, solver: &AdmmSolver<T>) -> QpSolution<T> {
        let dense = self.to_dense();
        let sol = solver.solve(&dense);
        let x = Vector4::new(sol.x[0], sol.x[1], sol.x[2], sol.x[3]);
        QpSolution {
            mu_qp: Vector2::new(x[0], x[1]),
            d1: x[2],
            d2: x[3],
            objective: self.objective(&x),
            multipliers: sol.y.iter().copied().collect(),
            status: sol.status,
            kkt: sol.kkt,
            iterations: sol.iterations,
        }
    }

    /// Plain-text dump of the problem and, optionally, a solution.
    pub fn dump(&self, solution: Option<&QpSolution<T>>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# vars: mu1 mu2 d1 d2");
        let _ = writeln!(
            out,
            "weights p1={:e} p2={:e}",
            to_f64(self.weights.p1),
            to_f64(self.weights.p2)
        );
        for row in &self.rows {
            let c = row.coeffs.map(to_f64);
            let _ = writeln!(
                out,
                "{:?} {:e} {:e} {:e} {:e} <= {:e}",
                row.kind,
                c[0],
                c[1],
                c[2],
                c[3],
                to_f64(row.bound)
            );
        }
        if let Some(s) = solution {
            let _ = writeln!(
                out,
                "solution status={} mu=({:e}, {:e}) d1={:e} d2={:e} obj={:e} iters={}",
                s.status.as_str(),
                to_f64(s.mu_qp[0]),
                to_f64(s.mu_qp[1]),
                to_f64(s.d1),
                to_f64(s.d2),
                to_f64(s.objective),
                s.iterations
            );
            let _ = writeln!(
                out,
                "kkt stationarity={:e} primal={:e} complementarity={:e}",
                to_f64(s.kkt.stationarity),
                to_f64(s.kkt.primal),
                to_f64(s.kkt.complementarity)
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution<T: Real> {
    pub mu_qp: Vector2<T>,
    pub d1: T,
    pub d2: T,
    pub objective: T,
    /// One multiplier per row, in row order.
    pub multipliers: Vec<T>,
    pub status: SolverStatus,
    pub kkt: KktResiduals<T>,
    pub iterations: usize,
}

impl<T: Real> QpSolution<T> {
    pub fn as_vector(&self) -> Vector4<T> {
        Vector4::new(self.mu_qp[0], self.mu_qp[1], self.d1, self.d2)
    }
}
