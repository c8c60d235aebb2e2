//! Dense operator-splitting QP solver.
//!
//! Solves `min ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u` with the OSQP iteration
//! (relaxed ADMM, per-row step sizes, adaptive `ρ`), followed by an
//! active-set polish that solves the reduced KKT system exactly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::scalar::{lit, Real};

/// Dense QP data. Infinite bounds are allowed in `l` and `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseQp<T: Real> {
    pub p: DMatrix<T>,
    pub q: DVector<T>,
    pub a: DMatrix<T>,
    pub l: DVector<T>,
    pub u: DVector<T>,
}

impl<T: Real> DenseQp<T> {
    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_rows(&self) -> usize {
        self.l.len()
    }

    pub fn objective(&self, x: &DVector<T>) -> T {
        lit::<T>(0.5) * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Stationarity, primal feasibility and complementarity residuals at `(x, y)`.
    pub fn kkt(&self, x: &DVector<T>, y: &DVector<T>) -> KktResiduals<T> {
        let ax = &self.a * x;
        let grad = &self.p * x + &self.q + self.a.transpose() * y;
        let mut primal = T::zero();
        let mut comp = T::zero();
        for i in 0..self.num_rows() {
            primal = primal.max(ax[i] - self.u[i]).max(self.l[i] - ax[i]);
            let yi = y[i];
            if yi > T::zero() {
                // a positive multiplier on a row without an upper bound is itself the violation
                comp = comp.max(if self.u[i].is_finite() {
                    yi * (self.u[i] - ax[i]).abs()
                } else {
                    yi
                });
            } else if yi < T::zero() {
                comp = comp.max(if self.l[i].is_finite() {
                    -yi * (ax[i] - self.l[i]).abs()
                } else {
                    -yi
                });
            }
        }
        KktResiduals {
            stationarity: grad.amax(),
            primal: primal.max(T::zero()),
            complementarity: comp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals<T: Real> {
    pub stationarity: T,
    pub primal: T,
    pub complementarity: T,
}

impl<T: Real> KktResiduals<T> {
    pub fn max(&self) -> T {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::MaxIter => "max_iter",
            SolverStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseSolution<T: Real> {
    pub x: DVector<T>,
    pub y: DVector<T>,
    pub status: SolverStatus,
    pub kkt: KktResiduals<T>,
    pub iterations: usize,
    pub polished: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmmSettings<T: Real> {
    pub rho: T,
    pub sigma: T,
    pub alpha: T,
    pub eps_abs: T,
    pub eps_rel: T,
    pub eps_infeasible: T,
    pub max_iter: usize,
    /// Iterations between termination / `ρ` adaptation checks.
    pub check_every: usize,
    pub adaptive_rho: bool,
    pub polish: bool,
    /// Residual bound required to report [`SolverStatus::Optimal`].
    pub kkt_tol: T,
}

impl<T: Real> Default for AdmmSettings<T> {
    fn default() -> Self {
        Self {
            rho: lit(0.1),
            sigma: lit(1e-6),
            alpha: lit(1.6),
            eps_abs: lit(1e-6),
            eps_rel: lit(1e-6),
            eps_infeasible: lit(1e-7),
            max_iter: 4000,
            check_every: 10,
            adaptive_rho: true,
            polish: true,
            kkt_tol: lit(1e-6),
        }
    }
}

/// Reusable solver; holds no state between calls.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AdmmSolver<T: Real> {
    pub settings: AdmmSettings<T>,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
/// Residual multiple of the tolerances at which polishing is first tried.
const POLISH_EARLY: f64 = 1e3;
const POLISH_ROUNDS: usize = 25;
/// Sign and feasibility slack accepted by the polish.
const POLISH_TOL: f64 = 1e-10;

impl<T: Real> AdmmSolver<T> {
    pub fn new(settings: AdmmSettings<T>) -> Self {
        Self { settings }
    }

    pub fn solve(&self, qp: &DenseQp<T>) -> DenseSolution<T> {
        let n = qp.num_vars();
        let m = qp.num_rows();
        if (0..m).any(|i| qp.l[i] > qp.u[i]) {
            return DenseSolution {
                x: DVector::zeros(n),
                y: DVector::zeros(m),
                status: SolverStatus::Infeasible,
                kkt: qp.kkt(&DVector::zeros(n), &DVector::zeros(m)),
                iterations: 0,
                polished: false,
            };
        }
        // Row equilibration: unit ∞-norm rows.
        let scaled = scale_rows(qp);
        let mut sol = self.solve_scaled(&scaled.qp);
        for i in 0..m {
            sol.y[i] *= scaled.row_scale[i];
        }
        sol.kkt = qp.kkt(&sol.x, &sol.y);
        if sol.status == SolverStatus::Optimal && !(sol.kkt.max() < self.settings.kkt_tol) {
            sol.status = SolverStatus::MaxIter;
        }
        sol
    }

    fn solve_scaled(&self, qp: &DenseQp<T>) -> DenseSolution<T> {
        let s = &self.settings;
        let n = qp.num_vars();
        let m = qp.num_rows();
        let rho_min = lit::<T>(RHO_MIN);
        let rho_max = lit::<T>(RHO_MAX);

        let row_rho = |rho: T, i: usize| -> T {
            let (l, u) = (qp.l[i], qp.u[i]);
            if !l.is_finite() && !u.is_finite() {
                rho_min
            } else if l == u {
                rho * lit::<T>(RHO_EQ_SCALE)
            } else {
                rho
            }
        };

        let mut rho = s.rho;
        let mut rho_vec = DVector::from_fn(m, |i, _| row_rho(rho, i));
        let mut kkt_mat = match factor(qp, &rho_vec, s.sigma) {
            Some(f) => f,
            None => {
                return DenseSolution {
                    x: DVector::zeros(n),
                    y: DVector::zeros(m),
                    status: SolverStatus::MaxIter,
                    kkt: qp.kkt(&DVector::zeros(n), &DVector::zeros(m)),
                    iterations: 0,
                    polished: false,
                }
            }
        };

        let mut x = DVector::<T>::zeros(n);
        let mut z = DVector::<T>::zeros(m);
        let mut y = DVector::<T>::zeros(m);
        let mut rhs = DVector::<T>::zeros(n);
        let mut tmp_m = DVector::<T>::zeros(m);
        let mut z_tilde = DVector::<T>::zeros(m);
        let mut y_prev = DVector::<T>::zeros(m);
        let one = T::one();

        let mut iter = 0;
        while iter < s.max_iter {
            iter += 1;
            y_prev.copy_from(&y);
            // rhs = σx − q + Aᵀ(ρz − y)
            for i in 0..m {
                tmp_m[i] = rho_vec[i] * z[i] - y[i];
            }
            rhs.copy_from(&x);
            rhs *= s.sigma;
            rhs -= &qp.q;
            rhs.gemv_tr(one, &qp.a, &tmp_m, one);
            kkt_mat.solve_mut(&mut rhs);
            // rhs now holds x̃
            z_tilde.gemv(one, &qp.a, &rhs, T::zero());
            for j in 0..n {
                x[j] = s.alpha * rhs[j] + (one - s.alpha) * x[j];
            }
            for i in 0..m {
                let relaxed = s.alpha * z_tilde[i] + (one - s.alpha) * z[i];
                let z_new = (relaxed + y[i] / rho_vec[i]).max(qp.l[i]).min(qp.u[i]);
                y[i] += rho_vec[i] * (relaxed - z_new);
                z[i] = z_new;
            }

            if iter % s.check_every != 0 && iter != s.max_iter {
                continue;
            }

            let ax = &qp.a * &x;
            let px = &qp.p * &x;
            let aty = qp.a.transpose() * &y;
            let prim = (&ax - &z).amax();
            let dual = (&px + &qp.q + &aty).amax();
            let prim_scale = ax.amax().max(z.amax());
            let dual_scale = px.amax().max(aty.amax()).max(qp.q.amax());
            let eps_prim = s.eps_abs + s.eps_rel * prim_scale;
            let eps_dual = s.eps_abs + s.eps_rel * dual_scale;

            // Polishing often recovers the exact solution well before the
            // residuals reach tolerance; the KKT check in `finish` guards it.
            let slack = if s.polish {
                lit::<T>(POLISH_EARLY)
            } else {
                one
            };
            if prim <= slack * eps_prim && dual <= slack * eps_dual {
                if let Some(done) = self.finish(qp, &x, &y, &z, iter) {
                    return done;
                }
            }

            if self.primal_infeasible(qp, &y, &y_prev) {
                return DenseSolution {
                    kkt: qp.kkt(&x, &y),
                    x,
                    y,
                    status: SolverStatus::Infeasible,
                    iterations: iter,
                    polished: false,
                };
            }

            if s.adaptive_rho {
                let tiny = lit::<T>(1e-30);
                let num = prim / (prim_scale + tiny);
                let den = dual / (dual_scale + tiny);
                let mut new_rho = rho * (num / (den + tiny)).sqrt();
                new_rho = new_rho.max(rho_min).min(rho_max);
                if new_rho > rho * lit::<T>(5.0) || new_rho < rho * lit::<T>(0.2) {
                    rho = new_rho;
                    rho_vec = DVector::from_fn(m, |i, _| row_rho(rho, i));
                    if let Some(f) = factor(qp, &rho_vec, s.sigma) {
                        kkt_mat = f;
                    }
                }
            }
        }

        let polished = if s.polish { polish(qp, &y, &z) } else { None };
        let (x, y, polished) = match polished {
            Some((px, py)) if qp.kkt(&px, &py).max() < qp.kkt(&x, &y).max() => (px, py, true),
            _ => (x, y, false),
        };
        DenseSolution {
            kkt: qp.kkt(&x, &y),
            x,
            y,
            status: SolverStatus::MaxIter,
            iterations: iter,
            polished,
        }
    }

    fn finish(
        &self,
        qp: &DenseQp<T>,
        x: &DVector<T>,
        y: &DVector<T>,
        z: &DVector<T>,
        iter: usize,
    ) -> Option<DenseSolution<T>> {
        let tol = self.settings.kkt_tol;
        if self.settings.polish {
            if let Some((px, py)) = polish(qp, y, z) {
                let kkt = qp.kkt(&px, &py);
                if kkt.max() < tol {
                    return Some(DenseSolution {
                        x: px,
                        y: py,
                        status: SolverStatus::Optimal,
                        kkt,
                        iterations: iter,
                        polished: true,
                    });
                }
            }
        }
        let kkt = qp.kkt(x, y);
        if kkt.max() < tol {
            return Some(DenseSolution {
                x: x.clone(),
                y: y.clone(),
                status: SolverStatus::Optimal,
                kkt,
                iterations: iter,
                polished: false,
            });
        }
        None
    }

    fn primal_infeasible(&self, qp: &DenseQp<T>, y: &DVector<T>, y_prev: &DVector<T>) -> bool {
        let dy = y - y_prev;
        let norm = dy.amax();
        if norm <= T::default_epsilon() {
            return false;
        }
        let eps = self.settings.eps_infeasible * norm;
        if (qp.a.transpose() * &dy).amax() > eps {
            return false;
        }
        let mut support = T::zero();
        for i in 0..qp.num_rows() {
            if dy[i] > T::zero() {
                if !qp.u[i].is_finite() {
                    return false;
                }
                support += qp.u[i] * dy[i];
            } else if dy[i] < T::zero() {
                if !qp.l[i].is_finite() {
                    return false;
                }
                support += qp.l[i] * dy[i];
            }
        }
        support < -eps
    }
}

fn factor<T: Real>(qp: &DenseQp<T>, rho: &DVector<T>, sigma: T) -> Option<Cholesky<T, Dyn>> {
    let n = qp.num_vars();
    let mut k = qp.p.clone();
    for j in 0..n {
        k[(j, j)] += sigma;
    }
    for i in 0..qp.num_rows() {
        let row = qp.a.row(i);
        for c in 0..n {
            for r in 0..n {
                k[(r, c)] += rho[i] * row[r] * row[c];
            }
        }
    }
    Cholesky::new(k)
}

struct ScaledQp<T: Real> {
    qp: DenseQp<T>,
    row_scale: DVector<T>,
}

fn scale_rows<T: Real>(qp: &DenseQp<T>) -> ScaledQp<T> {
    let m = qp.num_rows();
    let mut scaled = qp.clone();
    let mut row_scale = DVector::from_element(m, T::one());
    for i in 0..m {
        let norm = qp.a.row(i).amax();
        if norm > T::zero() {
            let d = T::one() / norm;
            row_scale[i] = d;
            for j in 0..qp.num_vars() {
                scaled.a[(i, j)] *= d;
            }
            scaled.l[i] *= d;
            scaled.u[i] *= d;
        }
    }
    ScaledQp {
        qp: scaled,
        row_scale,
    }
}

/// Which bound an active row is held at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
    Equal,
}

/// Solves the equality-constrained KKT system with the rows in `active` held
/// at their bounds, using a small regularisation and iterative refinement.
fn solve_active<T: Real>(
    qp: &DenseQp<T>,
    active: &[(usize, Side)],
) -> Option<(DVector<T>, DVector<T>)> {
    let n = qp.num_vars();
    let k = active.len();
    let dim = n + k;
    let delta = lit::<T>(1e-9);
    let mut kkt = DMatrix::<T>::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    let mut rhs = DVector::<T>::zeros(dim);
    for j in 0..n {
        rhs[j] = -qp.q[j];
    }
    for (r, (i, side)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = qp.a[(*i, j)];
            kkt[(j, n + r)] = qp.a[(*i, j)];
        }
        rhs[n + r] = if *side == Side::Lower {
            qp.l[*i]
        } else {
            qp.u[*i]
        };
    }
    let mut reg = kkt.clone();
    for j in 0..n {
        reg[(j, j)] += delta;
    }
    for r in 0..k {
        reg[(n + r, n + r)] -= delta;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..5 {
        let resid = &rhs - &kkt * &sol;
        sol += lu.solve(&resid)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = DVector::from_iterator(n, sol.iter().take(n).copied());
    let mut y = DVector::<T>::zeros(qp.num_rows());
    for (r, (i, _)) in active.iter().enumerate() {
        y[*i] = sol[n + r];
    }
    Some((x, y))
}

/// Guesses the active set from the ADMM iterate, then corrects it a few
/// times: the worst wrong-sign multiplier leaves, otherwise the most violated
/// inactive row joins. Returns the first point with neither defect.
fn polish<T: Real>(
    qp: &DenseQp<T>,
    y: &DVector<T>,
    z: &DVector<T>,
) -> Option<(DVector<T>, DVector<T>)> {
    let m = qp.num_rows();
    let mut active: Vec<(usize, Side)> = Vec::new();
    for i in 0..m {
        if qp.l[i].is_finite() && qp.l[i] == qp.u[i] {
            active.push((i, Side::Equal));
        } else if qp.l[i].is_finite() && z[i] - qp.l[i] < -y[i] {
            active.push((i, Side::Lower));
        } else if qp.u[i].is_finite() && qp.u[i] - z[i] < y[i] {
            active.push((i, Side::Upper));
        }
    }
    let tol = lit::<T>(POLISH_TOL);
    for _ in 0..POLISH_ROUNDS {
        let (x, yp) = solve_active(qp, &active)?;
        let mut worst: Option<(usize, T)> = None;
        for (r, (i, side)) in active.iter().enumerate() {
            let wrong = match side {
                Side::Upper => -yp[*i],
                Side::Lower => yp[*i],
                Side::Equal => T::zero(),
            };
            if wrong > tol && worst.is_none_or(|(_, w)| wrong > w) {
                worst = Some((r, wrong));
            }
        }
        if let Some((r, _)) = worst {
            active.remove(r);
            continue;
        }
        let ax = &qp.a * &x;
        let mut violated: Option<(usize, Side, T)> = None;
        for i in 0..m {
            if active.iter().any(|(j, _)| *j == i) {
                continue;
            }
            for (gap, side) in [
                (ax[i] - qp.u[i], Side::Upper),
                (qp.l[i] - ax[i], Side::Lower),
            ] {
                if gap > tol && violated.is_none_or(|(_, _, g)| gap > g) {
                    violated = Some((i, side, gap));
                }
            }
        }
        match violated {
            Some((i, side, _)) => active.push((i, side)),
            None => return Some((x, yp)),
        }
    }
    None
}
