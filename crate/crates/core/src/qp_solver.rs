//! Exact solver for small box-constrained convex quadratic programs
//!
//! ```text
//! minimize  xᵀHx + Fᵀx + d   subject to  lower ≤ x ≤ upper
//! ```
//!
//! over the five fault parameters `[R_a, R_b, R_c, R_g, α]`. Every assignment
//! of the variables to {at lower, at upper, free} is tried; the free block is
//! solved from the stationarity condition and the best KKT point wins.

use nalgebra::{Matrix5, Vector5};

use crate::error::{Error, Result};

pub const NVARS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: Matrix5<f64>,
    pub f: Vector5<f64>,
    pub d: f64,
    pub lower: Vector5<f64>,
    /// Entries may be `f64::INFINITY`.
    pub upper: Vector5<f64>,
}

impl QuadraticProgram {
    pub fn objective(&self, x: &Vector5<f64>) -> f64 {
        x.dot(&(self.h * x)) + self.f.dot(x) + self.d
    }

    pub fn gradient(&self, x: &Vector5<f64>) -> Vector5<f64> {
        self.h * x * 2.0 + self.f
    }

    pub fn project(&self, x: &Vector5<f64>) -> Vector5<f64> {
        Vector5::from_fn(|i, _| x[i].clamp(self.lower[i], self.upper[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundStatus {
    Free,
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x_star: Vector5<f64>,
    pub objective: f64,
    pub active_set: [BoundStatus; NVARS],
}

impl QpSolution {
    pub fn active_count(&self) -> usize {
        self.active_set
            .iter()
            .filter(|s| **s != BoundStatus::Free)
            .count()
    }
}

const KKT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-12;

/// Solves `A y = b` for symmetric `A` (given as the leading `n` rows and
/// columns) by LDLᵀ without pivoting. `None` when a pivot falls below
/// `PIVOT_TOL · max diag`.
fn ldlt_solve(a: &[[f64; NVARS]; NVARS], b: &[f64; NVARS], n: usize) -> Option<[f64; NVARS]> {
    let max_diag = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    if n > 0 && !(max_diag > 0.0) {
        return None;
    }
    let tol = PIVOT_TOL * max_diag;
    let mut l = [[0.0; NVARS]; NVARS];
    let mut dg = [0.0; NVARS];
    for j in 0..n {
        let mut djj = a[j][j];
        for k in 0..j {
            djj -= l[j][k] * l[j][k] * dg[k];
        }
        if !(djj > tol) {
            return None;
        }
        dg[j] = djj;
        l[j][j] = 1.0;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k] * dg[k];
            }
            l[i][j] = s / djj;
        }
    }
    let mut y = [0.0; NVARS];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s;
    }
    for i in 0..n {
        y[i] /= dg[i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k][i] * y[k];
        }
        y[i] = s;
    }
    Some(y)
}

/// Minimizer with the given variables pinned to their bounds, if the reduced
/// system is nonsingular.
fn solve_assignment(
    qp: &QuadraticProgram,
    status: &[BoundStatus; NVARS],
    scale: &Vector5<f64>,
) -> Option<Vector5<f64>> {
    let mut x = Vector5::zeros();
    let mut free = [0usize; NVARS];
    let mut nf = 0;
    for i in 0..NVARS {
        match status[i] {
            BoundStatus::AtLower => x[i] = qp.lower[i],
            BoundStatus::AtUpper => x[i] = qp.upper[i],
            BoundStatus::Free => {
                free[nf] = i;
                nf += 1;
            }
        }
    }
    if nf == 0 {
        return Some(x);
    }
    // Stationarity on the free block: H_ff x_f = −(F_f/2 + H_fc x_c), Jacobi-scaled.
    let mut a = [[0.0; NVARS]; NVARS];
    let mut b = [0.0; NVARS];
    for (r, &i) in free[..nf].iter().enumerate() {
        let mut rhs = -0.5 * qp.f[i];
        for j in 0..NVARS {
            if status[j] != BoundStatus::Free {
                rhs -= qp.h[(i, j)] * x[j];
            }
        }
        b[r] = rhs * scale[i];
        for (c, &j) in free[..nf].iter().enumerate() {
            a[r][c] = qp.h[(i, j)] * scale[i] * scale[j];
        }
    }
    let y = ldlt_solve(&a, &b, nf)?;
    for (r, &i) in free[..nf].iter().enumerate() {
        x[i] = y[r] * scale[i];
    }
    Some(x)
}

fn feasible(qp: &QuadraticProgram, x: &Vector5<f64>) -> bool {
    (0..NVARS).all(|i| {
        let slack = 1e-10 * (1.0 + x[i].abs());
        x[i].is_finite() && x[i] >= qp.lower[i] - slack && x[i] <= qp.upper[i] + slack
    })
}

fn kkt_holds(qp: &QuadraticProgram, x: &Vector5<f64>, status: &[BoundStatus; NVARS]) -> bool {
    let g = qp.gradient(x);
    let hx_abs = qp.h.abs() * x.abs() * 2.0;
    (0..NVARS).all(|i| {
        let tol = KKT_TOL * (qp.f[i].abs() + hx_abs[i]).max(f64::MIN_POSITIVE);
        match status[i] {
            BoundStatus::Free => g[i].abs() <= tol,
            BoundStatus::AtLower => g[i] >= -tol,
            BoundStatus::AtUpper => g[i] <= tol,
        }
    })
}

fn better(a: &QpSolution, b: &QpSolution, tol: f64) -> bool {
    if a.objective < b.objective - tol {
        return true;
    }
    if a.objective > b.objective + tol {
        return false;
    }
    match a.active_count().cmp(&b.active_count()) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.x_star.iter().lt(b.x_star.iter()),
    }
}

pub fn solve_box_qp(qp: &QuadraticProgram) -> Result<QpSolution> {
    for i in 0..NVARS {
        if !(qp.lower[i] <= qp.upper[i]) || !qp.lower[i].is_finite() {
            return Err(Error::Solver(format!(
                "bad bounds for x[{i}]: [{}, {}]",
                qp.lower[i], qp.upper[i]
            )));
        }
    }
    if qp.h.iter().chain(qp.f.iter()).any(|v| !v.is_finite()) || !qp.d.is_finite() {
        return Err(Error::DataIntegrity("non-finite QP coefficients".into()));
    }
    let scale = Vector5::from_fn(|i, _| {
        let h = qp.h[(i, i)];
        if h > 0.0 {
            1.0 / h.sqrt()
        } else {
            1.0
        }
    });

    let mut options: [Vec<BoundStatus>; NVARS] = Default::default();
    for (i, opts) in options.iter_mut().enumerate() {
        opts.push(BoundStatus::AtLower);
        if qp.upper[i].is_finite() && qp.upper[i] > qp.lower[i] {
            opts.push(BoundStatus::AtUpper);
        }
        opts.push(BoundStatus::Free);
    }
    let total: usize = options.iter().map(Vec::len).product();

    let mut best: Option<QpSolution> = None;
    for code in 0..total {
        let mut rest = code;
        let status: [BoundStatus; NVARS] = std::array::from_fn(|i| {
            let s = options[i][rest % options[i].len()];
            rest /= options[i].len();
            s
        });
        let Some(x) = solve_assignment(qp, &status, &scale) else {
            continue;
        };
        if !feasible(qp, &x) {
            continue;
        }
        let x = qp.project(&x);
        if !kkt_holds(qp, &x, &status) {
            continue;
        }
        let cand = QpSolution {
            objective: qp.objective(&x),
            x_star: x,
            active_set: status,
        };
        let tol = 1e-12 * (cand.objective.abs() + qp.d.abs()).max(f64::MIN_POSITIVE);
        if best.as_ref().is_none_or(|b| better(&cand, b, tol)) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| {
        Error::Solver("no KKT point found; H is probably not positive semidefinite".into())
    })
}
