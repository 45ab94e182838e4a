//! Model-mismatch evaluation for the healthy, faulted and mixed hypotheses.
//!
//! Case numbering: `1` healthy over the whole window, `2` faulted over the
//! whole window, `k + 2` for the mixture whose inception falls in block `k`
//! (`k = 1` is the latest block, `k = M` the earliest).

use std::ops::Range;

use nalgebra::{DMatrix, Matrix3xX, Matrix5, Vector5};

use crate::error::{Error, Result};
use crate::grid_model::PhaseImpedance;
use crate::preprocess::PreparedWindow;
use crate::qp_solver::{solve_box_qp, QuadraticProgram, NVARS};

/// Relative Tikhonov weight added to the case Hessians.
pub const REGULARIZATION: f64 = 1e-12;

/// Default upper bounds for `[R_a, R_b, R_c, R_g, α]`.
pub fn default_x_max() -> Vector5<f64> {
    Vector5::new(
        f64::INFINITY,
        f64::INFINITY,
        f64::INFINITY,
        f64::INFINITY,
        1.0,
    )
}

/// Residuals of both line models on one window. `W(x) = w_const + Σ_p x_p·w_coeff[p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchData {
    pub s: DMatrix<f64>,
    pub w_const: DMatrix<f64>,
    pub w_coeff: [DMatrix<f64>; NVARS],
    /// Original record index of each column.
    pub kept_indices: Vec<usize>,
}

impl MismatchData {
    pub fn n_samples(&self) -> usize {
        self.s.ncols()
    }

    /// `W` evaluated at `x`.
    pub fn w_at(&self, x: &Vector5<f64>) -> DMatrix<f64> {
        let mut w = self.w_const.clone();
        for p in 0..NVARS {
            w += &self.w_coeff[p] * x[p];
        }
        w
    }

    fn w_col_sq(&self, x: &Vector5<f64>, j: usize) -> f64 {
        (0..6)
            .map(|i| {
                let mut v = self.w_const[(i, j)];
                for p in 0..NVARS {
                    v += self.w_coeff[p][(i, j)] * x[p];
                }
                v * v
            })
            .sum()
    }

    fn s_col_sq(&self, j: usize) -> f64 {
        self.s.column(j).norm_squared()
    }
}

fn zi(z: &PhaseImpedance, i: &Matrix3xX<f64>, di: &Matrix3xX<f64>) -> Matrix3xX<f64> {
    z.r * i + z.l * di
}

pub fn build_mismatch(pw: &PreparedWindow, z: &PhaseImpedance) -> Result<MismatchData> {
    let n = pw.n_samples();
    let dims_ok = [&pw.u1, &pw.u2, &pw.i1, &pw.i2, &pw.di1, &pw.di2]
        .iter()
        .all(|m| m.ncols() == n)
        && pw.kept_indices.len() == n;
    if !dims_ok {
        return Err(Error::InvalidWindow("channel lengths differ".into()));
    }
    if n == 0 {
        return Err(Error::InvalidWindow("empty window".into()));
    }
    let finite = [&pw.u1, &pw.u2, &pw.i1, &pw.i2, &pw.di1, &pw.di2]
        .iter()
        .all(|m| m.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::DataIntegrity("non-finite sample in window".into()));
    }

    let zi1 = zi(z, &pw.i1, &pw.di1);
    let zi2 = zi(z, &pw.i2, &pw.di2);
    let mut s = DMatrix::zeros(6, n);
    let mut w_const = DMatrix::zeros(6, n);
    let mut w_coeff: [DMatrix<f64>; NVARS] = std::array::from_fn(|_| DMatrix::zeros(6, n));
    for j in 0..n {
        let ground: f64 = (0..3).map(|q| pw.i1[(q, j)] + pw.i2[(q, j)]).sum();
        for p in 0..3 {
            let du = pw.u1[(p, j)] - pw.u2[(p, j)];
            s[(p, j)] = du - zi1[(p, j)];
            s[(p + 3, j)] = -du - zi2[(p, j)];

            w_const[(p, j)] = du + zi2[(p, j)];
            w_coeff[4][(p, j)] = -(zi1[(p, j)] + zi2[(p, j)]);

            w_const[(p + 3, j)] = pw.u1[(p, j)];
            w_coeff[4][(p + 3, j)] = -zi1[(p, j)];
            w_coeff[p][(p + 3, j)] = -(pw.i1[(p, j)] + pw.i2[(p, j)]);
            w_coeff[3][(p + 3, j)] = -ground;
        }
    }
    Ok(MismatchData {
        s,
        w_const,
        w_coeff,
        kept_indices: pw.kept_indices.clone(),
    })
}

/// Column sets of one mixture hypothesis, as 0-based ranges into the window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub k: usize,
    pub set_n: Range<usize>,
    pub set_d: Range<usize>,
    pub set_f: Range<usize>,
}

impl Partition {
    /// Requires `M` to divide `N`.
    pub fn exact(n: usize, m: usize, k: usize) -> Result<Self> {
        check_partition_args(n, m, k)?;
        if !n.is_multiple_of(m) {
            return Err(Error::InvalidParameter(format!(
                "M = {m} does not divide N = {n}"
            )));
        }
        Self::rounded(n, m, k)
    }

    /// Block boundaries at `round(N·(M − k)/M)`; blocks differ by at most one sample.
    pub fn rounded(n: usize, m: usize, k: usize) -> Result<Self> {
        check_partition_args(n, m, k)?;
        let boundary = |k: usize| ((n * (m - k)) as f64 / m as f64).round() as usize;
        let lo = boundary(k);
        let hi = boundary(k - 1);
        Ok(Self {
            k,
            set_n: 0..lo,
            set_d: lo..hi,
            set_f: hi..n,
        })
    }

    /// Original sample indices where the first post-fault sample can lie:
    /// after the last healthy-model column, up to the first faulted-model one.
    pub fn inception_samples(&self, kept: &[usize]) -> (usize, usize) {
        let lo = if self.set_n.is_empty() {
            kept[self.set_d.start]
        } else {
            kept[self.set_n.end - 1] + 1
        };
        let hi = if self.set_f.is_empty() {
            kept[self.set_d.end - 1]
        } else {
            kept[self.set_f.start]
        };
        (lo, hi)
    }

    /// `6·(N − |D|)`.
    pub fn eta(&self) -> f64 {
        6.0 * (self.set_n.len() + self.set_f.len()) as f64
    }
}

fn check_partition_args(n: usize, m: usize, k: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!("M must be >= 2, got {m}")));
    }
    if !(1..=m).contains(&k) {
        return Err(Error::InvalidParameter(format!("k = {k} outside 1..={m}")));
    }
    if n < m {
        return Err(Error::InvalidWindow(format!(
            "{n} samples cannot form {m} blocks"
        )));
    }
    Ok(())
}

pub fn delta_healthy(s: &DMatrix<f64>) -> f64 {
    s.norm_squared() / (6 * s.ncols()) as f64
}

/// Which columns carry the faulted model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaseSpec {
    AllFault,
    Mixture(Partition),
}

impl CaseSpec {
    fn columns(&self, n: usize) -> (Range<usize>, Range<usize>, f64) {
        match self {
            CaseSpec::AllFault => (0..0, 0..n, 6.0 * n as f64),
            CaseSpec::Mixture(p) => (p.set_n.clone(), p.set_f.clone(), p.eta()),
        }
    }
}

/// Quadratic form of one case, or `None` when no column carries the faulted
/// model.
pub fn assemble_case_qp(
    md: &MismatchData,
    case: &CaseSpec,
    x_max: &Vector5<f64>,
) -> Option<QuadraticProgram> {
    let (set_n, set_f, eta) = case.columns(md.n_samples());
    if set_f.is_empty() {
        return None;
    }
    let mut h = Matrix5::zeros();
    let mut f = Vector5::zeros();
    let mut d: f64 = set_n.map(|j| md.s_col_sq(j)).sum();
    for j in set_f {
        for i in 0..6 {
            let a = Vector5::from_fn(|p, _| md.w_coeff[p][(i, j)]);
            let c = md.w_const[(i, j)];
            h += a * a.transpose();
            f += a * (2.0 * c);
            d += c * c;
        }
    }
    Some(QuadraticProgram {
        h: h / eta,
        f: f / eta,
        d: d / eta,
        lower: Vector5::zeros(),
        upper: *x_max,
    })
}

/// Adds `λ·H_ii` to each diagonal entry, or `λ·trace/5` where a column is empty.
pub fn regularize(qp: &mut QuadraticProgram) {
    let floor = REGULARIZATION * qp.h.trace() / NVARS as f64;
    for i in 0..NVARS {
        let hii = qp.h[(i, i)];
        qp.h[(i, i)] += if hii > 0.0 {
            REGULARIZATION * hii
        } else {
            floor.max(f64::MIN_POSITIVE)
        };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub m: usize,
    pub delta: f64,
    pub x_star: Option<Vector5<f64>>,
    /// Range of original sample indices holding the first post-fault sample.
    /// Covers the inception block plus any removed samples next to it.
    pub inception_interval: Option<(usize, usize)>,
}

/// Mean-squared mismatch of a case at `x`, summed directly from the residuals.
pub fn case_delta(md: &MismatchData, case: &CaseSpec, x: &Vector5<f64>) -> f64 {
    let (set_n, set_f, eta) = case.columns(md.n_samples());
    let healthy: f64 = set_n.map(|j| md.s_col_sq(j)).sum();
    let faulted: f64 = set_f.map(|j| md.w_col_sq(x, j)).sum();
    (healthy + faulted) / eta
}

fn solve_case(
    md: &MismatchData,
    case: CaseSpec,
    m: usize,
    x_max: &Vector5<f64>,
) -> Result<CaseResult> {
    let interval = match &case {
        CaseSpec::Mixture(p) => Some(p.inception_samples(&md.kept_indices)),
        CaseSpec::AllFault => None,
    };
    let Some(mut qp) = assemble_case_qp(md, &case, x_max) else {
        let (set_n, _, eta) = case.columns(md.n_samples());
        let delta = set_n.map(|j| md.s_col_sq(j)).sum::<f64>() / eta;
        return Ok(CaseResult {
            m,
            delta,
            x_star: None,
            inception_interval: interval,
        });
    };
    regularize(&mut qp);
    let sol = solve_box_qp(&qp)?;
    let delta = case_delta(md, &case, &sol.x_star);
    Ok(CaseResult {
        m,
        delta,
        x_star: Some(sol.x_star),
        inception_interval: interval,
    })
}

/// All `M + 2` cases in order of `m`.
pub fn evaluate_cases(
    md: &MismatchData,
    m_blocks: usize,
    x_max: &Vector5<f64>,
) -> Result<Vec<CaseResult>> {
    let n = md.n_samples();
    let mut out = Vec::with_capacity(m_blocks + 2);
    out.push(CaseResult {
        m: 1,
        delta: delta_healthy(&md.s),
        x_star: None,
        inception_interval: None,
    });
    out.push(solve_case(md, CaseSpec::AllFault, 2, x_max)?);
    for k in 1..=m_blocks {
        let part = Partition::rounded(n, m_blocks, k)?;
        out.push(solve_case(md, CaseSpec::Mixture(part), k + 2, x_max)?);
    }
    if let Some(bad) = out.iter().find(|c| !c.delta.is_finite()) {
        return Err(Error::DataIntegrity(format!(
            "non-finite delta in case {}",
            bad.m
        )));
    }
    Ok(out)
}

pub fn evaluate_all_cases(
    pw: &PreparedWindow,
    z: &PhaseImpedance,
    m_blocks: usize,
    x_max: &Vector5<f64>,
) -> Result<Vec<CaseResult>> {
    let md = build_mismatch(pw, z)?;
    evaluate_cases(&md, m_blocks, x_max)
}
