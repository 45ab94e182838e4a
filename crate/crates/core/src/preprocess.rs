//! Turns a raw window of synchronized streams into a [`PreparedWindow`].
//!
//! Three steps, always in this order: drop timestamps lost on the remote
//! stream, estimate current derivatives by local quadratic least squares on
//! the actual sample times, and cut out the `l − 2` consecutive samples whose
//! second-derivative estimates are largest (the ones whose fits may straddle
//! a fault inception).

use nalgebra::{Matrix3, Matrix3xX, Vector3};

use crate::emt_sim::WaveformRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    /// Samples per local polynomial fit; odd, at least 3.
    pub l: usize,
    /// Windows with a larger fraction of missing remote samples are rejected.
    pub max_missing_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            l: 5,
            max_missing_fraction: 0.2,
        }
    }
}

/// A contiguous slice of a [`WaveformRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub sample_rate_hz: f64,
    pub timestamps: Vec<f64>,
    /// Position of each column in the source record.
    pub indices: Vec<usize>,
    pub u1: Matrix3xX<f64>,
    pub u2: Matrix3xX<f64>,
    pub i1: Matrix3xX<f64>,
    pub i2: Matrix3xX<f64>,
    pub missing: Vec<bool>,
}

impl RawWindow {
    pub fn from_record(w: &WaveformRecord, start: usize, len: usize) -> Result<Self> {
        if start + len > w.len() {
            return Err(Error::InvalidWindow(format!(
                "window [{start}, {}) exceeds record of {} samples",
                start + len,
                w.len()
            )));
        }
        let cut = |m: &Matrix3xX<f64>| m.columns(start, len).into_owned();
        Ok(Self {
            sample_rate_hz: w.sample_rate_hz,
            timestamps: w.timestamps[start..start + len].to_vec(),
            indices: (start..start + len).collect(),
            u1: cut(&w.u1),
            u2: cut(&w.u2),
            i1: cut(&w.i1),
            i2: cut(&w.i2),
            missing: w.missing[start..start + len].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// Window with lost timestamps removed from all twelve channels.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedWindow {
    pub sample_rate_hz: f64,
    pub timestamps: Vec<f64>,
    pub kept_indices: Vec<usize>,
    pub u1: Matrix3xX<f64>,
    pub u2: Matrix3xX<f64>,
    pub i1: Matrix3xX<f64>,
    pub i2: Matrix3xX<f64>,
}

impl AlignedWindow {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

fn select_columns(m: &Matrix3xX<f64>, cols: &[usize]) -> Matrix3xX<f64> {
    Matrix3xX::from_fn(cols.len(), |p, j| m[(p, cols[j])])
}

pub fn align(raw: &RawWindow, max_missing_fraction: f64) -> Result<AlignedWindow> {
    let keep: Vec<usize> = (0..raw.len()).filter(|&j| !raw.missing[j]).collect();
    let missing = raw.len() - keep.len();
    if !raw.is_empty() && missing as f64 > max_missing_fraction * raw.len() as f64 {
        return Err(Error::DegradedData {
            missing,
            total: raw.len(),
            limit: 100.0 * max_missing_fraction,
        });
    }
    Ok(AlignedWindow {
        sample_rate_hz: raw.sample_rate_hz,
        timestamps: keep.iter().map(|&j| raw.timestamps[j]).collect(),
        kept_indices: keep.iter().map(|&j| raw.indices[j]).collect(),
        u1: select_columns(&raw.u1, &keep),
        u2: select_columns(&raw.u2, &keep),
        i1: select_columns(&raw.i1, &keep),
        i2: select_columns(&raw.i2, &keep),
    })
}

/// Per-sample linear weights giving the first and second derivative of the
/// local least-squares quadratic.
#[derive(Debug, Clone)]
pub struct DerivativeStencils {
    l: usize,
    starts: Vec<usize>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl DerivativeStencils {
    pub fn new(times: &[f64], l: usize) -> Result<Self> {
        if l < 3 || l.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "l must be odd and >= 3, got {l}"
            )));
        }
        let n = times.len();
        if n < l {
            return Err(Error::InvalidWindow(format!(
                "{n} samples cannot hold a fit over {l}"
            )));
        }
        let mut starts = Vec::with_capacity(n);
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        for j in 0..n {
            let s = j.saturating_sub(l / 2).min(n - l);
            let span = times[s + l - 1] - times[s];
            if !(span > 0.0) {
                return Err(Error::InvalidWindow("timestamps must increase".into()));
            }
            let h = span / (l - 1) as f64;
            let tau: Vec<f64> = (0..l).map(|k| (times[s + k] - times[j]) / h).collect();
            let mut ata = Matrix3::zeros();
            for &t in &tau {
                let row = Vector3::new(1.0, t, t * t);
                ata += row * row.transpose();
            }
            let inv = ata
                .try_inverse()
                .ok_or_else(|| Error::InvalidWindow("degenerate sample times in fit".into()))?;
            // Coefficients c = inv·Aᵀ·y; f'(0) = c₁/h and f'' = 2c₂/h².
            let mut w1 = Vec::with_capacity(l);
            let mut w2 = Vec::with_capacity(l);
            for &t in &tau {
                let col = inv * Vector3::new(1.0, t, t * t);
                w1.push(col[1] / h);
                w2.push(2.0 * col[2] / (h * h));
            }
            starts.push(s);
            first.push(w1);
            second.push(w2);
        }
        Ok(Self {
            l,
            starts,
            first,
            second,
        })
    }

    pub fn apply(&self, signal: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut d1 = Vec::with_capacity(self.starts.len());
        let mut d2 = Vec::with_capacity(self.starts.len());
        for (j, &s) in self.starts.iter().enumerate() {
            let seg = &signal[s..s + self.l];
            d1.push(seg.iter().zip(&self.first[j]).map(|(y, w)| y * w).sum());
            d2.push(seg.iter().zip(&self.second[j]).map(|(y, w)| y * w).sum());
        }
        (d1, d2)
    }

    fn apply_rows(&self, m: &Matrix3xX<f64>) -> (Matrix3xX<f64>, Matrix3xX<f64>) {
        let n = m.ncols();
        let mut d1 = Matrix3xX::zeros(n);
        let mut d2 = Matrix3xX::zeros(n);
        for p in 0..3 {
            let row: Vec<f64> = m.row(p).iter().copied().collect();
            let (a, b) = self.apply(&row);
            for j in 0..n {
                d1[(p, j)] = a[j];
                d2[(p, j)] = b[j];
            }
        }
        (d1, d2)
    }
}

/// First and second derivative of one signal row sampled at `times`.
pub fn estimate_derivatives(
    times: &[f64],
    signal: &[f64],
    l: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if times.len() != signal.len() {
        return Err(Error::InvalidWindow(
            "signal and time lengths differ".into(),
        ));
    }
    Ok(DerivativeStencils::new(times, l)?.apply(signal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedWindow {
    pub aligned: AlignedWindow,
    pub di1: Matrix3xX<f64>,
    pub di2: Matrix3xX<f64>,
    pub d2i1: Matrix3xX<f64>,
    pub d2i2: Matrix3xX<f64>,
}

pub fn with_derivatives(aligned: AlignedWindow, l: usize) -> Result<DerivedWindow> {
    let st = DerivativeStencils::new(&aligned.timestamps, l)?;
    let (di1, d2i1) = st.apply_rows(&aligned.i1);
    let (di2, d2i2) = st.apply_rows(&aligned.i2);
    Ok(DerivedWindow {
        aligned,
        di1,
        di2,
        d2i1,
        d2i2,
    })
}

/// Measurement matrices ready for model evaluation; all share `N` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWindow {
    pub sample_rate_hz: f64,
    pub timestamps: Vec<f64>,
    pub kept_indices: Vec<usize>,
    pub removed_indices: Vec<usize>,
    pub u1: Matrix3xX<f64>,
    pub u2: Matrix3xX<f64>,
    pub i1: Matrix3xX<f64>,
    pub i2: Matrix3xX<f64>,
    pub di1: Matrix3xX<f64>,
    pub di2: Matrix3xX<f64>,
}

impl PreparedWindow {
    pub fn n_samples(&self) -> usize {
        self.timestamps.len()
    }
}

/// Start of the run of `run` consecutive samples with the largest summed score
/// (earliest on ties).
fn best_run(score: &[f64], run: usize) -> usize {
    let mut acc: f64 = score[..run].iter().sum();
    let (mut best, mut best_at) = (acc, 0);
    for s in 1..=score.len() - run {
        acc += score[s + run - 1] - score[s - 1];
        if acc > best {
            best = acc;
            best_at = s;
        }
    }
    best_at
}

pub fn remove_inception_samples(dw: &DerivedWindow, l: usize) -> Result<PreparedWindow> {
    let n = dw.aligned.len();
    let run = l
        .checked_sub(2)
        .filter(|r| *r >= 1)
        .ok_or_else(|| Error::InvalidParameter(format!("l must be >= 3, got {l}")))?;
    if n < 2 * run {
        return Err(Error::InvalidWindow(format!(
            "{n} samples is too short to remove {run} inception samples"
        )));
    }
    let score: Vec<f64> = (0..n)
        .map(|j| {
            (0..3)
                .flat_map(|p| [dw.d2i1[(p, j)].abs(), dw.d2i2[(p, j)].abs()])
                .fold(0.0, f64::max)
        })
        .collect();
    let start = best_run(&score, run);
    let keep: Vec<usize> = (0..n).filter(|j| *j < start || *j >= start + run).collect();
    let a = &dw.aligned;
    Ok(PreparedWindow {
        sample_rate_hz: a.sample_rate_hz,
        timestamps: keep.iter().map(|&j| a.timestamps[j]).collect(),
        kept_indices: keep.iter().map(|&j| a.kept_indices[j]).collect(),
        removed_indices: (start..start + run).map(|j| a.kept_indices[j]).collect(),
        u1: select_columns(&a.u1, &keep),
        u2: select_columns(&a.u2, &keep),
        i1: select_columns(&a.i1, &keep),
        i2: select_columns(&a.i2, &keep),
        di1: select_columns(&dw.di1, &keep),
        di2: select_columns(&dw.di2, &keep),
    })
}

/// Full preprocessing chain for one window.
pub fn prepare(raw: &RawWindow, cfg: &PreprocessConfig) -> Result<PreparedWindow> {
    let aligned = align(raw, cfg.max_missing_fraction)?;
    let derived = with_derivatives(aligned, cfg.l)?;
    remove_inception_samples(&derived, cfg.l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(n: usize, h: f64) -> Vec<f64> {
        (0..n).map(|j| j as f64 * h).collect()
    }

    fn window_from(times: &[f64], f: impl Fn(usize, f64) -> f64) -> RawWindow {
        let n = times.len();
        let m = |off: usize| Matrix3xX::from_fn(n, |p, j| f(off + p, times[j]));
        RawWindow {
            sample_rate_hz: 1e5,
            timestamps: times.to_vec(),
            indices: (0..n).collect(),
            u1: m(0),
            u2: m(3),
            i1: m(6),
            i2: m(9),
            missing: vec![false; n],
        }
    }

    #[test]
    fn quadratic_derivatives_are_exact() {
        let (a, b, c) = (3.7e6, -1.2e3, 0.4);
        for l in [3, 5, 7, 9] {
            let t: Vec<f64> = grid(40, 1e-5).iter().map(|x| x + 0.0123).collect();
            let y: Vec<f64> = t.iter().map(|t| a * t * t + b * t + c).collect();
            let (d1, d2) = estimate_derivatives(&t, &y, l).unwrap();
            for j in 0..t.len() {
                let want = 2.0 * a * t[j] + b;
                assert!(
                    (d1[j] - want).abs() <= 1e-8 * want.abs().max(1.0),
                    "l={l} j={j}"
                );
                assert!(
                    (d2[j] - 2.0 * a).abs() <= 1e-6 * 2.0 * a,
                    "l={l} j={j}: {}",
                    d2[j]
                );
            }
        }
    }

    #[test]
    fn quadratic_exact_on_irregular_grid() {
        let t = vec![0.0, 1e-5, 3e-5, 4e-5, 5e-5, 7e-5, 8e-5, 1.1e-4];
        let y: Vec<f64> = t.iter().map(|t| 5e7 * t * t - 3e2 * t + 1.0).collect();
        let (d1, d2) = estimate_derivatives(&t, &y, 5).unwrap();
        for j in 0..t.len() {
            assert!((d1[j] - (1e8 * t[j] - 3e2)).abs() < 1e-6);
            assert!((d2[j] - 1e8).abs() < 1e-2);
        }
    }

    #[test]
    fn sinusoid_derivative_accuracy() {
        let w = 2.0 * PI * 50.0;
        let t = grid(2000, 1e-5);
        let y: Vec<f64> = t.iter().map(|t| (w * t).sin()).collect();
        let (d1, _) = estimate_derivatives(&t, &y, 5).unwrap();
        let worst = t
            .iter()
            .zip(&d1)
            .map(|(t, d)| (d - w * (w * t).cos()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3 * w, "worst {worst}");
    }

    #[test]
    fn constant_signal_has_zero_derivatives() {
        let t = grid(20, 1e-5);
        let (d1, d2) = estimate_derivatives(&t, &[4.2; 20], 5).unwrap();
        assert!(d1.iter().all(|v| v.abs() < 1e-6));
        assert!(d2.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn short_or_even_windows_rejected() {
        let t = grid(4, 1e-5);
        assert!(matches!(
            estimate_derivatives(&t, &[0.0; 4], 5),
            Err(Error::InvalidWindow(_))
        ));
        assert!(estimate_derivatives(&grid(10, 1e-5), &[0.0; 10], 4).is_err());
    }

    #[test]
    fn align_drops_masked_timestamps_everywhere() {
        let t = grid(200, 1e-5);
        let mut raw = window_from(&t, |ch, t| ch as f64 * 1e3 + t);
        assert_eq!(align(&raw, 0.2).unwrap().len(), 200);
        raw.missing[3] = true;
        raw.missing[17] = true;
        let a = align(&raw, 0.2).unwrap();
        assert_eq!(a.len(), 198);
        assert!(!a.kept_indices.contains(&3) && !a.kept_indices.contains(&17));
        for (j, &orig) in a.kept_indices.iter().enumerate() {
            assert_eq!(a.timestamps[j], t[orig]);
            assert_eq!(a.u2[(1, j)], raw.u2[(1, orig)]);
            assert_eq!(a.i2[(2, j)], raw.i2[(2, orig)]);
        }
    }

    #[test]
    fn heavy_loss_rejects_window() {
        let t = grid(100, 1e-5);
        let mut raw = window_from(&t, |_, t| t);
        for j in 0..21 {
            raw.missing[j * 4] = true;
        }
        assert!(matches!(align(&raw, 0.2), Err(Error::DegradedData { .. })));
    }

    #[test]
    fn removal_brackets_slope_change() {
        let t = grid(200, 1e-5);
        for j0 in [10usize, 57, 100, 143, 190] {
            let tk = t[j0];
            let raw = window_from(&t, |ch, t| {
                let base = 100.0 * (ch as f64 + 1.0);
                if t <= tk {
                    base * t * 1e3
                } else {
                    base * (tk * 1e3 + 40.0 * (t - tk) * 1e3)
                }
            });
            let pw = prepare(&raw, &PreprocessConfig::default()).unwrap();
            assert_eq!(pw.n_samples(), 197);
            assert!(
                pw.removed_indices.contains(&j0),
                "kink {j0}, removed {:?}",
                pw.removed_indices
            );
        }
    }

    #[test]
    fn removal_count_is_l_minus_two() {
        let t = grid(200, 1e-5);
        let raw = window_from(&t, |ch, t| (2.0 * PI * 50.0 * t + ch as f64).sin());
        for l in [3, 5, 7] {
            let pw = prepare(
                &raw,
                &PreprocessConfig {
                    l,
                    max_missing_fraction: 0.2,
                },
            )
            .unwrap();
            assert_eq!(pw.n_samples(), 200 - (l - 2));
            assert!(pw.kept_indices.windows(2).all(|w| w[0] < w[1]));
        }
    }

    proptest! {
        #[test]
        fn derivative_is_linear(a in -5.0f64..5.0, b in -5.0f64..5.0,
                                xs in prop::collection::vec(-1e3f64..1e3, 12),
                                ys in prop::collection::vec(-1e3f64..1e3, 12)) {
            let t = grid(12, 1e-5);
            let (dx, ddx) = estimate_derivatives(&t, &xs, 5).unwrap();
            let (dy, ddy) = estimate_derivatives(&t, &ys, 5).unwrap();
            let mix: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
            let (dm, ddm) = estimate_derivatives(&t, &mix, 5).unwrap();
            for j in 0..12 {
                let s1 = (a * dx[j]).abs() + (b * dy[j]).abs() + 1.0;
                prop_assert!((dm[j] - (a * dx[j] + b * dy[j])).abs() < 1e-9 * s1);
                let s2 = (a * ddx[j]).abs() + (b * ddy[j]).abs() + 1.0;
                prop_assert!((ddm[j] - (a * ddx[j] + b * ddy[j])).abs() < 1e-9 * s2);
            }
        }

        #[test]
        fn prepared_columns_stay_aligned(mask in prop::collection::vec(prop::bool::weighted(0.05), 200)) {
            let t = grid(200, 1e-5);
            let mut raw = window_from(&t, |ch, t| ch as f64 * 1e6 + t * 1e5);
            raw.missing = mask.clone();
            let missing = mask.iter().filter(|m| **m).count();
            prop_assume!(missing <= 40);
            let pw = prepare(&raw, &PreprocessConfig::default()).unwrap();
            prop_assert_eq!(pw.n_samples(), 200 - missing - 3);
            for (j, &orig) in pw.kept_indices.iter().enumerate() {
                prop_assert!(!mask[orig]);
                prop_assert_eq!(pw.u1[(0, j)], raw.u1[(0, orig)]);
                prop_assert_eq!(pw.i2[(2, j)], raw.i2[(2, orig)]);
                prop_assert_eq!(pw.timestamps[j], t[orig]);
            }
        }
    }
}
