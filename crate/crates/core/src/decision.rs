//! Picks the winning hypothesis and turns it into a relay verdict.

use std::fmt;

use nalgebra::Vector5;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis_engine::CaseResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelayState {
    Healthy,
    Trip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Inception {
    /// Inclusive range of original sample indices holding the first post-fault sample.
    Interval(usize, usize),
    /// The fault started before the window.
    BeforeWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultTypeEstimate {
    K3,
    K2,
    K2g,
    K1,
    Unclassified,
}

impl fmt::Display for FaultTypeEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultTypeEstimate::K3 => "K3",
            FaultTypeEstimate::K2 => "K2",
            FaultTypeEstimate::K2g => "K2g",
            FaultTypeEstimate::K1 => "K1",
            FaultTypeEstimate::Unclassified => "unclassified",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    /// Estimated resistances below this count as involved in the fault.
    pub classify_threshold_ohm: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            classify_threshold_ohm: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayVerdict {
    pub state: RelayState,
    pub selected_case: usize,
    pub alpha_est: Option<f64>,
    /// `[R_a, R_b, R_c, R_g]` in ohms.
    pub r_f_est: Option<[f64; 4]>,
    pub inception: Option<Inception>,
    pub fault_type_est: Option<FaultTypeEstimate>,
    /// `Δ_m` for `m = 1..=M+2`.
    pub deltas: Vec<f64>,
}

impl RelayVerdict {
    pub fn is_trip(&self) -> bool {
        self.state == RelayState::Trip
    }

    /// One-line `key=value` record with every field.
    pub fn to_record(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        let state = match self.state {
            RelayState::Healthy => "healthy",
            RelayState::Trip => "trip",
        };
        let inception = opt(self.inception.map(|i| match i {
            Inception::Interval(a, b) => format!("{a}..{b}"),
            Inception::BeforeWindow => "before".into(),
        }));
        let deltas: Vec<String> = self.deltas.iter().map(|d| format!("{d:.6e}")).collect();
        format!(
            "state={state} case={} alpha={} rf={} inception={inception} type={} deltas={}",
            self.selected_case,
            opt(self.alpha_est.map(|a| format!("{a:.6}"))),
            opt(self.r_f_est.map(|r| r.map(|v| format!("{v:.4}")).join(";"))),
            opt(self.fault_type_est.map(|t| t.to_string())),
            deltas.join(";"),
        )
    }
}

/// Fault type from the pattern of involved (low-resistance) branches.
pub fn classify_fault_type(r_f: &[f64; 4], threshold_ohm: f64) -> FaultTypeEstimate {
    let phases = r_f[..3].iter().filter(|r| **r < threshold_ohm).count();
    let ground = r_f[3] < threshold_ohm;
    match (phases, ground) {
        (3, _) => FaultTypeEstimate::K3,
        (2, true) => FaultTypeEstimate::K2g,
        (2, false) => FaultTypeEstimate::K2,
        (1, true) => FaultTypeEstimate::K1,
        _ => FaultTypeEstimate::Unclassified,
    }
}

/// Which case wins after the boundary overrides.
fn winning_case(deltas: &[f64], m_blocks: usize) -> (usize, bool) {
    let mut order: Vec<usize> = (1..=deltas.len()).collect();
    order.sort_by(|&a, &b| deltas[a - 1].total_cmp(&deltas[b - 1]).then(a.cmp(&b)));
    let d = |m: usize| deltas[m - 1];
    let (first, second) = (order[0], order[1]);
    let last = m_blocks + 2;
    if first == 3 && second == 1 {
        let a1 = d(1) / d(3);
        let a2 = d(4) / d(1);
        return if a1 < a2 { (1, false) } else { (3, false) };
    }
    if first == last && second == 2 {
        let b1 = d(2) / d(last);
        let b2 = d(last - 1) / d(2);
        return if b1 < b2 { (2, true) } else { (last, false) };
    }
    (first, false)
}

pub fn select_case(
    results: &[CaseResult],
    m_blocks: usize,
    cfg: &DecisionConfig,
) -> Result<RelayVerdict> {
    if m_blocks < 2 || results.len() != m_blocks + 2 {
        return Err(Error::InvalidParameter(format!(
            "expected {} case results for M = {m_blocks}, got {}",
            m_blocks + 2,
            results.len()
        )));
    }
    if results.iter().enumerate().any(|(i, c)| c.m != i + 1) {
        return Err(Error::InvalidParameter("case results out of order".into()));
    }
    let deltas: Vec<f64> = results.iter().map(|c| c.delta).collect();
    if let Some(i) = deltas.iter().position(|d| d.is_nan()) {
        return Err(Error::DataIntegrity(format!(
            "delta of case {} is NaN",
            i + 1
        )));
    }
    let (m, before_window) = winning_case(&deltas, m_blocks);
    let winner = &results[m - 1];
    if m == 1 {
        return Ok(RelayVerdict {
            state: RelayState::Healthy,
            selected_case: 1,
            alpha_est: None,
            r_f_est: None,
            inception: None,
            fault_type_est: None,
            deltas,
        });
    }
    let inception = if before_window || m == 2 {
        Some(Inception::BeforeWindow)
    } else {
        winner
            .inception_interval
            .map(|(a, b)| Inception::Interval(a, b))
    };
    let x: Option<Vector5<f64>> = winner.x_star;
    let r_f_est = x.map(|x| [x[0], x[1], x[2], x[3]]);
    Ok(RelayVerdict {
        state: RelayState::Trip,
        selected_case: m,
        alpha_est: x.map(|x| x[4]),
        r_f_est,
        inception,
        fault_type_est: r_f_est.map(|r| classify_fault_type(&r, cfg.classify_threshold_ohm)),
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn results(deltas: &[f64]) -> Vec<CaseResult> {
        deltas
            .iter()
            .enumerate()
            .map(|(i, &delta)| {
                let m = i + 1;
                CaseResult {
                    m,
                    delta,
                    x_star: (m != 1 && m != 3)
                        .then(|| Vector5::new(1.0, 2.0, 3.0, 4.0, 0.1 * m as f64 % 1.0)),
                    inception_interval: (m >= 3).then(|| (100 * m, 100 * m + 19)),
                }
            })
            .collect()
    }

    fn pick(deltas: &[f64]) -> RelayVerdict {
        select_case(
            &results(deltas),
            deltas.len() - 2,
            &DecisionConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn argmin_healthy() {
        let v = pick(&[0.0, 5.0, 4.0, 6.0, 7.0, 8.0]);
        assert_eq!(v.state, RelayState::Healthy);
        assert_eq!(v.selected_case, 1);
        assert!(v.alpha_est.is_none() && v.inception.is_none());
    }

    #[test]
    fn override_a_declares_healthy() {
        // a1 = 1.01 < a2 = 3
        let v = pick(&[1.01, 9.0, 1.0, 3.03, 7.0, 8.0]);
        assert_eq!(v.state, RelayState::Healthy);
    }

    #[test]
    fn override_a_declares_latest_block() {
        // a1 = 4 > a2 = 1.5
        let v = pick(&[4.0, 9.0, 1.0, 6.0, 7.0, 8.0]);
        assert_eq!((v.state, v.selected_case), (RelayState::Trip, 3));
        assert_eq!(v.inception, Some(Inception::Interval(300, 319)));
        assert!(v.alpha_est.is_none() && v.r_f_est.is_none());
    }

    #[test]
    fn override_b_both_branches() {
        // M = 4, last case 6, neighbour 5.
        let v = pick(&[9.0, 1.1, 8.0, 7.0, 6.0, 1.0]);
        assert_eq!(
            (v.selected_case, v.inception),
            (2, Some(Inception::BeforeWindow))
        );
        let v = pick(&[9.0, 3.0, 8.0, 7.0, 4.0, 1.0]);
        assert_eq!(v.selected_case, 6);
        assert_eq!(v.inception, Some(Inception::Interval(600, 619)));
    }

    #[test]
    fn overrides_silent_outside_their_pattern() {
        // Case 3 smallest but case 1 not second: plain argmin.
        let v = pick(&[2.0, 9.0, 1.0, 1.5, 7.0, 8.0]);
        assert_eq!(v.selected_case, 3);
        let v = pick(&[9.0, 2.0, 8.0, 7.0, 6.0, 5.0]);
        assert_eq!(v.selected_case, 2);
        let v = pick(&[9.0, 8.0, 7.0, 1.0, 6.0, 5.0]);
        assert_eq!(
            (v.selected_case, v.inception),
            (4, Some(Inception::Interval(400, 419)))
        );
    }

    #[test]
    fn scaling_deltas_keeps_verdict() {
        for ds in [
            vec![1.01, 9.0, 1.0, 3.03, 7.0, 8.0],
            vec![4.0, 9.0, 1.0, 6.0, 7.0, 8.0],
            vec![9.0, 1.1, 8.0, 7.0, 6.0, 1.0],
            vec![9.0, 8.0, 7.0, 1.0, 6.0, 5.0],
        ] {
            let base = pick(&ds);
            for c in [1e-9, 0.3, 1e12] {
                let scaled: Vec<f64> = ds.iter().map(|d| d * c).collect();
                let v = pick(&scaled);
                assert_eq!(
                    (v.state, v.selected_case, v.inception),
                    (base.state, base.selected_case, base.inception)
                );
            }
        }
    }

    #[test]
    fn nan_delta_is_integrity_error() {
        let err = select_case(
            &results(&[1.0, f64::NAN, 2.0, 3.0]),
            2,
            &DecisionConfig::default(),
        )
        .unwrap_err();
        assert!(err.is_data_integrity());
        assert!(select_case(&results(&[1.0, 2.0, 3.0]), 2, &DecisionConfig::default()).is_err());
    }

    #[test]
    fn fault_type_patterns() {
        use FaultTypeEstimate::*;
        assert_eq!(classify_fault_type(&[0.1, 2000.0, 2000.0, 0.05], 500.0), K1);
        assert_eq!(
            classify_fault_type(&[10.0, 10.0, 2000.0, 2000.0], 500.0),
            K2
        );
        assert_eq!(classify_fault_type(&[10.0, 2000.0, 10.0, 3.0], 500.0), K2g);
        assert_eq!(classify_fault_type(&[1.0, 1.0, 1.0, 1e9], 500.0), K3);
        assert_eq!(
            classify_fault_type(&[1e3, 1e3, 1e3, 1.0], 500.0),
            Unclassified
        );
        assert_eq!(
            classify_fault_type(&[1.0, 1e3, 1e3, 1e3], 500.0),
            Unclassified
        );
    }

    #[test]
    fn record_lists_every_field() {
        let v = pick(&[4.0, 9.0, 1.0, 6.0]);
        let r = v.to_record();
        assert!(r.starts_with("state=trip case=3 "));
        assert!(r.contains("inception=300..319"));
        assert_eq!(r.split("deltas=").nth(1).unwrap().split(';').count(), 4);
    }
}
