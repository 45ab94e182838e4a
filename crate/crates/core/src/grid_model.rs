//! Electrical parameter types for the two-source test grid.
//!
//! Users describe the line and the equivalent sources with positive-sequence
//! values and a zero-to-positive ratio. Everything downstream (simulator and
//! detector) works with balanced 3×3 phase matrices in SI units, obtained
//! through the symmetrical-component transform:
//!
//! ```text
//!     self   = (Z0 + 2·Z1) / 3
//!     mutual = (Z0 − Z1) / 3
//! ```

use std::fmt;
use std::path::Path;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// Positive-sequence line data plus the zero/positive ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceLineParameters {
    pub r1_ohm_per_km: f64,
    pub l1_h_per_km: f64,
    /// Applied to both resistance and inductance.
    pub k_seq: f64,
    pub length_km: f64,
}

impl SequenceLineParameters {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.r1_ohm_per_km) || !ok(self.l1_h_per_km) || !ok(self.length_km) {
            return Err(invalid(format!(
                "line parameters must be positive and finite: {self:?}"
            )));
        }
        if !(self.k_seq.is_finite() && self.k_seq >= 1.0) {
            return Err(invalid(format!(
                "line k_seq must be >= 1, got {}",
                self.k_seq
            )));
        }
        Ok(())
    }

    /// Same line with detector-side resistance and inductance scaled by
    /// `1 + r_dev` and `1 + l_dev`.
    pub fn perturbed(&self, r_dev: f64, l_dev: f64) -> Self {
        Self {
            r1_ohm_per_km: self.r1_ohm_per_km * (1.0 + r_dev),
            l1_h_per_km: self.l1_h_per_km * (1.0 + l_dev),
            ..*self
        }
    }
}

/// Balanced phase-domain series impedance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseImpedance {
    pub r: Matrix3<f64>,
    pub l: Matrix3<f64>,
}

/// Sequence quantities recovered from a balanced phase matrix pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceValues {
    pub r1: f64,
    pub r0: f64,
    pub l1: f64,
    pub l0: f64,
}

fn balanced(z1: f64, z0: f64) -> Matrix3<f64> {
    let s = (z0 + 2.0 * z1) / 3.0;
    let m = (z0 - z1) / 3.0;
    Matrix3::new(s, m, m, m, s, m, m, m, s)
}

impl PhaseImpedance {
    /// Builds the phase matrices from total (not per-km) sequence values.
    pub fn from_sequence(r1: f64, r0: f64, l1: f64, l0: f64) -> Self {
        Self {
            r: balanced(r1, r0),
            l: balanced(l1, l0),
        }
    }

    /// Inverse of [`PhaseImpedance::from_sequence`] for balanced matrices.
    pub fn sequence_values(&self) -> SequenceValues {
        let split = |m: &Matrix3<f64>| {
            let s = (m[(0, 0)] + m[(1, 1)] + m[(2, 2)]) / 3.0;
            let mu = (m[(0, 1)] + m[(0, 2)] + m[(1, 2)]) / 3.0;
            (s - mu, s + 2.0 * mu)
        };
        let (r1, r0) = split(&self.r);
        let (l1, l0) = split(&self.l);
        SequenceValues { r1, r0, l1, l0 }
    }

    /// A portion `fraction` of a uniform line.
    pub fn scaled(&self, fraction: f64) -> Self {
        Self {
            r: self.r * fraction,
            l: self.l * fraction,
        }
    }
}

/// Converts user-level sequence data into phase matrices for the whole line.
pub fn build_phase_matrices(seq: &SequenceLineParameters) -> Result<PhaseImpedance> {
    seq.validate()?;
    let r1 = seq.r1_ohm_per_km * seq.length_km;
    let l1 = seq.l1_h_per_km * seq.length_km;
    Ok(PhaseImpedance::from_sequence(
        r1,
        seq.k_seq * r1,
        l1,
        seq.k_seq * l1,
    ))
}

/// Thevenin equivalent of a supplying system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParameters {
    /// Per unit of the phase peak voltage `U_g·√2/√3`.
    pub emf_pu: f64,
    pub angle_deg: f64,
    pub r_ohm: f64,
    pub l_h: f64,
    pub k_seq: f64,
}

impl SourceParameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_ohm.is_finite() && self.r_ohm >= 0.0) {
            return Err(invalid(format!(
                "source r_ohm must be >= 0, got {}",
                self.r_ohm
            )));
        }
        if !(self.l_h.is_finite() && self.l_h > 0.0) {
            return Err(invalid(format!("source l_h must be > 0, got {}", self.l_h)));
        }
        if !(self.emf_pu.is_finite() && self.emf_pu > 0.0) {
            return Err(invalid(format!(
                "source emf_pu must be > 0, got {}",
                self.emf_pu
            )));
        }
        if !(self.k_seq.is_finite() && self.k_seq > 0.0) || !self.angle_deg.is_finite() {
            return Err(invalid(format!("bad source parameters: {self:?}")));
        }
        Ok(())
    }

    pub fn impedance(&self) -> PhaseImpedance {
        PhaseImpedance::from_sequence(
            self.r_ohm,
            self.k_seq * self.r_ohm,
            self.l_h,
            self.k_seq * self.l_h,
        )
    }
}

/// Fault-branch resistance; `Open` means the branch does not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultResistance {
    Ohms(f64),
    Open,
}

impl FaultResistance {
    pub fn ohms(self) -> Option<f64> {
        match self {
            FaultResistance::Ohms(r) => Some(r),
            FaultResistance::Open => None,
        }
    }

    pub fn is_open(self) -> bool {
        matches!(self, FaultResistance::Open)
    }
}

impl fmt::Display for FaultResistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultResistance::Ohms(r) => write!(f, "{r}"),
            FaultResistance::Open => f.write_str("open"),
        }
    }
}

impl Serialize for FaultResistance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FaultResistance::Ohms(r) => s.serialize_f64(*r),
            FaultResistance::Open => s.serialize_str("open"),
        }
    }
}

impl<'de> Deserialize<'de> for FaultResistance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Int(i64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(r) => Ok(FaultResistance::Ohms(r)),
            Repr::Int(r) => Ok(FaultResistance::Ohms(r as f64)),
            Repr::Word(w) if w.eq_ignore_ascii_case("open") => Ok(FaultResistance::Open),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a resistance in ohms or \"open\", got {w:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultType {
    K3,
    K2,
    K2g,
    K1,
    #[serde(rename = "none")]
    None,
}

impl FaultType {
    pub const ALL_FAULTS: [FaultType; 4] =
        [FaultType::K3, FaultType::K2, FaultType::K2g, FaultType::K1];
}

impl fmt::Display for FaultType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FaultType::K3 => "K3",
            FaultType::K2 => "K2",
            FaultType::K2g => "K2g",
            FaultType::K1 => "K1",
            FaultType::None => "none",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FaultType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K3" | "k3" => Ok(FaultType::K3),
            "K2" | "k2" => Ok(FaultType::K2),
            "K2g" | "k2g" | "K2G" => Ok(FaultType::K2g),
            "K1" | "k1" => Ok(FaultType::K1),
            "none" => Ok(FaultType::None),
            _ => Err(invalid(format!("unknown fault type {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Internal,
    Bus1,
    Bus2,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Internal => "internal",
            Placement::Bus1 => "bus1",
            Placement::Bus2 => "bus2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub fault_type: FaultType,
    pub r_a_ohm: FaultResistance,
    pub r_b_ohm: FaultResistance,
    pub r_c_ohm: FaultResistance,
    pub r_g_ohm: FaultResistance,
    pub alpha_pu: f64,
    pub t_inception_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_clearing_s: Option<f64>,
    pub placement: Placement,
}

impl FaultSpec {
    pub fn none() -> Self {
        Self {
            fault_type: FaultType::None,
            r_a_ohm: FaultResistance::Open,
            r_b_ohm: FaultResistance::Open,
            r_c_ohm: FaultResistance::Open,
            r_g_ohm: FaultResistance::Open,
            alpha_pu: 0.0,
            t_inception_s: 0.0,
            t_clearing_s: None,
            placement: Placement::Internal,
        }
    }

    /// Standard resistance pattern for a fault type with one resistance value.
    ///
    /// K2 splits `r` evenly between the two phase legs so that `R_a + R_b = r`.
    pub fn with_pattern(
        fault_type: FaultType,
        r: f64,
        alpha_pu: f64,
        t_inception_s: f64,
        placement: Placement,
    ) -> Self {
        use FaultResistance::{Ohms, Open};
        let (ra, rb, rc, rg) = match fault_type {
            FaultType::K3 => (Ohms(r), Ohms(r), Ohms(r), Open),
            FaultType::K2 => (Ohms(r / 2.0), Ohms(r / 2.0), Open, Open),
            FaultType::K2g => (Ohms(r), Ohms(r), Open, Ohms(r)),
            FaultType::K1 => (Ohms(r), Open, Open, Ohms(0.0)),
            FaultType::None => return Self::none(),
        };
        Self {
            fault_type,
            r_a_ohm: ra,
            r_b_ohm: rb,
            r_c_ohm: rc,
            r_g_ohm: rg,
            alpha_pu,
            t_inception_s,
            t_clearing_s: None,
            placement,
        }
    }

    pub fn resistances(&self) -> [FaultResistance; 4] {
        [self.r_a_ohm, self.r_b_ohm, self.r_c_ohm, self.r_g_ohm]
    }

    pub fn is_internal(&self) -> bool {
        self.fault_type != FaultType::None && self.placement == Placement::Internal
    }

    pub fn validate(&self) -> Result<()> {
        use FaultResistance::Open;
        for r in self.resistances() {
            if let FaultResistance::Ohms(v) = r {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(invalid(format!("fault resistance must be >= 0, got {v}")));
                }
            }
        }
        let open = self.resistances().map(|r| r.is_open());
        let consistent = match self.fault_type {
            FaultType::None => true,
            FaultType::K1 => {
                open == [false, true, true, false] && self.r_g_ohm == FaultResistance::Ohms(0.0)
            }
            FaultType::K2 => open == [false, false, true, true],
            FaultType::K2g => open == [false, false, true, false],
            FaultType::K3 => {
                self.r_g_ohm == Open
                    && !open[0]
                    && self.r_a_ohm == self.r_b_ohm
                    && self.r_b_ohm == self.r_c_ohm
            }
        };
        if !consistent {
            return Err(invalid(format!(
                "resistance pattern inconsistent with fault type {}",
                self.fault_type
            )));
        }
        if self.fault_type != FaultType::None {
            if self.placement == Placement::Internal && !(0.0..=1.0).contains(&self.alpha_pu) {
                return Err(invalid(format!(
                    "alpha must be in [0,1], got {}",
                    self.alpha_pu
                )));
            }
            if !(self.t_inception_s.is_finite() && self.t_inception_s >= 0.0) {
                return Err(invalid("fault inception time must be >= 0"));
            }
            if let Some(tc) = self.t_clearing_s {
                if !(tc.is_finite() && tc > self.t_inception_s) {
                    return Err(invalid("clearing time must follow inception"));
                }
            }
        }
        Ok(())
    }
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScenario {
    pub u_g_kv: f64,
    pub freq_hz: f64,
    pub sim_duration_s: f64,
    pub sample_rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet_loss_prob: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub line: SequenceLineParameters,
    pub source1: SourceParameters,
    pub source2: SourceParameters,
    pub fault: FaultSpec,
}

impl GridScenario {
    pub fn validate(&self) -> Result<()> {
        self.line.validate()?;
        self.source1.validate()?;
        self.source2.validate()?;
        self.fault.validate()?;
        if !(self.u_g_kv.is_finite() && self.u_g_kv > 0.0) {
            return Err(invalid("u_g_kv must be positive"));
        }
        if !(self.freq_hz.is_finite() && self.freq_hz > 0.0) {
            return Err(invalid("freq_hz must be positive"));
        }
        if !(self.sim_duration_s.is_finite() && self.sim_duration_s > 0.0) {
            return Err(invalid("sim_duration_s must be positive"));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz >= 2.0 * self.freq_hz) {
            return Err(invalid("sample_rate_hz must be at least twice freq_hz"));
        }
        if let Some(p) = self.packet_loss_prob {
            if !(0.0..1.0).contains(&p) {
                return Err(invalid("packet_loss_prob must be in [0,1)"));
            }
        }
        if let Some(snr) = self.noise_snr_db {
            if snr.is_nan() {
                return Err(invalid("noise_snr_db is NaN"));
            }
        }
        Ok(())
    }

    /// Phase peak voltage corresponding to 1 p.u. EMF.
    pub fn phase_peak_v(&self) -> f64 {
        self.u_g_kv * 1e3 * (2.0f64 / 3.0).sqrt()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Fixed setup with a 40 km line: Table V line and S1 data, with S2 taken as
/// a Thevenin copy of S1 lagging by 10°.
pub fn reference_scenario() -> GridScenario {
    let source = SourceParameters {
        emf_pu: 1.0,
        angle_deg: 0.0,
        r_ohm: 1.4,
        l_h: 0.046,
        k_seq: 1.5,
    };
    GridScenario {
        u_g_kv: 36.0,
        freq_hz: 50.0,
        sim_duration_s: 0.02,
        sample_rate_hz: 100e3,
        noise_snr_db: None,
        packet_loss_prob: None,
        seed: 0,
        line: SequenceLineParameters {
            r1_ohm_per_km: 0.2,
            l1_h_per_km: 0.0013,
            k_seq: 3.0,
            length_km: 40.0,
        },
        source1: source,
        source2: SourceParameters {
            angle_deg: -10.0,
            ..source
        },
        fault: FaultSpec::none(),
    }
}

/// Closed interval a parameter is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(invalid(format!(
                "empty range for {name}: [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Ranges for randomized grid components. Defaults are Table I of the test grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterRanges {
    pub line_l_h_per_km: Range,
    pub line_r_ohm_per_km: Range,
    pub line_k_seq: Range,
    pub line_length_km: Range,
    pub source_l_h: Range,
    pub source_r_ohm: Range,
    pub source_k_seq: Range,
    pub emf_pu: Range,
    /// Angle of source 2 relative to source 1.
    pub angle_deg: Range,
    pub u_g_kv: f64,
    pub freq_hz: f64,
}

impl Default for ParameterRanges {
    fn default() -> Self {
        Self {
            line_l_h_per_km: Range::new(1.3e-3, 1.4e-3),
            line_r_ohm_per_km: Range::new(0.2, 0.42),
            line_k_seq: Range::point(3.0),
            line_length_km: Range::new(10.0, 80.0),
            source_l_h: Range::new(0.046, 0.250),
            source_r_ohm: Range::new(1.4, 19.4),
            source_k_seq: Range::point(1.5),
            emf_pu: Range::new(0.9, 1.1),
            angle_deg: Range::new(-30.0, 30.0),
            u_g_kv: 36.0,
            freq_hz: 50.0,
        }
    }
}

impl ParameterRanges {
    fn check(&self) -> Result<()> {
        self.line_l_h_per_km.check("line_l_h_per_km")?;
        self.line_r_ohm_per_km.check("line_r_ohm_per_km")?;
        self.line_k_seq.check("line_k_seq")?;
        self.line_length_km.check("line_length_km")?;
        self.source_l_h.check("source_l_h")?;
        self.source_r_ohm.check("source_r_ohm")?;
        self.source_k_seq.check("source_k_seq")?;
        self.emf_pu.check("emf_pu")?;
        self.angle_deg.check("angle_deg")?;
        Ok(())
    }
}

/// Draws a healthy 20 ms scenario; the result depends only on `ranges` and `seed`.
pub fn random_scenario(ranges: &ParameterRanges, seed: u64) -> Result<GridScenario> {
    ranges.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let line = SequenceLineParameters {
        l1_h_per_km: ranges.line_l_h_per_km.draw(&mut rng),
        r1_ohm_per_km: ranges.line_r_ohm_per_km.draw(&mut rng),
        k_seq: ranges.line_k_seq.draw(&mut rng),
        length_km: ranges.line_length_km.draw(&mut rng),
    };
    let source = |angle_deg: f64, rng: &mut ChaCha8Rng| SourceParameters {
        l_h: ranges.source_l_h.draw(rng),
        r_ohm: ranges.source_r_ohm.draw(rng),
        k_seq: ranges.source_k_seq.draw(rng),
        emf_pu: ranges.emf_pu.draw(rng),
        angle_deg,
    };
    let source1 = source(0.0, &mut rng);
    let theta = ranges.angle_deg.draw(&mut rng);
    let source2 = source(theta, &mut rng);
    let sc = GridScenario {
        u_g_kv: ranges.u_g_kv,
        freq_hz: ranges.freq_hz,
        sim_duration_s: 0.02,
        sample_rate_hz: 100e3,
        noise_snr_db: None,
        packet_loss_prob: None,
        seed,
        line,
        source1,
        source2,
        fault: FaultSpec::none(),
    };
    sc.validate()?;
    Ok(sc)
}

/// Fault resistance matrix `Z_F` for `[R_a, R_b, R_c, R_g]`.
pub fn assemble_fault_matrix(r_f: [f64; 4]) -> Result<Matrix3<f64>> {
    if r_f.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(invalid(format!(
            "fault resistances must be finite and >= 0: {r_f:?}"
        )));
    }
    let g = r_f[3];
    let mut z = Matrix3::from_element(g);
    for p in 0..3 {
        z[(p, p)] += r_f[p];
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Complex, Matrix3 as M3};
    use proptest::prelude::*;

    fn table_iv_line() -> SequenceLineParameters {
        SequenceLineParameters {
            r1_ohm_per_km: 0.2,
            l1_h_per_km: 0.0013,
            k_seq: 3.0,
            length_km: 40.0,
        }
    }

    /// Fortescue transform A⁻¹·Z·A, independent of `sequence_values`.
    fn fortescue(z: &M3<f64>) -> [Complex<f64>; 3] {
        let a = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
        let one = Complex::new(1.0, 0.0);
        let am = M3::new(one, one, one, one, a * a, a, one, a, a * a);
        let zc = z.map(|v| Complex::new(v, 0.0));
        let inv = am.try_inverse().unwrap();
        let seq = inv * zc * am;
        [seq[(0, 0)], seq[(1, 1)], seq[(2, 2)]]
    }

    #[test]
    fn table_iv_phase_matrices() {
        let z = build_phase_matrices(&table_iv_line()).unwrap();
        assert_relative_eq!(z.r[(0, 0)], 13.333333333333334, max_relative = 1e-12);
        assert_relative_eq!(z.r[(0, 1)], 5.333333333333333, max_relative = 1e-12);
        let [z0, z1, z2] = fortescue(&z.r);
        assert_relative_eq!(z0.re, 24.0, max_relative = 1e-12);
        assert_relative_eq!(z1.re, 8.0, max_relative = 1e-12);
        assert_relative_eq!(z2.re, 8.0, max_relative = 1e-12);
        assert!(z1.im.abs() < 1e-12 && z0.im.abs() < 1e-12);
    }

    #[test]
    fn unit_ratio_decouples_phases() {
        let z = build_phase_matrices(&SequenceLineParameters {
            k_seq: 1.0,
            ..table_iv_line()
        })
        .unwrap();
        assert_eq!(z.r[(0, 1)], 0.0);
        assert_relative_eq!(z.r[(1, 1)], 8.0, max_relative = 1e-15);
    }

    #[test]
    fn ones_vector_is_zero_sequence_eigenvector() {
        let z = build_phase_matrices(&SequenceLineParameters {
            r1_ohm_per_km: 0.3,
            l1_h_per_km: 1e-3,
            k_seq: 3.0,
            length_km: 10.0,
        })
        .unwrap();
        let out = z.r * nalgebra::Vector3::repeat(1.0);
        for v in out.iter() {
            assert_relative_eq!(*v, 9.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn nonpositive_line_parameters_rejected() {
        for bad in [
            SequenceLineParameters {
                r1_ohm_per_km: 0.0,
                ..table_iv_line()
            },
            SequenceLineParameters {
                l1_h_per_km: -1.0,
                ..table_iv_line()
            },
            SequenceLineParameters {
                length_km: 0.0,
                ..table_iv_line()
            },
            SequenceLineParameters {
                k_seq: 0.5,
                ..table_iv_line()
            },
        ] {
            assert!(matches!(
                build_phase_matrices(&bad),
                Err(Error::InvalidParameter(_))
            ));
        }
    }

    #[test]
    fn fault_matrix_examples() {
        assert_eq!(assemble_fault_matrix([0.0; 4]).unwrap(), M3::zeros());
        let z = assemble_fault_matrix([1.0, 2.0, 3.0, 10.0]).unwrap();
        assert_eq!(
            z,
            M3::new(11.0, 10.0, 10.0, 10.0, 12.0, 10.0, 10.0, 10.0, 13.0)
        );
        assert!(assemble_fault_matrix([1.0, -2.0, 0.0, 0.0]).is_err());
        assert!(assemble_fault_matrix([f64::INFINITY, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn random_scenario_is_deterministic_and_in_range() {
        let ranges = ParameterRanges::default();
        assert_eq!(
            random_scenario(&ranges, 7).unwrap(),
            random_scenario(&ranges, 7).unwrap()
        );
        for seed in 0..1000 {
            let s = random_scenario(&ranges, seed).unwrap();
            assert!(ranges.line_l_h_per_km.contains(s.line.l1_h_per_km));
            assert!(ranges.line_r_ohm_per_km.contains(s.line.r1_ohm_per_km));
            assert!(ranges.line_length_km.contains(s.line.length_km));
            assert_eq!(s.line.k_seq, 3.0);
            for src in [s.source1, s.source2] {
                assert!(ranges.source_l_h.contains(src.l_h));
                assert!(ranges.source_r_ohm.contains(src.r_ohm));
                assert!(ranges.emf_pu.contains(src.emf_pu));
                assert_eq!(src.k_seq, 1.5);
            }
            assert!(ranges
                .angle_deg
                .contains(s.source2.angle_deg - s.source1.angle_deg));
        }
    }

    #[test]
    fn line_length_draws_look_uniform() {
        // Chi-square over 10 bins, 2000 draws; 9 dof critical value at 0.999 is 27.88.
        let ranges = ParameterRanges::default();
        let mut bins = [0usize; 10];
        let n = 2000;
        for seed in 0..n {
            let d = random_scenario(&ranges, seed).unwrap().line.length_km;
            let b = (((d - 10.0) / 70.0) * 10.0).floor().min(9.0) as usize;
            bins[b] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = bins
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 27.88, "chi2 = {chi2}, bins = {bins:?}");
    }

    #[test]
    fn empty_range_rejected() {
        let ranges = ParameterRanges {
            line_length_km: Range::new(80.0, 10.0),
            ..Default::default()
        };
        assert!(random_scenario(&ranges, 0).is_err());
    }

    #[test]
    fn fault_patterns_validate() {
        for ft in FaultType::ALL_FAULTS {
            FaultSpec::with_pattern(ft, 50.0, 0.3, 0.01, Placement::Internal)
                .validate()
                .unwrap();
        }
        let mut bad = FaultSpec::with_pattern(FaultType::K1, 10.0, 0.5, 0.01, Placement::Internal);
        bad.r_b_ohm = FaultResistance::Ohms(5.0);
        assert!(bad.validate().is_err());
        let out_of_line =
            FaultSpec::with_pattern(FaultType::K3, 0.0, 1.5, 0.01, Placement::Internal);
        assert!(out_of_line.validate().is_err());
    }

    #[test]
    fn scenario_toml_round_trip() {
        let mut sc = reference_scenario();
        sc.fault = FaultSpec::with_pattern(FaultType::K2g, 20.0, 0.4, 0.015, Placement::Internal);
        let text = sc.to_toml_string().unwrap();
        assert!(text.contains("r1_ohm_per_km"));
        assert!(text.contains("r_c_ohm = \"open\""));
        assert_eq!(GridScenario::from_toml_str(&text).unwrap(), sc);
    }

    proptest! {
        #[test]
        fn sequence_round_trip(r1 in 0.01f64..1.0, l1 in 1e-4f64..1e-2, k in 1.0f64..5.0, d in 1.0f64..200.0) {
            let seq = SequenceLineParameters { r1_ohm_per_km: r1, l1_h_per_km: l1, k_seq: k, length_km: d };
            let v = build_phase_matrices(&seq).unwrap().sequence_values();
            prop_assert!(((v.r1 - r1 * d) / (r1 * d)).abs() < 1e-12);
            prop_assert!(((v.r0 - k * r1 * d) / (k * r1 * d)).abs() < 1e-12);
            prop_assert!(((v.l1 - l1 * d) / (l1 * d)).abs() < 1e-12);
            prop_assert!(((v.l0 - k * l1 * d) / (k * l1 * d)).abs() < 1e-12);
        }

        #[test]
        fn fault_matrix_is_linear(a in prop::array::uniform4(0.0f64..100.0), b in prop::array::uniform4(0.0f64..100.0)) {
            let sum = [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]];
            let lhs = assemble_fault_matrix(a).unwrap() + assemble_fault_matrix(b).unwrap();
            let rhs = assemble_fault_matrix(sum).unwrap();
            prop_assert!((lhs - rhs).abs().max() < 1e-12);
            let z = assemble_fault_matrix(a).unwrap();
            prop_assert_eq!(z, z.transpose());
            let off = z - M3::from_element(a[3]);
            prop_assert!(off[(0, 1)] == 0.0 && off[(1, 2)] == 0.0 && off[(0, 2)] == 0.0);
        }
    }
}
