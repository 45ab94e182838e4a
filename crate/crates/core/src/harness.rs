//! Windowed detection over waveform records and the study suites built on it.

use std::path::Path;
use std::time::Instant;

use nalgebra::Vector5;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{select_case, DecisionConfig, Inception, RelayVerdict};
use crate::emt_sim::{add_noise, drop_samples, first_sample_at, simulate_with, SimOptions, WaveformRecord};
use crate::error::{Error, Result};
use crate::grid_model::{
    build_phase_matrices, random_scenario, FaultResistance, FaultSpec, FaultType, GridScenario,
    ParameterRanges, Placement, Range, SequenceLineParameters,
};
use crate::hypothesis_engine::{default_x_max, evaluate_all_cases};
use crate::preprocess::{prepare, PreprocessConfig, RawWindow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub window_ms: f64,
    pub m_blocks: usize,
    pub l: usize,
    pub max_missing_fraction: f64,
    /// Upper bound on the estimated fault resistances; infinite by default.
    pub r_max_ohm: f64,
    pub decision: DecisionConfig,
    /// Stop evaluating after the first trip.
    pub stop_after_trip: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_ms: 2.0,
            m_blocks: 10,
            l: 5,
            max_missing_fraction: 0.2,
            r_max_ohm: f64::INFINITY,
            decision: DecisionConfig::default(),
            stop_after_trip: false,
        }
    }
}

impl DetectorConfig {
    pub fn x_max(&self) -> Vector5<f64> {
        let mut x = default_x_max();
        for i in 0..4 {
            x[i] = self.r_max_ohm;
        }
        x
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            l: self.l,
            max_missing_fraction: self.max_missing_fraction,
        }
    }

    /// Samples per window; the window length must be a whole number of samples.
    pub fn window_samples(&self, sample_rate_hz: f64) -> Result<usize> {
        let exact = self.window_ms * 1e-3 * sample_rate_hz;
        let n = exact.round();
        if !(n >= 1.0) || (exact - n).abs() > 1e-6 * exact.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "window of {} ms is not a whole number of samples at {sample_rate_hz} Hz",
                self.window_ms
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub index: usize,
    /// First sample of the window in the record.
    pub start: usize,
    pub len: usize,
    pub verdict: RelayVerdict,
    pub runtime_s: f64,
}

/// Detection on one window of `w` starting at sample `start`.
pub fn detect_window(
    w: &WaveformRecord,
    start: usize,
    len: usize,
    line: &SequenceLineParameters,
    cfg: &DetectorConfig,
) -> Result<RelayVerdict> {
    let z = build_phase_matrices(line)?;
    let raw = RawWindow::from_record(w, start, len)?;
    let pw = prepare(&raw, &cfg.preprocess())?;
    let cases = evaluate_all_cases(&pw, &z, cfg.m_blocks, &cfg.x_max())?;
    select_case(&cases, cfg.m_blocks, &cfg.decision)
}

/// Adjacent non-overlapping windows over the record, in time order.
pub fn run_detection_stream(
    w: &WaveformRecord,
    line: &SequenceLineParameters,
    cfg: &DetectorConfig,
) -> Result<Vec<WindowReport>> {
    if w.is_empty() {
        return Ok(Vec::new());
    }
    let len = cfg.window_samples(w.sample_rate_hz)?;
    let mut out = Vec::new();
    for (index, start) in (0..).zip((0..w.len()).step_by(len)) {
        if start + len > w.len() {
            break;
        }
        let clock = Instant::now();
        let verdict = detect_window(w, start, len, line, cfg)?;
        let runtime_s = clock.elapsed().as_secs_f64();
        let trip = verdict.is_trip();
        out.push(WindowReport { index, start, len, verdict, runtime_s });
        if trip && cfg.stop_after_trip {
            break;
        }
    }
    Ok(out)
}

/// Position of a window relative to the fault inception.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WindowGroup {
    /// Only pre-fault samples (or no fault at all).
    PreFault = 1,
    /// Both pre- and post-fault samples.
    Inception = 2,
    /// Only post-fault samples.
    PostFault = 3,
}

impl WindowGroup {
    pub fn number(self) -> u8 {
        self as u8
    }
}

/// Group of the window `[start, start + len)` for a fault whose first
/// post-fault sample is `onset`.
pub fn window_group(start: usize, len: usize, onset: Option<usize>) -> WindowGroup {
    match onset {
        Some(n0) if n0 <= start => WindowGroup::PostFault,
        Some(n0) if n0 < start + len => WindowGroup::Inception,
        _ => WindowGroup::PreFault,
    }
}

/// First post-fault sample for an inception at `t_s`.
pub fn onset_sample(t_s: f64, sample_rate_hz: f64) -> usize {
    first_sample_at(t_s, sample_rate_hz)
}

/// Which part of the study a scenario belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteKind {
    Normal,
    External,
    Internal,
}

impl std::fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SuiteKind::Normal => "normal",
            SuiteKind::External => "external",
            SuiteKind::Internal => "internal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub name: String,
    pub kinds: Vec<SuiteKind>,
    pub seed: u64,
    /// Number of random grid-parameter sets shared by all kinds.
    pub grid_sets: usize,
    pub fault_types: Vec<FaultType>,
    pub resistances_ohm: Vec<f64>,
    /// Enumerate `R_a`, `R_b`, `R_g` of K2g faults independently instead of equal.
    pub k2g_all_combinations: bool,
    pub alphas: Vec<f64>,
    pub inception_ms: Vec<f64>,
    pub external_buses: Vec<Placement>,
    /// External faults are cleared this long after inception (uniform draw).
    pub clearing_delay_ms: Range,
    pub normal_duration_ms: f64,
    pub external_duration_ms: f64,
    pub internal_duration_ms: f64,
    pub sample_rate_hz: f64,
    /// Replaces the random line of every grid set.
    pub fixed_line: Option<SequenceLineParameters>,
    pub snr_db: Option<f64>,
    pub packet_loss: Option<f64>,
    /// Detector-side deviation of the per-km resistance, percent.
    pub r_dev_pct: f64,
    /// Detector-side deviation of the per-km inductance, percent.
    pub l_dev_pct: f64,
    pub ranges: ParameterRanges,
    pub detector: DetectorConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            kinds: vec![SuiteKind::Normal, SuiteKind::External, SuiteKind::Internal],
            seed: 1,
            grid_sets: 10,
            fault_types: FaultType::ALL_FAULTS.to_vec(),
            resistances_ohm: vec![0.0, 50.0, 100.0],
            k2g_all_combinations: false,
            alphas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            inception_ms: vec![5.3, 10.1, 14.75, 20.0, 24.55],
            external_buses: vec![Placement::Bus1, Placement::Bus2],
            clearing_delay_ms: Range::new(15.0, 30.0),
            normal_duration_ms: 20.0,
            external_duration_ms: 70.0,
            internal_duration_ms: 32.0,
            sample_rate_hz: 100e3,
            fixed_line: None,
            snr_db: None,
            packet_loss: None,
            r_dev_pct: 0.0,
            l_dev_pct: 0.0,
            ranges: ParameterRanges::default(),
            detector: DetectorConfig::default(),
        }
    }
}

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

impl SuiteConfig {
    /// Grid sizes of the original study: 100 parameter sets, 10 Ω, 0.1 p.u. and
    /// 0.5 ms steps.
    pub fn paper_scale(mut self) -> Self {
        self.grid_sets = 100;
        self.resistances_ohm = steps(0.0, 100.0, 10.0);
        self.k2g_all_combinations = true;
        self.alphas = steps(0.0, 1.0, 0.1);
        self.inception_ms = steps(5.0, 25.0, 0.5);
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.kinds.is_empty() {
            return bad("suite has no kinds".into());
        }
        if self.grid_sets == 0 {
            return bad("grid_sets must be positive".into());
        }
        let faulted = self.kinds.iter().any(|k| *k != SuiteKind::Normal);
        if faulted && (self.fault_types.is_empty() || self.resistances_ohm.is_empty() || self.inception_ms.is_empty()) {
            return bad("fault grid is empty".into());
        }
        if self.fault_types.contains(&FaultType::None) {
            return bad("fault_types may not contain none".into());
        }
        if self.resistances_ohm.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("resistances must be finite and >= 0".into());
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("alphas must lie in [0, 1]".into());
        }
        if self.kinds.contains(&SuiteKind::Internal) && self.alphas.is_empty() {
            return bad("internal suite needs alphas".into());
        }
        if self.kinds.contains(&SuiteKind::External) && self.external_buses.contains(&Placement::Internal) {
            return bad("external_buses must be bus1/bus2".into());
        }
        if !(self.clearing_delay_ms.lo > 0.0 && self.clearing_delay_ms.lo <= self.clearing_delay_ms.hi) {
            return bad("clearing_delay_ms must be a positive range".into());
        }
        if let Some(p) = self.packet_loss {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("packet_loss must be in [0, 1), got {p}"));
            }
        }
        if self.r_dev_pct <= -100.0 || self.l_dev_pct <= -100.0 {
            return bad("line deviations must exceed -100 %".into());
        }
        self.detector.window_samples(self.sample_rate_hz)?;
        Ok(())
    }

    /// The measurement and detector settings of this config as a variant.
    pub fn variant(&self) -> Variant {
        Variant {
            snr_db: self.snr_db,
            packet_loss: self.packet_loss,
            r_dev_pct: self.r_dev_pct,
            l_dev_pct: self.l_dev_pct,
        }
    }
}

/// Measurement and detector-side changes applied to an already simulated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Variant {
    pub snr_db: Option<f64>,
    pub packet_loss: Option<f64>,
    pub r_dev_pct: f64,
    pub l_dev_pct: f64,
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub id: usize,
    pub kind: SuiteKind,
    pub grid_set: usize,
    pub scenario: GridScenario,
}

fn resistance_patterns(cfg: &SuiteConfig, ft: FaultType) -> Vec<[FaultResistance; 4]> {
    use FaultResistance::{Ohms, Open};
    if ft == FaultType::K2g && cfg.k2g_all_combinations {
        let mut out = Vec::new();
        for &ra in &cfg.resistances_ohm {
            for &rb in &cfg.resistances_ohm {
                for &rg in &cfg.resistances_ohm {
                    out.push([Ohms(ra), Ohms(rb), Open, Ohms(rg)]);
                }
            }
        }
        return out;
    }
    cfg.resistances_ohm
        .iter()
        .map(|&r| FaultSpec::with_pattern(ft, r, 0.0, 0.0, Placement::Internal).resistances())
        .collect()
}

fn with_resistances(mut f: FaultSpec, r: [FaultResistance; 4]) -> FaultSpec {
    f.r_a_ohm = r[0];
    f.r_b_ohm = r[1];
    f.r_c_ohm = r[2];
    f.r_g_ohm = r[3];
    f
}

/// Every scenario of the suite in a fixed order; ids are positions in that order.
pub fn enumerate_scenarios(cfg: &SuiteConfig) -> Result<Vec<ScenarioSpec>> {
    cfg.validate()?;
    let mut bases = Vec::with_capacity(cfg.grid_sets);
    for g in 0..cfg.grid_sets {
        let mut sc = random_scenario(&cfg.ranges, mix(cfg.seed, g as u64))?;
        if let Some(line) = cfg.fixed_line {
            sc.line = line;
        }
        sc.sample_rate_hz = cfg.sample_rate_hz;
        bases.push(sc);
    }
    let mut out = Vec::new();
    let mut push = |kind: SuiteKind, grid_set: usize, mut scenario: GridScenario| {
        let id = out.len();
        scenario.seed = mix(cfg.seed ^ 0x5eed, id as u64);
        scenario.noise_snr_db = None;
        scenario.packet_loss_prob = None;
        if kind == SuiteKind::External {
            let (lo, hi) = (cfg.clearing_delay_ms.lo, cfg.clearing_delay_ms.hi);
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0xc1ea, id as u64));
            let delay = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            scenario.fault.t_clearing_s = Some(scenario.fault.t_inception_s + delay * 1e-3);
        }
        out.push(ScenarioSpec { id, kind, grid_set, scenario });
    };
    let mut kinds = cfg.kinds.clone();
    kinds.sort();
    kinds.dedup();
    for kind in kinds {
        for (g, base) in bases.iter().enumerate() {
            match kind {
                SuiteKind::Normal => {
                    let mut sc = base.clone();
                    sc.sim_duration_s = cfg.normal_duration_ms * 1e-3;
                    push(kind, g, sc);
                }
                SuiteKind::External => {
                    for &bus in &cfg.external_buses {
                        for &ft in &cfg.fault_types {
                            for r in resistance_patterns(cfg, ft) {
                                for &t in &cfg.inception_ms {
                                    let mut sc = base.clone();
                                    sc.sim_duration_s = cfg.external_duration_ms * 1e-3;
                                    sc.fault = with_resistances(
                                        FaultSpec::with_pattern(ft, 0.0, 0.0, t * 1e-3, bus),
                                        r,
                                    );
                                    push(kind, g, sc);
                                }
                            }
                        }
                    }
                }
                SuiteKind::Internal => {
                    for &ft in &cfg.fault_types {
                        for r in resistance_patterns(cfg, ft) {
                            for &alpha in &cfg.alphas {
                                for &t in &cfg.inception_ms {
                                    let mut sc = base.clone();
                                    sc.sim_duration_s = cfg.internal_duration_ms * 1e-3;
                                    sc.fault = with_resistances(
                                        FaultSpec::with_pattern(ft, 0.0, alpha, t * 1e-3, Placement::Internal),
                                        r,
                                    );
                                    push(kind, g, sc);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for s in &out {
        s.scenario.validate()?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub index: usize,
    pub group: WindowGroup,
    /// `None` when the window was rejected (e.g. too many lost samples).
    pub verdict: Option<RelayVerdict>,
    pub error: Option<String>,
    pub loc_err_m: Option<f64>,
    /// Largest error over the resistances involved in the true fault.
    pub rf_err_ohm: Option<f64>,
    /// Whether the reported inception range holds the first post-fault sample.
    pub interval_ok: Option<bool>,
    pub runtime_s: f64,
}

impl WindowOutcome {
    pub fn trip(&self) -> bool {
        self.verdict.as_ref().is_some_and(RelayVerdict::is_trip)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub spec: ScenarioSpec,
    pub windows: Vec<WindowOutcome>,
    pub error: Option<String>,
}

impl ScenarioOutcome {
    /// Windows whose true line state is healthy.
    fn healthy_context(&self, w: &WindowOutcome) -> bool {
        self.spec.kind != SuiteKind::Internal || w.group == WindowGroup::PreFault
    }
}

fn score_window(
    spec: &ScenarioSpec,
    onset: Option<usize>,
    index: usize,
    start: usize,
    len: usize,
    result: Result<RelayVerdict>,
    runtime_s: f64,
) -> WindowOutcome {
    let group = window_group(start, len, onset);
    let (verdict, error) = match result {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut out = WindowOutcome {
        index,
        group,
        verdict,
        error,
        loc_err_m: None,
        rf_err_ohm: None,
        interval_ok: None,
        runtime_s,
    };
    let fault = &spec.scenario.fault;
    let Some(v) = out.verdict.as_ref().filter(|v| v.is_trip()) else {
        return out;
    };
    if spec.kind != SuiteKind::Internal || group == WindowGroup::PreFault {
        return out;
    }
    if let Some(a) = v.alpha_est {
        out.loc_err_m = Some((a - fault.alpha_pu).abs() * spec.scenario.line.length_km * 1e3);
    }
    if let Some(r) = v.r_f_est {
        out.rf_err_ohm = fault
            .resistances()
            .iter()
            .zip(r)
            .filter_map(|(truth, est)| truth.ohms().map(|t| (est - t).abs()))
            .reduce(f64::max);
    }
    if group == WindowGroup::Inception {
        let n0 = onset.unwrap_or(usize::MAX);
        out.interval_ok = Some(matches!(
            v.inception,
            Some(Inception::Interval(lo, hi)) if lo <= n0 && n0 <= hi
        ));
    }
    out
}

fn detect_record(
    spec: &ScenarioSpec,
    w: &WaveformRecord,
    line: &SequenceLineParameters,
    det: &DetectorConfig,
) -> Result<Vec<WindowOutcome>> {
    let len = det.window_samples(w.sample_rate_hz)?;
    let fault = &spec.scenario.fault;
    let onset = (fault.fault_type != FaultType::None)
        .then(|| onset_sample(fault.t_inception_s, w.sample_rate_hz));
    let mut out = Vec::new();
    for (index, start) in (0..).zip((0..w.len()).step_by(len)) {
        if start + len > w.len() {
            break;
        }
        let clock = Instant::now();
        let result = detect_window(w, start, len, line, det);
        let runtime_s = clock.elapsed().as_secs_f64();
        out.push(score_window(spec, onset, index, start, len, result, runtime_s));
    }
    Ok(out)
}

fn run_scenario(spec: &ScenarioSpec, cfg: &SuiteConfig, variants: &[Variant]) -> Vec<ScenarioOutcome> {
    let failed = |e: Error| {
        variants
            .iter()
            .map(|_| ScenarioOutcome { spec: spec.clone(), windows: Vec::new(), error: Some(e.to_string()) })
            .collect()
    };
    let clean = match simulate_with(&spec.scenario, &SimOptions::default()) {
        Ok(w) => w,
        Err(e) => return failed(e),
    };
    variants
        .iter()
        .map(|v| {
            let seed = spec.scenario.seed;
            let mut w = add_noise(&clean, v.snr_db, seed);
            if let Some(p) = v.packet_loss {
                w = drop_samples(&w, p, seed ^ 0x9e37_79b9_7f4a_7c15);
            }
            let line = spec.scenario.line.perturbed(v.r_dev_pct / 100.0, v.l_dev_pct / 100.0);
            match detect_record(spec, &w, &line, &cfg.detector) {
                Ok(windows) => ScenarioOutcome { spec: spec.clone(), windows, error: None },
                Err(e) => ScenarioOutcome { spec: spec.clone(), windows: Vec::new(), error: Some(e.to_string()) },
            }
        })
        .collect()
}

/// Simulates every scenario once and evaluates it under each variant; one
/// report per variant, in the order given.
pub fn run_variants(cfg: &SuiteConfig, variants: &[Variant], jobs: usize) -> Result<Vec<StudyReport>> {
    let specs = enumerate_scenarios(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_scenario: Vec<Vec<ScenarioOutcome>> =
        pool.install(|| specs.par_iter().map(|s| run_scenario(s, cfg, variants)).collect());
    let mut by_variant: Vec<Vec<ScenarioOutcome>> = variants.iter().map(|_| Vec::with_capacity(specs.len())).collect();
    for outcomes in per_scenario {
        for (slot, o) in by_variant.iter_mut().zip(outcomes) {
            slot.push(o);
        }
    }
    Ok(variants
        .iter()
        .zip(by_variant)
        .map(|(v, scenarios)| StudyReport::new(cfg.name.clone(), *v, scenarios))
        .collect())
}

pub fn run_suite(cfg: &SuiteConfig, jobs: usize) -> Result<StudyReport> {
    Ok(run_variants(cfg, &[cfg.variant()], jobs)?.remove(0))
}

/// One report per SNR; `f64::INFINITY` means noise-free.
pub fn sweep_noise(cfg: &SuiteConfig, snr_list_db: &[f64], jobs: usize) -> Result<Vec<StudyReport>> {
    let base = cfg.variant();
    let variants: Vec<Variant> = snr_list_db
        .iter()
        .map(|&s| Variant { snr_db: s.is_finite().then_some(s), ..base })
        .collect();
    run_variants(cfg, &variants, jobs)
}

/// One report per `(r_dev_pct, l_dev_pct)` pair.
pub fn sweep_line_params(cfg: &SuiteConfig, deviations_pct: &[(f64, f64)], jobs: usize) -> Result<Vec<StudyReport>> {
    let base = cfg.variant();
    let variants: Vec<Variant> = deviations_pct
        .iter()
        .map(|&(r, l)| Variant { r_dev_pct: r, l_dev_pct: l, ..base })
        .collect();
    run_variants(cfg, &variants, jobs)
}

/// Error statistics over a set of windows.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
}

impl ErrorStats {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut count, mut max, mut sum) = (0, 0.0f64, 0.0);
        for v in values {
            count += 1;
            max = max.max(v);
            sum += v;
        }
        Self { count, max, mean: if count > 0 { sum / count as f64 } else { 0.0 } }
    }
}

/// Detection and estimation figures for one fault type and window group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRow {
    /// Fault type label, or `all`.
    pub fault_type: String,
    pub group: WindowGroup,
    pub windows: usize,
    pub detected: usize,
    pub location_m: ErrorStats,
    pub resistance_ohm: ErrorStats,
}

impl GroupRow {
    pub fn detected_pct(&self) -> f64 {
        if self.windows == 0 {
            f64::NAN
        } else {
            100.0 * self.detected as f64 / self.windows as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Windows whose true state is healthy: normal, external, and pre-fault internal.
    pub healthy_windows: usize,
    pub healthy_correct: usize,
    /// Windows with internal-fault samples.
    pub faulted_windows: usize,
    pub faulted_detected: usize,
    pub rejected_windows: usize,
    pub failed_scenarios: usize,
    pub interval_checked: usize,
    pub interval_correct: usize,
    /// Group-3 estimation errors.
    pub location_m: ErrorStats,
    /// Largest group-3 location error as a percentage of the line length.
    pub location_max_pct: f64,
    pub resistance_ohm: ErrorStats,
}

impl Metrics {
    pub fn security(&self) -> f64 {
        ratio(self.healthy_correct, self.healthy_windows)
    }

    pub fn dependability(&self) -> f64 {
        ratio(self.faulted_detected, self.faulted_windows)
    }

    pub fn interval_rate(&self) -> f64 {
        ratio(self.interval_correct, self.interval_checked)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub name: String,
    pub variant: Variant,
    pub scenarios: Vec<ScenarioOutcome>,
    pub metrics: Metrics,
    pub rows: Vec<GroupRow>,
}

impl StudyReport {
    pub fn new(name: String, variant: Variant, scenarios: Vec<ScenarioOutcome>) -> Self {
        let metrics = compute_metrics(&scenarios);
        let rows = compute_rows(&scenarios);
        Self { name, variant, scenarios, metrics, rows }
    }

    /// Every evaluated window with its scenario.
    pub fn windows(&self) -> impl Iterator<Item = (&ScenarioOutcome, &WindowOutcome)> {
        self.scenarios.iter().flat_map(|s| s.windows.iter().map(move |w| (s, w)))
    }
}

fn compute_metrics(scenarios: &[ScenarioOutcome]) -> Metrics {
    let mut m = Metrics {
        healthy_windows: 0,
        healthy_correct: 0,
        faulted_windows: 0,
        faulted_detected: 0,
        rejected_windows: 0,
        failed_scenarios: scenarios.iter().filter(|s| s.error.is_some()).count(),
        interval_checked: 0,
        interval_correct: 0,
        location_m: ErrorStats::default(),
        location_max_pct: 0.0,
        resistance_ohm: ErrorStats::default(),
    };
    let mut loc = Vec::new();
    let mut res = Vec::new();
    for s in scenarios {
        for w in &s.windows {
            if w.verdict.is_none() {
                m.rejected_windows += 1;
            }
            if s.healthy_context(w) {
                m.healthy_windows += 1;
                m.healthy_correct += usize::from(w.verdict.as_ref().is_some_and(|v| !v.is_trip()));
            } else {
                m.faulted_windows += 1;
                m.faulted_detected += usize::from(w.trip());
            }
            if let Some(ok) = w.interval_ok {
                m.interval_checked += 1;
                m.interval_correct += usize::from(ok);
            }
            if w.group == WindowGroup::PostFault && s.spec.kind == SuiteKind::Internal {
                if let Some(e) = w.loc_err_m {
                    loc.push(e);
                    let pct = 100.0 * e / (s.spec.scenario.line.length_km * 1e3);
                    m.location_max_pct = m.location_max_pct.max(pct);
                }
                res.extend(w.rf_err_ohm);
            }
        }
    }
    m.location_m = ErrorStats::of(loc.into_iter());
    m.resistance_ohm = ErrorStats::of(res.into_iter());
    m
}

fn compute_rows(scenarios: &[ScenarioOutcome]) -> Vec<GroupRow> {
    let mut labels: Vec<String> = Vec::new();
    for s in scenarios.iter().filter(|s| s.spec.kind == SuiteKind::Internal) {
        let l = s.spec.scenario.fault.fault_type.to_string();
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    if labels.is_empty() {
        return Vec::new();
    }
    labels.push("all".into());
    let mut rows = Vec::new();
    for label in &labels {
        for group in [WindowGroup::PreFault, WindowGroup::Inception, WindowGroup::PostFault] {
            let windows: Vec<&WindowOutcome> = scenarios
                .iter()
                .filter(|s| {
                    s.spec.kind == SuiteKind::Internal
                        && (label == "all" || s.spec.scenario.fault.fault_type.to_string() == *label)
                })
                .flat_map(|s| s.windows.iter())
                .filter(|w| w.group == group)
                .collect();
            rows.push(GroupRow {
                fault_type: label.clone(),
                group,
                windows: windows.len(),
                detected: windows.iter().filter(|w| w.trip()).count(),
                location_m: ErrorStats::of(windows.iter().filter_map(|w| w.loc_err_m)),
                resistance_ohm: ErrorStats::of(windows.iter().filter_map(|w| w.rf_err_ohm)),
            });
        }
    }
    rows
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

const WINDOW_COLUMNS: [&str; 26] = [
    "scenario", "kind", "grid_set", "fault_type", "placement", "alpha", "r_a", "r_b", "r_c", "r_g",
    "t_inception_ms", "window", "group", "state", "case", "alpha_est", "ra_est", "rb_est", "rc_est",
    "rg_est", "inception", "type_est", "loc_err_m", "rf_err_ohm", "interval_ok", "error",
];

impl StudyReport {
    /// Per-window records; identical inputs give byte-identical output.
    pub fn write_windows_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(WINDOW_COLUMNS)?;
        for (s, win) in self.windows() {
            let f = &s.spec.scenario.fault;
            let v = win.verdict.as_ref();
            let r_est = v.and_then(|v| v.r_f_est);
            let r = |i: usize| fmt_opt(r_est.map(|r| r[i]));
            let state = match v {
                Some(v) if v.is_trip() => "trip",
                Some(_) => "healthy",
                None => "rejected",
            };
            let inception = match v.and_then(|v| v.inception) {
                Some(Inception::Interval(a, b)) => format!("{a}..{b}"),
                Some(Inception::BeforeWindow) => "before".into(),
                None => String::new(),
            };
            let faulted = f.fault_type != FaultType::None;
            w.write_record([
                s.spec.id.to_string(),
                s.spec.kind.to_string(),
                s.spec.grid_set.to_string(),
                f.fault_type.to_string(),
                if faulted { f.placement.to_string() } else { String::new() },
                if faulted { fmt_f(f.alpha_pu) } else { String::new() },
                f.r_a_ohm.to_string(),
                f.r_b_ohm.to_string(),
                f.r_c_ohm.to_string(),
                f.r_g_ohm.to_string(),
                if faulted { fmt_f(f.t_inception_s * 1e3) } else { String::new() },
                win.index.to_string(),
                win.group.number().to_string(),
                state.into(),
                v.map(|v| v.selected_case.to_string()).unwrap_or_default(),
                fmt_opt(v.and_then(|v| v.alpha_est)),
                r(0),
                r(1),
                r(2),
                r(3),
                inception,
                v.and_then(|v| v.fault_type_est).map(|t| t.to_string()).unwrap_or_default(),
                fmt_opt(win.loc_err_m),
                fmt_opt(win.rf_err_ohm),
                win.interval_ok.map(|b| b.to_string()).unwrap_or_default(),
                win.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Detection rate and error statistics per fault type and window group.
    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "fault_type", "group", "windows", "detected_pct", "loc_err_max_m", "loc_err_mean_m",
            "rf_err_max_ohm", "rf_err_mean_ohm",
        ])?;
        for row in &self.rows {
            w.write_record([
                row.fault_type.clone(),
                row.group.number().to_string(),
                row.windows.to_string(),
                fmt_f(row.detected_pct()),
                fmt_f(row.location_m.max),
                fmt_f(row.location_m.mean),
                fmt_f(row.resistance_ohm.max),
                fmt_f(row.resistance_ohm.mean),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metric_pairs(&self) -> Vec<(&'static str, String)> {
        let m = &self.metrics;
        vec![
            ("scenarios", self.scenarios.len().to_string()),
            ("failed_scenarios", m.failed_scenarios.to_string()),
            ("healthy_windows", m.healthy_windows.to_string()),
            ("healthy_correct", m.healthy_correct.to_string()),
            ("security", fmt_f(m.security())),
            ("faulted_windows", m.faulted_windows.to_string()),
            ("faulted_detected", m.faulted_detected.to_string()),
            ("dependability", fmt_f(m.dependability())),
            ("rejected_windows", m.rejected_windows.to_string()),
            ("interval_checked", m.interval_checked.to_string()),
            ("interval_correct", m.interval_correct.to_string()),
            ("loc_err_max_m", fmt_f(m.location_m.max)),
            ("loc_err_mean_m", fmt_f(m.location_m.mean)),
            ("loc_err_max_pct", fmt_f(m.location_max_pct)),
            ("rf_err_max_ohm", fmt_f(m.resistance_ohm.max)),
            ("rf_err_mean_ohm", fmt_f(m.resistance_ohm.mean)),
        ]
    }

    pub fn write_metrics_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        for (k, v) in self.metric_pairs() {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Wall-clock time per window; the only non-deterministic output.
    pub fn write_timing_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scenario", "window", "runtime_us"])?;
        for (s, win) in self.windows() {
            w.write_record([
                s.spec.id.to_string(),
                win.index.to_string(),
                format!("{:.3}", win.runtime_s * 1e6),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable results table.
    pub fn table(&self) -> String {
        let mut t = format!("{}\n", self.name);
        for (k, v) in self.metric_pairs() {
            t += &format!("  {k:<18} {v}\n");
        }
        if !self.rows.is_empty() {
            t += &format!(
                "\n{:<6} {:>5} {:>8} {:>10} {:>12} {:>12} {:>12} {:>12}\n",
                "type", "group", "windows", "detected%", "loc_max_m", "loc_mean_m", "rf_max_ohm", "rf_mean_ohm"
            );
            for r in &self.rows {
                t += &format!(
                    "{:<6} {:>5} {:>8} {:>10.2} {:>12.3} {:>12.3} {:>12.3} {:>12.3}\n",
                    r.fault_type,
                    r.group.number(),
                    r.windows,
                    r.detected_pct(),
                    r.location_m.max,
                    r.location_m.mean,
                    r.resistance_ohm.max,
                    r.resistance_ohm.mean
                );
            }
        }
        t
    }

    /// Writes windows.csv, summary.csv, metrics.csv, table.txt and timing.csv into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let file = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
        self.write_windows_csv(file("windows.csv")?)?;
        self.write_summary_csv(file("summary.csv")?)?;
        self.write_metrics_csv(file("metrics.csv")?)?;
        self.write_timing_csv(file("timing.csv")?)?;
        std::fs::write(dir.join("table.txt"), self.table())?;
        Ok(())
    }
}

/// One row per report of a sweep; `key` names the swept quantity per report.
pub fn write_sweep_csv<W: std::io::Write>(
    reports: &[StudyReport],
    key_names: &[&str],
    key: impl Fn(&Variant) -> Vec<f64>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = key_names.to_vec();
    header.extend([
        "security", "dependability", "loc_err_max_m", "loc_err_mean_m", "rf_err_max_ohm", "rf_err_mean_ohm",
    ]);
    w.write_record(&header)?;
    for r in reports {
        let m = &r.metrics;
        let mut rec: Vec<String> = key(&r.variant).into_iter().map(fmt_f).collect();
        rec.extend([
            fmt_f(m.security()),
            fmt_f(m.dependability()),
            fmt_f(m.location_m.max),
            fmt_f(m.location_m.mean),
            fmt_f(m.resistance_ohm.max),
            fmt_f(m.resistance_ohm.mean),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one report sub-directory per sweep point plus `sweep.csv`.
pub fn write_sweep_dir(
    reports: &[StudyReport],
    key_names: &[&str],
    key: impl Fn(&Variant) -> Vec<f64>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, r) in reports.iter().enumerate() {
        r.write_dir(&dir.join(format!("point_{i:03}")))?;
    }
    let f = std::io::BufWriter::new(std::fs::File::create(dir.join("sweep.csv"))?);
    write_sweep_csv(reports, key_names, key, f)
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.iter().map(str::to_string).collect();
    let rows = rd
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

fn align(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r.get(c).map_or(0, String::len)).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    for r in rows {
        out += &line(r);
    }
    out
}

/// Renders the CSV reports in `dir` (a suite report or a sweep) as text tables.
pub fn render_report_dir(dir: &Path) -> Result<String> {
    let sweep = dir.join("sweep.csv");
    if sweep.exists() {
        let (h, rows) = read_table(&sweep)?;
        return Ok(align(&h, &rows));
    }
    let metrics = dir.join("metrics.csv");
    if !metrics.exists() {
        return Err(Error::Config(format!("{} holds no report", dir.display())));
    }
    let (_, rows) = read_table(&metrics)?;
    let mut out = String::new();
    for r in &rows {
        out += &format!("{:<18} {}\n", r[0], r.get(1).map_or("", String::as_str));
    }
    let summary = dir.join("summary.csv");
    if summary.exists() {
        let (h, rows) = read_table(&summary)?;
        if !rows.is_empty() {
            out += "\n";
            out += &align(&h, &rows);
        }
    }
    Ok(out)
}
