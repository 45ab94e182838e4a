//! Fixed-step transient simulation of the two-source test grid.
//!
//! Topology: `S1 ─ bus1 ─ line ─ bus2 ─ S2`, with an optional fault network
//! (three phase legs into a star point, star point to ground) attached either
//! inside the line or at one of the buses. Branches are discretized with the
//! trapezoidal rule and solved by nodal analysis at every step; the nodal
//! matrix is factored once per topology.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector, Dyn, Matrix3, Matrix3xX, Vector3, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid_model::{
    build_phase_matrices, FaultResistance, FaultType, GridScenario, PhaseImpedance, Placement,
};

/// Synchronized terminal measurements. Currents flow into the line at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformRecord {
    pub sample_rate_hz: f64,
    pub timestamps: Vec<f64>,
    pub u1: Matrix3xX<f64>,
    pub u2: Matrix3xX<f64>,
    pub i1: Matrix3xX<f64>,
    pub i2: Matrix3xX<f64>,
    /// Remote-stream samples lost in transit.
    pub missing: Vec<bool>,
}

impl WaveformRecord {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    fn channels_mut(&mut self) -> [&mut Matrix3xX<f64>; 4] {
        [&mut self.u1, &mut self.u2, &mut self.i1, &mut self.i2]
    }

    fn channels(&self) -> [&Matrix3xX<f64>; 4] {
        [&self.u1, &self.u2, &self.i1, &self.i2]
    }

    pub const CSV_HEADER: [&'static str; 14] = [
        "t", "u1a", "u1b", "u1c", "u2a", "u2b", "u2c", "i1a", "i1b", "i1c", "i2a", "i2b", "i2c",
        "missing",
    ];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        let mut row: Vec<String> = Vec::with_capacity(14);
        for j in 0..self.len() {
            row.clear();
            row.push(format!("{:.16e}", self.timestamps[j]));
            for ch in self.channels() {
                for p in 0..3 {
                    row.push(format!("{:.16e}", ch[(p, j)]));
                }
            }
            row.push(if self.missing[j] {
                "1".into()
            } else {
                "0".into()
            });
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a record written by [`WaveformRecord::write_csv`]. The sample
    /// rate is recovered from the first timestamp step.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != Self::CSV_HEADER {
            return Err(Error::InvalidWindow(format!(
                "unexpected waveform header {header:?}"
            )));
        }
        let mut t = Vec::new();
        let mut cols: Vec<[f64; 12]> = Vec::new();
        let mut missing = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec[k].trim().parse::<f64>().map_err(|e| {
                    Error::InvalidWindow(format!("bad number {:?} in column {k}: {e}", &rec[k]))
                })
            };
            t.push(num(0)?);
            let mut c = [0.0; 12];
            for (k, v) in c.iter_mut().enumerate() {
                *v = num(k + 1)?;
            }
            cols.push(c);
            missing.push(matches!(rec[13].trim(), "1" | "true"));
        }
        let n = t.len();
        let mat = |off: usize| Matrix3xX::from_fn(n, |p, j| cols[j][off + p]);
        let sample_rate_hz = if n >= 2 { 1.0 / (t[1] - t[0]) } else { 0.0 };
        let rec = Self {
            sample_rate_hz,
            timestamps: t,
            u1: mat(0),
            u2: mat(3),
            i1: mat(6),
            i2: mat(9),
            missing,
        };
        if rec
            .channels()
            .iter()
            .any(|m| m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::DataIntegrity("non-finite sample in waveform".into()));
        }
        Ok(rec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// How ideal switch states are realized as resistors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Leakage resistance standing in for an open fault branch.
    pub open_branch_ohm: f64,
    /// Floor applied to fault-branch resistances (switch on-resistance).
    pub closed_switch_ohm: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            open_branch_ohm: 1e9,
            closed_switch_ohm: 1e-3,
        }
    }
}

/// Index of the first sample at or after `t`. Times within 1e-6 of a sample
/// period of a sample instant snap to it.
pub fn first_sample_at(t: f64, sample_rate_hz: f64) -> usize {
    let t = t - 1e-6 / sample_rate_hz;
    let mut n = (t * sample_rate_hz).floor().max(0.0) as usize;
    while (n as f64) / sample_rate_hz < t {
        n += 1;
    }
    while n > 0 && ((n - 1) as f64) / sample_rate_hz >= t {
        n -= 1;
    }
    n
}

/// Sample index where the fault network is switched in, if the scenario has one.
pub fn fault_onset_sample(sc: &GridScenario) -> Option<usize> {
    (sc.fault.fault_type != FaultType::None)
        .then(|| first_sample_at(sc.fault.t_inception_s, sc.sample_rate_hz))
}

pub fn sample_count(sc: &GridScenario) -> usize {
    (sc.sim_duration_s * sc.sample_rate_hz).round() as usize
}

/// Coupled three-phase R-L branch; the discretization lives in [`Stepper`].
#[derive(Debug, Clone)]
struct RlBranch {
    from: End,
    to: End,
    z: PhaseImpedance,
    i: Vector3<f64>,
    v: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum End {
    /// First of three consecutive node indices.
    Bus(usize),
    Emf(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Method {
    Trapezoidal,
    BackwardEuler,
}

/// Companion network for one topology and step length. Branch currents update
/// as `i' = g·v' + g·(cv·v − k·i)`.
struct Stepper {
    lu: LU<f64, Dyn, Dyn>,
    nodes: usize,
    g: Vec<Matrix3<f64>>,
    k: Vec<Matrix3<f64>>,
    cv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Topology {
    fault_on: bool,
    /// Fault legs `[a, b, c, g]` interrupted by clearing.
    opened: [bool; 4],
}

#[derive(Debug, Clone, Copy)]
struct Resistor {
    a: Option<usize>,
    b: Option<usize>,
    r: f64,
}

#[derive(Debug, Clone)]
struct Grid {
    n_base: usize,
    fault_node: Option<usize>,
    branches: Vec<RlBranch>,
    /// Realized leg resistances `[a, b, c, g]`.
    fault_r: [f64; 4],
    open_ohm: f64,
    emf_peak: [f64; 2],
    emf_angle: [f64; 2],
    omega: f64,
    placement: Placement,
}

impl Grid {
    fn node_count(&self, topo: Topology) -> usize {
        self.n_base + usize::from(topo.fault_on)
    }

    fn star(&self) -> usize {
        self.n_base
    }

    fn leg_r(&self, topo: Topology, k: usize) -> f64 {
        if topo.opened[k] {
            self.open_ohm
        } else {
            self.fault_r[k]
        }
    }

    fn resistors(&self, topo: Topology) -> Vec<Resistor> {
        let Some(f) = self.fault_node.filter(|_| topo.fault_on) else {
            return Vec::new();
        };
        let star = self.star();
        let mut out: Vec<Resistor> = (0..3)
            .map(|p| Resistor {
                a: Some(f + p),
                b: Some(star),
                r: self.leg_r(topo, p),
            })
            .collect();
        out.push(Resistor {
            a: Some(star),
            b: None,
            r: self.leg_r(topo, 3),
        });
        out
    }

    /// Currents through the fault legs `[a, b, c, g]`.
    fn leg_currents(&self, v: &DVector<f64>, topo: Topology) -> [f64; 4] {
        let mut out = [0.0; 4];
        if let Some(f) = self.fault_node.filter(|_| topo.fault_on) {
            let star = v[self.star()];
            for p in 0..3 {
                out[p] = (v[f + p] - star) / self.leg_r(topo, p);
            }
            out[3] = star / self.leg_r(topo, 3);
        }
        out
    }

    fn emf(&self, src: usize, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|p, _| {
            self.emf_peak[src]
                * (self.omega * t + self.emf_angle[src] - p as f64 * 2.0 * PI / 3.0).cos()
        })
    }

    fn stepper(&self, topo: Topology, step: f64, method: Method) -> Result<Stepper> {
        let (scale, cv) = match method {
            Method::Trapezoidal => (2.0 / step, 1.0),
            Method::BackwardEuler => (1.0 / step, 0.0),
        };
        let mut g = Vec::with_capacity(self.branches.len());
        let mut k = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let m = b.z.r + b.z.l * scale;
            g.push(
                m.try_inverse()
                    .ok_or_else(|| Error::Simulation("singular branch impedance".into()))?,
            );
            k.push(match method {
                Method::Trapezoidal => b.z.r - b.z.l * scale,
                Method::BackwardEuler => -b.z.l * scale,
            });
        }
        let nodes = self.node_count(topo);
        let mut y = DMatrix::zeros(nodes, nodes);
        for (b, gb) in self.branches.iter().zip(&g) {
            stamp_block(&mut y, b.from, b.to, gb);
        }
        for r in self.resistors(topo) {
            stamp_conductance(&mut y, r.a, r.b, 1.0 / r.r);
        }
        Ok(Stepper {
            lu: y.lu(),
            nodes,
            g,
            k,
            cv,
        })
    }

    /// Steady-state phasor solution at the discrete-equivalent frequency, so
    /// the trapezoidal recursion starts exactly periodic.
    fn initialize(&mut self, topo: Topology, h: f64) -> Result<DVector<f64>> {
        let omega_d = (2.0 / h) * (self.omega * h / 2.0).tan();
        let n = self.node_count(topo);
        let c = |v: f64| Complex::new(v, 0.0);
        let mut y = DMatrix::<Complex<f64>>::zeros(n, n);
        let mut rhs = DVector::<Complex<f64>>::zeros(n);
        let e_ph = [self.emf_phasor(0), self.emf_phasor(1)];
        let mut admittances = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let zc = b.z.r.map(c) + b.z.l.map(|l| Complex::new(0.0, omega_d * l));
            let yb = zc
                .try_inverse()
                .ok_or_else(|| Error::Simulation("singular branch phasor impedance".into()))?;
            stamp_block(&mut y, b.from, b.to, &yb);
            if let End::Emf(s) = b.from {
                if let End::Bus(k) = b.to {
                    let inj = yb * e_ph[s];
                    for p in 0..3 {
                        rhs[k + p] += inj[p];
                    }
                }
            }
            admittances.push(yb);
        }
        for r in self.resistors(topo) {
            stamp_conductance(&mut y, r.a, r.b, c(1.0 / r.r));
        }
        let v = y
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Simulation("singular network in steady-state solve".into()))?;
        for (idx, b) in self.branches.iter_mut().enumerate() {
            let vb = branch_voltage_c(b.from, b.to, &v, |s| e_ph[s]);
            let ib = admittances[idx] * vb;
            b.v = vb.map(|z| z.re);
            b.i = ib.map(|z| z.re);
        }
        Ok(v.map(|z| z.re))
    }

    /// One step of the companion network ending at time `t`.
    fn advance(&mut self, st: &Stepper, t: f64) -> Result<DVector<f64>> {
        let hist: Vec<Vector3<f64>> = self
            .branches
            .iter()
            .zip(st.g.iter().zip(&st.k))
            .map(|(b, (g, k))| g * (b.v * st.cv - k * b.i))
            .collect();
        let e = [self.emf(0, t), self.emf(1, t)];
        let mut rhs = DVector::zeros(st.nodes);
        for ((b, hb), g) in self.branches.iter().zip(&hist).zip(&st.g) {
            if let End::Bus(a) = b.from {
                for p in 0..3 {
                    rhs[a + p] -= hb[p];
                }
            }
            if let End::Bus(k) = b.to {
                let inj = match b.from {
                    End::Emf(s) => g * e[s] + hb,
                    End::Bus(_) => *hb,
                };
                for p in 0..3 {
                    rhs[k + p] += inj[p];
                }
            }
        }
        let v = st
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Simulation(format!("singular nodal matrix at t = {t:e} s")))?;
        let emf = |s: usize| e[s];
        for ((b, hb), g) in self.branches.iter_mut().zip(&hist).zip(&st.g) {
            b.v = end_voltage(b.from, &v, &emf) - end_voltage(b.to, &v, &emf);
            b.i = g * b.v + hb;
        }
        Ok(v)
    }

    /// Relay quantities `[u1, u2, i1, i2]` for node voltages `v`.
    fn measure(&self, v: &DVector<f64>, topo: Topology, split: bool) -> [Vector3<f64>; 4] {
        const BUS1: usize = 0;
        const BUS2: usize = 3;
        let u1 = Vector3::new(v[BUS1], v[BUS1 + 1], v[BUS1 + 2]);
        let u2 = Vector3::new(v[BUS2], v[BUS2 + 1], v[BUS2 + 2]);
        let [mut i1, mut i2] = self.line_currents(split);
        if topo.fault_on && self.placement == Placement::Internal {
            if let Some(f) = self.fault_node {
                let legs = self.leg_currents(v, topo);
                let leg = Vector3::new(legs[0], legs[1], legs[2]);
                match f {
                    BUS1 => i1 += leg,
                    BUS2 => i2 += leg,
                    _ => {}
                }
            }
        }
        [u1, u2, i1, i2]
    }

    /// Line-branch currents into the line at bus1 and bus2.
    fn line_currents(&self, split: bool) -> [Vector3<f64>; 2] {
        let a = self.branches[2].i;
        [a, if split { self.branches[3].i } else { -a }]
    }

    fn emf_phasor(&self, s: usize) -> Vector3<Complex<f64>> {
        Vector3::from_fn(|p, _| {
            Complex::from_polar(
                self.emf_peak[s],
                self.emf_angle[s] - p as f64 * 2.0 * PI / 3.0,
            )
        })
    }

    /// Switches to `topo` at the current instant and takes two short
    /// backward-Euler steps so the voltage jump does not enter the trapezoidal
    /// history. Returns the right-limit measurement at the switching instant.
    fn restart(
        &mut self,
        topo: Topology,
        t: f64,
        delta: f64,
        split: bool,
    ) -> Result<Restart> {
        let at_switch = self.line_currents(split);
        let st = self.stepper(topo, delta, Method::BackwardEuler)?;
        let va = self.advance(&st, t + delta)?;
        let ma = self.measure(&va, topo, split);
        let la = self.line_currents(split);
        let vb = self.advance(&st, t + 2.0 * delta)?;
        let mb = self.measure(&vb, topo, split);
        let lb = self.line_currents(split);
        // Inductor currents are continuous; everything else is extrapolated
        // back to the switching instant.
        let mut m0: [Vector3<f64>; 4] = std::array::from_fn(|c| 2.0 * ma[c] - mb[c]);
        for k in 0..2 {
            m0[2 + k] += at_switch[k] - (2.0 * la[k] - lb[k]);
        }
        Ok(Restart {
            at_switch: m0,
            at_end: mb,
            v: vb,
        })
    }
}
fn stamp_block<T>(y: &mut DMatrix<T>, from: End, to: End, g: &Matrix3<T>)
where
    T: nalgebra::Scalar + Copy + std::ops::AddAssign + std::ops::SubAssign,
{
    let a = match from {
        End::Bus(k) => Some(k),
        End::Emf(_) => None,
    };
    let b = match to {
        End::Bus(k) => Some(k),
        End::Emf(_) => None,
    };
    for p in 0..3 {
        for q in 0..3 {
            let v = g[(p, q)];
            if let Some(a) = a {
                y[(a + p, a + q)] += v;
            }
            if let Some(b) = b {
                y[(b + p, b + q)] += v;
            }
            if let (Some(a), Some(b)) = (a, b) {
                y[(a + p, b + q)] -= v;
                y[(b + p, a + q)] -= v;
            }
        }
    }
}

fn stamp_conductance<T>(y: &mut DMatrix<T>, a: Option<usize>, b: Option<usize>, g: T)
where
    T: nalgebra::Scalar + Copy + std::ops::AddAssign + std::ops::SubAssign,
{
    if let Some(a) = a {
        y[(a, a)] += g;
    }
    if let Some(b) = b {
        y[(b, b)] += g;
    }
    if let (Some(a), Some(b)) = (a, b) {
        y[(a, b)] -= g;
        y[(b, a)] -= g;
    }
}

fn end_voltage<T: nalgebra::Scalar + Copy>(
    end: End,
    v: &DVector<T>,
    emf: &impl Fn(usize) -> Vector3<T>,
) -> Vector3<T> {
    match end {
        End::Bus(k) => Vector3::new(v[k], v[k + 1], v[k + 2]),
        End::Emf(s) => emf(s),
    }
}

fn branch_voltage_c(
    from: End,
    to: End,
    v: &DVector<Complex<f64>>,
    emf: impl Fn(usize) -> Vector3<Complex<f64>>,
) -> Vector3<Complex<f64>> {
    end_voltage(from, v, &emf) - end_voltage(to, v, &emf)
}

fn realize(r: FaultResistance, opts: &SimOptions) -> f64 {
    match r {
        FaultResistance::Ohms(v) => v.max(opts.closed_switch_ohm),
        FaultResistance::Open => opts.open_branch_ohm,
    }
}

/// Measurements around a switching event.
struct Restart {
    /// Right limit at the switching instant.
    at_switch: [Vector3<f64>; 4],
    /// Two restart steps later.
    at_end: [Vector3<f64>; 4],
    v: DVector<f64>,
}

/// Backward-Euler restart step after a switching event. Long enough for the
/// leakage-resistance modes (nanoseconds) to die out, short against the line
/// dynamics.
const RESTART_STEP_S: f64 = 1e-6;

fn restart_step(h: f64) -> f64 {
    RESTART_STEP_S.min(0.1 * h)
}

/// Earliest zero crossing of a closed fault leg in `(t0, t1]`, with the legs
/// that are current-free there. `grid` holds the state at `t0`.
fn leg_zero(
    grid: &Grid,
    topo: Topology,
    closed: [bool; 4],
    t0: f64,
    before: [f64; 4],
    t1: f64,
    after: [f64; 4],
) -> Result<Option<(f64, [bool; 4])>> {
    let scale = before
        .iter()
        .chain(&after)
        .fold(f64::MIN_POSITIVE, |m, x| m.max(x.abs()));
    let current_at = |s: f64, k: usize| -> Result<f64> {
        let mut g = grid.clone();
        let v = g.advance(&g.stepper(topo, s - t0, Method::Trapezoidal)?, s)?;
        Ok(g.leg_currents(&v, topo)[k])
    };
    let mut best: Option<f64> = None;
    for k in (0..4).filter(|&k| closed[k] && !topo.opened[k]) {
        let (mut a, mut fa, mut b, mut fb) = (t0, before[k], t1, after[k]);
        if fa == 0.0 || fa.signum() == fb.signum() {
            continue;
        }
        // Illinois variant of regula falsi.
        let mut side = 0;
        for _ in 0..100 {
            if (b - a) <= 1e-9 * (t1 - t0) || fb.abs() <= 1e-12 * scale {
                break;
            }
            let c = b - fb * (b - a) / (fb - fa);
            let fc = current_at(c, k)?;
            if fc.signum() == fb.signum() {
                b = c;
                fb = fc;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            } else {
                a = b;
                fa = fb;
                b = c;
                fb = fc;
                side = 1;
            }
        }
        best = Some(best.map_or(b, |x: f64| x.min(b)));
    }
    let Some(tau) = best else { return Ok(None) };
    let mut g = grid.clone();
    let v = g.advance(&g.stepper(topo, tau - t0, Method::Trapezoidal)?, tau)?;
    let legs = g.leg_currents(&v, topo);
    let mut open = [false; 4];
    for k in (0..4).filter(|&k| closed[k] && !topo.opened[k]) {
        open[k] = legs[k].abs() <= 1e-6 * scale;
    }
    Ok(Some((tau, open)))
}

/// Runs the transient simulation with default switch realization.
pub fn simulate(sc: &GridScenario) -> Result<WaveformRecord> {
    simulate_with(sc, &SimOptions::default())
}

/// Fault inception switches at its sample instant. Clearing interrupts each
/// fault leg at its first current zero after the clearing time.
pub fn simulate_with(sc: &GridScenario, opts: &SimOptions) -> Result<WaveformRecord> {
    sc.validate()?;
    let h = 1.0 / sc.sample_rate_hz;
    let line = build_phase_matrices(&sc.line)?;
    let fault = &sc.fault;
    let has_fault = fault.fault_type != FaultType::None;

    const BUS1: usize = 0;
    const BUS2: usize = 3;
    let split = has_fault
        && fault.placement == Placement::Internal
        && fault.alpha_pu > 0.0
        && fault.alpha_pu < 1.0;
    let n_base = if split { 9 } else { 6 };

    let branch = |from, to, z| RlBranch {
        from,
        to,
        z,
        i: Vector3::zeros(),
        v: Vector3::zeros(),
    };
    let mut branches = vec![
        branch(End::Emf(0), End::Bus(BUS1), sc.source1.impedance()),
        branch(End::Emf(1), End::Bus(BUS2), sc.source2.impedance()),
    ];
    // Line segments are the branches after the two sources; the first starts at bus1.
    if split {
        branches.push(branch(End::Bus(BUS1), End::Bus(6), line.scaled(fault.alpha_pu)));
        branches.push(branch(End::Bus(BUS2), End::Bus(6), line.scaled(1.0 - fault.alpha_pu)));
    } else {
        branches.push(branch(End::Bus(BUS1), End::Bus(BUS2), line));
    }

    let fault_node = has_fault.then_some(match fault.placement {
        Placement::Internal if split => 6,
        Placement::Internal if fault.alpha_pu <= 0.0 => BUS1,
        Placement::Internal => BUS2,
        Placement::Bus1 => BUS1,
        Placement::Bus2 => BUS2,
    });

    let legs = fault.resistances();
    let closed = legs.map(|r| !r.is_open());
    let peak = sc.phase_peak_v();
    let mut grid = Grid {
        n_base,
        fault_node,
        branches,
        fault_r: legs.map(|r| realize(r, opts)),
        open_ohm: opts.open_branch_ohm,
        emf_peak: [sc.source1.emf_pu * peak, sc.source2.emf_pu * peak],
        emf_angle: [
            sc.source1.angle_deg.to_radians(),
            sc.source2.angle_deg.to_radians(),
        ],
        omega: 2.0 * PI * sc.freq_hz,
        placement: fault.placement,
    };

    let n_samples = sample_count(sc);
    let onset = fault_onset_sample(sc);
    let t_clear = fault.t_clearing_s.filter(|_| has_fault);

    let mut rec = WaveformRecord {
        sample_rate_hz: sc.sample_rate_hz,
        timestamps: (0..n_samples).map(|n| n as f64 * h).collect(),
        u1: Matrix3xX::zeros(n_samples),
        u2: Matrix3xX::zeros(n_samples),
        i1: Matrix3xX::zeros(n_samples),
        i2: Matrix3xX::zeros(n_samples),
        missing: vec![false; n_samples],
    };
    if n_samples == 0 {
        return Ok(rec);
    }

    let mut topo = Topology {
        fault_on: onset == Some(0),
        opened: [false; 4],
    };
    let mut v = grid.initialize(topo, h)?;
    let mut regular = grid.stepper(topo, h, Method::Trapezoidal)?;
    let placement = grid.placement;
    let mut record = |n: usize, m: [Vector3<f64>; 4]| -> Result<()> {
        if m.iter().any(|x| x.iter().any(|c| !c.is_finite())) {
            return Err(Error::Simulation(format!(
                "non-finite solution at t = {:e} s (placement {})",
                n as f64 * h,
                placement
            )));
        }
        rec.u1.set_column(n, &m[0]);
        rec.u2.set_column(n, &m[1]);
        rec.i1.set_column(n, &m[2]);
        rec.i2.set_column(n, &m[3]);
        Ok(())
    };
    record(0, grid.measure(&v, topo, split))?;

    // Grid state time; differs from the last sample only right after an event.
    let mut t_cur = 0.0;
    let mut n = 1;
    let step_to = |grid: &mut Grid, regular: &Stepper, topo: Topology, t0: f64, t1: f64| {
        if (t1 - t0 - h).abs() <= 1e-12 * h {
            grid.advance(regular, t1)
        } else {
            grid.advance(&grid.stepper(topo, t1 - t0, Method::Trapezoidal)?, t1)
        }
    };
    while n < n_samples {
        let target = n as f64 * h;
        if !topo.fault_on && onset == Some(n) {
            step_to(&mut grid, &regular, topo, t_cur, target)?;
            topo.fault_on = true;
            let r = grid.restart(topo, target, restart_step(h), split)?;
            record(n, r.at_switch)?;
            v = r.v;
            t_cur = target + 2.0 * restart_step(h);
            regular = grid.stepper(topo, h, Method::Trapezoidal)?;
            n += 1;
            continue;
        }
        let clearing = topo.fault_on && t_clear.is_some_and(|tc| tc < target);
        if !clearing {
            v = step_to(&mut grid, &regular, topo, t_cur, target)?;
            t_cur = target;
            record(n, grid.measure(&v, topo, split))?;
            n += 1;
            continue;
        }
        let tc = t_clear.unwrap_or(t_cur);
        if t_cur < tc {
            v = step_to(&mut grid, &regular, topo, t_cur, tc)?;
            t_cur = tc;
        }
        let mut trial = grid.clone();
        let v_next = step_to(&mut trial, &regular, topo, t_cur, target)?;
        let before = grid.leg_currents(&v, topo);
        let after = trial.leg_currents(&v_next, topo);
        match leg_zero(&grid, topo, closed, t_cur, before, target, after)? {
            None => {
                grid = trial;
                v = v_next;
                t_cur = target;
                record(n, grid.measure(&v, topo, split))?;
                n += 1;
            }
            Some((tau, open)) => {
                if tau > t_cur {
                    step_to(&mut grid, &regular, topo, t_cur, tau)?;
                }
                for (o, new) in topo.opened.iter_mut().zip(open) {
                    *o |= new;
                }
                if (0..4).all(|k| !closed[k] || topo.opened[k]) {
                    topo = Topology {
                        fault_on: false,
                        opened: [false; 4],
                    };
                }
                let delta = restart_step(h);
                let r = grid.restart(topo, tau, delta, split)?;
                v = r.v;
                t_cur = tau + 2.0 * delta;
                regular = grid.stepper(topo, h, Method::Trapezoidal)?;
                // A sample inside the restart span is interpolated between the
                // switching instant and the end of the span.
                if target <= t_cur + 1e-9 * h {
                    let w = ((target - tau) / (2.0 * delta)).clamp(0.0, 1.0);
                    record(n, std::array::from_fn(|c| r.at_switch[c] * (1.0 - w) + r.at_end[c] * w))?;
                    n += 1;
                }
            }
        }
    }
    Ok(rec)
}

/// Adds independent Gaussian noise to every channel at the given SNR.
/// `None` or `+∞` leaves the record unchanged.
pub fn add_noise(w: &WaveformRecord, snr_db: Option<f64>, seed: u64) -> WaveformRecord {
    let mut out = w.clone();
    let Some(snr) = snr_db.filter(|s| s.is_finite()) else {
        return out;
    };
    let n = w.len();
    if n == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ratio = 10f64.powf(snr / 10.0);
    for ch in out.channels_mut() {
        for p in 0..3 {
            let power = ch.row(p).iter().map(|x| x * x).sum::<f64>() / n as f64;
            let sigma = (power / ratio).sqrt();
            if sigma == 0.0 {
                continue;
            }
            let dist = Normal::new(0.0, sigma).expect("finite sigma");
            for j in 0..n {
                ch[(p, j)] += dist.sample(&mut rng);
            }
        }
    }
    out
}

/// Marks remote samples as lost, independently with probability `loss_prob`.
pub fn drop_samples(w: &WaveformRecord, loss_prob: f64, seed: u64) -> WaveformRecord {
    let mut out = w.clone();
    if loss_prob <= 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in out.missing.iter_mut() {
        *m = rng.random::<f64>() < loss_prob;
    }
    out
}

/// Simulation followed by the scenario's own noise and packet-loss settings.
pub fn simulate_measured(sc: &GridScenario, opts: &SimOptions) -> Result<WaveformRecord> {
    let clean = simulate_with(sc, opts)?;
    let noisy = add_noise(&clean, sc.noise_snr_db, sc.seed);
    Ok(match sc.packet_loss_prob {
        Some(p) => drop_samples(&noisy, p, sc.seed ^ 0x9e37_79b9_7f4a_7c15),
        None => noisy,
    })
}
