//! Time integration of the drive and decay phases.
//!
//! The workhorse is the Dormand–Prince 5(4) embedded pair with its
//! fourth-order continuous extension, so states land exactly on the output
//! grid regardless of the adaptive step sequence. A fixed-step classical RK4
//! is kept as an independent reference.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cloud::Cloud;
use crate::error::{Error, Result};
use crate::kernel::{build_coupling, AtomicState, CouplingMatrix, DriveParams, MeanFieldSystem, STATE_EPSILON};

/// Autonomous first-order system `dy/dt = f(y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, y: &[f64], dy: &mut [f64]);

    /// Physical-validity check applied to every accepted step and sample.
    /// Returns the offending owner index and a description.
    fn check(&self, _y: &[f64]) -> Option<(usize, String)> {
        None
    }

    /// Maps a state component to the entity (atom) that owns it.
    fn owner(&self, component: usize) -> usize {
        component
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl std::ops::AddAssign for StepStats {
    fn add_assign(&mut self, o: Self) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.rhs_evals += o.rhs_evals;
    }
}

/// States sampled at requested times.
#[derive(Clone, Debug)]
pub struct Sampled {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: StepStats,
}

const MIN_STEP: f64 = 1e-12;

// Dormand–Prince 5(4) tableau. The system is autonomous, so the nodes c_i
// never appear.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Fifth minus fourth order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output (Hairer & Wanner, DOPRI5).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrates `system` from `y0` at `t = 0` up to `t_end`, returning the
/// state at each of `sample_times` (ascending, within `[0, t_end]`).
///
/// A sample at `t_end` is the final accepted step itself, not an
/// interpolant, so chained phases join bit-exactly.
pub fn dopri5<S: OdeSystem + ?Sized>(
    system: &S,
    y0: &[f64],
    t_end: f64,
    sample_times: &[f64],
    tol: Tolerances,
) -> Result<Sampled> {
    let dim = system.dim();
    assert_eq!(y0.len(), dim);
    let mut stats = StepStats::default();
    let mut out = Sampled {
        times: Vec::with_capacity(sample_times.len()),
        states: Vec::with_capacity(sample_times.len()),
        stats,
    };
    let mut next_sample = 0;
    let push = |out: &mut Sampled, t: f64, y: Vec<f64>| -> Result<()> {
        if let Some((atom, reason)) = system.check(&y) {
            return Err(Error::Diverged { t, atom, reason });
        }
        out.times.push(t);
        out.states.push(y);
        Ok(())
    };
    while next_sample < sample_times.len() && sample_times[next_sample] <= 0.0 {
        push(&mut out, sample_times[next_sample], y0.to_vec())?;
        next_sample += 1;
    }

    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    system.rhs(&y, &mut k1);
    stats.rhs_evals += 1;
    if t_end <= 0.0 {
        out.stats = stats;
        return Ok(out);
    }

    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut ytmp = vec![0.0; dim];
    let mut y1 = vec![0.0; dim];

    let mut h = initial_step(system, &y, &k1, tol, &mut stats).min(t_end);
    let mut t = 0.0;
    let mut last_rejected = false;

    while t < t_end {
        let mut last = false;
        if t + h >= t_end || t + 1.01 * h >= t_end {
            h = t_end - t;
            last = true;
        }
        if h < MIN_STEP {
            let worst = worst_component(&y, &k1);
            return Err(Error::Stiffness {
                t,
                dt: h,
                atom: system.owner(worst),
                neighbour: None,
            });
        }

        for i in 0..dim {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        system.rhs(&ytmp, &mut k2);
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        system.rhs(&ytmp, &mut k3);
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        system.rhs(&ytmp, &mut k4);
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        system.rhs(&ytmp, &mut k5);
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        system.rhs(&ytmp, &mut k6);
        for i in 0..dim {
            y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        system.rhs(&y1, &mut k7);
        stats.rhs_evals += 6;

        // Max-norm of the scaled local error estimate.
        let mut err: f64 = 0.0;
        let mut worst = 0;
        for i in 0..dim {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = tol.abs + tol.rel * y[i].abs().max(y1[i].abs());
            let r = (e / sc).abs();
            if r > err || r.is_nan() {
                err = r;
                worst = i;
            }
        }
        if !err.is_finite() {
            err = f64::INFINITY;
        }

        if err <= 1.0 {
            stats.accepted += 1;
            let t_new = if last { t_end } else { t + h };
            if let Some((atom, reason)) = system.check(&y1) {
                return Err(Error::Diverged { t: t_new, atom, reason });
            }
            // Samples inside (t, t_new].
            let mut dense: Option<Vec<Vec<f64>>> = None;
            while next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                let ts = sample_times[next_sample];
                if ts == t_new || (last && ts >= t_end) {
                    push(&mut out, ts, y1.clone())?;
                } else {
                    let coeffs = dense.get_or_insert_with(|| {
                        dense_coefficients(h, &y, &y1, [&k1, &k3, &k4, &k5, &k6, &k7])
                    });
                    let theta = (ts - t) / h;
                    push(&mut out, ts, interpolate(coeffs, theta))?;
                }
                next_sample += 1;
            }
            std::mem::swap(&mut y, &mut y1);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= if last_rejected { fac.min(1.0) } else { fac };
            last_rejected = false;
        } else {
            stats.rejected += 1;
            last_rejected = true;
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= fac;
            if h < MIN_STEP {
                return Err(Error::Stiffness {
                    t,
                    dt: h,
                    atom: system.owner(worst),
                    neighbour: None,
                });
            }
        }
    }
    // Any samples beyond t_end (rounding) get the final state.
    while next_sample < sample_times.len() {
        push(&mut out, sample_times[next_sample], y.clone())?;
        next_sample += 1;
    }
    out.stats = stats;
    Ok(out)
}

fn worst_component(y: &[f64], dy: &[f64]) -> usize {
    y.iter()
        .zip(dy)
        .enumerate()
        .max_by(|a, b| (a.1 .1.abs()).total_cmp(&b.1 .1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn dense_coefficients(h: f64, y0: &[f64], y1: &[f64], k: [&Vec<f64>; 6]) -> Vec<Vec<f64>> {
    let [k1, k3, k4, k5, k6, k7] = k;
    let dim = y0.len();
    let mut r1 = vec![0.0; dim];
    let mut r2 = vec![0.0; dim];
    let mut r3 = vec![0.0; dim];
    let mut r4 = vec![0.0; dim];
    let mut r5 = vec![0.0; dim];
    for i in 0..dim {
        let ydiff = y1[i] - y0[i];
        let bspl = h * k1[i] - ydiff;
        r1[i] = y0[i];
        r2[i] = ydiff;
        r3[i] = bspl;
        r4[i] = ydiff - h * k7[i] - bspl;
        r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    vec![r1, r2, r3, r4, r5]
}

fn interpolate(c: &[Vec<f64>], theta: f64) -> Vec<f64> {
    let theta1 = 1.0 - theta;
    (0..c[0].len())
        .map(|i| c[0][i] + theta * (c[1][i] + theta1 * (c[2][i] + theta * (c[3][i] + theta1 * c[4][i]))))
        .collect()
}

/// Starting step from the usual two-evaluation heuristic.
fn initial_step<S: OdeSystem + ?Sized>(system: &S, y0: &[f64], f0: &[f64], tol: Tolerances, stats: &mut StepStats) -> f64 {
    let dim = y0.len();
    let rms = |v: &dyn Fn(usize) -> f64| -> f64 {
        ((0..dim).map(|i| v(i).powi(2)).sum::<f64>() / dim.max(1) as f64).sqrt()
    };
    let sc = |i: usize| tol.abs + tol.rel * y0[i].abs();
    let d0 = rms(&|i| y0[i] / sc(i));
    let d1 = rms(&|i| f0[i] / sc(i));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = (0..dim).map(|i| y0[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; dim];
    system.rhs(&y1, &mut f1);
    stats.rhs_evals += 1;
    let d2 = rms(&|i| (f1[i] - f0[i]) / sc(i)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

/// Classical fixed-step RK4 from `t = 0` to `t_end`; the final step is
/// shortened to land on `t_end`.
pub fn rk4<S: OdeSystem + ?Sized>(system: &S, y0: &[f64], t_end: f64, dt: f64) -> Vec<f64> {
    let dim = system.dim();
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    let steps = (t_end / dt).round() as usize;
    let mut t = 0.0;
    for s in 0..steps.max(1) {
        let h = if s + 1 == steps.max(1) { t_end - t } else { dt };
        if h <= 0.0 {
            break;
        }
        system.rhs(&y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        system.rhs(&tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        system.rhs(&tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        system.rhs(&tmp, &mut k4);
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
    }
    y
}

/// Drive/decay protocol timing and integrator tolerances, in units of `1/Γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    #[serde(default = "defaults::t_drive")]
    pub t_drive: f64,
    #[serde(default = "defaults::t_decay")]
    pub t_decay: f64,
    #[serde(default = "defaults::sample_dt")]
    pub sample_dt: f64,
    /// Grid spacing for the drive phase; `None` reuses `sample_dt`.
    #[serde(default)]
    pub drive_sample_dt: Option<f64>,
    #[serde(default = "defaults::tol")]
    pub abs_tol: f64,
    #[serde(default = "defaults::tol")]
    pub rel_tol: f64,
}

mod defaults {
    pub fn t_drive() -> f64 {
        10.0
    }
    pub fn t_decay() -> f64 {
        10.0
    }
    pub fn sample_dt() -> f64 {
        0.01
    }
    pub fn tol() -> f64 {
        1e-8
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            t_drive: defaults::t_drive(),
            t_decay: defaults::t_decay(),
            sample_dt: defaults::sample_dt(),
            drive_sample_dt: None,
            abs_tol: defaults::tol(),
            rel_tol: defaults::tol(),
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        if !(self.t_drive >= 0.0) || !finite(self.t_drive) {
            return Err(Error::invalid("t_drive", "must be finite and >= 0"));
        }
        if !(self.t_decay > 0.0) || !finite(self.t_decay) {
            return Err(Error::invalid("t_decay", "must be finite and > 0"));
        }
        if !(self.sample_dt > 0.0) || !finite(self.sample_dt) {
            return Err(Error::invalid("sample_dt", "must be finite and > 0"));
        }
        if let Some(d) = self.drive_sample_dt {
            if !(d > 0.0) || !finite(d) {
                return Err(Error::invalid("drive_sample_dt", "must be finite and > 0"));
            }
        }
        for (name, v) in [("abs_tol", self.abs_tol), ("rel_tol", self.rel_tol)] {
            if !(v > 0.0 && v <= 1e-2) {
                return Err(Error::invalid(name, format!("must lie in (0, 1e-2], got {v}")));
            }
        }
        Ok(())
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            abs: self.abs_tol,
            rel: self.rel_tol,
        }
    }
}

/// `0, dt, 2dt, ...` strictly below `t_end`, then `t_end` itself.
pub fn uniform_grid(t_end: f64, dt: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * dt;
        if t >= t_end - 1e-9 * dt {
            break;
        }
        grid.push(t);
        k += 1;
    }
    grid.push(t_end);
    grid
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Drive,
    Decay,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Drive => "drive",
            Phase::Decay => "decay",
        }
    }
}

/// Sampled states of one phase. Times are relative to the phase start.
#[derive(Clone, Debug, Default)]
pub struct Segment {
    pub times: Vec<f64>,
    pub states: Vec<AtomicState>,
    pub stats: StepStats,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// A full drive-then-decay run.
///
/// `drive.times` run from 0 to `t_drive`; `decay.times` are measured from the
/// switch-off, so `decay.states[0]` is the steady state (identical to the
/// last drive sample).
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub drive: Segment,
    pub decay: Segment,
    /// Decay samples where the total excited population increased.
    pub monotonicity_violations: usize,
}

impl Trajectory {
    /// Index of the steady-state sample within the drive segment.
    pub fn switch_off_index(&self) -> usize {
        self.drive.len() - 1
    }

    pub fn steady_state(&self) -> &AtomicState {
        &self.decay.states[0]
    }

    pub fn stats(&self) -> StepStats {
        let mut s = self.drive.stats;
        s += self.decay.stats;
        s
    }

    /// Every sample in protocol order, as `(phase, time within phase, state)`.
    pub fn samples(&self) -> impl Iterator<Item = (Phase, f64, &AtomicState)> {
        let drive = self.drive.times.iter().zip(&self.drive.states).map(|(t, s)| (Phase::Drive, *t, s));
        let decay = self.decay.times.iter().zip(&self.decay.states).map(|(t, s)| (Phase::Decay, *t, s));
        drive.chain(decay)
    }

    /// Writes `phase,t,atom_index,re_beta,im_beta,z` for every sample.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["phase", "t", "atom_index", "re_beta", "im_beta", "z"])?;
        for (phase, t, state) in self.samples() {
            for (i, (b, z)) in state.beta.iter().zip(&state.z).enumerate() {
                w.write_record([
                    phase.as_str().to_string(),
                    format!("{t:.16e}"),
                    i.to_string(),
                    format!("{:.16e}", b.re),
                    format!("{:.16e}", b.im),
                    format!("{z:.16e}"),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrates one phase of the protocol from `initial` over `t_span`,
/// sampling every `sample_dt`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_phase(
    initial: &AtomicState,
    coupling: &CouplingMatrix,
    drive: &DriveParams,
    cloud: &Cloud,
    drive_on: bool,
    t_span: f64,
    sample_dt: f64,
    tol: Tolerances,
) -> Result<Segment> {
    if initial.n_atoms() != cloud.n_atoms() {
        return Err(Error::DimensionMismatch {
            expected: cloud.n_atoms(),
            actual: initial.n_atoms(),
        });
    }
    if let Some((atom, reason)) = initial.find_violation(STATE_EPSILON) {
        return Err(Error::Diverged { t: 0.0, atom, reason });
    }
    let system = MeanFieldSystem::new(coupling, drive, cloud, drive_on)?;
    let grid = uniform_grid(t_span, sample_dt);
    let sampled = dopri5(&system, &initial.to_flat(), t_span, &grid, tol).map_err(|e| match e {
        Error::Stiffness { t, dt, atom, .. } => Error::Stiffness {
            t,
            dt,
            atom,
            neighbour: cloud.nearest_neighbour(atom),
        },
        other => other,
    })?;
    Ok(Segment {
        times: sampled.times,
        states: sampled.states.iter().map(|y| AtomicState::from_flat(y)).collect(),
        stats: sampled.stats,
    })
}

/// Ground state → drive for `t_drive` → instantaneous switch-off → decay
/// for `t_decay`.
pub fn run_drive_decay(cloud: &Cloud, drive: &DriveParams, schedule: &Schedule) -> Result<Trajectory> {
    let coupling = build_coupling(cloud);
    run_drive_decay_with(cloud, &coupling, drive, schedule)
}

/// [`run_drive_decay`] with a prebuilt coupling matrix.
pub fn run_drive_decay_with(
    cloud: &Cloud,
    coupling: &CouplingMatrix,
    drive: &DriveParams,
    schedule: &Schedule,
) -> Result<Trajectory> {
    schedule.validate()?;
    drive.validate()?;
    let tol = schedule.tolerances();
    let ground = AtomicState::ground(cloud.n_atoms());
    let drive_dt = schedule.drive_sample_dt.unwrap_or(schedule.sample_dt);
    let drive_seg = integrate_phase(&ground, coupling, drive, cloud, true, schedule.t_drive, drive_dt, tol)?;
    let steady = drive_seg.states.last().cloned().unwrap_or(ground);
    let decay_seg = integrate_phase(&steady, coupling, drive, cloud, false, schedule.t_decay, schedule.sample_dt, tol)?;
    let monotonicity_violations = count_population_increases(&decay_seg);
    Ok(Trajectory {
        drive: drive_seg,
        decay: decay_seg,
        monotonicity_violations,
    })
}

fn count_population_increases(seg: &Segment) -> usize {
    let ne: Vec<f64> = seg.states.iter().map(crate::observables::excited_population).collect();
    let scale = ne.first().copied().unwrap_or(0.0).max(1e-300);
    ne.windows(2).filter(|w| w[1] > w[0] + 1e-10 * scale).count()
}
