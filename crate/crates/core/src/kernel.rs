//! Scalar Green's-function coupling and the nonlinear mean-field equations.
//!
//! In units `Γ = k_l = 1` each atom carries a coherence `β_n` and an
//! inversion `z_n` evolving as
//!
//! ```text
//! dβ_n/dt = (iΔ - 1/2) β_n + i W_n z_n
//! dz_n/dt = -(1 + z_n) + 4 Im(β_n^* W_n)
//! W_n     = (Ω/2) χ_n - i Σ_{m≠n} g_nm β_m,    g_nm = e^{i r_nm} / (2i r_nm)
//! ```
//!
//! The sign of the `Im` term is the one for which a single driven atom
//! relaxes to `z = -1/(1+s)`; [`single_atom_steady_state`] is the fixed point
//! the tests hold [`rhs`] to.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cloud::Cloud;
use crate::error::{Error, Result};
use crate::integrator::OdeSystem;

/// Rows per parallel task in the coupling product; below this the product
/// runs sequentially.
#[cfg(feature = "parallel")]
const PAR_MIN_ATOMS: usize = 128;

/// Drive amplitude and geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveParams {
    /// Ω in units of Γ.
    pub rabi: f64,
    /// Δ = ω_l - ω_0 in units of Γ.
    pub detuning: f64,
    /// Imprint the plane-wave phase `e^{i z_n}` of a beam travelling along +z.
    #[serde(default = "default_true")]
    pub drive_phase_enabled: bool,
    /// Gaussian amplitude envelope `exp(-(x^2+y^2)/w^2)`; `None` is a plane wave.
    #[serde(default)]
    pub beam_waist: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl DriveParams {
    pub fn new(rabi: f64, detuning: f64) -> Self {
        DriveParams {
            rabi,
            detuning,
            drive_phase_enabled: true,
            beam_waist: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rabi >= 0.0) || !self.rabi.is_finite() {
            return Err(Error::invalid("rabi", format!("must be finite and >= 0, got {}", self.rabi)));
        }
        if !self.detuning.is_finite() {
            return Err(Error::invalid("detuning", "must be finite"));
        }
        if let Some(w) = self.beam_waist {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::invalid("beam_waist", format!("must be positive, got {w}")));
            }
        }
        Ok(())
    }

    /// Drive term `d_n = (Ω/2) χ_n` at a position.
    pub fn amplitude_at(&self, position: &[f64; 3]) -> Complex64 {
        let mut chi = Complex64::new(1.0, 0.0);
        if self.drive_phase_enabled {
            chi = Complex64::from_polar(1.0, position[2]);
        }
        if let Some(w) = self.beam_waist {
            let rho_sq = position[0] * position[0] + position[1] * position[1];
            chi *= (-rho_sq / (w * w)).exp();
        }
        chi * (0.5 * self.rabi)
    }

    pub fn amplitudes(&self, cloud: &Cloud) -> Vec<Complex64> {
        cloud.positions().iter().map(|p| self.amplitude_at(p)).collect()
    }
}

/// Dense symmetric `N x N` coupling `g_nm`, zero on the diagonal, stored as
/// separate real and imaginary row-major planes.
#[derive(Clone, Debug)]
pub struct CouplingMatrix {
    n: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// `g = e^{ir}/(2ir) = (sin r - i cos r) / (2r)`.
#[inline]
pub fn green(r: f64) -> Complex64 {
    let (s, c) = r.sin_cos();
    Complex64::new(s, -c) / (2.0 * r)
}

pub fn build_coupling(cloud: &Cloud) -> CouplingMatrix {
    let n = cloud.n_atoms();
    let rows = crate::par::map_indices(n, |i| {
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for j in 0..n {
            if j != i {
                let g = green(cloud.distance(i, j));
                re[j] = g.re;
                im[j] = g.im;
            }
        }
        (re, im)
    });
    let mut re = Vec::with_capacity(n * n);
    let mut im = Vec::with_capacity(n * n);
    for (r, i) in rows {
        re.extend_from_slice(&r);
        im.extend_from_slice(&i);
    }
    CouplingMatrix { n, re, im }
}

impl CouplingMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        let k = m * self.n + n;
        Complex64::new(self.re[k], self.im[k])
    }

    /// `out_n = Σ_m g_nm β_m`, with `β` given as real and imaginary slices.
    ///
    /// Dispatches to the parallel path for large `N` when the `parallel`
    /// feature is on. Both paths give bit-identical output.
    pub fn apply(&self, beta_re: &[f64], beta_im: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
        #[cfg(feature = "parallel")]
        if self.n >= PAR_MIN_ATOMS {
            self.apply_parallel(beta_re, beta_im, out_re, out_im);
            return;
        }
        self.apply_sequential(beta_re, beta_im, out_re, out_im);
    }

    pub fn apply_sequential(&self, beta_re: &[f64], beta_im: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
        let n = self.n;
        assert!(beta_re.len() == n && beta_im.len() == n && out_re.len() == n && out_im.len() == n);
        for (row, (or, oi)) in out_re.iter_mut().zip(out_im.iter_mut()).enumerate() {
            let (sr, si) = self.row_dot(row, beta_re, beta_im);
            *or = sr;
            *oi = si;
        }
    }

    #[cfg(feature = "parallel")]
    pub fn apply_parallel(&self, beta_re: &[f64], beta_im: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
        use rayon::prelude::*;
        let n = self.n;
        assert!(beta_re.len() == n && beta_im.len() == n && out_re.len() == n && out_im.len() == n);
        out_re
            .par_iter_mut()
            .zip(out_im.par_iter_mut())
            .enumerate()
            .with_min_len(16)
            .for_each(|(row, (or, oi))| {
                let (sr, si) = self.row_dot(row, beta_re, beta_im);
                *or = sr;
                *oi = si;
            });
    }

    /// One row of the product. Four interleaved accumulators in a fixed
    /// order, combined pairwise at the end.
    #[inline]
    fn row_dot(&self, row: usize, br: &[f64], bi: &[f64]) -> (f64, f64) {
        let n = self.n;
        let gr = &self.re[row * n..(row + 1) * n];
        let gi = &self.im[row * n..(row + 1) * n];
        let mut acc_re = [0.0f64; 4];
        let mut acc_im = [0.0f64; 4];
        let chunks = n / 4;
        for c in 0..chunks {
            let k = 4 * c;
            for l in 0..4 {
                let (a, b, x, y) = (gr[k + l], gi[k + l], br[k + l], bi[k + l]);
                acc_re[l] += a * x - b * y;
                acc_im[l] += a * y + b * x;
            }
        }
        for k in 4 * chunks..n {
            let (a, b, x, y) = (gr[k], gi[k], br[k], bi[k]);
            acc_re[0] += a * x - b * y;
            acc_im[0] += a * y + b * x;
        }
        (
            (acc_re[0] + acc_re[1]) + (acc_re[2] + acc_re[3]),
            (acc_im[0] + acc_im[1]) + (acc_im[2] + acc_im[3]),
        )
    }
}

/// Per-atom coherences and inversions.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicState {
    pub beta: Vec<Complex64>,
    pub z: Vec<f64>,
}

/// Slack allowed on the Bloch-ball and inversion bounds.
pub const STATE_EPSILON: f64 = 1e-6;

impl AtomicState {
    /// All atoms in the ground state: `β = 0`, `z = -1`.
    pub fn ground(n: usize) -> Self {
        AtomicState {
            beta: vec![Complex64::new(0.0, 0.0); n],
            z: vec![-1.0; n],
        }
    }

    pub fn new(beta: Vec<Complex64>, z: Vec<f64>) -> Result<Self> {
        if beta.len() != z.len() {
            return Err(Error::DimensionMismatch {
                expected: beta.len(),
                actual: z.len(),
            });
        }
        Ok(AtomicState { beta, z })
    }

    pub fn n_atoms(&self) -> usize {
        self.z.len()
    }

    /// Layout used by the integrator: `[Re β..., Im β..., z...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(3 * self.n_atoms());
        y.extend(self.beta.iter().map(|b| b.re));
        y.extend(self.beta.iter().map(|b| b.im));
        y.extend_from_slice(&self.z);
        y
    }

    pub fn from_flat(y: &[f64]) -> Self {
        let n = y.len() / 3;
        AtomicState {
            beta: (0..n).map(|i| Complex64::new(y[i], y[n + i])).collect(),
            z: y[2 * n..3 * n].to_vec(),
        }
    }

    /// First atom violating `-1-ε ≤ z ≤ 1+ε`, `4|β|^2 + z^2 ≤ 1+ε` or finiteness.
    pub fn find_violation(&self, eps: f64) -> Option<(usize, String)> {
        find_flat_violation(&self.to_flat(), eps)
    }

    pub fn max_abs_diff(&self, other: &AtomicState) -> f64 {
        let b = self
            .beta
            .iter()
            .zip(&other.beta)
            .map(|(a, b)| (a.re - b.re).abs().max((a.im - b.im).abs()));
        let z = self.z.iter().zip(&other.z).map(|(a, b)| (a - b).abs());
        b.chain(z).fold(0.0, f64::max)
    }
}

pub(crate) fn find_flat_violation(y: &[f64], eps: f64) -> Option<(usize, String)> {
    let n = y.len() / 3;
    for i in 0..n {
        let (br, bi, z) = (y[i], y[n + i], y[2 * n + i]);
        if !(br.is_finite() && bi.is_finite() && z.is_finite()) {
            return Some((i, "has a non-finite component".into()));
        }
        if z < -1.0 - eps || z > 1.0 + eps {
            return Some((i, format!("inversion z = {z} left [-1, 1]")));
        }
        let ball = 4.0 * (br * br + bi * bi) + z * z;
        if ball > 1.0 + eps {
            return Some((i, format!("left the Bloch ball: 4|β|^2 + z^2 = {ball}")));
        }
    }
    None
}

/// The mean-field equations for one phase of the protocol.
pub struct MeanFieldSystem<'a> {
    coupling: &'a CouplingMatrix,
    drive: Vec<Complex64>,
    detuning: f64,
}

impl<'a> MeanFieldSystem<'a> {
    pub fn new(coupling: &'a CouplingMatrix, drive: &DriveParams, cloud: &Cloud, drive_on: bool) -> Result<Self> {
        if coupling.dim() != cloud.n_atoms() {
            return Err(Error::DimensionMismatch {
                expected: cloud.n_atoms(),
                actual: coupling.dim(),
            });
        }
        drive.validate()?;
        let amplitudes = if drive_on {
            drive.amplitudes(cloud)
        } else {
            vec![Complex64::new(0.0, 0.0); cloud.n_atoms()]
        };
        Ok(MeanFieldSystem {
            coupling,
            drive: amplitudes,
            detuning: drive.detuning,
        })
    }

    /// Writes `W` into `(w_re, w_im)`.
    fn field(&self, y: &[f64], w_re: &mut [f64], w_im: &mut [f64]) {
        let n = self.coupling.dim();
        let (br, rest) = y.split_at(n);
        let bi = &rest[..n];
        self.coupling.apply(br, bi, w_re, w_im);
        // W = d - i (Gβ)
        for k in 0..n {
            let (sr, si) = (w_re[k], w_im[k]);
            w_re[k] = self.drive[k].re + si;
            w_im[k] = self.drive[k].im - sr;
        }
    }
}

impl OdeSystem for MeanFieldSystem<'_> {
    fn dim(&self) -> usize {
        3 * self.coupling.dim()
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.coupling.dim();
        let (dbr, rest) = dy.split_at_mut(n);
        let (dbi, dz) = rest.split_at_mut(n);
        // Stage W in the β-derivative slots, then overwrite in place.
        self.field(y, dbr, dbi);
        let delta = self.detuning;
        for k in 0..n {
            let (wr, wi) = (dbr[k], dbi[k]);
            let (br, bi, z) = (y[k], y[n + k], y[2 * n + k]);
            dbr[k] = -delta * bi - 0.5 * br - wi * z;
            dbi[k] = delta * br - 0.5 * bi + wr * z;
            dz[k] = -(1.0 + z) + 4.0 * (br * wi - bi * wr);
        }
    }

    fn check(&self, y: &[f64]) -> Option<(usize, String)> {
        find_flat_violation(y, STATE_EPSILON)
    }

    fn owner(&self, component: usize) -> usize {
        component % self.coupling.dim()
    }
}

/// `W_n` for every atom.
pub fn local_field(
    state: &AtomicState,
    coupling: &CouplingMatrix,
    drive: &DriveParams,
    cloud: &Cloud,
    drive_on: bool,
) -> Result<Vec<Complex64>> {
    check_dims(state, coupling)?;
    let system = MeanFieldSystem::new(coupling, drive, cloud, drive_on)?;
    let n = state.n_atoms();
    let y = state.to_flat();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    system.field(&y, &mut wr, &mut wi);
    Ok(wr.into_iter().zip(wi).map(|(r, i)| Complex64::new(r, i)).collect())
}

/// Time derivative of the state.
pub fn rhs(
    state: &AtomicState,
    coupling: &CouplingMatrix,
    drive: &DriveParams,
    cloud: &Cloud,
    drive_on: bool,
) -> Result<AtomicState> {
    check_dims(state, coupling)?;
    let system = MeanFieldSystem::new(coupling, drive, cloud, drive_on)?;
    let y = state.to_flat();
    let mut dy = vec![0.0; y.len()];
    system.rhs(&y, &mut dy);
    Ok(AtomicState::from_flat(&dy))
}

fn check_dims(state: &AtomicState, coupling: &CouplingMatrix) -> Result<()> {
    if state.n_atoms() != coupling.dim() || state.beta.len() != state.z.len() {
        return Err(Error::DimensionMismatch {
            expected: coupling.dim(),
            actual: state.n_atoms(),
        });
    }
    Ok(())
}

/// Analytic steady state of one driven atom, `(β_ss, z_ss)`.
///
/// `s = (Ω^2/2)/(Δ^2 + 1/4)`, `z_ss = -1/(1+s)`,
/// `β_ss = (Ω/2) z_ss (i/2 - Δ)/(Δ^2 + 1/4)`.
pub fn single_atom_steady_state(rabi: f64, detuning: f64) -> (Complex64, f64) {
    let denom = detuning * detuning + 0.25;
    let s = 0.5 * rabi * rabi / denom;
    let z = -1.0 / (1.0 + s);
    let beta = Complex64::new(-detuning, 0.5) * (0.5 * rabi * z / denom);
    (beta, z)
}

/// Ω/Γ = sqrt(s/2 + Δ^2), the conversion used to label drive strength by
/// saturation parameter.
pub fn rabi_from_saturation(s: f64, detuning: f64) -> Result<f64> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::invalid("saturation", format!("must be finite and >= 0, got {s}")));
    }
    Ok((0.5 * s + detuning * detuning).sqrt())
}
