//! Global observables of a sampled state and their time series.
//!
//! * `N_e = Σ (1 + z_n)/2`, the excited population.
//! * `Λ = Σ |β_n|^2`.
//! * `P_in = Σ [(1 + z_n)/2 - |β_n|^2]`, the inelastic power.
//! * `I_el(n̂) = |Σ_j β_j e^{-i n̂·r_j}|^2`, the elastic intensity along `n̂`.
//! * `P_el = (1/4π) ∮ I_el dΩ`, normalized so its diagonal part equals `Λ`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cloud::Cloud;
use crate::decay::DecaySeries;
use crate::error::{Error, Result};
use crate::integrator::{Phase, Trajectory};
use crate::kernel::AtomicState;
use crate::quadrature::{gauss_legendre, SphereQuadrature};

/// A detection direction; `theta` is measured from the drive axis `+z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl Direction {
    /// Canonical form with `theta ∈ [0, π]`, `phi ∈ [0, 2π)`.
    ///
    /// Polar angles past `π` wrap through the `-z` pole onto the opposite
    /// azimuth, so `θ = 2π` is the forward direction.
    pub fn new(theta: f64, phi: f64) -> Self {
        let tau = 2.0 * PI;
        let mut t = theta.rem_euclid(tau);
        let mut p = phi;
        if t > PI {
            t = tau - t;
            p += PI;
        }
        let mut p = p.rem_euclid(tau);
        if p >= tau {
            p = 0.0;
        }
        Direction { theta: t, phi: p }
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    /// `"forward"`, `"backward"` or `None` for the on-axis directions.
    pub fn axis_label(&self) -> Option<&'static str> {
        if self.theta == 0.0 {
            Some("forward")
        } else if self.theta == PI {
            Some("backward")
        } else {
            None
        }
    }
}

/// Point detector, or a cone average over `cone_sr` steradians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub direction: Direction,
    pub cone_sr: Option<f64>,
}

impl Detector {
    pub fn point(direction: Direction) -> Self {
        Detector { direction, cone_sr: None }
    }

    /// Directions and weights (summing to 1) sampling the detector.
    pub fn samples(&self) -> Vec<(f64, [f64; 3])> {
        let n = self.direction.unit_vector();
        let Some(sr) = self.cone_sr.filter(|s| *s > 0.0) else {
            return vec![(1.0, n)];
        };
        // Cap of solid angle sr: cos α = 1 - sr/2π.
        let cos_alpha = (1.0 - sr / (2.0 * PI)).max(-1.0);
        let (u, wu) = gauss_legendre(4);
        let n_psi = 8;
        let (e1, e2) = orthonormal_frame(n);
        let mut out = Vec::with_capacity(u.len() * n_psi);
        let half = 0.5 * (1.0 - cos_alpha);
        for (ui, wi) in u.iter().zip(&wu) {
            let c = cos_alpha + half * (ui + 1.0);
            let s = (1.0 - c * c).max(0.0).sqrt();
            for k in 0..n_psi {
                let psi = 2.0 * PI * k as f64 / n_psi as f64;
                let (sp, cp) = psi.sin_cos();
                let v = [0, 1, 2].map(|a| c * n[a] + s * (cp * e1[a] + sp * e2[a]));
                out.push((wi / (2.0 * n_psi as f64), v));
            }
        }
        out
    }
}

fn orthonormal_frame(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if n[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let e1 = cross(helper, n);
    let norm = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    let e1 = e1.map(|v| v / norm);
    (e1, cross(n, e1))
}

pub fn excited_population(state: &AtomicState) -> f64 {
    state.z.iter().map(|z| 0.5 * (z + 1.0)).sum()
}

pub fn coherence_sum(state: &AtomicState) -> f64 {
    state.beta.iter().map(|b| b.norm_sqr()).sum()
}

pub fn inelastic_power(state: &AtomicState) -> f64 {
    state
        .beta
        .iter()
        .zip(&state.z)
        .map(|(b, z)| 0.5 * (1.0 + z) - b.norm_sqr())
        .sum()
}

fn amplitude_along(state: &AtomicState, cloud: &Cloud, n: &[f64; 3]) -> Complex64 {
    state
        .beta
        .iter()
        .zip(cloud.positions())
        .map(|(b, r)| b * Complex64::from_polar(1.0, -(n[0] * r[0] + n[1] * r[1] + n[2] * r[2])))
        .sum()
}

/// `|Σ_j β_j e^{-i n̂·r_j}|^2`.
pub fn elastic_intensity(state: &AtomicState, cloud: &Cloud, dir: &Direction) -> f64 {
    amplitude_along(state, cloud, &dir.unit_vector()).norm_sqr()
}

/// Elastic intensity averaged over a detector's acceptance.
pub fn detected_intensity(state: &AtomicState, cloud: &Cloud, detector: &Detector) -> f64 {
    detector
        .samples()
        .iter()
        .map(|(w, n)| w * amplitude_along(state, cloud, n).norm_sqr())
        .sum()
}

/// `(1/4π) Σ_q w_q I_el(n̂_q)`.
pub fn elastic_power(state: &AtomicState, cloud: &Cloud, quad: &SphereQuadrature) -> f64 {
    elastic_power_batch(&[state], cloud, quad)[0]
}

/// Nodes per parallel task in [`elastic_power_batch`].
const NODE_CHUNK: usize = 64;

/// [`elastic_power`] for many states of one cloud.
///
/// Each node's phase factors are computed once and reused for every state.
/// Node contributions are summed chunk by chunk in node order.
pub fn elastic_power_batch(states: &[&AtomicState], cloud: &Cloud, quad: &SphereQuadrature) -> Vec<f64> {
    let n = cloud.n_atoms();
    let origin = cloud.centroid();
    let rel: Vec<[f64; 3]> = cloud
        .positions()
        .iter()
        .map(|p| [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]])
        .collect();
    // β split into planes for a tight inner loop.
    let planes: Vec<(Vec<f64>, Vec<f64>)> = states
        .iter()
        .map(|s| (s.beta.iter().map(|b| b.re).collect(), s.beta.iter().map(|b| b.im).collect()))
        .collect();
    let n_chunks = quad.len().div_ceil(NODE_CHUNK);
    let partials = crate::par::map_indices(n_chunks, |c| {
        let mut acc = vec![0.0; states.len()];
        let mut pr = vec![0.0; n];
        let mut pi = vec![0.0; n];
        let lo = c * NODE_CHUNK;
        let hi = (lo + NODE_CHUNK).min(quad.len());
        for q in lo..hi {
            let u = quad.nodes()[q].unit_vector();
            for (j, r) in rel.iter().enumerate() {
                let (s, c) = (-(u[0] * r[0] + u[1] * r[1] + u[2] * r[2])).sin_cos();
                pr[j] = c;
                pi[j] = s;
            }
            let w = quad.weights()[q];
            for (a, (br, bi)) in acc.iter_mut().zip(&planes) {
                let (sr, si) = complex_dot(br, bi, &pr, &pi);
                *a += w * (sr * sr + si * si);
            }
        }
        acc
    });
    let mut total = vec![0.0; states.len()];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total.into_iter().map(|v| v / (4.0 * PI)).collect()
}

/// `Σ_j (ar_j + i ai_j)(br_j + i bi_j)` with four fixed-order lanes.
#[inline]
fn complex_dot(ar: &[f64], ai: &[f64], br: &[f64], bi: &[f64]) -> (f64, f64) {
    let mut acc_re = [0.0f64; 4];
    let mut acc_im = [0.0f64; 4];
    let lanes = ar
        .chunks_exact(4)
        .zip(ai.chunks_exact(4))
        .zip(br.chunks_exact(4).zip(bi.chunks_exact(4)));
    for ((a, b), (x, y)) in lanes {
        for l in 0..4 {
            acc_re[l] += a[l] * x[l] - b[l] * y[l];
            acc_im[l] += a[l] * y[l] + b[l] * x[l];
        }
    }
    let tail = ar.len() - ar.len() % 4;
    for k in tail..ar.len() {
        acc_re[0] += ar[k] * br[k] - ai[k] * bi[k];
        acc_im[0] += ar[k] * bi[k] + ai[k] * br[k];
    }
    (
        (acc_re[0] + acc_re[1]) + (acc_re[2] + acc_re[3]),
        (acc_im[0] + acc_im[1]) + (acc_im[2] + acc_im[3]),
    )
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Closed form of [`elastic_power`]: `Λ + Σ_{i≠j} Re(β_i^* β_j) sinc(r_ij)`.
pub fn pair_sum_rule(state: &AtomicState, cloud: &Cloud) -> f64 {
    let n = state.n_atoms();
    let mut total = coherence_sum(state);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = (state.beta[i].conj() * state.beta[j]).re;
            total += 2.0 * c * sinc(cloud.distance(i, j));
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Observable {
    #[serde(rename = "Ne")]
    Ne,
    #[serde(rename = "Lambda")]
    Lambda,
    #[serde(rename = "Pin")]
    Pin,
    #[serde(rename = "Pel")]
    Pel,
    #[serde(rename = "ratio")]
    Ratio,
    #[serde(rename = "Iel")]
    Iel,
}

impl Observable {
    pub fn label(self) -> &'static str {
        match self {
            Observable::Ne => "Ne",
            Observable::Lambda => "Lambda",
            Observable::Pin => "Pin",
            Observable::Pel => "Pel",
            Observable::Ratio => "ratio",
            Observable::Iel => "Iel",
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Identifies one series: a global observable, or `Iel` along a detector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesKey {
    pub observable: Observable,
    pub detector: Option<Detector>,
}

impl SeriesKey {
    pub fn global(observable: Observable) -> Self {
        SeriesKey { observable, detector: None }
    }

    pub fn intensity(detector: Detector) -> Self {
        SeriesKey {
            observable: Observable::Iel,
            detector: Some(detector),
        }
    }

    pub fn name(&self) -> String {
        match &self.detector {
            None => self.observable.label().to_string(),
            Some(d) => format!("{}(theta={}, phi={})", self.observable, d.direction.theta, d.direction.phi),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Series {
    pub key: SeriesKey,
    pub values: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Observables at every sample of a trajectory, in protocol order.
#[derive(Clone, Debug)]
pub struct ObservableTable {
    pub phases: Vec<Phase>,
    pub times: Vec<f64>,
    /// Index of the steady-state sample (the last drive sample).
    pub switch_off: usize,
    pub series: Vec<Series>,
}

/// Computes `N_e, Λ, P_in, P_el, P_in/P_el` and `I_el` for each detector at
/// every sample, plus each series divided by its switch-off value.
pub fn observable_series(
    traj: &Trajectory,
    cloud: &Cloud,
    detectors: &[Detector],
    quad: &SphereQuadrature,
) -> Result<ObservableTable> {
    let samples: Vec<(Phase, f64, &AtomicState)> = traj.samples().collect();
    if samples.is_empty() {
        return Err(Error::invalid("trajectory", "has no samples"));
    }
    let states: Vec<&AtomicState> = samples.iter().map(|s| s.2).collect();
    let switch_off = traj.switch_off_index();

    let ne: Vec<f64> = states.iter().map(|s| excited_population(s)).collect();
    let lambda: Vec<f64> = states.iter().map(|s| coherence_sum(s)).collect();
    let pin: Vec<f64> = states.iter().map(|s| inelastic_power(s)).collect();
    let pel = elastic_power_batch(&states, cloud, quad);
    let ratio: Vec<f64> = pin.iter().zip(&pel).map(|(a, b)| a / b).collect();

    let mut raw = vec![
        (SeriesKey::global(Observable::Ne), ne),
        (SeriesKey::global(Observable::Lambda), lambda),
        (SeriesKey::global(Observable::Pin), pin),
        (SeriesKey::global(Observable::Pel), pel),
        (SeriesKey::global(Observable::Ratio), ratio),
    ];
    for det in detectors {
        let values = crate::par::map_indices(states.len(), |k| detected_intensity(states[k], cloud, det));
        raw.push((SeriesKey::intensity(*det), values));
    }

    let series = raw
        .into_iter()
        .map(|(key, values)| {
            let reference = values[switch_off];
            if !(reference.is_finite() && reference != 0.0) {
                return Err(Error::Normalization {
                    series: key.name(),
                    value: reference,
                });
            }
            let normalized = values.iter().map(|v| v / reference).collect();
            Ok(Series { key, values, normalized })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ObservableTable {
        phases: samples.iter().map(|s| s.0).collect(),
        times: samples.iter().map(|s| s.1).collect(),
        switch_off,
        series,
    })
}

impl ObservableTable {
    pub fn get(&self, key: &SeriesKey) -> Option<&Series> {
        self.series.iter().find(|s| s.key == *key)
    }

    /// The normalized post-switch-off part of a series, time measured from
    /// the switch-off.
    pub fn decay_series(&self, series: &Series) -> DecaySeries {
        let start = self.switch_off + 1;
        let mut times = vec![0.0];
        let mut values = vec![1.0];
        // The first decay sample duplicates the steady state.
        for k in (start + 1)..self.times.len() {
            times.push(self.times[k]);
            values.push(series.normalized[k]);
        }
        DecaySeries {
            label: series.key.name(),
            times,
            values,
        }
    }

    /// Writes `t,phase,observable,theta,phi,value,value_normalized`. Drive
    /// times are absolute, decay times are measured from the switch-off.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "phase", "observable", "theta", "phi", "value", "value_normalized"])?;
        for s in &self.series {
            let (theta, phi) = match &s.key.detector {
                Some(d) => (format!("{:.16e}", d.direction.theta), format!("{:.16e}", d.direction.phi)),
                None => (String::new(), String::new()),
            };
            for k in 0..self.times.len() {
                w.write_record([
                    format!("{:.16e}", self.times[k]),
                    self.phases[k].as_str().to_string(),
                    s.key.observable.label().to_string(),
                    theta.clone(),
                    phi.clone(),
                    format!("{:.16e}", s.values[k]),
                    format!("{:.16e}", s.normalized[k]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
