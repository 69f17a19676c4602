//! Early-time decay rates from normalized post-switch-off series.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cloud::Cloud;
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::observables::{observable_series, Detector, Observable, ObservableTable, SeriesKey};
use crate::quadrature::SphereQuadrature;

/// Samples at most this far past `t_fit` still count as inside the window,
/// absorbing grid round-off.
const WINDOW_SLACK: f64 = 1e-9;
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;
pub const MIN_FIT_POINTS: usize = 5;

/// A series normalized to 1 at the switch-off, times measured from it.
#[derive(Clone, Debug, PartialEq)]
pub struct DecaySeries {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted rate in units of Γ.
    pub gamma: f64,
    pub fit_window: f64,
    pub rss: f64,
    pub n_points: usize,
    pub observable_label: String,
    pub converged: bool,
}

/// `y(t) = S(t_off + t) / S(t_off)` over the samples from `switch_off_index`
/// onwards.
pub fn normalize_to_switch_off(
    label: &str,
    times: &[f64],
    values: &[f64],
    switch_off_index: usize,
) -> Result<DecaySeries> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            actual: values.len(),
        });
    }
    let Some(&reference) = values.get(switch_off_index) else {
        return Err(Error::invalid("switch_off_index", "past the end of the series"));
    };
    if !(reference > 0.0) || !reference.is_finite() {
        return Err(Error::Normalization {
            series: label.to_string(),
            value: reference,
        });
    }
    let t0 = times[switch_off_index];
    let mut out_times = Vec::with_capacity(times.len() - switch_off_index);
    let mut out_values = Vec::with_capacity(times.len() - switch_off_index);
    for k in switch_off_index..times.len() {
        out_times.push(times[k] - t0);
        out_values.push(if k == switch_off_index { 1.0 } else { values[k] / reference });
    }
    Ok(DecaySeries {
        label: label.to_string(),
        times: out_times,
        values: out_values,
    })
}

/// Least-squares fit of `e^{-γ t}` to the samples with `t ≤ t_fit`.
///
/// The zero-intercept log-linear slope seeds a Newton iteration on
/// `Σ t e^{-γt} (y - e^{-γt}) = 0`, the stationarity condition of the linear
/// residual.
pub fn fit_single_exponential(series: &DecaySeries, t_fit: f64) -> Result<DecayFit> {
    if !(t_fit > 0.0) || !t_fit.is_finite() {
        return Err(Error::invalid("t_fit", format!("must be positive, got {t_fit}")));
    }
    let limit = t_fit * (1.0 + WINDOW_SLACK) + WINDOW_SLACK;
    let (t, y): (Vec<f64>, Vec<f64>) = series
        .times
        .iter()
        .zip(&series.values)
        .filter(|(t, _)| **t >= 0.0 && **t <= limit)
        .map(|(t, y)| (*t, *y))
        .unzip();
    if t.len() < MIN_FIT_POINTS {
        return Err(Error::FitDomain(format!(
            "`{}` has {} samples in [0, {t_fit}], need at least {MIN_FIT_POINTS}",
            series.label,
            t.len()
        )));
    }
    if let Some((ti, yi)) = t.iter().zip(&y).find(|(_, y)| !(**y > 0.0) || !y.is_finite()) {
        return Err(Error::FitDomain(format!(
            "`{}` has non-positive value {yi} at t = {ti}",
            series.label
        )));
    }

    let (num, den) = t.iter().zip(&y).fold((0.0, 0.0), |(n, d), (ti, yi)| (n - ti * yi.ln(), d + ti * ti));
    if den == 0.0 {
        return Err(Error::FitDomain(format!("`{}` window spans zero time", series.label)));
    }
    let rss = |g: f64| -> f64 { t.iter().zip(&y).map(|(ti, yi)| (yi - (-g * ti).exp()).powi(2)).sum() };

    let mut gamma = num / den;
    let mut best = (rss(gamma), gamma);
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let (mut f, mut df) = (0.0, 0.0);
        for (ti, yi) in t.iter().zip(&y) {
            let e = (-gamma * ti).exp();
            f += ti * e * (yi - e);
            df += ti * ti * e * (2.0 * e - yi);
        }
        let mut step = if df > 0.0 { f / df } else { -f.signum() * 0.1 * gamma.abs().max(1.0) };
        // Backtrack until the residual does not grow.
        let current = rss(gamma);
        let mut candidate = gamma - step;
        let mut halvings = 0;
        while rss(candidate) > current && halvings < 50 {
            step *= 0.5;
            candidate = gamma - step;
            halvings += 1;
        }
        gamma = candidate;
        let r = rss(gamma);
        if r <= best.0 {
            best = (r, gamma);
        }
        if step.abs() < NEWTON_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        gamma = best.1;
    }
    if !gamma.is_finite() {
        return Err(Error::FitDomain(format!("`{}` fit diverged", series.label)));
    }
    Ok(DecayFit {
        gamma,
        fit_window: t_fit,
        rss: rss(gamma),
        n_points: t.len(),
        observable_label: series.label.clone(),
        converged,
    })
}

/// A fit together with the series it came from.
#[derive(Clone, Debug)]
pub struct LabelledFit {
    pub key: SeriesKey,
    pub fit: DecayFit,
}

/// Rate observables reported for every run.
pub const RATE_OBSERVABLES: [Observable; 3] = [Observable::Ne, Observable::Lambda, Observable::Pel];

/// One fit per `N_e`, `Λ`, `P_el` and `I_el` along each detector, all over
/// the same window.
pub fn decay_rate_table(
    traj: &Trajectory,
    cloud: &Cloud,
    detectors: &[Detector],
    quad: &SphereQuadrature,
    t_fit: f64,
) -> Result<Vec<LabelledFit>> {
    let table = observable_series(traj, cloud, detectors, quad)?;
    fits_from_table(&table, detectors, t_fit)
}

/// [`decay_rate_table`] on precomputed series.
pub fn fits_from_table(table: &ObservableTable, detectors: &[Detector], t_fit: f64) -> Result<Vec<LabelledFit>> {
    let keys = RATE_OBSERVABLES
        .iter()
        .map(|o| SeriesKey::global(*o))
        .chain(detectors.iter().map(|d| SeriesKey::intensity(*d)));
    keys.map(|key| {
        let series = table
            .get(&key)
            .ok_or_else(|| Error::invalid("series", format!("missing `{}`", key.name())))?;
        let fit = fit_single_exponential(&table.decay_series(series), t_fit)?;
        Ok(LabelledFit { key, fit })
    })
    .collect()
}

/// Writes `observable,theta,phi,gamma,rss,n_points,t_fit,converged`.
pub fn write_fits_csv<W: Write>(fits: &[LabelledFit], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["observable", "theta", "phi", "gamma", "rss", "n_points", "t_fit", "converged"])?;
    for f in fits {
        let (theta, phi) = match &f.key.detector {
            Some(d) => (format!("{:.16e}", d.direction.theta), format!("{:.16e}", d.direction.phi)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            f.key.observable.label().to_string(),
            theta,
            phi,
            format!("{:.16e}", f.fit.gamma),
            format!("{:.16e}", f.fit.rss),
            f.fit.n_points.to_string(),
            format!("{:.16e}", f.fit.fit_window),
            f.fit.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{run_drive_decay, uniform_grid, Schedule};
    use crate::kernel::DriveParams;
    use crate::observables::Direction;

    fn synthetic(f: impl Fn(f64) -> f64, t_end: f64, dt: f64) -> DecaySeries {
        let times = uniform_grid(t_end, dt);
        let values = times.iter().map(|t| f(*t)).collect();
        DecaySeries {
            label: "synthetic".into(),
            times,
            values,
        }
    }

    #[test]
    fn normalize_examples() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y = normalize_to_switch_off("c", &t, &[4.0, 4.0, 4.0, 4.0], 1).unwrap();
        assert_eq!(y.values, vec![1.0, 1.0, 1.0]);
        assert_eq!(y.times, vec![0.0, 1.0, 2.0]);

        let t: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let s: Vec<f64> = t.iter().map(|t| 5.0 * (-2.0 * t).exp()).collect();
        let y = normalize_to_switch_off("e", &t, &s, 0).unwrap();
        for (ti, yi) in y.times.iter().zip(&y.values) {
            assert!((yi - (-2.0 * ti).exp()).abs() < 1e-15);
        }
        assert_eq!(y.values[0], 1.0);

        let err = normalize_to_switch_off("zero", &t, &[0.0; 20], 3).unwrap_err();
        assert!(matches!(err, Error::Normalization { value, .. } if value == 0.0));
        assert!(normalize_to_switch_off("neg", &t, &[-1.0; 20], 0).is_err());
    }

    #[test]
    fn recovers_pure_exponential() {
        for dt in [0.001, 0.01, 0.037] {
            let s = synthetic(|t| (-1.5 * t).exp(), 1.0, dt);
            let fit = fit_single_exponential(&s, 1.0).unwrap();
            assert!((fit.gamma - 1.5).abs() < 1e-9, "dt={dt}: {}", fit.gamma);
            assert!(fit.rss < 1e-18);
            assert!(fit.converged);
        }
        let fit = fit_single_exponential(&synthetic(|t| (-t).exp(), 0.5, 0.01), 0.5).unwrap();
        assert!((fit.gamma - 1.0).abs() < 1e-9);
    }

    #[test]
    fn window_selects_samples() {
        let s = synthetic(|t| (-t).exp(), 2.0, 0.01);
        let fit = fit_single_exponential(&s, 0.1).unwrap();
        assert_eq!(fit.n_points, 11);
        assert_eq!(fit.fit_window, 0.1);
    }

    #[test]
    fn biexponential_matches_grid_search() {
        let f = |t: f64| 0.5 * (-0.5 * t).exp() + 0.5 * (-2.0 * t).exp();
        let s = synthetic(f, 0.1, 0.01);
        let fit = fit_single_exponential(&s, 0.1).unwrap();
        // Independent oracle: brute-force scan of the residual on γ ∈ (0, 10].
        let rss = |g: f64| -> f64 { s.times.iter().zip(&s.values).map(|(t, y)| (y - (-g * t).exp()).powi(2)).sum() };
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..=100_000 {
            let g = k as f64 * 1e-4;
            let r = rss(g);
            if r < best.0 {
                best = (r, g);
            }
        }
        assert!((0.5..=2.0).contains(&fit.gamma));
        assert!((fit.gamma - best.1).abs() / best.1 < 0.05);
        assert!((fit.gamma - best.1).abs() <= 1e-4);
    }

    #[test]
    fn scale_invariance_after_normalization() {
        let t = uniform_grid(1.0, 0.01);
        let base: Vec<f64> = t.iter().map(|t| 0.3 * (-0.7 * t).exp() + 0.7 * (-1.9 * t).exp()).collect();
        let g1 = fit_single_exponential(&normalize_to_switch_off("a", &t, &base, 0).unwrap(), 0.75).unwrap();
        let scaled: Vec<f64> = base.iter().map(|v| 17.5 * v).collect();
        let g2 = fit_single_exponential(&normalize_to_switch_off("a", &t, &scaled, 0).unwrap(), 0.75).unwrap();
        assert!((g1.gamma - g2.gamma).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let short = synthetic(|t| (-t).exp(), 0.03, 0.01);
        assert!(matches!(fit_single_exponential(&short, 0.03), Err(Error::FitDomain(_))));
        let negative = synthetic(|t| 1.0 - 3.0 * t, 1.0, 0.01);
        assert!(matches!(fit_single_exponential(&negative, 1.0), Err(Error::FitDomain(_))));
        let growing = synthetic(|t| (0.5 * t).exp(), 1.0, 0.01);
        // A rising series is a valid input with a negative rate.
        let fit = fit_single_exponential(&growing, 1.0).unwrap();
        assert!((fit.gamma + 0.5).abs() < 1e-9, "{}", fit.gamma);
    }

    #[test]
    fn single_atom_rates_are_unity() {
        let cloud = Cloud::from_positions(vec![[0.0; 3]], 1.0).unwrap();
        let schedule = Schedule {
            t_drive: 5.0,
            t_decay: 0.2,
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            ..Default::default()
        };
        let traj = run_drive_decay(&cloud, &DriveParams::new(2.0, -1.0), &schedule).unwrap();
        let dets = [Detector::point(Direction::new(0.0, 0.0)), Detector::point(Direction::new(1.0, 0.0))];
        let fits = decay_rate_table(&traj, &cloud, &dets, &SphereQuadrature::product(8, 16), 0.1).unwrap();
        assert_eq!(fits.len(), 5);
        for f in &fits {
            assert!((f.fit.gamma - 1.0).abs() < 1e-6, "{}: {}", f.key.name(), f.fit.gamma);
        }
        let mut buf = Vec::new();
        write_fits_csv(&fits, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("observable,theta,phi,gamma,rss,n_points,t_fit,converged\nNe,,,"));
        assert_eq!(text.lines().count(), 6);
    }
}
