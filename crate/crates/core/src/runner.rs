//! Configuration ensembles and drive-strength sweeps.
//!
//! A run is one `(configuration index, Ω)` pair. Clouds depend only on the
//! configuration index, so every Ω value of a sweep sees the same set of
//! geometries. Runs are independent and are evaluated on a work queue; the
//! output is sorted canonically, so the worker count never changes a byte of
//! `results.csv`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{sample_gaussian_cloud, Cloud, DEFAULT_MIN_PAIR_SEPARATION};
use crate::decay::{fits_from_table, write_fits_csv, LabelledFit};
use crate::error::{Error, Result};
use crate::integrator::{run_drive_decay_with, Schedule, StepStats, Trajectory};
use crate::kernel::{build_coupling, rabi_from_saturation, DriveParams};
use crate::observables::{observable_series, Detector, Direction, ObservableTable};
use crate::quadrature::SphereQuadrature;
use crate::rng::derive_seed;

/// A detection angle: bare `θ` (with `φ = 0`) or an explicit pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DirectionSpec {
    Theta(f64),
    Full { theta: f64, phi: f64 },
}

impl DirectionSpec {
    pub fn direction(&self) -> Direction {
        match *self {
            DirectionSpec::Theta(theta) => Direction::new(theta, 0.0),
            DirectionSpec::Full { theta, phi } => Direction::new(theta, phi),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_atoms: usize,
    pub b0: f64,
    /// Ω/Γ values. Ignored when `saturation_list` is given.
    #[serde(default)]
    pub rabi_list: Vec<f64>,
    /// Drive strengths as saturation parameters, converted with
    /// `Ω/Γ = sqrt(s/2 + Δ^2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation_list: Option<Vec<f64>>,
    #[serde(default)]
    pub detuning: f64,
    #[serde(default = "defaults::n_configurations")]
    pub n_configurations: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "defaults::t_fit")]
    pub t_fit: f64,
    #[serde(default = "defaults::directions")]
    pub directions: Vec<DirectionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_cone_sr: Option<f64>,
    #[serde(default = "defaults::yes")]
    pub drive_phase_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_waist: Option<f64>,
    #[serde(default = "defaults::min_pair_separation")]
    pub min_pair_separation: f64,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_workers: Option<usize>,
    #[serde(default = "defaults::yes")]
    pub write_timeseries: bool,
    /// Also write the full per-atom trajectory of every run (large).
    #[serde(default)]
    pub dump_trajectories: bool,
}

mod defaults {
    use super::DirectionSpec;
    use std::f64::consts::PI;
    use std::path::PathBuf;

    pub fn n_configurations() -> usize {
        5
    }
    pub fn t_fit() -> f64 {
        0.1
    }
    pub fn directions() -> Vec<DirectionSpec> {
        vec![DirectionSpec::Theta(0.0), DirectionSpec::Theta(PI / 2.0)]
    }
    pub fn yes() -> bool {
        true
    }
    pub fn min_pair_separation() -> f64 {
        super::DEFAULT_MIN_PAIR_SEPARATION
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("results")
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_atoms: 1000,
            b0: 8.0,
            rabi_list: vec![0.05, 2.0],
            saturation_list: None,
            detuning: 0.0,
            n_configurations: defaults::n_configurations(),
            base_seed: 0,
            schedule: Schedule::default(),
            t_fit: defaults::t_fit(),
            directions: defaults::directions(),
            detector_cone_sr: None,
            drive_phase_enabled: true,
            beam_waist: None,
            min_pair_separation: defaults::min_pair_separation(),
            output_dir: defaults::output_dir(),
            max_workers: None,
            write_timeseries: true,
            dump_trajectories: false,
        }
    }
}

/// Full-figure atom numbers above this are accepted but slow.
pub const LONG_RUNNING_ATOMS: usize = 2000;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(Error::invalid("n_atoms", "must be at least 1"));
        }
        if !(self.b0 > 0.0) || !self.b0.is_finite() {
            return Err(Error::invalid("b0", "must be positive"));
        }
        if self.n_configurations == 0 {
            return Err(Error::invalid("n_configurations", "must be at least 1"));
        }
        let rabis = self.rabi_values()?;
        if rabis.is_empty() {
            return Err(Error::invalid("rabi_list", "must not be empty"));
        }
        if let Some(r) = rabis.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid("rabi_list", format!("values must be positive, got {r}")));
        }
        if !self.detuning.is_finite() {
            return Err(Error::invalid("detuning", "must be finite"));
        }
        if !(self.t_fit > 0.0) || !self.t_fit.is_finite() {
            return Err(Error::invalid("t_fit", "must be positive"));
        }
        if self.t_fit > self.schedule.t_decay {
            return Err(Error::invalid("t_fit", "fit window exceeds the recorded decay"));
        }
        for d in &self.directions {
            let (t, p) = match *d {
                DirectionSpec::Theta(t) => (t, 0.0),
                DirectionSpec::Full { theta, phi } => (theta, phi),
            };
            if !t.is_finite() || !p.is_finite() {
                return Err(Error::invalid("directions", "angles must be finite"));
            }
        }
        if let Some(sr) = self.detector_cone_sr {
            if !(sr > 0.0 && sr < 4.0 * PI) {
                return Err(Error::invalid("detector_cone_sr", "must lie in (0, 4π)"));
            }
        }
        if self.max_workers == Some(0) {
            return Err(Error::invalid("max_workers", "must be at least 1"));
        }
        self.schedule.validate()?;
        self.drive(1.0).validate()
    }

    /// Ω/Γ values in the order given.
    pub fn rabi_values(&self) -> Result<Vec<f64>> {
        match &self.saturation_list {
            Some(list) => list.iter().map(|s| rabi_from_saturation(*s, self.detuning)).collect(),
            None => Ok(self.rabi_list.clone()),
        }
    }

    pub fn detectors(&self) -> Vec<Detector> {
        self.directions
            .iter()
            .map(|d| Detector {
                direction: d.direction(),
                cone_sr: self.detector_cone_sr,
            })
            .collect()
    }

    pub fn drive(&self, rabi: f64) -> DriveParams {
        DriveParams {
            rabi,
            detuning: self.detuning,
            drive_phase_enabled: self.drive_phase_enabled,
            beam_waist: self.beam_waist,
        }
    }

    pub fn seed(&self, config_index: usize) -> u64 {
        derive_seed(self.base_seed, config_index as u64)
    }

    pub fn is_long_running(&self) -> bool {
        self.n_atoms > LONG_RUNNING_ATOMS
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form, excluding where and how the run
    /// executes (`output_dir`, `max_workers`).
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.max_workers = None;
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Reads a TOML config, rejecting unknown keys.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let config = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(config)
}

/// Output of one `(configuration, Ω)` run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config_index: usize,
    pub seed: u64,
    pub rabi_index: usize,
    pub rabi: f64,
    pub outcome: std::result::Result<RunOutcome, String>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub fits: Vec<LabelledFit>,
    pub table: ObservableTable,
    pub stats: StepStats,
    pub monotonicity_violations: usize,
    /// Per-atom trajectory, kept only when `dump_trajectories` is set.
    pub trajectory: Option<Trajectory>,
}

impl RunRecord {
    pub fn converged(&self) -> bool {
        matches!(&self.outcome, Ok(o) if o.fits.iter().all(|f| f.fit.converged))
    }
}

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub n_atoms: usize,
    pub b0: f64,
    pub rabi: f64,
    pub detuning: f64,
    pub t_fit: f64,
    pub config_index: usize,
    pub seed: u64,
    pub observable: String,
    pub theta: Option<f64>,
    pub phi: Option<f64>,
    pub gamma: Option<f64>,
    pub rss: Option<f64>,
    pub n_points: Option<usize>,
    pub converged: bool,
    pub ensemble_mean: Option<f64>,
    pub ensemble_std: Option<f64>,
    pub ensemble_count: usize,
    pub error: String,
}

/// Ensemble statistics of one rate observable at one Ω.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleRow {
    pub rabi: f64,
    pub observable: String,
    pub theta: Option<f64>,
    pub phi: Option<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
    pub failed: usize,
}

impl EnsembleRow {
    pub fn matches(&self, observable: &str, theta: Option<f64>) -> bool {
        self.observable == observable
            && match (self.theta, theta) {
                (None, None) => true,
                (Some(a), Some(b)) => (a - b).abs() < 1e-12,
                _ => false,
            }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub rabi_values: Vec<f64>,
    pub runs: Vec<RunRecord>,
    pub rows: Vec<ResultRow>,
    pub ensemble: Vec<EnsembleRow>,
}

impl ExperimentOutput {
    pub fn n_failed(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(RunRecord::converged)
    }

    /// Ensemble row for `observable` (and detector `theta`) at Ω = `rabi`.
    pub fn ensemble_for(&self, rabi: f64, observable: &str, theta: Option<f64>) -> Option<&EnsembleRow> {
        self.ensemble
            .iter()
            .find(|r| r.rabi == rabi && r.matches(observable, theta))
    }
}

/// Samples every cloud, runs every `(configuration, Ω)` pair and aggregates
/// the fitted rates.
///
/// A failing run is recorded with its error and does not stop the others.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let rabi_values = config.rabi_values()?;
    let detectors = config.detectors();
    let n_cfg = config.n_configurations;

    crate::par::with_workers(config.max_workers, || {
        let clouds: Vec<std::result::Result<Cloud, String>> = crate::par::map_indices(n_cfg, |c| {
            sample_gaussian_cloud(config.n_atoms, config.b0, config.seed(c), config.min_pair_separation)
                .map_err(|e| e.to_string())
        });
        let jobs: Vec<(usize, usize)> = (0..rabi_values.len())
            .flat_map(|w| (0..n_cfg).map(move |c| (w, c)))
            .collect();
        let runs = crate::par::map_indices(jobs.len(), |j| {
            let (w, c) = jobs[j];
            let outcome = match &clouds[c] {
                Ok(cloud) => single_run(config, cloud, rabi_values[w], &detectors).map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            RunRecord {
                config_index: c,
                seed: config.seed(c),
                rabi_index: w,
                rabi: rabi_values[w],
                outcome,
            }
        });
        let (rows, ensemble) = tabulate(config, &rabi_values, &detectors, &runs);
        Ok(ExperimentOutput {
            config: config.clone(),
            rabi_values,
            runs,
            rows,
            ensemble,
        })
    })
}

fn single_run(config: &ExperimentConfig, cloud: &Cloud, rabi: f64, detectors: &[Detector]) -> Result<RunOutcome> {
    let coupling = build_coupling(cloud);
    let traj = run_drive_decay_with(cloud, &coupling, &config.drive(rabi), &config.schedule)?;
    drop(coupling);
    let quad = SphereQuadrature::resolving(cloud);
    let table = observable_series(&traj, cloud, detectors, &quad)?;
    let fits = fits_from_table(&table, detectors, config.t_fit)?;
    Ok(RunOutcome {
        fits,
        table,
        stats: traj.stats(),
        monotonicity_violations: traj.monotonicity_violations,
        trajectory: config.dump_trajectories.then_some(traj),
    })
}

type GroupKey = (usize, usize);

fn tabulate(
    config: &ExperimentConfig,
    rabi_values: &[f64],
    detectors: &[Detector],
    runs: &[RunRecord],
) -> (Vec<ResultRow>, Vec<EnsembleRow>) {
    let n_series = crate::decay::RATE_OBSERVABLES.len() + detectors.len();
    // (rabi index, series index) -> converged gammas, in configuration order.
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    let mut failures: BTreeMap<GroupKey, usize> = BTreeMap::new();
    let mut ordered: Vec<&RunRecord> = runs.iter().collect();
    ordered.sort_by_key(|r| (r.rabi_index, r.config_index));
    for r in &ordered {
        for s in 0..n_series {
            let key = (r.rabi_index, s);
            match &r.outcome {
                Ok(o) if o.fits[s].fit.converged => groups.entry(key).or_default().push(o.fits[s].fit.gamma),
                _ => *failures.entry(key).or_default() += 1,
            }
        }
    }
    let stats = |key: &GroupKey| -> (Option<f64>, Option<f64>, usize) {
        match groups.get(key) {
            Some(v) if !v.is_empty() => {
                let (m, s) = mean_std(v);
                (Some(m), Some(s), v.len())
            }
            _ => (None, None, 0),
        }
    };
    let series_meta = |s: usize| -> (String, Option<f64>, Option<f64>) {
        let globals = crate::decay::RATE_OBSERVABLES;
        if s < globals.len() {
            (globals[s].label().to_string(), None, None)
        } else {
            let d = detectors[s - globals.len()].direction;
            ("Iel".to_string(), Some(d.theta), Some(d.phi))
        }
    };

    let mut rows = Vec::new();
    for r in &ordered {
        match &r.outcome {
            Ok(o) => {
                for (s, f) in o.fits.iter().enumerate() {
                    let (mean, std, count) = stats(&(r.rabi_index, s));
                    let (observable, theta, phi) = series_meta(s);
                    rows.push(ResultRow {
                        n_atoms: config.n_atoms,
                        b0: config.b0,
                        rabi: r.rabi,
                        detuning: config.detuning,
                        t_fit: config.t_fit,
                        config_index: r.config_index,
                        seed: r.seed,
                        observable,
                        theta,
                        phi,
                        gamma: Some(f.fit.gamma),
                        rss: Some(f.fit.rss),
                        n_points: Some(f.fit.n_points),
                        converged: f.fit.converged,
                        ensemble_mean: mean,
                        ensemble_std: std,
                        ensemble_count: count,
                        error: String::new(),
                    });
                }
            }
            Err(e) => rows.push(ResultRow {
                n_atoms: config.n_atoms,
                b0: config.b0,
                rabi: r.rabi,
                detuning: config.detuning,
                t_fit: config.t_fit,
                config_index: r.config_index,
                seed: r.seed,
                observable: String::new(),
                theta: None,
                phi: None,
                gamma: None,
                rss: None,
                n_points: None,
                converged: false,
                ensemble_mean: None,
                ensemble_std: None,
                ensemble_count: 0,
                error: e.clone(),
            }),
        }
    }

    let mut ensemble = Vec::new();
    for (w, rabi) in rabi_values.iter().enumerate() {
        for s in 0..n_series {
            let (mean, std, count) = stats(&(w, s));
            let (observable, theta, phi) = series_meta(s);
            ensemble.push(EnsembleRow {
                rabi: *rabi,
                observable,
                theta,
                phi,
                mean,
                std,
                count,
                failed: failures.get(&(w, s)).copied().unwrap_or(0),
            });
        }
    }
    (rows, ensemble)
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// [`run_experiment`] over the Ω grid in ascending order.
pub fn sweep_omega(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut sorted = config.clone();
    // Ω grows with s, so sorting either list orders the sweep by Ω.
    match &mut sorted.saturation_list {
        Some(list) => list.sort_by(f64::total_cmp),
        None => sorted.rabi_list.sort_by(f64::total_cmp),
    }
    run_experiment(&sorted)
}

/// `n` logarithmically spaced values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, n: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min) || n == 0 {
        return Err(Error::invalid("omega grid", "need 0 < min <= max and at least one point"));
    }
    if n == 1 {
        return Ok(vec![min]);
    }
    let (a, b) = (min.ln(), max.ln());
    let mut grid: Vec<f64> = (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect();
    grid[0] = min;
    grid[n - 1] = max;
    Ok(grid)
}

/// [`run_experiment`] with the detectors replaced by `thetas`.
pub fn angular_scan(config: &ExperimentConfig, thetas: &[DirectionSpec]) -> Result<ExperimentOutput> {
    if thetas.is_empty() {
        return Err(Error::invalid("thetas", "must not be empty"));
    }
    let mut scan = config.clone();
    scan.directions = thetas.to_vec();
    run_experiment(&scan)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `results.csv` bytes.
pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "n_atoms", "b0", "rabi", "detuning", "t_fit", "config_index", "seed", "observable", "theta", "phi", "gamma",
        "rss", "n_points", "converged", "ensemble_mean", "ensemble_std", "ensemble_count", "error",
    ])?;
    for r in rows {
        w.write_record([
            r.n_atoms.to_string(),
            r.b0.to_string(),
            r.rabi.to_string(),
            r.detuning.to_string(),
            r.t_fit.to_string(),
            r.config_index.to_string(),
            r.seed.to_string(),
            r.observable.clone(),
            fmt_opt(r.theta),
            fmt_opt(r.phi),
            fmt_opt(r.gamma),
            fmt_opt(r.rss),
            r.n_points.map(|n| n.to_string()).unwrap_or_default(),
            r.converged.to_string(),
            fmt_opt(r.ensemble_mean),
            fmt_opt(r.ensemble_std),
            r.ensemble_count.to_string(),
            r.error.clone(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// `summary.csv` bytes: one line per Ω and rate observable.
pub fn summary_csv(rows: &[EnsembleRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rabi", "observable", "theta", "phi", "mean", "std", "count", "failed"])?;
    for r in rows {
        w.write_record([
            r.rabi.to_string(),
            r.observable.clone(),
            fmt_opt(r.theta),
            fmt_opt(r.phi),
            fmt_opt(r.mean),
            fmt_opt(r.std),
            r.count.to_string(),
            r.failed.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub config_index: usize,
    pub seed: u64,
    pub rabi: f64,
    pub converged: bool,
    pub error: Option<String>,
    pub steps: Option<StepStats>,
    pub monotonicity_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub code_version: String,
    pub rng: String,
    pub n_runs: usize,
    pub n_failed: usize,
    pub long_running: bool,
    pub notes: BTreeMap<String, String>,
    pub runs: Vec<ManifestRun>,
}

pub fn manifest(output: &ExperimentOutput) -> Result<Manifest> {
    let mut runs: Vec<ManifestRun> = output
        .runs
        .iter()
        .map(|r| ManifestRun {
            config_index: r.config_index,
            seed: r.seed,
            rabi: r.rabi,
            converged: r.converged(),
            error: r.outcome.as_ref().err().cloned(),
            steps: r.outcome.as_ref().ok().map(|o| o.stats),
            monotonicity_violations: r.outcome.as_ref().map(|o| o.monotonicity_violations).unwrap_or(0),
        })
        .collect();
    runs.sort_by(|a, b| a.rabi.total_cmp(&b.rabi).then(a.config_index.cmp(&b.config_index)));
    let mut notes = BTreeMap::new();
    notes.insert(
        "intensity".into(),
        "Iel is the elastic (coherent) intensity only; detected light in an experiment also contains inelastic photons".into(),
    );
    notes.insert("units".into(), "time in 1/Gamma, length in 1/k_l, rates in Gamma".into());
    notes.insert("clouds".into(), "one cloud per configuration index, shared across the rabi grid".into());
    if output.config.saturation_list.is_some() {
        notes.insert("rabi_convention".into(), "rabi = sqrt(s/2 + detuning^2) from saturation_list".into());
    }
    let axis: Vec<String> = output
        .config
        .detectors()
        .iter()
        .filter_map(|d| d.direction.axis_label().map(|l| format!("theta={} ({l})", d.direction.theta)))
        .collect();
    if !axis.is_empty() {
        notes.insert("axis_directions".into(), axis.join(", "));
    }
    Ok(Manifest {
        config_hash: output.config.hash()?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        rng: "xoshiro256++ seeded by splitmix64; config seed = splitmix64(base_seed ^ splitmix64(index))".into(),
        n_runs: output.runs.len(),
        n_failed: output.n_failed(),
        long_running: output.config.is_long_running(),
        notes,
        runs,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Time-series file name of a run.
pub fn timeseries_name(seed: u64, rabi: f64) -> String {
    format!("{seed}_{rabi}.csv")
}

/// Writes `results.csv`, `summary.csv`, `manifest.json`, per-run
/// `fits/<seed>_<omega>.csv` and, when enabled, `timeseries/<seed>_<omega>.csv`
/// and `trajectories/<seed>_<omega>.csv`.
pub fn write_results(output: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("results.csv"), &results_csv(&output.rows)?)?;
    write_atomic(&dir.join("summary.csv"), &summary_csv(&output.ensemble)?)?;
    for r in &output.runs {
        let Ok(o) = &r.outcome else { continue };
        let name = timeseries_name(r.seed, r.rabi);
        let mut buf = Vec::new();
        write_fits_csv(&o.fits, &mut buf)?;
        write_atomic(&dir.join("fits").join(&name), &buf)?;
        if output.config.write_timeseries {
            let mut buf = Vec::new();
            o.table.write_csv(&mut buf)?;
            write_atomic(&dir.join("timeseries").join(&name), &buf)?;
        }
        if let Some(traj) = &o.trajectory {
            let mut buf = Vec::new();
            traj.write_csv(&mut buf)?;
            write_atomic(&dir.join("trajectories").join(&name), &buf)?;
        }
    }
    let mut json = serde_json::to_vec_pretty(&manifest(output)?)?;
    json.push(b'\n');
    write_atomic(&dir.join("manifest.json"), &json)?;
    Ok(())
}
