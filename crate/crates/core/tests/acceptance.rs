//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported but only turn the exit status nonzero when
//! `SUPERDECAY_ACCEPTANCE_STRICT=1` is set, so `cargo test` stays usable while
//! the verdicts remain visible.

use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use superdecay::decay::fits_from_table;
use superdecay::integrator::rk4;
use superdecay::kernel::MeanFieldSystem;
use superdecay::observables::{elastic_power, pair_sum_rule, Detector};
use superdecay::runner::{results_csv, DirectionSpec, ExperimentOutput};
use superdecay::*;

const BLOCH_EPS: f64 = 1e-6;

struct Report {
    failures: usize,
    bloch_worst: f64,
    bloch_samples: usize,
}

impl Report {
    fn line(&mut self, name: &str, pass: bool, detail: String, started: Instant) {
        if !pass {
            self.failures += 1;
        }
        println!(
            "{} {name}: {detail} [{:.2}s]",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }

    fn bloch(&mut self, states: impl IntoIterator<Item = AtomicState>) {
        for s in states {
            self.bloch_samples += 1;
            for (b, z) in s.beta.iter().zip(&s.z) {
                self.bloch_worst = self.bloch_worst.max(4.0 * b.norm_sqr() + z * z - 1.0);
            }
        }
    }

    fn trajectory(&mut self, traj: &Trajectory) {
        self.bloch(traj.samples().map(|s| s.2.clone()));
    }
}

fn single_atom(report: &mut Report) {
    let started = Instant::now();
    let cloud = Cloud::from_positions(vec![[0.0; 3]], 1.0).unwrap();
    let quad = SphereQuadrature::default();
    let schedule = Schedule {
        t_drive: 40.0,
        t_decay: 1.0,
        drive_sample_dt: Some(1.0),
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        ..Default::default()
    };
    let mut worst_z = 0.0f64;
    let mut worst_beta = 0.0f64;
    let mut worst_rate = 0.0f64;
    for rabi in [0.05, 1.0, 2.0, 10.0] {
        for detuning in [0.0, -10.0] {
            let traj = run_drive_decay(&cloud, &DriveParams::new(rabi, detuning), &schedule).unwrap();
            report.trajectory(&traj);
            let (beta, z) = single_atom_steady_state(rabi, detuning);
            let s = 0.5 * rabi * rabi / (detuning * detuning + 0.25);
            let ss = traj.steady_state();
            worst_z = worst_z.max((ss.z[0] + 1.0 / (1.0 + s)).abs()).max((ss.z[0] - z).abs());
            worst_beta = worst_beta.max((ss.beta[0] - beta).norm());
            let fits = superdecay::decay::decay_rate_table(&traj, &cloud, &[], &quad, 0.75).unwrap();
            for f in &fits {
                worst_rate = worst_rate.max((f.fit.gamma - 1.0).abs());
            }
        }
    }
    report.line(
        "single-atom oracle",
        worst_z < 1e-6 && worst_beta < 1e-6 && worst_rate < 1e-6,
        format!("max |z - z_ss| = {worst_z:.2e}, max |beta - beta_ss| = {worst_beta:.2e}, max |gamma - 1| = {worst_rate:.2e}"),
        started,
    );
}

fn sum_rule(report: &mut Report) {
    let started = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let n = rng.gen_range(1..=100);
        let b0 = rng.gen_range(1.0..30.0);
        let cloud = sample_gaussian_cloud(n, b0, 1000 + k, 1e-2).unwrap();
        let state = random_state(&mut rng, n);
        report.bloch([state.clone()]);
        let quad = SphereQuadrature::resolving(&cloud);
        let a = elastic_power(&state, &cloud, &quad);
        let b = pair_sum_rule(&state, &cloud);
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
    }
    report.line(
        "sum rule",
        worst < 1e-10,
        format!("100 random states, max relative gap {worst:.2e}"),
        started,
    );
}

/// A random state on or inside the Bloch ball.
fn random_state(rng: &mut impl Rng, n: usize) -> AtomicState {
    let mut beta = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let zi: f64 = rng.gen_range(-1.0..=1.0);
        let radius = 0.5 * (1.0 - zi * zi).sqrt() * rng.gen::<f64>().sqrt();
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        beta.push(Complex64::from_polar(radius, phase));
        z.push(zi);
    }
    AtomicState::new(beta, z).unwrap()
}

fn cross_integrator(report: &mut Report) {
    let started = Instant::now();
    let cloud = sample_gaussian_cloud(50, 3.0, 11, 1e-2).unwrap();
    let coupling = build_coupling(&cloud);
    let drive = DriveParams::new(2.0, 0.0);
    let system = MeanFieldSystem::new(&coupling, &drive, &cloud, true).unwrap();
    let y0 = AtomicState::ground(50).to_flat();
    let reference = rk4(&system, &y0, 10.0, 1e-4);
    let schedule = Schedule {
        t_drive: 10.0,
        t_decay: 1.0,
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        ..Default::default()
    };
    let traj = run_drive_decay(&cloud, &drive, &schedule).unwrap();
    report.trajectory(&traj);
    report.bloch([AtomicState::from_flat(&reference)]);
    let adaptive = traj.steady_state().to_flat();
    let gap = adaptive
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    report.line(
        "cross-integrator",
        gap < 1e-6,
        format!("N = 50, max-norm gap at t = 10 is {gap:.2e}"),
        started,
    );
}

fn figure_config(detuning: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n_atoms: 1000,
        b0: 12.0,
        rabi_list: vec![0.05, 0.5, 2.0, 10.0],
        detuning,
        n_configurations: 5,
        base_seed: seed,
        schedule: Schedule {
            t_decay: 1.0,
            drive_sample_dt: Some(0.1),
            ..Default::default()
        },
        t_fit: 0.75,
        directions: vec![DirectionSpec::Theta(FRAC_PI_2), DirectionSpec::Theta(0.0)],
        dump_trajectories: true,
        ..Default::default()
    }
}

fn run_figure(report: &mut Report, config: &ExperimentConfig) -> ExperimentOutput {
    let output = run_experiment(config).unwrap();
    for run in &output.runs {
        if let Ok(outcome) = &run.outcome {
            if let Some(traj) = &outcome.trajectory {
                report.trajectory(traj);
            }
        }
    }
    output
}

fn mean(output: &ExperimentOutput, rabi: f64, observable: &str, theta: Option<f64>) -> f64 {
    output
        .ensemble_for(rabi, observable, theta)
        .and_then(|r| r.mean)
        .unwrap_or(f64::NAN)
}

const OBSERVABLES: [(&str, &str, Option<f64>); 4] = [
    ("Ne", "Ne", None),
    ("Lambda", "Lambda", None),
    ("theta=pi/2", "Iel", Some(FRAC_PI_2)),
    ("theta=0", "Iel", Some(0.0)),
];

fn print_table(output: &ExperimentOutput) {
    for &rabi in &output.rabi_values {
        let mut line = format!("    Omega = {rabi:<5}");
        for (name, obs, theta) in OBSERVABLES.iter().chain(&[("Pel", "Pel", None)]) {
            line += &format!("  {name} {:.4}", mean(output, rabi, obs, *theta));
        }
        println!("{line}");
    }
}

fn fig2b(report: &mut Report) -> ExperimentOutput {
    let started = Instant::now();
    let output = run_figure(report, &figure_config(0.0, 2024));
    print_table(&output);
    let side = |r| mean(&output, r, "Iel", Some(FRAC_PI_2));
    let forward_min = output
        .rabi_values
        .iter()
        .map(|&r| mean(&output, r, "Iel", Some(0.0)))
        .fold(f64::INFINITY, f64::min);
    let ne_weak = mean(&output, 0.05, "Ne", None);
    let ne_strong = mean(&output, 10.0, "Ne", None);
    let pass = output.all_converged()
        && side(0.05) < 0.95
        && side(10.0) > 1.0
        && forward_min > 1.0
        && ne_weak < 0.95
        && (0.9..=1.1).contains(&ne_strong);
    report.line(
        "Fig. 2(b) trend",
        pass,
        format!(
            "side {:.3} -> {:.3}, min forward {forward_min:.3}, Ne {ne_weak:.3} -> {ne_strong:.3}, failed runs {}",
            side(0.05),
            side(10.0),
            output.n_failed()
        ),
        started,
    );
    output
}

fn fig2a(report: &mut Report) -> ExperimentOutput {
    let started = Instant::now();
    let output = run_figure(report, &figure_config(-10.0, 2025));
    print_table(&output);
    let weak = output.rabi_values[0];
    let strong = *output.rabi_values.last().unwrap();
    let weak_rates: Vec<f64> = OBSERVABLES.iter().map(|(_, o, t)| mean(&output, weak, o, *t)).collect();
    let strong_gaps: Vec<f64> = OBSERVABLES
        .iter()
        .map(|(_, o, t)| (mean(&output, strong, o, *t) - 1.0).abs())
        .collect();
    let ne_closest = strong_gaps[1..].iter().all(|g| strong_gaps[0] < *g);
    let pass = output.all_converged() && weak_rates.iter().all(|g| *g > 1.0) && ne_closest;
    report.line(
        "Fig. 2(a) trend",
        pass,
        format!(
            "weakest-drive rates {:.3?}, strongest-drive |rate - 1| {:.3?}, failed runs {}",
            weak_rates,
            strong_gaps,
            output.n_failed()
        ),
        started,
    );
    output
}

/// Refits every stored table at the short window and compares ensemble means.
fn fit_window(report: &mut Report, outputs: &[&ExperimentOutput]) {
    let started = Instant::now();
    let mut worst = (0.0f64, String::new());
    for output in outputs {
        let detectors: Vec<Detector> = output.config.detectors();
        for &rabi in &output.rabi_values {
            for (name, obs, theta) in OBSERVABLES {
                let long = mean(output, rabi, obs, theta);
                let mut short = Vec::new();
                for run in output.runs.iter().filter(|r| r.rabi == rabi) {
                    let Ok(outcome) = &run.outcome else { continue };
                    let Ok(fits) = fits_from_table(&outcome.table, &detectors, 0.1) else { continue };
                    let fit = fits.iter().find(|f| {
                        f.key.observable.label() == obs
                            && f.key.detector.map(|d| d.direction.theta) == theta
                    });
                    if let Some(f) = fit.filter(|f| f.fit.converged) {
                        short.push(f.fit.gamma);
                    }
                }
                let short = short.iter().sum::<f64>() / short.len() as f64;
                let rel = (short - long).abs() / long;
                println!(
                    "    Delta = {:<4} Omega = {rabi:<5} {name:<11} T_fit 0.75: {long:.4}  T_fit 0.1: {short:.4}  change {:.1}%",
                    output.config.detuning,
                    100.0 * rel
                );
                if rel.is_nan() || rel > worst.0 {
                    worst = (rel, format!("Delta = {}, Omega = {rabi}, {name}", output.config.detuning));
                }
            }
        }
    }
    report.line(
        "fit-window robustness",
        worst.0 <= 0.15,
        format!("largest relative change {:.1}% ({})", 100.0 * worst.0, worst.1),
        started,
    );
}

fn determinism(report: &mut Report) {
    let started = Instant::now();
    let mut config = ExperimentConfig {
        n_atoms: 200,
        b0: 12.0,
        rabi_list: vec![0.05, 10.0],
        n_configurations: 3,
        base_seed: 99,
        schedule: Schedule {
            t_decay: 1.0,
            drive_sample_dt: Some(0.5),
            ..Default::default()
        },
        t_fit: 0.75,
        directions: vec![DirectionSpec::Theta(FRAC_PI_2), DirectionSpec::Theta(0.0)],
        ..Default::default()
    };
    let mut bytes = Vec::new();
    for workers in [None, None, Some(1), Some(4)] {
        config.max_workers = workers;
        let output = run_experiment(&config).unwrap();
        bytes.push(results_csv(&output.rows).unwrap());
    }
    let identical = bytes.windows(2).all(|w| w[0] == w[1]);
    report.line(
        "determinism",
        identical,
        format!("results.csv across rerun and workers {{default, 1, 4}}: {} bytes, identical = {identical}", bytes[0].len()),
        started,
    );
}

fn main() {
    let mut report = Report {
        failures: 0,
        bloch_worst: f64::NEG_INFINITY,
        bloch_samples: 0,
    };
    let started = Instant::now();
    single_atom(&mut report);
    sum_rule(&mut report);
    cross_integrator(&mut report);
    let b = fig2b(&mut report);
    let a = fig2a(&mut report);
    fit_window(&mut report, &[&b, &a]);
    determinism(&mut report);
    let worst = report.bloch_worst;
    let samples = report.bloch_samples;
    report.line(
        "Bloch ball",
        worst <= BLOCH_EPS,
        format!("max 4|beta|^2 + z^2 - 1 = {worst:.2e} over {samples} sampled states"),
        started,
    );
    if report.failures == 0 {
        println!("all criteria passed");
        return;
    }
    println!("{} criteria failed", report.failures);
    if std::env::var("SUPERDECAY_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
