//! Built-in oracle checks run by `superdecay validate`.

use num_complex::Complex64;
use rand::Rng;

use crate::cloud::{sample_gaussian_cloud, Cloud};
use crate::decay::decay_rate_table;
use crate::error::Result;
use crate::integrator::{run_drive_decay, Schedule};
use crate::kernel::{single_atom_steady_state, AtomicState, DriveParams};
use crate::observables::{elastic_power, pair_sum_rule};
use crate::quadrature::SphereQuadrature;
use crate::rng::cloud_rng;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

/// Steady state and decay rates of an isolated atom against the closed form.
pub fn single_atom_checks() -> Result<Vec<Check>> {
    let cloud = Cloud::from_positions(vec![[0.0; 3]], 1.0)?;
    let quad = SphereQuadrature::default();
    let schedule = Schedule {
        t_drive: 40.0,
        t_decay: 1.0,
        drive_sample_dt: Some(1.0),
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        ..Default::default()
    };
    let (mut state_err, mut rate_err) = (0.0f64, 0.0f64);
    for rabi in [0.05, 1.0, 2.0, 10.0] {
        for detuning in [0.0, -10.0] {
            let traj = run_drive_decay(&cloud, &DriveParams::new(rabi, detuning), &schedule)?;
            let (beta, z) = single_atom_steady_state(rabi, detuning);
            let ss = traj.steady_state();
            state_err = state_err.max((ss.z[0] - z).abs()).max((ss.beta[0] - beta).norm());
            for f in decay_rate_table(&traj, &cloud, &[], &quad, 0.75)? {
                rate_err = rate_err.max((f.fit.gamma - 1.0).abs());
            }
        }
    }
    Ok(vec![
        Check {
            name: "single-atom steady state",
            error: state_err,
            tolerance: 1e-6,
        },
        Check {
            name: "single-atom decay rates",
            error: rate_err,
            tolerance: 1e-6,
        },
    ])
}

/// Quadrature elastic power against the pair sum on random states.
pub fn sum_rule_check(n_states: usize, seed: u64) -> Result<Check> {
    let mut rng = cloud_rng(seed);
    let mut worst = 0.0f64;
    for k in 0..n_states {
        let n = rng.gen_range(1..=100);
        let b0 = rng.gen_range(1.0..30.0);
        let cloud = sample_gaussian_cloud(n, b0, seed.wrapping_add(k as u64 + 1), 1e-2)?;
        let state = random_bloch_state(&mut rng, n);
        let quad = SphereQuadrature::resolving(&cloud);
        let a = elastic_power(&state, &cloud, &quad);
        let b = pair_sum_rule(&state, &cloud);
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
    }
    Ok(Check {
        name: "elastic power sum rule",
        error: worst,
        tolerance: 1e-10,
    })
}

/// Uniform in `z`, with `|β|` anywhere up to the Bloch-sphere bound.
pub fn random_bloch_state(rng: &mut impl Rng, n: usize) -> AtomicState {
    let mut beta = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let zi: f64 = rng.gen_range(-1.0..=1.0);
        let radius = 0.5 * (1.0 - zi * zi).sqrt() * rng.gen::<f64>().sqrt();
        beta.push(Complex64::from_polar(radius, rng.gen_range(0.0..std::f64::consts::TAU)));
        z.push(zi);
    }
    AtomicState { beta, z }
}
