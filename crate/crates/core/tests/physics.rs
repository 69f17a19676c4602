use approx::assert_relative_eq;
use superdecay::decay::fit_single_exponential;
use superdecay::observables::{coherence_sum, elastic_power_batch, excited_population, inelastic_power};
use superdecay::runner::{angular_scan, DirectionSpec};
use superdecay::*;

fn quick(t_drive: f64, t_decay: f64, tol: f64) -> Schedule {
    Schedule {
        t_drive,
        t_decay,
        drive_sample_dt: Some(t_drive),
        abs_tol: tol,
        rel_tol: tol,
        ..Default::default()
    }
}

#[test]
fn far_separated_atoms_decay_independently() {
    let cloud = Cloud::from_positions(vec![[0.0; 3], [600.0, 0.0, 800.0]], 500.0).unwrap();
    assert_relative_eq!(cloud.distance(0, 1), 1000.0, epsilon = 1e-9);
    let traj = run_drive_decay(&cloud, &DriveParams::new(2.0, 0.0), &quick(20.0, 1.0, 1e-10)).unwrap();
    for atom in 0..2 {
        let values: Vec<f64> = traj.decay.states.iter().map(|s| s.beta[atom].norm_sqr()).collect();
        let series = normalize_to_switch_off("beta", &traj.decay.times, &values, 0).unwrap();
        let fit = fit_single_exponential(&series, 0.75).unwrap();
        assert!((fit.gamma - 1.0).abs() < 1e-3, "atom {atom}: {}", fit.gamma);
    }
}

#[test]
fn self_convergence_n50() {
    let cloud = sample_gaussian_cloud(50, 4.0, 3, 1e-2).unwrap();
    let drive = DriveParams::new(1.5, -0.5);
    let coarse = run_drive_decay(&cloud, &drive, &quick(10.0, 0.5, 1e-8)).unwrap();
    let fine = run_drive_decay(&cloud, &drive, &quick(10.0, 0.5, 5e-9)).unwrap();
    let gap = coarse.decay.states.last().unwrap().max_abs_diff(fine.decay.states.last().unwrap());
    assert!(gap < 1e-7, "gap {gap}");
}

#[test]
fn weak_drive_coherence_matches_population() {
    let cloud = Cloud::from_positions(vec![[0.0; 3]], 1.0).unwrap();
    let traj = run_drive_decay(&cloud, &DriveParams::new(1e-3, 0.0), &quick(40.0, 0.1, 1e-12)).unwrap();
    let ss = traj.steady_state();
    let (ne, lambda) = (excited_population(ss), coherence_sum(ss));
    assert!(((lambda - ne) / ne).abs() < 1e-3, "Ne {ne} Lambda {lambda}");
}

#[test]
fn steady_state_observables_of_one_atom() {
    let cloud = Cloud::from_positions(vec![[0.0; 3]], 1.0).unwrap();
    let traj = run_drive_decay(&cloud, &DriveParams::new(1.0, 0.0), &quick(40.0, 0.1, 1e-12)).unwrap();
    let ss = traj.steady_state();
    assert_relative_eq!(excited_population(ss), 1.0 / 3.0, epsilon = 1e-9);
    let (beta, _) = single_atom_steady_state(1.0, 0.0);
    let pin = inelastic_power(ss);
    assert_relative_eq!(pin, 1.0 / 3.0 - beta.norm_sqr(), epsilon = 1e-9);
    assert!(pin > 0.0);
}

#[test]
fn inelastic_to_elastic_ratio_grows_with_drive() {
    let cloud = sample_gaussian_cloud(100, 4.0, 5, 1e-2).unwrap();
    let quad = SphereQuadrature::resolving(&cloud);
    let ratio = |rabi: f64| {
        let traj = run_drive_decay(&cloud, &DriveParams::new(rabi, 0.0), &quick(20.0, 0.1, 1e-8)).unwrap();
        let ss = traj.steady_state();
        inelastic_power(ss) / elastic_power_batch(&[ss], &cloud, &quad)[0]
    };
    let (weak, strong) = (ratio(0.05), ratio(2.0));
    assert!(weak < 0.05, "weak {weak}");
    assert!(strong > 1.0, "strong {strong}");
}

#[test]
fn population_relaxes_monotonically() {
    let cloud = sample_gaussian_cloud(200, 8.0, 9, 1e-2).unwrap();
    for rabi in [0.05, 2.0] {
        let traj = run_drive_decay(&cloud, &DriveParams::new(rabi, 0.0), &quick(10.0, 2.0, 1e-8)).unwrap();
        assert_eq!(traj.monotonicity_violations, 0, "rabi {rabi}");
    }
}

#[test]
fn cloud_moments_match_sampling_distribution() {
    let cloud = sample_gaussian_cloud(1000, 8.0, 21, 1e-2).unwrap();
    let r = cloud.radius();
    assert_relative_eq!(r, 375f64.sqrt(), epsilon = 1e-12);
    let n = cloud.n_atoms() as f64;
    for axis in 0..3 {
        let xs: Vec<f64> = cloud.positions().iter().map(|p| p[axis]).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 4.0 * r / n.sqrt(), "axis {axis} mean {mean}");
        assert!((std / r - 1.0).abs() < 0.1, "axis {axis} std {std}");
    }
}

#[test]
fn radius_scales_with_root_n() {
    for (n, b0) in [(10usize, 1.0), (1000, 8.0), (5000, 12.0)] {
        let a = radius_from_b0(n, b0).unwrap();
        let b = radius_from_b0(2 * n, b0).unwrap();
        assert_relative_eq!(b / a, 2f64.sqrt(), epsilon = 1e-15);
    }
}

#[test]
fn pair_separation_holds_exhaustively() {
    let dense = sample_gaussian_cloud(400, 400.0, 4, 0.3).unwrap();
    assert!(dense.min_pair_distance().unwrap() >= 0.3);
    let large = sample_gaussian_cloud(2000, 8.0, 4, 1e-2).unwrap();
    assert!(large.min_pair_distance().unwrap() >= 1e-2);
}

#[test]
fn coupling_symmetric_with_zero_diagonal_n2000() {
    let cloud = sample_gaussian_cloud(2000, 12.0, 8, 1e-2).unwrap();
    let g = build_coupling(&cloud);
    for m in 0..2000 {
        assert_eq!(g.get(m, m), num_complex::Complex64::new(0.0, 0.0));
        for n in 0..m {
            assert_eq!(g.get(m, n), g.get(n, m));
        }
    }
}

#[test]
fn single_atom_angular_scan_is_flat() {
    let config = ExperimentConfig {
        n_atoms: 1,
        b0: 1.0,
        rabi_list: vec![0.3, 4.0],
        n_configurations: 2,
        schedule: quick(30.0, 1.0, 1e-10),
        t_fit: 0.75,
        ..Default::default()
    };
    let thetas: Vec<DirectionSpec> = [0.0, 0.7, 1.6, 3.1, 4.5].map(DirectionSpec::Theta).to_vec();
    let output = angular_scan(&config, &thetas).unwrap();
    assert!(output.all_converged());
    for row in &output.rows {
        let gamma = row.gamma.unwrap();
        assert!((gamma - 1.0).abs() < 1e-6, "{} {:?}: {gamma}", row.observable, row.theta);
    }
}
