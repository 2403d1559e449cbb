use super::*;
use crate::grom::tests::random_model;
use crate::grom::{grom_rhs, integrate_grom};
use crate::observations::{LayoutKind, ObservationDiagnostics, ObservationOperator, ObservationSet, ObservationSpace, SensorLayout};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1e-300)
}

fn random_state(r: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..r).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect()
}

fn step_map(m: &GromModel, a: &[f64], nu: &EddyViscosity, dt: f64) -> DVector<f64> {
    integrate_grom(m, a, nu, dt, 1).unwrap().state(1)
}

fn fd_jacobians(m: &GromModel, a: &[f64], nu: &EddyViscosity, f: impl Fn(&[f64], &EddyViscosity) -> DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eps = 1e-6;
    let r = a.len();
    let mut ja = DMatrix::zeros(r, r);
    for j in 0..r {
        let (mut ap, mut am) = (a.to_vec(), a.to_vec());
        ap[j] += eps;
        am[j] -= eps;
        ja.set_column(j, &((f(&ap, nu) - f(&am, nu)) / (2.0 * eps)));
    }
    let base = nu.values();
    let mut jn = DMatrix::zeros(r, base.len());
    for q in 0..base.len() {
        let (mut vp, mut vm) = (base.clone(), base.clone());
        vp[q] += eps;
        vm[q] -= eps;
        jn.set_column(q, &((f(a, &nu.with_values(&vp)) - f(a, &nu.with_values(&vm))) / (2.0 * eps)));
    }
    let _ = m;
    (ja, jn)
}

fn per_mode(r: usize, seed: u64) -> EddyViscosity {
    EddyViscosity::PerMode(random_state(r, seed, 0.01).iter().map(|v| v.abs()).collect())
}

#[test]
fn zero_state_jacobians() {
    let m = random_model(5, 1);
    let nu = 0.02;
    let (ja, jn) = continuous_jacobians(&m, &[0.0; 5], &EddyViscosity::Global(nu)).unwrap();
    assert!((ja - (m.l.transpose() + m.l_hat.transpose() * nu)).amax() < 1e-15);
    assert_eq!(jn.column(0).into_owned(), m.b_hat);
}

#[test]
fn continuous_jacobians_match_finite_differences() {
    for (seed, global) in [(1, true), (2, false), (3, true)] {
        let m = random_model(8, seed);
        let a = random_state(8, seed + 10, 1.0);
        let nu = if global { EddyViscosity::Global(0.01) } else { per_mode(8, seed) };
        let (ja, jn) = continuous_jacobians(&m, &a, &nu).unwrap();
        let (fa, fnu) = fd_jacobians(&m, &a, &nu, |x, n| grom_rhs(&m, x, n).unwrap());
        assert!(rel_err(&ja, &fa) < 1e-6);
        assert!(rel_err(&jn, &fnu) < 1e-6);
    }
}

#[test]
fn per_mode_parameter_jacobian_is_diagonal() {
    let m = random_model(6, 4);
    let (_, jn) = continuous_jacobians(&m, &random_state(6, 5, 1.0), &per_mode(6, 1)).unwrap();
    for k in 0..6 {
        for q in 0..6 {
            if q != k {
                assert_eq!(jn[(k, q)], 0.0);
            }
        }
        assert!(jn[(k, k)] != 0.0);
    }
}

#[test]
fn linear_rk4_jacobian_is_amplification_polynomial() {
    let lambda = [-2.0, -0.5, 1.0];
    let mut m = GromModel::zeros(3, 0.0);
    for (k, l) in lambda.iter().enumerate() {
        m.l[(k, k)] = *l;
    }
    let dt = 0.1;
    let (_, jac) = rk4_step_with_jacobians(&m, &[0.3, 0.1, -0.2], &EddyViscosity::Global(0.0), dt).unwrap();
    for k in 0..3 {
        let z: f64 = lambda[k] * dt;
        let amp = 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0;
        for j in 0..3 {
            let expected = if j == k { amp } else { 0.0 };
            assert!((jac.d_a[(k, j)] - expected).abs() < 1e-15);
        }
    }
    assert_eq!(jac.d_nu.amax(), 0.0);
}

#[test]
fn vanishing_step_gives_identity_map() {
    let m = random_model(5, 7);
    let (next, jac) = rk4_step_with_jacobians(&m, &random_state(5, 1, 1.0), &EddyViscosity::Global(0.01), 1e-14).unwrap();
    assert!((jac.d_a - DMatrix::identity(5, 5)).amax() < 1e-12);
    assert!(jac.d_nu.amax() < 1e-12);
    assert_eq!(next.len(), 5);
}

#[test]
fn rk4_step_matches_plain_integrator() {
    let m = random_model(6, 3);
    let a = random_state(6, 2, 1.0);
    let nu = per_mode(6, 3);
    let (next, _) = rk4_step_with_jacobians(&m, &a, &nu, 0.01).unwrap();
    assert_eq!(next, step_map(&m, &a, &nu, 0.01));
}

#[test]
fn propagation_base_case_and_linear_powers() {
    let m = random_model(4, 9);
    let a = random_state(4, 1, 0.5);
    let nu = EddyViscosity::Global(0.01);
    let (_, jac) = rk4_step_with_jacobians(&m, &a, &nu, 0.01).unwrap();
    let s1 = propagate_sensitivities(&SensitivityState::initial(4, 1, true), &jac).unwrap();
    assert_eq!(s1.v, jac.d_nu);
    assert_eq!(s1.u.as_ref().unwrap(), &jac.d_a);

    let mut lin = GromModel::zeros(2, 0.0);
    lin.l[(0, 0)] = -1.0;
    lin.l[(1, 1)] = -3.0;
    let dt = 0.05;
    let mut s = SensitivityState::initial(2, 1, true);
    let mut st = vec![1.0, 1.0];
    for _ in 0..20 {
        let (next, jac) = rk4_step_with_jacobians(&lin, &st, &EddyViscosity::Global(0.0), dt).unwrap();
        s = propagate_sensitivities(&s, &jac).unwrap();
        st = next.as_slice().to_vec();
    }
    for (k, l) in [-1.0f64, -3.0].iter().enumerate() {
        let z = l * dt;
        let amp: f64 = 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0;
        assert!((s.u.as_ref().unwrap()[(k, k)] - amp.powi(20)).abs() < 1e-14);
    }
}

#[test]
fn sensitivities_match_trajectory_perturbation() {
    for nu in [EddyViscosity::Global(0.01), per_mode(6, 2)] {
        let m = random_model(6, 11);
        let a0 = random_state(6, 3, 0.3);
        let dt = 0.01;
        let steps = 50;
        let mut s = SensitivityState::initial(6, nu.len(), false);
        let mut a = a0.clone();
        for _ in 0..steps {
            let (next, jac) = rk4_step_with_jacobians(&m, &a, &nu, dt).unwrap();
            s = propagate_sensitivities(&s, &jac).unwrap();
            a = next.as_slice().to_vec();
        }
        let eps = 1e-6;
        let base = nu.values();
        let mut fd = DMatrix::zeros(6, base.len());
        for q in 0..base.len() {
            let (mut p, mut n) = (base.clone(), base.clone());
            p[q] += eps;
            n[q] -= eps;
            let tp = integrate_grom(&m, &a0, &nu.with_values(&p), dt, steps).unwrap().state(steps);
            let tn = integrate_grom(&m, &a0, &nu.with_values(&n), dt, steps).unwrap().state(steps);
            fd.set_column(q, &((tp - tn) / (2.0 * eps)));
        }
        assert!(rel_err(&s.v, &fd) < 1e-5, "{}", rel_err(&s.v, &fd));
    }
}

#[test]
fn scalar_solve_and_fixed_point() {
    let d = assemble_and_solve(&[DMatrix::from_element(1, 1, 2.0)], &[DVector::from_element(1, 4.0)], 1.0).unwrap();
    assert!((d[0] - 2.0).abs() < 1e-15);
    let h = DMatrix::from_fn(5, 2, |i, j| (i + 2 * j) as f64 + 0.5);
    let zero = assemble_and_solve(&[h.clone()], &[DVector::zeros(5)], 0.1).unwrap();
    assert!(zero.iter().all(|v| *v == 0.0));
}

#[test]
fn weights_cancel_for_isotropic_noise() {
    let h = DMatrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.7);
    let e = DVector::from_fn(6, |i, _| (i as f64).sin());
    let d1 = assemble_and_solve(&[h.clone()], &[e.clone()], 0.1).unwrap();
    let d2 = assemble_and_solve(&[h.clone()], &[e.clone()], 3.0).unwrap();
    assert!((&d1 - &d2).amax() < 1e-12 * d1.amax());
    // two stacked blocks behave like one tall block
    let d3 = assemble_and_solve(&[h.rows(0, 2).into_owned(), h.rows(2, 4).into_owned()], &[e.rows(0, 2).into_owned(), e.rows(2, 4).into_owned()], 0.1).unwrap();
    assert!((&d1 - &d3).amax() < 1e-12 * d1.amax());
}

#[test]
fn underdetermined_branch_gives_minimum_norm_solution() {
    let h = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 2.0]);
    let d = assemble_and_solve(&[h.clone()], &[DVector::from_element(1, 9.0)], 0.5).unwrap();
    assert!((d - DVector::from_vec(vec![1.0, 2.0, 2.0])).amax() < 1e-14);
}

#[test]
fn singular_normal_equations_are_reported() {
    let h = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
    let r = assemble_and_solve(&[h], &[DVector::from_element(3, 1.0)], 1.0);
    assert!(matches!(r, Err(Error::SingularNormalEquations { .. })));
    assert!(assemble_and_solve(&[], &[], 1.0).is_err());
}

fn coefficient_obs(traj: &crate::grom::RomTrajectory, times: &[f64]) -> ObservationSet {
    let r = traj.coefficients.ncols();
    let cols: Vec<DVector<f64>> = times.iter().map(|&t| traj.state(traj.row_of_time(t).unwrap())).collect();
    ObservationSet {
        times: times.to_vec(),
        values: DMatrix::from_columns(&cols),
        sigma: 0.0,
        space: ObservationSpace::Coefficient,
        layout: SensorLayout { indices: (0..r).collect(), kind: LayoutKind::Full },
        seed: 0,
        diagnostics: ObservationDiagnostics::default(),
    }
}

/// A damped model with a mild quadratic term, so trajectories stay bounded.
fn stable_model(r: usize, seed: u64) -> GromModel {
    let mut m = random_model(r, seed);
    for k in 0..r {
        m.l[(k, k)] -= 2.0;
        m.l_hat[(k, k)] = -((k + 1) as f64).powi(2) * 10.0;
        m.n3[k] *= 0.1;
    }
    m
}

#[test]
fn twin_experiment_recovers_global_viscosity() {
    let m = stable_model(6, 21);
    let a0 = random_state(6, 4, 1.0);
    let truth = EddyViscosity::Global(0.005);
    let dt = 0.01;
    let traj = integrate_grom(&m, &a0, &truth, dt, 100).unwrap();
    let obs = coefficient_obs(&traj, &[0.25, 0.5]);
    let cfg = AssimilationConfig::new(1.0, vec![0.25, 0.5], dt, ViscosityMode::Global);
    let op = ObservationOperator::IdentityOnCoefficients { r: 6 };
    let res = estimate_eddy_viscosity(&m, &a0, &obs, &op, &cfg, &EddyViscosity::Global(0.0)).unwrap();
    assert!(res.converged && res.iterations <= 5, "{}", res.report());
    assert!((res.nu_e.at(0) - 0.005).abs() < 1e-8);
    assert!(res.report().contains("converged: true"));
}

#[test]
fn twin_experiment_recovers_per_mode_viscosity_and_initial_condition() {
    let m = stable_model(4, 5);
    let a0 = random_state(4, 8, 1.0);
    let truth = EddyViscosity::PerMode(vec![0.004, 0.002, 0.006, 0.001]);
    let dt = 0.01;
    let traj = integrate_grom(&m, &a0, &truth, dt, 100).unwrap();
    let times = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let obs = coefficient_obs(&traj, &times);
    let op = ObservationOperator::IdentityOnCoefficients { r: 4 };
    let mut cfg = AssimilationConfig::new(1.0, times.to_vec(), dt, ViscosityMode::PerMode);
    let res = estimate_eddy_viscosity(&m, &a0, &obs, &op, &cfg, &EddyViscosity::PerMode(vec![0.0; 4])).unwrap();
    assert!(res.converged);
    for k in 0..4 {
        assert!((res.nu_e.at(k) - truth.at(k)).abs() < 1e-8);
    }

    cfg.include_initial_condition = true;
    let mut guess = a0.clone();
    guess[0] += 0.05;
    let res = estimate_eddy_viscosity(&m, &guess, &obs, &op, &cfg, &EddyViscosity::PerMode(vec![0.0; 4])).unwrap();
    assert!(res.converged, "{}", res.report());
    let x0 = res.initial_condition.unwrap();
    for k in 0..4 {
        assert!((x0[k] - a0[k]).abs() < 1e-8);
        assert!((res.nu_e.at(k) - truth.at(k)).abs() < 1e-8);
    }
}

#[test]
fn single_mode_observation_updates_only_that_viscosity() {
    // a diagonal linear part keeps D_ν(M) diagonal through every RK4 stage
    let r = 4;
    let mut m = GromModel::zeros(r, 0.0);
    for k in 0..r {
        m.b[k] = 0.1 * (k + 1) as f64;
        m.l[(k, k)] = -1.0 - k as f64;
        m.b_hat[k] = -1.0;
        m.l_hat[(k, k)] = -(((k + 1) * (k + 1)) as f64);
    }
    let a0 = vec![1.0; r];
    let dt = 0.01;
    let traj = integrate_grom(&m, &a0, &EddyViscosity::PerMode(vec![0.01; r]), dt, 1).unwrap();
    let k = 2;
    let mut c = DMatrix::zeros(1, r);
    c[(0, k)] = 1.0;
    let op = ObservationOperator::ReconstructionMap { c_matrix: c, mean: DVector::zeros(1) };
    let obs = ObservationSet {
        times: vec![dt],
        values: DMatrix::from_element(1, 1, traj.state(1)[k]),
        sigma: 0.1,
        space: ObservationSpace::Field,
        layout: SensorLayout { indices: vec![0], kind: LayoutKind::Sparse },
        seed: 0,
        diagnostics: ObservationDiagnostics::default(),
    };
    let mut cfg = AssimilationConfig::new(dt, vec![dt], dt, ViscosityMode::PerMode);
    cfg.max_iter = 1;
    let res = estimate_eddy_viscosity(&m, &a0, &obs, &op, &cfg, &EddyViscosity::PerMode(vec![0.0; r])).unwrap();
    for q in 0..r {
        if q == k {
            assert!(res.nu_e.at(q) != 0.0);
        } else {
            assert_eq!(res.nu_e.at(q), 0.0);
        }
    }
}

#[test]
fn zero_residual_means_zero_update() {
    let m = stable_model(3, 2);
    let a0 = random_state(3, 1, 1.0);
    let nu = EddyViscosity::Global(0.003);
    let traj = integrate_grom(&m, &a0, &nu, 0.01, 50).unwrap();
    let obs = coefficient_obs(&traj, &[0.25, 0.5]);
    let cfg = AssimilationConfig::new(0.5, vec![0.25, 0.5], 0.01, ViscosityMode::Global);
    let op = ObservationOperator::IdentityOnCoefficients { r: 3 };
    let res = estimate_eddy_viscosity(&m, &a0, &obs, &op, &cfg, &nu).unwrap();
    assert_eq!(res.iterations, 1);
    assert_eq!(res.delta_history, vec![0.0]);
    assert_eq!(res.nu_e, nu);
}

#[test]
fn divergence_is_flagged() {
    let mut m = GromModel::zeros(1, 0.0);
    m.n3[0][(0, 0)] = 1.0;
    m.b_hat[0] = 1.0;
    let obs = ObservationSet {
        times: vec![5.0],
        values: DMatrix::from_element(1, 1, 0.0),
        sigma: 0.1,
        space: ObservationSpace::Coefficient,
        layout: SensorLayout { indices: vec![0], kind: LayoutKind::Full },
        seed: 0,
        diagnostics: ObservationDiagnostics::default(),
    };
    let cfg = AssimilationConfig::new(5.0, vec![5.0], 0.01, ViscosityMode::Global);
    let op = ObservationOperator::IdentityOnCoefficients { r: 1 };
    let res = estimate_eddy_viscosity(&m, &[1.0], &obs, &op, &cfg, &EddyViscosity::Global(0.0)).unwrap();
    assert!(res.failed && !res.converged);
}

#[test]
fn config_validation() {
    let mut cfg = AssimilationConfig::new(1.0, vec![0.25, 1.5], 0.01, ViscosityMode::Global);
    assert!(cfg.validate().is_err());
    cfg.obs_times = vec![0.255];
    assert!(cfg.validate().is_err());
    cfg.obs_times = vec![0.25];
    cfg.tol = 0.0;
    assert!(cfg.validate().is_err());
}

#[test]
fn csv_report() {
    let m = stable_model(3, 4);
    let a0 = random_state(3, 1, 1.0);
    let traj = integrate_grom(&m, &a0, &EddyViscosity::Global(0.002), 0.01, 50).unwrap();
    let obs = coefficient_obs(&traj, &[0.5]);
    let cfg = AssimilationConfig::new(0.5, vec![0.5], 0.01, ViscosityMode::Global);
    let op = ObservationOperator::IdentityOnCoefficients { r: 3 };
    let res = estimate_eddy_viscosity(&m, &a0, &obs, &op, &cfg, &EddyViscosity::Global(0.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("fsm.csv");
    res.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(p).unwrap();
    assert!(text.starts_with("iter,delta_inf,forecast_error,nu_0\n1,"));
    assert_eq!(text.lines().count(), res.iterations + 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn rk4_jacobians_match_finite_differences(seed in 0u64..10_000, big in any::<bool>(), global in any::<bool>()) {
        let r = if big { 16 } else { 8 };
        let m = random_model(r, seed);
        let a = random_state(r, seed + 1, 1.0);
        let nu = if global { EddyViscosity::Global(0.01) } else { per_mode(r, seed) };
        let dt = 0.01;
        let (_, jac) = rk4_step_with_jacobians(&m, &a, &nu, dt).unwrap();
        let (fa, fnu) = fd_jacobians(&m, &a, &nu, |x, n| step_map(&m, x, n, dt));
        prop_assert!(rel_err(&jac.d_a, &fa) < 1e-5);
        prop_assert!(rel_err(&jac.d_nu, &fnu) < 1e-5);
    }
}
