use koopdyn_core::dynamics::{
    integrate, linear_system, nonlinear_2d_system, pde_bump_modes, synthetic_pde_trajectory, TimeGrid,
};
use koopdyn_core::koopman::{
    kef_family_power, koopman_mode_check, linear_kef, mode_decomposition_residual, nonlinear_2d_kefs,
    observability_rank, reconstruct_dynamics, time_mapping_from_modes, KefVector, Verdict,
};
use koopdyn_core::profiles::{build_dictionary, ProfileFamily, ProfileKind};
use koopdyn_core::sparse::SparseDecomposition;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

fn c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

/// `x1 = phi1` and `x2 = 2 phi1 - phi2^2`, so `x = V [phi1, phi2^2]`.
fn nonlinear_pair() -> (DMatrix<f64>, KefVector) {
    let (phi1, phi2) = nonlinear_2d_kefs();
    let sq = kef_family_power(&phi2, c(2.0)).unwrap();
    let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, -1.0]);
    (v, KefVector::new(vec![phi1, sq]))
}

#[test]
fn state_is_a_linear_combination_of_eigenfunctions() {
    let grid = TimeGrid::uniform(0.0, 1.0, 101).unwrap();
    let sys = nonlinear_2d_system();
    let traj = sys.sample_closed_form(&grid).unwrap().unwrap();
    let (v, kefs) = nonlinear_pair();
    assert_eq!(kefs.eigenvalues()[1], c(2.0));
    assert!(mode_decomposition_residual(&v, &kefs, &traj).unwrap() <= 1e-8);
}

#[test]
fn velocity_is_fixed_by_mode_times_gradient() {
    // x = V phi(x) implies V J(x) = I, so every velocity is preserved
    let grid = TimeGrid::uniform(0.0, 1.0, 1001).unwrap();
    let traj = integrate(&nonlinear_2d_system(), &DVector::from_vec(vec![1.0, 1.0]), &grid).unwrap();
    let (v, kefs) = nonlinear_pair();
    assert!(koopman_mode_check(&v, &kefs, &traj, None).unwrap() < 1e-7);
}

#[test]
fn linear_eigenfunctions_reconstruct_the_vector_field() {
    // A = S diag(-1, -0.3) S^-1; rows of S^-1 are the left eigenvectors
    let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]);
    let s_inv = s.clone().try_inverse().unwrap();
    let a = &s * DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -0.3])) * &s_inv;
    let kefs = KefVector::new(
        [-1.0, -0.3]
            .iter()
            .enumerate()
            .map(|(i, &l)| linear_kef(s_inv.row(i).transpose().map(c), c(l)))
            .collect(),
    );
    for x in [[0.3, -1.2], [2.0, 0.5], [-0.7, 0.1]] {
        let x = DVector::from_row_slice(&x);
        let p = reconstruct_dynamics(&kefs, &x, 1e-4).unwrap();
        assert!((&p - &a * &x).norm() <= 1e-8 * (&a * &x).norm(), "{p} vs {}", &a * &x);
    }
    let x0 = DVector::from_vec(vec![1.0, 1.0]);
    let grid = TimeGrid::uniform(0.0, 2.0, 21).unwrap();
    let traj = integrate(&linear_system(a, x0.clone()).unwrap(), &x0, &grid).unwrap();
    let rep = observability_rank(&kefs, &traj, None, 1e-8);
    assert_eq!(rep.verdict, Verdict::FullyObservable);
    assert!(rep.ranks.iter().all(|&r| r == 2));
}

#[test]
fn powers_of_one_ancestor_are_not_observable() {
    let grid = TimeGrid::uniform(0.0, 1.0, 21).unwrap();
    let traj = nonlinear_2d_system().sample_closed_form(&grid).unwrap().unwrap();
    let (phi1, _) = nonlinear_2d_kefs();
    let stack = KefVector::new(vec![phi1.clone(), kef_family_power(&phi1, c(3.0)).unwrap()]);
    let rep = observability_rank(&stack, &traj, None, 1e-8);
    assert_eq!(rep.verdict, Verdict::RankDeficient);
    assert!(rep.ranks.iter().all(|&r| r == 1));
}

#[test]
fn exact_modes_map_snapshots_back_to_time() {
    let grid = TimeGrid::uniform(0.0, 35.0, 351).unwrap();
    let (v1, v2) = pde_bump_modes(80);
    let traj = synthetic_pde_trajectory(&v1, &v2, 0.1, 1.0 / 30.0, &grid).unwrap();
    let fam = ProfileFamily::new(ProfileKind::TruncatedLinear, vec![1.0 / 30.0, 0.1]).unwrap();
    let dict = build_dictionary(&fam, &grid).unwrap();
    let modes = DMatrix::from_columns(&[v2, v1]);
    let dec = SparseDecomposition::from_parts(traj.states(), &dict, vec![0, 1], modes, 0.0).unwrap();
    assert!(dec.residual < 1e-14);
    let rep = time_mapping_from_modes(&dec, traj.states()).unwrap();
    for (i, row) in rep.times.iter().enumerate() {
        let extinct = 1.0 / dec.lambdas[i];
        for (k, t) in row.iter().enumerate() {
            let truth = grid.points()[k];
            match t {
                Some(t) => assert!((t - truth).abs() < 1e-9, "atom {i} at {truth}: {t}"),
                None => assert!(truth >= extinct - 1e-9, "atom {i} lost at {truth}"),
            }
        }
    }
    // both clocks agree while both profiles are alive
    assert!(rep.max_disagreement < 1e-9);
}
