mod common;

use common::{all_models, fd_gradient, fd_jacobian, fd_matrix, random_vector, rng};
use geoctrl::kinematic::{kinematic_controllability, DEFAULT_RANK_TOL};
use geoctrl::models::{self, ModelDescriptor};
use geoctrl::numeric::numerical_rank;
use geoctrl::oscillatory::{averaged_system, AveragedGains};
use nalgebra::DVector;

fn rel(err: f64, scale: f64) -> f64 {
    err / scale.max(1.0)
}

#[test]
fn analytic_derivatives_match_finite_differences() {
    let h = 1e-5;
    let mut r = rng(31);
    for (name, sys) in all_models() {
        let n = sys.dof();
        for _ in 0..100 {
            let q = random_vector(&mut r, n, 3.0);
            let partials = sys.inertia_partials(&q).unwrap();
            for (k, dm) in partials.iter().enumerate() {
                let fd = fd_matrix(|p| sys.inertia(p).unwrap(), &q, k, h);
                assert!(rel((dm - &fd).amax(), dm.amax()) < 1e-6, "{name}: ∂M/∂q{k}");
            }
            let grad = sys.potential_gradient(&q).unwrap();
            let fd = fd_gradient(|p| sys.potential(p), &q, h);
            assert!(rel((&grad - &fd).amax(), grad.amax()) < 1e-6, "{name}: ∂V");
            for a in 0..sys.input_count() {
                let jac = sys.covector_jacobian(a, &q).unwrap();
                let fd = fd_jacobian(|p| sys.covector(a, p).unwrap(), &q, h);
                assert!(rel((&jac - &fd).amax(), jac.amax()) < 1e-6, "{name}: ∂F{a}");
                let yjac = sys.input_field_jacobian(a, &q).unwrap();
                let fd = fd_jacobian(|p| sys.input_field(a, p).unwrap(), &q, h);
                assert!(
                    rel((&yjac - &fd).amax(), yjac.amax()) < 1e-6,
                    "{name}: ∂Y{a}"
                );
            }
        }
    }
}

#[test]
fn inertia_is_symmetric_positive_definite() {
    let mut r = rng(32);
    for (name, sys) in all_models() {
        for _ in 0..100 {
            let q = random_vector(&mut r, sys.dof(), 3.0);
            let m = sys.inertia(&q).unwrap();
            assert!((&m - m.transpose()).amax() <= 1e-12 * m.amax(), "{name}");
            let min_eig = m.symmetric_eigenvalues().min();
            assert!(min_eig > 0.0, "{name}: λmin = {min_eig}");
        }
    }
}

#[test]
fn flat_model_has_no_connection() {
    let sys = models::build(&ModelDescriptor::new("flat")).unwrap();
    assert_eq!((sys.dof(), sys.input_count()), (2, 1));
    let mut r = rng(33);
    for _ in 0..10 {
        let q = random_vector(&mut r, 2, 10.0);
        assert_eq!(sys.christoffel(&q).unwrap().max_abs(), 0.0);
        assert_eq!(
            sys.input_field(0, &q).unwrap(),
            DVector::from_vec(vec![1.0, 0.0])
        );
    }
}

#[test]
fn three_link_default_pair_is_kinematically_controllable() {
    let sys = models::build(&ModelDescriptor::new("three-link").actuators(&[1, 2])).unwrap();
    let q = DVector::from_vec(vec![0.4, -1.1, 0.8]);
    let report = kinematic_controllability(&sys, &q, 2, DEFAULT_RANK_TOL).unwrap();
    assert!(report.verdict);
    assert_eq!(report.rank, 3);
}

#[test]
fn pvtol_averaged_input_distribution_has_full_rank() {
    let sys = models::build(&ModelDescriptor::new("pvtol")).unwrap();
    assert_eq!((sys.dof(), sys.input_count()), (3, 2));
    let avg = averaged_system(&sys, &AveragedGains::new(2)).unwrap();
    let mut r = rng(34);
    for _ in 0..10 {
        let q = random_vector(&mut r, 3, 3.0);
        assert_eq!(
            numerical_rank(&avg.input_distribution(&q).unwrap(), 1e-8),
            3
        );
    }
}

#[test]
fn blimp_damping_defaults_to_point_one() {
    let sys = models::build(&ModelDescriptor::new("blimp")).unwrap();
    let k = sys.damping(&DVector::zeros(3));
    assert_eq!(k, nalgebra::DMatrix::identity(3, 3) * -0.1);
}
