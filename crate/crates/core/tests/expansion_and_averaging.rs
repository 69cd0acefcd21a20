use std::sync::Arc;

use geoctrl::dynamics::{IntegratorConfig, SecondOrderDynamics, State, TimeFn};
use geoctrl::models;
use geoctrl::oscillatory::{
    averaged_system, convergence_study, synthesize_controls, AveragedGains, ConvergenceOptions,
    Gain, GeneralAveragedSystem, DEFAULT_PERIOD,
};
use geoctrl::series::{truncation_study, ForcingField};
use nalgebra::DVector;

#[test]
fn series_agreement_improves_with_order() {
    let sys = models::planar_body(1.0, 1.0, 1.0, 0.0, &[1]).unwrap();
    let forcing = ForcingField::new(&sys, vec![Arc::new(|t: f64| t.sin()) as TimeFn]).unwrap();
    let cfg = IntegratorConfig::rk4(0.01);
    let errors: Vec<f64> = (1..=4)
        .map(|k| {
            truncation_study(&sys, &forcing, k, &DVector::zeros(3), 2.0, &[0.05], &cfg)
                .unwrap()
                .rows[0]
                .1
        })
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn truncation_rate_on_two_input_pvtol() {
    // gravity off: the series needs a system without potential; ε ladder stays above the RK4 floor
    let sys = models::pvtol(1.0, 1.0, 1.0, 0.0, &[0, 1]).unwrap();
    let forcing = ForcingField::new(
        &sys,
        vec![
            Arc::new(|t: f64| (2.0 * t).cos()) as TimeFn,
            Arc::new(|t: f64| t.sin()) as TimeFn,
        ],
    )
    .unwrap();
    let q0 = DVector::from_vec(vec![0.0, 0.0, 0.3]);
    let cfg = IntegratorConfig::rk4(0.01);
    for k in 1..=3 {
        let table = truncation_study(
            &sys,
            &forcing,
            k,
            &q0,
            2.0,
            &[0.04, 0.02, 0.01, 0.005],
            &cfg,
        )
        .unwrap();
        assert!(
            (table.slope - (k + 1) as f64).abs() < 0.3,
            "K = {k}: {:?}",
            table.rows
        );
    }
}

#[test]
fn damped_planar_body_tracks_its_average_at_rate_epsilon() {
    let sys = models::planar_body(1.0, 1.0, 1.0, 0.1, &[0, 1]).unwrap();
    let gains = AveragedGains::new(2)
        .with_input(0, Gain::Const(0.2))
        .unwrap()
        .with_pair(
            0,
            1,
            Gain::Sinusoid {
                amplitude: 0.5,
                omega: 2.0,
                phase: 0.3,
            },
        )
        .unwrap();
    let x0 = State::at_rest(DVector::zeros(3));
    let study = convergence_study(
        &sys,
        &gains,
        &x0,
        3.0,
        &[0.08, 0.04, 0.02],
        &ConvergenceOptions::default(),
    )
    .unwrap();
    assert!(study.is_monotone());
    assert!((0.7..=1.3).contains(&study.slope), "slope {}", study.slope);
}

#[test]
fn closed_form_average_matches_quadrature_average() {
    // three inputs on the planar body exercise every pair and the α terms
    let sys = models::planar_body(1.0, 1.0, 1.0, 0.1, &[0, 1, 2]).unwrap();
    let gains = AveragedGains::new(3)
        .with_input(0, Gain::Const(0.5))
        .unwrap()
        .with_input(
            2,
            Gain::Sinusoid {
                amplitude: 1.0,
                omega: 0.7,
                phase: 0.0,
            },
        )
        .unwrap()
        .with_pair(0, 1, Gain::Const(0.8))
        .unwrap()
        .with_pair(
            1,
            2,
            Gain::Sinusoid {
                amplitude: -0.6,
                omega: 1.1,
                phase: 0.4,
            },
        )
        .unwrap();
    let control = synthesize_controls(&sys, &gains, 0.05, DEFAULT_PERIOD).unwrap();
    let closed = averaged_system(&sys, &gains).unwrap();
    let oracle =
        GeneralAveragedSystem::new(&sys, control.slow_fn(), control.fast_fns(), DEFAULT_PERIOD)
            .unwrap();
    let none = DVector::zeros(0);
    for (t, q, v) in [
        (0.3, [0.1, -0.2, 0.7], [0.3, 0.0, -0.2]),
        (1.9, [-1.0, 0.4, -2.1], [0.0, 0.5, 0.9]),
    ] {
        let q = DVector::from_row_slice(&q);
        let v = DVector::from_row_slice(&v);
        let a = closed.acceleration(t, &q, &v, &none).unwrap();
        let b = oracle.acceleration(t, &q, &v, &none).unwrap();
        assert!((&a - &b).amax() < 1e-8, "{a} vs {b}");
    }
}
