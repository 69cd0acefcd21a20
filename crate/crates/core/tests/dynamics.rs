mod common;

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use common::{all_models, fd_gradient, fd_matrix, random_vector, rng};
use geoctrl::dynamics::{
    acceleration, reconstruct_inputs, simulate, IntegratorConfig, OpenLoop, State, TimeFn,
    Trajectory, ZeroControl,
};
use geoctrl::geometry::MechanicalSystem;
use geoctrl::models::{self, PlanarChain, GRAVITY};
use nalgebra::DVector;

/// `q̈` from `d/dt ∂L/∂q̇ − ∂L/∂q = Σ u_a F_a` with `L = ½q̇ᵀMq̇ − V`, plus
/// the additive damping term, using only `M`, `V`, `F_a` and `k`.
fn euler_lagrange(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    v: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    let h = 1e-5;
    let n = q.len();
    let m_dot = (0..n).fold(nalgebra::DMatrix::zeros(n, n), |acc, k| {
        acc + fd_matrix(|p| sys.inertia(p).unwrap(), q, k, h) * v[k]
    });
    let dkinetic = fd_gradient(|p| 0.5 * v.dot(&(sys.inertia(p).unwrap() * v)), q, h);
    let dpotential = fd_gradient(|p| sys.potential(p), q, h);
    let force = sys.covectors(q).unwrap() * u;
    let rhs = force + dkinetic - dpotential - m_dot * v;
    let mut acc = sys.inertia(q).unwrap().cholesky().unwrap().solve(&rhs);
    if sys.has_damping() {
        acc += sys.damping(q) * v;
    }
    acc
}

#[test]
fn accelerations_match_independent_lagrangian_derivation() {
    let mut r = rng(21);
    for (name, sys) in all_models() {
        for _ in 0..20 {
            let q = random_vector(&mut r, sys.dof(), 2.5);
            let v = random_vector(&mut r, sys.dof(), 1.5);
            let u = random_vector(&mut r, sys.input_count(), 2.0);
            let got = acceleration(&sys, &q, &v, &u).unwrap();
            let want = euler_lagrange(&sys, &q, &v, &u);
            let rel = (&got - &want).amax() / want.amax().max(1.0);
            assert!(rel < 1e-6, "{name}: {rel:.2e}");
        }
    }
}

#[test]
fn rk4_is_fourth_order_on_the_flat_system() {
    // q̈ = sin t from rest has q(t) = t − sin t.
    let sys = models::flat(1, 1.0, &[0]).unwrap();
    let control = OpenLoop::new(vec![Arc::new(f64::sin) as TimeFn]);
    let x0 = State::at_rest(DVector::zeros(1));
    let t1: f64 = 4.0;
    let exact = t1 - t1.sin();
    let errors: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&dt| {
            let traj = simulate(&sys, &control, &x0, 0.0, t1, &IntegratorConfig::rk4(dt)).unwrap();
            (traj.last().q[0] - exact).abs()
        })
        .collect();
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((3.5..=4.5).contains(&order), "{errors:?}");
    }

    // constant input: RK4 reproduces the parabola exactly
    let constant = OpenLoop::constant(&[2.0]);
    let traj = simulate(
        &sys,
        &constant,
        &State::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-0.5])),
        0.0,
        2.0,
        &IntegratorConfig::rk4(0.1),
    )
    .unwrap();
    let q = traj.last().q[0];
    assert!((q - (1.0 - 0.5 * 2.0 + 0.5 * 2.0 * 4.0)).abs() < 1e-12);
}

#[test]
fn three_link_energy_is_conserved() {
    let chain = PlanarChain::new(&[1.0; 3], &[1.0; 3], GRAVITY);
    let sys = chain.system(&[0, 1]).unwrap();
    let energy = |s: &State| {
        0.5 * s.qdot.dot(&(sys.inertia(&s.q).unwrap() * &s.qdot)) + chain.potential(&s.q)
    };
    let starts = [
        (vec![-FRAC_PI_2 + 0.4, 0.3, -0.2], vec![0.5, 0.0, 0.0]),
        (vec![-1.2, 0.3, -0.2], vec![0.5, 0.0, 0.0]),
        (vec![-FRAC_PI_2, 0.0, 0.0], vec![0.0, 0.8, -0.6]),
    ];
    for (q, v) in starts {
        let x0 = State::new(DVector::from_vec(q), DVector::from_vec(v));
        let e0 = energy(&x0);
        let traj = simulate(
            &sys,
            &ZeroControl(2),
            &x0,
            0.0,
            5.0,
            &IntegratorConfig::rk4(1e-3),
        )
        .unwrap();
        let drift = traj
            .states
            .iter()
            .map(|s| (energy(s) - e0).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-8, "drift {drift:.2e} from {:?}", x0.q.as_slice());
    }
}

#[test]
fn simulated_inputs_are_recovered_on_every_model() {
    for (name, sys) in all_models() {
        let m = sys.input_count();
        let signals: Vec<TimeFn> = (0..m)
            .map(|a| {
                let w = 1.0 + a as f64;
                Arc::new(move |t: f64| 0.4 * (w * t).sin() + 0.1) as TimeFn
            })
            .collect();
        let mut q0 = DVector::from_vec(vec![0.1; sys.dof()]);
        if name.starts_with("three-link") {
            q0[0] = -FRAC_PI_2 + 0.2;
        }
        let traj = simulate(
            &sys,
            &OpenLoop::new(signals),
            &State::at_rest(q0),
            0.0,
            1.0,
            &IntegratorConfig::rk4(1e-3),
        )
        .unwrap();
        let rec = reconstruct_inputs(&sys, &traj).unwrap();
        assert!(rec.flagged.is_empty(), "{name}");
        assert_eq!(rec.samples.len(), traj.len() - 2);
        for (&i, u) in rec.samples.iter().zip(&rec.inputs) {
            let truth = &traj.inputs[i];
            let rel = (u - truth).amax() / truth.amax().max(1.0);
            assert!(rel < 1e-4, "{name} sample {i}: {rel:.2e}");
        }
    }
}

#[test]
fn fully_actuated_reconstruction_is_exact_along_any_curve() {
    let sys = models::planar_body(1.0, 1.0, 1.0, 0.0, &[0, 1, 2]).unwrap();
    let dt = 0.01;
    let states: Vec<State> = (0..=100)
        .map(|i| {
            let t = i as f64 * dt;
            State::new(
                DVector::from_vec(vec![t.sin(), t * t, (2.0 * t).cos()]),
                DVector::from_vec(vec![t.cos(), 2.0 * t, -2.0 * (2.0 * t).sin()]),
            )
        })
        .collect();
    let traj = Trajectory {
        t0: 0.0,
        t1: 1.0,
        dt,
        inputs: vec![DVector::zeros(3); states.len()],
        states,
        accelerations: None,
    };
    let rec = reconstruct_inputs(&sys, &traj).unwrap();
    assert!(rec.max_residual() < 1e-8, "{:.2e}", rec.max_residual());
}

#[test]
fn simulation_is_bitwise_deterministic() {
    let sys = models::three_link(&[0, 2]).unwrap();
    let control = OpenLoop::new(vec![
        Arc::new(|t: f64| t.cos()) as TimeFn,
        Arc::new(|t: f64| 0.3 * t) as TimeFn,
    ]);
    let x0 = State::new(
        DVector::from_vec(vec![0.1, 0.2, 0.3]),
        DVector::from_vec(vec![0.0, -0.1, 0.2]),
    );
    let cfg = IntegratorConfig::rk4(0.005);
    let a = simulate(&sys, &control, &x0, 0.0, 2.0, &cfg).unwrap();
    let b = simulate(&sys, &control, &x0, 0.0, 2.0, &cfg).unwrap();
    assert_eq!(a, b);
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    a.write_csv(&mut csv_a).unwrap();
    b.write_csv(&mut csv_b).unwrap();
    assert_eq!(csv_a, csv_b);
}
