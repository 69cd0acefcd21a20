//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use geoctrl::geometry::MechanicalSystem;
use geoctrl::models::{self, ModelDescriptor};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-half_width..half_width))
}

/// Every built-in model with its default actuators, plus the other 3R pairs
/// and gravity switched on where the model has it.
pub fn all_models() -> Vec<(String, MechanicalSystem)> {
    let descs = [
        ModelDescriptor::new("flat")
            .param("dof", 3.0)
            .actuators(&[1, 3]),
        ModelDescriptor::new("pvtol"),
        ModelDescriptor::new("pvtol").param("gravity", 0.0),
        ModelDescriptor::new("planar-body").actuators(&[1, 2, 3]),
        ModelDescriptor::new("blimp"),
        ModelDescriptor::new("three-link").actuators(&[1, 2]),
        ModelDescriptor::new("three-link").actuators(&[1, 3]),
        ModelDescriptor::new("three-link")
            .actuators(&[2, 3])
            .param("gravity", models::GRAVITY),
    ];
    descs
        .iter()
        .map(|d| {
            (
                format!("{} {:?} {:?}", d.name, d.actuators, d.parameters),
                models::build(d).unwrap(),
            )
        })
        .collect()
}

/// Central-difference derivative of a matrix-valued map along coordinate `k`.
pub fn fd_matrix<F>(f: F, q: &DVector<f64>, k: usize, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut qp = q.clone();
    let mut qm = q.clone();
    qp[k] += h;
    qm[k] -= h;
    (f(&qp) - f(&qm)) / (2.0 * h)
}

/// Central-difference gradient of a scalar map.
pub fn fd_gradient<F>(f: F, q: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    DVector::from_fn(q.len(), |k, _| {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[k] += h;
        qm[k] -= h;
        (f(&qp) - f(&qm)) / (2.0 * h)
    })
}

/// Central-difference Jacobian of a vector-valued map.
pub fn fd_jacobian<F>(f: F, q: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = q.len();
    let rows = f(q).len();
    let mut jac = DMatrix::zeros(rows, n);
    for k in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[k] += h;
        qm[k] -= h;
        jac.set_column(k, &((f(&qp) - f(&qm)) / (2.0 * h)));
    }
    jac
}

/// Christoffel symbols straight from the defining formula, with `∂M`
/// taken by central differences of `M` alone. Indexed `[i][j][k]`.
pub fn christoffel_oracle(sys: &MechanicalSystem, q: &DVector<f64>, h: f64) -> Vec<Vec<Vec<f64>>> {
    let n = sys.dof();
    let dm: Vec<DMatrix<f64>> = (0..n)
        .map(|k| fd_matrix(|p| sys.inertia(p).unwrap(), q, k, h))
        .collect();
    let minv = sys.inertia(q).unwrap().try_inverse().unwrap();
    let mut g = vec![vec![vec![0.0; n]; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                g[i][j][k] = 0.5
                    * (0..n)
                        .map(|m| minv[(i, m)] * (dm[k][(m, j)] + dm[j][(m, k)] - dm[m][(j, k)]))
                        .sum::<f64>();
            }
        }
    }
    g
}

pub fn relative(err: f64, scale: f64) -> f64 {
    err / scale.max(1.0)
}
