//! Forward simulation of the forced mechanical dynamics with fixed-step RK4,
//! trajectory containers and input reconstruction along sampled curves.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::MechanicalSystem;
use crate::numeric::fmt17;

/// A point `(q, q̇)` of the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl State {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Self {
        State { q, qdot }
    }

    /// Configuration `q` with zero velocity.
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        State {
            q,
            qdot: DVector::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

/// A control law `(t, q, q̇) ↦ u ∈ ℝᵐ`.
pub trait ControlLaw: Send + Sync {
    fn input_count(&self) -> usize;

    fn eval(&self, t: f64, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>>;

    /// Shortest period present in the signal, used to warn about coarse steps.
    fn fastest_period(&self) -> Option<f64> {
        None
    }
}

/// `u ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroControl(pub usize);

impl ControlLaw for ZeroControl {
    fn input_count(&self) -> usize {
        self.0
    }

    fn eval(&self, _t: f64, _q: &DVector<f64>, _qdot: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.0))
    }
}

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Open-loop inputs `u_a(t)`.
#[derive(Clone)]
pub struct OpenLoop {
    signals: Vec<TimeFn>,
}

impl OpenLoop {
    pub fn new(signals: Vec<TimeFn>) -> Self {
        OpenLoop { signals }
    }

    pub fn constant(values: &[f64]) -> Self {
        OpenLoop {
            signals: values
                .iter()
                .map(|&v| Arc::new(move |_t: f64| v) as TimeFn)
                .collect(),
        }
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.signals.len(), self.signals.iter().map(|s| s(t)))
    }
}

impl ControlLaw for OpenLoop {
    fn input_count(&self) -> usize {
        self.signals.len()
    }

    fn eval(&self, t: f64, _q: &DVector<f64>, _qdot: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.at(t))
    }
}

/// Feedback law backed by a closure.
pub struct FnControl<F> {
    m: usize,
    f: F,
}

impl<F> FnControl<F>
where
    F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync,
{
    pub fn new(m: usize, f: F) -> Self {
        FnControl { m, f }
    }
}

impl<F> ControlLaw for FnControl<F>
where
    F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn input_count(&self) -> usize {
        self.m
    }

    fn eval(&self, t: f64, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.f)(t, q, qdot))
    }
}

/// Any second-order system `q̈ = a(t, q, q̇, u)` that [`simulate`] can drive.
pub trait SecondOrderDynamics: Send + Sync {
    fn dof(&self) -> usize;

    fn input_count(&self) -> usize;

    fn acceleration(
        &self,
        t: f64,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>>;
}

impl SecondOrderDynamics for MechanicalSystem {
    fn dof(&self) -> usize {
        MechanicalSystem::dof(self)
    }

    fn input_count(&self) -> usize {
        MechanicalSystem::input_count(self)
    }

    fn acceleration(
        &self,
        _t: f64,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        acceleration(self, q, qdot, u)
    }
}

/// `q̈ = −Γ(q,q̇) − M⁻¹∂V/∂q + k(q)q̇ + Σ_a Y_a(q)u_a`.
pub fn acceleration(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    sys.check_dim(qdot, "velocity")?;
    if u.len() != sys.input_count() {
        return Err(Error::DimensionMismatch {
            expected: sys.input_count(),
            actual: u.len(),
            context: "input vector",
        });
    }
    let factor = sys.factor_inertia(q)?;
    let gamma = sys.christoffel(q)?;
    let mut force = -sys.potential_gradient(q)?;
    if u.len() > 0 {
        force += sys.covectors(q)? * u;
    }
    let mut acc = factor.solve(&force) - gamma.quadratic(qdot);
    if sys.has_damping() {
        acc += sys.damping(q) * qdot;
    }
    Ok(acc)
}

/// First-order right-hand side `(q̇, q̈)` of the forced dynamics.
pub fn dynamics_rhs(
    sys: &MechanicalSystem,
    state: &State,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let acc = acceleration(sys, &state.q, &state.qdot, u)?;
    Ok(stack(&state.qdot, &acc))
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.len();
    DVector::from_fn(n + b.len(), |i, _| if i < n { a[i] } else { b[i - n] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Rk4,
}

/// Fixed-step integrator settings. With `dense_output` the trajectory also
/// records the accelerations evaluated at every sample.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorConfig {
    #[serde(default)]
    pub method: Method,
    pub dt: f64,
    #[serde(default)]
    pub dense_output: bool,
}

impl IntegratorConfig {
    pub fn rk4(dt: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk4,
            dt,
            dense_output: false,
        }
    }

    pub fn with_dense_output(mut self) -> Self {
        self.dense_output = true;
        self
    }

    /// Number of steps covering `[t0, t1]`; `dt` must divide the span.
    pub fn steps(&self, t0: f64, t1: f64) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Precondition(format!(
                "time step {} must be positive",
                self.dt
            )));
        }
        let span = t1 - t0;
        if !(span >= 0.0) {
            return Err(Error::Precondition(format!(
                "empty time interval [{t0}, {t1}]"
            )));
        }
        let steps = (span / self.dt).round();
        if (steps * self.dt - span).abs() > 1e-12 * span.max(1.0) {
            return Err(Error::Precondition(format!(
                "time step {} does not divide the interval length {span}",
                self.dt
            )));
        }
        Ok(steps as usize)
    }
}

/// Uniformly sampled states and inputs on `[t0, t1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub states: Vec<State>,
    pub inputs: Vec<DVector<f64>>,
    /// Accelerations at each sample, when the producer knows them.
    pub accelerations: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn last(&self) -> &State {
        self.states
            .last()
            .expect("trajectory has at least one sample")
    }

    pub fn dof(&self) -> usize {
        self.states.first().map_or(0, |s| s.q.len())
    }

    pub fn input_count(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    /// `max_i ‖q_i − q'_i‖` over samples shared by both trajectories.
    /// Both must be sampled on the same grid.
    pub fn max_configuration_error(&self, other: &Trajectory) -> Result<f64> {
        if self.len() != other.len() || (self.dt - other.dt).abs() > 1e-12 * self.dt.abs().max(1.0)
        {
            return Err(Error::Precondition(format!(
                "trajectories sampled differently ({} samples, dt {} vs {} samples, dt {})",
                self.len(),
                self.dt,
                other.len(),
                other.dt
            )));
        }
        Ok(self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (&a.q - &b.q).norm())
            .fold(0.0, f64::max))
    }

    /// CSV with header `t,q1..qn,qd1..qdn,u1..um`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.dof();
        let m = self.input_count();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("q{i}")));
        header.extend((1..=n).map(|i| format!("qd{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (i, s) in self.states.iter().enumerate() {
            let mut row = vec![fmt17(self.time(i))];
            row.extend(s.q.iter().map(|v| fmt17(*v)));
            row.extend(s.qdot.iter().map(|v| fmt17(*v)));
            if let Some(u) = self.inputs.get(i) {
                row.extend(u.iter().map(|v| fmt17(*v)));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Integrates the dynamics under `control` from `x0` over `[t0, t1]` with
/// fixed-step RK4. The control is evaluated at every stage time; recorded
/// inputs are its values at the sample times.
pub fn simulate<D>(
    dynamics: &D,
    control: &dyn ControlLaw,
    x0: &State,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory>
where
    D: SecondOrderDynamics + ?Sized,
{
    let n = dynamics.dof();
    if x0.q.len() != n || x0.qdot.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x0.q.len(),
            context: "initial state",
        });
    }
    if control.input_count() != dynamics.input_count() {
        return Err(Error::DimensionMismatch {
            expected: dynamics.input_count(),
            actual: control.input_count(),
            context: "control law inputs",
        });
    }
    let steps = cfg.steps(t0, t1)?;
    let dt = cfg.dt;
    if let Some(period) = control.fastest_period() {
        if dt > period / 50.0 {
            log::warn!(
                "time step {dt:.3e} under-resolves the fastest input period {period:.3e} (want dt <= period/50)"
            );
        }
    }
    if !x0.is_finite() {
        return Err(Error::NonFiniteState { time: t0 });
    }

    let deriv =
        |t: f64, q: &DVector<f64>, v: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
            let u = control.eval(t, q, v)?;
            let a = dynamics.acceleration(t, q, v, &u)?;
            Ok((v.clone(), a))
        };

    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut accels = cfg.dense_output.then(|| Vec::with_capacity(steps + 1));
    let mut q = x0.q.clone();
    let mut v = x0.qdot.clone();

    for i in 0..=steps {
        let t = t0 + i as f64 * dt;
        let u = control.eval(t, &q, &v)?;
        if let Some(acc) = accels.as_mut() {
            acc.push(dynamics.acceleration(t, &q, &v, &u)?);
        }
        states.push(State::new(q.clone(), v.clone()));
        inputs.push(u);
        if i == steps {
            break;
        }
        let h = dt;
        let (k1q, k1v) = deriv(t, &q, &v)?;
        let (k2q, k2v) = deriv(
            t + 0.5 * h,
            &(&q + &k1q * (0.5 * h)),
            &(&v + &k1v * (0.5 * h)),
        )?;
        let (k3q, k3v) = deriv(
            t + 0.5 * h,
            &(&q + &k2q * (0.5 * h)),
            &(&v + &k2v * (0.5 * h)),
        )?;
        let (k4q, k4v) = deriv(t + h, &(&q + &k3q * h), &(&v + &k3v * h))?;
        q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        if q.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { time: t + h });
        }
    }

    Ok(Trajectory {
        t0,
        t1,
        dt,
        states,
        inputs,
        accelerations: accels,
    })
}

/// Where the accelerations used by [`reconstruct_inputs_with`] come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccelerationSource {
    /// Second-order central differences of the sampled velocities; the two
    /// endpoint samples are dropped.
    CentralDifference,
    /// Accelerations recorded in the trajectory (all samples).
    Recorded,
}

/// Inputs recovered along a trajectory, one entry per reconstructed sample.
#[derive(Debug, Clone)]
pub struct InputReconstruction {
    pub samples: Vec<usize>,
    pub times: Vec<f64>,
    pub inputs: Vec<DVector<f64>>,
    /// `‖f − Σ u_a F_a‖ / max(1, ‖f‖)`; `+∞` at flagged samples.
    pub residuals: Vec<f64>,
    /// Samples where the input co-vectors were rank deficient.
    pub flagged: Vec<usize>,
}

impl InputReconstruction {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }

    /// Position of the worst residual in `samples`.
    pub fn worst(&self) -> Option<(usize, f64)> {
        self.residuals
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (i, &r)| match acc {
                Some((_, best)) if best >= r => acc,
                _ => Some((self.samples[i], r)),
            })
    }
}

/// Reconstructs the inputs that realise `traj` using central-difference
/// accelerations.
pub fn reconstruct_inputs(
    sys: &MechanicalSystem,
    traj: &Trajectory,
) -> Result<InputReconstruction> {
    reconstruct_inputs_with(sys, traj, AccelerationSource::CentralDifference)
}

/// Solves `M(q̈ + Γ(q,q̇)) + ∂V/∂q − M k(q) q̇ ≈ Σ_a u_a F_a(q)` in the
/// least-squares sense at every sample.
pub fn reconstruct_inputs_with(
    sys: &MechanicalSystem,
    traj: &Trajectory,
    source: AccelerationSource,
) -> Result<InputReconstruction> {
    let len = traj.len();
    let samples: Vec<usize> = match source {
        AccelerationSource::CentralDifference => {
            if len < 3 {
                return Err(Error::Precondition(
                    "need at least three samples for central differences".into(),
                ));
            }
            (1..len - 1).collect()
        }
        AccelerationSource::Recorded => {
            match &traj.accelerations {
                Some(a) if a.len() == len => {}
                _ => {
                    return Err(Error::Precondition(
                        "trajectory carries no recorded accelerations".into(),
                    ))
                }
            }
            (0..len).collect()
        }
    };

    let mut out = InputReconstruction {
        samples: Vec::with_capacity(samples.len()),
        times: Vec::with_capacity(samples.len()),
        inputs: Vec::with_capacity(samples.len()),
        residuals: Vec::with_capacity(samples.len()),
        flagged: Vec::new(),
    };
    let m = sys.input_count();
    for i in samples {
        let s = &traj.states[i];
        let qddot = match source {
            AccelerationSource::CentralDifference => {
                (&traj.states[i + 1].qdot - &traj.states[i - 1].qdot) / (2.0 * traj.dt)
            }
            AccelerationSource::Recorded => {
                traj.accelerations.as_ref().expect("checked")[i].clone()
            }
        };
        let (u, residual) = solve_inputs(sys, &s.q, &s.qdot, &qddot)?;
        out.samples.push(i);
        out.times.push(traj.time(i));
        match u {
            Some(u) => {
                out.inputs.push(u);
                out.residuals.push(residual);
            }
            None => {
                out.inputs.push(DVector::from_element(m, f64::NAN));
                out.residuals.push(f64::INFINITY);
                out.flagged.push(i);
            }
        }
    }
    Ok(out)
}

/// Generalised force required for `(q, q̇, q̈)` and its least-squares
/// decomposition on the input co-vectors. `None` when they are rank deficient.
pub fn solve_inputs(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
) -> Result<(Option<DVector<f64>>, f64)> {
    let mass = sys.inertia(q)?;
    let gamma = sys.christoffel(q)?;
    let mut f = &mass * (qddot + gamma.quadratic(qdot)) + sys.potential_gradient(q)?;
    if sys.has_damping() {
        f -= &mass * (sys.damping(q) * qdot);
    }
    let cov: DMatrix<f64> = sys.covectors(q)?;
    let fnorm = f.norm();
    if cov.ncols() == 0 {
        return Ok((Some(DVector::zeros(0)), fnorm / fnorm.max(1.0)));
    }
    let svd = cov.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin <= 1e-10 * smax {
        return Ok((None, f64::INFINITY));
    }
    let u = svd
        .solve(&f, 0.0)
        .map_err(|e| Error::Precondition(format!("least-squares solve failed: {e}")))?;
    let residual = (&f - &cov * &u).norm() / fnorm.max(1.0);
    Ok((Some(u), residual))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> MechanicalSystem {
        MechanicalSystem::builder(2, |_| DMatrix::identity(2, 2))
            .input(|_| DVector::from_vec(vec![1.0, 0.0]))
            .build()
            .unwrap()
    }

    #[test]
    fn equilibrium_rhs_is_zero() {
        let sys = flat();
        let x = State::at_rest(DVector::from_vec(vec![0.3, 0.1]));
        let r = dynamics_rhs(&sys, &x, &DVector::zeros(1)).unwrap();
        assert_eq!(r.norm(), 0.0);
    }

    #[test]
    fn flat_rhs_with_unit_input() {
        let sys = flat();
        let x = State::new(
            DVector::from_vec(vec![0.3, 0.1]),
            DVector::from_vec(vec![2.0, -1.0]),
        );
        let r = dynamics_rhs(&sys, &x, &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(r, DVector::from_vec(vec![2.0, -1.0, 1.0, 0.0]));
    }

    #[test]
    fn sample_count_and_divisibility() {
        let cfg = IntegratorConfig::rk4(0.1);
        assert_eq!(cfg.steps(0.0, 1.0).unwrap(), 10);
        assert!(IntegratorConfig::rk4(0.3).steps(0.0, 1.0).is_err());
        assert!(IntegratorConfig::rk4(-0.1).steps(0.0, 1.0).is_err());
    }

    #[test]
    fn stationary_without_input() {
        let sys = flat();
        let x0 = State::at_rest(DVector::from_vec(vec![1.0, 2.0]));
        let traj = simulate(
            &sys,
            &ZeroControl(1),
            &x0,
            0.0,
            1.0,
            &IntegratorConfig::rk4(0.01),
        )
        .unwrap();
        assert_eq!(traj.len(), 101);
        assert!(traj.states.iter().all(|s| s == &x0));
    }

    #[test]
    fn divergence_reports_time() {
        let sys = MechanicalSystem::builder(1, |_| DMatrix::identity(1, 1))
            .input(|_| DVector::from_element(1, 1.0))
            .build()
            .unwrap();
        let control = FnControl::new(1, |_t, q: &DVector<f64>, _v: &DVector<f64>| {
            DVector::from_element(1, q[0].powi(3) * 1e3)
        });
        let x0 = State::new(
            DVector::from_element(1, 10.0),
            DVector::from_element(1, 0.0),
        );
        let err =
            simulate(&sys, &control, &x0, 0.0, 10.0, &IntegratorConfig::rk4(0.1)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { time } if time > 0.0));
    }

    #[test]
    fn rank_deficient_inputs_are_flagged() {
        let sys = MechanicalSystem::builder(2, |_| DMatrix::identity(2, 2))
            .input(|q: &DVector<f64>| DVector::from_vec(vec![q[0], 0.0]))
            .build()
            .unwrap();
        let x0 = State::at_rest(DVector::from_vec(vec![0.0, 0.0]));
        let traj = simulate(
            &sys,
            &ZeroControl(1),
            &x0,
            0.0,
            0.1,
            &IntegratorConfig::rk4(0.01),
        )
        .unwrap();
        let rec = reconstruct_inputs(&sys, &traj).unwrap();
        assert_eq!(rec.flagged.len(), traj.len() - 2);
        assert!(rec.max_residual().is_infinite());
    }

    #[test]
    fn csv_header_and_precision() {
        let sys = flat();
        let x0 = State::at_rest(DVector::from_vec(vec![1.0 / 3.0, 0.0]));
        let traj = simulate(
            &sys,
            &ZeroControl(1),
            &x0,
            0.0,
            0.02,
            &IntegratorConfig::rk4(0.01),
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,q1,q2,qd1,qd2,u1");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 6);
        let parsed: f64 = first[1].parse().unwrap();
        assert_eq!(parsed, 1.0 / 3.0);
        assert_eq!(first[1], "3.3333333333333331e-1");
    }
}
