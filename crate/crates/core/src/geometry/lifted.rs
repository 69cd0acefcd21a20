//! Vector fields on the state space `x = (q, q̇) ∈ ℝ²ⁿ`.
//!
//! A field in class `j` has its first `n` components homogeneous of degree
//! `j` in `q̇` and its last `n` components of degree `j + 1`. The geodesic
//! spray is in class 1, the damping lift in class 0 and input lifts in
//! class −1; brackets add classes.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::field::SharedField;
use crate::geometry::system::MechanicalSystem;
use crate::numeric::{central_jacobian, FD_STEP};

pub trait LiftedVectorField: Send + Sync {
    /// Configuration dimension `n`; the field lives on `ℝ²ⁿ`.
    fn dof(&self) -> usize;

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        central_jacobian(|y| self.eval(y), x, self.fd_step())
    }

    fn fd_step(&self) -> f64 {
        FD_STEP
    }

    /// Homogeneity class, when known.
    fn class(&self) -> Option<i32> {
        None
    }
}

pub type SharedLifted = Arc<dyn LiftedVectorField>;

fn split(x: &DVector<f64>, n: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    if x.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            actual: x.len(),
            context: "state-space point",
        });
    }
    Ok((x.rows(0, n).into_owned(), x.rows(n, n).into_owned()))
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.len();
    DVector::from_fn(2 * n, |i, _| if i < n { a[i] } else { b[i - n] })
}

/// Stacks `(q, q̇)` into a state-space point.
pub fn state_point(q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
    stack(q, qdot)
}

/// Geodesic spray `Z(q, q̇) = (q̇, −Γ(q, q̇))`.
#[derive(Clone, Debug)]
pub struct GeodesicSpray {
    sys: MechanicalSystem,
}

impl GeodesicSpray {
    pub fn new(sys: &MechanicalSystem) -> Self {
        GeodesicSpray { sys: sys.clone() }
    }
}

impl LiftedVectorField for GeodesicSpray {
    fn dof(&self) -> usize {
        self.sys.dof()
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (q, v) = split(x, self.dof())?;
        let gamma = self.sys.christoffel(&q)?;
        Ok(stack(&v, &(-gamma.quadratic(&v))))
    }

    /// The velocity block is analytic (`∂(−Γ(q,v))/∂v = −2Γ(·,v)`); the
    /// configuration block differentiates `Γ(q, v)` numerically.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dof();
        let (q, v) = split(x, n)?;
        let gamma = self.sys.christoffel(&q)?;
        let dq = central_jacobian(
            |p| Ok(-self.sys.christoffel(p)?.quadratic(&v)),
            &q,
            self.fd_step(),
        )?;
        let dv = gamma.contract_first(&v) * -2.0;
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        jac.view_mut((0, n), (n, n)).fill_with_identity();
        jac.view_mut((n, 0), (n, n)).copy_from(&dq);
        jac.view_mut((n, n), (n, n)).copy_from(&dv);
        Ok(jac)
    }

    fn class(&self) -> Option<i32> {
        Some(1)
    }
}

/// Vertical lift `Y^lift(q, q̇) = (0, Y(q))`.
#[derive(Clone)]
pub struct Lift {
    field: SharedField,
}

impl Lift {
    pub fn new(field: SharedField) -> Self {
        Lift { field }
    }
}

impl LiftedVectorField for Lift {
    fn dof(&self) -> usize {
        self.field.dim()
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dof();
        let (q, _) = split(x, n)?;
        Ok(stack(&DVector::zeros(n), &self.field.eval(&q)?))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dof();
        let (q, _) = split(x, n)?;
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        jac.view_mut((n, 0), (n, n))
            .copy_from(&self.field.jacobian(&q)?);
        Ok(jac)
    }

    fn class(&self) -> Option<i32> {
        Some(-1)
    }
}

/// Damping lift `k^lift(q, q̇) = (0, k(q)q̇)`.
#[derive(Clone, Debug)]
pub struct DampingLift {
    sys: MechanicalSystem,
}

impl DampingLift {
    pub fn new(sys: &MechanicalSystem) -> Self {
        DampingLift { sys: sys.clone() }
    }
}

impl LiftedVectorField for DampingLift {
    fn dof(&self) -> usize {
        self.sys.dof()
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dof();
        let (q, v) = split(x, n)?;
        Ok(stack(&DVector::zeros(n), &(self.sys.damping(&q) * v)))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dof();
        let (q, v) = split(x, n)?;
        let dq = central_jacobian(|p| Ok(self.sys.damping(p) * &v), &q, self.fd_step())?;
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        jac.view_mut((n, 0), (n, n)).copy_from(&dq);
        jac.view_mut((n, n), (n, n))
            .copy_from(&self.sys.damping(&q));
        Ok(jac)
    }

    fn class(&self) -> Option<i32> {
        Some(0)
    }
}

/// Lie bracket of two lifted fields; its class is the sum of the classes.
#[derive(Clone)]
pub struct LiftedBracket {
    a: SharedLifted,
    b: SharedLifted,
}

impl LiftedBracket {
    pub fn new(a: SharedLifted, b: SharedLifted) -> Self {
        LiftedBracket { a, b }
    }
}

impl LiftedVectorField for LiftedBracket {
    fn dof(&self) -> usize {
        self.a.dof()
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        lifted_bracket(self.a.as_ref(), self.b.as_ref(), x)
    }

    fn fd_step(&self) -> f64 {
        self.a.fd_step().max(self.b.fd_step())
    }

    fn class(&self) -> Option<i32> {
        Some(self.a.class()? + self.b.class()?)
    }
}

/// `[A, B](x) = DB(x)·A(x) − DA(x)·B(x)` on the state space.
pub fn lifted_bracket(
    a: &dyn LiftedVectorField,
    b: &dyn LiftedVectorField,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let va = a.eval(x)?;
    let vb = b.eval(x)?;
    Ok(b.jacobian(x)? * va - a.jacobian(x)? * vb)
}

/// Largest violation of the class-`class` scaling law under `q̇ ↦ λq̇`,
/// normalised by `max(1, ‖F(q, λq̇)‖∞)`.
///
/// For negative classes the configuration block must vanish identically.
pub fn homogeneity_defect(
    field: &dyn LiftedVectorField,
    class: i32,
    x: &DVector<f64>,
    lambda: f64,
) -> Result<f64> {
    let n = field.dof();
    let (q, v) = split(x, n)?;
    let base = field.eval(x)?;
    let scaled = field.eval(&stack(&q, &(v * lambda)))?;
    let top = if class < 0 { 0.0 } else { lambda.powi(class) };
    let bottom = if class + 1 < 0 {
        0.0
    } else {
        lambda.powi(class + 1)
    };
    let scale = scaled.amax().max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..2 * n {
        let expected = if i < n {
            top * base[i]
        } else {
            bottom * base[i]
        };
        worst = worst.max((scaled[i] - expected).abs());
    }
    Ok(worst / scale)
}
