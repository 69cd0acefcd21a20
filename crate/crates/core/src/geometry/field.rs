use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::system::MechanicalSystem;
use crate::geometry::{lie_bracket_parts, symmetric_product_parts};
use crate::numeric::{central_jacobian, FD_STEP};

/// A vector field on configuration space with Jacobian access.
///
/// The default Jacobian is a central difference of [`VectorField::eval`]
/// with step [`VectorField::fd_step`].
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, q: &DVector<f64>) -> Result<DVector<f64>>;

    /// `J[i][j] = ∂Yⁱ/∂qʲ`.
    fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        central_jacobian(|x| self.eval(x), q, self.fd_step())
    }

    fn fd_step(&self) -> f64 {
        FD_STEP
    }
}

pub type SharedField = Arc<dyn VectorField>;

type FieldFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type FieldJacFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Vector field backed by closures.
#[derive(Clone)]
pub struct FnField {
    n: usize,
    f: FieldFn,
    jac: Option<FieldJacFn>,
}

impl FnField {
    pub fn new<F>(n: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        FnField {
            n,
            f: Arc::new(f),
            jac: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    pub fn constant(v: DVector<f64>) -> Self {
        let n = v.len();
        FnField::new(n, move |_| v.clone()).with_jacobian(move |_| DMatrix::zeros(n, n))
    }

    pub fn shared(self) -> SharedField {
        Arc::new(self)
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        if q.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: q.len(),
                context: "vector field argument",
            });
        }
        Ok((self.f)(q))
    }

    fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.jac {
            Some(j) => Ok(j(q)),
            None => central_jacobian(|x| self.eval(x), q, self.fd_step()),
        }
    }
}

/// Input vector field `Y_a = M⁻¹F_a` of a system; the Jacobian follows the
/// system's derivative provider.
#[derive(Clone, Debug)]
pub struct InputField {
    sys: MechanicalSystem,
    index: usize,
}

impl InputField {
    pub fn new(sys: &MechanicalSystem, index: usize) -> Result<Self> {
        if index >= sys.input_count() {
            return Err(Error::Precondition(format!(
                "input index {index} out of range"
            )));
        }
        Ok(InputField {
            sys: sys.clone(),
            index,
        })
    }

    /// All input fields of `sys`, in order.
    pub fn all(sys: &MechanicalSystem) -> Vec<SharedField> {
        (0..sys.input_count())
            .map(|a| {
                Arc::new(InputField {
                    sys: sys.clone(),
                    index: a,
                }) as SharedField
            })
            .collect()
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

impl VectorField for InputField {
    fn dim(&self) -> usize {
        self.sys.dof()
    }

    fn eval(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.sys.input_field(self.index, q)
    }

    fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.sys.input_field_jacobian(self.index, q)
    }
}

/// Conservative force field `Y₀ = −M⁻¹∂V/∂q`.
#[derive(Clone, Debug)]
pub struct PotentialForceField {
    sys: MechanicalSystem,
}

impl PotentialForceField {
    pub fn new(sys: &MechanicalSystem) -> Self {
        PotentialForceField { sys: sys.clone() }
    }
}

impl VectorField for PotentialForceField {
    fn dim(&self) -> usize {
        self.sys.dof()
    }

    fn eval(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let factor = self.sys.factor_inertia(q)?;
        Ok(-factor.solve(&self.sys.potential_gradient(q)?))
    }
}

/// Symmetric product `⟨A:B⟩` as a field in its own right.
#[derive(Clone)]
pub struct SymmetricProductField {
    sys: MechanicalSystem,
    a: SharedField,
    b: SharedField,
}

impl SymmetricProductField {
    pub fn new(sys: &MechanicalSystem, a: SharedField, b: SharedField) -> Self {
        SymmetricProductField {
            sys: sys.clone(),
            a,
            b,
        }
    }
}

impl VectorField for SymmetricProductField {
    fn dim(&self) -> usize {
        self.sys.dof()
    }

    fn eval(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let gamma = self.sys.christoffel(q)?;
        let ya = self.a.eval(q)?;
        let yb = self.b.eval(q)?;
        let ja = self.a.jacobian(q)?;
        let jb = self.b.jacobian(q)?;
        Ok(symmetric_product_parts(&gamma, &ya, &ja, &yb, &jb))
    }

    fn fd_step(&self) -> f64 {
        10.0 * self.a.fd_step().max(self.b.fd_step())
    }
}

/// Lie bracket `[A, B]` as a field.
#[derive(Clone)]
pub struct LieBracketField {
    a: SharedField,
    b: SharedField,
}

impl LieBracketField {
    pub fn new(a: SharedField, b: SharedField) -> Self {
        LieBracketField { a, b }
    }
}

impl VectorField for LieBracketField {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn eval(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let xa = self.a.eval(q)?;
        let xb = self.b.eval(q)?;
        let ja = self.a.jacobian(q)?;
        let jb = self.b.jacobian(q)?;
        Ok(lie_bracket_parts(&xa, &ja, &xb, &jb))
    }

    fn fd_step(&self) -> f64 {
        10.0 * self.a.fd_step().max(self.b.fd_step())
    }
}

/// `Σ cᵢ Xᵢ` with constant coefficients.
#[derive(Clone)]
pub struct LinearCombination {
    terms: Vec<(f64, SharedField)>,
}

impl LinearCombination {
    pub fn new(terms: Vec<(f64, SharedField)>) -> Self {
        assert!(
            !terms.is_empty(),
            "linear combination needs at least one term"
        );
        LinearCombination { terms }
    }
}

impl VectorField for LinearCombination {
    fn dim(&self) -> usize {
        self.terms[0].1.dim()
    }

    fn eval(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        for (c, f) in &self.terms {
            out += f.eval(q)? * *c;
        }
        Ok(out)
    }

    fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (c, f) in &self.terms {
            out += f.jacobian(q)? * *c;
        }
        Ok(out)
    }
}
